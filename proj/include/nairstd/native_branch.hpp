#pragma once

// Native-resolution branch: a stack of patchwise detail-context encoder stages.
// Each stage runs two shared stride-1 conv blocks over every patch
// independently (detail extraction), average-pools each patch to a token,
// mixes tokens across the whole image with single-head self-attention
// (global context), and folds the mixed context back into the patch maps as a
// per-channel bias. Patches never leave native resolution: all spatial maps
// stay P x P.

#include <cmath>
#include <cstdint>
#include <vector>

#include "nairstd/lattice.hpp"
#include "nairstd/nn.hpp"
#include "nairstd/tensor.hpp"

namespace nairstd {

struct NativeConfig {
    int64_t in_channels = 3;
    std::vector<int64_t> dims = {16, 32, 64, 64};
    int64_t gn_groups = 4;
};

template <typename T>
struct PdceStage {
    nn::Conv2d<T> conv1, conv2;
    nn::GroupNorm<T> gn1, gn2;
    nn::Linear<T> wq, wk, wv;
    int64_t dim = 0;

    PdceStage() = default;
    PdceStage(const nn::InitCtx& ctx, int64_t in_dim, int64_t out_dim, int64_t gn_groups)
        : conv1(ctx, "conv1", in_dim, out_dim, 3, 1, 1),
          conv2(ctx, "conv2", out_dim, out_dim, 3, 1, 1),
          gn1(ctx, "gn1", out_dim, gn_groups),
          gn2(ctx, "gn2", out_dim, gn_groups),
          wq(ctx, "wq", out_dim, out_dim),
          wk(ctx, "wk", out_dim, out_dim),
          wv(ctx, "wv", out_dim, out_dim),
          dim(out_dim) {}

    struct Out {
        Tensor<T> spatial;  // (B*N) x D x P x P, context already folded in
        Tensor<T> tokens;   // B x N x D, post-attention (residual included)
    };

    // x: (B*N) x Din x P x P
    Out forward(const Tensor<T>& x, int64_t batch, int64_t n_tokens) const {
        auto h = gn1(conv1(x), /*fuse_silu=*/true);
        h = gn2(conv2(h), /*fuse_silu=*/true);
        auto z = ops::reshape(ops::mean_spatial(h), Shape{batch, n_tokens, dim});
        auto q = ops::scale(wq(z), T(1) / std::sqrt(T(dim)));
        auto mixed = ops::attention(q, wk(z), wv(z));  // B x N x D, the context delta
        auto spatial =
            ops::add_channel_bias(h, ops::reshape(mixed, Shape{batch * n_tokens, dim}));
        return {spatial, ops::add(z, mixed)};
    }

    void collect(nn::ParamList<T>& out) {
        conv1.collect(out);
        conv2.collect(out);
        gn1.collect(out);
        gn2.collect(out);
        wq.collect(out);
        wk.collect(out);
        wv.collect(out);
    }
};

template <typename T>
class NativeBranch {
public:
    NativeBranch() = default;
    NativeBranch(const nn::InitCtx& ctx, const NativeConfig& cfg) : cfg_(cfg) {
        NAIRSTD_CHECK_CONFIG(!cfg.dims.empty(), "native branch needs at least one stage");
        int64_t in = cfg.in_channels;
        for (size_t l = 0; l < cfg.dims.size(); ++l) {
            stages_.emplace_back(ctx.child("s" + std::to_string(l)), in, cfg.dims[l],
                                 cfg.gn_groups);
            in = cfg.dims[l];
        }
    }

    struct Out {
        std::vector<Tensor<T>> spatial;  // per stage, (B*N) x D_l x P x P
        Tensor<T> tokens;                // final-stage tokens, B x N x D_L
    };

    // patches: (B*N) x Cin x P x P in lattice row-major order per image.
    Out forward(const Tensor<T>& patches, int64_t batch, const PatchLattice& lat) const {
        const int64_t n = lat.count();
        const int64_t total_px = lat.height() * lat.width();
        // Attention must mix N patch tokens, never the H*W pixel grid.
        NAIRSTD_CHECK(lat.patch() == 1 || n != total_px,
                      "token count %lld equals pixel count: attention scope is wrong",
                      (long long)n);
        NAIRSTD_CHECK(patches.dim(0) == batch * n && patches.dim(2) == lat.patch(),
                      "native branch: patch stack %s does not match lattice",
                      shape_str(patches.shape()).c_str());
        Out out;
        Tensor<T> x = patches;
        for (const auto& st : stages_) {
            auto r = st.forward(x, batch, n);
            out.spatial.push_back(r.spatial);
            out.tokens = r.tokens;
            x = r.spatial;
        }
        return out;
    }

    const NativeConfig& config() const { return cfg_; }
    int64_t stage_dim(size_t l) const { return cfg_.dims.at(l); }
    size_t num_stages() const { return stages_.size(); }

    void collect(nn::ParamList<T>& out) {
        for (auto& st : stages_) st.collect(out);
    }

private:
    NativeConfig cfg_;
    std::vector<PdceStage<T>> stages_;
};

}  // namespace nairstd
