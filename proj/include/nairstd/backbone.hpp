#pragma once

// Hierarchical semantic encoder: four residual convolution stages with
// stride-2 downsampling between stages. The strided 2x2 downsampling conv is
// computed as space-to-depth followed by a 1x1 conv (bit-for-bit the same
// operation, but every inner loop runs on contiguous rows).

#include <cstdint>
#include <string>
#include <vector>

#include "nairstd/nn.hpp"
#include "nairstd/tensor.hpp"

namespace nairstd {

struct BackboneConfig {
    int64_t in_channels = 3;
    std::vector<int64_t> widths = {32, 64, 128, 256};
    int64_t gn_groups = 4;
};

template <typename T>
struct EncoderStage {
    nn::Conv2d<T> down;  // 1x1 over space-to-depth planes == 2x2 stride-2 conv
    nn::GroupNorm<T> gn_down;
    nn::Conv2d<T> res;
    nn::GroupNorm<T> gn_res;

    EncoderStage() = default;
    EncoderStage(const nn::InitCtx& ctx, int64_t in_ch, int64_t out_ch, int64_t gn_groups)
        : down(ctx, "down", 4 * in_ch, out_ch, 1, 1, 0),
          gn_down(ctx, "gn_down", out_ch, gn_groups),
          res(ctx, "res", out_ch, out_ch, 3, 1, 1),
          gn_res(ctx, "gn_res", out_ch, gn_groups) {}

    Tensor<T> forward(const Tensor<T>& x) const {
        auto h = gn_down(down(ops::space_to_depth2(x)), /*fuse_silu=*/true);
        return ops::silu(ops::add(h, gn_res(res(h))));
    }

    void collect(nn::ParamList<T>& out) {
        down.collect(out);
        gn_down.collect(out);
        res.collect(out);
        gn_res.collect(out);
    }
};

template <typename T>
class Backbone {
public:
    Backbone() = default;
    Backbone(const nn::InitCtx& ctx, const BackboneConfig& cfg) : cfg_(cfg) {
        NAIRSTD_CHECK_CONFIG(!cfg.widths.empty(), "backbone needs at least one stage");
        int64_t in = cfg.in_channels;
        for (size_t l = 0; l < cfg.widths.size(); ++l) {
            stages_.emplace_back(ctx.child("s" + std::to_string(l)), in, cfg.widths[l],
                                 cfg.gn_groups);
            in = cfg.widths[l];
        }
    }

    // image: B x C x H x W -> per-stage maps at H/2^{l+1}, widths C_l.
    std::vector<Tensor<T>> forward(const Tensor<T>& image) const {
        std::vector<Tensor<T>> pyramid;
        Tensor<T> x = image;
        for (const auto& st : stages_) {
            x = st.forward(x);
            pyramid.push_back(x);
        }
        return pyramid;
    }

    int64_t stage_stride(size_t l) const { return int64_t(1) << (l + 1); }
    int64_t stage_width(size_t l) const { return cfg_.widths.at(l); }
    size_t num_stages() const { return stages_.size(); }
    const BackboneConfig& config() const { return cfg_; }

    void collect(nn::ParamList<T>& out) {
        for (auto& st : stages_) st.collect(out);
    }

private:
    BackboneConfig cfg_;
    std::vector<EncoderStage<T>> stages_;
};

}  // namespace nairstd
