#pragma once

// Cross-scale injection: for each selected lattice patch, the backbone's
// aligned semantic window (P' x P' positions) queries the patch's
// native-resolution features (P x P positions, 1x1-projected to the stage
// width) through single-head cross-attention, and the result is written back
// into the stage map at the same window, gated by a learnable scalar that
// starts at zero. Regions attend independently; nothing outside the selected
// windows is touched.

#include <cmath>
#include <cstdint>
#include <vector>

#include "nairstd/lattice.hpp"
#include "nairstd/nn.hpp"
#include "nairstd/tensor.hpp"

namespace nairstd {

// Exact window extraction of the K selected patches from a stage map.
// fs: B x C x H/s x W/s -> B x K x C x P/s x P/s.
template <typename T>
Tensor<T> gather_semantic(const Tensor<T>& fs, const std::vector<std::vector<int64_t>>& sel,
                          const PatchLattice& lat, int64_t stride) {
    const int64_t ps = lat.patch() / stride;
    NAIRSTD_CHECK(lat.patch() % stride == 0, "gather_semantic: stride %lld does not divide P",
                  (long long)stride);
    NAIRSTD_CHECK(fs.dim(2) == lat.height() / stride && fs.dim(3) == lat.width() / stride,
                  "gather_semantic: stage map %s does not match lattice at stride %lld",
                  shape_str(fs.shape()).c_str(), (long long)stride);
    return ops::gather_windows(fs, sel, ps);
}

// Write injected regions back at the same indices; everything outside the
// selected windows stays bit-identical to fs.
template <typename T>
Tensor<T> scatter_back(const Tensor<T>& fs, const Tensor<T>& regions,
                       const std::vector<std::vector<int64_t>>& sel) {
    return ops::scatter_windows(fs, regions, sel);
}

template <typename T>
struct StageInjector {
    nn::Conv2d<T> proj;  // 1x1, native D_l -> stage C_l
    nn::Linear<T> wq, wk, wv;
    Tensor<T> alpha;
    int64_t width = 0;
    std::string name;

    StageInjector() = default;
    StageInjector(const nn::InitCtx& ctx, int64_t native_dim, int64_t stage_width)
        : proj(ctx, "proj", native_dim, stage_width, 1, 1, 0),
          wq(ctx, "wq", stage_width, stage_width),
          wk(ctx, "wk", stage_width, stage_width),
          wv(ctx, "wv", stage_width, stage_width),
          alpha(nn::make_param<T>(ctx, "alpha", Shape{1}, nn::Init::Zeros)),
          width(stage_width),
          name(ctx.prefix) {}

    // Channel projection of gathered native patches: (B*K) x D x P x P -> C.
    Tensor<T> project_native(const Tensor<T>& knative) const { return proj(knative); }

    // fsem: (B*K) x C x P' x P' gathered semantic windows; kproj: (B*K) x C x
    // P x P projected native patches of the same lattice indices.
    Tensor<T> cross_inject(const Tensor<T>& fsem, const Tensor<T>& kproj) const {
        NAIRSTD_CHECK(fsem.dim(0) == kproj.dim(0),
                      "cross_inject: region count mismatch (%lld vs %lld)",
                      (long long)fsem.dim(0), (long long)kproj.dim(0));
        NAIRSTD_CHECK(fsem.dim(1) == width && kproj.dim(1) == width,
                      "cross_inject: channel width mismatch");
        // Zero gain adds exactly nothing: skip the attention compute when not
        // training so the output is the semantic window, bit for bit.
        if (!autograd::enabled && alpha.data()[0] == T(0)) return fsem;
        // 1/sqrt(d) goes on the queries: same logits, but scales C-wide rows
        // instead of the P'^2 x P^2 score matrix
        auto q = ops::scale(wq(ops::nchw_to_tokens(fsem)),
                            T(1) / std::sqrt(T(width)));  // (B*K) x P'^2 x C
        auto kv = ops::nchw_to_tokens(kproj);              // (B*K) x P^2  x C
        auto delta = ops::tokens_to_nchw(ops::attention(q, wk(kv), wv(kv)),
                                         fsem.dim(2), fsem.dim(3));
        return ops::add(fsem, ops::scalar_gain(delta, alpha));
    }

    void collect(nn::ParamList<T>& out) {
        proj.collect(out);
        wq.collect(out);
        wk.collect(out);
        wv.collect(out);
        out.push_back({name + ".alpha", alpha});
    }
};

// Full per-stage fusion: gather semantic windows and the selected native
// patches, inject, and scatter back. native_spatial is the stage's native
// feature stack in lattice order, (B*N) x D x P x P.
template <typename T>
Tensor<T> fuse_stage(const StageInjector<T>& inj, const Tensor<T>& fs,
                     const Tensor<T>& native_spatial,
                     const std::vector<std::vector<int64_t>>& sel, const PatchLattice& lat,
                     int64_t stride, int64_t batch) {
    const int64_t n = lat.count(), p = lat.patch();
    const int64_t d = native_spatial.dim(1);
    const int64_t k = int64_t(sel.empty() ? 0 : sel[0].size());
    if (k == 0) return fs;
    if (!autograd::enabled && inj.alpha.data()[0] == T(0)) return fs;
    auto knat = ops::reshape(
        ops::gather_rows(ops::reshape(native_spatial, Shape{batch, n, d * p * p}), sel),
        Shape{batch * k, d, p, p});
    auto fsem = ops::reshape(gather_semantic(fs, sel, lat, stride),
                             Shape{batch * k, inj.width, p / stride, p / stride});
    auto injected = inj.cross_inject(fsem, inj.project_native(knat));
    return scatter_back(
        fs, ops::reshape(injected, Shape{batch, k, inj.width, p / stride, p / stride}), sel);
}

}  // namespace nairstd
