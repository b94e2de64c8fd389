#pragma once

// Top-down decoder: 1x1 laterals onto a common width, 2x nearest upsampling
// down the pyramid with 3x3 merge convs, then a final upsample to full
// resolution and a stride-1 prediction head producing single-channel logits.

#include <cstdint>
#include <string>
#include <vector>

#include "nairstd/nn.hpp"
#include "nairstd/tensor.hpp"

namespace nairstd {

struct DecoderConfig {
    int64_t width = 32;
    int64_t gn_groups = 4;
};

template <typename T>
class Decoder {
public:
    Decoder() = default;
    Decoder(const nn::InitCtx& ctx, const std::vector<int64_t>& stage_widths,
            const DecoderConfig& cfg)
        : cfg_(cfg) {
        NAIRSTD_CHECK_CONFIG(stage_widths.size() >= 2, "decoder needs >= 2 pyramid stages");
        const size_t L = stage_widths.size();
        for (size_t l = 0; l < L; ++l)
            laterals_.emplace_back(ctx, "lat" + std::to_string(l), stage_widths[l],
                                   cfg.width, 1, 1, 0);
        for (size_t l = 0; l + 1 < L; ++l) {
            merges_.emplace_back(ctx, "merge" + std::to_string(l), cfg.width, cfg.width, 3,
                                 1, 1);
            merge_gns_.emplace_back(ctx, "merge_gn" + std::to_string(l), cfg.width,
                                    cfg.gn_groups);
        }
        head_ = nn::Conv2d<T>(ctx, "head", cfg.width, 1, 3, 1, 1);
    }

    // pyramid[l]: B x C_l x H/2^{l+1} x W/2^{l+1} -> logits B x 1 x H x W.
    Tensor<T> forward(const std::vector<Tensor<T>>& pyramid) const {
        NAIRSTD_CHECK(pyramid.size() == laterals_.size(),
                      "decoder: got %lld stages, built for %lld",
                      (long long)pyramid.size(), (long long)laterals_.size());
        const size_t L = pyramid.size();
        Tensor<T> p = laterals_[L - 1](pyramid[L - 1]);
        for (size_t l = L - 1; l-- > 0;) {
            auto merged = ops::add(laterals_[l](pyramid[l]), ops::upsample2x_nearest(p));
            p = ops::silu(merge_gns_[l](merges_[l](merged)));
        }
        return head_(ops::upsample2x_nearest(p));
    }

    void collect(nn::ParamList<T>& out) {
        for (auto& m : laterals_) m.collect(out);
        for (auto& m : merges_) m.collect(out);
        for (auto& m : merge_gns_) m.collect(out);
        head_.collect(out);
    }

private:
    DecoderConfig cfg_;
    std::vector<nn::Conv2d<T>> laterals_;
    std::vector<nn::Conv2d<T>> merges_;
    std::vector<nn::GroupNorm<T>> merge_gns_;
    nn::Conv2d<T> head_;
};

}  // namespace nairstd
