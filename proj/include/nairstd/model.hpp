#pragma once

// Full detector assembly: native branch + scorer (stage 1), hierarchical
// backbone + per-stage cross-scale injection + decoder (stage 2). Selection is
// hard Top-K on the scorer's output, computed identically in training and
// evaluation; gradients never flow through the selected indices, only through
// the gathered native features.

#include <cstdint>
#include <string>
#include <vector>

#include "nairstd/backbone.hpp"
#include "nairstd/decoder.hpp"
#include "nairstd/fusion.hpp"
#include "nairstd/lattice.hpp"
#include "nairstd/native_branch.hpp"
#include "nairstd/nn.hpp"
#include "nairstd/relevance.hpp"
#include "nairstd/tensor.hpp"

namespace nairstd {

struct ModelConfig {
    int64_t image_h = 256;
    int64_t image_w = 256;
    int64_t patch = 32;
    int64_t k = 5;
    NativeConfig native;
    BackboneConfig backbone;
    DecoderConfig decoder;
};

// Which submodules to build. Stage 1 never constructs the backbone side;
// BackboneOnly is the no-native reference the zero-gain identity compares to.
enum class ModelParts { NativeOnly, BackboneOnly, Full };

template <typename T>
class Model {
public:
    Model(const ModelConfig& cfg, uint64_t seed, ModelParts parts)
        : cfg_(cfg), parts_(parts), lat_(cfg.image_h, cfg.image_w, cfg.patch) {
        nn::InitCtx root{seed, ""};
        if (parts != ModelParts::BackboneOnly) {
            NAIRSTD_CHECK_CONFIG(!cfg.native.dims.empty(), "native branch has no stages");
            native_ = NativeBranch<T>(root.child("native"), cfg.native);
            scorer_ = Scorer<T>(root.child("scorer"), cfg.native.dims.back(),
                                cfg.native.dims.back());
        }
        if (parts != ModelParts::NativeOnly) {
            backbone_ = Backbone<T>(root.child("backbone"), cfg.backbone);
            decoder_ = Decoder<T>(root.child("decoder"), cfg.backbone.widths, cfg.decoder);
            if (parts == ModelParts::Full) {
                NAIRSTD_CHECK_CONFIG(cfg.native.dims.size() == cfg.backbone.widths.size(),
                                     "native and backbone stage counts differ (%lld vs %lld)",
                                     (long long)cfg.native.dims.size(),
                                     (long long)cfg.backbone.widths.size());
                for (size_t l = 0; l < cfg.backbone.widths.size(); ++l)
                    injectors_.emplace_back(root.child("fuse.s" + std::to_string(l)),
                                            cfg.native.dims[l], cfg.backbone.widths[l]);
            }
        }
    }

    struct ScoreOut {
        Tensor<T> scores;  // B x N
        typename NativeBranch<T>::Out native;
    };

    // images: B x 1 x H x W in [0,1].
    ScoreOut forward_native(const Tensor<T>& images) const {
        NAIRSTD_CHECK(parts_ != ModelParts::BackboneOnly, "model has no native branch");
        check_images(images);
        const int64_t B = images.dim(0);
        auto x3 = ops::repeat_channels(images, cfg_.native.in_channels);
        auto patches = ops::reshape(
            partition_batch(x3, lat_),
            Shape{B * lat_.count(), cfg_.native.in_channels, cfg_.patch, cfg_.patch});
        ScoreOut out;
        out.native = native_.forward(patches, B, lat_);
        out.scores = scorer_(out.native.tokens);
        return out;
    }

    // Hard Top-K per image on detached scores; same rule in train and eval.
    std::vector<std::vector<int64_t>> select(const Tensor<T>& scores) const {
        const int64_t B = scores.dim(0), n = scores.dim(1);
        std::vector<std::vector<int64_t>> sel(B);
        for (int64_t b = 0; b < B; ++b)
            sel[b] = topk_select(scores.data() + b * n, n, cfg_.k);
        return sel;
    }

    struct FullOut {
        Tensor<T> logits;  // B x 1 x H x W
        Tensor<T> scores;  // B x N (empty for BackboneOnly)
        std::vector<std::vector<int64_t>> selected;
    };

    FullOut forward(const Tensor<T>& images) const {
        check_images(images);
        FullOut out;
        if (parts_ == ModelParts::BackboneOnly) {
            auto x3 = ops::repeat_channels(images, cfg_.backbone.in_channels);
            out.logits = decoder_.forward(backbone_.forward(x3));
            return out;
        }
        NAIRSTD_CHECK(parts_ == ModelParts::Full, "stage-1 model cannot produce logits");
        const int64_t B = images.dim(0);
        auto score_out = forward_native(images);
        out.scores = score_out.scores;
        out.selected = select(out.scores);
        auto x3 = ops::repeat_channels(images, cfg_.backbone.in_channels);
        auto pyramid = backbone_.forward(x3);
        std::vector<Tensor<T>> fused(pyramid.size());
        for (size_t l = 0; l < pyramid.size(); ++l)
            fused[l] = fuse_stage(injectors_[l], pyramid[l], score_out.native.spatial[l],
                                  out.selected, lat_, backbone_.stage_stride(l), B);
        out.logits = decoder_.forward(fused);
        return out;
    }

    // Parameter groups, named for checkpoints and optimizer assignment.
    nn::ParamList<T> native_params() {
        nn::ParamList<T> out;
        if (parts_ != ModelParts::BackboneOnly) native_.collect(out);
        return out;
    }
    nn::ParamList<T> scorer_params() {
        nn::ParamList<T> out;
        if (parts_ != ModelParts::BackboneOnly) scorer_.collect(out);
        return out;
    }
    nn::ParamList<T> backbone_side_params() {
        nn::ParamList<T> out;
        if (parts_ != ModelParts::NativeOnly) {
            backbone_.collect(out);
            for (auto& inj : injectors_) inj.collect(out);
            decoder_.collect(out);
        }
        return out;
    }
    nn::ParamList<T> all_params() {
        nn::ParamList<T> out = native_params();
        auto s = scorer_params();
        auto b = backbone_side_params();
        out.insert(out.end(), s.begin(), s.end());
        out.insert(out.end(), b.begin(), b.end());
        return out;
    }

    const ModelConfig& config() const { return cfg_; }
    const PatchLattice& lattice() const { return lat_; }
    ModelParts parts() const { return parts_; }
    std::vector<StageInjector<T>>& injectors() { return injectors_; }

private:
    void check_images(const Tensor<T>& images) const {
        NAIRSTD_CHECK(images.ndim() == 4 && images.dim(1) == 1 &&
                          images.dim(2) == cfg_.image_h && images.dim(3) == cfg_.image_w,
                      "model: want B x 1 x %lld x %lld images, got %s",
                      (long long)cfg_.image_h, (long long)cfg_.image_w,
                      shape_str(images.shape()).c_str());
    }

    ModelConfig cfg_;
    ModelParts parts_;
    PatchLattice lat_;
    NativeBranch<T> native_;
    Scorer<T> scorer_;
    Backbone<T> backbone_;
    Decoder<T> decoder_;
    std::vector<StageInjector<T>> injectors_;
};

}  // namespace nairstd
