#pragma once

// Two-stage optimization: stage 1 fits the native branch and the patch scorer
// to soft relevance labels; stage 2 loads them, freezes the scorer, and
// fine-tunes everything else (plus the native branch at a much smaller rate)
// on the segmentation loss. Cosine learning-rate decay, restarted at stage 2.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nairstd/checkpoint.hpp"
#include "nairstd/datasets.hpp"
#include "nairstd/metrics.hpp"
#include "nairstd/model.hpp"

namespace nairstd {

struct TrainConfig {
    int64_t batch_size = 8;
    int64_t stage1_epochs = 500;
    int64_t stage2_epochs = 1500;
    double lr_stage1 = 1e-4;
    double lr_backbone_fusion = 1e-4;
    double lr_native_branch_stage2 = 1e-6;
    double sigma = 8.0;  // soft-label decay, pixels
    uint64_t seed = 1234;
    int64_t val_every = 10;  // epochs between validation passes
    bool hard_labels = false;  // supervision ablation: binarize soft labels at > 0
};

// eta(e) = base * (1 + cos(pi * e / total)) / 2; eta(0) == base.
struct CosineSchedule {
    double base = 0.0;
    int64_t total = 1;

    double operator()(int64_t epoch) const;
};

class Adam {
public:
    struct Group {
        std::vector<Tensor<float>> params;
        double base_lr = 0.0;
    };

    explicit Adam(std::vector<Group> groups, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8);

    // One update with explicit per-group rates (the schedule's job).
    void step(const std::vector<double>& group_lrs);
    void zero_grad();
    size_t num_groups() const { return groups_.size(); }

private:
    std::vector<Group> groups_;
    std::vector<std::vector<std::vector<float>>> m_, v_;  // [group][param][...]
    double beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

struct EpochLog {
    int64_t epoch = 0;
    int64_t stage = 0;
    double lr_group0 = 0.0;
    double lr_group1 = 0.0;  // stage 2 native-branch rate; 0 in stage 1
    double loss = 0.0;
    double val_metric = -1.0;  // stage 1: Top-K coverage; stage 2: IoU; -1 = skipped
};

struct TrainResult {
    CheckpointData checkpoint;
    std::vector<EpochLog> logs;
};

// Per-patch supervision targets for one sample (soft by default, binarized
// for the hard-label ablation).
std::vector<float> patch_targets(const SceneSample& s, const PatchLattice& lat,
                                 double sigma, bool hard);

TrainResult stage1_train(const SceneDataset& train, const SceneDataset& val,
                         const ModelConfig& mcfg, const TrainConfig& tcfg,
                         const nlohmann::ordered_json& config_snapshot);

TrainResult stage2_train(const SceneDataset& train, const SceneDataset& val,
                         const ModelConfig& mcfg, const TrainConfig& tcfg,
                         const CheckpointData& stage1,
                         const nlohmann::ordered_json& config_snapshot);

// Scorer outputs per sample (eval mode, batched).
std::vector<std::vector<float>> model_scores(Model<float>& model, const SceneDataset& ds,
                                             int64_t batch);

// Pooled Top-K coverage (images without targets contribute nothing).
double dataset_coverage(const SceneDataset& ds, const std::vector<std::vector<float>>& scores,
                        const PatchLattice& lat, int64_t k);

struct EvalRow {
    std::string name;
    double iou = 0.0;
    MatchResult match;
};

struct EvalResult {
    std::vector<EvalRow> rows;
    DetectionReport report;
    std::vector<std::vector<float>> probs;  // kept only when requested
};

EvalResult evaluate_model(Model<float>& model, const SceneDataset& ds, int64_t batch,
                          bool keep_probs = false);

// Rebuild a model from a checkpoint written by the trainer (must contain a
// model config snapshot under config.model).
ModelConfig model_config_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json model_config_to_json(const ModelConfig& cfg);

}  // namespace nairstd
