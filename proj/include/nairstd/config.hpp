#pragma once

// Declarative run configuration: one JSON document covering the model, the
// two-stage trainer, the synthetic generator, paths, and command options.
// Files may override any subset of keys; unknown keys are rejected.

#include <string>

#include <json.hpp>

#include "nairstd/datasets.hpp"
#include "nairstd/train.hpp"

namespace nairstd {

struct RunPaths {
    std::string data_root = "data/synth";
    std::string out_dir = "out";
    std::string train_split = "train";
    std::string val_split = "val";
    std::string test_split = "test";
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    SynthConfig synth;
    RunPaths paths;
    int64_t hard_threshold = 20;    // build-hard size cutoff (strict <)
    int64_t downsample_factor = 2;  // degraded-input ablation pooling factor
};

// Defaults sized so the full two-stage pipeline trains on one CPU core in
// minutes; the architecture (strides, patch size, K, attention shapes) is the
// full design, only channel widths and epoch counts shrink.
RunConfig default_run_config();

nlohmann::ordered_json run_config_to_json(const RunConfig& cfg);

// Starts from defaults, overrides with the document's keys.
RunConfig run_config_from_json(const nlohmann::ordered_json& j);

// Parse a JSON file (ConfigError on unreadable/invalid/unknown keys).
RunConfig load_run_config(const std::string& path);

}  // namespace nairstd
