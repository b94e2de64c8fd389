#include "nairstd/config.hpp"

#include <fstream>

#include "nairstd/common.hpp"

namespace nairstd {

namespace {

std::string background_name(Background b) {
    switch (b) {
        case Background::Flat: return "flat";
        case Background::Gradient: return "gradient";
        case Background::CloudNoise: return "cloud";
    }
    throw InternalError("unreachable background enum");
}

Background background_from(const std::string& s) {
    if (s == "flat") return Background::Flat;
    if (s == "gradient") return Background::Gradient;
    if (s == "cloud") return Background::CloudNoise;
    throw ConfigError("config: unknown background '" + s +
                      "' (expected flat|gradient|cloud)");
}

void merge_into(nlohmann::ordered_json& base, const nlohmann::ordered_json& over,
                const std::string& where) {
    NAIRSTD_CHECK_CONFIG(over.is_object(), "config: %s must be an object",
                         where.empty() ? "document root" : where.c_str());
    for (const auto& [key, val] : over.items()) {
        const std::string path = where.empty() ? key : where + "." + key;
        auto it = base.find(key);
        NAIRSTD_CHECK_CONFIG(it != base.end(), "config: unknown key '%s'", path.c_str());
        if (it->is_object())
            merge_into(*it, val, path);
        else
            *it = val;
    }
}

}  // namespace

RunConfig default_run_config() {
    RunConfig cfg;
    cfg.model.native.in_channels = 1;
    cfg.model.native.dims = {2, 2, 2, 4};
    cfg.model.native.gn_groups = 2;
    cfg.model.backbone.in_channels = 1;
    cfg.model.backbone.widths = {4, 8, 12, 16};
    cfg.model.backbone.gn_groups = 2;
    cfg.model.decoder.width = 4;
    cfg.model.decoder.gn_groups = 2;
    cfg.train.stage1_epochs = 50;
    cfg.train.stage2_epochs = 100;
    return cfg;
}

nlohmann::ordered_json run_config_to_json(const RunConfig& cfg) {
    nlohmann::ordered_json j;
    j["model"] = model_config_to_json(cfg.model);
    j["train"] = {{"batch_size", cfg.train.batch_size},
                  {"stage1_epochs", cfg.train.stage1_epochs},
                  {"stage2_epochs", cfg.train.stage2_epochs},
                  {"lr_stage1", cfg.train.lr_stage1},
                  {"lr_backbone_fusion", cfg.train.lr_backbone_fusion},
                  {"lr_native_branch_stage2", cfg.train.lr_native_branch_stage2},
                  {"sigma", cfg.train.sigma},
                  {"seed", cfg.train.seed},
                  {"val_every", cfg.train.val_every},
                  {"hard_labels", cfg.train.hard_labels}};
    j["synth"] = {{"count", cfg.synth.count},
                  {"h", cfg.synth.h},
                  {"w", cfg.synth.w},
                  {"min_targets", cfg.synth.min_targets},
                  {"max_targets", cfg.synth.max_targets},
                  {"min_area", cfg.synth.min_area},
                  {"max_area", cfg.synth.max_area},
                  {"target_peak_contrast", cfg.synth.target_peak_contrast},
                  {"background", background_name(cfg.synth.background)},
                  {"noise_std", cfg.synth.noise_std},
                  {"distractors_max", cfg.synth.distractors_max},
                  {"seed", cfg.synth.seed}};
    j["paths"] = {{"data_root", cfg.paths.data_root},
                  {"out_dir", cfg.paths.out_dir},
                  {"train_split", cfg.paths.train_split},
                  {"val_split", cfg.paths.val_split},
                  {"test_split", cfg.paths.test_split}};
    j["hard_threshold"] = cfg.hard_threshold;
    j["downsample_factor"] = cfg.downsample_factor;
    return j;
}

RunConfig run_config_from_json(const nlohmann::ordered_json& j) {
    nlohmann::ordered_json full = run_config_to_json(default_run_config());
    merge_into(full, j, "");

    RunConfig cfg;
    try {
        cfg.model = model_config_from_json(full.at("model"));
        const auto& t = full.at("train");
        cfg.train.batch_size = t.at("batch_size").get<int64_t>();
        cfg.train.stage1_epochs = t.at("stage1_epochs").get<int64_t>();
        cfg.train.stage2_epochs = t.at("stage2_epochs").get<int64_t>();
        cfg.train.lr_stage1 = t.at("lr_stage1").get<double>();
        cfg.train.lr_backbone_fusion = t.at("lr_backbone_fusion").get<double>();
        cfg.train.lr_native_branch_stage2 = t.at("lr_native_branch_stage2").get<double>();
        cfg.train.sigma = t.at("sigma").get<double>();
        cfg.train.seed = t.at("seed").get<uint64_t>();
        cfg.train.val_every = t.at("val_every").get<int64_t>();
        cfg.train.hard_labels = t.at("hard_labels").get<bool>();
        const auto& s = full.at("synth");
        cfg.synth.count = s.at("count").get<int64_t>();
        cfg.synth.h = s.at("h").get<int64_t>();
        cfg.synth.w = s.at("w").get<int64_t>();
        cfg.synth.min_targets = s.at("min_targets").get<int64_t>();
        cfg.synth.max_targets = s.at("max_targets").get<int64_t>();
        cfg.synth.min_area = s.at("min_area").get<int64_t>();
        cfg.synth.max_area = s.at("max_area").get<int64_t>();
        cfg.synth.target_peak_contrast = s.at("target_peak_contrast").get<double>();
        cfg.synth.background = background_from(s.at("background").get<std::string>());
        cfg.synth.noise_std = s.at("noise_std").get<double>();
        cfg.synth.distractors_max = s.at("distractors_max").get<int64_t>();
        cfg.synth.seed = s.at("seed").get<uint64_t>();
        const auto& p = full.at("paths");
        cfg.paths.data_root = p.at("data_root").get<std::string>();
        cfg.paths.out_dir = p.at("out_dir").get<std::string>();
        cfg.paths.train_split = p.at("train_split").get<std::string>();
        cfg.paths.val_split = p.at("val_split").get<std::string>();
        cfg.paths.test_split = p.at("test_split").get<std::string>();
        cfg.hard_threshold = full.at("hard_threshold").get<int64_t>();
        cfg.downsample_factor = full.at("downsample_factor").get<int64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    NAIRSTD_CHECK_CONFIG(f.good(), "cannot open config file %s", path.c_str());
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + path + ": " + e.what());
    }
    return run_config_from_json(j);
}

}  // namespace nairstd
