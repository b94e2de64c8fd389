#pragma once

// Checkpoint container: fixed magic + version, a JSON manifest (stage, epoch,
// config snapshot, named parameter table), then one raw little-endian float32
// blob. Parameters are sorted by name before writing, so load followed by
// save reproduces the file byte for byte.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nairstd/nn.hpp"

namespace nairstd {

struct CheckpointData {
    int64_t stage = 0;
    int64_t epoch = 0;
    nlohmann::ordered_json config = nlohmann::ordered_json::object();
    // name -> (shape, values); kept sorted by name.
    std::vector<std::pair<std::string, std::pair<Shape, std::vector<float>>>> params;

    void add_params(const nn::ParamList<float>& list);
    const std::vector<float>* find(const std::string& name, const Shape& want) const;
};

void save_checkpoint(const std::string& path, const CheckpointData& ckpt);
CheckpointData load_checkpoint(const std::string& path);

// Copy values into matching model parameters by name. Returns the number of
// parameters filled. With require_all, every model parameter must be present
// in the checkpoint (shape-checked either way).
int64_t apply_checkpoint(const CheckpointData& ckpt, nn::ParamList<float>& params,
                         bool require_all);

}  // namespace nairstd
