#include "nairstd/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "nairstd/common.hpp"

namespace nairstd {

namespace {
constexpr char kMagic[8] = {'N', 'A', 'I', 'R', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;
}  // namespace

void CheckpointData::add_params(const nn::ParamList<float>& list) {
    for (const auto& p : list)
        params.emplace_back(p.name, std::make_pair(p.tensor.shape(), p.tensor.vec()));
    std::sort(params.begin(), params.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
}

const std::vector<float>* CheckpointData::find(const std::string& name,
                                               const Shape& want) const {
    auto it = std::lower_bound(params.begin(), params.end(), name,
                               [](const auto& a, const std::string& n) { return a.first < n; });
    if (it == params.end() || it->first != name) return nullptr;
    NAIRSTD_CHECK_THROW(CheckpointError, it->second.first == want,
                        "checkpoint: parameter %s has shape %s, model wants %s",
                        name.c_str(), shape_str(it->second.first).c_str(),
                        shape_str(want).c_str());
    return &it->second.second;
}

void save_checkpoint(const std::string& path, const CheckpointData& ckpt) {
    nlohmann::ordered_json manifest;
    manifest["version"] = kVersion;
    manifest["stage"] = ckpt.stage;
    manifest["epoch"] = ckpt.epoch;
    manifest["dtype"] = "f32le";
    manifest["config"] = ckpt.config;
    auto& plist = manifest["params"] = nlohmann::ordered_json::array();
    int64_t offset = 0;
    auto sorted = ckpt.params;
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [name, sv] : sorted) {
        nlohmann::ordered_json e;
        e["name"] = name;
        e["shape"] = sv.first;
        e["offset"] = offset;
        e["numel"] = int64_t(sv.second.size());
        plist.push_back(std::move(e));
        offset += int64_t(sv.second.size());
    }
    const std::string m = manifest.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    NAIRSTD_CHECK_THROW(CheckpointError, f.good(), "checkpoint: cannot open %s for writing",
                        path.c_str());
    f.write(kMagic, 8);
    uint32_t ver = kVersion;
    f.write(reinterpret_cast<const char*>(&ver), 4);
    uint64_t mlen = m.size();
    f.write(reinterpret_cast<const char*>(&mlen), 8);
    f.write(m.data(), int64_t(m.size()));
    for (const auto& [name, sv] : sorted)
        f.write(reinterpret_cast<const char*>(sv.second.data()),
                int64_t(sv.second.size() * sizeof(float)));
    f.flush();
    NAIRSTD_CHECK_THROW(CheckpointError, f.good(), "checkpoint: write to %s failed",
                        path.c_str());
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    NAIRSTD_CHECK_THROW(CheckpointError, f.good(), "checkpoint: cannot open %s",
                        path.c_str());
    char magic[8];
    f.read(magic, 8);
    NAIRSTD_CHECK_THROW(CheckpointError, f.gcount() == 8 && !std::memcmp(magic, kMagic, 8),
                        "checkpoint: %s is not a checkpoint file", path.c_str());
    uint32_t ver = 0;
    f.read(reinterpret_cast<char*>(&ver), 4);
    NAIRSTD_CHECK_THROW(CheckpointError, f.gcount() == 4 && ver == kVersion,
                        "checkpoint: %s has version %u, expected %u", path.c_str(), ver,
                        kVersion);
    uint64_t mlen = 0;
    f.read(reinterpret_cast<char*>(&mlen), 8);
    NAIRSTD_CHECK_THROW(CheckpointError, f.gcount() == 8, "checkpoint: %s truncated header",
                        path.c_str());
    std::string m(mlen, '\0');
    f.read(m.data(), int64_t(mlen));
    NAIRSTD_CHECK_THROW(CheckpointError, uint64_t(f.gcount()) == mlen,
                        "checkpoint: %s truncated manifest", path.c_str());

    nlohmann::ordered_json manifest;
    try {
        manifest = nlohmann::ordered_json::parse(m);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint: bad manifest in ") + path + ": " +
                              e.what());
    }
    CheckpointData out;
    try {
        out.stage = manifest.at("stage").get<int64_t>();
        out.epoch = manifest.at("epoch").get<int64_t>();
        out.config = manifest.value("config", nlohmann::ordered_json::object());
        for (const auto& e : manifest.at("params")) {
            const std::string name = e.at("name").get<std::string>();
            Shape shape = e.at("shape").get<Shape>();
            const int64_t numel = e.at("numel").get<int64_t>();
            NAIRSTD_CHECK_THROW(CheckpointError, numel == shape_numel(shape),
                                "checkpoint: %s numel/shape mismatch", name.c_str());
            std::vector<float> v(numel);
            f.read(reinterpret_cast<char*>(v.data()), numel * int64_t(sizeof(float)));
            NAIRSTD_CHECK_THROW(CheckpointError,
                                f.gcount() == numel * int64_t(sizeof(float)),
                                "checkpoint: %s truncated in blob of %s", path.c_str(),
                                name.c_str());
            out.params.emplace_back(name, std::make_pair(std::move(shape), std::move(v)));
        }
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint: malformed manifest in ") + path +
                              ": " + e.what());
    }
    std::sort(out.params.begin(), out.params.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    return out;
}

int64_t apply_checkpoint(const CheckpointData& ckpt, nn::ParamList<float>& params,
                         bool require_all) {
    int64_t filled = 0;
    for (auto& p : params) {
        const std::vector<float>* v = ckpt.find(p.name, p.tensor.shape());
        if (!v) {
            NAIRSTD_CHECK_THROW(CheckpointError, !require_all,
                                "checkpoint: missing parameter %s", p.name.c_str());
            continue;
        }
        std::copy(v->begin(), v->end(), p.tensor.data());
        ++filled;
    }
    return filled;
}

}  // namespace nairstd
