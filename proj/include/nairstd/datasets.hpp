#pragma once

// Scene data: synthetic infrared-like scene generation, the on-disk dataset
// layout (images/, masks/, splits/), the small-target-only benchmark builder,
// size statistics, and the resolution-degradation harness for the
// downsampling ablation.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace nairstd {

struct SceneSample {
    std::string name;
    int64_t h = 0, w = 0;
    std::vector<float> image;   // h*w grayscale in [0,1]
    std::vector<uint8_t> mask;  // h*w in {0,1}
};

struct SceneDataset {
    std::vector<SceneSample> samples;

    bool empty() const { return samples.empty(); }
    int64_t size() const { return int64_t(samples.size()); }
};

struct TargetDescriptor {
    int64_t center_r = 0, center_c = 0;
    int64_t area = 0;
};

// One descriptor per 8-connected mask component (rounded centroid + area).
std::vector<TargetDescriptor> describe_targets(const SceneSample& s);

enum class Background { Flat, Gradient, CloudNoise };

struct SynthConfig {
    int64_t count = 500;
    int64_t h = 256, w = 256;
    int64_t min_targets = 1, max_targets = 3;
    int64_t min_area = 4, max_area = 16;  // component pixel areas, inclusive
    double target_peak_contrast = 0.45;   // peak intensity delta above background
    Background background = Background::CloudNoise;
    double noise_std = 0.02;
    int64_t distractors_max = 3;  // soft bright bumps, CloudNoise scenes only
    uint64_t seed = 7;
};

// Anisotropic Gaussian-blob targets whose mask is the blob's exact support
// (thresholded so each component has exactly the sampled pixel area).
// Identical config -> bit-identical dataset.
SceneDataset synth_generate(const SynthConfig& cfg);

// Layout: root/images/<name>.png (8-bit gray), root/masks/<name>.png (0/255),
// root/splits/<split>.txt (one name per line). Empty split loads every pair.
SceneDataset load_dataset(const std::string& root, const std::string& split = "");
void save_dataset(const SceneDataset& ds, const std::string& root,
                  const std::string& split = "");

struct HardBenchSpec {
    int64_t size_threshold = 20;  // strict: admitted images have all areas < this
    int64_t resize_h = 256, resize_w = 256;
};

struct HardSource {
    std::string name;
    SceneDataset data;
    bool is_test_partition = false;
};

struct HardManifestRow {
    std::string source;
    std::string filename;
    int64_t num_targets = 0;
    int64_t max_area = 0;
};

struct HardBuildResult {
    SceneDataset dataset;
    std::vector<HardManifestRow> manifest;
    std::map<std::string, int64_t> admitted_per_source;

    int64_t total_admitted() const {
        int64_t t = 0;
        for (const auto& [_, c] : admitted_per_source) t += c;
        return t;
    }
};

// Admits an image only if every post-resize target area is below the
// threshold; sources must be marked as test partitions.
HardBuildResult build_hard_benchmark(const std::vector<HardSource>& sources,
                                     const HardBenchSpec& spec);

struct SizeStats {
    double mean_area = 0.0;
    double median_area = 0.0;
    std::vector<std::pair<int64_t, double>> cdf;  // (area, fraction of targets <= area)
    int64_t multi_target_images = 0;
    std::vector<int64_t> per_scene_counts;
};

SizeStats size_statistics(const SceneDataset& ds);

// Average-pool images by `factor`, then upsample back to the original grid by
// replication: the model sees resolution-degraded inputs on the same lattice.
// Masks are untouched.
SceneDataset downsample_ablation_prep(const SceneDataset& ds, int64_t factor = 2);

// Bilinear image / nearest mask resize used by the benchmark builder.
std::vector<float> resize_bilinear(const std::vector<float>& img, int64_t h, int64_t w,
                                   int64_t oh, int64_t ow);
std::vector<uint8_t> resize_nearest(const std::vector<uint8_t>& m, int64_t h, int64_t w,
                                    int64_t oh, int64_t ow);

}  // namespace nairstd
