#include "nairstd/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include "nairstd/common.hpp"
#include "nairstd/io_image.hpp"
#include "nairstd/metrics.hpp"

namespace fs = std::filesystem;

namespace nairstd {

std::vector<TargetDescriptor> describe_targets(const SceneSample& s) {
    const Labeling lab = label_components(s.mask.data(), s.h, s.w);
    std::vector<TargetDescriptor> out;
    out.reserve(lab.components.size());
    for (const auto& c : lab.components)
        out.push_back({std::llround(c.centroid_r), std::llround(c.centroid_c), c.area});
    return out;
}

namespace {

std::string strip_png(std::string name) {
    if (name.size() > 4 && name.substr(name.size() - 4) == ".png")
        name.resize(name.size() - 4);
    return name;
}

}  // namespace

SceneDataset load_dataset(const std::string& root, const std::string& split) {
    const fs::path images = fs::path(root) / "images";
    const fs::path masks = fs::path(root) / "masks";
    NAIRSTD_CHECK_DATA(fs::is_directory(images) && fs::is_directory(masks),
                       "dataset root %s lacks images/ or masks/", root.c_str());

    std::vector<std::string> names;
    if (!split.empty()) {
        const fs::path list = fs::path(root) / "splits" / (split + ".txt");
        std::ifstream f(list);
        NAIRSTD_CHECK_DATA(f.good(), "missing split list %s", list.string().c_str());
        std::string line;
        while (std::getline(f, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) names.push_back(strip_png(line));
        }
    } else {
        for (const auto& e : fs::directory_iterator(images))
            if (e.path().extension() == ".png") names.push_back(e.path().stem().string());
        std::sort(names.begin(), names.end());
    }

    std::vector<std::string> missing;
    for (const auto& n : names) {
        if (!fs::exists(images / (n + ".png"))) missing.push_back("images/" + n + ".png");
        if (!fs::exists(masks / (n + ".png"))) missing.push_back("masks/" + n + ".png");
    }
    if (!missing.empty()) {
        std::string list;
        for (const auto& m : missing) list += " " + m;
        NAIRSTD_CHECK_DATA(false, "dataset %s has unpaired entries:%s", root.c_str(),
                           list.c_str());
    }
    if (names.empty())
        std::cerr << "warning: dataset " << root << " ("
                  << (split.empty() ? "all" : split) << ") is empty\n";

    SceneDataset ds;
    for (const auto& n : names) {
        SceneSample s;
        s.name = n;
        int64_t mh = 0, mw = 0;
        s.image = read_image_gray01((images / (n + ".png")).string(), s.h, s.w);
        s.mask = read_mask_binary((masks / (n + ".png")).string(), mh, mw);
        NAIRSTD_CHECK_DATA(mh == s.h && mw == s.w,
                           "sample %s: image %lldx%lld but mask %lldx%lld", n.c_str(),
                           (long long)s.h, (long long)s.w, (long long)mh, (long long)mw);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

void save_dataset(const SceneDataset& ds, const std::string& root, const std::string& split) {
    fs::create_directories(fs::path(root) / "images");
    fs::create_directories(fs::path(root) / "masks");
    for (const auto& s : ds.samples) {
        write_image_gray01((fs::path(root) / "images" / (s.name + ".png")).string(),
                           s.image.data(), s.h, s.w);
        write_mask_binary((fs::path(root) / "masks" / (s.name + ".png")).string(),
                          s.mask.data(), s.h, s.w);
    }
    if (!split.empty()) {
        fs::create_directories(fs::path(root) / "splits");
        std::ofstream f(fs::path(root) / "splits" / (split + ".txt"), std::ios::trunc);
        NAIRSTD_CHECK_DATA(f.good(), "cannot write split list under %s", root.c_str());
        for (const auto& s : ds.samples) f << s.name << ".png\n";
    }
}

std::vector<float> resize_bilinear(const std::vector<float>& img, int64_t h, int64_t w,
                                   int64_t oh, int64_t ow) {
    std::vector<float> out(oh * ow);
    const double sy = double(h) / double(oh), sx = double(w) / double(ow);
    for (int64_t r = 0; r < oh; ++r) {
        double y = (double(r) + 0.5) * sy - 0.5;
        y = std::max(0.0, std::min(double(h - 1), y));
        const int64_t i = std::min<int64_t>(int64_t(y), h - 2 >= 0 ? h - 2 : 0);
        const double ty = y - double(i);
        for (int64_t c = 0; c < ow; ++c) {
            double x = (double(c) + 0.5) * sx - 0.5;
            x = std::max(0.0, std::min(double(w - 1), x));
            const int64_t j = std::min<int64_t>(int64_t(x), w - 2 >= 0 ? w - 2 : 0);
            const double tx = x - double(j);
            const double v00 = img[i * w + j], v01 = img[i * w + std::min(j + 1, w - 1)];
            const double v10 = img[std::min(i + 1, h - 1) * w + j];
            const double v11 = img[std::min(i + 1, h - 1) * w + std::min(j + 1, w - 1)];
            out[r * ow + c] = float((1 - ty) * ((1 - tx) * v00 + tx * v01) +
                                    ty * ((1 - tx) * v10 + tx * v11));
        }
    }
    return out;
}

std::vector<uint8_t> resize_nearest(const std::vector<uint8_t>& m, int64_t h, int64_t w,
                                    int64_t oh, int64_t ow) {
    std::vector<uint8_t> out(oh * ow);
    const double sy = double(h) / double(oh), sx = double(w) / double(ow);
    for (int64_t r = 0; r < oh; ++r) {
        const int64_t i =
            std::min<int64_t>(int64_t((double(r) + 0.5) * sy), h - 1);
        for (int64_t c = 0; c < ow; ++c) {
            const int64_t j =
                std::min<int64_t>(int64_t((double(c) + 0.5) * sx), w - 1);
            out[r * ow + c] = m[i * w + j];
        }
    }
    return out;
}

HardBuildResult build_hard_benchmark(const std::vector<HardSource>& sources,
                                     const HardBenchSpec& spec) {
    NAIRSTD_CHECK_CONFIG(spec.size_threshold > 0, "hard benchmark: threshold must be > 0");
    HardBuildResult res;
    for (const auto& src : sources) {
        NAIRSTD_CHECK_DATA(src.is_test_partition,
                           "hard benchmark: source %s is not a test partition",
                           src.name.c_str());
        res.admitted_per_source[src.name] = 0;
        for (const auto& s : src.data.samples) {
            SceneSample rs;
            rs.name = src.name + "_" + s.name;
            rs.h = spec.resize_h;
            rs.w = spec.resize_w;
            rs.image = (s.h == spec.resize_h && s.w == spec.resize_w)
                           ? s.image
                           : resize_bilinear(s.image, s.h, s.w, spec.resize_h, spec.resize_w);
            rs.mask = (s.h == spec.resize_h && s.w == spec.resize_w)
                          ? s.mask
                          : resize_nearest(s.mask, s.h, s.w, spec.resize_h, spec.resize_w);
            const Labeling lab = label_components(rs.mask.data(), rs.h, rs.w);
            if (lab.components.empty()) continue;
            int64_t max_area = 0;
            for (const auto& c : lab.components) max_area = std::max(max_area, c.area);
            if (max_area >= spec.size_threshold) continue;
            res.manifest.push_back(
                {src.name, s.name + ".png", int64_t(lab.components.size()), max_area});
            ++res.admitted_per_source[src.name];
            res.dataset.samples.push_back(std::move(rs));
        }
    }
    return res;
}

SizeStats size_statistics(const SceneDataset& ds) {
    SizeStats st;
    std::vector<int64_t> areas;
    for (const auto& s : ds.samples) {
        const Labeling lab = label_components(s.mask.data(), s.h, s.w);
        st.per_scene_counts.push_back(int64_t(lab.components.size()));
        if (lab.components.size() >= 2) ++st.multi_target_images;
        for (const auto& c : lab.components) areas.push_back(c.area);
    }
    if (areas.empty()) return st;
    std::sort(areas.begin(), areas.end());
    st.mean_area =
        double(std::accumulate(areas.begin(), areas.end(), int64_t(0))) / double(areas.size());
    const size_t n = areas.size();
    st.median_area = n % 2 ? double(areas[n / 2])
                           : 0.5 * double(areas[n / 2 - 1] + areas[n / 2]);
    for (size_t i = 0; i < n; ++i) {
        if (i + 1 < n && areas[i + 1] == areas[i]) continue;
        st.cdf.emplace_back(areas[i], double(i + 1) / double(n));
    }
    return st;
}

SceneDataset downsample_ablation_prep(const SceneDataset& ds, int64_t factor) {
    NAIRSTD_CHECK_CONFIG(factor >= 1, "ablation prep: factor must be >= 1");
    if (factor == 1) return ds;
    SceneDataset out;
    out.samples.reserve(ds.samples.size());
    for (const auto& s : ds.samples) {
        NAIRSTD_CHECK_CONFIG(s.h % factor == 0 && s.w % factor == 0,
                             "ablation prep: factor %lld does not divide %lldx%lld",
                             (long long)factor, (long long)s.h, (long long)s.w);
        SceneSample d = s;
        const int64_t ph = s.h / factor, pw = s.w / factor;
        std::vector<float> pooled(ph * pw);
        for (int64_t i = 0; i < ph; ++i)
            for (int64_t j = 0; j < pw; ++j) {
                double acc = 0.0;
                for (int64_t r = 0; r < factor; ++r)
                    for (int64_t c = 0; c < factor; ++c)
                        acc += s.image[(i * factor + r) * s.w + j * factor + c];
                pooled[i * pw + j] = float(acc / double(factor * factor));
            }
        for (int64_t r = 0; r < s.h; ++r)
            for (int64_t c = 0; c < s.w; ++c)
                d.image[r * s.w + c] = pooled[(r / factor) * pw + c / factor];
        out.samples.push_back(std::move(d));
    }
    return out;
}

}  // namespace nairstd
