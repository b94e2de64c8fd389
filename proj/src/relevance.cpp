#include "nairstd/relevance.hpp"

#include <cmath>

#include "nairstd/metrics.hpp"

namespace nairstd {

std::vector<std::pair<int64_t, int64_t>> target_centers(const uint8_t* mask, int64_t h,
                                                        int64_t w) {
    const Labeling lab = label_components(mask, h, w);
    std::vector<std::pair<int64_t, int64_t>> centers;
    centers.reserve(lab.components.size());
    for (const auto& c : lab.components)
        centers.emplace_back(std::llround(c.centroid_r), std::llround(c.centroid_c));
    return centers;
}

std::vector<double> soft_label_field(const std::vector<std::pair<int64_t, int64_t>>& centers,
                                     double sigma, int64_t h, int64_t w) {
    NAIRSTD_CHECK_CONFIG(sigma > 0.0, "soft_label_field: sigma must be positive");
    std::vector<double> field(h * w, 0.0);
    if (centers.empty()) return field;
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (int64_t r = 0; r < h; ++r)
        for (int64_t c = 0; c < w; ++c) {
            int64_t best = INT64_MAX;
            for (const auto& [cr, cc] : centers) {
                const int64_t dr = r - cr, dc = c - cc;
                best = std::min(best, dr * dr + dc * dc);
            }
            field[r * w + c] = std::exp(-double(best) * inv);
        }
    return field;
}

std::vector<double> patch_soft_labels(const std::vector<double>& field,
                                      const PatchLattice& lat) {
    NAIRSTD_CHECK((int64_t)field.size() == lat.height() * lat.width(),
                  "patch_soft_labels: field size mismatch");
    const int64_t P = lat.patch(), W = lat.width();
    std::vector<double> labels(lat.count(), 0.0);
    for (int64_t j = 0; j < lat.count(); ++j) {
        auto [u, v] = lat.coords(j);
        double acc = 0.0;
        for (int64_t r = 0; r < P; ++r) {
            const double* row = field.data() + (u * P + r) * W + v * P;
            for (int64_t c = 0; c < P; ++c) acc += row[c];
        }
        labels[j] = acc / double(P * P);
    }
    return labels;
}

std::vector<double> binarize_patch_labels(const std::vector<double>& soft) {
    std::vector<double> out(soft.size());
    for (size_t i = 0; i < soft.size(); ++i) out[i] = soft[i] > 0.0 ? 1.0 : 0.0;
    return out;
}

double reduction_ratio(int64_t n, int64_t k) {
    NAIRSTD_CHECK_CONFIG(k >= 1 && k <= n, "reduction_ratio: need 1 <= K <= N");
    return 1.0 - double(k) / double(n);
}

CoverageCount coverage_count(const std::vector<int64_t>& selected, const uint8_t* mask,
                             const PatchLattice& lat) {
    CoverageCount out;
    const auto centers = target_centers(mask, lat.height(), lat.width());
    out.targets = int64_t(centers.size());
    for (const auto& [r, c] : centers) {
        const int64_t j = lat.index(r / lat.patch(), c / lat.patch());
        if (std::binary_search(selected.begin(), selected.end(), j)) ++out.covered;
    }
    return out;
}

double patch_precision(const std::vector<int64_t>& selected, const uint8_t* mask,
                       const PatchLattice& lat) {
    if (selected.empty()) return 0.0;
    const int64_t P = lat.patch(), W = lat.width();
    int64_t hit = 0;
    for (int64_t j : selected) {
        auto [u, v] = lat.coords(j);
        bool any = false;
        for (int64_t r = 0; r < P && !any; ++r) {
            const uint8_t* row = mask + (u * P + r) * W + v * P;
            for (int64_t c = 0; c < P; ++c)
                if (row[c]) {
                    any = true;
                    break;
                }
        }
        hit += any;
    }
    return double(hit) / double(selected.size());
}

}  // namespace nairstd
