#pragma once

// Detection metrics over binary masks: 8-connected component labeling,
// pixel IoU, component matching (overlap or 3-px centroid rule), and the
// pooled Pd / Fa accounting used for dataset-level reports.

#include <cstdint>
#include <vector>

namespace nairstd {

struct Component {
    int64_t area = 0;
    double centroid_r = 0.0;
    double centroid_c = 0.0;
};

struct Labeling {
    std::vector<int32_t> labels;  // H*W, 0 = background, components are 1-based
    std::vector<Component> components;
};

// 8-connected labeling of nonzero pixels, BFS flood fill. Component order is
// first-encounter (row-major scan), so results are deterministic.
Labeling label_components(const uint8_t* mask, int64_t h, int64_t w);

// TP_px / (T_px + P_px - TP_px); both masks empty -> 1.0.
double iou(const uint8_t* pred, const uint8_t* gt, int64_t n);

struct MatchResult {
    int64_t tp = 0;         // gt components matched by some pred component
    int64_t fn = 0;         // gt components left unmatched
    int64_t fp = 0;         // pred components left unmatched
    int64_t fp_pixels = 0;  // total area of unmatched pred components
};

// A gt component counts as detected when a predicted component overlaps it in
// at least one pixel or its centroid lies within `centroid_tol` px. Pairs are
// assigned greedily by ascending centroid distance and each component is used
// at most once.
MatchResult match_objects(const uint8_t* pred, const uint8_t* gt, int64_t h, int64_t w,
                          double centroid_tol = 3.0);

struct ImageMetrics {
    double iou = 0.0;
    int64_t inter_px = 0;
    int64_t union_px = 0;
    MatchResult match;
    int64_t total_pixels = 0;
};

ImageMetrics evaluate_masks(const uint8_t* pred, const uint8_t* gt, int64_t h, int64_t w);

// Dataset-pooled totals: IoU as ratio of summed intersection/union, Pd over
// pooled component counts, Fa as false-positive pixels per evaluated pixel.
struct DetectionReport {
    int64_t images = 0;
    int64_t inter_px = 0;
    int64_t union_px = 0;
    int64_t tp = 0, fn = 0, fp = 0;
    int64_t fp_pixels = 0;
    int64_t total_pixels = 0;

    void add(const ImageMetrics& m) {
        ++images;
        inter_px += m.inter_px;
        union_px += m.union_px;
        tp += m.match.tp;
        fn += m.match.fn;
        fp += m.match.fp;
        fp_pixels += m.match.fp_pixels;
        total_pixels += m.total_pixels;
    }
    double iou() const { return union_px == 0 ? 1.0 : double(inter_px) / double(union_px); }
    double pd() const { return tp + fn == 0 ? 1.0 : double(tp) / double(tp + fn); }
    double fa() const { return total_pixels == 0 ? 0.0 : double(fp_pixels) / double(total_pixels); }
    double fa_e6() const { return fa() * 1e6; }
};

// Threshold a probability map at 0.5 into a binary mask.
std::vector<uint8_t> binarize(const float* probs, int64_t n, float thr = 0.5f);

}  // namespace nairstd
