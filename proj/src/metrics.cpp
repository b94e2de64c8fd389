#include "nairstd/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace nairstd {

Labeling label_components(const uint8_t* mask, int64_t h, int64_t w) {
    Labeling out;
    out.labels.assign(h * w, 0);
    std::vector<int64_t> stack;
    for (int64_t start = 0; start < h * w; ++start) {
        if (!mask[start] || out.labels[start]) continue;
        const int32_t id = int32_t(out.components.size()) + 1;
        Component comp;
        stack.assign(1, start);
        out.labels[start] = id;
        while (!stack.empty()) {
            const int64_t p = stack.back();
            stack.pop_back();
            const int64_t r = p / w, c = p % w;
            ++comp.area;
            comp.centroid_r += double(r);
            comp.centroid_c += double(c);
            for (int64_t dr = -1; dr <= 1; ++dr)
                for (int64_t dc = -1; dc <= 1; ++dc) {
                    if (!dr && !dc) continue;
                    const int64_t nr = r + dr, nc = c + dc;
                    if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
                    const int64_t np = nr * w + nc;
                    if (mask[np] && !out.labels[np]) {
                        out.labels[np] = id;
                        stack.push_back(np);
                    }
                }
        }
        comp.centroid_r /= double(comp.area);
        comp.centroid_c /= double(comp.area);
        out.components.push_back(comp);
    }
    return out;
}

double iou(const uint8_t* pred, const uint8_t* gt, int64_t n) {
    int64_t inter = 0, uni = 0;
    for (int64_t i = 0; i < n; ++i) {
        const bool p = pred[i] != 0, g = gt[i] != 0;
        inter += p && g;
        uni += p || g;
    }
    return uni == 0 ? 1.0 : double(inter) / double(uni);
}

MatchResult match_objects(const uint8_t* pred, const uint8_t* gt, int64_t h, int64_t w,
                          double centroid_tol) {
    const Labeling lp = label_components(pred, h, w);
    const Labeling lg = label_components(gt, h, w);
    const int64_t np = int64_t(lp.components.size()), ng = int64_t(lg.components.size());

    std::vector<int64_t> overlap(np * ng, 0);
    for (int64_t i = 0; i < h * w; ++i)
        if (lp.labels[i] && lg.labels[i])
            ++overlap[(lp.labels[i] - 1) * ng + (lg.labels[i] - 1)];

    struct Cand {
        double dist;
        int64_t p, g;
    };
    std::vector<Cand> cands;
    for (int64_t p = 0; p < np; ++p)
        for (int64_t g = 0; g < ng; ++g) {
            const double dr = lp.components[p].centroid_r - lg.components[g].centroid_r;
            const double dc = lp.components[p].centroid_c - lg.components[g].centroid_c;
            const double dist = std::sqrt(dr * dr + dc * dc);
            if (overlap[p * ng + g] > 0 || dist <= centroid_tol)
                cands.push_back({dist, p, g});
        }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.dist != b.dist) return a.dist < b.dist;
        if (a.p != b.p) return a.p < b.p;
        return a.g < b.g;
    });

    std::vector<char> used_p(np, 0), used_g(ng, 0);
    MatchResult res;
    for (const auto& c : cands) {
        if (used_p[c.p] || used_g[c.g]) continue;
        used_p[c.p] = used_g[c.g] = 1;
        ++res.tp;
    }
    for (int64_t g = 0; g < ng; ++g) res.fn += !used_g[g];
    for (int64_t p = 0; p < np; ++p)
        if (!used_p[p]) {
            ++res.fp;
            res.fp_pixels += lp.components[p].area;
        }
    return res;
}

ImageMetrics evaluate_masks(const uint8_t* pred, const uint8_t* gt, int64_t h, int64_t w) {
    ImageMetrics m;
    m.total_pixels = h * w;
    for (int64_t i = 0; i < h * w; ++i) {
        const bool p = pred[i] != 0, g = gt[i] != 0;
        m.inter_px += p && g;
        m.union_px += p || g;
    }
    m.iou = m.union_px == 0 ? 1.0 : double(m.inter_px) / double(m.union_px);
    m.match = match_objects(pred, gt, h, w);
    return m;
}

std::vector<uint8_t> binarize(const float* probs, int64_t n, float thr) {
    std::vector<uint8_t> out(n);
    for (int64_t i = 0; i < n; ++i) out[i] = probs[i] > thr ? 1 : 0;
    return out;
}

}  // namespace nairstd
