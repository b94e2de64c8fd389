#pragma once

// Patch-relevance supervision and selection: Gaussian soft labels around
// target centers, the two-layer scoring head over final-stage patch tokens,
// deterministic hard Top-K selection, and coverage accounting.

#include <algorithm>
#include <cstdint>
#include <iostream>
#include <numeric>
#include <utility>
#include <vector>

#include "nairstd/lattice.hpp"
#include "nairstd/nn.hpp"
#include "nairstd/tensor.hpp"

namespace nairstd {

// One (row, col) center per 8-connected mask component, at the rounded
// component centroid. Empty mask -> empty list.
std::vector<std::pair<int64_t, int64_t>> target_centers(const uint8_t* mask, int64_t h,
                                                        int64_t w);

// w(r,c) = exp(-min_over_centers((r-cr)^2 + (c-cc)^2) / (2 sigma^2)).
// No centers -> identically zero field.
std::vector<double> soft_label_field(const std::vector<std::pair<int64_t, int64_t>>& centers,
                                     double sigma, int64_t h, int64_t w);

// Per-patch mean of the field, lattice row-major order.
std::vector<double> patch_soft_labels(const std::vector<double>& field,
                                      const PatchLattice& lat);

// Hard-label ablation variant: binarize the soft labels at y > 0.
std::vector<double> binarize_patch_labels(const std::vector<double>& soft);

// Indices of the K highest scores, ties broken toward the lower index,
// returned sorted ascending. K > N selects everything and warns once per call.
template <typename T>
std::vector<int64_t> topk_select(const T* scores, int64_t n, int64_t k) {
    NAIRSTD_CHECK_CONFIG(k >= 1, "topk_select: K must be >= 1, got %lld", (long long)k);
    std::vector<int64_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (k >= n) {
        if (k > n)
            std::cerr << "warning: topk_select K=" << k << " exceeds N=" << n
                      << ", selecting all patches\n";
        return idx;
    }
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                      [scores](int64_t a, int64_t b) {
                          if (scores[a] != scores[b]) return scores[a] > scores[b];
                          return a < b;
                      });
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

double reduction_ratio(int64_t n, int64_t k);

struct CoverageCount {
    int64_t targets = 0;
    int64_t covered = 0;

    double ratio() const { return targets == 0 ? 0.0 : double(covered) / double(targets); }
};

// Target recall: how many ground-truth targets have their center patch in J.
CoverageCount coverage_count(const std::vector<int64_t>& selected, const uint8_t* mask,
                             const PatchLattice& lat);

// Alternative reading: fraction of the selected patches that contain at least
// one target pixel.
double patch_precision(const std::vector<int64_t>& selected, const uint8_t* mask,
                       const PatchLattice& lat);

// Two affine layers with a smooth nonlinearity between and a sigmoid output;
// shared across patches. Input tokens B x N x D -> scores B x N in (0,1).
template <typename T>
struct Scorer {
    nn::Linear<T> l1, l2;

    Scorer() = default;
    Scorer(const nn::InitCtx& ctx, int64_t token_dim, int64_t hidden)
        : l1(ctx, "l1", token_dim, hidden),
          l2(ctx, "l2", hidden, 1, nn::Init::SmallNormal) {}

    Tensor<T> operator()(const Tensor<T>& tokens) const {
        NAIRSTD_CHECK(tokens.ndim() == 3, "scorer: want B x N x D tokens");
        auto h = ops::silu(l1(tokens));
        auto s = ops::sigmoid(l2(h));  // B x N x 1
        return ops::reshape(s, Shape{tokens.dim(0), tokens.dim(1)});
    }

    void collect(nn::ParamList<T>& out) {
        l1.collect(out);
        l2.collect(out);
    }
};

}  // namespace nairstd
