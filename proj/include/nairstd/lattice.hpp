#pragma once

// Patch lattice geometry for native-resolution encoding.
//
// An image of size H x W is tiled by non-overlapping P x P patches in
// row-major order: patch j sits at grid coords u = j / (W/P), v = j % (W/P).
// At an encoder stage with downsample factor s the same patch footprint maps
// to a P/s x P/s window whose origin is (u*P/s, v*P/s) in the stage feature
// map. All index transforms used by selection, gather and write-back live
// here so every consumer agrees on the mapping.

#include <cstdint>
#include <utility>
#include <vector>

#include "nairstd/common.hpp"
#include "nairstd/tensor.hpp"

namespace nairstd {

struct StageWindow {
    int64_t row0 = 0;
    int64_t col0 = 0;
    int64_t size = 0;  // square side, P / stride
};

class PatchLattice {
public:
    PatchLattice(int64_t H, int64_t W, int64_t P);

    int64_t height() const { return H_; }
    int64_t width() const { return W_; }
    int64_t patch() const { return P_; }
    int64_t grid_h() const { return H_ / P_; }
    int64_t grid_w() const { return W_ / P_; }
    int64_t count() const { return grid_h() * grid_w(); }  // N

    // j -> (u, v); throws on j outside [0, N)
    std::pair<int64_t, int64_t> coords(int64_t j) const;
    int64_t index(int64_t u, int64_t v) const;

    // Footprint of patch j in the feature map of a stage downsampled by
    // `stride`. Requires P % stride == 0.
    StageWindow window(int64_t j, int64_t stride) const;

private:
    int64_t H_, W_, P_;
};

// C x H x W -> N x C x P x P, patches in row-major lattice order.
template <typename T>
std::vector<T> partition_plane(const std::vector<T>& img, const PatchLattice& lat,
                               int64_t C) {
    NAIRSTD_CHECK((int64_t)img.size() == C * lat.height() * lat.width(),
                  "partition_plane: image size mismatch");
    const int64_t P = lat.patch(), H = lat.height(), W = lat.width();
    std::vector<T> out(lat.count() * C * P * P);
    for (int64_t j = 0; j < lat.count(); ++j) {
        auto [u, v] = lat.coords(j);
        for (int64_t c = 0; c < C; ++c)
            for (int64_t r = 0; r < P; ++r) {
                const T* src = img.data() + (c * H + u * P + r) * W + v * P;
                T* dst = out.data() + ((j * C + c) * P + r) * P;
                std::copy(src, src + P, dst);
            }
    }
    return out;
}

template <typename T>
std::vector<T> reassemble_plane(const std::vector<T>& patches, const PatchLattice& lat,
                                int64_t C) {
    const int64_t P = lat.patch(), H = lat.height(), W = lat.width();
    NAIRSTD_CHECK((int64_t)patches.size() == lat.count() * C * P * P,
                  "reassemble_plane: patch stack size mismatch");
    std::vector<T> img(C * H * W);
    for (int64_t j = 0; j < lat.count(); ++j) {
        auto [u, v] = lat.coords(j);
        for (int64_t c = 0; c < C; ++c)
            for (int64_t r = 0; r < P; ++r) {
                const T* src = patches.data() + ((j * C + c) * P + r) * P;
                T* dst = img.data() + (c * H + u * P + r) * W + v * P;
                std::copy(src, src + P, dst);
            }
    }
    return img;
}

// Autograd variants over batched tensors: B x C x H x W <-> B x N x C x P x P.
template <typename T>
Tensor<T> partition_batch(const Tensor<T>& x, const PatchLattice& lat) {
    NAIRSTD_CHECK(x.ndim() == 4 && x.dim(2) == lat.height() && x.dim(3) == lat.width(),
                  "partition_batch: input %s does not match lattice",
                  shape_str(x.shape()).c_str());
    std::vector<int64_t> all(lat.count());
    for (int64_t j = 0; j < lat.count(); ++j) all[j] = j;
    std::vector<std::vector<int64_t>> idx(x.dim(0), all);
    return ops::gather_windows(x, idx, lat.patch());
}

template <typename T>
Tensor<T> reassemble_batch(const Tensor<T>& patches, const PatchLattice& lat) {
    NAIRSTD_CHECK(patches.ndim() == 5 && patches.dim(1) == lat.count() &&
                      patches.dim(3) == lat.patch(),
                  "reassemble_batch: patch stack %s does not match lattice",
                  shape_str(patches.shape()).c_str());
    std::vector<int64_t> all(lat.count());
    for (int64_t j = 0; j < lat.count(); ++j) all[j] = j;
    std::vector<std::vector<int64_t>> idx(patches.dim(0), all);
    Tensor<T> base(Shape{patches.dim(0), patches.dim(2), lat.height(), lat.width()});
    return ops::scatter_windows(base, patches, idx);
}

}  // namespace nairstd
