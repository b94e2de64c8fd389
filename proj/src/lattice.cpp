#include "nairstd/lattice.hpp"

#include <stdexcept>

namespace nairstd {

PatchLattice::PatchLattice(int64_t H, int64_t W, int64_t P) : H_(H), W_(W), P_(P) {
    NAIRSTD_CHECK_CONFIG(H > 0 && W > 0 && P > 0,
                         "lattice: H, W, P must be positive (got %lld, %lld, %lld)",
                         (long long)H, (long long)W, (long long)P);
    NAIRSTD_CHECK_CONFIG(H % P == 0 && W % P == 0,
                         "lattice: %lldx%lld is not tiled by P=%lld", (long long)H,
                         (long long)W, (long long)P);
}

std::pair<int64_t, int64_t> PatchLattice::coords(int64_t j) const {
    if (j < 0 || j >= count())
        throw std::out_of_range("patch index " + std::to_string(j) + " outside [0, " +
                                std::to_string(count()) + ")");
    return {j / grid_w(), j % grid_w()};
}

int64_t PatchLattice::index(int64_t u, int64_t v) const {
    if (u < 0 || u >= grid_h() || v < 0 || v >= grid_w())
        throw std::out_of_range("patch coords (" + std::to_string(u) + "," +
                                std::to_string(v) + ") outside grid " +
                                std::to_string(grid_h()) + "x" + std::to_string(grid_w()));
    return u * grid_w() + v;
}

StageWindow PatchLattice::window(int64_t j, int64_t stride) const {
    NAIRSTD_CHECK_CONFIG(stride > 0 && P_ % stride == 0,
                         "lattice: patch size %lld not divisible by stage stride %lld",
                         (long long)P_, (long long)stride);
    auto [u, v] = coords(j);
    const int64_t ps = P_ / stride;
    return StageWindow{u * ps, v * ps, ps};
}

}  // namespace nairstd
