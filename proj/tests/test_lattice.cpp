#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "nairstd/lattice.hpp"

using namespace nairstd;

TEST_CASE("lattice counts and coords on the default geometry") {
    PatchLattice lat(256, 256, 32);
    CHECK(lat.count() == 64);
    CHECK(lat.grid_h() == 8);
    CHECK(lat.grid_w() == 8);

    auto [u, v] = lat.coords(9);
    CHECK(u == 1);
    CHECK(v == 1);
    CHECK(lat.index(1, 1) == 9);

    CHECK(lat.coords(0) == std::pair<int64_t, int64_t>{0, 0});
    CHECK(lat.coords(63) == std::pair<int64_t, int64_t>{7, 7});
}

TEST_CASE("stage windows scale the patch footprint") {
    PatchLattice lat(256, 256, 32);

    auto w4 = lat.window(9, 4);
    CHECK(w4.size == 8);
    CHECK(w4.row0 == 8);
    CHECK(w4.col0 == 8);

    auto w1 = lat.window(9, 1);
    CHECK(w1.size == 32);
    CHECK(w1.row0 == 32);
    CHECK(w1.col0 == 32);

    for (int64_t s : {2, 4, 8, 16})
        for (int64_t j : {0, 7, 9, 36, 63}) {
            auto w = lat.window(j, s);
            auto base = lat.window(j, 1);
            CHECK(w.size * s == 32);
            CHECK(w.row0 * s == base.row0);
            CHECK(w.col0 * s == base.col0);
            // windows stay inside the stage map
            CHECK(w.row0 + w.size <= 256 / s);
            CHECK(w.col0 + w.size <= 256 / s);
        }
}

TEST_CASE("non-square lattices use the column count for unraveling") {
    PatchLattice lat(64, 128, 32);
    CHECK(lat.count() == 8);
    CHECK(lat.grid_h() == 2);
    CHECK(lat.grid_w() == 4);
    CHECK(lat.coords(5) == std::pair<int64_t, int64_t>{1, 1});
    auto w = lat.window(5, 2);
    CHECK(w.size == 16);
    CHECK(w.row0 == 16);
    CHECK(w.col0 == 16);
}

TEST_CASE("index/coords round trip on random lattices") {
    std::mt19937_64 rng(5);
    for (int it = 0; it < 200; ++it) {
        int64_t P = 1 << (rng() % 6);         // 1..32
        int64_t gh = 1 + rng() % 12, gw = 1 + rng() % 12;
        PatchLattice lat(gh * P, gw * P, P);
        for (int t = 0; t < 16; ++t) {
            int64_t j = rng() % lat.count();
            auto [u, v] = lat.coords(j);
            CHECK(lat.index(u, v) == j);
            CHECK(u == j / gw);
            CHECK(v == j % gw);
        }
    }
}

TEST_CASE("invalid construction and lookups throw") {
    CHECK_THROWS_AS(PatchLattice(100, 256, 32), ConfigError);   // H not tiled
    CHECK_THROWS_AS(PatchLattice(256, 100, 32), ConfigError);   // W not tiled
    CHECK_THROWS_AS(PatchLattice(0, 256, 32), ConfigError);
    PatchLattice lat(256, 256, 32);
    CHECK_THROWS_AS(lat.coords(-1), std::out_of_range);
    CHECK_THROWS_AS(lat.coords(64), std::out_of_range);
    CHECK_THROWS_AS(lat.index(8, 0), std::out_of_range);
    CHECK_THROWS_AS(lat.window(0, 3), ConfigError);             // 32 % 3 != 0
    CHECK_THROWS_AS(lat.window(64, 2), std::out_of_range);
}

TEST_CASE("partition/reassemble round trip is bit-exact on 1000 random images") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<float> dist(-10.f, 10.f);
    int64_t sides[] = {1, 2, 4, 8, 16, 32};
    for (int it = 0; it < 1000; ++it) {
        const int64_t P = sides[rng() % 6];
        const int64_t H = P * (1 + rng() % 8), W = P * (1 + rng() % 8);
        const int64_t C = 1 + rng() % 3;
        PatchLattice lat(H, W, P);
        std::vector<float> img(C * H * W);
        for (auto& x : img) x = dist(rng);
        auto patches = partition_plane(img, lat, C);
        auto back = reassemble_plane(patches, lat, C);
        REQUIRE(back.size() == img.size());
        CHECK(std::memcmp(back.data(), img.data(), img.size() * sizeof(float)) == 0);
    }
}

TEST_CASE("patch content matches direct window reads") {
    PatchLattice lat(8, 12, 4);
    std::vector<float> img(2 * 8 * 12);
    for (size_t i = 0; i < img.size(); ++i) img[i] = float(i);
    auto patches = partition_plane(img, lat, 2);
    for (int64_t j = 0; j < lat.count(); ++j) {
        auto [u, v] = lat.coords(j);
        for (int64_t c = 0; c < 2; ++c)
            for (int64_t r = 0; r < 4; ++r)
                for (int64_t cc = 0; cc < 4; ++cc)
                    CHECK(patches[((j * 2 + c) * 4 + r) * 4 + cc] ==
                          img[(c * 8 + u * 4 + r) * 12 + v * 4 + cc]);
    }
}

TEST_CASE("batched tensor partition agrees with the plane version") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<float> dist(-1.f, 1.f);
    PatchLattice lat(16, 24, 8);
    const int64_t B = 2, C = 3;
    std::vector<float> data(B * C * 16 * 24);
    for (auto& x : data) x = dist(rng);
    auto xt = Tensor<float>::from_data({B, C, 16, 24}, data);
    auto pt = partition_batch(xt, lat);
    REQUIRE(pt.shape() == Shape{B, lat.count(), C, 8, 8});
    for (int64_t b = 0; b < B; ++b) {
        std::vector<float> img(data.begin() + b * C * 16 * 24,
                               data.begin() + (b + 1) * C * 16 * 24);
        auto want = partition_plane(img, lat, C);
        CHECK(std::memcmp(pt.data() + b * want.size(), want.data(),
                          want.size() * sizeof(float)) == 0);
    }
    auto back = reassemble_batch(pt, lat);
    CHECK(std::memcmp(back.data(), data.data(), data.size() * sizeof(float)) == 0);
}
