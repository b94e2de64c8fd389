#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "nairstd/common.hpp"
#include "nairstd/datasets.hpp"

namespace nairstd {

namespace {

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

// Bilinear value noise: a (cells+1)^2 random lattice interpolated across the
// image. Summing a few octaves gives a smooth cloud-like field.
void add_value_noise(std::vector<double>& img, int64_t h, int64_t w, int64_t cells,
                     double amp, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int64_t g = cells + 1;
    std::vector<double> grid(g * g);
    for (auto& v : grid) v = u(rng);
    for (int64_t r = 0; r < h; ++r) {
        const double y = double(r) * double(cells) / double(h - 1);
        const int64_t i = std::min<int64_t>(int64_t(y), cells - 1);
        const double ty = y - double(i);
        for (int64_t c = 0; c < w; ++c) {
            const double x = double(c) * double(cells) / double(w - 1);
            const int64_t j = std::min<int64_t>(int64_t(x), cells - 1);
            const double tx = x - double(j);
            const double v00 = grid[i * g + j], v01 = grid[i * g + j + 1];
            const double v10 = grid[(i + 1) * g + j], v11 = grid[(i + 1) * g + j + 1];
            img[r * w + c] += amp * ((1 - ty) * ((1 - tx) * v00 + tx * v01) +
                                     ty * ((1 - tx) * v10 + tx * v11));
        }
    }
}

// A soft anisotropic bump with no hard support edge; background clutter that
// is never labeled.
void add_distractor(std::vector<double>& img, int64_t h, int64_t w, std::mt19937_64& rng,
                    double contrast) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double s = 2.5 + 2.5 * u(rng);
    const double ecc = 1.0 + u(rng);
    const double s1 = s * std::sqrt(ecc), s2 = s / std::sqrt(ecc);
    const double theta = u(rng) * M_PI;
    const double ct = std::cos(theta), st = std::sin(theta);
    const double amp = contrast * (0.35 + 0.45 * u(rng));
    const int64_t margin = 14;
    const int64_t cr = margin + int64_t(u(rng) * double(h - 2 * margin));
    const int64_t cc = margin + int64_t(u(rng) * double(w - 2 * margin));
    const int64_t rad = int64_t(3.0 * s) + 1;
    for (int64_t r = std::max<int64_t>(0, cr - rad); r <= std::min(h - 1, cr + rad); ++r)
        for (int64_t c = std::max<int64_t>(0, cc - rad); c <= std::min(w - 1, cc + rad);
             ++c) {
            const double dr = double(r - cr), dc = double(c - cc);
            const double x = ct * dc + st * dr, y = -st * dc + ct * dr;
            img[r * w + c] += amp * std::exp(-0.5 * (x * x / (s1 * s1) + y * y / (s2 * s2)));
        }
}

struct Blob {
    std::vector<int64_t> support;  // flat pixel indices
    std::vector<double> value;     // intensity delta per support pixel
};

// Anisotropic Gaussian evaluated on a window around (cr, cc); the mask is the
// blob's support, defined as exactly the `area` largest samples, and the
// intensity contribution is clipped to that support (zero outside). Peak
// delta is exactly `contrast`.
Blob make_blob(int64_t h, int64_t w, int64_t cr, int64_t cc, int64_t area, double contrast,
               std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double sigma = std::sqrt(double(area) / M_PI) * 0.55 + 0.15;
    const double ecc = 1.0 + u(rng);
    const double s1 = sigma * std::sqrt(ecc), s2 = sigma / std::sqrt(ecc);
    const double theta = u(rng) * M_PI;
    const double ct = std::cos(theta), st = std::sin(theta);
    const double offr = u(rng) - 0.5, offc = u(rng) - 0.5;

    constexpr int64_t kHalf = 8;
    struct Px {
        double g;
        int64_t idx;
    };
    std::vector<Px> px;
    px.reserve((2 * kHalf + 1) * (2 * kHalf + 1));
    for (int64_t r = cr - kHalf; r <= cr + kHalf; ++r)
        for (int64_t c = cc - kHalf; c <= cc + kHalf; ++c) {
            NAIRSTD_CHECK(r >= 0 && r < h && c >= 0 && c < w,
                          "blob window escapes the image");
            const double dr = double(r - cr) - offr, dc = double(c - cc) - offc;
            const double x = ct * dc + st * dr, y = -st * dc + ct * dr;
            px.push_back({std::exp(-0.5 * (x * x / (s1 * s1) + y * y / (s2 * s2))),
                          r * w + c});
        }
    std::sort(px.begin(), px.end(), [](const Px& a, const Px& b) {
        if (a.g != b.g) return a.g > b.g;
        return a.idx < b.idx;
    });
    Blob blob;
    const double peak = px[0].g;
    for (int64_t i = 0; i < area; ++i) {
        blob.support.push_back(px[i].idx);
        blob.value.push_back(contrast * px[i].g / peak);
    }
    return blob;
}

}  // namespace

SceneDataset synth_generate(const SynthConfig& cfg) {
    NAIRSTD_CHECK_CONFIG(cfg.count >= 0, "synth: negative count");
    NAIRSTD_CHECK_CONFIG(cfg.h >= 64 && cfg.w >= 64, "synth: image must be at least 64x64");
    NAIRSTD_CHECK_CONFIG(cfg.min_targets >= 0 && cfg.min_targets <= cfg.max_targets,
                         "synth: empty target count range [%lld, %lld]",
                         (long long)cfg.min_targets, (long long)cfg.max_targets);
    NAIRSTD_CHECK_CONFIG(cfg.min_area >= 1 && cfg.min_area <= cfg.max_area &&
                             cfg.max_area <= 200,
                         "synth: bad target area range [%lld, %lld]",
                         (long long)cfg.min_area, (long long)cfg.max_area);
    NAIRSTD_CHECK_CONFIG(cfg.target_peak_contrast > 0.0, "synth: contrast must be > 0");
    NAIRSTD_CHECK_CONFIG(cfg.noise_std >= 0.0, "synth: negative noise");
    NAIRSTD_CHECK_CONFIG(cfg.distractors_max >= 0, "synth: negative distractor count");

    SceneDataset ds;
    ds.samples.reserve(cfg.count);
    for (int64_t i = 0; i < cfg.count; ++i) {
        auto rng = rng_stream(cfg.seed, "synth." + std::to_string(i));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const int64_t h = cfg.h, w = cfg.w;
        std::vector<double> img(h * w, 0.0);

        switch (cfg.background) {
            case Background::Flat: {
                const double level = 0.15 + 0.30 * u(rng);
                std::fill(img.begin(), img.end(), level);
                break;
            }
            case Background::Gradient: {
                const double base = 0.10 + 0.20 * u(rng);
                const double amp = 0.10 + 0.20 * u(rng);
                const double theta = u(rng) * 2.0 * M_PI;
                const double gx = std::cos(theta), gy = std::sin(theta);
                for (int64_t r = 0; r < h; ++r)
                    for (int64_t c = 0; c < w; ++c) {
                        const double t =
                            (gx * double(c) / double(w - 1) + gy * double(r) / double(h - 1) +
                             1.0) *
                            0.5;
                        img[r * w + c] = base + amp * t;
                    }
                break;
            }
            case Background::CloudNoise: {
                const double base = 0.12 + 0.10 * u(rng);
                std::fill(img.begin(), img.end(), base);
                const double scale = 0.7 + 0.6 * u(rng);
                add_value_noise(img, h, w, 4, 0.28 * scale, rng);
                add_value_noise(img, h, w, 8, 0.14 * scale, rng);
                add_value_noise(img, h, w, 16, 0.07 * scale, rng);
                add_value_noise(img, h, w, 32, 0.035 * scale, rng);
                const int64_t nd = int64_t(u(rng) * double(cfg.distractors_max + 1));
                for (int64_t d = 0; d < nd; ++d)
                    add_distractor(img, h, w, rng, cfg.target_peak_contrast);
                break;
            }
        }

        SceneSample s;
        s.name = detail::format("synth_%05lld", (long long)i);
        s.h = h;
        s.w = w;
        s.mask.assign(h * w, 0);

        const int64_t nt =
            cfg.min_targets + int64_t(u(rng) * double(cfg.max_targets - cfg.min_targets + 1));
        std::vector<std::pair<int64_t, int64_t>> centers;
        constexpr int64_t kMargin = 10, kMinSep = 20;
        for (int64_t t = 0; t < nt; ++t) {
            int64_t cr = 0, cc = 0;
            bool placed = false;
            for (int tries = 0; tries < 500 && !placed; ++tries) {
                cr = kMargin + int64_t(u(rng) * double(h - 2 * kMargin));
                cc = kMargin + int64_t(u(rng) * double(w - 2 * kMargin));
                placed = true;
                for (const auto& [pr, pc] : centers)
                    if (std::abs(pr - cr) < kMinSep && std::abs(pc - cc) < kMinSep) {
                        placed = false;
                        break;
                    }
            }
            NAIRSTD_CHECK_DATA(placed, "synth: cannot place %lld targets in %lldx%lld",
                               (long long)nt, (long long)h, (long long)w);
            centers.emplace_back(cr, cc);
            const int64_t area =
                cfg.min_area + int64_t(u(rng) * double(cfg.max_area - cfg.min_area + 1));
            Blob blob = make_blob(h, w, cr, cc, area, cfg.target_peak_contrast, rng);
            for (size_t k = 0; k < blob.support.size(); ++k) {
                img[blob.support[k]] += blob.value[k];
                s.mask[blob.support[k]] = 1;
            }
        }

        if (cfg.noise_std > 0.0) {
            std::normal_distribution<double> noise(0.0, cfg.noise_std);
            for (auto& v : img) v += noise(rng);
        }

        // Quantize to 8-bit levels so the on-disk PNG round-trip is exact.
        s.image.resize(h * w);
        for (int64_t p = 0; p < h * w; ++p)
            s.image[p] = float(std::lround(clamp01(img[p]) * 255.0) / 255.0);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

}  // namespace nairstd
