#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "gradcheck.hpp"
#include "nairstd/tensor.hpp"

using namespace nairstd;
using nairstd::testing::gradcheck;
using nairstd::testing::randn_vec;

namespace {

Tensor<double> rt(Shape s, uint64_t seed, double scale = 1.0, bool rg = true) {
    auto t = Tensor<double>::from_data(s, randn_vec(shape_numel(s), seed, scale));
    t.set_requires_grad(rg);
    return t;
}

// independent reference conv, no shared code with the kernel under test
void ref_conv(const std::vector<double>& x, const std::vector<double>& w,
              const std::vector<double>& b, std::vector<double>& y, int64_t B,
              int64_t Ci, int64_t H, int64_t W, int64_t Co, int64_t k, int64_t s,
              int64_t p) {
    const int64_t Ho = (H + 2 * p - k) / s + 1, Wo = (W + 2 * p - k) / s + 1;
    y.assign(B * Co * Ho * Wo, 0.0);
    for (int64_t m = 0; m < B; ++m)
        for (int64_t co = 0; co < Co; ++co)
            for (int64_t oy = 0; oy < Ho; ++oy)
                for (int64_t ox = 0; ox < Wo; ++ox) {
                    double acc = b.empty() ? 0.0 : b[co];
                    for (int64_t ci = 0; ci < Ci; ++ci)
                        for (int64_t ky = 0; ky < k; ++ky)
                            for (int64_t kx = 0; kx < k; ++kx) {
                                int64_t iy = oy * s + ky - p, ix = ox * s + kx - p;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += w[((co * Ci + ci) * k + ky) * k + kx] *
                                       x[((m * Ci + ci) * H + iy) * W + ix];
                            }
                    y[((m * Co + co) * Ho + oy) * Wo + ox] = acc;
                }
}

}  // namespace

TEST_CASE("elementwise forward values") {
    auto a = Tensor<float>::from_data({3}, {1.f, -2.f, 3.f});
    auto b = Tensor<float>::from_data({3}, {0.5f, 4.f, -1.f});
    auto s = ops::add(a, b);
    CHECK(s.data()[0] == doctest::Approx(1.5f));
    CHECK(s.data()[1] == doctest::Approx(2.0f));
    auto m = ops::mul(a, b);
    CHECK(m.data()[2] == doctest::Approx(-3.0f));
    auto sg = ops::sigmoid(Tensor<float>::from_data({1}, {0.f}));
    CHECK(sg.data()[0] == doctest::Approx(0.5f));
}

TEST_CASE("fast expf matches libm within 3e-7 relative") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<float> d(-87.f, 88.f);
    float worst = 0.f;
    for (int i = 0; i < 200000; ++i) {
        float x = d(rng);
        float got = kern::fast_expf(x);
        double want = std::exp(double(x));
        float rel = float(std::abs(got - want) / want);
        worst = std::max(worst, rel);
    }
    CHECK(worst < 3e-7f);
}

TEST_CASE("conv2d forward matches independent reference") {
    std::mt19937_64 rng(11);
    for (auto [B, Ci, H, W, Co, k, s, p] :
         {std::array<int64_t, 8>{2, 3, 7, 6, 4, 3, 1, 1},
          std::array<int64_t, 8>{1, 4, 8, 8, 5, 3, 2, 1},
          std::array<int64_t, 8>{2, 2, 5, 5, 3, 1, 1, 0},
          std::array<int64_t, 8>{1, 1, 9, 4, 2, 3, 1, 0}}) {
        auto x = randn_vec(B * Ci * H * W, rng());
        auto w = randn_vec(Co * Ci * k * k, rng());
        auto b = randn_vec(Co, rng());
        std::vector<double> want;
        ref_conv(x, w, b, want, B, Ci, H, W, Co, k, s, p);
        auto xt = Tensor<double>::from_data({B, Ci, H, W}, x);
        auto wt = Tensor<double>::from_data({Co, Ci, k, k}, w);
        auto bt = Tensor<double>::from_data({Co}, b);
        auto y = ops::conv2d(xt, wt, bt, s, p);
        REQUIRE(y.numel() == (int64_t)want.size());
        for (int64_t i = 0; i < y.numel(); ++i)
            CHECK(y.data()[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
}

TEST_CASE("bmm all transpose combinations match naive") {
    std::mt19937_64 rng(13);
    const int64_t Bt = 2, M = 5, K = 17, N = 7;  // K>16 exercises lane tails
    for (bool ta : {false, true})
        for (bool tb : {false, true}) {
            Shape sa = ta ? Shape{Bt, K, M} : Shape{Bt, M, K};
            Shape sb = tb ? Shape{Bt, N, K} : Shape{Bt, K, N};
            auto a = randn_vec(shape_numel(sa), rng());
            auto b = randn_vec(shape_numel(sb), rng());
            auto at = Tensor<double>::from_data(sa, a);
            auto bt = Tensor<double>::from_data(sb, b);
            auto c = ops::bmm(at, bt, ta, tb);
            for (int64_t bb = 0; bb < Bt; ++bb)
                for (int64_t i = 0; i < M; ++i)
                    for (int64_t j = 0; j < N; ++j) {
                        double acc = 0;
                        for (int64_t kk = 0; kk < K; ++kk) {
                            double av = ta ? a[(bb * K + kk) * M + i] : a[(bb * M + i) * K + kk];
                            double bv = tb ? b[(bb * N + j) * K + kk] : b[(bb * K + kk) * N + j];
                            acc += av * bv;
                        }
                        CHECK(c.data()[(bb * M + i) * N + j] ==
                              doctest::Approx(acc).epsilon(1e-12));
                    }
        }
}

TEST_CASE("softmax rows are normalized and match naive") {
    auto x = rt({3, 9}, 17, 2.0, false);
    auto y = ops::softmax_lastdim(x);
    for (int r = 0; r < 3; ++r) {
        double s = 0;
        for (int i = 0; i < 9; ++i) s += y.data()[r * 9 + i];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        for (int i = 0; i < 9; ++i) {
            double mx = x.data()[r * 9];
            for (int j = 0; j < 9; ++j) mx = std::max(mx, x.data()[r * 9 + j]);
            double num = std::exp(x.data()[r * 9 + i] - mx), den = 0;
            for (int j = 0; j < 9; ++j) den += std::exp(x.data()[r * 9 + j] - mx);
            CHECK(y.data()[r * 9 + i] == doctest::Approx(num / den).epsilon(1e-10));
        }
    }
}

TEST_CASE("group norm normalizes within groups") {
    const int64_t B = 2, C = 6, H = 4, W = 5, G = 3;
    auto x = rt({B, C, H, W}, 23, 3.0, false);
    auto gamma = Tensor<double>(Shape{C}, 1.0);
    auto beta = Tensor<double>(Shape{C}, 0.0);
    auto y = ops::group_norm(x, gamma, beta, G, 1e-5, false);
    const int64_t Cg = C / G, n = Cg * H * W;
    for (int64_t m = 0; m < B; ++m)
        for (int64_t g = 0; g < G; ++g) {
            double mu = 0, var = 0;
            const double* p = y.data() + (m * C + g * Cg) * H * W;
            for (int64_t i = 0; i < n; ++i) mu += p[i];
            mu /= n;
            for (int64_t i = 0; i < n; ++i) var += (p[i] - mu) * (p[i] - mu);
            var /= n;
            CHECK(mu == doctest::Approx(0.0).epsilon(1e-9));
            CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
        }
}

TEST_CASE("gradcheck: elementwise and reductions") {
    auto a = rt({4, 3}, 31);
    auto b = rt({4, 3}, 37);
    auto g = rt({1}, 41);
    auto r = gradcheck(
        [&] {
            auto s = ops::add(ops::mul(a, b), ops::scale(a, 0.7));
            auto t = ops::silu(ops::sigmoid(s));
            return ops::mean_all(ops::scalar_gain(t, g));
        },
        {&a, &b, &g});
    CHECK_MESSAGE(r.ok(1e-6), r.where);
}

TEST_CASE("gradcheck: losses") {
    std::mt19937_64 rng(43);
    std::uniform_real_distribution<double> up(0.05, 0.95);
    std::bernoulli_distribution by(0.4);
    std::vector<double> pv(24), yv(24);
    for (auto& v : pv) v = up(rng);
    for (auto& v : yv) v = by(rng) ? 1.0 : 0.0;
    auto p = Tensor<double>::from_data({24}, pv);
    p.set_requires_grad(true);
    auto y = Tensor<double>::from_data({24}, yv);

    auto r1 = gradcheck([&] { return ops::bce_mean(p, y); }, {&p});
    CHECK_MESSAGE(r1.ok(1e-6), r1.where);

    auto z = rt({24}, 47, 2.0);
    auto r2 = gradcheck([&] { return ops::bce_with_logits_mean(z, y); }, {&z});
    CHECK_MESSAGE(r2.ok(1e-6), r2.where);

    auto r3 = gradcheck([&] { return ops::dice_loss(p, y); }, {&p});
    CHECK_MESSAGE(r3.ok(1e-6), r3.where);

    // composite segmentation-style loss through sigmoid
    auto r4 = gradcheck(
        [&] {
            auto probs = ops::sigmoid(z);
            return ops::add(ops::bce_with_logits_mean(z, y), ops::dice_loss(probs, y));
        },
        {&z});
    CHECK_MESSAGE(r4.ok(1e-6), r4.where);
}

TEST_CASE("gradcheck: linear") {
    auto x = rt({3, 4, 5}, 53);
    auto w = rt({6, 5}, 59);
    auto b = rt({6}, 61);
    auto r = gradcheck([&] { return ops::mean_all(ops::silu(ops::linear(x, w, b))); },
                       {&x, &w, &b});
    CHECK_MESSAGE(r.ok(1e-6), r.where);
    Tensor<double> nob;
    auto r2 = gradcheck([&] { return ops::mean_all(ops::linear(x, w, nob)); }, {&x, &w});
    CHECK_MESSAGE(r2.ok(1e-6), r2.where);
}

TEST_CASE("gradcheck: conv2d") {
    for (auto [s, p, k] : {std::array<int64_t, 3>{1, 1, 3}, std::array<int64_t, 3>{2, 1, 3},
                           std::array<int64_t, 3>{1, 0, 1}}) {
        auto x = rt({2, 3, 6, 5}, 67 + s + k);
        auto w = rt({4, 3, k, k}, 71 + p);
        auto b = rt({4}, 73);
        auto r = gradcheck(
            [&, s = s, p = p] { return ops::mean_all(ops::conv2d(x, w, b, s, p)); },
            {&x, &w, &b});
        CHECK_MESSAGE(r.ok(1e-6), r.where);
    }
}

TEST_CASE("gradcheck: group norm with and without fused silu") {
    auto x = rt({2, 6, 3, 4}, 79);
    auto gamma = rt({6}, 83, 0.5);
    auto beta = rt({6}, 89, 0.5);
    for (double v : {0.0, 1.0}) gamma.data()[int(v)] += 1.0;  // keep away from zero
    for (bool fused : {false, true}) {
        auto r = gradcheck(
            [&, fused] {
                return ops::mean_all(
                    ops::sigmoid(ops::group_norm(x, gamma, beta, 3, 1e-5, fused)));
            },
            {&x, &gamma, &beta}, 1e-6);
        CHECK_MESSAGE(r.ok(2e-5), r.where);
    }
}

TEST_CASE("gradcheck: bmm and softmax attention core") {
    auto q = rt({2, 3, 4}, 97, 0.7);
    auto k = rt({2, 5, 4}, 101, 0.7);
    auto v = rt({2, 5, 4}, 103, 0.7);
    auto r = gradcheck(
        [&] {
            auto scores = ops::scale(ops::bmm(q, k, false, true), 0.5);
            auto attn = ops::softmax_lastdim(scores);
            return ops::mean_all(ops::bmm(attn, v, false, false));
        },
        {&q, &k, &v});
    CHECK_MESSAGE(r.ok(1e-6), r.where);
    for (bool ta : {false, true})
        for (bool tb : {false, true}) {
            auto a = rt(ta ? Shape{2, 4, 3} : Shape{2, 3, 4}, 107);
            auto b = rt(tb ? Shape{2, 5, 4} : Shape{2, 4, 5}, 109);
            auto rr = gradcheck(
                [&, ta, tb] { return ops::mean_all(ops::bmm(a, b, ta, tb)); }, {&a, &b});
            CHECK_MESSAGE(rr.ok(1e-6), rr.where);
        }
}

TEST_CASE("gradcheck: spatial ops") {
    auto x = rt({2, 3, 4, 4}, 113);
    auto z = rt({2, 3}, 127);
    auto r1 = gradcheck([&] { return ops::mean_all(ops::sigmoid(ops::mean_spatial(x))); },
                        {&x});
    CHECK_MESSAGE(r1.ok(1e-6), r1.where);
    auto r2 = gradcheck(
        [&] { return ops::mean_all(ops::silu(ops::add_channel_bias(x, z))); }, {&x, &z});
    CHECK_MESSAGE(r2.ok(1e-6), r2.where);
    auto r3 = gradcheck([&] { return ops::mean_all(ops::sigmoid(ops::upsample2x_nearest(x))); },
                        {&x});
    CHECK_MESSAGE(r3.ok(1e-6), r3.where);
    auto r4 = gradcheck(
        [&] { return ops::mean_all(ops::mul(ops::nchw_to_tokens(x), ops::nchw_to_tokens(x))); },
        {&x});
    CHECK_MESSAGE(r4.ok(1e-6), r4.where);
    auto t = rt({2, 16, 3}, 131);
    auto r5 = gradcheck([&] { return ops::mean_all(ops::sigmoid(ops::tokens_to_nchw(t, 4, 4))); },
                        {&t});
    CHECK_MESSAGE(r5.ok(1e-6), r5.where);
}

TEST_CASE("nchw/token layout round trip is exact") {
    auto x = rt({3, 5, 2, 4}, 137, 1.0, false);
    auto y = ops::tokens_to_nchw(ops::nchw_to_tokens(x), 2, 4);
    REQUIRE(y.shape() == x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("gradcheck: gather and scatter") {
    auto x = rt({2, 6, 3}, 139);
    std::vector<std::vector<int64_t>> idx = {{4, 0, 2}, {1, 1, 5}};  // repeats allowed
    auto r1 = gradcheck([&] { return ops::mean_all(ops::sigmoid(ops::gather_rows(x, idx))); },
                        {&x});
    CHECK_MESSAGE(r1.ok(1e-6), r1.where);

    auto f = rt({2, 3, 4, 6}, 149);
    std::vector<std::vector<int64_t>> widx = {{0, 3}, {5, 2}};
    auto r2 = gradcheck(
        [&] { return ops::mean_all(ops::sigmoid(ops::gather_windows(f, widx, 2))); }, {&f});
    CHECK_MESSAGE(r2.ok(1e-6), r2.where);

    auto patches = rt({2, 2, 3, 2, 2}, 151);
    auto r3 = gradcheck(
        [&] {
            return ops::mean_all(ops::sigmoid(ops::scatter_windows(f, patches, widx)));
        },
        {&f, &patches});
    CHECK_MESSAGE(r3.ok(1e-6), r3.where);
}

TEST_CASE("scatter preserves untouched regions bitwise") {
    auto f = rt({1, 2, 4, 4}, 157, 1.0, false);
    auto patches = rt({1, 1, 2, 2, 2}, 163, 1.0, false);
    std::vector<std::vector<int64_t>> idx = {{3}};  // bottom-right window
    auto out = ops::scatter_windows(f, patches, idx);
    for (int64_t c = 0; c < 2; ++c)
        for (int64_t r = 0; r < 4; ++r)
            for (int64_t cc = 0; cc < 4; ++cc) {
                bool inside = r >= 2 && cc >= 2;
                double want = inside ? patches.data()[(c * 2 + (r - 2)) * 2 + (cc - 2)]
                                     : f.data()[(c * 4 + r) * 4 + cc];
                CHECK(out.data()[(c * 4 + r) * 4 + cc] == want);
            }
}

TEST_CASE("no-grad mode and frozen params build no tape") {
    auto a = rt({3}, 167);
    auto b = rt({3}, 173);
    {
        NoGradGuard ng;
        auto c = ops::add(a, b);
        CHECK_FALSE(c.tracked());
        CHECK(c.node()->parents.empty());
    }
    b.set_requires_grad(false);
    auto c = ops::mul(a, b);
    auto loss = ops::mean_all(c);
    loss.backward();
    CHECK(a.grad().size() == 3);
    CHECK(b.node()->grad.empty());  // frozen: no gradient storage touched

    auto d = rt({3}, 179);
    auto e = ops::add(d.detach(), a);
    ops::mean_all(e).backward();
    CHECK(d.node()->grad.empty());
}

TEST_CASE("gradient accumulates across parallel paths (diamond)") {
    auto a = rt({2}, 181);
    auto s = ops::add(ops::scale(a, 2.0), ops::scale(a, 3.0));
    ops::sum_all(s).backward();
    CHECK(a.grad()[0] == doctest::Approx(5.0));
    CHECK(a.grad()[1] == doctest::Approx(5.0));
}

TEST_CASE("forward is deterministic across repeated evaluation") {
    auto x = rt({2, 4, 8, 8}, 191, 1.0, false);
    auto w = rt({4, 4, 3, 3}, 193, 0.3, false);
    Tensor<double> nob;
    auto y1 = ops::conv2d(x, w, nob, 1, 1);
    auto y2 = ops::conv2d(x, w, nob, 1, 1);
    CHECK(std::memcmp(y1.data(), y2.data(), sizeof(double) * y1.numel()) == 0);
}
