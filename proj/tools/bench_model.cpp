// Times the assembled model at training shapes, phase by phase, to keep the
// desk profile inside its CPU budget.

#include <chrono>
#include <cstdio>
#include <random>

#include "nairstd/config.hpp"
#include "nairstd/model.hpp"
#include "nairstd/train.hpp"

using namespace nairstd;
using Clock = std::chrono::steady_clock;

static double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

template <typename F>
static double bench(const char* label, int iters, F&& fn) {
    fn();  // warm-up
    const auto t0 = Clock::now();
    for (int i = 0; i < iters; ++i) fn();
    const double ms = ms_since(t0) / iters;
    std::printf("%-28s %8.2f ms\n", label, ms);
    return ms;
}

int main(int argc, char** argv) {
    tune_allocator();
    const RunConfig cfg = argc > 1 ? load_run_config(argv[1]) : default_run_config();
    const int64_t B = cfg.train.batch_size;
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);

    Tensor<float> imgs(Shape{B, 1, cfg.model.image_h, cfg.model.image_w});
    for (int64_t i = 0; i < imgs.numel(); ++i) imgs.data()[i] = u(rng);
    Tensor<float> masks(Shape{B, 1, cfg.model.image_h, cfg.model.image_w});
    for (int64_t i = 0; i < masks.numel(); ++i) masks.data()[i] = u(rng) < 0.01f ? 1.0f : 0.0f;
    const int64_t n = (cfg.model.image_h / cfg.model.patch) * (cfg.model.image_w / cfg.model.patch);
    Tensor<float> ylab(Shape{B, n});
    for (int64_t i = 0; i < ylab.numel(); ++i) ylab.data()[i] = u(rng);

    Model<float> m1(cfg.model, 1, ModelParts::NativeOnly);
    Model<float> full(cfg.model, 1, ModelParts::Full);
    Model<float> bb(cfg.model, 1, ModelParts::BackboneOnly);

    auto mk_groups = [](nn::ParamList<float> l) {
        std::vector<Tensor<float>> t;
        for (auto& p : l) t.push_back(p.tensor);
        return t;
    };
    auto learned1 = m1.native_params();
    {
        auto s = m1.scorer_params();
        learned1.insert(learned1.end(), s.begin(), s.end());
    }
    Adam opt1({{mk_groups(learned1), 1e-4}});
    Adam opt2({{mk_groups(full.backbone_side_params()), 1e-4},
               {mk_groups(full.native_params()), 1e-6}});

    double s1 = 0, s2 = 0;
    {
        NoGradGuard ng;
        bench("native fwd (eval)", 5, [&] { m1.forward_native(imgs); });
        bench("backbone+decoder fwd (eval)", 5, [&] { bb.forward(imgs); });
        bench("full fwd (eval)", 5, [&] { full.forward(imgs); });
    }
    s1 = bench("stage-1 step (fwd+bwd+opt)", 5, [&] {
        auto scores = m1.forward_native(imgs).scores;
        auto loss = ops::bce_mean(scores, ylab);
        opt1.zero_grad();
        loss.backward();
        opt1.step({1e-4});
    });
    s2 = bench("stage-2 step (fwd+bwd+opt)", 5, [&] {
        auto out = full.forward(imgs);
        auto loss = ops::seg_loss_logits(out.logits, masks);
        opt2.zero_grad();
        loss.backward();
        opt2.step({1e-4, 1e-6});
    });
    {
        bench("stage-2 fwd (train mode)", 5, [&] { full.forward(imgs); });
        auto out = full.forward(imgs);
        auto loss = ops::seg_loss_logits(out.logits, masks);
        bench("stage-2 bwd only", 5, [&] {
            opt2.zero_grad();
            loss.backward();
        });
        bench("stage-2 opt only", 5, [&] { opt2.step({1e-4, 1e-6}); });
        bench("native fwd (train mode)", 5, [&] { full.forward_native(imgs); });
        for (auto& pr : full.all_params())
            if (pr.name.find(".alpha") != std::string::npos) pr.tensor.data()[0] = 0.01f;
        {
            NoGradGuard ng;
            bench("full fwd (eval, alpha!=0)", 5, [&] { full.forward(imgs); });
        }
        bench("bb+decoder fwd (train mode)", 5, [&] { bb.forward(imgs); });
    }

    const double total_min =
        (s1 / B * cfg.synth.count * cfg.train.stage1_epochs +
         s2 / B * cfg.synth.count * cfg.train.stage2_epochs) /
        60000.0;
    std::printf("projected two-stage wall (train only): %.1f min\n", total_min);
    if (tape_prof::on) {
        tape_prof::acc().clear();
        {
            auto scores = m1.forward_native(imgs).scores;
            auto loss = ops::bce_mean(scores, ylab);
            opt1.zero_grad();
            loss.backward();
        }
        std::fprintf(stderr, "--- stage-1 bwd, one step ---\n");
        tape_prof::dump();
        {
            auto out = full.forward(imgs);
            auto loss = ops::seg_loss_logits(out.logits, masks);
            opt2.zero_grad();
            loss.backward();
        }
        std::fprintf(stderr, "--- stage-2 bwd, one step ---\n");
        tape_prof::dump();
    }
    return 0;
}
