#include "nairstd/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nairstd/relevance.hpp"

namespace nairstd {

double CosineSchedule::operator()(int64_t epoch) const {
    NAIRSTD_CHECK(total >= 1 && epoch >= 0 && epoch < total,
                  "schedule: epoch %lld outside [0, %lld)", (long long)epoch,
                  (long long)total);
    return base * 0.5 * (1.0 + std::cos(M_PI * double(epoch) / double(total)));
}

Adam::Adam(std::vector<Group> groups, double beta1, double beta2, double eps)
    : groups_(std::move(groups)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(groups_.size());
    v_.resize(groups_.size());
    for (size_t g = 0; g < groups_.size(); ++g) {
        m_[g].resize(groups_[g].params.size());
        v_[g].resize(groups_[g].params.size());
        for (size_t i = 0; i < groups_[g].params.size(); ++i) {
            m_[g][i].assign(groups_[g].params[i].numel(), 0.0f);
            v_[g][i].assign(groups_[g].params[i].numel(), 0.0f);
        }
    }
}

void Adam::step(const std::vector<double>& group_lrs) {
    NAIRSTD_CHECK(group_lrs.size() == groups_.size(), "adam: %lld rates for %lld groups",
                  (long long)group_lrs.size(), (long long)groups_.size());
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    for (size_t g = 0; g < groups_.size(); ++g) {
        const float lr = float(group_lrs[g]);
        for (size_t i = 0; i < groups_[g].params.size(); ++i) {
            Tensor<float>& p = groups_[g].params[i];
            const int64_t n = p.numel();
            const std::vector<float>& gr = p.node()->grad;
            float* m = m_[g][i].data();
            float* v = v_[g][i].data();
            float* w = p.data();
            const float b1 = float(beta1_), b2 = float(beta2_);
            const float ib1 = 1.0f - b1, ib2 = 1.0f - b2;
            const float inv_bc1 = float(1.0 / bc1), inv_bc2 = float(1.0 / bc2);
            const float e = float(eps_);
            if (gr.empty()) {
                for (int64_t j = 0; j < n; ++j) {
                    m[j] *= b1;
                    v[j] *= b2;
                    const float mh = m[j] * inv_bc1;
                    const float vh = v[j] * inv_bc2;
                    w[j] -= lr * mh / (std::sqrt(vh) + e);
                }
            } else {
                for (int64_t j = 0; j < n; ++j) {
                    const float gj = gr[j];
                    m[j] = b1 * m[j] + ib1 * gj;
                    v[j] = b2 * v[j] + ib2 * gj * gj;
                    const float mh = m[j] * inv_bc1;
                    const float vh = v[j] * inv_bc2;
                    w[j] -= lr * mh / (std::sqrt(vh) + e);
                }
            }
        }
    }
}

void Adam::zero_grad() {
    for (auto& g : groups_)
        for (auto& p : g.params) p.zero_grad();
}

std::vector<float> patch_targets(const SceneSample& s, const PatchLattice& lat, double sigma,
                                 bool hard) {
    const auto centers = target_centers(s.mask.data(), s.h, s.w);
    const auto field = soft_label_field(centers, sigma, s.h, s.w);
    auto soft = patch_soft_labels(field, lat);
    if (hard) soft = binarize_patch_labels(soft);
    return std::vector<float>(soft.begin(), soft.end());
}

namespace {

std::vector<int64_t> shuffled_indices(int64_t n, uint64_t seed, const std::string& name) {
    std::vector<int64_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    auto rng = rng_stream(seed, name);
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

Tensor<float> batch_images(const SceneDataset& ds, const std::vector<int64_t>& order,
                           int64_t lo, int64_t hi) {
    const auto& first = ds.samples[order[lo]];
    Tensor<float> t(Shape{hi - lo, 1, first.h, first.w});
    for (int64_t b = lo; b < hi; ++b) {
        const auto& s = ds.samples[order[b]];
        NAIRSTD_CHECK_DATA(s.h == first.h && s.w == first.w,
                           "batch: sample %s is %lldx%lld, expected %lldx%lld",
                           s.name.c_str(), (long long)s.h, (long long)s.w,
                           (long long)first.h, (long long)first.w);
        std::copy(s.image.begin(), s.image.end(), t.data() + (b - lo) * first.h * first.w);
    }
    return t;
}

Tensor<float> batch_masks(const SceneDataset& ds, const std::vector<int64_t>& order,
                          int64_t lo, int64_t hi) {
    const auto& first = ds.samples[order[lo]];
    Tensor<float> t(Shape{hi - lo, 1, first.h, first.w});
    for (int64_t b = lo; b < hi; ++b) {
        const auto& s = ds.samples[order[b]];
        float* dst = t.data() + (b - lo) * first.h * first.w;
        for (int64_t i = 0; i < first.h * first.w; ++i) dst[i] = s.mask[i] ? 1.0f : 0.0f;
    }
    return t;
}

Tensor<float> batch_rows(const std::vector<std::vector<float>>& rows,
                         const std::vector<int64_t>& order, int64_t lo, int64_t hi) {
    const int64_t n = int64_t(rows[order[lo]].size());
    Tensor<float> t(Shape{hi - lo, n});
    for (int64_t b = lo; b < hi; ++b)
        std::copy(rows[order[b]].begin(), rows[order[b]].end(), t.data() + (b - lo) * n);
    return t;
}

std::vector<Tensor<float>> tensors_of(const nn::ParamList<float>& list) {
    std::vector<Tensor<float>> out;
    out.reserve(list.size());
    for (const auto& p : list) out.push_back(p.tensor);
    return out;
}

}  // namespace

TrainResult stage1_train(const SceneDataset& train, const SceneDataset& val,
                         const ModelConfig& mcfg, const TrainConfig& tcfg,
                         const nlohmann::ordered_json& config_snapshot) {
    NAIRSTD_CHECK_DATA(!train.empty(), "stage 1: empty training dataset");
    NAIRSTD_CHECK_CONFIG(tcfg.stage1_epochs >= 1 && tcfg.batch_size >= 1,
                         "stage 1: bad epochs/batch size");
    tune_allocator();
    Model<float> model(mcfg, tcfg.seed, ModelParts::NativeOnly);
    const PatchLattice& lat = model.lattice();

    std::vector<std::vector<float>> targets(train.size());
    for (int64_t i = 0; i < train.size(); ++i)
        targets[i] = patch_targets(train.samples[i], lat, tcfg.sigma, tcfg.hard_labels);

    nn::ParamList<float> learned = model.native_params();
    {
        auto s = model.scorer_params();
        learned.insert(learned.end(), s.begin(), s.end());
    }
    Adam opt({{tensors_of(learned), tcfg.lr_stage1}});
    CosineSchedule sched{tcfg.lr_stage1, tcfg.stage1_epochs};

    TrainResult res;
    for (int64_t e = 0; e < tcfg.stage1_epochs; ++e) {
        const double lr = sched(e);
        const auto order =
            shuffled_indices(train.size(), tcfg.seed, "stage1.order." + std::to_string(e));
        double loss_sum = 0.0;
        for (int64_t lo = 0; lo < train.size(); lo += tcfg.batch_size) {
            const int64_t hi = std::min(train.size(), lo + tcfg.batch_size);
            auto imgs = batch_images(train, order, lo, hi);
            auto y = batch_rows(targets, order, lo, hi);
            auto scores = model.forward_native(imgs).scores;
            auto loss = ops::bce_mean(scores, y);
            loss_sum += double(loss.item()) * double(hi - lo);
            opt.zero_grad();
            loss.backward();
            opt.step({lr});
        }
        EpochLog log;
        log.epoch = e;
        log.stage = 1;
        log.lr_group0 = lr;
        log.loss = loss_sum / double(train.size());
        if (!val.empty() && (e % tcfg.val_every == 0 || e == tcfg.stage1_epochs - 1)) {
            auto sc = model_scores(model, val, tcfg.batch_size);
            log.val_metric = dataset_coverage(val, sc, lat, mcfg.k);
        }
        res.logs.push_back(log);
    }

    res.checkpoint.stage = 1;
    res.checkpoint.epoch = tcfg.stage1_epochs;
    res.checkpoint.config = config_snapshot;
    res.checkpoint.add_params(learned);
    return res;
}

TrainResult stage2_train(const SceneDataset& train, const SceneDataset& val,
                         const ModelConfig& mcfg, const TrainConfig& tcfg,
                         const CheckpointData& stage1,
                         const nlohmann::ordered_json& config_snapshot) {
    NAIRSTD_CHECK_DATA(!train.empty(), "stage 2: empty training dataset");
    NAIRSTD_CHECK_THROW(CheckpointError, stage1.stage == 1,
                        "stage 2 needs a stage-1 checkpoint, got stage %lld",
                        (long long)stage1.stage);
    tune_allocator();
    Model<float> model(mcfg, tcfg.seed, ModelParts::Full);

    nn::ParamList<float> native = model.native_params();
    nn::ParamList<float> scorer = model.scorer_params();
    {
        nn::ParamList<float> pretrained = native;
        pretrained.insert(pretrained.end(), scorer.begin(), scorer.end());
        apply_checkpoint(stage1, pretrained, /*require_all=*/true);
    }
    nn::set_frozen(scorer, true);

    nn::ParamList<float> backbone_side = model.backbone_side_params();
    Adam opt({{tensors_of(backbone_side), tcfg.lr_backbone_fusion},
              {tensors_of(native), tcfg.lr_native_branch_stage2}});
    // Cosine decay restarted for this stage: epoch counter begins at 0 again.
    CosineSchedule sched_bf{tcfg.lr_backbone_fusion, tcfg.stage2_epochs};
    CosineSchedule sched_nb{tcfg.lr_native_branch_stage2, tcfg.stage2_epochs};

    TrainResult res;
    for (int64_t e = 0; e < tcfg.stage2_epochs; ++e) {
        const double lr_bf = sched_bf(e), lr_nb = sched_nb(e);
        const auto order =
            shuffled_indices(train.size(), tcfg.seed, "stage2.order." + std::to_string(e));
        double loss_sum = 0.0;
        for (int64_t lo = 0; lo < train.size(); lo += tcfg.batch_size) {
            const int64_t hi = std::min(train.size(), lo + tcfg.batch_size);
            auto imgs = batch_images(train, order, lo, hi);
            auto y = batch_masks(train, order, lo, hi);
            auto out = model.forward(imgs);
            auto loss = ops::seg_loss_logits(out.logits, y);
            loss_sum += double(loss.item()) * double(hi - lo);
            opt.zero_grad();
            loss.backward();
            opt.step({lr_bf, lr_nb});
        }
        EpochLog log;
        log.epoch = e;
        log.stage = 2;
        log.lr_group0 = lr_bf;
        log.lr_group1 = lr_nb;
        log.loss = loss_sum / double(train.size());
        if (!val.empty() && (e % tcfg.val_every == 0 || e == tcfg.stage2_epochs - 1))
            log.val_metric = evaluate_model(model, val, tcfg.batch_size).report.iou();
        res.logs.push_back(log);
    }

    res.checkpoint.stage = 2;
    res.checkpoint.epoch = tcfg.stage2_epochs;
    res.checkpoint.config = config_snapshot;
    nn::ParamList<float> all = native;
    all.insert(all.end(), scorer.begin(), scorer.end());
    all.insert(all.end(), backbone_side.begin(), backbone_side.end());
    res.checkpoint.add_params(all);
    return res;
}

std::vector<std::vector<float>> model_scores(Model<float>& model, const SceneDataset& ds,
                                             int64_t batch) {
    NoGradGuard ng;
    std::vector<int64_t> order(ds.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<std::vector<float>> out(ds.size());
    const int64_t n = model.lattice().count();
    for (int64_t lo = 0; lo < ds.size(); lo += batch) {
        const int64_t hi = std::min(ds.size(), lo + batch);
        auto imgs = batch_images(ds, order, lo, hi);
        auto scores = model.forward_native(imgs).scores;
        for (int64_t b = lo; b < hi; ++b)
            out[b].assign(scores.data() + (b - lo) * n, scores.data() + (b - lo + 1) * n);
    }
    return out;
}

double dataset_coverage(const SceneDataset& ds, const std::vector<std::vector<float>>& scores,
                        const PatchLattice& lat, int64_t k) {
    NAIRSTD_CHECK(int64_t(scores.size()) == ds.size(), "coverage: score rows != dataset");
    CoverageCount total;
    for (int64_t i = 0; i < ds.size(); ++i) {
        const auto sel = topk_select(scores[i].data(), int64_t(scores[i].size()), k);
        const auto c = coverage_count(sel, ds.samples[i].mask.data(), lat);
        total.targets += c.targets;
        total.covered += c.covered;
    }
    return total.ratio();
}

EvalResult evaluate_model(Model<float>& model, const SceneDataset& ds, int64_t batch,
                          bool keep_probs) {
    NoGradGuard ng;
    EvalResult res;
    std::vector<int64_t> order(ds.size());
    std::iota(order.begin(), order.end(), 0);
    for (int64_t lo = 0; lo < ds.size(); lo += batch) {
        const int64_t hi = std::min(ds.size(), lo + batch);
        auto imgs = batch_images(ds, order, lo, hi);
        auto probs = ops::sigmoid(model.forward(imgs).logits);
        for (int64_t b = lo; b < hi; ++b) {
            const auto& s = ds.samples[b];
            const float* p = probs.data() + (b - lo) * s.h * s.w;
            auto pred = binarize(p, s.h * s.w);
            auto m = evaluate_masks(pred.data(), s.mask.data(), s.h, s.w);
            res.rows.push_back({s.name, m.iou, m.match});
            res.report.add(m);
            if (keep_probs) res.probs.emplace_back(p, p + s.h * s.w);
        }
    }
    return res;
}

nlohmann::ordered_json model_config_to_json(const ModelConfig& cfg) {
    nlohmann::ordered_json j;
    j["image_h"] = cfg.image_h;
    j["image_w"] = cfg.image_w;
    j["patch"] = cfg.patch;
    j["k"] = cfg.k;
    j["native"] = {{"in_channels", cfg.native.in_channels},
                   {"dims", cfg.native.dims},
                   {"gn_groups", cfg.native.gn_groups}};
    j["backbone"] = {{"in_channels", cfg.backbone.in_channels},
                     {"widths", cfg.backbone.widths},
                     {"gn_groups", cfg.backbone.gn_groups}};
    j["decoder"] = {{"width", cfg.decoder.width}, {"gn_groups", cfg.decoder.gn_groups}};
    return j;
}

ModelConfig model_config_from_json(const nlohmann::ordered_json& j) {
    ModelConfig cfg;
    try {
        cfg.image_h = j.at("image_h").get<int64_t>();
        cfg.image_w = j.at("image_w").get<int64_t>();
        cfg.patch = j.at("patch").get<int64_t>();
        cfg.k = j.at("k").get<int64_t>();
        cfg.native.in_channels = j.at("native").at("in_channels").get<int64_t>();
        cfg.native.dims = j.at("native").at("dims").get<std::vector<int64_t>>();
        cfg.native.gn_groups = j.at("native").at("gn_groups").get<int64_t>();
        cfg.backbone.in_channels = j.at("backbone").at("in_channels").get<int64_t>();
        cfg.backbone.widths = j.at("backbone").at("widths").get<std::vector<int64_t>>();
        cfg.backbone.gn_groups = j.at("backbone").at("gn_groups").get<int64_t>();
        cfg.decoder.width = j.at("decoder").at("width").get<int64_t>();
        cfg.decoder.gn_groups = j.at("decoder").at("gn_groups").get<int64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    return cfg;
}

}  // namespace nairstd
