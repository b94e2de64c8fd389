#include "nairstd/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nairstd/checkpoint.hpp"
#include "nairstd/common.hpp"
#include "nairstd/config.hpp"
#include "nairstd/csv.hpp"
#include "nairstd/datasets.hpp"
#include "nairstd/io_image.hpp"
#include "nairstd/model.hpp"
#include "nairstd/plot.hpp"
#include "nairstd/train.hpp"

namespace fs = std::filesystem;

namespace nairstd {

namespace {

struct CommonOpts {
    std::string config_path;
    int64_t seed = -1;
    std::string out_dir;
    bool deterministic = false;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "JSON run config (defaults if omitted)");
    cmd->add_option("--seed", o.seed, "master seed; overrides train and synth seeds");
    cmd->add_option("--out", o.out_dir, "output directory override");
    cmd->add_flag("--deterministic", o.deterministic,
                  "single-threaded ordered execution (the engine always runs this way; "
                  "flag kept for scripting symmetry)");
}

RunConfig resolve_config(const CommonOpts& o) {
    RunConfig cfg =
        o.config_path.empty() ? default_run_config() : load_run_config(o.config_path);
    if (o.seed >= 0) {
        cfg.train.seed = uint64_t(o.seed);
        cfg.synth.seed = uint64_t(o.seed);
    }
    if (!o.out_dir.empty()) cfg.paths.out_dir = o.out_dir;
    return cfg;
}

// Relative data roots live under $NA_IRSTD_CACHE when it is set.
std::string data_root(const RunConfig& cfg) {
    const char* cache = std::getenv("NA_IRSTD_CACHE");
    fs::path p = cfg.paths.data_root;
    if (cache && *cache && p.is_relative()) return (fs::path(cache) / p).string();
    return p.string();
}

void write_stats_csvs(const SceneDataset& ds, const fs::path& dir,
                      const std::string& tag) {
    const SizeStats st = size_statistics(ds);
    std::vector<std::vector<std::string>> cdf_rows;
    for (const auto& [area, frac] : st.cdf)
        cdf_rows.push_back({std::to_string(area), fmt_num(frac)});
    write_csv((dir / ("size_cdf_" + tag + ".csv")).string(), {"area", "cum_fraction"},
              cdf_rows);
    write_csv((dir / ("size_stats_" + tag + ".csv")).string(),
              {"mean_area", "median_area", "multi_target_images", "images"},
              {{fmt_num(st.mean_area), fmt_num(st.median_area),
                std::to_string(st.multi_target_images), std::to_string(ds.size())}});
}

void write_train_log(const std::string& path, const std::vector<EpochLog>& logs) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& l : logs)
        rows.push_back({std::to_string(l.epoch), std::to_string(l.stage),
                        fmt_num(l.lr_group0), fmt_num(l.lr_group1), fmt_num(l.loss),
                        fmt_num(l.val_metric)});
    write_csv(path, {"epoch", "stage", "lr_main", "lr_native", "loss", "val_metric"}, rows);
}

ModelConfig checkpoint_model_config(const CheckpointData& ck, const ModelConfig& fallback) {
    if (ck.config.contains("model")) return model_config_from_json(ck.config.at("model"));
    return fallback;
}

int cmd_synth(const RunConfig& cfg) {
    const std::string root = data_root(cfg);
    const struct {
        const char* split;
        int64_t count;
    } parts[] = {{"train", cfg.synth.count},
                 {"val", std::max<int64_t>(1, cfg.synth.count / 5)},
                 {"test", std::max<int64_t>(1, cfg.synth.count / 5)}};
    for (const auto& part : parts) {
        SynthConfig sc = cfg.synth;
        sc.count = part.count;
        sc.seed = rng_stream(cfg.synth.seed, std::string("synth.") + part.split)();
        SceneDataset ds = synth_generate(sc);
        for (int64_t i = 0; i < ds.size(); ++i)
            ds.samples[i].name = detail::format("%s_%05lld", part.split, (long long)i);
        save_dataset(ds, root, part.split);
        write_stats_csvs(ds, root, part.split);
        std::cout << "wrote " << ds.size() << " " << part.split << " images\n";
    }
    std::cout << "dataset at " << root << "\n";
    return 0;
}

int cmd_train(const RunConfig& cfg, int64_t stage, const std::string& from_ckpt) {
    const std::string root = data_root(cfg);
    const SceneDataset train = load_dataset(root, cfg.paths.train_split);
    const SceneDataset val = load_dataset(root, cfg.paths.val_split);
    const auto snapshot = run_config_to_json(cfg);
    fs::create_directories(cfg.paths.out_dir);

    TrainResult res;
    if (stage == 1) {
        res = stage1_train(train, val, cfg.model, cfg.train, snapshot);
    } else {
        NAIRSTD_CHECK_CONFIG(!from_ckpt.empty(),
                             "stage 2 requires --from-checkpoint with the stage-1 output");
        res = stage2_train(train, val, cfg.model, cfg.train, load_checkpoint(from_ckpt),
                           snapshot);
    }
    const std::string tag = "stage" + std::to_string(stage);
    const fs::path out = cfg.paths.out_dir;
    save_checkpoint((out / (tag + ".ckpt")).string(), res.checkpoint);
    write_train_log((out / ("train_" + tag + ".csv")).string(), res.logs);
    const auto& last = res.logs.back();
    std::cout << tag << " done: loss " << last.loss << ", val "
              << (stage == 1 ? "coverage " : "IoU ") << last.val_metric << "\n"
              << "checkpoint: " << (out / (tag + ".ckpt")).string() << "\n";
    return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& ckpt_path, int64_t k_override) {
    const CheckpointData ck = load_checkpoint(ckpt_path);
    NAIRSTD_CHECK_THROW(CheckpointError, ck.stage == 2,
                        "eval needs a stage-2 checkpoint, got stage %lld",
                        (long long)ck.stage);
    ModelConfig mcfg = checkpoint_model_config(ck, cfg.model);
    if (k_override > 0) mcfg.k = k_override;
    Model<float> model(mcfg, cfg.train.seed, ModelParts::Full);
    auto params = model.all_params();
    apply_checkpoint(ck, params, /*require_all=*/true);

    const SceneDataset test = load_dataset(data_root(cfg), cfg.paths.test_split);
    NAIRSTD_CHECK_DATA(!test.empty(), "eval: empty test split");
    EvalResult r = evaluate_model(model, test, cfg.train.batch_size, /*keep_probs=*/true);

    const fs::path out = cfg.paths.out_dir;
    fs::create_directories(out / "masks");
    fs::create_directories(out / "probs");
    std::vector<std::vector<std::string>> rows;
    for (size_t i = 0; i < r.rows.size(); ++i) {
        const auto& row = r.rows[i];
        rows.push_back({row.name, fmt_num(row.iou), std::to_string(row.match.tp),
                        std::to_string(row.match.fn), std::to_string(row.match.fp),
                        std::to_string(row.match.fp_pixels)});
        const auto& s = test.samples[i];
        const auto pred = binarize(r.probs[i].data(), s.h * s.w);
        write_mask_binary((out / "masks" / (s.name + ".png")).string(), pred.data(), s.h,
                          s.w);
        write_prob_map((out / "probs" / (s.name + ".npb")).string(), r.probs[i].data(),
                       s.h, s.w);
    }
    write_csv((out / "eval_per_image.csv").string(),
              {"name", "iou", "tp", "fn", "fp", "fp_pixels"}, rows);
    write_csv((out / "eval_summary.csv").string(),
              {"images", "iou", "pd", "fa_per_million"},
              {{std::to_string(r.report.images), fmt_num(r.report.iou()),
                fmt_num(r.report.pd()), fmt_num(r.report.fa_e6())}});
    std::cout << "eval: images " << r.report.images << " IoU " << r.report.iou() << " Pd "
              << r.report.pd() << " Fa " << r.report.fa_e6() << "e-6\n"
              << "report: " << (out / "eval_summary.csv").string() << "\n";
    return 0;
}

int cmd_coverage(const RunConfig& cfg, const std::string& ckpt_path, int64_t k,
                 std::vector<int64_t> sweep) {
    const CheckpointData ck = load_checkpoint(ckpt_path);
    const ModelConfig mcfg = checkpoint_model_config(ck, cfg.model);
    Model<float> model(mcfg, cfg.train.seed, ModelParts::NativeOnly);
    auto params = model.native_params();
    {
        auto s = model.scorer_params();
        params.insert(params.end(), s.begin(), s.end());
    }
    apply_checkpoint(ck, params, /*require_all=*/true);

    const SceneDataset test = load_dataset(data_root(cfg), cfg.paths.test_split);
    NAIRSTD_CHECK_DATA(!test.empty(), "coverage: empty test split");
    const auto scores = model_scores(model, test, cfg.train.batch_size);
    const PatchLattice& lat = model.lattice();

    if (sweep.empty()) sweep.push_back(k > 0 ? k : mcfg.k);
    std::vector<std::vector<std::string>> rows;
    for (int64_t kk : sweep) {
        NAIRSTD_CHECK_CONFIG(kk >= 1, "coverage: K must be >= 1");
        const double cov = dataset_coverage(test, scores, lat, kk);
        rows.push_back({std::to_string(kk), fmt_num(cov)});
        std::cout << "K=" << kk << " coverage " << cov << "\n";
    }
    const fs::path out = cfg.paths.out_dir;
    fs::create_directories(out);
    write_csv((out / "coverage.csv").string(), {"k", "coverage"}, rows);

    // Patch-grid score map of the first test image, for heatmap rendering.
    std::vector<std::string> header;
    for (int64_t c = 0; c < lat.grid_w(); ++c) header.push_back("c" + std::to_string(c));
    std::vector<std::vector<std::string>> grid;
    for (int64_t r = 0; r < lat.grid_h(); ++r) {
        std::vector<std::string> line;
        for (int64_t c = 0; c < lat.grid_w(); ++c)
            line.push_back(fmt_num(scores[0][r * lat.grid_w() + c]));
        grid.push_back(line);
    }
    write_csv((out / "scores_grid.csv").string(), header, grid);
    return 0;
}

int cmd_build_hard(const RunConfig& cfg, const std::vector<std::string>& source_args,
                   int64_t threshold) {
    NAIRSTD_CHECK_CONFIG(!source_args.empty(), "build-hard needs at least one name=path source");
    std::vector<HardSource> sources;
    for (const auto& a : source_args) {
        const auto eq = a.find('=');
        NAIRSTD_CHECK_CONFIG(eq != std::string::npos && eq > 0 && eq + 1 < a.size(),
                             "source '%s' is not name=path", a.c_str());
        HardSource src;
        src.name = a.substr(0, eq);
        const std::string path = a.substr(eq + 1);
        const bool has_test = fs::exists(fs::path(path) / "splits" / "test.txt");
        src.data = load_dataset(path, has_test ? "test" : "");
        src.is_test_partition = has_test;
        sources.push_back(std::move(src));
    }
    HardBenchSpec spec;
    spec.size_threshold = threshold > 0 ? threshold : cfg.hard_threshold;
    spec.resize_h = cfg.model.image_h;
    spec.resize_w = cfg.model.image_w;

    const HardBuildResult res = build_hard_benchmark(sources, spec);
    const fs::path out = cfg.paths.out_dir;
    save_dataset(res.dataset, out.string(), "test");
    std::vector<std::vector<std::string>> rows;
    for (const auto& m : res.manifest)
        rows.push_back({m.source, m.filename, std::to_string(m.num_targets),
                        std::to_string(m.max_area)});
    write_csv((out / "manifest.csv").string(),
              {"source", "filename", "num_targets", "max_area"}, rows);
    if (!res.dataset.empty()) write_stats_csvs(res.dataset, out, "test");
    for (const auto& [name, count] : res.admitted_per_source)
        std::cout << name << ": admitted " << count << "\n";
    std::cout << "total " << res.total_admitted() << " images at " << out.string() << "\n";
    return 0;
}

int cmd_ablate_downsample(const RunConfig& cfg) {
    const std::string root = data_root(cfg);
    const SceneDataset train = load_dataset(root, cfg.paths.train_split);
    const SceneDataset val = load_dataset(root, cfg.paths.val_split);
    const SceneDataset test = load_dataset(root, cfg.paths.test_split);
    const auto snapshot = run_config_to_json(cfg);

    struct Variant {
        std::string name;
        double iou, pd, fa;
    };
    std::vector<Variant> results;
    for (const int64_t factor : {int64_t(1), cfg.downsample_factor}) {
        const std::string name = factor == 1 ? "native" : "down" + std::to_string(factor) + "x";
        const SceneDataset tr = downsample_ablation_prep(train, factor);
        const SceneDataset va = downsample_ablation_prep(val, factor);
        const SceneDataset te = downsample_ablation_prep(test, factor);
        const fs::path out = fs::path(cfg.paths.out_dir) / name;
        fs::create_directories(out);

        auto s1 = stage1_train(tr, va, cfg.model, cfg.train, snapshot);
        save_checkpoint((out / "stage1.ckpt").string(), s1.checkpoint);
        write_train_log((out / "train_stage1.csv").string(), s1.logs);
        auto s2 = stage2_train(tr, va, cfg.model, cfg.train, s1.checkpoint, snapshot);
        save_checkpoint((out / "stage2.ckpt").string(), s2.checkpoint);
        write_train_log((out / "train_stage2.csv").string(), s2.logs);

        Model<float> model(cfg.model, cfg.train.seed, ModelParts::Full);
        auto params = model.all_params();
        apply_checkpoint(s2.checkpoint, params, /*require_all=*/true);
        const EvalResult r = evaluate_model(model, te, cfg.train.batch_size);
        results.push_back({name, r.report.iou(), r.report.pd(), r.report.fa_e6()});
        std::cout << name << ": IoU " << results.back().iou << " Pd " << results.back().pd
                  << " Fa " << results.back().fa << "e-6\n";
    }

    std::vector<std::vector<std::string>> rows;
    for (const auto& v : results)
        rows.push_back({v.name, fmt_num(v.iou), fmt_num(v.pd), fmt_num(v.fa)});
    write_csv((fs::path(cfg.paths.out_dir) / "ablation_downsample.csv").string(),
              {"variant", "iou", "pd", "fa_per_million"}, rows);
    return 0;
}

int cmd_plot(const RunConfig& cfg, const std::string& kind, const std::string& csv) {
    const fs::path out = cfg.paths.out_dir;
    fs::create_directories(out);
    const std::string png = (out / (fs::path(csv).stem().string() + ".png")).string();
    if (kind == "heatmap")
        plot_heatmap(csv, png);
    else if (kind == "curve" || kind == "cdf")
        plot_curve(csv, png);
    else
        NAIRSTD_CHECK_CONFIG(false, "plot kind '%s' is not curve|cdf|heatmap", kind.c_str());
    std::cout << "wrote " << png << "\n";
    return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"native-resolution small-target detector: data, training, evaluation"};
    app.require_subcommand(1);
    int rc = 0;

    CommonOpts synth_o;
    auto* synth = app.add_subcommand("synth", "generate the synthetic dataset splits");
    add_common(synth, synth_o);
    synth->callback([&] { rc = cmd_synth(resolve_config(synth_o)); });

    CommonOpts train_o;
    int64_t stage = 1;
    std::string from_ckpt;
    auto* train = app.add_subcommand("train", "run one training stage");
    add_common(train, train_o);
    train->add_option("--stage", stage, "1: native+scorer, 2: full model")
        ->check(CLI::IsMember({1, 2}))
        ->required();
    train->add_option("--from-checkpoint", from_ckpt, "stage-1 checkpoint (stage 2 only)");
    train->callback([&] { rc = cmd_train(resolve_config(train_o), stage, from_ckpt); });

    CommonOpts eval_o;
    std::string eval_ckpt;
    int64_t eval_k = 0;
    auto* eval = app.add_subcommand("eval", "segment the test split and report IoU/Pd/Fa");
    add_common(eval, eval_o);
    eval->add_option("--from-checkpoint", eval_ckpt, "stage-2 checkpoint")->required();
    eval->add_option("--k", eval_k, "override Top-K at inference");
    eval->callback([&] { rc = cmd_eval(resolve_config(eval_o), eval_ckpt, eval_k); });

    CommonOpts cov_o;
    std::string cov_ckpt;
    int64_t cov_k = 0;
    std::vector<int64_t> sweep;
    auto* cov = app.add_subcommand("coverage", "Top-K target coverage on the test split");
    add_common(cov, cov_o);
    cov->add_option("--from-checkpoint", cov_ckpt, "stage-1 or stage-2 checkpoint")
        ->required();
    cov->add_option("--k", cov_k, "single K (default: config K)");
    cov->add_option("--k-sweep", sweep, "comma-separated K list")->delimiter(',');
    cov->callback([&] { rc = cmd_coverage(resolve_config(cov_o), cov_ckpt, cov_k, sweep); });

    CommonOpts hard_o;
    std::vector<std::string> hard_sources;
    int64_t hard_threshold = -1;
    auto* hard = app.add_subcommand("build-hard",
                                    "assemble the small-target-only benchmark from sources");
    add_common(hard, hard_o);
    hard->add_option("sources", hard_sources, "name=path dataset roots (test partitions)");
    hard->add_option("--threshold", hard_threshold, "strict max-area cutoff in pixels");
    hard->callback(
        [&] { rc = cmd_build_hard(resolve_config(hard_o), hard_sources, hard_threshold); });

    CommonOpts abl_o;
    auto* abl = app.add_subcommand("ablate-downsample",
                                   "paired native vs degraded-input training run");
    add_common(abl, abl_o);
    abl->callback([&] { rc = cmd_ablate_downsample(resolve_config(abl_o)); });

    CommonOpts plot_o;
    std::string plot_kind, plot_csv;
    auto* plot = app.add_subcommand("plot", "render a CSV as a PNG");
    add_common(plot, plot_o);
    plot->add_option("kind", plot_kind, "curve | cdf | heatmap")->required();
    plot->add_option("csv", plot_csv, "input CSV path")->required();
    plot->callback([&] { rc = cmd_plot(resolve_config(plot_o), plot_kind, plot_csv); });

    CommonOpts dump_o;
    auto* dump = app.add_subcommand("dump-config", "print the effective config as JSON");
    add_common(dump, dump_o);
    dump->callback(
        [&] { std::cout << run_config_to_json(resolve_config(dump_o)).dump(2) << "\n"; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return rc;
}

}  // namespace nairstd
