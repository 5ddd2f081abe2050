#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dropsplat/trainer.hpp"

namespace dropsplat::cli {

constexpr const char* kVersion = "0.1.0";

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write file: " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

inline double median(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("median: empty input");
    std::sort(v.begin(), v.end());
    size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::vector<TrainRecord> parse_trainlog_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read training log: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty training log: " + path);
    std::vector<TrainRecord> records;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string field;
        std::vector<std::string> f;
        while (std::getline(ss, field, ',')) f.push_back(field);
        if (f.size() != 9) throw std::runtime_error("malformed training log row in " + path + ": " + line);
        TrainRecord r;
        r.iter = std::stoi(f[0]);
        r.train_psnr = std::stod(f[1]);
        r.test_psnr = std::stod(f[2]);
        r.train_ssim = std::stod(f[3]);
        r.test_ssim = std::stod(f[4]);
        r.l1 = std::stod(f[5]);
        r.dssim = std::stod(f[6]);
        r.n_gaussians = std::stoul(f[7]);
        r.r_t = std::stod(f[8]);
        records.push_back(r);
    }
    return records;
}

inline RegularizerKind parse_reg_kind(const std::string& s) {
    if (s == "none") return RegularizerKind::none;
    if (s == "dropgaussian") return RegularizerKind::dropgaussian;
    if (s == "selective") return RegularizerKind::selective;
    if (s == "l1") return RegularizerKind::l1;
    throw std::invalid_argument("unknown regularizer: " + s);
}
inline const char* reg_kind_name(RegularizerKind k) {
    switch (k) {
        case RegularizerKind::none: return "none";
        case RegularizerKind::dropgaussian: return "dropgaussian";
        case RegularizerKind::selective: return "selective";
        case RegularizerKind::l1: return "l1";
    }
    return "?";
}
inline DropMode parse_drop_mode(const std::string& s) {
    if (s == "progressive") return DropMode::progressive;
    if (s == "fixed") return DropMode::fixed;
    throw std::invalid_argument("unknown schedule mode: " + s);
}
inline const char* drop_mode_name(DropMode m) { return m == DropMode::progressive ? "progressive" : "fixed"; }
inline DropCriterion parse_criterion(const std::string& s) {
    if (s == "gradient") return DropCriterion::gradient;
    if (s == "distance") return DropCriterion::distance;
    throw std::invalid_argument("unknown criterion: " + s);
}
inline const char* criterion_name(DropCriterion c) { return c == DropCriterion::gradient ? "gradient" : "distance"; }
inline InitStrategy parse_init(const std::string& s) {
    if (s == "points") return InitStrategy::from_points;
    if (s == "random") return InitStrategy::random;
    throw std::invalid_argument("unknown init strategy: " + s);
}
inline const char* init_name(InitStrategy s) { return s == InitStrategy::from_points ? "points" : "random"; }

// Per-Gaussian screen gradient magnitude of the color loss, averaged over
// plan-free renders of all train views. Packed into the mean2d rows of a
// GradientSet so the distance histogram reads it directly.
inline GradientSet mean_screen_gradient_stats(const GaussianCloud& cloud, const SceneBundle& bundle,
                                              double lambda = 0.2, const RenderSettings& settings = {}) {
    std::vector<size_t> ids = bundle.split_indices("train");
    if (ids.empty()) throw std::invalid_argument("gradient statistics need at least one train view");
    std::vector<double> sum(cloud.size(), 0.0);
    for (size_t id : ids) {
        RenderOutput ro = render(cloud, bundle.cameras[id], nullptr, settings);
        LossValue loss = color_loss(ro.image, bundle.images[id], lambda);
        GradientSet g = backward(ro, cloud, bundle.cameras[id], nullptr, loss.d_rendered);
        for (size_t i = 0; i < cloud.size(); ++i) sum[i] += g.mean2d[i].norm();
    }
    GradientSet stats;
    stats.assign_zero(cloud.size());
    for (size_t i = 0; i < cloud.size(); ++i)
        stats.mean2d[i] = Vec2(sum[i] / static_cast<double>(ids.size()), 0.0);
    return stats;
}

struct CheckScene {
    GaussianCloud cloud;
    Camera camera;
};

// Small random cloud plus a random orbit camera for gradient checking.
inline CheckScene random_check_scene(int n, int width, int height, int sh_degree, Rng& rng) {
    CheckScene cs;
    cs.cloud.sh_degree = sh_degree;
    int nb = cs.cloud.basis_count();
    for (int i = 0; i < n; ++i) {
        Gaussian g;
        g.center = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
        for (int k = 0; k < 3; ++k) g.log_scale[k] = rng.uniform(std::log(0.08), std::log(0.45));
        g.rotation = detail::random_unit_quat(rng);
        g.opacity_logit = opacity_to_logit(rng.uniform(0.15, 0.9));
        Vec3 color(rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9));
        g.sh.col(0) = (color - Vec3::Constant(0.5)) / kSh0;
        for (int b = 1; b < nb; ++b)
            for (int ch = 0; ch < 3; ++ch) g.sh(ch, b) = rng.uniform(-0.2, 0.2);
        cs.cloud.gaussians.push_back(g);
    }
    double az = rng.uniform(0.0, 2.0 * std::numbers::pi);
    double el = rng.uniform(-0.4, 0.4);
    double dist = rng.uniform(3.0, 4.5);
    Vec3 pos = dist * Vec3(std::sin(az) * std::cos(el), std::sin(el), -std::cos(az) * std::cos(el));
    cs.camera = detail::make_lookat_camera(pos, Vec3::Zero(), 0.55 * width, width, height);
    return cs;
}

struct SceneArgs {
    std::string scene_path;
    bool synthetic = false;
    int train_views = 3;
    int test_views = 5;
    int width = 64;
    int height = 64;
    int64_t scene_seed = -1;  // negative: reuse the training seed
};

inline SceneBundle build_scene(const SceneArgs& a, uint64_t fallback_seed) {
    if (a.synthetic) {
        SyntheticConfig sc;
        sc.n_train = a.train_views;
        sc.n_test = a.test_views;
        sc.width = a.width;
        sc.height = a.height;
        sc.seed = a.scene_seed >= 0 ? static_cast<uint64_t>(a.scene_seed) : fallback_seed;
        return generate_synthetic_scene(sc).bundle;
    }
    return load_scene(a.scene_path);
}

struct TrainOpts {
    SceneArgs scene;
    std::string out_dir;
    TrainConfig cfg;
    std::string reg_kind = "none";
    std::string mode = "progressive";
    std::string criterion = "gradient";
    std::string init = "points";
    double background = 0.0;
    int threads = 0;  // 0: leave the process default
};

inline nlohmann::json config_to_json(const TrainConfig& cfg) {
    nlohmann::json j;
    j["t_total"] = cfg.t_total;
    j["densify_interval"] = cfg.densify_interval;
    j["densify_until"] = cfg.densify_limit();
    j["densify_grad_threshold"] = cfg.densify_grad_threshold;
    j["scale_split_fraction"] = cfg.scale_split_fraction;
    j["min_opacity"] = cfg.min_opacity;
    j["lambda_dssim"] = cfg.lambda_dssim;
    j["eval_interval"] = cfg.eval_interval;
    j["sh_degree"] = cfg.sh_degree;
    j["seed"] = cfg.seed;
    j["init"] = init_name(cfg.init);
    j["random_count"] = cfg.random_count;
    j["background"] = {cfg.background.x(), cfg.background.y(), cfg.background.z()};
    j["regularizer"] = {{"kind", reg_kind_name(cfg.reg.kind)},
                        {"gamma", cfg.reg.gamma},
                        {"mode", drop_mode_name(cfg.reg.mode)},
                        {"criterion", criterion_name(cfg.reg.criterion)},
                        {"lambda_reg", cfg.reg.lambda_reg}};
    j["lr"] = {{"center", cfg.lr.center},
               {"opacity", cfg.lr.opacity},
               {"scale", cfg.lr.scale},
               {"rotation", cfg.lr.rotation},
               {"sh", cfg.lr.sh}};
    return j;
}

inline int cmd_train(TrainOpts& o) {
    namespace fs = std::filesystem;
    if (!o.scene.synthetic && o.scene.scene_path.empty())
        throw CLI::ValidationError("train: provide --scene <manifest> or --synthetic");
    if (o.threads > 0) set_worker_count(o.threads);
    o.cfg.reg.kind = parse_reg_kind(o.reg_kind);
    o.cfg.reg.mode = parse_drop_mode(o.mode);
    o.cfg.reg.criterion = parse_criterion(o.criterion);
    o.cfg.init = parse_init(o.init);
    o.cfg.background = Vec3::Constant(o.background);

    SceneBundle bundle = build_scene(o.scene, o.cfg.seed);
    TrainResult res = train(bundle, o.cfg);

    fs::create_directories(fs::path(o.out_dir) / "renders");
    write_text_file((fs::path(o.out_dir) / "trainlog.csv").string(), res.log.to_csv());
    save_cloud(res.cloud, (fs::path(o.out_dir) / "cloud.json").string());
    if (o.scene.synthetic)
        save_scene(bundle, (fs::path(o.out_dir) / "scene.json").string());

    RenderSettings settings;
    settings.background = o.cfg.background;
    std::vector<size_t> test_ids = bundle.split_indices("test");
    std::vector<size_t> render_ids = test_ids.empty() ? bundle.split_indices("train") : test_ids;
    for (size_t k = 0; k < render_ids.size(); ++k) {
        char name[64];
        std::snprintf(name, sizeof name, "renders/%s_%03zu.png", test_ids.empty() ? "train" : "test", k);
        save_png((fs::path(o.out_dir) / name).string(), render(res.cloud, bundle.cameras[render_ids[k]], nullptr, settings).image);
    }

    GradientSet stats = mean_screen_gradient_stats(res.cloud, bundle, o.cfg.lambda_dssim, settings);
    std::vector<size_t> train_ids = bundle.split_indices("train");
    Histogram hist = gradient_distance_histogram(stats, res.cloud, bundle.cameras[train_ids[0]],
                                                 o.cfg.densify_grad_threshold, 8);
    write_text_file((fs::path(o.out_dir) / "histogram.csv").string(), histogram_to_csv(hist));

    nlohmann::json manifest;
    manifest["version"] = kVersion;
    manifest["command"] = "train";
    manifest["config"] = config_to_json(o.cfg);
    if (o.scene.synthetic) {
        manifest["scene"] = {{"source", "synthetic"},
                             {"train_views", o.scene.train_views},
                             {"test_views", o.scene.test_views},
                             {"width", o.scene.width},
                             {"height", o.scene.height},
                             {"scene_seed", o.scene.scene_seed >= 0 ? static_cast<uint64_t>(o.scene.scene_seed)
                                                                    : o.cfg.seed}};
    } else {
        manifest["scene"] = {{"source", o.scene.scene_path}};
    }
    manifest["threads"] = worker_count();
    manifest["artifacts"] = {{"trainlog", "trainlog.csv"},
                             {"cloud", "cloud.json"},
                             {"renders", "renders"},
                             {"histogram", "histogram.csv"}};
    if (o.scene.synthetic) manifest["artifacts"]["scene"] = "scene.json";
    manifest["csv_schemas"] = {{"trainlog", "iter,train_psnr,test_psnr,train_ssim,test_ssim,l1,dssim,n_gaussians,r_t"},
                               {"histogram", "bin_lo,bin_hi,count"}};
    write_text_file((fs::path(o.out_dir) / "manifest.json").string(), manifest.dump(2) + "\n");

    if (!res.log.records.empty()) {
        const TrainRecord& r = res.log.records.back();
        std::printf("final iter %d: train_psnr=%.4f test_psnr=%.4f n_gaussians=%zu\n", r.iter, r.train_psnr,
                    r.test_psnr, r.n_gaussians);
    }
    std::printf("run written to %s\n", o.out_dir.c_str());
    return 0;
}

struct AblateOpts {
    SceneArgs scene;
    std::string out_dir;
    int seeds = 5;
    int iters = 2000;
    int eval_interval = 250;
    int threads = 0;
};

struct AblateVariant {
    std::string name;
    RegularizerConfig reg;
};

inline std::vector<AblateVariant> ablate_variants() {
    std::vector<AblateVariant> v;
    v.push_back({"none", {RegularizerKind::none, 0.0, DropMode::progressive, DropCriterion::gradient, 0.0}});
    for (double g : {0.1, 0.2, 0.3}) {
        char name[64];
        std::snprintf(name, sizeof name, "drop_prog_g%.1f", g);
        v.push_back({name, {RegularizerKind::dropgaussian, g, DropMode::progressive, DropCriterion::gradient, 0.0}});
        std::snprintf(name, sizeof name, "drop_fixed_g%.1f", g);
        v.push_back({name, {RegularizerKind::dropgaussian, g, DropMode::fixed, DropCriterion::gradient, 0.0}});
    }
    v.push_back({"sel_gradient", {RegularizerKind::selective, 0.2, DropMode::progressive, DropCriterion::gradient, 0.0}});
    v.push_back({"sel_distance", {RegularizerKind::selective, 0.2, DropMode::progressive, DropCriterion::distance, 0.0}});
    v.push_back({"l1_gradient", {RegularizerKind::l1, 0.0, DropMode::progressive, DropCriterion::gradient, 1e-3}});
    v.push_back({"l1_distance", {RegularizerKind::l1, 0.0, DropMode::progressive, DropCriterion::distance, 1e-3}});
    return v;
}

// Comparison groups: a drop-rate sweep, random versus selective dropping, and
// dropping versus the weighted opacity penalty.
inline std::map<std::string, std::vector<std::string>> ablate_tables() {
    return {{"rate_sweep",
             {"none", "drop_prog_g0.1", "drop_prog_g0.2", "drop_prog_g0.3", "drop_fixed_g0.1", "drop_fixed_g0.2",
              "drop_fixed_g0.3"}},
            {"drop_vs_selective", {"drop_prog_g0.2", "sel_gradient", "sel_distance"}},
            {"drop_vs_l1", {"drop_prog_g0.2", "l1_gradient", "l1_distance"}}};
}

inline int cmd_ablate(AblateOpts& o) {
    namespace fs = std::filesystem;
    if (o.seeds < 1) throw CLI::ValidationError("ablate: --seeds must be >= 1");
    if (o.threads > 0) set_worker_count(o.threads);
    o.scene.synthetic = true;
    fs::create_directories(fs::path(o.out_dir) / "runs");

    std::vector<AblateVariant> variants = ablate_variants();
    for (int s = 0; s < o.seeds; ++s) {
        SceneArgs scene = o.scene;
        scene.scene_seed = scene.scene_seed >= 0 ? scene.scene_seed + s : s;
        SceneBundle bundle = build_scene(scene, static_cast<uint64_t>(s));
        for (const AblateVariant& var : variants) {
            TrainConfig cfg;
            cfg.t_total = o.iters;
            cfg.eval_interval = o.eval_interval;
            cfg.seed = static_cast<uint64_t>(s);
            cfg.reg = var.reg;
            TrainResult res = train(bundle, cfg);
            char name[96];
            std::snprintf(name, sizeof name, "runs/%s_seed%d.csv", var.name.c_str(), s);
            write_text_file((fs::path(o.out_dir) / name).string(), res.log.to_csv());
            const TrainRecord& last = res.log.records.back();
            std::printf("seed %d %-16s test_psnr=%.4f train_psnr=%.4f\n", s, var.name.c_str(), last.test_psnr,
                        last.train_psnr);
            std::fflush(stdout);
        }
    }

    // summaries are recomputed from the per-run files, not from in-memory
    // results, so the written artifacts are the source of truth
    for (const auto& [table, names] : ablate_tables()) {
        std::string csv = "config,median_train_psnr,median_test_psnr,median_test_ssim\n";
        for (const std::string& name : names) {
            std::vector<double> train_psnr, test_psnr, test_ssim;
            for (int s = 0; s < o.seeds; ++s) {
                char run[96];
                std::snprintf(run, sizeof run, "runs/%s_seed%d.csv", name.c_str(), s);
                std::vector<TrainRecord> recs = parse_trainlog_csv((fs::path(o.out_dir) / run).string());
                if (recs.empty()) throw std::runtime_error("ablate: empty training log for " + std::string(run));
                train_psnr.push_back(recs.back().train_psnr);
                test_psnr.push_back(recs.back().test_psnr);
                test_ssim.push_back(recs.back().test_ssim);
            }
            char row[160];
            std::snprintf(row, sizeof row, "%s,%.10g,%.10g,%.10g\n", name.c_str(), median(train_psnr),
                          median(test_psnr), median(test_ssim));
            csv += row;
        }
        write_text_file((fs::path(o.out_dir) / (table + ".csv")).string(), csv);
    }
    std::printf("ablation summaries written to %s\n", o.out_dir.c_str());
    return 0;
}

struct GradCheckOpts {
    int scenes = 20;
    int gaussians = 10;
    int width = 32;
    int height = 32;
    uint64_t seed = 0;
    double step = 1e-4;
    double bound = 1e-3;
    int threads = 0;
};

inline int cmd_grad_check(const GradCheckOpts& o) {
    if (o.gaussians < 1 || o.scenes < 1) throw CLI::ValidationError("grad-check: counts must be positive");
    if (o.threads > 0) set_worker_count(o.threads);
    Rng rng = make_stream(o.seed, "gradcheck");
    double overall = 0.0;
    size_t checked = 0, skipped = 0;
    for (int s = 0; s < o.scenes; ++s) {
        int degree = s % 3 == 2 ? 2 : 1;
        CheckScene cs = random_check_scene(o.gaussians, o.width, o.height, degree, rng);
        CheckScene target_scene = random_check_scene(o.gaussians, o.width, o.height, degree, rng);
        LossSpec spec;
        spec.kind = LossSpec::Kind::color;
        spec.target = render(target_scene.cloud, cs.camera).image;
        std::optional<DropPlan> plan;
        if (s % 2 == 1) plan = sample_drop_plan(cs.cloud.size(), 0.25, rng);
        FiniteDiffReport rep = finite_diff_check(cs.cloud, cs.camera, plan ? &*plan : nullptr, spec, o.step);
        std::printf("scene %2d (sh degree %d, %s): max rel err %.3e, %zu checked, %zu skipped\n", s, degree,
                    plan ? "with plan" : "no plan", rep.max_rel_err, rep.checked, rep.skipped.size());
        overall = std::max(overall, rep.max_rel_err);
        checked += rep.checked;
        skipped += rep.skipped.size();
    }
    bool pass = overall < o.bound && checked > 0;
    std::printf("overall max rel err %.3e over %zu parameters (%zu skipped at branch boundaries): %s\n", overall,
                checked, skipped, pass ? "PASS" : "FAIL");
    return pass ? 0 : 1;
}

struct RenderOpts {
    std::string scene_path;
    std::string cloud_path;
    int view = 0;
    std::string out_path;
    double background = 0.0;
    int threads = 0;
};

inline int cmd_render(const RenderOpts& o) {
    if (o.threads > 0) set_worker_count(o.threads);
    SceneBundle bundle = load_scene(o.scene_path);
    if (o.view < 0 || static_cast<size_t>(o.view) >= bundle.cameras.size())
        throw std::invalid_argument("render: view index out of range (scene has " +
                                    std::to_string(bundle.cameras.size()) + " views)");
    GaussianCloud cloud = load_cloud(o.cloud_path);
    RenderSettings settings;
    settings.background = Vec3::Constant(o.background);
    save_png(o.out_path, render(cloud, bundle.cameras[o.view], nullptr, settings).image);
    std::printf("wrote %s\n", o.out_path.c_str());
    return 0;
}

struct EvalOpts {
    std::string scene_path;
    std::string cloud_path;
    std::string split = "test";
    double background = 0.0;
    int threads = 0;
};

inline int cmd_eval(const EvalOpts& o) {
    if (o.threads > 0) set_worker_count(o.threads);
    SceneBundle bundle = load_scene(o.scene_path);
    GaussianCloud cloud = load_cloud(o.cloud_path);
    RenderSettings settings;
    settings.background = Vec3::Constant(o.background);
    EvalResult res = evaluate(cloud, bundle, o.split, settings);
    for (size_t k = 0; k < res.psnr.size(); ++k)
        std::printf("view %zu: psnr=%.6f ssim=%.6f\n", k, res.psnr[k], res.ssim[k]);
    std::printf("mean over %zu %s views: psnr=%.6f ssim=%.6f\n", res.psnr.size(), o.split.c_str(), res.mean_psnr,
                res.mean_ssim);
    return 0;
}

struct HistogramOpts {
    std::string scene_path;
    std::string cloud_path;
    double threshold = 5e-4;
    int bins = 8;
    int camera = 0;  // index into the train split for the depth reference
    std::string out_path;
    double background = 0.0;
    int threads = 0;
};

inline int cmd_histogram(const HistogramOpts& o) {
    if (o.threads > 0) set_worker_count(o.threads);
    SceneBundle bundle = load_scene(o.scene_path);
    GaussianCloud cloud = load_cloud(o.cloud_path);
    RenderSettings settings;
    settings.background = Vec3::Constant(o.background);
    std::vector<size_t> train_ids = bundle.split_indices("train");
    if (o.camera < 0 || static_cast<size_t>(o.camera) >= train_ids.size())
        throw std::invalid_argument("histogram: train camera index out of range");
    GradientSet stats = mean_screen_gradient_stats(cloud, bundle, 0.2, settings);
    Histogram hist = gradient_distance_histogram(stats, cloud, bundle.cameras[train_ids[o.camera]], o.threshold,
                                                 o.bins);
    std::string csv = histogram_to_csv(hist);
    if (!o.out_path.empty()) write_text_file(o.out_path, csv);
    std::fputs(csv.c_str(), stdout);
    return 0;
}

inline void add_scene_options(CLI::App* cmd, SceneArgs& scene, bool allow_load) {
    if (allow_load) cmd->add_option("--scene", scene.scene_path, "scene manifest to load");
    cmd->add_flag("--synthetic", scene.synthetic, "generate the synthetic two-cluster scene");
    cmd->add_option("--train-views", scene.train_views, "synthetic train view count");
    cmd->add_option("--test-views", scene.test_views, "synthetic test view count");
    cmd->add_option("--width", scene.width, "synthetic image width");
    cmd->add_option("--height", scene.height, "synthetic image height");
    cmd->add_option("--scene-seed", scene.scene_seed, "synthetic scene seed (default: training seed)");
}

inline int run_cli(int argc, const char* const* argv) {
    CLI::App app{"differentiable Gaussian splatting trainer with drop regularization"};
    app.require_subcommand(1);
    app.set_config("--config", "", "config file (TOML, one [subcommand] section per command)");
    int rc = 0;

    TrainOpts to;
    CLI::App* t = app.add_subcommand("train", "optimize a Gaussian cloud on a scene");
    add_scene_options(t, to.scene, true);
    t->add_option("--out", to.out_dir, "run output directory")->required();
    t->add_option("--iters", to.cfg.t_total, "training iterations");
    t->add_option("--seed", to.cfg.seed, "root RNG seed");
    t->add_option("--reg", to.reg_kind, "regularizer")->check(CLI::IsMember({"none", "dropgaussian", "selective", "l1"}));
    t->add_option("--gamma", to.cfg.reg.gamma, "drop rate scale factor");
    t->add_option("--mode", to.mode, "drop schedule")->check(CLI::IsMember({"progressive", "fixed"}));
    t->add_option("--criterion", to.criterion, "selective/l1 importance metric")
        ->check(CLI::IsMember({"gradient", "distance"}));
    t->add_option("--lambda-reg", to.cfg.reg.lambda_reg, "l1 opacity penalty strength");
    t->add_option("--lambda", to.cfg.lambda_dssim, "structural term weight in the color loss");
    t->add_option("--eval-interval", to.cfg.eval_interval, "iterations between metric evaluations");
    t->add_option("--densify-interval", to.cfg.densify_interval, "iterations between densification events");
    t->add_option("--densify-until", to.cfg.densify_until, "last densification iteration (default: half the run)");
    t->add_option("--densify-threshold", to.cfg.densify_grad_threshold, "mean screen gradient that triggers growth");
    t->add_option("--min-opacity", to.cfg.min_opacity, "prune opacity floor");
    t->add_option("--sh-degree", to.cfg.sh_degree, "spherical harmonics degree")->check(CLI::Range(0, 2));
    t->add_option("--init", to.init, "cloud initialization")->check(CLI::IsMember({"points", "random"}));
    t->add_option("--random-count", to.cfg.random_count, "cloud size for random init");
    t->add_option("--background", to.background, "background gray level");
    t->add_option("--threads", to.threads, "worker thread count");
    t->callback([&] { rc = cmd_train(to); });

    AblateOpts ao;
    CLI::App* a = app.add_subcommand("ablate", "run the regularizer comparison grids");
    add_scene_options(a, ao.scene, false);
    a->add_option("--out", ao.out_dir, "sweep output directory")->required();
    a->add_option("--seeds", ao.seeds, "number of seeds per variant");
    a->add_option("--iters", ao.iters, "training iterations per run");
    a->add_option("--eval-interval", ao.eval_interval, "iterations between metric evaluations");
    a->add_option("--threads", ao.threads, "worker thread count");
    a->callback([&] { rc = cmd_ablate(ao); });

    GradCheckOpts go;
    CLI::App* g = app.add_subcommand("grad-check", "compare analytic gradients against finite differences");
    g->add_option("--scenes", go.scenes, "number of random scenes");
    g->add_option("--gaussians", go.gaussians, "Gaussians per scene");
    g->add_option("--width", go.width, "image width");
    g->add_option("--height", go.height, "image height");
    g->add_option("--seed", go.seed, "root RNG seed");
    g->add_option("--step", go.step, "finite difference step");
    g->add_option("--bound", go.bound, "pass threshold on relative error");
    g->add_option("--threads", go.threads, "worker thread count");
    g->callback([&] { rc = cmd_grad_check(go); });

    RenderOpts ro;
    CLI::App* r = app.add_subcommand("render", "render one scene view from a cloud file");
    r->add_option("--scene", ro.scene_path, "scene manifest")->required();
    r->add_option("--cloud", ro.cloud_path, "cloud parameter file")->required();
    r->add_option("--view", ro.view, "camera index in the manifest");
    r->add_option("--out", ro.out_path, "output PNG path")->required();
    r->add_option("--background", ro.background, "background gray level");
    r->add_option("--threads", ro.threads, "worker thread count");
    r->callback([&] { rc = cmd_render(ro); });

    EvalOpts eo;
    CLI::App* e = app.add_subcommand("eval", "report PSNR/SSIM of a cloud on a scene split");
    e->add_option("--scene", eo.scene_path, "scene manifest")->required();
    e->add_option("--cloud", eo.cloud_path, "cloud parameter file")->required();
    e->add_option("--split", eo.split, "camera split to evaluate");
    e->add_option("--background", eo.background, "background gray level");
    e->add_option("--threads", eo.threads, "worker thread count");
    e->callback([&] { rc = cmd_eval(eo); });

    HistogramOpts ho;
    CLI::App* h = app.add_subcommand("histogram", "export the gradient-versus-distance histogram");
    h->add_option("--scene", ho.scene_path, "scene manifest")->required();
    h->add_option("--cloud", ho.cloud_path, "cloud parameter file")->required();
    h->add_option("--threshold", ho.threshold, "screen gradient magnitude cutoff");
    h->add_option("--bins", ho.bins, "number of depth bins");
    h->add_option("--camera", ho.camera, "train view index for the depth reference");
    h->add_option("--out", ho.out_path, "also write the CSV here");
    h->add_option("--background", ho.background, "background gray level");
    h->add_option("--threads", ho.threads, "worker thread count");
    h->callback([&] { rc = cmd_histogram(ho); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        return app.exit(err);
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    }
    return rc;
}

}  // namespace dropsplat::cli
