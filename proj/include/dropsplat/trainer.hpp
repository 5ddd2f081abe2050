#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dropsplat/adam.hpp"
#include "dropsplat/autograd.hpp"
#include "dropsplat/drop.hpp"
#include "dropsplat/loss.hpp"
#include "dropsplat/scene.hpp"

namespace dropsplat {

enum class RegularizerKind { none, dropgaussian, selective, l1 };

struct RegularizerConfig {
    RegularizerKind kind = RegularizerKind::none;
    double gamma = 0.2;                                  // peak drop rate for the two dropping kinds
    DropMode mode = DropMode::progressive;
    DropCriterion criterion = DropCriterion::gradient;   // selective dropping and l1 weighting
    double lambda_reg = 1e-3;                            // l1 penalty strength
};

struct TrainConfig {
    int t_total = 10000;
    int densify_interval = 100;
    int densify_until = -1;                 // negative means half the run
    double densify_grad_threshold = 5e-4;
    double scale_split_fraction = 0.01;     // of scene extent; larger Gaussians split, smaller clone
    double min_opacity = 0.005;
    double lambda_dssim = 0.2;
    int eval_interval = 200;
    int sh_degree = 2;
    uint64_t seed = 0;
    RegularizerConfig reg;
    Vec3 background = Vec3::Zero();
    InitStrategy init = InitStrategy::from_points;
    int random_count = 200;                 // cloud size for random init
    LearningRates lr;

    int densify_limit() const { return densify_until >= 0 ? densify_until : t_total / 2; }
};

// One evaluation snapshot. Loss terms come from the training step at that
// iteration; metrics from full plan-free renders of each split.
struct TrainRecord {
    int iter = 0;
    double train_psnr = 0.0;
    double test_psnr = 0.0;
    double train_ssim = 0.0;
    double test_ssim = 0.0;
    double l1 = 0.0;
    double dssim = 0.0;
    size_t n_gaussians = 0;
    double r_t = 0.0;
};

struct TrainLog {
    std::vector<TrainRecord> records;

    std::string to_csv() const {
        std::string s = "iter,train_psnr,test_psnr,train_ssim,test_ssim,l1,dssim,n_gaussians,r_t\n";
        char buf[256];
        for (const TrainRecord& r : records) {
            std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%zu,%.10g\n", r.iter,
                          r.train_psnr, r.test_psnr, r.train_ssim, r.test_ssim, r.l1, r.dssim, r.n_gaussians, r.r_t);
            s += buf;
        }
        return s;
    }
};

struct EvalResult {
    std::vector<double> psnr;
    std::vector<double> ssim;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
};

// Renders every view of the split with all Gaussians (no drop plan) and
// averages the metrics. Read-only and draw-free.
inline EvalResult evaluate(const GaussianCloud& cloud, const SceneBundle& bundle, const std::string& split,
                           const RenderSettings& settings = {}) {
    if (bundle.cameras.size() != bundle.images.size())
        throw std::invalid_argument("evaluate: cameras and images are not aligned");
    std::vector<size_t> ids = bundle.split_indices(split);
    if (ids.empty()) throw std::invalid_argument("evaluate: no views in split '" + split + "'");
    EvalResult res;
    for (size_t id : ids) {
        Image rendered = render(cloud, bundle.cameras[id], nullptr, settings).image;
        res.psnr.push_back(psnr(rendered, bundle.images[id]));
        res.ssim.push_back(ssim(rendered, bundle.images[id]));
        res.mean_psnr += res.psnr.back();
        res.mean_ssim += res.ssim.back();
    }
    res.mean_psnr /= static_cast<double>(ids.size());
    res.mean_ssim /= static_cast<double>(ids.size());
    return res;
}

struct TrainResult {
    GaussianCloud cloud;
    TrainLog log;
};

// The optimization loop: one train camera per iteration round-robin, a fresh
// drop plan when the current rate is positive, render, loss, backward, Adam,
// densification on its schedule, metrics at eval points. Deterministic per
// seed; a zero drop rate draws nothing, so gamma = 0 reproduces the
// unregularized run bit for bit.
inline TrainResult train(const SceneBundle& bundle, const TrainConfig& cfg, GaussianCloud initial) {
    if (cfg.t_total < 0) throw std::invalid_argument("train: t_total must be non-negative");
    if (bundle.cameras.size() != bundle.images.size())
        throw std::invalid_argument("train: cameras and images are not aligned");
    std::vector<size_t> train_ids = bundle.split_indices("train");
    if (train_ids.empty()) throw std::invalid_argument("train: scene has no train views");
    std::vector<size_t> test_ids = bundle.split_indices("test");

    TrainResult out;
    out.cloud = std::move(initial);
    GaussianCloud& cloud = out.cloud;
    if (cfg.t_total == 0) return out;

    bool drops = cfg.reg.kind == RegularizerKind::dropgaussian || cfg.reg.kind == RegularizerKind::selective;
    DropSchedule sched{cfg.reg.gamma, cfg.t_total, cfg.reg.mode};
    if (drops) sched.validate();

    Rng mask_rng = make_stream(cfg.seed, "mask");
    Rng densify_rng = make_stream(cfg.seed, "densify");
    AdamState state;
    state.lr = cfg.lr;
    state.init(cloud.size());
    DensifyStats stats;
    stats.assign_zero(cloud.size());
    RenderSettings settings;
    settings.background = cfg.background;
    double split_threshold = cfg.scale_split_fraction * bundle.scene_extent;

    // Importance proxy for the selective-drop and l1 ablations: accumulated
    // screen gradient, or camera proximity (negated depth sorts the farthest
    // Gaussians lowest).
    auto criterion_metric = [&](const Camera& cam) {
        std::vector<double> m(cloud.size());
        if (cfg.reg.criterion == DropCriterion::gradient) {
            for (size_t i = 0; i < cloud.size(); ++i) m[i] = stats.mean_statistic(i);
        } else {
            for (size_t i = 0; i < cloud.size(); ++i)
                m[i] = -(cam.rotation_w2c * cloud.gaussians[i].center + cam.translation_w2c).z();
        }
        return m;
    };

    for (int t = 1; t <= cfg.t_total; ++t) {
        size_t view = train_ids[(t - 1) % train_ids.size()];
        const Camera& cam = bundle.cameras[view];
        const Image& target = bundle.images[view];

        double r_t = 0.0;
        std::optional<DropPlan> plan;
        if (drops) {
            r_t = drop_rate(sched, t);
            if (r_t > 0.0) {
                plan = cfg.reg.kind == RegularizerKind::dropgaussian
                           ? sample_drop_plan(cloud.size(), r_t, mask_rng)
                           : selective_drop_plan(criterion_metric(cam), r_t);
            }
        }

        RenderOutput ro = render(cloud, cam, plan ? &*plan : nullptr, settings);
        LossValue loss = color_loss(ro.image, target, cfg.lambda_dssim);
        if (!std::isfinite(loss.total))
            throw std::runtime_error("train: non-finite loss at iteration " + std::to_string(t));
        GradientSet grads = backward(ro, cloud, cam, plan ? &*plan : nullptr, loss.d_rendered);
        if (cfg.reg.kind == RegularizerKind::l1) {
            OpacityPenalty pen = l1_opacity_penalty(cloud, rank_weights(criterion_metric(cam)), cfg.reg.lambda_reg);
            for (size_t i = 0; i < cloud.size(); ++i) grads.opacity_logit[i] += pen.d_opacity_logit[i];
        }

        accumulate_densify_stats(stats, grads, ro.visible);
        state.lr.center = decayed_center_lr(t, cfg.t_total, cfg.lr.center, 0.01 * cfg.lr.center);
        adam_step(cloud, grads, state);

        if (cfg.densify_interval > 0 && t % cfg.densify_interval == 0 && t <= cfg.densify_limit())
            densify_and_prune(cloud, stats, state, densify_rng, cfg.densify_grad_threshold, split_threshold,
                              cfg.min_opacity);

        bool at_eval = (cfg.eval_interval > 0 && t % cfg.eval_interval == 0) || t == cfg.t_total;
        if (at_eval) {
            TrainRecord rec;
            rec.iter = t;
            EvalResult tr = evaluate(cloud, bundle, "train", settings);
            rec.train_psnr = tr.mean_psnr;
            rec.train_ssim = tr.mean_ssim;
            if (!test_ids.empty()) {
                EvalResult te = evaluate(cloud, bundle, "test", settings);
                rec.test_psnr = te.mean_psnr;
                rec.test_ssim = te.mean_ssim;
            } else {
                rec.test_psnr = std::numeric_limits<double>::quiet_NaN();
                rec.test_ssim = std::numeric_limits<double>::quiet_NaN();
            }
            rec.l1 = loss.l1;
            rec.dssim = loss.d_ssim;
            rec.n_gaussians = cloud.size();
            rec.r_t = r_t;
            out.log.records.push_back(rec);
        }
    }
    return out;
}

inline TrainResult train(const SceneBundle& bundle, const TrainConfig& cfg) {
    Rng init_rng = make_stream(cfg.seed, "init");
    return train(bundle, cfg, init_cloud(bundle, cfg.init, cfg.sh_degree, init_rng, cfg.random_count));
}

}  // namespace dropsplat
