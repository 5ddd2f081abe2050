#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dropsplat/autograd.hpp"
#include "dropsplat/geometry.hpp"
#include "dropsplat/rng.hpp"

namespace dropsplat {

struct LearningRates {
    double center = 1.6e-4;  // decayed exponentially by the trainer
    double opacity = 0.05;
    double scale = 5e-3;
    double rotation = 1e-3;
    double sh = 2.5e-3;
};

// Bias-corrected Adam over all Gaussian parameters. Moment storage reuses the
// gradient layout (the mean2d rows stay unused); rows are index-aligned with
// the cloud and follow it through densification.
struct AdamState {
    LearningRates lr;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long long step_count = 0;
    GradientSet m, v;

    void init(size_t n) {
        m.assign_zero(n);
        v.assign_zero(n);
        step_count = 0;
    }
};

// Center learning rate decayed exponentially from lr_init to lr_final across
// the run.
inline double decayed_center_lr(int t, int t_total, double lr_init = 1.6e-4, double lr_final = 1.6e-6) {
    double frac = static_cast<double>(t) / static_cast<double>(t_total);
    return lr_init * std::exp(std::log(lr_final / lr_init) * frac);
}

namespace detail {

inline void adam_update(double g, double& m, double& v, double& param, double lr, const AdamState& st, double bc1,
                        double bc2, size_t i, const char* cls) {
    if (!std::isfinite(g))
        throw std::runtime_error("adam_step: non-finite gradient for gaussian " + std::to_string(i) + " (" + cls +
                                 ")");
    m = st.beta1 * m + (1.0 - st.beta1) * g;
    v = st.beta2 * v + (1.0 - st.beta2) * g * g;
    param -= lr * (m / bc1) / (std::sqrt(v / bc2) + st.eps);
}

}  // namespace detail

inline void adam_step(GaussianCloud& cloud, const GradientSet& grads, AdamState& state) {
    size_t n = cloud.size();
    if (grads.size() != n || state.m.size() != n)
        throw std::invalid_argument("adam_step: cloud, gradient, and moment sizes do not match");
    state.step_count++;
    double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
    double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
    int nb = cloud.basis_count();
    for (size_t i = 0; i < n; ++i) {
        Gaussian& g = cloud.gaussians[i];
        for (int k = 0; k < 3; ++k) {
            detail::adam_update(grads.center[i][k], state.m.center[i][k], state.v.center[i][k], g.center[k],
                                state.lr.center, state, bc1, bc2, i, "center");
            detail::adam_update(grads.log_scale[i][k], state.m.log_scale[i][k], state.v.log_scale[i][k],
                                g.log_scale[k], state.lr.scale, state, bc1, bc2, i, "log_scale");
        }
        Vec4 rotation_before = g.rotation;
        for (int k = 0; k < 4; ++k)
            detail::adam_update(grads.rotation[i][k], state.m.rotation[i][k], state.v.rotation[i][k], g.rotation[k],
                                state.lr.rotation, state, bc1, bc2, i, "rotation");
        detail::adam_update(grads.opacity_logit[i], state.m.opacity_logit[i], state.v.opacity_logit[i],
                            g.opacity_logit, state.lr.opacity, state, bc1, bc2, i, "opacity");
        for (int b = 0; b < nb; ++b)
            for (int ch = 0; ch < 3; ++ch)
                detail::adam_update(grads.sh[i](ch, b), state.m.sh[i](ch, b), state.v.sh[i](ch, b), g.sh(ch, b),
                                    state.lr.sh, state, bc1, bc2, i, "sh");
        // renormalization belongs to the update itself: a step that left the
        // quaternion untouched (zero gradient, zero lr) must be an exact
        // identity on it
        if ((g.rotation.array() != rotation_before.array()).any()) {
            double qn = g.rotation.norm();
            g.rotation = qn > 1e-12 ? Vec4(g.rotation / qn) : Vec4(1, 0, 0, 0);
        }
    }
}

// Running densification statistics: per-Gaussian accumulated screen-space
// positional gradient norm, observation count, and the accumulated 3D center
// gradient that orients clone offsets. Reset after every densification event.
struct DensifyStats {
    std::vector<double> grad_norm_sum;
    std::vector<uint32_t> count;
    std::vector<Vec3> center_grad_sum;

    void assign_zero(size_t n) {
        grad_norm_sum.assign(n, 0.0);
        count.assign(n, 0);
        center_grad_sum.assign(n, Vec3::Zero());
    }
    size_t size() const { return grad_norm_sum.size(); }
    double mean_statistic(size_t i) const {
        return count[i] ? grad_norm_sum[i] / static_cast<double>(count[i]) : 0.0;
    }
};

inline void accumulate_densify_stats(DensifyStats& stats, const GradientSet& grads,
                                     const std::vector<uint8_t>& visible) {
    if (stats.size() != grads.size() || visible.size() != grads.size())
        throw std::invalid_argument("accumulate_densify_stats: sizes do not match");
    for (size_t i = 0; i < grads.size(); ++i) {
        if (!visible[i]) continue;
        stats.grad_norm_sum[i] += grads.mean2d[i].norm();
        stats.center_grad_sum[i] += grads.center[i];
        stats.count[i]++;
    }
}

struct DensifyReport {
    size_t cloned = 0;
    size_t split = 0;
    size_t pruned = 0;
};

constexpr double kCloneGradStep = 0.01;   // clone offset per unit of accumulated center gradient
constexpr double kSplitScaleDiv = 1.6;    // children shrink by this factor

// One densification event. Decisions are made on the original rows: low
// opacity prunes; otherwise a mean screen gradient above the threshold clones
// small Gaussians (offset along the descent direction) or splits large ones
// into two children sampled from the parent's own distribution. Adam moments
// follow surviving rows and are zero for new rows; stats reset to zero.
inline DensifyReport densify_and_prune(GaussianCloud& cloud, DensifyStats& stats, AdamState& state, Rng& rng,
                                       double threshold, double scale_split_threshold, double min_opacity) {
    size_t n = cloud.size();
    if (stats.size() != n || state.m.size() != n)
        throw std::invalid_argument("densify_and_prune: stats or moment sizes do not match cloud");

    enum class Fate { keep, prune, clone, split };
    std::vector<Fate> fate(n, Fate::keep);
    DensifyReport report;
    for (size_t i = 0; i < n; ++i) {
        const Gaussian& g = cloud.gaussians[i];
        if (logistic(g.opacity_logit) < min_opacity) {
            fate[i] = Fate::prune;
            report.pruned++;
            continue;
        }
        if (stats.mean_statistic(i) > threshold) {
            double max_scale = g.log_scale.array().exp().maxCoeff();
            fate[i] = max_scale < scale_split_threshold ? Fate::clone : Fate::split;
            (fate[i] == Fate::clone ? report.cloned : report.split)++;
        }
    }

    std::vector<Gaussian> out;
    GradientSet new_m, new_v;
    out.reserve(n + report.cloned + 2 * report.split);
    new_m.assign_zero(0);
    new_v.assign_zero(0);
    auto push_with_moments = [&](const Gaussian& g, size_t from, bool carry) {
        out.push_back(g);
        auto push_rows = [&](GradientSet& dst, const GradientSet& src) {
            if (carry) {
                dst.center.push_back(src.center[from]);
                dst.log_scale.push_back(src.log_scale[from]);
                dst.rotation.push_back(src.rotation[from]);
                dst.opacity_logit.push_back(src.opacity_logit[from]);
                dst.sh.push_back(src.sh[from]);
                dst.mean2d.push_back(Vec2::Zero());
            } else {
                dst.center.push_back(Vec3::Zero());
                dst.log_scale.push_back(Vec3::Zero());
                dst.rotation.push_back(Vec4::Zero());
                dst.opacity_logit.push_back(0.0);
                dst.sh.push_back(Eigen::Matrix<double, 3, kMaxShBasis>::Zero());
                dst.mean2d.push_back(Vec2::Zero());
            }
        };
        push_rows(new_m, state.m);
        push_rows(new_v, state.v);
    };

    // surviving originals keep their order and their moments
    for (size_t i = 0; i < n; ++i)
        if (fate[i] == Fate::keep || fate[i] == Fate::clone) push_with_moments(cloud.gaussians[i], i, true);
    for (size_t i = 0; i < n; ++i) {
        if (fate[i] != Fate::clone) continue;
        Gaussian copy = cloud.gaussians[i];
        if (stats.count[i] > 0)
            copy.center -= kCloneGradStep * (stats.center_grad_sum[i] / static_cast<double>(stats.count[i]));
        push_with_moments(copy, i, false);
    }
    for (size_t i = 0; i < n; ++i) {
        if (fate[i] != Fate::split) continue;
        const Gaussian& parent = cloud.gaussians[i];
        Mat3 r = quat_to_rotation(parent.rotation);
        Vec3 s = parent.log_scale.array().exp();
        for (int c = 0; c < 2; ++c) {
            Gaussian child = parent;
            Vec3 z(rng.normal(), rng.normal(), rng.normal());
            child.center = parent.center + r * (s.cwiseProduct(z));
            child.log_scale = parent.log_scale.array() - std::log(kSplitScaleDiv);
            push_with_moments(child, i, false);
        }
    }

    cloud.gaussians = std::move(out);
    state.m = std::move(new_m);
    state.v = std::move(new_v);
    stats.assign_zero(cloud.size());
    return report;
}

}  // namespace dropsplat
