#pragma once

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "dropsplat/geometry.hpp"
#include "dropsplat/rng.hpp"

namespace dropsplat {

enum class DropMode { fixed, progressive };

// Drop-rate schedule over a training run. Progressive mode ramps linearly
// from 0 at t = 0 to gamma at t = t_total; fixed mode holds gamma throughout.
struct DropSchedule {
    double gamma = 0.0;
    int t_total = 1;
    DropMode mode = DropMode::progressive;

    void validate() const {
        if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("schedule: gamma must be in [0, 1)");
        if (t_total < 1) throw std::invalid_argument("schedule: t_total must be >= 1");
    }
};

inline double drop_rate(const DropSchedule& sched, int t) {
    sched.validate();
    if (t < 0 || t > sched.t_total) throw std::invalid_argument("drop_rate: t outside [0, t_total]");
    if (sched.mode == DropMode::fixed) return sched.gamma;
    return sched.gamma * (static_cast<double>(t) / static_cast<double>(sched.t_total));
}

// One iteration's removal set. Survivors are compensated by 1/(1-rate) so the
// expected contribution of every Gaussian matches the no-drop render; dropped
// Gaussians contribute nothing and receive zero gradient.
struct DropPlan {
    std::vector<uint8_t> dropped;
    double rate = 0.0;
    double compensation = 1.0;

    size_t drop_count() const {
        size_t k = 0;
        for (uint8_t d : dropped) k += d;
        return k;
    }
};

// Number of Gaussians to drop: round-to-nearest-even of rate * n, so a batch
// under half a Gaussian drops none.
inline size_t drop_count_for(size_t n, double rate) {
    if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("drop rate must be in [0, 1)");
    return static_cast<size_t>(std::nearbyint(rate * static_cast<double>(n)));
}

// Uniform exact-count sampling without replacement. Consumes no generator
// draws when the rounded count is zero.
inline DropPlan sample_drop_plan(size_t n, double rate, Rng& rng) {
    size_t k = drop_count_for(n, rate);
    DropPlan plan;
    plan.rate = rate;
    plan.compensation = 1.0 / (1.0 - rate);
    plan.dropped.assign(n, 0);
    for (uint32_t i : rng.sample_without_replacement(static_cast<uint32_t>(n), static_cast<uint32_t>(k)))
        plan.dropped[i] = 1;
    return plan;
}

enum class DropCriterion { gradient, distance };

// Deterministic ablation variant: drops the k Gaussians with the lowest
// metric value, ties broken by index. Callers encode "low importance" as a
// low metric (accumulated gradient magnitude directly, camera distance as
// negated depth so the farthest sort lowest).
inline DropPlan selective_drop_plan(const std::vector<double>& metric, double rate) {
    size_t n = metric.size();
    size_t k = drop_count_for(n, rate);
    DropPlan plan;
    plan.rate = rate;
    plan.compensation = 1.0 / (1.0 - rate);
    plan.dropped.assign(n, 0);
    if (k == 0) return plan;
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (metric[a] != metric[b]) return metric[a] < metric[b];
        return a < b;
    });
    for (size_t i = 0; i < k; ++i) plan.dropped[order[i]] = 1;
    return plan;
}

// Rank-based penalty weights in (0, 1]: the Gaussian with the lowest metric
// gets weight 1, the highest gets 1/n. Ties rank by index.
inline std::vector<double> rank_weights(const std::vector<double>& metric) {
    size_t n = metric.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (metric[a] != metric[b]) return metric[a] < metric[b];
        return a < b;
    });
    std::vector<double> w(n, 0.0);
    for (size_t pos = 0; pos < n; ++pos)
        w[order[pos]] = static_cast<double>(n - pos) / static_cast<double>(n);
    return w;
}

struct OpacityPenalty {
    double value = 0.0;
    std::vector<double> d_opacity_logit;
};

// Weighted L1 penalty on activated opacity, lambda * sum_i w_i * o_i, with
// its gradient chained through the logistic activation.
inline OpacityPenalty l1_opacity_penalty(const GaussianCloud& cloud, const std::vector<double>& weights,
                                         double lambda_reg) {
    if (weights.size() != cloud.size())
        throw std::invalid_argument("l1_opacity_penalty: weights size does not match cloud size");
    OpacityPenalty p;
    p.d_opacity_logit.assign(cloud.size(), 0.0);
    for (size_t i = 0; i < cloud.size(); ++i) {
        double o = logistic(cloud.gaussians[i].opacity_logit);
        p.value += lambda_reg * weights[i] * o;
        p.d_opacity_logit[i] = lambda_reg * weights[i] * o * (1.0 - o);
    }
    return p;
}

}  // namespace dropsplat
