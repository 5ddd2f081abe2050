#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "dropsplat/loss.hpp"
#include "dropsplat/render.hpp"

namespace dropsplat {

// Per-parameter gradients, index-aligned with the cloud. mean2d is the
// accumulated screen-space positional gradient, kept because densification
// thresholds on its norm.
struct GradientSet {
    std::vector<Vec3> center;
    std::vector<Vec3> log_scale;
    std::vector<Vec4> rotation;
    std::vector<double> opacity_logit;
    std::vector<Eigen::Matrix<double, 3, kMaxShBasis>> sh;
    std::vector<Vec2> mean2d;

    void assign_zero(size_t n) {
        center.assign(n, Vec3::Zero());
        log_scale.assign(n, Vec3::Zero());
        rotation.assign(n, Vec4::Zero());
        opacity_logit.assign(n, 0.0);
        sh.assign(n, Eigen::Matrix<double, 3, kMaxShBasis>::Zero());
        mean2d.assign(n, Vec2::Zero());
    }
    size_t size() const { return center.size(); }
};

namespace detail {

// Screen-space gradient pieces accumulated per Gaussian during the pixel
// sweep; the 2x2 covariance gradient is stored by its symmetric entries.
struct ScreenGrad {
    Vec2 mean2d = Vec2::Zero();
    double cov00 = 0, cov01 = 0, cov11 = 0;
    double otilde = 0;
    Vec3 color = Vec3::Zero();

    bool is_zero() const {
        return mean2d.x() == 0 && mean2d.y() == 0 && cov00 == 0 && cov01 == 0 && cov11 == 0 && otilde == 0 &&
               color.x() == 0 && color.y() == 0 && color.z() == 0;
    }
    void add(const ScreenGrad& o) {
        mean2d += o.mean2d;
        cov00 += o.cov00;
        cov01 += o.cov01;
        cov11 += o.cov11;
        otilde += o.otilde;
        color += o.color;
    }
};

// Gradient of the rotation-matrix entries pulled back onto the raw (w,x,y,z)
// quaternion, through the normalization inside quat_to_rotation.
inline Vec4 quat_rotation_backward(const Vec4& q, const Mat3& d_r) {
    double n = q.norm();
    Vec4 u = q / n;
    double w = u[0], x = u[1], y = u[2], z = u[3];
    Vec4 du;
    du[0] = 2.0 * (-d_r(0, 1) * z + d_r(0, 2) * y + d_r(1, 0) * z - d_r(1, 2) * x - d_r(2, 0) * y + d_r(2, 1) * x);
    du[1] = 2.0 * (d_r(0, 1) * y + d_r(0, 2) * z + d_r(1, 0) * y - 2.0 * d_r(1, 1) * x - d_r(1, 2) * w +
                   d_r(2, 0) * z + d_r(2, 1) * w - 2.0 * d_r(2, 2) * x);
    du[2] = 2.0 * (-2.0 * d_r(0, 0) * y + d_r(0, 1) * x + d_r(0, 2) * w + d_r(1, 0) * x + d_r(1, 2) * z -
                   d_r(2, 0) * w + d_r(2, 1) * z - 2.0 * d_r(2, 2) * y);
    du[3] = 2.0 * (-2.0 * d_r(0, 0) * z - d_r(0, 1) * w + d_r(0, 2) * x + d_r(1, 0) * w - 2.0 * d_r(1, 1) * z +
                   d_r(1, 2) * y + d_r(2, 0) * x + d_r(2, 1) * y);
    return (du - u * u.dot(du)) / n;
}

// Chains one Gaussian's screen-space gradients through projection, the
// covariance build, color, and the activations, writing its parameter rows.
inline void chain_gaussian(const GaussianCloud& cloud, const Camera& cam, double compensation, size_t i,
                           const ScreenGrad& sg, GradientSet& grads) {
    const Gaussian& g = cloud.gaussians[i];
    grads.mean2d[i] = sg.mean2d;
    if (sg.is_zero()) return;

    Vec3 t = cam.rotation_w2c * g.center + cam.translation_w2c;
    if (!(t.z() > cam.near_clip)) return;  // culled in the forward pass too

    // opacity through compensation and the logistic
    double o = logistic(g.opacity_logit);
    grads.opacity_logit[i] = sg.otilde * compensation * o * (1.0 - o);

    // color through the non-negativity clamp, then spherical harmonics
    Vec3 cam_pos = cam.position();
    Vec3 to_g = g.center - cam_pos;
    double dist = to_g.norm();
    Vec3 dir = dist > 1e-12 ? Vec3(to_g / dist) : Vec3::UnitZ();
    Vec3 raw = eval_sh_raw(g.sh, cloud.sh_degree, dir);
    Vec3 d_color(raw.x() > 0 ? sg.color.x() : 0.0, raw.y() > 0 ? sg.color.y() : 0.0,
                 raw.z() > 0 ? sg.color.z() : 0.0);
    double basis[kMaxShBasis];
    Vec3 basis_grad[kMaxShBasis];
    sh_basis(cloud.sh_degree, dir, basis);
    sh_basis_gradient(cloud.sh_degree, dir, basis_grad);
    int nb = cloud.basis_count();
    Vec3 d_dir = Vec3::Zero();
    for (int ch = 0; ch < 3; ++ch) {
        if (d_color[ch] == 0.0) continue;
        for (int b = 0; b < nb; ++b) {
            grads.sh[i](ch, b) = d_color[ch] * basis[b];
            d_dir += d_color[ch] * g.sh(ch, b) * basis_grad[b];
        }
    }
    Vec3 d_center = Vec3::Zero();
    if (dist > 1e-12) d_center += (d_dir - dir * dir.dot(d_dir)) / dist;

    // projected covariance: cov2d = A Sigma A^T + dilation, A = J W
    Eigen::Matrix<double, 2, 3> j = projection_jacobian(cam.focal, t);
    Eigen::Matrix<double, 2, 3> a = j * cam.rotation_w2c;
    Mat3 sigma = covariance_3d(g.log_scale, g.rotation);
    Mat2 g2;
    g2 << sg.cov00, sg.cov01, sg.cov01, sg.cov11;
    Mat3 d_sigma = a.transpose() * g2 * a;
    Eigen::Matrix<double, 2, 3> d_a = (g2 + g2.transpose()) * a * sigma;
    Eigen::Matrix<double, 2, 3> d_j = d_a * cam.rotation_w2c.transpose();

    // Jacobian entries depend on the camera-frame point
    double iz = 1.0 / t.z(), iz2 = iz * iz, iz3 = iz2 * iz;
    Vec3 d_t = Vec3::Zero();
    d_t.x() += d_j(0, 2) * (-cam.focal.x() * iz2);
    d_t.y() += d_j(1, 2) * (-cam.focal.y() * iz2);
    d_t.z() += d_j(0, 0) * (-cam.focal.x() * iz2) + d_j(1, 1) * (-cam.focal.y() * iz2) +
               d_j(0, 2) * (2.0 * cam.focal.x() * t.x() * iz3) + d_j(1, 2) * (2.0 * cam.focal.y() * t.y() * iz3);

    // screen mean: its Jacobian with respect to t is exactly j
    d_t += j.transpose() * sg.mean2d;
    d_center += cam.rotation_w2c.transpose() * d_t;
    grads.center[i] = d_center;

    // world covariance: Sigma = M M^T with M = R diag(exp(log_scale))
    Vec3 s = g.log_scale.array().exp();
    Mat3 r = quat_to_rotation(g.rotation);
    Mat3 m = r * s.asDiagonal();
    Mat3 d_m = (d_sigma + d_sigma.transpose()) * m;
    Mat3 d_r = Mat3::Zero();
    for (int k = 0; k < 3; ++k) {
        double d_s = 0.0;
        for (int row = 0; row < 3; ++row) {
            d_s += d_m(row, k) * r(row, k);
            d_r(row, k) = d_m(row, k) * s[k];
        }
        grads.log_scale[i][k] = d_s * s[k];
    }
    grads.rotation[i] = quat_rotation_backward(g.rotation, d_r);
}

}  // namespace detail

// Analytic backward pass. Replays each pixel's logged compositing chain in
// reverse, accumulates screen-space gradients per Gaussian with a fixed-tile
// deterministic reduction, then chains them to parameter space. out must come
// from render on the same (cloud, cam, plan) for the replay to be exact.
inline GradientSet backward(const RenderOutput& out, const GaussianCloud& cloud, const Camera& cam,
                            const DropPlan* plan, const Image& dL_dimage) {
    cam.validate();
    if (plan && plan->dropped.size() != cloud.size())
        throw std::invalid_argument("backward: drop plan size does not match cloud size");
    if (!dL_dimage.same_shape(out.image))
        throw std::invalid_argument("backward: gradient image shape does not match render output");
    const int w = cam.width, h = cam.height;
    if (out.image.width != w || out.image.height != h)
        throw std::invalid_argument("backward: render output resolution does not match camera");

    const size_t n = cloud.size();
    detail::SplatCache cache = detail::prep_splats(cloud, cam, plan, out.settings);
    std::vector<uint32_t> pos_of_orig(n, UINT32_MAX);
    for (uint32_t k = 0; k < cache.sorted.size(); ++k) pos_of_orig[cache.sorted[k].orig] = k;

    const int n_tiles = (h + detail::kTileRows - 1) / detail::kTileRows;
    std::vector<std::vector<detail::ScreenGrad>> tile_acc(n_tiles);
    const Vec3 bg = out.settings.background;
    const double alpha_max = out.settings.alpha_max;

    parallel_for(n_tiles, [&](size_t tile) {
        auto& acc = tile_acc[tile];
        acc.assign(n, detail::ScreenGrad{});
        int y_begin = static_cast<int>(tile) * detail::kTileRows;
        int y_end = std::min(h, y_begin + detail::kTileRows);
        for (int y = y_begin; y < y_end; ++y) {
            for (int x = 0; x < w; ++x) {
                size_t px = static_cast<size_t>(y) * w + x;
                const PixelRange& range = out.ranges[px];
                if (range.count == 0) continue;
                Vec3 d_c(dL_dimage.at(y, x, 0), dL_dimage.at(y, x, 1), dL_dimage.at(y, x, 2));
                if (d_c.x() == 0 && d_c.y() == 0 && d_c.z() == 0) continue;
                // suffix = color composited behind the entry being processed
                Vec3 suffix = out.transmittance[px] * bg;
                for (uint32_t k = range.count; k-- > 0;) {
                    const ContribEntry& e = out.entries[range.begin + k];
                    const detail::PreppedSplat& sp = cache.sorted[pos_of_orig[e.gaussian]];
                    detail::ScreenGrad& sg = acc[e.gaussian];
                    double weight = e.alpha * e.transmittance;
                    sg.color += d_c * weight;
                    Vec3 d_c_d_alpha = sp.color * e.transmittance - suffix / (1.0 - e.alpha);
                    double d_alpha = d_c.dot(d_c_d_alpha);
                    double dx = (x + 0.5) - sp.mean2d.x();
                    double dy = (y + 0.5) - sp.mean2d.y();
                    double gval = std::exp(-0.5 * (sp.conic_a * dx * dx + 2.0 * sp.conic_b * dx * dy +
                                                   sp.conic_c * dy * dy));
                    if (sp.otilde * gval < alpha_max) {  // clamped alphas block this branch
                        sg.otilde += d_alpha * gval;
                        double d_g = d_alpha * sp.otilde;
                        double qx = sp.conic_a * dx + sp.conic_b * dy;
                        double qy = sp.conic_b * dx + sp.conic_c * dy;
                        sg.mean2d += (d_g * gval) * Vec2(qx, qy);
                        double half = 0.5 * d_g * gval;
                        sg.cov00 += half * qx * qx;
                        sg.cov01 += half * qx * qy;
                        sg.cov11 += half * qy * qy;
                    }
                    suffix += sp.color * weight;
                }
            }
        }
    });

    // combine tile partials in tile order, then chain per Gaussian
    std::vector<detail::ScreenGrad> combined(n);
    for (int tile = 0; tile < n_tiles; ++tile)
        for (size_t i = 0; i < n; ++i) combined[i].add(tile_acc[tile][i]);

    GradientSet grads;
    grads.assign_zero(n);
    double comp = plan ? plan->compensation : 1.0;
    parallel_for(n, [&](size_t i) {
        if (plan && plan->dropped[i]) return;  // dropped Gaussians get exact zeros
        detail::chain_gaussian(cloud, cam, comp, i, combined[i], grads);
    });
    return grads;
}

// What the finite-difference checker differentiates through.
struct LossSpec {
    enum class Kind { weighted_sum, color } kind = Kind::weighted_sum;
    Image weights;  // weighted_sum: L = sum(weights * image)
    Image target;   // color: L = color_loss(image, target, lambda).total
    double lambda = 0.2;
};

enum class ParamClass { center = 0, log_scale = 1, rotation = 2, opacity = 3, sh = 4 };
constexpr const char* kParamClassNames[5] = {"center", "log_scale", "rotation", "opacity", "sh"};

struct FiniteDiffEntry {
    size_t gaussian = 0;
    ParamClass param = ParamClass::center;
    int component = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

struct FiniteDiffReport {
    double max_rel_err = 0.0;
    std::array<double, 5> max_by_class{};  // indexed by ParamClass
    FiniteDiffEntry worst;
    std::vector<FiniteDiffEntry> skipped;  // parameters flagged as straddling a branch boundary
    size_t checked = 0;

    std::string summary() const {
        char buf[256];
        std::string s;
        for (int c = 0; c < 5; ++c) {
            std::snprintf(buf, sizeof buf, "%-10s max rel err %.3e\n", kParamClassNames[c], max_by_class[c]);
            s += buf;
        }
        std::snprintf(buf, sizeof buf, "overall %.3e, %zu checked, %zu skipped at branch boundaries\n", max_rel_err,
                      checked, skipped.size());
        s += buf;
        return s;
    }
};

namespace detail {

// Every discrete decision the forward pass makes. Central differences are
// only trusted when both perturbed renders make identical decisions.
struct BranchSignature {
    std::vector<uint8_t> culled;
    std::vector<uint32_t> pixel_counts;
    std::vector<uint32_t> pixel_clamped;
    std::vector<uint8_t> color_clamped;

    bool operator==(const BranchSignature&) const = default;
};

inline BranchSignature branch_signature(const RenderOutput& out, const GaussianCloud& cloud, const Camera& cam) {
    BranchSignature sig;
    size_t n = cloud.size();
    sig.culled.resize(n);
    sig.color_clamped.resize(n);
    for (size_t i = 0; i < n; ++i) {
        Splat2D s = project_gaussian(cloud.gaussians[i], cam);
        sig.culled[i] = s.culled;
        uint8_t bits = 0;
        if (!s.culled) {
            Vec3 raw = eval_sh_raw(cloud.gaussians[i].sh, cloud.sh_degree, s.view_dir);
            for (int ch = 0; ch < 3; ++ch)
                if (!(raw[ch] > 0)) bits |= 1u << ch;
        }
        sig.color_clamped[i] = bits;
    }
    size_t n_px = out.ranges.size();
    sig.pixel_counts.resize(n_px);
    sig.pixel_clamped.resize(n_px);
    for (size_t px = 0; px < n_px; ++px) {
        sig.pixel_counts[px] = out.ranges[px].count;
        uint32_t clamped = 0;
        for (uint32_t k = 0; k < out.ranges[px].count; ++k)
            if (out.entries[out.ranges[px].begin + k].alpha == out.settings.alpha_max) ++clamped;
        sig.pixel_clamped[px] = clamped;
    }
    return sig;
}

inline double loss_value(const Image& image, const LossSpec& spec) {
    if (spec.kind == LossSpec::Kind::weighted_sum) {
        check_same_shape(image, spec.weights, "finite_diff_check");
        double l = 0.0;
        for (size_t i = 0; i < image.data.size(); ++i) l += image.data[i] * spec.weights.data[i];
        return l;
    }
    return color_loss(image, spec.target, spec.lambda).total;
}

inline Image loss_gradient(const Image& image, const LossSpec& spec) {
    if (spec.kind == LossSpec::Kind::weighted_sum) return spec.weights;
    return color_loss(image, spec.target, spec.lambda).d_rendered;
}

inline double* param_slot(Gaussian& g, ParamClass pc, int comp) {
    switch (pc) {
        case ParamClass::center: return &g.center[comp];
        case ParamClass::log_scale: return &g.log_scale[comp];
        case ParamClass::rotation: return &g.rotation[comp];
        case ParamClass::opacity: return &g.opacity_logit;
        case ParamClass::sh: return &g.sh(comp % 3, comp / 3);
    }
    return nullptr;
}

inline double analytic_slot(const GradientSet& grads, size_t i, ParamClass pc, int comp) {
    switch (pc) {
        case ParamClass::center: return grads.center[i][comp];
        case ParamClass::log_scale: return grads.log_scale[i][comp];
        case ParamClass::rotation: return grads.rotation[i][comp];
        case ParamClass::opacity: return grads.opacity_logit[i];
        case ParamClass::sh: return grads.sh[i](comp % 3, comp / 3);
    }
    return 0.0;
}

}  // namespace detail

// Central-difference validation of the full render + loss gradient chain.
// Gradient magnitudes below 1e-7 on both sides are treated as matching;
// parameters whose perturbed forwards differ in any branch decision are
// excluded and reported as skipped.
inline FiniteDiffReport finite_diff_check(const GaussianCloud& cloud, const Camera& cam, const DropPlan* plan,
                                          const LossSpec& spec, double step = 1e-4,
                                          const RenderSettings& settings = RenderSettings{}) {
    if (!(step > 0)) throw std::invalid_argument("finite_diff_check: step must be positive");
    RenderOutput out = render(cloud, cam, plan, settings);
    GradientSet grads = backward(out, cloud, cam, plan, detail::loss_gradient(out.image, spec));

    FiniteDiffReport report;
    GaussianCloud work = cloud;
    int nb = cloud.basis_count();
    const std::array<int, 5> comps = {3, 3, 4, 1, 3 * nb};
    for (size_t i = 0; i < cloud.size(); ++i) {
        for (int pc = 0; pc < 5; ++pc) {
            for (int comp = 0; comp < comps[pc]; ++comp) {
                double* slot = detail::param_slot(work.gaussians[i], static_cast<ParamClass>(pc), comp);
                double saved = *slot;
                *slot = saved + step;
                RenderOutput out_p = render(work, cam, plan, settings);
                double loss_p = detail::loss_value(out_p.image, spec);
                detail::BranchSignature sig_p = detail::branch_signature(out_p, work, cam);
                *slot = saved - step;
                RenderOutput out_m = render(work, cam, plan, settings);
                double loss_m = detail::loss_value(out_m.image, spec);
                detail::BranchSignature sig_m = detail::branch_signature(out_m, work, cam);
                *slot = saved;

                FiniteDiffEntry e;
                e.gaussian = i;
                e.param = static_cast<ParamClass>(pc);
                e.component = comp;
                e.analytic = detail::analytic_slot(grads, i, e.param, comp);
                e.numeric = (loss_p - loss_m) / (2.0 * step);
                if (!(sig_p == sig_m)) {
                    report.skipped.push_back(e);
                    continue;
                }
                double mag = std::max(std::abs(e.analytic), std::abs(e.numeric));
                e.rel_err = mag < 1e-7 ? 0.0 : std::abs(e.analytic - e.numeric) / mag;
                ++report.checked;
                report.max_by_class[pc] = std::max(report.max_by_class[pc], e.rel_err);
                if (e.rel_err > report.max_rel_err) {
                    report.max_rel_err = e.rel_err;
                    report.worst = e;
                }
            }
        }
    }
    return report;
}

struct Histogram {
    std::vector<double> edges;   // bins + 1 ascending values
    std::vector<size_t> counts;  // per bin
};

// Bins Gaussians whose screen-space positional gradient norm exceeds the
// threshold by camera-frame depth, with linear bin edges spanning the counted
// population. The last bin includes its upper edge.
inline Histogram gradient_distance_histogram(const GradientSet& grads, const GaussianCloud& cloud,
                                             const Camera& cam, double threshold, int bins) {
    if (bins < 1) throw std::invalid_argument("gradient_distance_histogram: bins must be >= 1");
    if (grads.size() != cloud.size())
        throw std::invalid_argument("gradient_distance_histogram: gradient set size does not match cloud");
    std::vector<double> depths;
    for (size_t i = 0; i < cloud.size(); ++i) {
        if (grads.mean2d[i].norm() > threshold)
            depths.push_back((cam.rotation_w2c * cloud.gaussians[i].center + cam.translation_w2c).z());
    }
    Histogram h;
    h.counts.assign(bins, 0);
    double lo = 0.0, hi = 1.0;
    if (!depths.empty()) {
        lo = hi = depths[0];
        for (double d : depths) {
            lo = std::min(lo, d);
            hi = std::max(hi, d);
        }
        if (hi <= lo) hi = lo + 1.0;
    }
    h.edges.resize(bins + 1);
    for (int b = 0; b <= bins; ++b) h.edges[b] = lo + (hi - lo) * (static_cast<double>(b) / bins);
    for (double d : depths) {
        int b = static_cast<int>((d - lo) / (hi - lo) * bins);
        h.counts[std::min(bins - 1, std::max(0, b))]++;
    }
    return h;
}

inline std::string histogram_to_csv(const Histogram& h) {
    std::string s = "bin_lo,bin_hi,count\n";
    char buf[128];
    for (size_t b = 0; b < h.counts.size(); ++b) {
        std::snprintf(buf, sizeof buf, "%.10g,%.10g,%zu\n", h.edges[b], h.edges[b + 1], h.counts[b]);
        s += buf;
    }
    return s;
}

}  // namespace dropsplat
