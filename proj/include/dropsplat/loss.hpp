#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "dropsplat/common.hpp"

namespace dropsplat {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;

inline void check_same_shape(const Image& a, const Image& b, const char* who) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(who) + ": image shapes differ (" + std::to_string(a.width) + "x" +
                                    std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                                    std::to_string(b.height) + ")");
}

// Peak signal-to-noise ratio in dB, capped at 100 (the cap is exact when the
// images are identical).
inline double psnr(const Image& a, const Image& b, double peak = 1.0) {
    check_same_shape(a, b, "psnr");
    double se = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = a.data[i] - b.data[i];
        se += d * d;
    }
    double mse = se / static_cast<double>(a.data.size());
    if (mse == 0.0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(peak * peak / mse));
}

namespace detail {

inline const std::vector<double>& ssim_window_1d() {
    static const std::vector<double> w = [] {
        std::vector<double> v(kSsimWindow);
        double sum = 0.0;
        for (int i = 0; i < kSsimWindow; ++i) {
            double d = i - (kSsimWindow - 1) / 2.0;
            v[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
            sum += v[i];
        }
        for (double& x : v) x /= sum;
        return v;
    }();
    return w;
}

// Valid-placement separable window average: (h, w) -> (h - 10, w - 10).
inline std::vector<double> window_mean_valid(const std::vector<double>& in, int h, int w) {
    const auto& k = ssim_window_1d();
    int wv = w - kSsimWindow + 1, hv = h - kSsimWindow + 1;
    std::vector<double> rows(static_cast<size_t>(h) * wv);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < wv; ++x) {
            double s = 0.0;
            for (int t = 0; t < kSsimWindow; ++t) s += k[t] * in[static_cast<size_t>(y) * w + x + t];
            rows[static_cast<size_t>(y) * wv + x] = s;
        }
    std::vector<double> out(static_cast<size_t>(hv) * wv);
    for (int y = 0; y < hv; ++y)
        for (int x = 0; x < wv; ++x) {
            double s = 0.0;
            for (int t = 0; t < kSsimWindow; ++t) s += k[t] * rows[static_cast<size_t>(y + t) * wv + x];
            out[static_cast<size_t>(y) * wv + x] = s;
        }
    return out;
}

// Adjoint of window_mean_valid: scatters per-window values back over the
// pixels each window covers, weighted by the window. (hv, wv) -> (h, w).
inline std::vector<double> window_scatter_full(const std::vector<double>& in, int hv, int wv) {
    const auto& k = ssim_window_1d();
    int h = hv + kSsimWindow - 1, w = wv + kSsimWindow - 1;
    std::vector<double> rows(static_cast<size_t>(hv) * w, 0.0);
    for (int y = 0; y < hv; ++y)
        for (int x = 0; x < wv; ++x) {
            double v = in[static_cast<size_t>(y) * wv + x];
            for (int t = 0; t < kSsimWindow; ++t) rows[static_cast<size_t>(y) * w + x + t] += k[t] * v;
        }
    std::vector<double> out(static_cast<size_t>(h) * w, 0.0);
    for (int y = 0; y < hv; ++y)
        for (int x = 0; x < w; ++x) {
            double v = rows[static_cast<size_t>(y) * w + x];
            for (int t = 0; t < kSsimWindow; ++t) out[static_cast<size_t>(y + t) * w + x] += k[t] * v;
        }
    return out;
}

struct SsimResult {
    double value = 0.0;
    Image grad_a;  // d ssim / d a, filled only when requested
};

inline SsimResult ssim_impl(const Image& a, const Image& b, double peak, bool with_grad) {
    check_same_shape(a, b, "ssim");
    const int h = a.height, w = a.width;
    if (h < kSsimWindow || w < kSsimWindow)
        throw std::invalid_argument("ssim: image smaller than the " + std::to_string(kSsimWindow) + "x" +
                                    std::to_string(kSsimWindow) + " window");
    const int hv = h - kSsimWindow + 1, wv = w - kSsimWindow + 1;
    const size_t n_px = static_cast<size_t>(h) * w, n_win = static_cast<size_t>(hv) * wv;
    const double c1 = (0.01 * peak) * (0.01 * peak), c2 = (0.03 * peak) * (0.03 * peak);
    const double norm = 1.0 / (3.0 * static_cast<double>(n_win));

    SsimResult res;
    if (with_grad) res.grad_a = Image(w, h);
    std::vector<double> ca(n_px), cb(n_px), caa(n_px), cbb(n_px), cab(n_px);
    for (int ch = 0; ch < 3; ++ch) {
        for (size_t i = 0; i < n_px; ++i) {
            ca[i] = a.data[i * 3 + ch];
            cb[i] = b.data[i * 3 + ch];
            caa[i] = ca[i] * ca[i];
            cbb[i] = cb[i] * cb[i];
            cab[i] = ca[i] * cb[i];
        }
        auto mu_a = window_mean_valid(ca, h, w);
        auto mu_b = window_mean_valid(cb, h, w);
        auto e_aa = window_mean_valid(caa, h, w);
        auto e_bb = window_mean_valid(cbb, h, w);
        auto e_ab = window_mean_valid(cab, h, w);

        std::vector<double> p_mu, p_a, p_b;
        if (with_grad) {
            p_mu.assign(n_win, 0.0);
            p_a.assign(n_win, 0.0);
            p_b.assign(n_win, 0.0);
        }
        for (size_t i = 0; i < n_win; ++i) {
            double va = e_aa[i] - mu_a[i] * mu_a[i];
            double vb = e_bb[i] - mu_b[i] * mu_b[i];
            double cov = e_ab[i] - mu_a[i] * mu_b[i];
            double a1 = 2.0 * mu_a[i] * mu_b[i] + c1;
            double a2 = 2.0 * cov + c2;
            double b1 = mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1;
            double b2 = va + vb + c2;
            res.value += (a1 * a2) / (b1 * b2);
            if (!with_grad) continue;
            // grouped so that at a == b the pieces cancel bitwise: d_mu's two
            // products become identical, and 2 d_va + d_cov is exactly zero
            // because a2 / b2 is exactly one. Identical images then get an
            // exactly zero gradient, which optimizer fixed-point tests rely on.
            double d_mu = 2.0 * (mu_b[i] * (a2 * b1) - mu_a[i] * (a1 * a2)) / (b1 * b1 * b2);
            double d_cov = 2.0 * a1 / (b1 * b2);
            double d_va = -0.5 * d_cov * (a2 / b2);
            // per-pixel contribution is window * (p_mu + a_k * p_a + b_k * p_b)
            p_mu[i] = d_mu - 2.0 * d_va * mu_a[i] - d_cov * mu_b[i];
            p_a[i] = 2.0 * d_va;
            p_b[i] = d_cov;
        }
        if (with_grad) {
            auto g_mu = window_scatter_full(p_mu, hv, wv);
            auto g_a = window_scatter_full(p_a, hv, wv);
            auto g_b = window_scatter_full(p_b, hv, wv);
            for (size_t i = 0; i < n_px; ++i)
                res.grad_a.data[i * 3 + ch] = norm * (g_mu[i] + ca[i] * g_a[i] + cb[i] * g_b[i]);
        }
    }
    res.value *= norm;
    return res;
}

}  // namespace detail

// Mean local SSIM over all fully-interior window placements, averaged across
// channels. peak sets the dynamic range constants.
inline double ssim(const Image& a, const Image& b, double peak = 1.0) {
    return detail::ssim_impl(a, b, peak, false).value;
}

struct LossValue {
    double total = 0.0;
    double l1 = 0.0;
    double d_ssim = 0.0;
    Image d_rendered;  // gradient of total with respect to the rendered image
};

// L1 + lambda * D-SSIM against the target, with the analytic gradient with
// respect to the rendered image. The L1 subgradient at exactly zero is zero.
inline LossValue color_loss(const Image& rendered, const Image& target, double lambda = 0.2) {
    check_same_shape(rendered, target, "color_loss");
    LossValue out;
    out.d_rendered = Image(rendered.width, rendered.height);
    double inv_n = 1.0 / static_cast<double>(rendered.data.size());
    for (size_t i = 0; i < rendered.data.size(); ++i) {
        double d = rendered.data[i] - target.data[i];
        out.l1 += std::abs(d) * inv_n;
        out.d_rendered.data[i] = d > 0.0 ? inv_n : (d < 0.0 ? -inv_n : 0.0);
    }
    detail::SsimResult s = detail::ssim_impl(rendered, target, 1.0, true);
    out.d_ssim = (1.0 - s.value) / 2.0;
    for (size_t i = 0; i < rendered.data.size(); ++i)
        out.d_rendered.data[i] += lambda * (-0.5) * s.grad_a.data[i];
    out.total = out.l1 + lambda * out.d_ssim;
    return out;
}

}  // namespace dropsplat
