#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>
#include <vector>

#include "dropsplat/drop.hpp"
#include "dropsplat/geometry.hpp"
#include "dropsplat/sh.hpp"

namespace dropsplat {

struct RenderSettings {
    Vec3 background = Vec3::Zero();
    double alpha_max = 0.99;
    double min_transmittance = 1e-4;  // stop blending once T falls below this
    double cutoff_sigma = 3.0;        // gather radius in units of the largest 2D stddev
};

// One blended splat at one pixel: alpha after clamping and the transmittance
// in front of it. Enough to replay the compositing chain exactly.
struct ContribEntry {
    int32_t gaussian;
    double alpha;
    double transmittance;
};

struct PixelRange {
    uint32_t begin = 0;
    uint32_t count = 0;
};

struct RenderOutput {
    Image image;
    std::vector<double> transmittance;  // per pixel, row-major
    std::vector<PixelRange> ranges;     // per pixel slice of entries, front-to-back
    std::vector<ContribEntry> entries;
    std::vector<uint8_t> visible;       // per original Gaussian: rendered onto at least part of the screen
    RenderSettings settings;
};

// Permutation of splat indices by ascending depth, ties by original index.
inline std::vector<uint32_t> depth_sort(const std::vector<Splat2D>& splats) {
    std::vector<uint32_t> order(splats.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
        if (splats[a].depth != splats[b].depth) return splats[a].depth < splats[b].depth;
        return a < b;
    });
    return order;
}

struct PixelComposite {
    Vec3 color = Vec3::Zero();
    double transmittance = 1.0;
};

// Reference front-to-back compositor for a single pixel. Contributions must
// already be depth sorted with alphas in [0, alpha_max].
inline PixelComposite composite_pixel(const std::vector<std::pair<Vec3, double>>& sorted_contributions,
                                      const Vec3& background, const RenderSettings& settings = {}) {
    PixelComposite out;
    for (const auto& [color, alpha] : sorted_contributions) {
        if (!(alpha >= 0.0 && alpha <= settings.alpha_max))
            throw std::invalid_argument("composite_pixel: alpha outside [0, alpha_max]");
        if (out.transmittance < settings.min_transmittance) break;
        out.color += color * (alpha * out.transmittance);
        out.transmittance *= 1.0 - alpha;
    }
    out.color += out.transmittance * background;
    return out;
}

namespace detail {

constexpr int kTileRows = 8;  // fixed tiling; reductions are combined in tile order

// Everything the per-pixel loops need about one surviving, unculled splat.
struct PreppedSplat {
    int32_t orig = 0;
    Vec2 mean2d = Vec2::Zero();
    double conic_a = 0, conic_b = 0, conic_c = 0;  // inverse of cov2d
    double radius2 = 0;
    double otilde = 0;  // activated opacity times drop compensation
    Vec3 color = Vec3::Zero();
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1;  // inclusive pixel bounds, empty if x0 > x1
};

struct SplatCache {
    std::vector<PreppedSplat> sorted;  // depth order
    std::vector<uint8_t> visible;      // per original Gaussian
};

// Projects the plan's survivors, sorts them by depth, and precomputes the
// per-splat quantities shared by the forward and backward passes. Dropped and
// culled Gaussians never enter the list.
inline SplatCache prep_splats(const GaussianCloud& cloud, const Camera& cam, const DropPlan* plan,
                              const RenderSettings& settings) {
    size_t n = cloud.size();
    double comp = plan ? plan->compensation : 1.0;
    std::vector<Splat2D> splats;
    std::vector<int32_t> orig;
    splats.reserve(n);
    orig.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        if (plan && plan->dropped[i]) continue;
        Splat2D s = project_gaussian(cloud.gaussians[i], cam);
        if (s.culled) continue;
        splats.push_back(s);
        orig.push_back(static_cast<int32_t>(i));
    }

    SplatCache cache;
    cache.visible.assign(n, 0);
    std::vector<uint32_t> order = depth_sort(splats);
    cache.sorted.reserve(order.size());
    for (uint32_t k : order) {
        const Splat2D& s = splats[k];
        const Gaussian& g = cloud.gaussians[orig[k]];
        PreppedSplat p;
        p.orig = orig[k];
        p.mean2d = s.mean2d;
        double a = s.cov2d(0, 0), b = s.cov2d(0, 1), c = s.cov2d(1, 1);
        double det = a * c - b * b;
        p.conic_a = c / det;
        p.conic_b = -b / det;
        p.conic_c = a / det;
        double radius = settings.cutoff_sigma * std::sqrt(max_eigenvalue_2x2(s.cov2d));
        p.radius2 = radius * radius;
        p.otilde = logistic(g.opacity_logit) * comp;
        p.color = eval_sh(g.sh, cloud.sh_degree, s.view_dir);
        // pixel centers sit at (x + 0.5, y + 0.5)
        double lox = p.mean2d.x() - radius - 0.5, hix = p.mean2d.x() + radius - 0.5;
        double loy = p.mean2d.y() - radius - 0.5, hiy = p.mean2d.y() + radius - 0.5;
        if (hix >= 0.0 && lox <= cam.width - 1.0 && hiy >= 0.0 && loy <= cam.height - 1.0) {
            p.x0 = static_cast<int>(std::ceil(std::max(0.0, lox)));
            p.x1 = static_cast<int>(std::floor(std::min(cam.width - 1.0, hix)));
            p.y0 = static_cast<int>(std::ceil(std::max(0.0, loy)));
            p.y1 = static_cast<int>(std::floor(std::min(cam.height - 1.0, hiy)));
        }
        if (p.x0 <= p.x1 && p.y0 <= p.y1) cache.visible[p.orig] = 1;
        cache.sorted.push_back(p);
    }
    return cache;
}

// Flat per-pixel candidate lists, depth ordered because splats are inserted
// in sorted order. Membership inside the gather disc is tested at composite
// time; the bounding boxes here are a superset.
struct CandidateLists {
    std::vector<uint32_t> starts;  // n_pixels + 1
    std::vector<uint32_t> items;   // indices into SplatCache::sorted
};

inline CandidateLists build_candidates(const SplatCache& cache, int width, int height) {
    size_t n_px = static_cast<size_t>(width) * height;
    CandidateLists lists;
    lists.starts.assign(n_px + 1, 0);
    for (const PreppedSplat& p : cache.sorted)
        for (int y = p.y0; y <= p.y1; ++y)
            for (int x = p.x0; x <= p.x1; ++x) lists.starts[static_cast<size_t>(y) * width + x + 1]++;
    for (size_t i = 1; i <= n_px; ++i) lists.starts[i] += lists.starts[i - 1];
    lists.items.resize(lists.starts[n_px]);
    std::vector<uint32_t> cursor(lists.starts.begin(), lists.starts.end() - 1);
    for (uint32_t k = 0; k < cache.sorted.size(); ++k) {
        const PreppedSplat& p = cache.sorted[k];
        for (int y = p.y0; y <= p.y1; ++y)
            for (int x = p.x0; x <= p.x1; ++x) lists.items[cursor[static_cast<size_t>(y) * width + x]++] = k;
    }
    return lists;
}

}  // namespace detail

// Renders the cloud through an optional drop plan. Survivor opacities carry
// the plan's 1/(1-r) compensation; a null plan renders everything unscaled.
inline RenderOutput render(const GaussianCloud& cloud, const Camera& cam, const DropPlan* plan = nullptr,
                           const RenderSettings& settings = RenderSettings{}) {
    cam.validate();
    if (plan && plan->dropped.size() != cloud.size())
        throw std::invalid_argument("render: drop plan size does not match cloud size");

    const int w = cam.width, h = cam.height;
    const size_t n_px = static_cast<size_t>(w) * h;
    detail::SplatCache cache = detail::prep_splats(cloud, cam, plan, settings);
    detail::CandidateLists cand = detail::build_candidates(cache, w, h);

    RenderOutput out;
    out.settings = settings;
    out.image = Image(w, h);
    out.transmittance.assign(n_px, 1.0);
    out.ranges.assign(n_px, PixelRange{});
    out.visible = cache.visible;

    int n_tiles = (h + detail::kTileRows - 1) / detail::kTileRows;
    std::vector<std::vector<ContribEntry>> tile_entries(n_tiles);
    parallel_for(n_tiles, [&](size_t tile) {
        int y_begin = static_cast<int>(tile) * detail::kTileRows;
        int y_end = std::min(h, y_begin + detail::kTileRows);
        auto& entries = tile_entries[tile];
        for (int y = y_begin; y < y_end; ++y) {
            for (int x = 0; x < w; ++x) {
                size_t px = static_cast<size_t>(y) * w + x;
                out.ranges[px].begin = static_cast<uint32_t>(entries.size());  // tile-local for now
                Vec3 c = Vec3::Zero();
                double t = 1.0;
                for (uint32_t i = cand.starts[px]; i < cand.starts[px + 1]; ++i) {
                    if (t < settings.min_transmittance) break;
                    const detail::PreppedSplat& sp = cache.sorted[cand.items[i]];
                    double dx = (x + 0.5) - sp.mean2d.x();
                    double dy = (y + 0.5) - sp.mean2d.y();
                    if (dx * dx + dy * dy > sp.radius2) continue;
                    double g = std::exp(-0.5 * (sp.conic_a * dx * dx + 2.0 * sp.conic_b * dx * dy +
                                                sp.conic_c * dy * dy));
                    double alpha = std::min(settings.alpha_max, sp.otilde * g);
                    entries.push_back({sp.orig, alpha, t});
                    out.ranges[px].count++;
                    c += sp.color * (alpha * t);
                    t *= 1.0 - alpha;
                }
                for (int ch = 0; ch < 3; ++ch) out.image.at(y, x, ch) = c[ch] + t * settings.background[ch];
                out.transmittance[px] = t;
            }
        }
    });

    // stitch tile-local logs into one flat array, tiles in order
    size_t total = 0;
    std::vector<size_t> tile_offset(n_tiles);
    for (int tile = 0; tile < n_tiles; ++tile) {
        tile_offset[tile] = total;
        total += tile_entries[tile].size();
    }
    out.entries.reserve(total);
    for (int tile = 0; tile < n_tiles; ++tile)
        out.entries.insert(out.entries.end(), tile_entries[tile].begin(), tile_entries[tile].end());
    for (int tile = 0; tile < n_tiles; ++tile) {
        int y_begin = tile * detail::kTileRows;
        int y_end = std::min(h, y_begin + detail::kTileRows);
        for (size_t px = static_cast<size_t>(y_begin) * w; px < static_cast<size_t>(y_end) * w; ++px)
            out.ranges[px].begin += static_cast<uint32_t>(tile_offset[tile]);
    }
    return out;
}

}  // namespace dropsplat
