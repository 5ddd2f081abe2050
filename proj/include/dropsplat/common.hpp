#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace dropsplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

// Row-major H x W x 3 buffer of linear color. Values are unbounded above;
// clamping to [0,1] happens only at image export.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, double fill = 0.0) : width(w), height(h), data(static_cast<size_t>(w) * h * 3, fill) {}

    double& at(int y, int x, int c) { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    double at(int y, int x, int c) const { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    size_t pixel_count() const { return static_cast<size_t>(width) * height; }
    bool same_shape(const Image& o) const { return width == o.width && height == o.height; }
};

// Process-wide worker count for the tiled render/backward loops. Work is
// always partitioned by fixed tile index, never by worker, so results are
// bit-identical for any setting.
inline int& worker_count_ref() {
    static int n = std::max(1u, std::thread::hardware_concurrency());
    return n;
}
inline void set_worker_count(int n) {
    if (n < 1) throw std::invalid_argument("worker count must be >= 1");
    worker_count_ref() = n;
}
inline int worker_count() { return worker_count_ref(); }

// Runs fn(i) for i in [0, n). Each worker takes a strided subset of indices;
// fn must only write to per-index state.
template <typename Fn>
void parallel_for(size_t n, Fn&& fn) {
    int w = worker_count();
    if (w <= 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    size_t nw = std::min<size_t>(w, n);
    std::vector<std::thread> pool;
    pool.reserve(nw);
    for (size_t j = 0; j < nw; ++j) {
        pool.emplace_back([&, j] {
            for (size_t i = j; i < n; i += nw) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace dropsplat
