#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dropsplat/common.hpp"

namespace dropsplat {

constexpr int kMaxShBasis = 9;  // degree <= 2

// One anisotropic 3D Gaussian. Scales are stored as logs and opacity as a
// logit so the optimizer works in unconstrained space. Quaternion order is
// (w, x, y, z); it is renormalized wherever a rotation matrix is built.
// sh holds per-channel view-dependent color coefficients, one column per
// basis function; columns past the cloud's active basis count are unused.
struct Gaussian {
    Vec3 center = Vec3::Zero();
    Vec3 log_scale = Vec3::Zero();
    Vec4 rotation = Vec4(1, 0, 0, 0);
    double opacity_logit = 0.0;
    Eigen::Matrix<double, 3, kMaxShBasis> sh = Eigen::Matrix<double, 3, kMaxShBasis>::Zero();
};

struct GaussianCloud {
    std::vector<Gaussian> gaussians;
    int sh_degree = 1;

    size_t size() const { return gaussians.size(); }
    int basis_count() const { return (sh_degree + 1) * (sh_degree + 1); }
};

// Pinhole camera with a world-to-camera rigid transform. Camera frame is
// x right, y down, z forward; a point lands on the image plane at
// (fx * x/z + cx, fy * y/z + cy) in pixel units.
struct Camera {
    Vec2 focal = Vec2(1, 1);
    Vec2 principal = Vec2::Zero();
    int width = 0;
    int height = 0;
    Mat3 rotation_w2c = Mat3::Identity();
    Vec3 translation_w2c = Vec3::Zero();
    double near_clip = 0.1;
    std::string split = "train";
    std::string image_path;

    Vec3 position() const { return -rotation_w2c.transpose() * translation_w2c; }

    void validate() const {
        if (width <= 0 || height <= 0) throw std::invalid_argument("camera: resolution must be positive");
        if (focal.x() <= 0 || focal.y() <= 0) throw std::invalid_argument("camera: focal must be positive");
        if (near_clip <= 0) throw std::invalid_argument("camera: near_clip must be positive");
        double dev = (rotation_w2c.transpose() * rotation_w2c - Mat3::Identity()).cwiseAbs().maxCoeff();
        if (!(dev < 1e-9)) throw std::invalid_argument("camera: rotation_w2c is not orthonormal");
    }
};

// Screen-space footprint of one projected Gaussian.
struct Splat2D {
    Vec2 mean2d = Vec2::Zero();
    Mat2 cov2d = Mat2::Identity();
    double depth = 0.0;
    Vec3 view_dir = Vec3::UnitZ();
    bool culled = false;
};

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double opacity_to_logit(double o) {
    if (!(o > 0.0 && o < 1.0)) throw std::invalid_argument("opacity_to_logit: opacity must be in (0, 1)");
    return std::log(o) - std::log(1.0 - o);
}

inline Mat3 quat_to_rotation(const Vec4& q) {
    double n = q.norm();
    if (!(n > 0.0)) throw std::invalid_argument("quat_to_rotation: zero quaternion");
    double w = q[0] / n, x = q[1] / n, y = q[2] / n, z = q[3] / n;
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

// World-space covariance R * diag(exp(ls))^2 * R^T, built as M M^T so it is
// symmetric positive semi-definite by construction.
inline Mat3 covariance_3d(const Vec3& log_scale, const Vec4& rotation) {
    Mat3 m = quat_to_rotation(rotation) * log_scale.array().exp().matrix().asDiagonal();
    return m * m.transpose();
}

// Unit-peak density exp(-0.5 (x-mu)^T Sigma^-1 (x-mu)).
inline double eval_gaussian(const Gaussian& g, const Vec3& x) {
    Mat3 cov = covariance_3d(g.log_scale, g.rotation);
    Vec3 d = x - g.center;
    return std::exp(-0.5 * d.dot(cov.inverse() * d));
}

// Screen-space low-pass dilation added to every projected covariance, in
// pixel^2 units; keeps footprints at least a fraction of a pixel wide.
constexpr double kCovDilation = 0.3;

// 2x3 Jacobian of the pinhole projection at camera-frame point t.
inline Eigen::Matrix<double, 2, 3> projection_jacobian(const Vec2& focal, const Vec3& t) {
    Eigen::Matrix<double, 2, 3> j;
    double iz = 1.0 / t.z();
    double iz2 = iz * iz;
    j << focal.x() * iz, 0.0, -focal.x() * t.x() * iz2,
         0.0, focal.y() * iz, -focal.y() * t.y() * iz2;
    return j;
}

// First-order (EWA style) perspective projection of one Gaussian. Gaussians
// at or behind the near plane come back culled with only depth filled in.
inline Splat2D project_gaussian(const Gaussian& g, const Camera& cam) {
    Splat2D s;
    Vec3 t = cam.rotation_w2c * g.center + cam.translation_w2c;
    s.depth = t.z();
    if (!(t.z() > cam.near_clip)) {
        s.culled = true;
        return s;
    }
    s.mean2d = Vec2(cam.focal.x() * t.x() / t.z() + cam.principal.x(),
                    cam.focal.y() * t.y() / t.z() + cam.principal.y());
    Eigen::Matrix<double, 2, 3> a = projection_jacobian(cam.focal, t) * cam.rotation_w2c;
    s.cov2d = a * covariance_3d(g.log_scale, g.rotation) * a.transpose() + kCovDilation * Mat2::Identity();
    Vec3 to_g = g.center - cam.position();
    double dist = to_g.norm();
    s.view_dir = dist > 1e-12 ? Vec3(to_g / dist) : Vec3::UnitZ();
    return s;
}

// Larger eigenvalue of a symmetric 2x2 matrix; drives the gather radius.
inline double max_eigenvalue_2x2(const Mat2& m) {
    double half_trace = 0.5 * (m(0, 0) + m(1, 1));
    double half_diff = 0.5 * (m(0, 0) - m(1, 1));
    return half_trace + std::sqrt(half_diff * half_diff + m(0, 1) * m(1, 0));
}

}  // namespace dropsplat
