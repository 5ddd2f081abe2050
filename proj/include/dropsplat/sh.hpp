#pragma once

#include <stdexcept>

#include "dropsplat/geometry.hpp"

namespace dropsplat {

// Real spherical harmonics basis, degrees 0..2, in the band ordering
// (l, m) = (0,0), (1,-1), (1,0), (1,1), (2,-2), (2,-1), (2,0), (2,1), (2,2).
// Constants are the orthonormal ones; degree-2 terms use the on-sphere
// equivalent forms in (x, y, z).
constexpr double kSh0 = 0.28209479177387814;
constexpr double kSh1 = 0.4886025119029199;
constexpr double kSh2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                            -1.0925484305920792, 0.5462742152960396};

inline void check_sh_degree(int degree) {
    if (degree < 0 || degree > 2) throw std::invalid_argument("sh: degree must be 0, 1, or 2");
}

// Fills basis[0 .. (degree+1)^2) for unit direction d.
inline void sh_basis(int degree, const Vec3& d, double* basis) {
    check_sh_degree(degree);
    double x = d.x(), y = d.y(), z = d.z();
    basis[0] = kSh0;
    if (degree < 1) return;
    basis[1] = -kSh1 * y;
    basis[2] = kSh1 * z;
    basis[3] = -kSh1 * x;
    if (degree < 2) return;
    basis[4] = kSh2[0] * x * y;
    basis[5] = kSh2[1] * y * z;
    basis[6] = kSh2[2] * (2.0 * z * z - x * x - y * y);
    basis[7] = kSh2[3] * x * z;
    basis[8] = kSh2[4] * (x * x - y * y);
}

// Ambient-space gradient of each basis function with respect to d. Composing
// with a tangent projection gives the on-sphere derivative, so the off-sphere
// extension choice does not matter.
inline void sh_basis_gradient(int degree, const Vec3& d, Vec3* grad) {
    check_sh_degree(degree);
    double x = d.x(), y = d.y(), z = d.z();
    grad[0] = Vec3::Zero();
    if (degree < 1) return;
    grad[1] = Vec3(0, -kSh1, 0);
    grad[2] = Vec3(0, 0, kSh1);
    grad[3] = Vec3(-kSh1, 0, 0);
    if (degree < 2) return;
    grad[4] = kSh2[0] * Vec3(y, x, 0);
    grad[5] = kSh2[1] * Vec3(0, z, y);
    grad[6] = kSh2[2] * Vec3(-2.0 * x, -2.0 * y, 4.0 * z);
    grad[7] = kSh2[3] * Vec3(z, 0, x);
    grad[8] = kSh2[4] * Vec3(2.0 * x, -2.0 * y, 0);
}

// View-dependent color before the non-negativity clamp: 0.5 + sum of
// coefficients times basis values, per channel.
inline Vec3 eval_sh_raw(const Eigen::Matrix<double, 3, kMaxShBasis>& sh, int degree, const Vec3& dir) {
    double basis[kMaxShBasis];
    sh_basis(degree, dir, basis);
    int b = (degree + 1) * (degree + 1);
    Vec3 c(0.5, 0.5, 0.5);
    for (int k = 0; k < b; ++k) c += sh.col(k) * basis[k];
    return c;
}

inline Vec3 eval_sh(const Eigen::Matrix<double, 3, kMaxShBasis>& sh, int degree, const Vec3& dir) {
    return eval_sh_raw(sh, degree, dir).cwiseMax(0.0);
}

}  // namespace dropsplat
