#pragma once

#include <cmath>

#include "orbitsplat/common.hpp"

namespace osp {

// Hamilton quaternion, scalar-first (w, x, y, z). Rotations are active:
// quat_rotate(q, v) rotates v by q. Construction helpers return unit
// quaternions; rot_from_quat normalizes internally so raw (optimizer-perturbed)
// values stay well-defined and differentiable.
struct Quat {
    double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

    Quat() = default;
    Quat(double w_, double x_, double y_, double z_) : w(w_), x(x_), y(y_), z(z_) {}
    explicit Quat(const Vec4& v) : w(v[0]), x(v[1]), y(v[2]), z(v[3]) {}

    static Quat identity() { return {1.0, 0.0, 0.0, 0.0}; }

    static Quat from_axis_angle(const Vec3& axis, double angle_rad) {
        const Vec3 a = axis.normalized();
        const double h = 0.5 * angle_rad;
        const double s = std::sin(h);
        return {std::cos(h), s * a.x(), s * a.y(), s * a.z()};
    }

    Vec4 vec() const { return {w, x, y, z}; }
    double squared_norm() const { return w * w + x * x + y * y + z * z; }
    double norm() const { return std::sqrt(squared_norm()); }

    Quat normalized() const {
        const double n = norm();
        return {w / n, x / n, y / n, z / n};
    }

    Quat conjugate() const { return {w, -x, -y, -z}; }

    // Sign-canonical representative (w >= 0) of the same rotation.
    Quat canonical() const { return w < 0.0 ? Quat{-w, -x, -y, -z} : *this; }

    Quat operator*(const Quat& b) const {
        return {w * b.w - x * b.x - y * b.y - z * b.z,
                w * b.x + x * b.w + y * b.z - z * b.y,
                w * b.y - x * b.z + y * b.w + z * b.x,
                w * b.z + x * b.y - y * b.x + z * b.w};
    }

    double dot(const Quat& b) const { return w * b.w + x * b.x + y * b.y + z * b.z; }
};

// Rotation matrix of q/|q|.
inline Mat3 rot_from_quat(const Quat& q_raw) {
    const Quat q = q_raw.normalized();
    const double w = q.w, x = q.x, y = q.y, z = q.z;
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

// Inverse of rot_from_quat for proper rotations; returns the canonical (w >= 0)
// unit quaternion. Shepperd's branch selection keeps the divisor well away from
// zero for every input.
inline Quat quat_from_rot(const Mat3& r) {
    const double tr = r.trace();
    Quat q;
    if (tr > 0.0) {
        const double s = std::sqrt(tr + 1.0) * 2.0;
        q = {0.25 * s, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s,
             (r(1, 0) - r(0, 1)) / s};
    } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
        const double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2.0;
        q = {(r(2, 1) - r(1, 2)) / s, 0.25 * s, (r(0, 1) + r(1, 0)) / s,
             (r(0, 2) + r(2, 0)) / s};
    } else if (r(1, 1) > r(2, 2)) {
        const double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2.0;
        q = {(r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, 0.25 * s,
             (r(1, 2) + r(2, 1)) / s};
    } else {
        const double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2.0;
        q = {(r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s,
             (r(1, 2) + r(2, 1)) / s, 0.25 * s};
    }
    return q.normalized().canonical();
}

// Orientation whose third column is the unit vector n; the in-plane twist is
// arbitrary but deterministic.
inline Quat quat_from_normal(const Vec3& n) {
    const Vec3 a = std::abs(n.z()) < 0.9 ? Vec3(0, 0, 1) : Vec3(1, 0, 0);
    const Vec3 t1 = a.cross(n).normalized();
    const Vec3 t2 = n.cross(t1);
    Mat3 r;
    r.col(0) = t1;
    r.col(1) = t2;
    r.col(2) = n;
    return quat_from_rot(r);
}

// Sandwich-product rotation: v + 2w(u x v) + 2u x (u x v). Kept distinct from
// the matrix route so the two can cross-check each other.
inline Vec3 quat_rotate(const Quat& q_raw, const Vec3& v) {
    const Quat q = q_raw.normalized();
    const Vec3 u(q.x, q.y, q.z);
    const Vec3 t = 2.0 * u.cross(v);
    return v + q.w * t + u.cross(t);
}

// dL/dq_raw for R = rot_from_quat(q_raw), given dL/dR. Chains the polynomial
// partials of the unit-quaternion matrix through the normalization Jacobian
// (I - q_hat q_hat^T)/|q|.
inline Vec4 rot_from_quat_backward(const Quat& q_raw, const Mat3& dL_dR) {
    const double n = q_raw.norm();
    const Quat q = {q_raw.w / n, q_raw.x / n, q_raw.y / n, q_raw.z / n};
    const double w = q.w, x = q.x, y = q.y, z = q.z;

    Mat3 dw, dx, dy, dz;
    dw << 0, -z, y, z, 0, -x, -y, x, 0;
    dx << 0, y, z, y, -2 * x, -w, z, w, -2 * x;
    dy << -2 * y, x, w, x, 0, z, -w, z, -2 * y;
    dz << -2 * z, -w, x, w, -2 * z, y, x, y, 0;

    Vec4 g_hat;
    g_hat[0] = 2.0 * dw.cwiseProduct(dL_dR).sum();
    g_hat[1] = 2.0 * dx.cwiseProduct(dL_dR).sum();
    g_hat[2] = 2.0 * dy.cwiseProduct(dL_dR).sum();
    g_hat[3] = 2.0 * dz.cwiseProduct(dL_dR).sum();

    const Vec4 qh = q.vec();
    return (g_hat - qh * qh.dot(g_hat)) / n;
}

// dL/dq_raw for y = q/|q|, given dL/dy.
inline Vec4 quat_normalize_backward(const Quat& q_raw, const Vec4& dL_dy) {
    const double n = q_raw.norm();
    const Vec4 qh = q_raw.vec() / n;
    return (dL_dy - qh * qh.dot(dL_dy)) / n;
}

// Left-multiplication matrix: (a * b).vec() = quat_left_matrix(a) * b.vec().
inline Eigen::Matrix4d quat_left_matrix(const Quat& a) {
    Eigen::Matrix4d m;
    m << a.w, -a.x, -a.y, -a.z,
         a.x,  a.w, -a.z,  a.y,
         a.y,  a.z,  a.w, -a.x,
         a.z, -a.y,  a.x,  a.w;
    return m;
}

// Right-multiplication matrix: (a * b).vec() = quat_right_matrix(b) * a.vec().
inline Eigen::Matrix4d quat_right_matrix(const Quat& b) {
    Eigen::Matrix4d m;
    m << b.w, -b.x, -b.y, -b.z,
         b.x,  b.w,  b.z, -b.y,
         b.y, -b.z,  b.w,  b.x,
         b.z,  b.y, -b.x,  b.w;
    return m;
}

// Backward through the bilinear product p = a * b.
inline void quat_mul_backward(const Quat& a, const Quat& b, const Vec4& dL_dp,
                              Vec4* dL_da, Vec4* dL_db) {
    if (dL_da) *dL_da += quat_right_matrix(b).transpose() * dL_dp;
    if (dL_db) *dL_db += quat_left_matrix(a).transpose() * dL_dp;
}

// Geodesic angle between the rotations of two (unit) quaternions, in degrees.
inline double quat_angle_deg(const Quat& a, const Quat& b) {
    const double d = std::min(1.0, std::abs(a.normalized().dot(b.normalized())));
    return rad2deg(2.0 * std::acos(d));
}

}  // namespace osp
