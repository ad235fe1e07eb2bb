#pragma once

#include <functional>
#include <vector>

#include "orbitsplat/common.hpp"

namespace osp {

// Real spherical harmonics in the graphics convention (all-positive band-1
// forms: Y_1^0(0,0,1) = +0.4886, Y_1^1 proportional to +x). Flat index is
// l*(l+1)+m with l in [0,L], m in [-l,l].

constexpr int kMaxShOrder = 9;

inline constexpr int sh_count(int order) { return (order + 1) * (order + 1); }

// Basis values at a unit direction. out must hold sh_count(order) doubles.
// Throws invalid_input_error if |dir| deviates from 1 beyond 1e-6.
void sh_basis(const Vec3& dir, int order, double* out);

std::vector<double> sh_basis(const Vec3& dir, int order);

// Basis values plus unconstrained direction gradients d(Y_i)/d(dir). Callers
// chain these through their own normalization Jacobians.
void sh_basis_grad(const Vec3& dir, int order, double* out, Vec3* grad_out);

struct SHCoefficients {
    int order = 0;
    std::vector<Vec3> coeffs;  // sh_count(order) RGB triples

    static SHCoefficients zeros(int order) {
        SHCoefficients c;
        c.order = order;
        c.coeffs.assign(sh_count(order), Vec3::Zero());
        return c;
    }
    int count() const { return sh_count(order); }
};

Vec3 sh_eval(const Vec3& dir, const SHCoefficients& c);

// Projection coefficients of f onto the basis by Gauss-Legendre x uniform-phi
// quadrature (n_theta x n_phi nodes), c_i = integral of f * Y_i over the
// sphere. Exact for band-limited f when n_theta > order.
SHCoefficients sh_project(const std::function<Vec3(const Vec3&)>& f, int order,
                          int n_theta = 64, int n_phi = 128);

// Gauss-Legendre nodes/weights on [-1, 1].
void gauss_legendre(int n, std::vector<double>* nodes, std::vector<double>* weights);

// Mirror direction of v about unit normal n: 2 (v.n) n - v. Both inputs unit.
inline Vec3 reflect_about(const Vec3& v, const Vec3& n) {
    return 2.0 * v.dot(n) * n - v;
}

// Jacobians of reflect_about at fixed inputs: d(omega)/dv = 2 n n^T - I,
// d(omega)/dn = 2 ((v.n) I + n v^T).
inline Mat3 reflect_jacobian_v(const Vec3& n) {
    return 2.0 * n * n.transpose() - Mat3::Identity();
}
inline Mat3 reflect_jacobian_n(const Vec3& v, const Vec3& n) {
    return 2.0 * (v.dot(n) * Mat3::Identity() + n * v.transpose());
}

}  // namespace osp
