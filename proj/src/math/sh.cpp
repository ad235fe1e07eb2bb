#include "orbitsplat/math/sh.hpp"

#include <cmath>

namespace osp {

namespace {

// K(l,m) = sqrt((2l+1)/(4pi) * (l-m)!/(l+m)!), precomputed through kMaxShOrder.
struct ShTables {
    double k[kMaxShOrder + 1][kMaxShOrder + 1] = {};
    ShTables() {
        for (int l = 0; l <= kMaxShOrder; ++l) {
            for (int m = 0; m <= l; ++m) {
                double ratio = 1.0;  // (l-m)!/(l+m)!
                for (int i = l - m + 1; i <= l + m; ++i) ratio /= double(i);
                k[l][m] = std::sqrt((2.0 * l + 1.0) / (4.0 * kPi) * ratio);
            }
        }
    }
};
const ShTables kTab;

inline void check_unit(const Vec3& dir) {
    if (std::abs(dir.squaredNorm() - 1.0) > 1e-5)
        throw invalid_input_error("sh_basis: direction is not unit length");
}

// Semi-normalized associated Legendre terms without the sin^m factor:
// Q_m^m = (2m-1)!!, Q_{m+1}^m = z (2m+1) Q_m^m,
// Q_l^m = ((2l-1) z Q_{l-1}^m - (l+m-1) Q_{l-2}^m) / (l-m).
// The full P_l^m(cos t) (Condon-Shortley-free) equals Q_l^m(z) * sin^m t, and
// sin^m t * cos(m phi) = Re((x+iy)^m) =: C_m, likewise S_m for the imaginary
// part, so each basis value is a polynomial in (x, y, z).
template <bool WithGrad>
void basis_impl(const Vec3& dir, int order, double* out, Vec3* grad) {
    const double x = dir.x(), y = dir.y(), z = dir.z();

    double q[kMaxShOrder + 1][kMaxShOrder + 1];
    double dq[kMaxShOrder + 1][kMaxShOrder + 1];
    for (int m = 0; m <= order; ++m) {
        q[m][m] = (m == 0) ? 1.0 : q[m - 1][m - 1] * (2.0 * m - 1.0);
        dq[m][m] = 0.0;
        if (m + 1 <= order) {
            q[m + 1][m] = z * (2.0 * m + 1.0) * q[m][m];
            dq[m + 1][m] = (2.0 * m + 1.0) * q[m][m];
        }
        for (int l = m + 2; l <= order; ++l) {
            const double a = 2.0 * l - 1.0, b = l + m - 1.0, inv = 1.0 / (l - m);
            q[l][m] = (a * z * q[l - 1][m] - b * q[l - 2][m]) * inv;
            if (WithGrad)
                dq[l][m] = (a * (q[l - 1][m] + z * dq[l - 1][m]) - b * dq[l - 2][m]) * inv;
        }
    }

    double c[kMaxShOrder + 1], s[kMaxShOrder + 1];
    c[0] = 1.0;
    s[0] = 0.0;
    for (int m = 1; m <= order; ++m) {
        c[m] = x * c[m - 1] - y * s[m - 1];
        s[m] = x * s[m - 1] + y * c[m - 1];
    }

    const double sqrt2 = std::sqrt(2.0);
    for (int l = 0; l <= order; ++l) {
        const int base = l * (l + 1);
        out[base] = kTab.k[l][0] * q[l][0];
        if (WithGrad) grad[base] = Vec3(0.0, 0.0, kTab.k[l][0] * dq[l][0]);
        for (int m = 1; m <= l; ++m) {
            const double f = sqrt2 * kTab.k[l][m];
            out[base + m] = f * q[l][m] * c[m];
            out[base - m] = f * q[l][m] * s[m];
            if (WithGrad) {
                const double qc = q[l][m] * m;
                grad[base + m] =
                    f * Vec3(qc * c[m - 1], -qc * s[m - 1], dq[l][m] * c[m]);
                grad[base - m] =
                    f * Vec3(qc * s[m - 1], qc * c[m - 1], dq[l][m] * s[m]);
            }
        }
    }
}

}  // namespace

void sh_basis(const Vec3& dir, int order, double* out) {
    if (order < 0 || order > kMaxShOrder)
        throw invalid_input_error("sh_basis: order out of range");
    check_unit(dir);
    basis_impl<false>(dir, order, out, nullptr);
}

std::vector<double> sh_basis(const Vec3& dir, int order) {
    std::vector<double> out(sh_count(order));
    sh_basis(dir, order, out.data());
    return out;
}

void sh_basis_grad(const Vec3& dir, int order, double* out, Vec3* grad_out) {
    if (order < 0 || order > kMaxShOrder)
        throw invalid_input_error("sh_basis: order out of range");
    check_unit(dir);
    basis_impl<true>(dir, order, out, grad_out);
}

Vec3 sh_eval(const Vec3& dir, const SHCoefficients& c) {
    double b[sh_count(kMaxShOrder)];
    sh_basis(dir, c.order, b);
    Vec3 acc = Vec3::Zero();
    for (int i = 0; i < c.count(); ++i) acc += b[i] * c.coeffs[i];
    return acc;
}

void gauss_legendre(int n, std::vector<double>* nodes, std::vector<double>* weights) {
    nodes->resize(n);
    weights->resize(n);
    for (int i = 0; i < n; ++i) {
        // Newton iteration from the Chebyshev-like initial guess.
        double t = std::cos(kPi * (i + 0.75) / (n + 0.5));
        double p0 = 0.0, p1 = 0.0;
        for (int it = 0; it < 100; ++it) {
            p0 = 1.0;
            p1 = 0.0;
            for (int j = 0; j < n; ++j) {
                const double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j + 1.0) * t * p1 - j * p2) / (j + 1.0);
            }
            const double dp = n * (t * p0 - p1) / (t * t - 1.0);
            const double step = p0 / dp;
            t -= step;
            if (std::abs(step) < 1e-15) break;
        }
        p0 = 1.0;
        p1 = 0.0;
        for (int j = 0; j < n; ++j) {
            const double p2 = p1;
            p1 = p0;
            p0 = ((2.0 * j + 1.0) * t * p1 - j * p2) / (j + 1.0);
        }
        const double dp = n * (t * p0 - p1) / (t * t - 1.0);
        (*nodes)[i] = t;
        (*weights)[i] = 2.0 / ((1.0 - t * t) * dp * dp);
    }
}

SHCoefficients sh_project(const std::function<Vec3(const Vec3&)>& f, int order,
                          int n_theta, int n_phi) {
    SHCoefficients c = SHCoefficients::zeros(order);
    std::vector<double> zn, zw;
    gauss_legendre(n_theta, &zn, &zw);
    std::vector<double> basis(sh_count(order));
    for (int i = 0; i < n_theta; ++i) {
        const double z = zn[i];
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        for (int j = 0; j < n_phi; ++j) {
            const double phi = 2.0 * kPi * (j + 0.5) / n_phi;
            const Vec3 dir(r * std::cos(phi), r * std::sin(phi), z);
            const double w = zw[i] * (2.0 * kPi / n_phi);
            const Vec3 val = f(dir);
            sh_basis(dir, order, basis.data());
            for (int k = 0; k < c.count(); ++k) c.coeffs[k] += w * basis[k] * val;
        }
    }
    return c;
}

}  // namespace osp
