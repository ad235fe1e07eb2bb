#include <doctest.h>

#include <vector>

#include "orbitsplat/math/quaternion.hpp"
#include "orbitsplat/math/sh.hpp"
#include "test_util.hpp"

using namespace osp;
using test::random_unit;

namespace {

Quat random_quat(Rng& rng, bool unit) {
    Quat q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    return unit ? q.normalized() : q;
}

}  // namespace

TEST_CASE("quat rotate matches matrix route") {
    Rng rng(11);
    for (int i = 0; i < 200; ++i) {
        const Quat q = random_quat(rng, false);
        const Vec3 v(rng.normal(), rng.normal(), rng.normal());
        const Vec3 a = quat_rotate(q, v);
        const Vec3 b = rot_from_quat(q) * v;
        CHECK((a - b).norm() < 1e-12 * (1.0 + v.norm()));
    }
}

TEST_CASE("quat 90 degrees about z") {
    const Quat q = Quat::from_axis_angle({0, 0, 1}, deg2rad(90.0));
    const Vec3 r = quat_rotate(q, {1, 0, 0});
    CHECK((r - Vec3(0, 1, 0)).norm() < 1e-12);
}

TEST_CASE("quat composition matches matrix product") {
    Rng rng(12);
    for (int i = 0; i < 100; ++i) {
        const Quat a = random_quat(rng, true);
        const Quat b = random_quat(rng, true);
        const Mat3 m1 = rot_from_quat(a * b);
        const Mat3 m2 = rot_from_quat(a) * rot_from_quat(b);
        CHECK((m1 - m2).norm() < 1e-12);
    }
}

TEST_CASE("rot_from_quat is a rotation for raw input") {
    Rng rng(13);
    for (int i = 0; i < 100; ++i) {
        const Mat3 r = rot_from_quat(random_quat(rng, false));
        CHECK((r.transpose() * r - Mat3::Identity()).norm() < 1e-12);
        CHECK(r.determinant() == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("rot_from_quat backward matches finite differences") {
    Rng rng(14);
    const double h = 1e-6;
    for (int i = 0; i < 50; ++i) {
        const Quat q = random_quat(rng, false);
        Mat3 dl;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) dl(r, c) = rng.normal();
        const Vec4 g = rot_from_quat_backward(q, dl);
        for (int k = 0; k < 4; ++k) {
            Vec4 qp = q.vec(), qm = q.vec();
            qp[k] += h;
            qm[k] -= h;
            const double fp = dl.cwiseProduct(rot_from_quat(Quat(qp))).sum();
            const double fm = dl.cwiseProduct(rot_from_quat(Quat(qm))).sum();
            CHECK_CLOSE(g[k], (fp - fm) / (2 * h), 1e-7, 1e-5);
        }
    }
}

TEST_CASE("quat product backward matches finite differences") {
    Rng rng(15);
    const double h = 1e-6;
    for (int i = 0; i < 50; ++i) {
        const Quat a = random_quat(rng, false);
        const Quat b = random_quat(rng, false);
        Vec4 dl;
        for (int k = 0; k < 4; ++k) dl[k] = rng.normal();
        Vec4 ga = Vec4::Zero(), gb = Vec4::Zero();
        quat_mul_backward(a, b, dl, &ga, &gb);
        for (int k = 0; k < 4; ++k) {
            Vec4 ap = a.vec(), am = a.vec();
            ap[k] += h;
            am[k] -= h;
            const double fd =
                (dl.dot((Quat(ap) * b).vec()) - dl.dot((Quat(am) * b).vec())) / (2 * h);
            CHECK_CLOSE(ga[k], fd, 1e-8, 1e-6);
            Vec4 bp = b.vec(), bm = b.vec();
            bp[k] += h;
            bm[k] -= h;
            const double fdb =
                (dl.dot((a * Quat(bp)).vec()) - dl.dot((a * Quat(bm)).vec())) / (2 * h);
            CHECK_CLOSE(gb[k], fdb, 1e-8, 1e-6);
        }
    }
}

TEST_CASE("quat normalize backward matches finite differences") {
    Rng rng(16);
    const double h = 1e-6;
    for (int i = 0; i < 50; ++i) {
        const Quat q = random_quat(rng, false);
        Vec4 dl;
        for (int k = 0; k < 4; ++k) dl[k] = rng.normal();
        const Vec4 g = quat_normalize_backward(q, dl);
        for (int k = 0; k < 4; ++k) {
            Vec4 qp = q.vec(), qm = q.vec();
            qp[k] += h;
            qm[k] -= h;
            const double fd =
                (dl.dot(Quat(qp).normalized().vec()) - dl.dot(Quat(qm).normalized().vec())) /
                (2 * h);
            CHECK_CLOSE(g[k], fd, 1e-7, 1e-5);
        }
    }
}

TEST_CASE("quat canonical keeps rotation, flips sign") {
    Rng rng(17);
    for (int i = 0; i < 20; ++i) {
        const Quat q = random_quat(rng, true);
        const Quat c = q.canonical();
        CHECK(c.w >= 0.0);
        CHECK((rot_from_quat(c) - rot_from_quat(q)).norm() < 1e-12);
    }
    CHECK(quat_angle_deg(Quat{-1, 0, 0, 0}, Quat::identity()) == doctest::Approx(0.0));
}

TEST_CASE("splat normal is third rotation column") {
    // 90 degrees about x maps +z to -y.
    const Quat q = Quat::from_axis_angle({1, 0, 0}, deg2rad(90.0));
    const Vec3 n = rot_from_quat(q).col(2);
    CHECK((n - Vec3(0, -1, 0)).norm() < 1e-9);
}

TEST_CASE("sh basis pinned low-order values") {
    Rng rng(21);
    for (int i = 0; i < 10; ++i) {
        const Vec3 d = random_unit(rng);
        const auto b = sh_basis(d, 0);
        CHECK(b[0] == doctest::Approx(0.28209479).epsilon(1e-7));
    }
    const auto b1 = sh_basis(Vec3(0, 0, 1), 1);
    CHECK(b1[0] == doctest::Approx(0.28209479).epsilon(1e-7));
    CHECK(std::abs(b1[1]) < 1e-15);
    CHECK(b1[2] == doctest::Approx(0.48860251).epsilon(1e-7));
    CHECK(std::abs(b1[3]) < 1e-15);
    // Positive x lobe sits in the m=+1 slot, positive y lobe in m=-1.
    CHECK(sh_basis(Vec3(1, 0, 0), 1)[3] == doctest::Approx(0.48860251).epsilon(1e-7));
    CHECK(sh_basis(Vec3(0, 1, 0), 1)[1] == doctest::Approx(0.48860251).epsilon(1e-7));
    // l=2, m=2 has the familiar 0.546274 (x^2 - y^2) form.
    const auto b2 = sh_basis(Vec3(1, 0, 0), 2);
    CHECK(b2[8] == doctest::Approx(0.5462742153).epsilon(1e-8));
}

TEST_CASE("sh basis rejects far-from-unit directions") {
    std::vector<double> out(4);
    CHECK_THROWS_AS(sh_basis(Vec3(0, 0, 1.1), 1, out.data()), invalid_input_error);
    CHECK_THROWS_AS(sh_basis(Vec3::Zero(), 0, out.data()), invalid_input_error);
}

TEST_CASE("sh basis quadrature Gram is identity at order 9") {
    const int order = 9;
    const int n = sh_count(order);
    std::vector<double> zn, zw;
    gauss_legendre(32, &zn, &zw);
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(n, n);
    std::vector<double> b(n);
    const int n_phi = 64;
    for (size_t i = 0; i < zn.size(); ++i) {
        const double z = zn[i];
        const double r = std::sqrt(1.0 - z * z);
        for (int j = 0; j < n_phi; ++j) {
            const double phi = 2.0 * kPi * (j + 0.5) / n_phi;
            sh_basis(Vec3(r * std::cos(phi), r * std::sin(phi), z), order, b.data());
            const double w = zw[i] * 2.0 * kPi / n_phi;
            for (int a = 0; a < n; ++a)
                for (int c = a; c < n; ++c) gram(a, c) += w * b[a] * b[c];
        }
    }
    double max_err = 0.0;
    for (int a = 0; a < n; ++a)
        for (int c = a; c < n; ++c)
            max_err = std::max(max_err, std::abs(gram(a, c) - (a == c ? 1.0 : 0.0)));
    CHECK(max_err < 1e-12);
}

TEST_CASE("sh basis Monte Carlo Gram is identity") {
    const int order = 4;
    const int n = sh_count(order);
    const int samples = 1000000;
    Rng rng(22);
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(n, n);
    std::vector<double> b(n);
    const int strata = 1000;
    for (int i = 0; i < samples; ++i) {
        // Jittered 1000x1000 grid over (z, phi) to tame the estimator variance.
        const double z = 2.0 * ((i % strata) + rng.uniform()) / strata - 1.0;
        const double phi = 2.0 * kPi * ((i / strata) + rng.uniform()) / strata;
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        sh_basis(Vec3(r * std::cos(phi), r * std::sin(phi), z), order, b.data());
        for (int a = 0; a < n; ++a)
            for (int c = a; c < n; ++c) gram(a, c) += b[a] * b[c];
    }
    const double w = 4.0 * kPi / samples;
    double max_err = 0.0;
    for (int a = 0; a < n; ++a)
        for (int c = a; c < n; ++c)
            max_err = std::max(max_err, std::abs(w * gram(a, c) - (a == c ? 1.0 : 0.0)));
    CHECK(max_err < 3e-3);
}

TEST_CASE("sh basis gradients match finite differences") {
    Rng rng(23);
    const int order = 9;
    const int n = sh_count(order);
    std::vector<double> val(n), vp(n), vm(n);
    std::vector<Vec3> grad(n);
    const double h = 1e-6;
    for (int i = 0; i < 20; ++i) {
        const Vec3 d = random_unit(rng);
        sh_basis_grad(d, order, val.data(), grad.data());
        sh_basis(d, order, vp.data());
        for (int k = 0; k < n; ++k) CHECK(val[k] == doctest::Approx(vp[k]).epsilon(1e-14));
        for (int ax = 0; ax < 3; ++ax) {
            Vec3 dp = d, dm = d;
            dp[ax] += h;
            dm[ax] -= h;
            sh_basis(dp, order, vp.data());
            sh_basis(dm, order, vm.data());
            for (int k = 0; k < n; ++k)
                CHECK_CLOSE(grad[k][ax], (vp[k] - vm[k]) / (2 * h), 1e-6, 1e-4);
        }
    }
}

TEST_CASE("sh_eval is linear in coefficients") {
    Rng rng(24);
    auto randc = [&](int order) {
        SHCoefficients c = SHCoefficients::zeros(order);
        for (auto& v : c.coeffs) v = Vec3(rng.normal(), rng.normal(), rng.normal());
        return c;
    };
    const SHCoefficients a = randc(3), b = randc(3);
    SHCoefficients s = a;
    for (int i = 0; i < s.count(); ++i) s.coeffs[i] += b.coeffs[i];
    for (int i = 0; i < 10; ++i) {
        const Vec3 d = random_unit(rng);
        const Vec3 lhs = sh_eval(d, s);
        const Vec3 rhs = sh_eval(d, a) + sh_eval(d, b);
        CHECK((lhs - rhs).norm() < 1e-12 * (1.0 + rhs.norm()));
    }
}

TEST_CASE("sh_project recovers band-limited functions") {
    Rng rng(25);
    SHCoefficients truth = SHCoefficients::zeros(3);
    for (auto& v : truth.coeffs) v = Vec3(rng.normal(), rng.normal(), rng.normal());
    const SHCoefficients fit =
        sh_project([&](const Vec3& d) { return sh_eval(d, truth); }, 3, 16, 16);
    for (int i = 0; i < truth.count(); ++i)
        CHECK((fit.coeffs[i] - truth.coeffs[i]).norm() < 1e-12);
}

TEST_CASE("gauss_legendre integrates polynomials exactly") {
    std::vector<double> zn, zw;
    gauss_legendre(8, &zn, &zw);
    for (int k = 0; k <= 15; ++k) {
        double acc = 0.0;
        for (size_t i = 0; i < zn.size(); ++i) acc += zw[i] * std::pow(zn[i], k);
        const double exact = (k % 2 == 0) ? 2.0 / (k + 1) : 0.0;
        CHECK(acc == doctest::Approx(exact).epsilon(1e-13));
    }
}

TEST_CASE("reflect properties") {
    Rng rng(26);
    for (int i = 0; i < 100; ++i) {
        const Vec3 v = random_unit(rng);
        const Vec3 n = random_unit(rng);
        const Vec3 w = reflect_about(v, n);
        CHECK(w.norm() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(w.dot(n) == doctest::Approx(v.dot(n)).epsilon(1e-12));
        CHECK((reflect_about(w, n) - v).norm() < 1e-12);
    }
    // Mirror about +z flips the tangential part.
    CHECK((reflect_about(Vec3(1, 0, 0), Vec3(0, 0, 1)) - Vec3(-1, 0, 0)).norm() < 1e-12);
    CHECK((reflect_about(Vec3(0, 0, 1), Vec3(0, 0, 1)) - Vec3(0, 0, 1)).norm() < 1e-12);
}

TEST_CASE("reflect jacobians match finite differences") {
    Rng rng(27);
    const double h = 1e-7;
    for (int i = 0; i < 20; ++i) {
        const Vec3 v = random_unit(rng);
        const Vec3 n = random_unit(rng);
        const Mat3 jv = reflect_jacobian_v(n);
        const Mat3 jn = reflect_jacobian_n(v, n);
        for (int ax = 0; ax < 3; ++ax) {
            Vec3 e = Vec3::Zero();
            e[ax] = h;
            const Vec3 fv = (reflect_about(v + e, n) - reflect_about(v - e, n)) / (2 * h);
            const Vec3 fn = (reflect_about(v, n + e) - reflect_about(v, n - e)) / (2 * h);
            CHECK((jv.col(ax) - fv).norm() < 1e-6);
            CHECK((jn.col(ax) - fn).norm() < 1e-6);
        }
    }
}

TEST_CASE("rotation matrices convert back to canonical quaternions") {
    Rng rng(55);
    for (int i = 0; i < 200; ++i) {
        Quat q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
        if (q.norm() < 1e-3) continue;
        q = q.normalized().canonical();
        const Quat back = quat_from_rot(rot_from_quat(q));
        CHECK((back.vec() - q.vec()).cwiseAbs().maxCoeff() < 1e-12);
    }
    // Branch coverage: near-180-degree rotations about each axis.
    for (const Vec3 axis : {Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)}) {
        const Quat q = Quat::from_axis_angle(axis, kPi - 1e-6).canonical();
        const Quat back = quat_from_rot(rot_from_quat(q));
        CHECK((back.vec() - q.vec()).cwiseAbs().maxCoeff() < 1e-9);
    }
    CHECK((quat_from_rot(Mat3::Identity()).vec() - Vec4(1, 0, 0, 0)).norm() == 0.0);
}
