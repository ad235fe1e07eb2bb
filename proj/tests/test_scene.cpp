#include <doctest.h>

#include "orbitsplat/scene.hpp"
#include "test_util.hpp"

using namespace osp;
using test::random_unit;

namespace {

GaussianPrimitive random_gaussian(Rng& rng) {
    GaussianPrimitive g;
    g.mu = Vec3(rng.normal(), rng.normal(), rng.normal());
    g.q = Quat{rng.normal(), rng.normal(), rng.normal(), rng.normal()}.normalized();
    g.scale = Vec2(0.1 + rng.uniform(), 0.1 + rng.uniform());
    g.sigma = rng.uniform();
    g.m = rng.uniform();
    for (auto& v : g.sh.coeffs) v = Vec3(rng.normal(), rng.normal(), rng.normal());
    g.k_d = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
    return g;
}

SceneState random_scene(Rng& rng, int n_gaussians, int n_poses) {
    SceneState s;
    for (int i = 0; i < n_gaussians; ++i) s.gaussians.push_back(random_gaussian(rng));
    s.trajectory.push_back(ObjectPose{});
    for (int k = 1; k < n_poses; ++k) {
        ObjectPose p;
        p.q_obj = Quat::from_axis_angle(random_unit(rng), rng.uniform(-1.0, 1.0));
        p.t_obj = Vec3(rng.normal(), rng.normal(), rng.normal());
        s.trajectory.push_back(p);
    }
    s.centroid = object_centroid(s.gaussians);
    for (auto& v : s.shared.theta_s.coeffs)
        v = Vec3(rng.normal(), rng.normal(), rng.normal());
    for (auto& v : s.shared.theta_d.coeffs)
        v = Vec3(rng.normal(), rng.normal(), rng.normal());
    return s;
}

bool gaussian_bits_equal(const GaussianPrimitive& a, const GaussianPrimitive& b) {
    if (a.mu != b.mu || a.scale != b.scale || a.sigma != b.sigma || a.m != b.m)
        return false;
    if (a.q.vec() != b.q.vec() || a.k_d != b.k_d) return false;
    for (int i = 0; i < a.sh.count(); ++i)
        if (a.sh.coeffs[i] != b.sh.coeffs[i]) return false;
    return true;
}

}  // namespace

TEST_CASE("object centroid") {
    GaussianPrimitive a;
    a.mu = Vec3(1, 2, 3);
    a.m = 1.0;
    CHECK((object_centroid({a}) - Vec3(1, 2, 3)).norm() == 0.0);

    GaussianPrimitive b = a;
    b.mu = Vec3(2, 0, 0);
    a.mu = Vec3(0, 0, 0);
    CHECK((object_centroid({a, b}) - Vec3(1, 0, 0)).norm() == 0.0);

    Rng rng(31);
    std::vector<GaussianPrimitive> gs;
    Vec3 acc = Vec3::Zero();
    double w = 0.0;
    for (int i = 0; i < 50; ++i) {
        gs.push_back(random_gaussian(rng));
        acc += gs.back().m * gs.back().mu;
        w += gs.back().m;
    }
    CHECK((object_centroid(gs) - acc / w).norm() < 1e-12);

    a.m = 0.0;
    b.m = 0.0;
    CHECK_THROWS_AS(object_centroid({a, b}), degenerate_error);
}

TEST_CASE("soft masked pose endpoints and midpoint") {
    ObjectPose p;
    p.q_obj = Quat::from_axis_angle({0, 0, 1}, deg2rad(90.0));
    p.t_obj = Vec3(1, 0, 0);

    const PosedPose at0 = soft_masked_pose(p, 0.0);
    CHECK(at0.q.vec() == Vec4(1, 0, 0, 0));
    CHECK(at0.t == Vec3(0, 0, 0));

    const PosedPose at1 = soft_masked_pose(p, 1.0);
    CHECK((at1.q.vec() - p.q_obj.vec()).norm() < 1e-15);
    CHECK(at1.t == p.t_obj);

    const PosedPose mid = soft_masked_pose(p, 0.5);
    CHECK(mid.q.w == doctest::Approx(0.92388).epsilon(1e-4));
    CHECK(mid.q.z == doctest::Approx(0.38268).epsilon(1e-4));
    CHECK(std::abs(mid.q.x) < 1e-15);
    CHECK((mid.t - Vec3(0.5, 0, 0)).norm() < 1e-15);

    // The flipped-sign quaternion encodes the same rotation and must blend
    // identically after canonicalization.
    ObjectPose pf = p;
    pf.q_obj = Quat{-p.q_obj.w, -p.q_obj.x, -p.q_obj.y, -p.q_obj.z};
    const PosedPose mid2 = soft_masked_pose(pf, 0.5);
    CHECK((mid2.q.vec() - mid.q.vec()).norm() == 0.0);

    // Near-180-degree rotations stay well-defined.
    ObjectPose big;
    big.q_obj = Quat::from_axis_angle({0, 1, 0}, deg2rad(179.5));
    const PosedPose nb = soft_masked_pose(big, 0.5);
    CHECK(std::abs(nb.q.norm() - 1.0) < 1e-12);
}

TEST_CASE("transform passes canonical set through under identity pose") {
    Rng rng(32);
    SceneState s = random_scene(rng, 20, 3);
    const auto posed = transform_gaussians(s, 0);
    for (size_t i = 0; i < posed.size(); ++i)
        CHECK(gaussian_bits_equal(posed[i], s.gaussians[i]));
}

TEST_CASE("transform shifts fully-masked set by pure translation") {
    Rng rng(33);
    SceneState s = random_scene(rng, 10, 1);
    for (auto& g : s.gaussians) g.m = 1.0;
    s.centroid = object_centroid(s.gaussians);
    ObjectPose p;
    p.t_obj = Vec3(1, 0, 0);
    s.trajectory.push_back(p);
    const auto posed = transform_gaussians(s, 1);
    for (size_t i = 0; i < posed.size(); ++i) {
        CHECK((posed[i].mu - s.gaussians[i].mu - Vec3(1, 0, 0)).norm() < 1e-12);
        CHECK((posed[i].q.vec() - s.gaussians[i].q.vec()).norm() < 1e-15);
    }
}

TEST_CASE("transform half-mask quarter-turn oracle") {
    SceneState s;
    GaussianPrimitive g;
    s.centroid = Vec3(0.3, -0.2, 0.5);
    g.mu = s.centroid + Vec3(1, 0, 0);
    g.m = 0.5;
    s.gaussians.push_back(g);
    s.trajectory.push_back(ObjectPose{});
    ObjectPose p;
    p.q_obj = Quat::from_axis_angle({0, 0, 1}, deg2rad(90.0));
    p.t_obj = Vec3(1, 0, 0);
    s.trajectory.push_back(p);
    const auto posed = transform_gaussians(s, 1);
    const Vec3 expect = s.centroid + Vec3(1.20711, 0.70711, 0);
    CHECK((posed[0].mu - expect).norm() < 1e-5);
}

TEST_CASE("background splats are bit-identical under any pose") {
    Rng rng(34);
    SceneState s = random_scene(rng, 15, 4);
    for (size_t i = 0; i < s.gaussians.size(); i += 2) s.gaussians[i].m = 0.0;
    s.centroid = Vec3(0.1, 0.2, 0.3);
    for (int t = 1; t < 4; ++t) {
        const auto posed = transform_gaussians(s, t);
        for (size_t i = 0; i < posed.size(); i += 2)
            CHECK(gaussian_bits_equal(posed[i], s.gaussians[i]));
    }
}

TEST_CASE("foreground rigidity preserves pairwise distances") {
    Rng rng(35);
    SceneState s = random_scene(rng, 12, 4);
    for (auto& g : s.gaussians) g.m = 1.0;
    s.centroid = object_centroid(s.gaussians);
    for (int t = 1; t < 4; ++t) {
        const auto posed = transform_gaussians(s, t);
        for (size_t i = 1; i < posed.size(); ++i) {
            const double before = (s.gaussians[i].mu - s.gaussians[0].mu).norm();
            const double after = (posed[i].mu - posed[0].mu).norm();
            CHECK(std::abs(before - after) < 1e-9);
        }
    }
}

TEST_CASE("transform backward matches finite differences") {
    Rng rng(36);
    SceneState s = random_scene(rng, 6, 2);
    // Keep masks interior so no clamp subtleties enter the check.
    for (auto& g : s.gaussians) g.m = 0.1 + 0.8 * rng.uniform();
    s.centroid = object_centroid(s.gaussians);
    const int t = 1;
    const int n = int(s.gaussians.size());

    std::vector<Vec3> g_mu_posed(n);
    std::vector<Vec4> g_q_posed(n);
    for (int i = 0; i < n; ++i) {
        g_mu_posed[i] = Vec3(rng.normal(), rng.normal(), rng.normal());
        g_q_posed[i] = Vec4(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    }

    auto objective = [&](const SceneState& sc) {
        const auto posed = transform_gaussians(sc, t);
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            acc += g_mu_posed[i].dot(posed[i].mu);
            acc += g_q_posed[i].dot(posed[i].q.vec());
        }
        return acc;
    };

    std::vector<Vec3> g_mu(n, Vec3::Zero());
    std::vector<Vec4> g_q(n, Vec4::Zero());
    std::vector<double> g_m(n, 0.0);
    Vec4 g_qo = Vec4::Zero();
    Vec3 g_to = Vec3::Zero();
    transform_gaussians_backward(s, t, g_mu_posed, g_q_posed, &g_mu, &g_q, &g_m,
                                 &g_qo, &g_to);

    const double h = 1e-5;
    auto fd = [&](auto&& mutate) {
        SceneState sp = s, sm = s;
        mutate(sp, +h);
        mutate(sm, -h);
        return (objective(sp) - objective(sm)) / (2 * h);
    };

    for (int k = 0; k < 4; ++k) {
        const double v = fd([&](SceneState& sc, double d) {
            Vec4 q = sc.trajectory[t].q_obj.vec();
            q[k] += d;
            sc.trajectory[t].q_obj = Quat(q);
        });
        CHECK_CLOSE(g_qo[k], v, 1e-6, 1e-4);
    }
    for (int k = 0; k < 3; ++k) {
        const double v =
            fd([&](SceneState& sc, double d) { sc.trajectory[t].t_obj[k] += d; });
        CHECK_CLOSE(g_to[k], v, 1e-6, 1e-4);
    }
    for (int i = 0; i < n; ++i) {
        const double v = fd([&](SceneState& sc, double d) { sc.gaussians[i].m += d; });
        CHECK_CLOSE(g_m[i], v, 1e-6, 1e-4);
        for (int k = 0; k < 3; ++k) {
            const double vm =
                fd([&](SceneState& sc, double d) { sc.gaussians[i].mu[k] += d; });
            CHECK_CLOSE(g_mu[i][k], vm, 1e-6, 1e-4);
        }
        for (int k = 0; k < 4; ++k) {
            const double vq = fd([&](SceneState& sc, double d) {
                Vec4 q = sc.gaussians[i].q.vec();
                q[k] += d;
                sc.gaussians[i].q = Quat(q);
            });
            CHECK_CLOSE(g_q[i][k], vq, 1e-6, 1e-4);
        }
    }
}

TEST_CASE("transform backward under identity pose still feeds pose params") {
    Rng rng(37);
    SceneState s = random_scene(rng, 4, 1);
    for (auto& g : s.gaussians) g.m = 0.5;
    s.centroid = object_centroid(s.gaussians);
    const int n = 4;
    std::vector<Vec3> g_mu_posed(n, Vec3(1, 0, 0));
    std::vector<Vec4> g_q_posed(n, Vec4::Zero());
    Vec3 g_to = Vec3::Zero();
    transform_gaussians_backward(s, 0, g_mu_posed, g_q_posed, nullptr, nullptr,
                                 nullptr, nullptr, &g_to);
    // d mu^t / d t_obj = m I, so the x component accumulates sum of masks.
    CHECK(g_to[0] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("scene checkpoint round-trips bit-exactly") {
    Rng rng(38);
    SceneState s = random_scene(rng, 8, 3);
    s.gaussians[0].mu[0] = 1.0 / 3.0;
    s.gaussians[1].m = 1e-300;

    const std::string text = scene_to_json_string(s);
    const SceneState r = scene_from_json_string(text);

    REQUIRE(r.gaussians.size() == s.gaussians.size());
    REQUIRE(r.trajectory.size() == s.trajectory.size());
    for (size_t i = 0; i < s.gaussians.size(); ++i)
        CHECK(gaussian_bits_equal(r.gaussians[i], s.gaussians[i]));
    for (size_t k = 0; k < s.trajectory.size(); ++k) {
        CHECK(r.trajectory[k].q_obj.vec() == s.trajectory[k].q_obj.vec());
        CHECK(r.trajectory[k].t_obj == s.trajectory[k].t_obj);
    }
    CHECK(r.centroid == s.centroid);
    for (int i = 0; i < s.shared.theta_s.count(); ++i)
        CHECK(r.shared.theta_s.coeffs[i] == s.shared.theta_s.coeffs[i]);
    for (int i = 0; i < s.shared.theta_d.count(); ++i)
        CHECK(r.shared.theta_d.coeffs[i] == s.shared.theta_d.coeffs[i]);

    CHECK(scene_to_json_string(r) == text);
    CHECK_THROWS_AS(scene_from_json_string("{not json"), io_error);
    CHECK_THROWS_AS(scene_from_json_string("{}"), invalid_input_error);
}

TEST_CASE("scene validation rejects malformed states") {
    Rng rng(39);
    SceneState s = random_scene(rng, 3, 2);
    validate_scene(s);

    SceneState bad = s;
    bad.gaussians[0].scale[0] = 0.0;
    CHECK_THROWS_AS(validate_scene(bad), invalid_input_error);

    bad = s;
    bad.gaussians[1].sigma = 1.5;
    CHECK_THROWS_AS(validate_scene(bad), invalid_input_error);

    bad = s;
    bad.trajectory[0].t_obj = Vec3(1, 0, 0);
    CHECK_THROWS_AS(validate_scene(bad), invalid_input_error);

    bad = s;
    bad.gaussians[0].mu[2] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(validate_scene(bad), invalid_input_error);
}

TEST_CASE("camera validation and serialization") {
    Camera cam;
    cam.width = 64;
    cam.height = 48;
    cam.K << 70, 0, 32, 0, 70, 24, 0, 0, 1;
    cam.R = rot_from_quat(Quat::from_axis_angle({0, 1, 0}, 0.3));
    cam.t = Vec3(0.1, -0.2, 2.0);
    validate_camera(cam);

    const Camera r = camera_from_json_string(camera_to_json_string(cam));
    CHECK(r.K == cam.K);
    CHECK(r.R == cam.R);
    CHECK(r.t == cam.t);
    CHECK(r.width == cam.width);

    Camera bad = cam;
    bad.K(1, 0) = 0.5;
    CHECK_THROWS_AS(validate_camera(bad), invalid_input_error);
    bad = cam;
    bad.R *= 1.01;
    CHECK_THROWS_AS(validate_camera(bad), invalid_input_error);
}

TEST_CASE("pixel ray matches intrinsics") {
    Camera cam;
    cam.width = 8;
    cam.height = 8;
    cam.K << 50, 0, 4, 0, 50, 4, 0, 0, 1;
    // Center pixel dir passes through the principal point.
    const Vec3 d = cam.pixel_dir_cam(3.5, 3.5);
    CHECK((d - Vec3(0, 0, 1)).norm() < 1e-15);
    const Vec3 d2 = cam.pixel_dir_cam(5.5, 3.5);
    CHECK(d2.x() == doctest::Approx(2.0 / 50.0));
    CHECK(d2.z() == 1.0);
}
