#include <doctest.h>

#include "orbitsplat/image_io.hpp"
#include "orbitsplat/parallel.hpp"
#include "orbitsplat/render.hpp"
#include "test_util.hpp"

using namespace osp;
using test::random_unit;

namespace {

Camera make_camera(int size, double focal, const Vec3& pos, const Vec3& target) {
    Camera cam;
    cam.width = size;
    cam.height = size;
    cam.K << focal, 0, size / 2.0 + 0.5, 0, focal, size / 2.0 + 0.5, 0, 0, 1;
    // Look-at: +z toward target, +y down-ish world -z.
    const Vec3 fwd = (target - pos).normalized();
    Vec3 up(0, 0, 1);
    if (std::abs(fwd.dot(up)) > 0.95) up = Vec3(0, 1, 0);
    const Vec3 right = fwd.cross(up).normalized();
    const Vec3 down = fwd.cross(right).normalized();
    Mat3 r_wc;
    r_wc.row(0) = right.transpose();
    r_wc.row(1) = down.transpose();
    r_wc.row(2) = fwd.transpose();
    cam.R = r_wc;
    cam.t = -(r_wc * pos);
    return cam;
}

SceneState empty_scene() {
    SceneState s;
    s.trajectory.push_back(ObjectPose{});
    return s;
}

void set_dc_color(GaussianPrimitive& g, const Vec3& c) {
    g.sh = SHCoefficients::zeros(kGaussianShOrder);
    g.sh.coeffs[0] = c / 0.28209479177387814;
}

// Small mixed scene in front of a camera at the origin looking +z.
SceneState fd_scene(Rng& rng, int n_splats) {
    SceneState s;
    for (int i = 0; i < n_splats; ++i) {
        GaussianPrimitive g;
        g.mu = Vec3(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                    2.0 + 0.6 * rng.uniform());
        // Mild tilt keeps rays well away from the parallel-plane cutoff.
        g.q = Quat::from_axis_angle(random_unit(rng), rng.uniform(-0.5, 0.5));
        g.scale = Vec2(0.25 + 0.2 * rng.uniform(), 0.25 + 0.2 * rng.uniform());
        g.sigma = 0.3 + 0.5 * rng.uniform();
        g.m = 0.2 + 0.6 * rng.uniform();
        for (auto& c : g.sh.coeffs)
            c = Vec3(rng.normal(), rng.normal(), rng.normal()) * 0.2;
        g.sh.coeffs[0] += Vec3(1.5, 1.2, 1.0);
        g.k_d = Vec3(0.3 + 0.4 * rng.uniform(), 0.3 + 0.4 * rng.uniform(),
                     0.3 + 0.4 * rng.uniform());
        s.gaussians.push_back(g);
    }
    s.trajectory.push_back(ObjectPose{});
    ObjectPose p;
    p.q_obj = Quat::from_axis_angle(Vec3(0.2, 1.0, 0.1).normalized(), 0.25);
    p.t_obj = Vec3(0.05, -0.04, 0.03);
    s.trajectory.push_back(p);
    s.centroid = object_centroid(s.gaussians);
    for (auto& c : s.shared.theta_s.coeffs)
        c = Vec3(rng.normal(), rng.normal(), rng.normal()) * 0.1;
    for (auto& c : s.shared.theta_d.coeffs)
        c = Vec3(rng.normal(), rng.normal(), rng.normal()) * 0.1;
    s.shared.theta_d.coeffs[0] += Vec3(1.0, 1.0, 1.0);
    return s;
}

struct LossWeightsImg {
    std::vector<Vec3> rgb, normal;
    std::vector<double> depth, alpha, mask;
};

LossWeightsImg make_weights(Rng& rng, const RenderBuffers& base) {
    LossWeightsImg w;
    const int np = base.pixels();
    w.rgb.resize(np);
    w.normal.assign(np, Vec3::Zero());
    w.depth.assign(np, 0.0);
    w.alpha.resize(np);
    w.mask.resize(np);
    for (int p = 0; p < np; ++p) {
        w.rgb[p] = Vec3(rng.normal(), rng.normal(), rng.normal());
        w.alpha[p] = rng.normal();
        w.mask[p] = rng.normal();
        // Depth/normal supervision only where the surface is solid, mirroring
        // the validity threshold the losses use.
        if (base.alpha[p] > 0.5) {
            w.depth[p] = rng.normal();
            w.normal[p] = Vec3(rng.normal(), rng.normal(), rng.normal());
        }
    }
    return w;
}

double scalar_loss(const RenderBuffers& b, const LossWeightsImg& w) {
    double acc = 0.0;
    for (int p = 0; p < b.pixels(); ++p) {
        acc += w.rgb[p].dot(b.rgb[p]);
        acc += w.depth[p] * b.depth[p];
        acc += w.normal[p].dot(b.normal[p]);
        acc += w.alpha[p] * b.alpha[p];
        acc += w.mask[p] * b.mask[p];
    }
    return acc;
}

BufferGrads to_upstream(const LossWeightsImg& w) {
    BufferGrads g;
    g.rgb = w.rgb;
    g.depth = w.depth;
    g.normal = w.normal;
    g.alpha = w.alpha;
    g.mask = w.mask;
    return g;
}

}  // namespace

TEST_CASE("empty scene renders background") {
    const SceneState s = empty_scene();
    const Camera cam = make_camera(16, 20, Vec3(0, -2, 0), Vec3(0, 0, 0));
    const RenderBuffers b = render(s, cam, 0, AppearanceMode::kBodyFrameSH);
    for (int p = 0; p < b.pixels(); ++p) {
        CHECK(b.rgb[p] == Vec3::Zero());
        CHECK(b.alpha[p] == 0.0);
    }
}

TEST_CASE("single centered splat saturates to the alpha clamp") {
    SceneState s = empty_scene();
    GaussianPrimitive g;
    g.mu = Vec3(0, 0, 2);
    g.scale = Vec2(0.5, 0.5);
    g.sigma = 1.0;
    set_dc_color(g, Vec3(1, 1, 1));
    s.gaussians.push_back(g);

    Camera cam;
    cam.width = cam.height = 32;
    cam.K << 40, 0, 16.5, 0, 40, 16.5, 0, 0, 1;
    const RenderBuffers b = render(s, cam, 0, AppearanceMode::kBodyFrameSH);
    // Pixel (16,16) ray passes exactly through the splat center.
    CHECK(b.alpha[16 * 32 + 16] == kAlphaMax);
    CHECK(b.depth[16 * 32 + 16] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("occlusion keeps the nearer opaque splat") {
    SceneState s = empty_scene();
    GaussianPrimitive red;
    red.mu = Vec3(0, 0, 1);
    red.scale = Vec2(1.0, 1.0);
    red.sigma = 1.0;
    set_dc_color(red, Vec3(1, 0, 0));
    GaussianPrimitive green = red;
    green.mu = Vec3(0, 0, 2);
    set_dc_color(green, Vec3(0, 1, 0));
    s.gaussians.push_back(green);  // insertion order must not matter
    s.gaussians.push_back(red);

    Camera cam;
    cam.width = cam.height = 32;
    cam.K << 40, 0, 16.5, 0, 40, 16.5, 0, 0, 1;
    const RenderBuffers b = render(s, cam, 0, AppearanceMode::kBodyFrameSH);
    const Vec3 c = b.rgb[16 * 32 + 16];
    CHECK((c - Vec3(1, 0, 0)).cwiseAbs().maxCoeff() < 1.0 / 255.0);
}

TEST_CASE("mask channel equals alpha when fully masked and opaque") {
    Rng rng(52);
    SceneState s = fd_scene(rng, 6);
    for (auto& g : s.gaussians) {
        g.m = 1.0;
        g.sigma = 1.0;
    }
    s.centroid = object_centroid(s.gaussians);
    const Camera cam = make_camera(32, 40, Vec3(0, 0, 0), Vec3(0, 0, 1));
    const RenderBuffers b = render(s, cam, 1, AppearanceMode::kBodyFrameSH);
    for (int p = 0; p < b.pixels(); ++p)
        CHECK(std::abs(b.mask[p] - b.alpha[p]) < 1e-12);
}

TEST_CASE("adding a splat never decreases alpha") {
    Rng rng(53);
    SceneState s = fd_scene(rng, 5);
    const Camera cam = make_camera(32, 40, Vec3(0, 0, 0), Vec3(0, 0, 1));
    const RenderBuffers before = render(s, cam, 1, AppearanceMode::kBodyFrameSH);
    GaussianPrimitive extra = s.gaussians[0];
    extra.mu = Vec3(0.1, 0.1, 2.2);
    s.gaussians.push_back(extra);
    const RenderBuffers after = render(s, cam, 1, AppearanceMode::kBodyFrameSH);
    for (int p = 0; p < before.pixels(); ++p)
        CHECK(after.alpha[p] >= before.alpha[p] - 1e-15);
}

TEST_CASE("render is deterministic across thread counts") {
    Rng rng(54);
    const SceneState s = fd_scene(rng, 8);
    const Camera cam = make_camera(32, 40, Vec3(0, 0, 0), Vec3(0, 0, 1));

    set_thread_count(1);
    const RenderBuffers serial = render(s, cam, 1, AppearanceMode::kFactorized);
    set_thread_count(4);
    const RenderBuffers parallel = render(s, cam, 1, AppearanceMode::kFactorized);
    const RenderBuffers again = render(s, cam, 1, AppearanceMode::kFactorized);
    set_thread_count(1);

    REQUIRE(serial.records.size() == parallel.records.size());
    for (int p = 0; p < serial.pixels(); ++p) {
        CHECK(serial.rgb[p] == parallel.rgb[p]);
        CHECK(serial.depth[p] == parallel.depth[p]);
        CHECK(serial.normal[p] == parallel.normal[p]);
        CHECK(serial.alpha[p] == parallel.alpha[p]);
        CHECK(serial.mask[p] == parallel.mask[p]);
        CHECK(parallel.rgb[p] == again.rgb[p]);
    }
}

TEST_CASE("backward is deterministic across thread counts") {
    Rng rng(55);
    const SceneState s = fd_scene(rng, 8);
    const Camera cam = make_camera(32, 40, Vec3(0, 0, 0), Vec3(0, 0, 1));
    const RenderBuffers b = render(s, cam, 1, AppearanceMode::kFactorized);
    const LossWeightsImg w = make_weights(rng, b);
    const BufferGrads up = to_upstream(w);

    set_thread_count(1);
    const ParamGradients g1 = render_backward(s, cam, 1, AppearanceMode::kFactorized, b, up);
    set_thread_count(4);
    const ParamGradients g2 = render_backward(s, cam, 1, AppearanceMode::kFactorized, b, up);
    set_thread_count(1);
    for (size_t i = 0; i < g1.mu.size(); ++i) {
        CHECK(g1.mu[i] == g2.mu[i]);
        CHECK(g1.q[i] == g2.q[i]);
        CHECK(g1.scale[i] == g2.scale[i]);
        CHECK(g1.sigma[i] == g2.sigma[i]);
        CHECK(g1.m[i] == g2.m[i]);
        CHECK(g1.k_d[i] == g2.k_d[i]);
    }
    CHECK(g1.q_obj[1] == g2.q_obj[1]);
    CHECK(g1.t_obj[1] == g2.t_obj[1]);
    for (size_t i = 0; i < g1.theta_s.size(); ++i) CHECK(g1.theta_s[i] == g2.theta_s[i]);
}

TEST_CASE("depth buffer matches analytic plane intersection") {
    SceneState s = empty_scene();
    GaussianPrimitive g;
    g.mu = Vec3(0.1, -0.2, 4);
    g.q = Quat::from_axis_angle(Vec3(1, 1, 0).normalized(), 0.5);
    g.scale = Vec2(3, 3);
    g.sigma = 1.0;
    set_dc_color(g, Vec3(1, 1, 1));
    s.gaussians.push_back(g);

    Camera cam;
    cam.width = cam.height = 16;
    cam.K << 30, 0, 8.5, 0, 30, 8.5, 0, 0, 1;
    const RenderBuffers b = render(s, cam, 0, AppearanceMode::kBodyFrameSH);
    const Vec3 n = rot_from_quat(g.q).col(2);
    for (int y = 6; y <= 10; ++y)
        for (int x = 6; x <= 10; ++x) {
            const int p = y * 16 + x;
            if (b.alpha[p] < 0.5) continue;
            // World-frame line-plane solve (camera at origin, R = I).
            const Vec3 dir = cam.pixel_dir_cam(x, y);
            const double t_hit = n.dot(g.mu) / n.dot(dir);
            CHECK(b.depth[p] == doctest::Approx(t_hit).epsilon(1e-10));
            CHECK((b.normal[p] + n).norm() < 1e-9);  // n faces away from camera
        }
}

TEST_CASE("upstream zeros give exactly zero gradients") {
    Rng rng(56);
    const SceneState s = fd_scene(rng, 4);
    const Camera cam = make_camera(24, 30, Vec3(0, 0, 0), Vec3(0, 0, 1));
    const RenderBuffers b = render(s, cam, 1, AppearanceMode::kBodyFrameSH);
    BufferGrads up;  // all empty = zero
    const ParamGradients g = render_backward(s, cam, 1, AppearanceMode::kBodyFrameSH, b, up);
    for (const auto& v : g.mu) CHECK(v == Vec3::Zero());
    for (const auto& v : g.q) CHECK(v == Vec4::Zero());
    for (double v : g.sigma) CHECK(v == 0.0);
    for (double v : g.m) CHECK(v == 0.0);
    CHECK(g.q_obj[1] == Vec4::Zero());
}

TEST_CASE("backward rejects buffers from different inputs") {
    Rng rng(57);
    SceneState s = fd_scene(rng, 4);
    const Camera cam = make_camera(24, 30, Vec3(0, 0, 0), Vec3(0, 0, 1));
    const RenderBuffers b = render(s, cam, 1, AppearanceMode::kBodyFrameSH);
    s.gaussians[0].mu[0] += 0.01;
    BufferGrads up;
    CHECK_THROWS_AS(render_backward(s, cam, 1, AppearanceMode::kBodyFrameSH, b, up),
                    invalid_input_error);
}

TEST_CASE("moving a splat toward a pixel raises its coverage") {
    SceneState s = empty_scene();
    GaussianPrimitive g;
    g.mu = Vec3(-0.3, 0, 2);  // left of the central ray
    g.scale = Vec2(0.3, 0.3);
    g.sigma = 0.8;
    set_dc_color(g, Vec3(1, 0, 0));
    s.gaussians.push_back(g);
    Camera cam;
    cam.width = cam.height = 32;
    cam.K << 40, 0, 16.5, 0, 40, 16.5, 0, 0, 1;
    const RenderBuffers b = render(s, cam, 0, AppearanceMode::kBodyFrameSH);
    BufferGrads up;
    up.rgb.assign(b.pixels(), Vec3::Zero());
    up.rgb[16 * 32 + 16] = Vec3(1, 0, 0);  // L = red channel at center pixel
    const ParamGradients grad =
        render_backward(s, cam, 0, AppearanceMode::kBodyFrameSH, b, up);
    CHECK(grad.mu[0][0] > 0.0);
}

static void run_fd_suite(AppearanceMode mode, unsigned seed) {
    Rng rng(seed);
    SceneState s = fd_scene(rng, 8);
    const Camera cam = make_camera(32, 40, Vec3(0, 0, 0), Vec3(0, 0, 1));
    const int t = 1;
    const RenderBuffers base = render(s, cam, t, mode);
    Rng wrng(seed + 1);
    const LossWeightsImg w = make_weights(wrng, base);
    const ParamGradients g = render_backward(s, cam, t, mode, base, to_upstream(w));
    CHECK(g.first_non_finite().empty());

    const double h = 1e-5;
    int checked = 0, skipped = 0;
    auto fd_check = [&](double analytic, auto&& mutate) {
        SceneState sp = s, sm = s;
        mutate(sp, +h);
        mutate(sm, -h);
        const RenderBuffers bp = render(sp, cam, t, mode);
        const RenderBuffers bm = render(sm, cam, t, mode);
        // A record-count change means the probe crossed the per-pixel alpha
        // cull, where the image is intentionally discontinuous; central
        // differences are meaningless across that edge.
        if (bp.records.size() != base.records.size() ||
            bm.records.size() != base.records.size()) {
            ++skipped;
            return;
        }
        const double v = (scalar_loss(bp, w) - scalar_loss(bm, w)) / (2 * h);
        ++checked;
        CHECK_CLOSE(analytic, v, 1e-6, 1e-3);
    };

    const int n = int(s.gaussians.size());
    double max_abs_mu = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < 3; ++k) {
            fd_check(g.mu[i][k],
                     [&](SceneState& sc, double d) { sc.gaussians[i].mu[k] += d; });
            max_abs_mu = std::max(max_abs_mu, std::abs(g.mu[i][k]));
        }
        for (int k = 0; k < 4; ++k)
            fd_check(g.q[i][k], [&](SceneState& sc, double d) {
                Vec4 q = sc.gaussians[i].q.vec();
                q[k] += d;
                sc.gaussians[i].q = Quat(q);
            });
        for (int k = 0; k < 2; ++k)
            fd_check(g.scale[i][k],
                     [&](SceneState& sc, double d) { sc.gaussians[i].scale[k] += d; });
        fd_check(g.sigma[i], [&](SceneState& sc, double d) { sc.gaussians[i].sigma += d; });
        fd_check(g.m[i], [&](SceneState& sc, double d) { sc.gaussians[i].m += d; });
        if (mode == AppearanceMode::kBodyFrameSH) {
            for (int ci = 0; ci < s.gaussians[i].sh.count(); ++ci)
                for (int ch = 0; ch < 3; ++ch)
                    fd_check(g.sh[size_t(i) * s.gaussians[i].sh.count() + ci][ch],
                             [&](SceneState& sc, double d) {
                                 sc.gaussians[i].sh.coeffs[ci][ch] += d;
                             });
        } else {
            for (int ch = 0; ch < 3; ++ch)
                fd_check(g.k_d[i][ch],
                         [&](SceneState& sc, double d) { sc.gaussians[i].k_d[ch] += d; });
        }
    }
    CHECK(max_abs_mu > 0.0);  // the image actually depends on positions

    for (int k = 0; k < 4; ++k)
        fd_check(g.q_obj[t][k], [&](SceneState& sc, double d) {
            Vec4 q = sc.trajectory[t].q_obj.vec();
            q[k] += d;
            sc.trajectory[t].q_obj = Quat(q);
        });
    for (int k = 0; k < 3; ++k)
        fd_check(g.t_obj[t][k],
                 [&](SceneState& sc, double d) { sc.trajectory[t].t_obj[k] += d; });
    if (mode == AppearanceMode::kFactorized) {
        // Spot-check the shared appearance fields across all bands.
        Rng pick(seed + 2);
        for (int rep = 0; rep < 40; ++rep) {
            const int ci = pick.uniform_int(int(g.theta_s.size()));
            const int ch = pick.uniform_int(3);
            fd_check(g.theta_s[ci][ch], [&](SceneState& sc, double d) {
                sc.shared.theta_s.coeffs[ci][ch] += d;
            });
        }
        for (int ci = 0; ci < int(g.theta_d.size()); ++ci) {
            const int ch = ci % 3;
            fd_check(g.theta_d[ci][ch], [&](SceneState& sc, double d) {
                sc.shared.theta_d.coeffs[ci][ch] += d;
            });
        }
    }
    CHECK(checked > (mode == AppearanceMode::kBodyFrameSH ? 400 : 150));
    CHECK(skipped < 25);
}

TEST_CASE("analytic gradients match finite differences (body-frame sh)") {
    run_fd_suite(AppearanceMode::kBodyFrameSH, 61);
}

TEST_CASE("analytic gradients match finite differences (factorized)") {
    run_fd_suite(AppearanceMode::kFactorized, 63);
}

TEST_CASE("foreground-only rendering matches the filtered scene") {
    Rng rng(58);
    SceneState s = fd_scene(rng, 8);
    for (size_t i = 0; i < s.gaussians.size(); ++i)
        s.gaussians[i].m = (i % 2 == 0) ? 0.9 : 0.1;
    s.centroid = object_centroid(s.gaussians);
    const Camera cam = make_camera(24, 30, Vec3(0, 0, 0), Vec3(0, 0, 1));
    RenderOptions fg;
    fg.foreground_only = true;
    const RenderBuffers a = render(s, cam, 1, AppearanceMode::kBodyFrameSH, fg);

    SceneState filtered = s;
    filtered.gaussians.clear();
    for (const auto& g : s.gaussians)
        if (g.m >= 0.5) filtered.gaussians.push_back(g);
    const RenderBuffers b = render(filtered, cam, 1, AppearanceMode::kBodyFrameSH);
    for (int p = 0; p < a.pixels(); ++p) {
        CHECK(a.alpha[p] == b.alpha[p]);
        CHECK(a.rgb[p] == b.rgb[p]);
    }
}

TEST_CASE("ppm round trip and srgb transfer") {
    Rng rng(59);
    std::vector<Vec3> img(16 * 8);
    for (auto& c : img) c = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
    const std::string path = "/tmp/osp_test_img.ppm";
    save_ppm(path, img, 16, 8);
    const PpmImage back = load_ppm(path);
    REQUIRE(back.width == 16);
    REQUIRE(back.height == 8);
    // 8-bit quantization in sRGB space: reconstruction error below one step.
    for (size_t i = 0; i < img.size(); ++i)
        for (int k = 0; k < 3; ++k) {
            const double a = linear_to_srgb(img[i][k]);
            const double b = linear_to_srgb(back.rgb[i][k]);
            CHECK(std::abs(a - b) <= 0.5 / 255.0 + 1e-9);
        }
    CHECK(linear_to_srgb(srgb_to_linear(0.73)) == doctest::Approx(0.73).epsilon(1e-12));
    std::remove(path.c_str());

    std::vector<double> vals = {1.25, -3.5, 0.0, 1e-4};
    save_f32("/tmp/osp_test.f32", vals.data(), vals.size());
    const auto rvals = load_f32("/tmp/osp_test.f32", 4);
    for (int i = 0; i < 4; ++i) CHECK(rvals[i] == doctest::Approx(vals[i]).epsilon(1e-7));
    CHECK_THROWS_AS(load_f32("/tmp/osp_test.f32", 5), io_error);
    std::remove("/tmp/osp_test.f32");
}
