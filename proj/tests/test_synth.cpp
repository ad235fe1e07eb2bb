#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "orbitsplat/dataset.hpp"
#include "orbitsplat/losses.hpp"
#include "orbitsplat/metrics.hpp"
#include "orbitsplat/render.hpp"
#include "test_util.hpp"

using namespace osp;

namespace {

SceneSpec small_spec() {
    SceneSpec spec;
    spec.splat_count = 400;
    spec.image_size = 48;
    spec.n_timesteps = 4;
    return spec;
}

const Dataset& small_dataset() {
    static const Dataset ds = generate_dataset(small_spec());
    return ds;
}

std::vector<Vec3> random_image(Rng& rng, int n) {
    std::vector<Vec3> img(n);
    for (auto& c : img) c = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
    return img;
}

// Direct 11x11 windowed SSIM, written against the definition.
double direct_masked_ssim(const std::vector<Vec3>& a, const std::vector<Vec3>& b, int w,
                          int h, const std::vector<double>& mask) {
    double win[11][11];
    double wsum = 0.0;
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
            const double dx = i - 5, dy = j - 5;
            win[i][j] = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
            wsum += win[i][j];
        }
    for (auto& row : win)
        for (double& v : row) v /= wsum;

    double acc = 0.0;
    int count = 0;
    for (int py = 0; py < h; ++py)
        for (int px = 0; px < w; ++px) {
            if (mask[size_t(py) * w + px] < 0.5) continue;
            double s3 = 0.0;
            for (int c = 0; c < 3; ++c) {
                double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
                for (int i = 0; i < 11; ++i)
                    for (int j = 0; j < 11; ++j) {
                        const int qx = std::clamp(px + j - 5, 0, w - 1);
                        const int qy = std::clamp(py + i - 5, 0, h - 1);
                        const double xv = a[size_t(qy) * w + qx][c];
                        const double yv = b[size_t(qy) * w + qx][c];
                        mx += win[i][j] * xv;
                        my += win[i][j] * yv;
                        sxx += win[i][j] * xv * xv;
                        syy += win[i][j] * yv * yv;
                        sxy += win[i][j] * xv * yv;
                    }
                const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
                s3 += (2 * mx * my + 1e-4) * (2 * cxy + 9e-4) /
                      ((mx * mx + my * my + 1e-4) * (vx + vy + 9e-4));
            }
            acc += s3 / 3.0;
            ++count;
        }
    return acc / count;
}

TriMesh rotated(const TriMesh& mesh, const Quat& q) {
    TriMesh out = mesh;
    for (auto& v : out.vertices) v = quat_rotate(q, v);
    return out;
}

}  // namespace

TEST_CASE("trajectory steps match the configured rotation and reruns are bit-identical") {
    const Dataset& ds = small_dataset();
    REQUIRE(ds.gt_trajectory.size() == 4);
    CHECK(ds.gt_trajectory[0].is_identity());
    for (size_t t = 1; t < ds.gt_trajectory.size(); ++t) {
        CHECK(std::abs(quat_angle_deg(ds.gt_trajectory[t - 1].q_obj,
                                      ds.gt_trajectory[t].q_obj) -
                       12.9) < 1e-9);
        CHECK(ds.gt_trajectory[t].t_obj.norm() == 0.0);
    }

    const Dataset again = generate_dataset(small_spec());
    REQUIRE(again.n_views() == ds.n_views());
    REQUIRE(again.n_timesteps() == ds.n_timesteps());
    for (int v = 0; v < ds.n_views(); ++v)
        for (int t = 0; t < ds.n_timesteps(); ++t) {
            const ViewFrame& a = ds.frames[v][t];
            const ViewFrame& b = again.frames[v][t];
            for (size_t p = 0; p < a.rgb.size(); ++p) {
                CHECK(a.rgb[p] == b.rgb[p]);
                CHECK(a.mask[p] == b.mask[p]);
                CHECK(a.priors.depth[p] == b.priors.depth[p]);
            }
        }
}

TEST_CASE("single-timestep spec produces a static dataset") {
    SceneSpec spec = small_spec();
    spec.n_timesteps = 1;
    spec.splat_count = 150;
    const Dataset ds = generate_dataset(spec);
    CHECK(ds.n_timesteps() == 1);
    REQUIRE(ds.gt_trajectory.size() == 1);
    CHECK(ds.gt_trajectory[0].is_identity());

    SceneSpec bad = spec;
    bad.n_views = 1;
    CHECK_THROWS_AS(generate_dataset(bad), invalid_input_error);
    bad = spec;
    bad.n_timesteps = 0;
    CHECK_THROWS_AS(generate_dataset(bad), invalid_input_error);
}

TEST_CASE("oracle mask equals the alpha of the object-only scene") {
    const Dataset& ds = small_dataset();
    SceneState object_only = ds.gt_scene;
    std::erase_if(object_only.gaussians,
                  [](const GaussianPrimitive& g) { return g.m < 0.5; });
    for (int v = 0; v < ds.n_views(); ++v) {
        const RenderBuffers b =
            render(object_only, ds.cameras[v], 1, AppearanceMode::kFactorized);
        for (size_t p = 0; p < b.alpha.size(); ++p)
            CHECK(std::abs(b.alpha[p] - ds.frames[v][1].mask[p]) <= 1e-6);
    }
}

TEST_CASE("ground-truth dataset is self-consistent under its own renderer") {
    const Dataset& ds = small_dataset();
    const int w = ds.width, h = ds.height;
    for (int v : {0, 2}) {
        const ViewFrame& f = ds.frames[v][2];
        const RenderBuffers b =
            render(ds.gt_scene, ds.cameras[v], 2, AppearanceMode::kFactorized);

        CHECK(rgb_loss(b.rgb, f.rgb, w, h).loss == 0.0);
        const PriorLossResult pl = prior_losses(b, f.priors);
        CHECK(pl.depth_term <= 1e-12);
        CHECK(pl.normal_term <= 1e-12);

        const std::vector<double> all(size_t(w) * h, 1.0);
        CHECK(psnr(b.rgb, f.rgb, all) == 100.0);
        CHECK(l1_error(b.rgb, f.rgb, all) == 0.0);
        CHECK(masked_ssim(b.rgb, f.rgb, w, h, all) == doctest::Approx(1.0).epsilon(1e-12));
    }

    std::vector<double> gt_masks;
    for (const auto& g : ds.gt_scene.gaussians) gt_masks.push_back(g.m);
    CHECK(entropy_loss(gt_masks).loss == 0.0);

    // Interior of the silhouette is covered and carries valid priors.
    const ViewFrame& f0 = ds.frames[0][0];
    const size_t center = size_t(h / 2) * w + w / 2;
    CHECK(f0.mask[center] > 0.99);
    CHECK(f0.priors.depth_valid[center] == 1);
    CHECK(std::abs(f0.priors.normal[center].norm() - 1.0) < 1e-9);
    CHECK(chamfer(ds.gt_mesh, ds.gt_mesh, 20000, 3) < 1e-6);
}

TEST_CASE("psnr, l1 and ssim match direct formulas inside the mask") {
    const int w = 24, h = 16;
    Rng rng(91);
    const std::vector<Vec3> a = random_image(rng, w * h);
    const std::vector<double> all(size_t(w) * h, 1.0);

    CHECK(psnr(a, a, all) == 100.0);
    CHECK(l1_error(a, a, all) == 0.0);
    CHECK(masked_ssim(a, a, w, h, all) == doctest::Approx(1.0).epsilon(1e-12));

    std::vector<Vec3> shifted = a;
    for (auto& v : shifted) v.array() += 0.1;
    CHECK(l1_error(a, shifted, all) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(psnr(a, shifted, all) == doctest::Approx(20.0).epsilon(1e-9));

    const std::vector<Vec3> b = random_image(rng, w * h);
    std::vector<double> half(size_t(w) * h, 0.0);
    for (size_t p = 0; p < half.size(); ++p) half[p] = (p % w) < size_t(w) / 2 ? 1.0 : 0.0;
    for (const auto& mask : {all, half}) {
        double se = 0.0, ab = 0.0;
        size_t n = 0;
        for (size_t p = 0; p < a.size(); ++p) {
            if (mask[p] < 0.5) continue;
            ++n;
            se += (a[p] - b[p]).squaredNorm();
            ab += (a[p] - b[p]).cwiseAbs().sum();
        }
        CHECK(std::abs(psnr(a, b, mask) - 10.0 * std::log10(3.0 * n / se)) < 1e-10);
        CHECK(std::abs(l1_error(a, b, mask) - ab / (3.0 * n)) < 1e-10);
        CHECK(std::abs(masked_ssim(a, b, w, h, mask) -
                       direct_masked_ssim(a, b, w, h, mask)) < 1e-10);
    }

    const std::vector<double> none(size_t(w) * h, 0.0);
    CHECK_THROWS_AS(psnr(a, b, none), undefined_metric_error);
    CHECK_THROWS_AS(l1_error(a, b, none), undefined_metric_error);
    CHECK_THROWS_AS(masked_ssim(a, b, w, h, none), undefined_metric_error);
}

TEST_CASE("normal angular error statistics use nearest-rank percentiles") {
    const int n = 100;
    std::vector<Vec3> gt(n, Vec3(0, 0, 1)), pred = gt;
    std::vector<double> mask(n, 1.0);

    NormalErrorStats s = normal_angular_error(pred, gt, mask);
    CHECK(s.mean_deg == 0.0);
    CHECK(s.median_deg == 0.0);
    CHECK(s.p80_deg == 0.0);

    const Quat tilt = Quat::from_axis_angle({1, 0, 0}, deg2rad(10.0));
    for (auto& v : pred) v = quat_rotate(tilt, v);
    s = normal_angular_error(pred, gt, mask);
    CHECK(std::abs(s.mean_deg - 10.0) < 1e-9);
    CHECK(std::abs(s.median_deg - 10.0) < 1e-9);
    CHECK(std::abs(s.p80_deg - 10.0) < 1e-9);

    // 90 pixels at 5 degrees, 10 at 45: mean 9, median 5, P80 5.
    const Quat five = Quat::from_axis_angle({0, 1, 0}, deg2rad(5.0));
    const Quat wide = Quat::from_axis_angle({0, 1, 0}, deg2rad(45.0));
    for (int i = 0; i < n; ++i) pred[i] = quat_rotate(i < 90 ? five : wide, gt[i]);
    s = normal_angular_error(pred, gt, mask);
    CHECK(std::abs(s.mean_deg - 9.0) < 1e-9);
    CHECK(std::abs(s.median_deg - 5.0) < 1e-9);
    CHECK(std::abs(s.p80_deg - 5.0) < 1e-9);

    CHECK_THROWS_AS(normal_angular_error(pred, gt, std::vector<double>(n, 0.0)),
                    undefined_metric_error);
}

TEST_CASE("chamfer distance recovers analytic surface offsets") {
    const TriMesh unit = icosphere(1.0, 4);
    const TriMesh offset = icosphere(1.01, 4);
    CHECK(chamfer(unit, unit, 20000, 5) < 1e-6);

    const double cd = chamfer(unit, offset, 40000, 5);
    CHECK(cd > 0.009);
    CHECK(cd < 0.011);

    const double cd2 = chamfer(unit, offset, 80000, 5);
    CHECK(std::abs(cd2 - cd) / cd < 0.02);

    CHECK_THROWS_AS(chamfer(unit, TriMesh{}, 100, 1), undefined_metric_error);
}

TEST_CASE("mesh normal error matches a per-face brute-force oracle") {
    const TriMesh sphere = icosphere(1.0, 4);
    CHECK(mesh_normal_error(sphere, sphere, 20000, 7) < 0.5);

    // Comparing misaligned tessellations costs roughly the faceting angle, so
    // the symmetry check needs a tessellation fine enough to sit under 0.5 deg.
    const TriMesh fine = icosphere(1.0, 6);
    const Quat q = Quat::from_axis_angle(Vec3(1, 2, 3).normalized(), 0.6);
    CHECK(mesh_normal_error(fine, rotated(fine, q), 20000, 7) < 0.5);

    // Sphere samples vs the icosahedron: mean angle between the radial
    // direction and the nearest flat face, integrated by brute force.
    const TriMesh ico = icosahedron(1.0);
    const double measured = mesh_normal_error(sphere, ico, 40000, 7);

    const double golden = kPi * (3.0 - std::sqrt(5.0));
    const int nd = 20000;
    double oracle = 0.0;
    for (int i = 0; i < nd; ++i) {
        const double z = 1.0 - 2.0 * (i + 0.5) / nd;
        const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
        const Vec3 dir(rho * std::cos(golden * i), rho * std::sin(golden * i), z);
        double best = 1e30;
        int best_face = 0;
        for (size_t f = 0; f < ico.faces.size(); ++f) {
            const Vec3 cp = closest_point_on_triangle(dir, ico.vertices[ico.faces[f][0]],
                                                      ico.vertices[ico.faces[f][1]],
                                                      ico.vertices[ico.faces[f][2]]);
            const double d = (cp - dir).squaredNorm();
            if (d < best) {
                best = d;
                best_face = int(f);
            }
        }
        oracle += rad2deg(std::acos(std::clamp(dir.dot(ico.face_normal(best_face)), -1.0, 1.0)));
    }
    oracle /= nd;
    CHECK(std::abs(measured - oracle) / oracle < 0.05);
}

TEST_CASE("ring cameras aim at the origin with orthonormal rotations") {
    const SceneSpec spec = small_spec();
    for (double az : {0.0, 1.1, 2.0 * kPi * 0.75}) {
        const Camera cam = make_ring_camera(spec, az);
        CHECK((cam.R * cam.R.transpose() - Mat3::Identity()).norm() < 1e-12);
        CHECK(std::abs(cam.R.determinant() - 1.0) < 1e-12);
        const double d = std::sqrt(spec.camera_radius * spec.camera_radius +
                                   spec.camera_height * spec.camera_height);
        CHECK(std::abs(cam.position().norm() - d) < 1e-12);
        // The origin sits on the principal axis, in front of the camera.
        const Vec3 o = cam.to_camera(Vec3::Zero());
        CHECK(std::abs(o.x()) < 1e-12);
        CHECK(std::abs(o.y()) < 1e-12);
        CHECK(std::abs(o.z() - d) < 1e-12);
        // World-down maps to image-down.
        CHECK(cam.R.row(1).dot(Vec3(0, -1, 0)) > 0.0);
    }
}

TEST_CASE("dataset directory round trip preserves buffers and ground truth") {
    SceneSpec spec = small_spec();
    spec.n_timesteps = 2;
    spec.splat_count = 200;
    spec.image_size = 32;
    const Dataset ds = generate_dataset(spec);

    const auto dir =
        std::filesystem::temp_directory_path() / "osp_synth_roundtrip";
    std::filesystem::remove_all(dir);
    save_dataset(dir.string(), ds);
    const Dataset back = load_dataset(dir.string());

    REQUIRE(back.n_views() == ds.n_views());
    REQUIRE(back.n_timesteps() == ds.n_timesteps());
    REQUIRE(back.test_cameras.size() == ds.test_cameras.size());
    CHECK(back.width == ds.width);
    CHECK(back.object_extent == ds.object_extent);
    REQUIRE(back.spec.has_value());
    CHECK(back.spec->preset == spec.preset);
    CHECK(back.spec->seed == spec.seed);
    CHECK(back.spec->n_timesteps == spec.n_timesteps);

    for (int v = 0; v < ds.n_views(); ++v) {
        CHECK((back.cameras[v].K - ds.cameras[v].K).norm() == 0.0);
        CHECK((back.cameras[v].R - ds.cameras[v].R).norm() == 0.0);
        CHECK((back.cameras[v].t - ds.cameras[v].t).norm() == 0.0);
        for (int t = 0; t < ds.n_timesteps(); ++t) {
            const ViewFrame& a = ds.frames[v][t];
            const ViewFrame& b = back.frames[v][t];
            for (size_t p = 0; p < a.rgb.size(); ++p) {
                CHECK((a.rgb[p] - b.rgb[p]).cwiseAbs().maxCoeff() <= 1e-6);
                CHECK(std::abs(a.mask[p] - b.mask[p]) <= 1e-6);
                CHECK(std::abs(a.priors.depth[p] - b.priors.depth[p]) <= 1e-5);
                CHECK((a.priors.normal[p] - b.priors.normal[p]).cwiseAbs().maxCoeff() <=
                      1e-6);
                CHECK(a.priors.depth_valid[p] == b.priors.depth_valid[p]);
                CHECK(a.priors.normal_valid[p] == b.priors.normal_valid[p]);
            }
        }
    }

    REQUIRE(back.gt_trajectory.size() == ds.gt_trajectory.size());
    for (size_t t = 0; t < ds.gt_trajectory.size(); ++t) {
        CHECK(back.gt_trajectory[t].q_obj.vec() == ds.gt_trajectory[t].q_obj.vec());
        CHECK(back.gt_trajectory[t].t_obj == ds.gt_trajectory[t].t_obj);
    }
    REQUIRE(back.gt_scene.gaussians.size() == ds.gt_scene.gaussians.size());
    CHECK(back.gt_scene.gaussians[17].mu == ds.gt_scene.gaussians[17].mu);
    CHECK(back.gt_scene.centroid == ds.gt_scene.centroid);
    CHECK(back.gt_mesh.faces.size() == ds.gt_mesh.faces.size());

    CHECK_THROWS_AS(load_dataset((dir / "missing").string()), io_error);
    std::filesystem::remove_all(dir);
}
