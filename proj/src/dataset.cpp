#include "orbitsplat/dataset.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>

#include <json.hpp>

#include "orbitsplat/image_io.hpp"
#include "orbitsplat/render.hpp"
#include "orbitsplat/rng.hpp"

namespace osp {

using nlohmann::json;
namespace fs = std::filesystem;

ObjectPreset preset_from_string(const std::string& name) {
    if (name == "sphere") return ObjectPreset::kSphere;
    if (name == "box") return ObjectPreset::kBox;
    if (name == "blob") return ObjectPreset::kBlob;
    throw invalid_input_error("unknown object preset: " + name);
}

std::string preset_to_string(ObjectPreset preset) {
    switch (preset) {
        case ObjectPreset::kSphere: return "sphere";
        case ObjectPreset::kBox: return "box";
        case ObjectPreset::kBlob: return "blob";
    }
    throw invalid_input_error("unknown object preset value");
}

void validate_spec(const SceneSpec& spec) {
    if (spec.n_views < 2) throw invalid_input_error("scene spec: n_views must be >= 2");
    if (spec.n_timesteps < 1)
        throw invalid_input_error("scene spec: n_timesteps must be >= 1");
    if (spec.n_test_views < 0)
        throw invalid_input_error("scene spec: n_test_views must be >= 0");
    if (spec.splat_count < 8)
        throw invalid_input_error("scene spec: splat_count must be >= 8");
    if (spec.image_size < 8)
        throw invalid_input_error("scene spec: image_size must be >= 8");
    if (!std::isfinite(spec.step_deg))
        throw invalid_input_error("scene spec: step_deg must be finite");
    if (spec.rotation_axis.norm() < 1e-12)
        throw invalid_input_error("scene spec: rotation_axis must be nonzero");
    if (!(spec.focal_scale > 0.0) || !(spec.camera_radius > 0.0))
        throw invalid_input_error("scene spec: camera geometry must be positive");
    if (spec.env_sh && spec.env_sh->order > kSpecularOrder)
        throw invalid_input_error("scene spec: environment SH order exceeds the specular order");
    if (spec.env_map && (spec.env_map->width <= 0 || spec.env_map->height <= 0 ||
                         spec.env_map->rgb.size() !=
                             size_t(spec.env_map->width) * spec.env_map->height * 3))
        throw invalid_input_error("scene spec: malformed environment map");
}

namespace {

// Ambient plus two soft colored lobes; smooth enough for an order-9 projection
// yet directional enough that specular shading visibly moves with the object.
Vec3 procedural_sky(const Vec3& w) {
    static const Vec3 d1 = Vec3(0.4, 0.8, 0.45).normalized();
    static const Vec3 d2 = Vec3(-0.6, 0.35, -0.7).normalized();
    const double l1 = std::exp(14.0 * (w.dot(d1) - 1.0));
    const double l2 = std::exp(8.0 * (w.dot(d2) - 1.0));
    return Vec3::Constant(0.25) + l1 * Vec3(0.45, 0.40, 0.28) +
           l2 * Vec3(0.18, 0.24, 0.35);
}

// Band-scaled copy of the radiance field: irradiance / pi for a Lambertian
// reflector, using the clamped-cosine band gains (1, 2/3, 1/4, 0). Exact for
// the band-limited part of the environment.
SHCoefficients lambertian_bands(const SHCoefficients& radiance) {
    static constexpr double kBand[4] = {1.0, 2.0 / 3.0, 0.25, 0.0};
    SHCoefficients out = SHCoefficients::zeros(kDiffuseOrder);
    for (int l = 0; l <= kDiffuseOrder; ++l)
        for (int m = -l; m <= l; ++m) {
            const int idx = l * (l + 1) + m;
            if (idx < radiance.count()) out.coeffs[idx] = kBand[l] * radiance.coeffs[idx];
        }
    return out;
}

SharedAppearance fit_environment(const SceneSpec& spec) {
    SharedAppearance app;
    if (spec.env_sh && !spec.env_map) {
        app.theta_s = SHCoefficients::zeros(kSpecularOrder);
        for (int i = 0; i < spec.env_sh->count(); ++i)
            app.theta_s.coeffs[i] = spec.env_sh->coeffs[i];
    } else {
        app.theta_s = sh_project(
            [&](const Vec3& w) { return environment_radiance(spec, w); },
            kSpecularOrder);
    }
    app.theta_d = lambertian_bands(app.theta_s);
    return app;
}

Vec3 albedo_texture(const Vec3& p) {
    const auto wave = [](double v) { return 0.5 + 0.5 * std::sin(v); };
    return {0.05 + 0.9 * wave(23.0 * p.x() + 9.0 * p.y() - 4.0 * p.z()),
            0.05 + 0.9 * wave(17.0 * p.y() + 7.0 * p.z() + 2.0),
            0.05 + 0.9 * wave(19.0 * p.z() + 11.0 * p.x() + 5.0)};
}

Vec3 floor_albedo(const Vec3& p) {
    const int ix = int(std::floor(p.x() / 0.4));
    const int iz = int(std::floor(p.z() / 0.4));
    return ((ix + iz) & 1) == 0 ? Vec3(0.55, 0.52, 0.48) : Vec3(0.22, 0.24, 0.30);
}

void add_splat(std::vector<GaussianPrimitive>& out, const Vec3& p, const Vec3& n,
               double scale, double m, const Vec3& k_d) {
    GaussianPrimitive g;
    g.mu = p;
    g.q = quat_from_normal(n);
    g.scale = Vec2(scale, scale);
    g.sigma = 1.0;
    g.m = m;
    g.k_d = k_d;
    out.push_back(g);
}

void fibonacci_shell(std::vector<GaussianPrimitive>& out, const Vec3& center, double r,
                     int n, double scale, const std::function<Vec3(const Vec3&)>& albedo,
                     const std::function<bool(const Vec3&)>& keep = {}) {
    const double golden = kPi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n; ++i) {
        const double z = 1.0 - 2.0 * (i + 0.5) / n;
        const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = golden * double(i);
        const Vec3 nrm(rho * std::cos(phi), rho * std::sin(phi), z);
        const Vec3 p = center + r * nrm;
        if (keep && !keep(p)) continue;
        add_splat(out, p, nrm, scale, 1.0, albedo(p));
    }
}

TriMesh make_gt_mesh(const SceneSpec& spec) {
    switch (spec.preset) {
        case ObjectPreset::kSphere:
            return icosphere(0.5, 4);
        case ObjectPreset::kBox:
            return box_mesh({0.35, 0.25, 0.2});
        case ObjectPreset::kBlob: {
            const double r = 0.3;
            const Vec3 c0(-0.2, 0, 0), c1(0.2, 0, 0);
            TriMesh out;
            const auto append_culled = [&](const TriMesh& m, const Vec3& twin) {
                const int base = int(out.vertices.size());
                out.vertices.insert(out.vertices.end(), m.vertices.begin(),
                                    m.vertices.end());
                for (const auto& f : m.faces) {
                    const Vec3 c =
                        (m.vertices[f[0]] + m.vertices[f[1]] + m.vertices[f[2]]) / 3.0;
                    if ((c - twin).norm() < r) continue;
                    out.faces.push_back({f[0] + base, f[1] + base, f[2] + base});
                }
            };
            append_culled(icosphere(r, 4, c0), c1);
            append_culled(icosphere(r, 4, c1), c0);
            return out;
        }
    }
    throw invalid_input_error("unknown object preset value");
}

}  // namespace

Vec3 environment_radiance(const SceneSpec& spec, const Vec3& dir) {
    const Vec3 d = dir.normalized();
    if (spec.env_map) return spec.env_map->sample(d);
    if (spec.env_sh) return sh_eval(d, *spec.env_sh);
    return procedural_sky(d);
}

SceneState make_gt_scene(const SceneSpec& spec, TriMesh* gt_mesh) {
    validate_spec(spec);
    SceneState scene;
    scene.shared = fit_environment(spec);
    const auto albedo = [&](const Vec3& p) {
        return spec.textured ? albedo_texture(p) : Vec3(0.72, 0.70, 0.66);
    };

    auto& gs = scene.gaussians;
    switch (spec.preset) {
        case ObjectPreset::kSphere: {
            const double r = 0.5;
            const double s = 0.7 * std::sqrt(4.0 * kPi * r * r / spec.splat_count);
            fibonacci_shell(gs, Vec3::Zero(), r, spec.splat_count, s, albedo);
            break;
        }
        case ObjectPreset::kBox: {
            const TriMesh m = box_mesh({0.35, 0.25, 0.2});
            Rng rng(Rng::derive(spec.seed, 11));
            const double s = std::sqrt(m.area() / spec.splat_count);
            for (const auto& sm : sample_surface(m, spec.splat_count, rng))
                add_splat(gs, sm.p, sm.n, s, 1.0, albedo(sm.p));
            break;
        }
        case ObjectPreset::kBlob: {
            const double r = 0.3;
            const Vec3 c0(-0.2, 0, 0), c1(0.2, 0, 0);
            const int half = spec.splat_count / 2;
            const double s = 0.7 * std::sqrt(4.0 * kPi * r * r / half);
            fibonacci_shell(gs, c0, r, half, s, albedo,
                            [&](const Vec3& p) { return (p - c1).norm() >= r; });
            fibonacci_shell(gs, c1, r, half, s, albedo,
                            [&](const Vec3& p) { return (p - c0).norm() >= r; });
            break;
        }
    }

    // Per-splat DC warm start: the view-independent diffuse color at rest.
    const double y00 = 0.5 / std::sqrt(kPi);
    for (auto& g : gs) {
        const Vec3 diffuse =
            g.k_d.cwiseProduct(sh_eval(splat_normal(g), scene.shared.theta_d));
        g.sh.coeffs[0] = diffuse / y00;
    }

    if (spec.background) {
        const int grid = 18;
        const double span = 2.2;
        const double cell = 2.0 * span / grid;
        for (int i = 0; i < grid; ++i)
            for (int j = 0; j < grid; ++j) {
                const Vec3 p(-span + (i + 0.5) * cell, -0.8, -span + (j + 0.5) * cell);
                add_splat(gs, p, Vec3(0, 1, 0), 0.75 * cell, 0.0, floor_albedo(p));
            }
    }

    scene.trajectory.assign(1, ObjectPose{});
    scene.centroid = object_centroid(gs);
    validate_scene(scene);
    if (gt_mesh) *gt_mesh = make_gt_mesh(spec);
    return scene;
}

Camera make_ring_camera(const SceneSpec& spec, double azimuth_rad) {
    Camera cam;
    cam.width = cam.height = spec.image_size;
    const double f = spec.focal_scale * spec.image_size;
    cam.K << f, 0, spec.image_size / 2.0, 0, f, spec.image_size / 2.0, 0, 0, 1;
    const Vec3 pos(spec.camera_radius * std::sin(azimuth_rad), spec.camera_height,
                   -spec.camera_radius * std::cos(azimuth_rad));
    const Vec3 up(0, 1, 0);
    const Vec3 z = (-pos).normalized();  // aimed at the origin
    const Vec3 v = up - z * up.dot(z);
    if (v.norm() < 1e-9)
        throw degenerate_error("ring camera: view direction parallel to up");
    const Vec3 y = -v.normalized();
    const Vec3 x = y.cross(z);
    cam.R.row(0) = x;
    cam.R.row(1) = y;
    cam.R.row(2) = z;
    cam.t = -(cam.R * pos);
    validate_camera(cam);
    return cam;
}

Dataset generate_dataset(const SceneSpec& spec) {
    validate_spec(spec);
    Dataset ds;
    ds.width = ds.height = spec.image_size;
    ds.spec = spec;
    ds.gt_scene = make_gt_scene(spec, &ds.gt_mesh);

    const Vec3 axis = spec.rotation_axis.normalized();
    ds.gt_trajectory.resize(spec.n_timesteps);
    for (int t = 1; t < spec.n_timesteps; ++t)
        ds.gt_trajectory[t].q_obj =
            Quat::from_axis_angle(axis, deg2rad(spec.step_deg * t)).canonical();
    ds.gt_scene.trajectory = ds.gt_trajectory;

    Vec3 lo = Vec3::Constant(1e30), hi = Vec3::Constant(-1e30);
    for (const auto& v : ds.gt_mesh.vertices) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
    }
    ds.object_extent = (hi - lo).maxCoeff();

    for (int v = 0; v < spec.n_views; ++v)
        ds.cameras.push_back(make_ring_camera(spec, 2.0 * kPi * v / spec.n_views));
    for (int v = 0; v < spec.n_test_views; ++v)
        ds.test_cameras.push_back(
            make_ring_camera(spec, 2.0 * kPi * (v + 0.5) / spec.n_views));

    RenderOptions object_only;
    object_only.foreground_only = true;

    const auto render_frames = [&](const std::vector<Camera>& cams) {
        std::vector<std::vector<ViewFrame>> frames(cams.size());
        for (size_t v = 0; v < cams.size(); ++v) {
            frames[v].resize(spec.n_timesteps);
            for (int t = 0; t < spec.n_timesteps; ++t) {
                const RenderBuffers full =
                    render(ds.gt_scene, cams[v], t, AppearanceMode::kFactorized);
                const RenderBuffers obj = render(ds.gt_scene, cams[v], t,
                                                 AppearanceMode::kFactorized,
                                                 object_only);
                ViewFrame& f = frames[v][t];
                f.rgb = full.rgb;
                f.mask = obj.alpha;
                f.priors.width = cams[v].width;
                f.priors.height = cams[v].height;
                const size_t np = f.rgb.size();
                f.priors.depth.assign(np, 0.0);
                f.priors.depth_valid.assign(np, 0);
                f.priors.normal.assign(np, Vec3::Zero());
                f.priors.normal_valid.assign(np, 0);
                for (size_t p = 0; p < np; ++p) {
                    if (full.alpha[p] < 0.5) continue;
                    f.priors.depth[p] = full.depth[p];
                    f.priors.depth_valid[p] = 1;
                    f.priors.normal[p] = full.normal[p];
                    f.priors.normal_valid[p] = 1;
                }
            }
        }
        return frames;
    };
    ds.frames = render_frames(ds.cameras);
    ds.test_frames = render_frames(ds.test_cameras);
    return ds;
}

namespace {

json sh_to_json(const SHCoefficients& c) {
    json a = json::array();
    for (const auto& v : c.coeffs)
        for (int k = 0; k < 3; ++k) a.push_back(double_to_hex(v[k]));
    json j;
    j["order"] = c.order;
    j["coeffs"] = std::move(a);
    return j;
}

SHCoefficients sh_from_json(const json& j) {
    SHCoefficients c = SHCoefficients::zeros(j.at("order").get<int>());
    const json& a = j.at("coeffs");
    if (!a.is_array() || int(a.size()) != c.count() * 3)
        throw invalid_input_error("spec: bad SH coefficient array");
    for (int i = 0; i < c.count(); ++i)
        for (int k = 0; k < 3; ++k)
            c.coeffs[i][k] = double_from_hex(a[3 * i + k].get<std::string>());
    return c;
}

}  // namespace

std::string spec_to_json_string(const SceneSpec& spec) {
    json j;
    j["preset"] = preset_to_string(spec.preset);
    j["splat_count"] = spec.splat_count;
    j["n_views"] = spec.n_views;
    j["n_test_views"] = spec.n_test_views;
    j["n_timesteps"] = spec.n_timesteps;
    j["step_deg"] = spec.step_deg;
    j["rotation_axis"] = {spec.rotation_axis.x(), spec.rotation_axis.y(),
                          spec.rotation_axis.z()};
    j["image_size"] = spec.image_size;
    j["focal_scale"] = spec.focal_scale;
    j["camera_radius"] = spec.camera_radius;
    j["camera_height"] = spec.camera_height;
    j["seed"] = spec.seed;
    j["textured"] = spec.textured;
    j["background"] = spec.background;
    j["environment"] = spec.env_map ? "map" : (spec.env_sh ? "sh" : "procedural");
    if (spec.env_sh) j["env_sh"] = sh_to_json(*spec.env_sh);
    return j.dump(1);
}

SceneSpec spec_from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw invalid_input_error(std::string("spec: JSON parse failure: ") + e.what());
    }
    static const std::vector<std::string> known = {
        "preset",        "splat_count",  "n_views",     "n_test_views",
        "n_timesteps",   "step_deg",     "rotation_axis", "image_size",
        "focal_scale",   "camera_radius", "camera_height", "seed",
        "textured",      "background",   "environment", "env_sh"};
    for (const auto& item : j.items())
        if (std::find(known.begin(), known.end(), item.key()) == known.end())
            throw invalid_input_error("spec: unknown key " + item.key());

    SceneSpec spec;
    if (j.contains("preset")) spec.preset = preset_from_string(j["preset"].get<std::string>());
    if (j.contains("splat_count")) spec.splat_count = j["splat_count"].get<int>();
    if (j.contains("n_views")) spec.n_views = j["n_views"].get<int>();
    if (j.contains("n_test_views")) spec.n_test_views = j["n_test_views"].get<int>();
    if (j.contains("n_timesteps")) spec.n_timesteps = j["n_timesteps"].get<int>();
    if (j.contains("step_deg")) spec.step_deg = j["step_deg"].get<double>();
    if (j.contains("rotation_axis")) {
        const auto& a = j["rotation_axis"];
        if (!a.is_array() || a.size() != 3)
            throw invalid_input_error("spec: rotation_axis must have 3 entries");
        spec.rotation_axis = Vec3(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
    }
    if (j.contains("image_size")) spec.image_size = j["image_size"].get<int>();
    if (j.contains("focal_scale")) spec.focal_scale = j["focal_scale"].get<double>();
    if (j.contains("camera_radius")) spec.camera_radius = j["camera_radius"].get<double>();
    if (j.contains("camera_height")) spec.camera_height = j["camera_height"].get<double>();
    if (j.contains("seed")) spec.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("textured")) spec.textured = j["textured"].get<bool>();
    if (j.contains("background")) spec.background = j["background"].get<bool>();
    if (j.contains("env_sh")) spec.env_sh = sh_from_json(j["env_sh"]);
    // "environment": "map" has no inline payload; the caller restores the map
    // from its sidecar files when present.
    validate_spec(spec);
    return spec;
}

namespace {

std::string frame_name(int v, int t) {
    return std::to_string(v) + "_" + std::to_string(t);
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path);
    return std::string(std::istreambuf_iterator<char>(in),
                       std::istreambuf_iterator<char>());
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write " + path);
    out << text;
}

void save_frames(const std::string& dir, const std::string& prefix,
                 const std::vector<std::vector<ViewFrame>>& frames, int w, int h) {
    if (frames.empty()) return;
    for (const char* sub : {"images", "depth", "normal", "mask"})
        fs::create_directories(dir + "/" + prefix + sub);
    for (size_t v = 0; v < frames.size(); ++v)
        for (size_t t = 0; t < frames[v].size(); ++t) {
            const ViewFrame& f = frames[v][t];
            const std::string n = frame_name(int(v), int(t));
            const std::string base = dir + "/" + prefix;
            save_ppm(base + "images/" + n + ".ppm", f.rgb, w, h);
            save_f32_vec3(base + "images/" + n + ".f32", f.rgb);
            std::vector<Vec3> mask3(f.mask.size());
            for (size_t p = 0; p < f.mask.size(); ++p)
                mask3[p] = Vec3::Constant(f.mask[p]);
            save_ppm(base + "mask/" + n + ".ppm", mask3, w, h, false);
            save_f32(base + "mask/" + n + ".f32", f.mask.data(), f.mask.size());
            // Priors store zeros at invalid pixels; validity is depth > 0
            // (impossible for a real hit) and a non-degenerate normal.
            save_f32(base + "depth/" + n + ".f32", f.priors.depth.data(),
                     f.priors.depth.size());
            save_f32_vec3(base + "normal/" + n + ".f32", f.priors.normal);
        }
}

std::vector<std::vector<ViewFrame>> load_frames(const std::string& dir,
                                                const std::string& prefix, int n_views,
                                                int n_timesteps, int w, int h) {
    const size_t np = size_t(w) * h;
    std::vector<std::vector<ViewFrame>> frames(n_views);
    for (int v = 0; v < n_views; ++v) {
        frames[v].resize(n_timesteps);
        for (int t = 0; t < n_timesteps; ++t) {
            ViewFrame& f = frames[v][t];
            const std::string n = frame_name(v, t);
            const std::string base = dir + "/" + prefix;

            if (fs::exists(base + "images/" + n + ".f32")) {
                f.rgb = load_f32_vec3(base + "images/" + n + ".f32", np);
            } else {
                const PpmImage img = load_ppm(base + "images/" + n + ".ppm");
                if (img.width != w || img.height != h)
                    throw io_error("dataset: image size mismatch for " + n);
                f.rgb = img.rgb;
            }

            if (fs::exists(base + "mask/" + n + ".f32")) {
                f.mask = load_f32(base + "mask/" + n + ".f32", np);
            } else if (fs::exists(base + "mask/" + n + ".ppm")) {
                const PpmImage img = load_ppm(base + "mask/" + n + ".ppm", false);
                if (img.width != w || img.height != h)
                    throw io_error("dataset: mask size mismatch for " + n);
                f.mask.resize(np);
                for (size_t p = 0; p < np; ++p) f.mask[p] = img.rgb[p][0];
            } else {
                f.mask.assign(np, 1.0);
            }

            f.priors.width = w;
            f.priors.height = h;
            if (fs::exists(base + "depth/" + n + ".f32")) {
                f.priors.depth = load_f32(base + "depth/" + n + ".f32", np);
                f.priors.depth_valid.resize(np);
                for (size_t p = 0; p < np; ++p)
                    f.priors.depth_valid[p] = f.priors.depth[p] > 0.0 ? 1 : 0;
            } else {
                f.priors.depth.assign(np, 0.0);
                f.priors.depth_valid.assign(np, 0);
            }
            if (fs::exists(base + "normal/" + n + ".f32")) {
                f.priors.normal = load_f32_vec3(base + "normal/" + n + ".f32", np);
                f.priors.normal_valid.resize(np);
                for (size_t p = 0; p < np; ++p)
                    f.priors.normal_valid[p] = f.priors.normal[p].norm() > 0.5 ? 1 : 0;
            } else {
                f.priors.normal.assign(np, Vec3::Zero());
                f.priors.normal_valid.assign(np, 0);
            }
        }
    }
    return frames;
}

}  // namespace

void save_dataset(const std::string& dir, const Dataset& dataset) {
    if (dataset.cameras.empty() || dataset.frames.empty())
        throw invalid_input_error("save_dataset: dataset has no training frames");
    fs::create_directories(dir);

    json cams;
    cams["width"] = dataset.width;
    cams["height"] = dataset.height;
    cams["train"] = json::array();
    for (const auto& c : dataset.cameras)
        cams["train"].push_back(json::parse(camera_to_json_string(c)));
    cams["test"] = json::array();
    for (const auto& c : dataset.test_cameras)
        cams["test"].push_back(json::parse(camera_to_json_string(c)));
    write_text_file(dir + "/cameras.json", cams.dump(1));

    json traj;
    traj["poses"] = json::array();
    for (const auto& p : dataset.gt_trajectory) {
        json e;
        const Vec4 q = p.q_obj.vec();
        json qa = json::array(), ta = json::array();
        for (int i = 0; i < 4; ++i) qa.push_back(double_to_hex(q[i]));
        for (int i = 0; i < 3; ++i) ta.push_back(double_to_hex(p.t_obj[i]));
        e["q_obj"] = std::move(qa);
        e["t_obj"] = std::move(ta);
        traj["poses"].push_back(std::move(e));
    }
    if (!dataset.gt_trajectory.empty())
        write_text_file(dir + "/trajectory_gt.json", traj.dump(1));

    if (!dataset.gt_scene.gaussians.empty())
        save_scene(dir + "/scene_gt.json", dataset.gt_scene);
    if (dataset.spec) {
        write_text_file(dir + "/spec.json", spec_to_json_string(*dataset.spec));
        if (dataset.spec->env_map)
            save_envmap(*dataset.spec->env_map, dir + "/env_map.f32",
                        dir + "/env_map.json");
    }
    if (!dataset.gt_mesh.empty()) export_ply(dataset.gt_mesh, dir + "/mesh_gt.ply");

    save_frames(dir, "", dataset.frames, dataset.width, dataset.height);
    save_frames(dir, "test_", dataset.test_frames, dataset.width, dataset.height);
}

Dataset load_dataset(const std::string& dir) {
    if (!fs::exists(dir + "/cameras.json"))
        throw io_error("dataset: missing " + dir + "/cameras.json");
    json cams;
    try {
        cams = json::parse(read_text_file(dir + "/cameras.json"));
    } catch (const json::exception& e) {
        throw io_error(std::string("dataset: bad cameras.json: ") + e.what());
    }

    Dataset ds;
    ds.width = cams.at("width").get<int>();
    ds.height = cams.at("height").get<int>();
    for (const auto& e : cams.at("train"))
        ds.cameras.push_back(camera_from_json_string(e.dump()));
    if (cams.contains("test"))
        for (const auto& e : cams["test"])
            ds.test_cameras.push_back(camera_from_json_string(e.dump()));
    if (ds.cameras.empty()) throw io_error("dataset: no training cameras");

    if (fs::exists(dir + "/spec.json")) {
        SceneSpec spec = spec_from_json_string(read_text_file(dir + "/spec.json"));
        if (fs::exists(dir + "/env_map.f32") && fs::exists(dir + "/env_map.json"))
            spec.env_map = load_envmap(dir + "/env_map.f32", dir + "/env_map.json");
        ds.spec = std::move(spec);
        ds.gt_mesh = make_gt_mesh(*ds.spec);
        Vec3 lo = Vec3::Constant(1e30), hi = Vec3::Constant(-1e30);
        for (const auto& v : ds.gt_mesh.vertices) {
            lo = lo.cwiseMin(v);
            hi = hi.cwiseMax(v);
        }
        ds.object_extent = (hi - lo).maxCoeff();
    }

    if (fs::exists(dir + "/scene_gt.json"))
        ds.gt_scene = load_scene(dir + "/scene_gt.json");

    if (fs::exists(dir + "/trajectory_gt.json")) {
        const json traj = json::parse(read_text_file(dir + "/trajectory_gt.json"));
        for (const auto& e : traj.at("poses")) {
            ObjectPose p;
            const auto& qa = e.at("q_obj");
            const auto& ta = e.at("t_obj");
            if (qa.size() != 4 || ta.size() != 3)
                throw io_error("dataset: malformed trajectory entry");
            p.q_obj = Quat(double_from_hex(qa[0].get<std::string>()),
                           double_from_hex(qa[1].get<std::string>()),
                           double_from_hex(qa[2].get<std::string>()),
                           double_from_hex(qa[3].get<std::string>()));
            for (int i = 0; i < 3; ++i)
                p.t_obj[i] = double_from_hex(ta[i].get<std::string>());
            ds.gt_trajectory.push_back(p);
        }
    }

    int n_timesteps = int(ds.gt_trajectory.size());
    if (n_timesteps == 0) {
        while (fs::exists(dir + "/images/" + frame_name(0, n_timesteps) + ".f32") ||
               fs::exists(dir + "/images/" + frame_name(0, n_timesteps) + ".ppm"))
            ++n_timesteps;
        if (n_timesteps == 0) throw io_error("dataset: no frames found in " + dir);
    }

    ds.frames = load_frames(dir, "", int(ds.cameras.size()), n_timesteps, ds.width,
                            ds.height);
    if (!ds.test_cameras.empty() && fs::exists(dir + "/test_images"))
        ds.test_frames = load_frames(dir, "test_", int(ds.test_cameras.size()),
                                     n_timesteps, ds.width, ds.height);
    return ds;
}

}  // namespace osp
