#pragma once

#include <optional>
#include <string>
#include <vector>

#include "orbitsplat/losses.hpp"
#include "orbitsplat/mesh.hpp"
#include "orbitsplat/scene.hpp"

namespace osp {

enum class ObjectPreset { kSphere, kBox, kBlob };

ObjectPreset preset_from_string(const std::string& name);
std::string preset_to_string(ObjectPreset preset);

// Recipe for a synthetic orbit capture: a textured object spinning in place
// about a fixed axis, watched by a static ring of cameras over a static
// background.
struct SceneSpec {
    ObjectPreset preset = ObjectPreset::kSphere;
    int splat_count = 2500;  // foreground target; presets may cull a few
    int n_views = 4;
    int n_test_views = 3;  // held-out cameras between neighboring training views
    int n_timesteps = 29;
    double step_deg = 12.9;  // per-frame rotation about rotation_axis
    Vec3 rotation_axis{0.35, 1.0, 0.25};
    int image_size = 64;
    double focal_scale = 1.3;  // focal length in pixels = focal_scale * image_size
    double camera_radius = 2.3;
    double camera_height = 0.7;
    std::uint64_t seed = 1;
    bool textured = true;    // high-frequency procedural albedo vs flat gray
    bool background = true;  // static floor splats with m = 0
    // Environment radiance: the built-in procedural sky by default, overridden
    // by an SH radiance field, which in turn loses to an equirectangular map.
    std::optional<SHCoefficients> env_sh;
    std::optional<EnvMap> env_map;
};

void validate_spec(const SceneSpec& spec);

std::string spec_to_json_string(const SceneSpec& spec);
SceneSpec spec_from_json_string(const std::string& text);

// One camera's view of one timestep. rgb is linear radiance; mask is the
// object-only coverage; the priors are valid where the full render's alpha
// clears 0.5 and zeroed elsewhere.
struct ViewFrame {
    std::vector<Vec3> rgb;
    std::vector<double> mask;
    PriorMaps priors;
};

struct Dataset {
    int width = 0, height = 0;
    std::vector<Camera> cameras;
    std::vector<std::vector<ViewFrame>> frames;  // [view][timestep]
    std::vector<Camera> test_cameras;
    std::vector<std::vector<ViewFrame>> test_frames;
    std::vector<ObjectPose> gt_trajectory;
    SceneState gt_scene;  // gaussians empty when ground truth is absent
    TriMesh gt_mesh;
    double object_extent = 0.0;  // longest side of the GT mesh bounding box
    std::optional<SceneSpec> spec;

    int n_views() const { return int(cameras.size()); }
    int n_timesteps() const { return frames.empty() ? 0 : int(frames[0].size()); }
};

// Evaluates the spec's environment radiance along a world direction.
Vec3 environment_radiance(const SceneSpec& spec, const Vec3& dir);

// Ground-truth object (plus optional background) as a renderable scene, with
// shared appearance fitted from the environment and the object's surface mesh
// for geometric evaluation.
SceneState make_gt_scene(const SceneSpec& spec, TriMesh* gt_mesh = nullptr);

Camera make_ring_camera(const SceneSpec& spec, double azimuth_rad);

Dataset generate_dataset(const SceneSpec& spec);

// Directory layout: images/{v}_{t}.ppm (plus lossless .f32 sidecars),
// depth/{v}_{t}.f32, normal/{v}_{t}.f32, mask/{v}_{t}.ppm + .f32,
// cameras.json, trajectory_gt.json, scene_gt.json, spec.json. Test cameras
// use the same layout under test_images/ etc.
void save_dataset(const std::string& dir, const Dataset& dataset);
Dataset load_dataset(const std::string& dir);

}  // namespace osp
