#pragma once

#include <string>
#include <vector>

#include "orbitsplat/appearance.hpp"
#include "orbitsplat/math/quaternion.hpp"
#include "orbitsplat/math/sh.hpp"

namespace osp {

// Planar (2D) Gaussian splat. The two scale entries are the in-plane axis
// lengths; the splat normal is the third column of rot_from_quat(q).
struct GaussianPrimitive {
    Vec3 mu = Vec3::Zero();
    Quat q = Quat::identity();
    Vec2 scale = Vec2::Ones();
    double sigma = 1.0;  // opacity in [0,1]
    double m = 1.0;      // soft segmentation mask in [0,1]
    SHCoefficients sh = SHCoefficients::zeros(kGaussianShOrder);
    Vec3 k_d = Vec3::Zero();  // albedo for the factorized stage
};

inline Vec3 splat_normal(const GaussianPrimitive& g) {
    return rot_from_quat(g.q).col(2);
}

struct ObjectPose {
    Quat q_obj = Quat::identity();
    Vec3 t_obj = Vec3::Zero();

    bool is_identity() const {
        return std::abs(q_obj.w) == 1.0 && q_obj.x == 0.0 && q_obj.y == 0.0 &&
               q_obj.z == 0.0 && t_obj == Vec3::Zero();
    }
};

struct Camera {
    Mat3 K = Mat3::Identity();
    Mat3 R = Mat3::Identity();  // world-to-camera rotation
    Vec3 t = Vec3::Zero();      // world-to-camera translation
    int width = 0, height = 0;

    Vec3 position() const { return -(R.transpose() * t); }
    Vec3 to_camera(const Vec3& x_world) const { return R * x_world + t; }
    // Camera-frame direction through a pixel center, scaled so dir.z() == 1.
    Vec3 pixel_dir_cam(double px, double py) const {
        const double fx = K(0, 0), fy = K(1, 1), cx = K(0, 2), cy = K(1, 2);
        const double sk = K(0, 1);
        const double y = (py + 0.5 - cy) / fy;
        return {(px + 0.5 - cx - sk * y) / fx, y, 1.0};
    }
};

void validate_camera(const Camera& cam);

struct SceneState {
    std::vector<GaussianPrimitive> gaussians;
    std::vector<ObjectPose> trajectory;  // trajectory[0] is the identity pose
    Vec3 centroid = Vec3::Zero();        // frozen after initialization
    SharedAppearance shared;
};

void validate_scene(const SceneState& scene);

// Mask-weighted mean of the initial canonical means. Throws degenerate_error
// when every mask is zero.
Vec3 object_centroid(const std::vector<GaussianPrimitive>& gaussians);

struct PosedPose {
    Quat q;  // unit
    Vec3 t;
};

// Per-splat soft-masked rigid motion: the object quaternion is blended with
// identity by the mask and renormalized, the translation scales with the mask.
// q_obj is sign-canonicalized (w >= 0) before blending.
PosedPose soft_masked_pose(const ObjectPose& pose, double m);

// Applies the soft-masked pose of trajectory[t] about the frozen centroid.
// Identity poses and m == 0 splats pass through bit-identical.
std::vector<GaussianPrimitive> transform_gaussians(const SceneState& scene, int t);

// Backward through transform_gaussians. g_mu_posed / g_q_posed hold dL/d(posed
// mean) and dL/d(posed quaternion, wxyz); g_qtilde optionally adds dL/d(blended
// per-splat object quaternion) for consumers that probe it directly. Results
// accumulate into the canonical-parameter slots; any output pointer may be null.
void transform_gaussians_backward(const SceneState& scene, int t,
                                  const std::vector<Vec3>& g_mu_posed,
                                  const std::vector<Vec4>& g_q_posed,
                                  std::vector<Vec3>* g_mu, std::vector<Vec4>* g_q,
                                  std::vector<double>* g_m, Vec4* g_q_obj,
                                  Vec3* g_t_obj,
                                  const std::vector<Vec4>* g_qtilde = nullptr);

// Checkpoint serialization; doubles stored as hex-float strings so load(save(x))
// round-trips bit-exactly.
std::string scene_to_json_string(const SceneState& scene);
SceneState scene_from_json_string(const std::string& text);
void save_scene(const std::string& path, const SceneState& scene);
SceneState load_scene(const std::string& path);

std::string camera_to_json_string(const Camera& cam);
Camera camera_from_json_string(const std::string& text);

}  // namespace osp
