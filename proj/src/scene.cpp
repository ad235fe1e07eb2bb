#include "orbitsplat/scene.hpp"

#include <cmath>

namespace osp {

namespace {

bool finite3(const Vec3& v) { return v.allFinite(); }

}  // namespace

void validate_camera(const Camera& cam) {
    if (cam.width <= 0 || cam.height <= 0)
        throw invalid_input_error("camera: non-positive image size");
    if (!(cam.K(0, 0) > 0.0) || !(cam.K(1, 1) > 0.0))
        throw invalid_input_error("camera: focal entries must be positive");
    if (cam.K(1, 0) != 0.0 || cam.K(2, 0) != 0.0 || cam.K(2, 1) != 0.0 ||
        cam.K(2, 2) != 1.0)
        throw invalid_input_error("camera: K must be upper-triangular with K22 = 1");
    if ((cam.R.transpose() * cam.R - Mat3::Identity()).norm() > 1e-9 ||
        cam.R.determinant() < 0.0)
        throw invalid_input_error("camera: rotation part is not orthonormal");
    if (!finite3(cam.t)) throw invalid_input_error("camera: non-finite translation");
}

void validate_scene(const SceneState& scene) {
    if (scene.trajectory.empty())
        throw invalid_input_error("scene: empty trajectory");
    if (!scene.trajectory.front().is_identity())
        throw invalid_input_error("scene: trajectory[0] must be the identity pose");
    for (const auto& g : scene.gaussians) {
        if (!finite3(g.mu) || !std::isfinite(g.sigma) || !std::isfinite(g.m) ||
            !g.scale.allFinite() || !g.q.vec().allFinite())
            throw invalid_input_error("scene: non-finite gaussian field");
        if (!(g.scale[0] > 0.0) || !(g.scale[1] > 0.0))
            throw invalid_input_error("scene: non-positive scale");
        if (g.sigma < 0.0 || g.sigma > 1.0)
            throw invalid_input_error("scene: opacity outside [0,1]");
        if (g.m < 0.0 || g.m > 1.0)
            throw invalid_input_error("scene: mask outside [0,1]");
    }
    if (!finite3(scene.centroid))
        throw invalid_input_error("scene: non-finite centroid");
}

Vec3 object_centroid(const std::vector<GaussianPrimitive>& gaussians) {
    Vec3 acc = Vec3::Zero();
    double wsum = 0.0;
    for (const auto& g : gaussians) {
        acc += g.m * g.mu;
        wsum += g.m;
    }
    if (wsum <= 0.0)
        throw degenerate_error("object_centroid: all masks are zero");
    return acc / wsum;
}

PosedPose soft_masked_pose(const ObjectPose& pose, double m) {
    const Quat c = pose.q_obj.canonical();
    const Quat blend{m * c.w + (1.0 - m), m * c.x, m * c.y, m * c.z};
    const double n = blend.norm();
    if (n < 1e-8)
        throw degenerate_error("soft_masked_pose: blended quaternion is degenerate");
    return {Quat{blend.w / n, blend.x / n, blend.y / n, blend.z / n}, m * pose.t_obj};
}

std::vector<GaussianPrimitive> transform_gaussians(const SceneState& scene, int t) {
    if (t < 0 || t >= int(scene.trajectory.size()))
        throw invalid_input_error("transform_gaussians: timestep out of range");
    const ObjectPose& pose = scene.trajectory[t];
    std::vector<GaussianPrimitive> out = scene.gaussians;
    if (pose.is_identity()) return out;
    for (auto& g : out) {
        if (g.m == 0.0) continue;
        const PosedPose pp = soft_masked_pose(pose, g.m);
        const Mat3 r = rot_from_quat(pp.q);
        g.mu = r * (g.mu - scene.centroid) + pp.t + scene.centroid;
        g.q = pp.q * g.q;
    }
    return out;
}

void transform_gaussians_backward(const SceneState& scene, int t,
                                  const std::vector<Vec3>& g_mu_posed,
                                  const std::vector<Vec4>& g_q_posed,
                                  std::vector<Vec3>* g_mu, std::vector<Vec4>* g_q,
                                  std::vector<double>* g_m, Vec4* g_q_obj,
                                  Vec3* g_t_obj, const std::vector<Vec4>* g_qtilde) {
    if (t < 0 || t >= int(scene.trajectory.size()))
        throw invalid_input_error("transform_gaussians_backward: timestep out of range");
    const ObjectPose& pose = scene.trajectory[t];
    const bool identity = pose.is_identity();
    const Quat c = pose.q_obj.canonical();
    const double sign = pose.q_obj.w < 0.0 ? -1.0 : 1.0;
    const int n = int(scene.gaussians.size());
    for (int i = 0; i < n; ++i) {
        const GaussianPrimitive& g = scene.gaussians[i];
        const Vec3 gm = g_mu_posed[i];
        const Vec4 gq = g_q_posed[i];
        if (identity) {
            // Posed quantities coincide with canonical ones; the pose path
            // still carries gradients (the blend depends on m, q_obj, t_obj).
            if (g_mu) (*g_mu)[i] += gm;
        }

        const Quat blend{g.m * c.w + (1.0 - g.m), g.m * c.x, g.m * c.y, g.m * c.z};
        const double bn = blend.norm();
        if (bn < 1e-8)
            throw degenerate_error("transform_gaussians_backward: degenerate blend");
        const Quat qt{blend.w / bn, blend.x / bn, blend.y / bn, blend.z / bn};
        const Vec3 delta = g.mu - scene.centroid;
        const Mat3 r = rot_from_quat(qt);

        Vec4 g_qt = Vec4::Zero();  // dL/d(blended unit quaternion)
        if (g_qtilde) g_qt += (*g_qtilde)[i];
        // Mean path: mu^t = R(qt) delta + m t_obj + p.
        if (!identity && g_mu) (*g_mu)[i] += r.transpose() * gm;
        const Mat3 dl_dr = gm * delta.transpose();
        g_qt += rot_from_quat_backward(qt, dl_dr);
        if (g_t_obj) *g_t_obj += g.m * gm;
        const double gm_scalar = pose.t_obj.dot(gm);

        // Orientation path: q^t = qt * q_i.
        Vec4 g_qi = Vec4::Zero();
        quat_mul_backward(qt, g.q, gq, &g_qt, &g_qi);
        if (g_q) (*g_q)[i] += g_qi;

        // Through the normalization and the linear blend.
        const Vec4 g_blend = quat_normalize_backward(blend, g_qt);
        if (g_q_obj)
            *g_q_obj += sign * g.m * g_blend;
        if (g_m) {
            const Vec4 dblend_dm{c.w - 1.0, c.x, c.y, c.z};
            (*g_m)[i] += g_blend.dot(dblend_dm) + gm_scalar;
        }
    }
}

}  // namespace osp
