#pragma once

#include <functional>

#include "orbitsplat/math/quaternion.hpp"
#include "orbitsplat/math/sh.hpp"

namespace osp {

constexpr int kSpecularOrder = 9;  // shared environment radiance
constexpr int kDiffuseOrder = 3;   // shared diffuse irradiance
constexpr int kGaussianShOrder = 3;

// Appearance shared across all foreground splats: a specular environment
// probed along the reflected view direction plus a diffuse irradiance probed
// along the surface normal, scaled by per-splat albedo.
struct SharedAppearance {
    SHCoefficients theta_s = SHCoefficients::zeros(kSpecularOrder);
    SHCoefficients theta_d = SHCoefficients::zeros(kDiffuseOrder);
};

// Color of the factorized model: f(reflect(view, n); theta_s) + k_d * f(n; theta_d).
// view points from the surface toward the camera; n is the camera-facing unit
// normal. Negative values are allowed here; clamping happens at loss time.
Vec3 shade_factorized(const Vec3& k_d, const Vec3& normal, const Vec3& view,
                      const SharedAppearance& app);

// Gradients of sum(dL_dc * shade_factorized) with respect to every input.
// Accumulates into the pointers that are non-null. grad_theta_* index layout
// matches SHCoefficients.
struct FactorizedGrads {
    Vec3 d_kd = Vec3::Zero();
    Vec3 d_normal = Vec3::Zero();  // unconstrained; caller projects
    Vec3 d_view = Vec3::Zero();
};
FactorizedGrads shade_factorized_backward(const Vec3& k_d, const Vec3& normal,
                                          const Vec3& view, const SharedAppearance& app,
                                          const Vec3& dL_dc, Vec3* grad_theta_s,
                                          Vec3* grad_theta_d);

// Per-splat SH color probed at a direction already expressed in the object's
// local frame (body-attached lighting for the pose/refine stages).
Vec3 shade_bodyframe(const SHCoefficients& sh, const Vec3& view_obj);

struct BodyframeGrads {
    Vec3 d_view = Vec3::Zero();  // unconstrained
};
BodyframeGrads shade_bodyframe_backward(const SHCoefficients& sh, const Vec3& view_obj,
                                        const Vec3& dL_dc, Vec3* grad_sh);

// Order-L SH fit of the Lambertian irradiance E(n) = int L_i(w) max(w.n, 0) dw
// of an environment radiance function. E is evaluated on a 64x128 quadrature
// grid at n_normals (>= 2 (L+1)^2) spread directions and least-squares fitted.
// Emits a warning through the optional flag when grid refinement moves the
// result by more than 1e-3 relative.
SHCoefficients fit_diffuse_irradiance(const std::function<Vec3(const Vec3&)>& env,
                                      int order, int n_normals = 0,
                                      bool* refinement_warning = nullptr);

// Equirectangular float RGB environment map (row 0 = +z pole band; phi wraps
// along x). Used by the synthetic-data oracles.
struct EnvMap {
    int width = 0, height = 0;
    std::vector<float> rgb;  // height*width*3

    Vec3 sample(const Vec3& dir) const;  // nearest texel
};
EnvMap load_envmap(const std::string& raw_path, const std::string& meta_path);
void save_envmap(const EnvMap& env, const std::string& raw_path,
                 const std::string& meta_path);

}  // namespace osp
