#pragma once

#include <cstdint>
#include <vector>

#include "orbitsplat/render.hpp"
#include "orbitsplat/rng.hpp"

namespace osp {

// Per-group learning rates. Position-like rates are multiplied by `extent`
// (a scene-size scale) so the same settings work across differently sized
// scenes.
struct LearningRates {
    double position = 1.6e-4;
    double rotation = 1e-3;
    double scale = 5e-3;
    double opacity = 5e-2;
    double mask = 5e-2;
    double sh = 2.5e-3;    // per-splat SH and diffuse albedo
    double theta = 2.5e-3; // shared appearance fields
    double pose_rotation = 1e-3;
    double pose_translation = 1e-3;
    double sdf = 2e-2;  // in units of the TSDF truncation band
    double extent = 1.0;
};

// Which parameter groups take part in a step. Groups left out are frozen:
// neither their values nor their moments change. Poses are listed explicitly
// because an iteration renders a single timestep.
struct UpdateMask {
    bool mu = true, q = true, scale = true, sigma = true, m = true;
    bool sh = true, k_d = true, theta_s = true, theta_d = true;
    std::vector<int> pose_timesteps;

    static UpdateMask masks_only() {
        UpdateMask u;
        u.mu = u.q = u.scale = u.sigma = false;
        u.sh = u.k_d = u.theta_s = u.theta_d = false;
        u.m = true;
        return u;
    }
    static UpdateMask pose_step(int t, bool with_masks) {
        UpdateMask u = masks_only();
        u.m = with_masks;
        u.pose_timesteps = {t};
        return u;
    }
};

// Adam moments shaped like the parameters. Poses keep their own step counts
// since they are touched only when their timestep is sampled.
struct AdamState {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-15;
    std::int64_t step = 0;
    std::vector<std::int64_t> pose_step;
    ParamGradients m1, m2;

    void init(const SceneState& scene);
    bool initialized_for(const SceneState& scene) const;
};

// One bias-corrected Adam update. Afterwards quaternions are renormalized,
// opacities clamped to [0, 1], masks to [kMaskEps, 1 - kMaskEps], and scales
// floored at 1e-6. Non-finite gradients abort with the offending slot name.
void adam_step(SceneState& scene, const ParamGradients& grads, AdamState& state,
               const LearningRates& lrs, const UpdateMask& mask = {});

// Scheduled opacity reset: caps every opacity at `value` and clears the
// opacity moments so the optimizer relearns them from scratch.
void reset_opacity(SceneState& scene, AdamState& state, double value);

// Checkpoint serialization for optimizer state, hex-float like scenes.
std::string adam_state_to_json_string(const AdamState& state);
AdamState adam_state_from_json_string(const std::string& text);
void save_adam_state(const std::string& path, const AdamState& state);
AdamState load_adam_state(const std::string& path);

// Positional-gradient magnitudes accumulated between density-control calls.
struct DensifyStats {
    std::vector<double> grad_sum;
    std::vector<int> n;

    void init(size_t n_gaussians);
    void accumulate(const ParamGradients& grads);
};

struct DensityControlConfig {
    double tau_grad = 2e-4;        // mean positional gradient that triggers densify
    double tau_prune = 0.005;      // opacity below this is pruned
    int max_gaussians = 0;         // stop cloning/splitting at this count; 0 = off
    double split_threshold = 0.01; // x extent: larger splats split, smaller clone
    double split_factor = 1.6;
};

struct DensityControlReport {
    int n_cloned = 0, n_split = 0, n_pruned = 0;
};

// Clone/split over-stressed splats, prune transparent ones. Children inherit
// every non-geometric field from the parent; split children are resampled
// inside the parent footprint with scales divided by split_factor. Adam
// moments and stats are remapped (new splats start from zero moments).
DensityControlReport density_control(SceneState& scene, DensifyStats& stats,
                                     AdamState& state, const DensityControlConfig& cfg,
                                     double extent, Rng& rng);

}  // namespace osp
