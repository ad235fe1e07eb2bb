#pragma once

#include <optional>
#include <vector>

#include "orbitsplat/render.hpp"
#include "orbitsplat/scene.hpp"

namespace osp {

// Stage mixing weights. The entropy weight is raised for noisy masks; the rest
// stay at their published defaults.
struct LossWeights {
    double lambda_rgb = 1.0;
    double lambda_n = 0.05;
    double lambda_pnormal = 0.25;
    double lambda_pdepth = 0.375;
    double lambda_entropy = 1.0;
    double lambda_dssim = 0.2;
};

// Oracle depth/normal supervision aligned with a specific camera. Normals are
// unit world-frame vectors at valid pixels.
struct PriorMaps {
    int width = 0;
    int height = 0;
    std::vector<double> depth;
    std::vector<std::uint8_t> depth_valid;
    std::vector<Vec3> normal;
    std::vector<std::uint8_t> normal_valid;
};

struct RgbLossResult {
    double loss = 0.0;  // (1 - lambda_dssim) * l1 + lambda_dssim * dssim
    double l1 = 0.0;
    double dssim = 0.0;  // (1 - mean SSIM) / 2
    std::vector<Vec3> d_rgb;
};

// L1 + D-SSIM photometric loss in linear RGB with gradients w.r.t. `rendered`.
// SSIM uses an 11x11 Gaussian window (sigma 1.5) with clamp-to-edge padding and
// unit dynamic range. `pixel_weight`, when given, downweights per-pixel terms
// (used to mask out unreliable regions); means are taken over the total weight.
RgbLossResult rgb_loss(const std::vector<Vec3>& rendered, const std::vector<Vec3>& target,
                       int width, int height, double lambda_dssim = 0.2,
                       const std::vector<double>* pixel_weight = nullptr);

// Per-pixel SSIM (mean over channels) with the same windowing as rgb_loss.
std::vector<double> ssim_map(const std::vector<Vec3>& a, const std::vector<Vec3>& b,
                             int width, int height);

struct EntropyLossResult {
    double loss = 0.0;
    std::vector<double> d_m;
};

// Sum of per-mask binary entropies; drives masks toward {0, 1}. Inputs are
// clamped to [kMaskEps, 1 - kMaskEps] before evaluation.
EntropyLossResult entropy_loss(const std::vector<double>& masks);

struct ConsistencyLossResult {
    double loss = 0.0;
    int n_valid = 0;
    std::vector<double> d_depth;
    std::vector<Vec3> d_normal;
};

// Mean misalignment between the rendered normal and the normal implied by the
// rendered depth (central differences of back-projected camera points). A pixel
// participates when it and its four neighbors all have alpha >= threshold.
ConsistencyLossResult depth_normal_consistency(const RenderBuffers& buffers,
                                               const Camera& cam,
                                               double alpha_threshold = 0.5);

struct PriorLossResult {
    double depth_term = 0.0;
    double normal_term = 0.0;
    bool low_coverage = false;  // no valid pixel; both terms reported as 0
    std::vector<double> d_depth;
    std::vector<Vec3> d_normal;
};

// Mean |depth - prior| and mean (1 - n . n_prior) over prior-valid pixels with
// alpha >= threshold.
PriorLossResult prior_losses(const RenderBuffers& buffers, const PriorMaps& priors,
                             double alpha_threshold = 0.5);

enum class Stage { kPose, kRefine, kFinal };

// Scalar parts fed to compose_stage_loss. Absent parts are only legal when the
// stage does not use them.
struct LossParts {
    std::optional<double> rgb;
    std::optional<double> entropy;
    std::optional<double> consistency;
    std::optional<double> prior_normal;
    std::optional<double> prior_depth;
};

// pose:   lambda_rgb * rgb + lambda_entropy * entropy
// refine: + lambda_n * consistency + lambda_pnormal/pdepth * priors
// final:  lambda_rgb * rgb + lambda_n * consistency + lambda_entropy * entropy
double compose_stage_loss(Stage stage, const LossParts& parts,
                          const LossWeights& weights = {});

}  // namespace osp
