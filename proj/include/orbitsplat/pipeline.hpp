#pragma once

#include <string>
#include <vector>

#include "orbitsplat/dataset.hpp"
#include "orbitsplat/mesh.hpp"
#include "orbitsplat/meshing.hpp"
#include "orbitsplat/optimizer.hpp"

namespace osp {

struct ScheduleConfig {
    int init_iters = 7000;   // static reconstruction of the first frame
    int mask_iters = 7000;   // mask fit against the object masks
    int pose_iters = 1000;   // per incoming frame
    int refine_iters = 2000; // per incoming frame, all processed frames
    int post_alternation_iters = 7000;
    int final_iters = 12500;
    int final_densify_window = 3500;  // density control / opacity reset cutoff
    int sdf_iters = 1000;
    int densify_interval = 100;
    int opacity_reset_interval = 1000;
    double opacity_reset_value = 0.01;
    int init_grid_step = 2;  // back-projection stride over the pixel grid
    double foreground_mask_threshold = 0.5;
};

void validate_schedule(const ScheduleConfig& cfg);

struct PipelineConfig {
    ScheduleConfig schedule;
    LossWeights weights;
    LearningRates rates;
    DensityControlConfig density;
    std::uint64_t seed = 1;
    double extent = 0.0;           // scene size for lr scaling; 0 = dataset's
    int frame_stride = 1;          // optimize every k-th dataset timestep
    double prior_reduction = 0.1;  // prior weight factor after alternation
    bool no_specular = false;      // keep the specular field frozen at zero
    bool no_diffuse = false;       // restrict the diffuse field to its DC band
    bool freeze_masks_during_pose = false;
    bool single_frame_only = false;  // stop after initialization (baseline)
    std::string init_scene_path;  // externally produced initial splats
    std::string out_dir;  // when set, per-stage checkpoints + metrics land here
};

// cfg.extent, falling back to the dataset's object extent, then 1.
double resolve_extent(const PipelineConfig& cfg, const Dataset& data);

// Loss bookkeeping for one optimization stage. `improved` compares the mean of
// the first and last 100 per-iteration losses.
struct StageTrace {
    std::string name;
    std::vector<double> losses;
    double ema_start = 0.0;
    double ema_end = 0.0;
    bool improved = true;
    double seconds = 0.0;
    int n_gaussians = 0;  // after the stage
};

struct PoseEstimate {
    ObjectPose pose;
    bool warning = false;  // loss failed to decrease over the budget
};

// Timesteps the schedule touches: 0, stride, 2*stride, ... capped at upto_t
// (inclusive); upto_t < 0 means the whole dataset.
std::vector<int> scheduled_timesteps(const Dataset& data, int frame_stride,
                                     int upto_t = -1);

// Splats back-projected from every view's depth/normal maps at t = 0 on a
// stratified pixel grid, with masks at 0.5 and colors seeded from the images.
SceneState init_from_first_frame(const Dataset& data, const ScheduleConfig& cfg);

// Static reconstruction of frame 0: all splat parameters except masks.
StageTrace run_init_refine(SceneState& scene, const Dataset& data,
                           const PipelineConfig& cfg, AdamState* adam_out = nullptr);

// Fits only the masks to the dataset's object masks at t = 0, then freezes the
// object centroid used by the soft-masked transform.
StageTrace run_mask_fit(SceneState& scene, const Dataset& data,
                        const PipelineConfig& cfg, AdamState* adam_out = nullptr);

// Optimizes the pose of timestep t (and, by default, the masks) against the
// images at t; the caller seeds trajectory[t] with its warm start.
PoseEstimate estimate_pose(SceneState& scene, const Dataset& data, int t,
                           const PipelineConfig& cfg, StageTrace* trace = nullptr);

// Refines all splat parameters and the poses of scheduled timesteps <= upto_t.
StageTrace refine_gaussians(SceneState& scene, const Dataset& data, int upto_t,
                            const PipelineConfig& cfg, AdamState* adam_out = nullptr);

// Post-alternation sweep over every scheduled timestep with the geometric
// prior weights scaled by prior_reduction.
StageTrace run_post_refine(SceneState& scene, const Dataset& data,
                           const PipelineConfig& cfg, AdamState* adam_out = nullptr);

// Swaps per-splat SH for albedo plus shared appearance: k_d takes the DC color
// (clamped to [0,1]), the specular field starts at zero and the diffuse field
// at the constant 1.
void convert_to_factorized(SceneState& scene);

// Final refinement under the factorized appearance model; density control and
// opacity resets stop after schedule.final_densify_window iterations.
StageTrace run_final_refine(SceneState& scene, const Dataset& data,
                            const PipelineConfig& cfg, AdamState* adam_out = nullptr);

// Fits only (k_d, theta_s, theta_d) to the training images with a photometric
// loss, geometry and poses frozen. Honors no_specular / no_diffuse.
StageTrace fit_appearance(SceneState& scene, const Dataset& data,
                          const PipelineConfig& cfg, int iters);

// Pose error against the dataset trajectory. Rotation compares quaternions
// directly; translation compares the full rigid maps, which absorbs the
// difference between the model's and the ground truth's rotation centers.
struct PoseError {
    int t = 0;
    double rot_deg = 0.0;
    double trans = 0.0;  // world units
};

std::vector<PoseError> trajectory_errors(const SceneState& scene, const Dataset& data,
                                         int frame_stride = 1);

// Mean PSNR over every held-out (view, timestep) pair.
double mean_test_psnr(const SceneState& scene, const Dataset& data,
                      AppearanceMode mode);

// Meshing stage: scaffold from the reconstructed splats, TSDF carving from the
// rendered depth maps, per-value refinement, surface extraction at t = 0.
struct MeshStageResult {
    TetScaffold scaffold;
    TriMesh mesh;
    StageTrace trace;
    int skipped = 0;  // refinement iterations with no usable mesh/pixels
};

MeshStageResult run_meshing(const SceneState& scene, const Dataset& data,
                            const PipelineConfig& cfg);

struct PipelineResult {
    SceneState scene;
    TriMesh mesh;  // filled by the meshing stage
    std::vector<StageTrace> traces;
    std::vector<PoseEstimate> poses;  // one per scheduled timestep > 0
};

PipelineResult run_pipeline(const Dataset& data, const PipelineConfig& cfg);

}  // namespace osp
