#include "orbitsplat/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "orbitsplat/losses.hpp"
#include "orbitsplat/metrics.hpp"

namespace osp {

namespace fs = std::filesystem;
using nlohmann::json;

void validate_schedule(const ScheduleConfig& cfg) {
    const int iters[] = {cfg.init_iters,  cfg.mask_iters,
                         cfg.pose_iters,  cfg.refine_iters,
                         cfg.post_alternation_iters, cfg.final_iters,
                         cfg.final_densify_window,   cfg.sdf_iters,
                         cfg.densify_interval,       cfg.opacity_reset_interval};
    for (int v : iters)
        if (v <= 0) throw invalid_input_error("schedule: iteration counts and intervals must be positive");
    if (cfg.opacity_reset_value <= 0.0 || cfg.opacity_reset_value > 1.0)
        throw invalid_input_error("schedule: opacity_reset_value must be in (0, 1]");
    if (cfg.init_grid_step < 1)
        throw invalid_input_error("schedule: init_grid_step must be >= 1");
    if (cfg.foreground_mask_threshold <= 0.0 || cfg.foreground_mask_threshold >= 1.0)
        throw invalid_input_error("schedule: foreground_mask_threshold must be in (0, 1)");
}

double resolve_extent(const PipelineConfig& cfg, const Dataset& data) {
    if (cfg.extent > 0.0) return cfg.extent;
    if (data.object_extent > 0.0) return data.object_extent;
    return 1.0;
}

std::vector<int> scheduled_timesteps(const Dataset& data, int frame_stride, int upto_t) {
    if (frame_stride < 1) throw invalid_input_error("frame_stride must be >= 1");
    const int last = upto_t < 0 ? data.n_timesteps() - 1
                                : std::min(upto_t, data.n_timesteps() - 1);
    std::vector<int> ts;
    for (int t = 0; t <= last; t += frame_stride) ts.push_back(t);
    return ts;
}

namespace {

using Clock = std::chrono::steady_clock;

double mean_range(const std::vector<double>& v, size_t lo, size_t hi) {
    double s = 0.0;
    for (size_t i = lo; i < hi; ++i) s += v[i];
    return s / double(hi - lo);
}

void finish_trace(StageTrace& tr, Clock::time_point t0, const SceneState& scene) {
    tr.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    tr.n_gaussians = int(scene.gaussians.size());
    const size_t n = tr.losses.size();
    const size_t w = std::min<size_t>(100, n);
    if (w == 0) return;
    tr.ema_start = mean_range(tr.losses, 0, w);
    tr.ema_end = mean_range(tr.losses, n - w, n);
    tr.improved = tr.ema_end < tr.ema_start;
}

struct LoopConfig {
    std::string name;
    Stage stage = Stage::kRefine;
    AppearanceMode mode = AppearanceMode::kBodyFrameSH;
    UpdateMask update;     // base mask; the sampled pose slot is appended
    int iters = 0;
    std::vector<int> times;
    bool poses_follow_sample = false;  // update the pose of the sampled timestep
    bool fit_mask_channel = false;     // supervise the mask buffer, not rgb
    bool densify = false;
    int densify_until = 0;  // 0 = whole stage
    int reset_until = 0;    // opacity resets allowed while it + 1 <= this
    LossWeights weights;
    std::uint64_t stream = 0;
};

// One forward/backward evaluation of the stage loss at (view v, timestep t).
double stage_iteration(SceneState& scene, const Dataset& data, int v, int t,
                       const LoopConfig& lc, ParamGradients& grads) {
    const Camera& cam = data.cameras[v];
    const ViewFrame& frame = data.frames[v][t];
    const RenderBuffers buffers = render(scene, cam, t, lc.mode);
    const int np = buffers.pixels();

    BufferGrads up;
    LossParts parts;
    if (lc.fit_mask_channel) {
        std::vector<Vec3> rend(np), targ(np);
        for (int p = 0; p < np; ++p) {
            rend[p] = Vec3::Constant(buffers.mask[p]);
            targ[p] = Vec3::Constant(frame.mask[p]);
        }
        const RgbLossResult rl =
            rgb_loss(rend, targ, buffers.width, buffers.height, lc.weights.lambda_dssim);
        parts.rgb = rl.loss;
        up.mask.assign(np, 0.0);
        for (int p = 0; p < np; ++p)
            up.mask[p] = lc.weights.lambda_rgb *
                         (rl.d_rgb[p][0] + rl.d_rgb[p][1] + rl.d_rgb[p][2]);
    } else {
        const RgbLossResult rl = rgb_loss(buffers.rgb, frame.rgb, buffers.width,
                                          buffers.height, lc.weights.lambda_dssim);
        parts.rgb = rl.loss;
        up.rgb.resize(np);
        for (int p = 0; p < np; ++p) up.rgb[p] = lc.weights.lambda_rgb * rl.d_rgb[p];
    }

    EntropyLossResult ent;
    if (lc.weights.lambda_entropy != 0.0) {
        std::vector<double> ms(scene.gaussians.size());
        for (size_t i = 0; i < ms.size(); ++i) ms[i] = scene.gaussians[i].m;
        ent = entropy_loss(ms);
    }
    parts.entropy = ent.loss;

    if (lc.stage != Stage::kPose) {
        const ConsistencyLossResult cons = depth_normal_consistency(buffers, cam);
        parts.consistency = cons.loss;
        up.depth.assign(np, 0.0);
        up.normal.assign(np, Vec3::Zero());
        for (int p = 0; p < np; ++p) {
            up.depth[p] = lc.weights.lambda_n * cons.d_depth[p];
            up.normal[p] = lc.weights.lambda_n * cons.d_normal[p];
        }
        if (lc.stage == Stage::kRefine) {
            const PriorLossResult pri = prior_losses(buffers, frame.priors);
            parts.prior_normal = pri.normal_term;
            parts.prior_depth = pri.depth_term;
            for (int p = 0; p < np; ++p) {
                up.depth[p] += lc.weights.lambda_pdepth * pri.d_depth[p];
                up.normal[p] += lc.weights.lambda_pnormal * pri.d_normal[p];
            }
        }
    }

    const double total = compose_stage_loss(lc.stage, parts, lc.weights);
    grads = render_backward(scene, cam, t, lc.mode, buffers, up);
    if (lc.weights.lambda_entropy != 0.0)
        for (size_t i = 0; i < grads.m.size(); ++i)
            grads.m[i] += lc.weights.lambda_entropy * ent.d_m[i];
    return total;
}

// Keeps the diffuse field constant over directions for the no_diffuse ablation.
void project_diffuse_dc(SceneState& scene, AdamState& state) {
    for (size_t j = 1; j < scene.shared.theta_d.coeffs.size(); ++j) {
        scene.shared.theta_d.coeffs[j].setZero();
        state.m1.theta_d[j].setZero();
        state.m2.theta_d[j].setZero();
    }
}

StageTrace run_loop(SceneState& scene, const Dataset& data, const PipelineConfig& cfg,
                    const LoopConfig& lc, AdamState* adam_out = nullptr) {
    if (data.n_views() < 1 || data.n_timesteps() < 1)
        throw invalid_input_error(lc.name + ": dataset has no frames");
    if (lc.times.empty()) throw invalid_input_error(lc.name + ": no timesteps");
    for (int t : lc.times)
        if (t < 0 || t >= data.n_timesteps() || t >= int(scene.trajectory.size()))
            throw invalid_input_error(lc.name + ": timestep out of range");

    Rng rng(Rng::derive(cfg.seed, lc.stream));
    AdamState state;
    state.init(scene);
    DensifyStats stats;
    stats.init(scene.gaussians.size());
    LearningRates lrs = cfg.rates;
    lrs.extent = resolve_extent(cfg, data);

    StageTrace tr;
    tr.name = lc.name;
    tr.losses.reserve(lc.iters);
    const auto t0 = Clock::now();
    for (int it = 0; it < lc.iters; ++it) {
        const int v = rng.uniform_int(data.n_views());
        const int t = lc.times[rng.uniform_int(int(lc.times.size()))];
        try {
            ParamGradients grads;
            const double loss = stage_iteration(scene, data, v, t, lc, grads);
            if (!std::isfinite(loss)) throw numerical_error("non-finite loss");
            UpdateMask u = lc.update;
            if (lc.poses_follow_sample && t > 0) u.pose_timesteps = {t};
            adam_step(scene, grads, state, lrs, u);
            if (cfg.no_diffuse && u.theta_d) project_diffuse_dc(scene, state);
            tr.losses.push_back(loss);
            if (lc.densify) {
                stats.accumulate(grads);
                const bool in_window = lc.densify_until <= 0 || it + 1 <= lc.densify_until;
                if (in_window && (it + 1) % cfg.schedule.densify_interval == 0 &&
                    it + 1 < lc.iters)
                    density_control(scene, stats, state, cfg.density, lrs.extent, rng);
                if ((it + 1) % cfg.schedule.opacity_reset_interval == 0 &&
                    it + 1 <= lc.reset_until)
                    reset_opacity(scene, state, cfg.schedule.opacity_reset_value);
            }
        } catch (const numerical_error& e) {
            throw numerical_error(lc.name + ", iteration " + std::to_string(it) + ": " +
                                  e.what());
        }
    }
    finish_trace(tr, t0, scene);
    if (adam_out) *adam_out = std::move(state);
    return tr;
}

}  // namespace

SceneState init_from_first_frame(const Dataset& data, const ScheduleConfig& cfg) {
    validate_schedule(cfg);
    if (data.n_views() < 1 || data.n_timesteps() < 1)
        throw invalid_input_error("initialization: empty dataset");
    const double y00 = 0.5 / std::sqrt(kPi);
    SceneState scene;
    const int step = cfg.init_grid_step;
    for (int v = 0; v < data.n_views(); ++v) {
        const Camera& cam = data.cameras[v];
        const ViewFrame& f = data.frames[v][0];
        const Mat3 rt = cam.R.transpose();
        for (int gy = step / 2; gy < cam.height; gy += step) {
            for (int gx = step / 2; gx < cam.width; gx += step) {
                const size_t p = size_t(gy) * cam.width + gx;
                if (!f.priors.depth_valid[p] || !f.priors.normal_valid[p]) continue;
                const double depth = f.priors.depth[p];
                GaussianPrimitive g;
                g.mu = rt * (cam.pixel_dir_cam(gx, gy) * depth - cam.t);
                g.q = quat_from_normal(f.priors.normal[p]);
                g.scale = Vec2::Constant(0.7 * step * depth / cam.K(0, 0));
                g.sigma = 0.9;
                g.m = 0.5;
                g.k_d = f.rgb[p].cwiseMax(0.0).cwiseMin(1.0);
                g.sh.coeffs[0] = f.rgb[p] / y00;
                scene.gaussians.push_back(std::move(g));
            }
        }
    }
    if (scene.gaussians.empty())
        throw degenerate_error("initialization: no valid surface pixels at t = 0");
    scene.trajectory.assign(size_t(data.n_timesteps()), ObjectPose{});
    validate_scene(scene);
    return scene;
}

StageTrace run_init_refine(SceneState& scene, const Dataset& data,
                           const PipelineConfig& cfg, AdamState* adam_out) {
    validate_schedule(cfg.schedule);
    LoopConfig lc;
    lc.name = "init_refine";
    lc.stage = Stage::kRefine;
    lc.update.m = false;  // reconstruction leaves the masks untouched
    lc.iters = cfg.schedule.init_iters;
    lc.times = {0};
    lc.densify = true;
    lc.reset_until = cfg.schedule.init_iters - 200;
    lc.weights = cfg.weights;
    lc.weights.lambda_entropy = 0.0;
    lc.stream = 1;
    return run_loop(scene, data, cfg, lc, adam_out);
}

StageTrace run_mask_fit(SceneState& scene, const Dataset& data,
                        const PipelineConfig& cfg, AdamState* adam_out) {
    validate_schedule(cfg.schedule);
    LoopConfig lc;
    lc.name = "mask_fit";
    lc.stage = Stage::kPose;
    lc.update = UpdateMask::masks_only();
    lc.iters = cfg.schedule.mask_iters;
    lc.times = {0};
    lc.fit_mask_channel = true;
    lc.weights = cfg.weights;
    lc.weights.lambda_entropy = 0.0;  // pure L1 + D-SSIM on the mask channel
    lc.stream = 2;
    StageTrace tr = run_loop(scene, data, cfg, lc, adam_out);
    scene.centroid = object_centroid(scene.gaussians);
    return tr;
}

PoseEstimate estimate_pose(SceneState& scene, const Dataset& data, int t,
                           const PipelineConfig& cfg, StageTrace* trace) {
    validate_schedule(cfg.schedule);
    if (t < 1 || t >= data.n_timesteps() || t >= int(scene.trajectory.size()))
        throw invalid_input_error("estimate_pose: timestep out of range");
    LoopConfig lc;
    lc.name = "pose_" + std::to_string(t);
    lc.stage = Stage::kPose;
    lc.update = UpdateMask::pose_step(t, !cfg.freeze_masks_during_pose);
    lc.iters = cfg.schedule.pose_iters;
    lc.times = {t};
    lc.weights = cfg.weights;
    lc.stream = 1000000 + std::uint64_t(t);
    StageTrace tr = run_loop(scene, data, cfg, lc);
    PoseEstimate pe;
    pe.pose = scene.trajectory[t];
    pe.warning = !tr.improved;
    if (trace) *trace = std::move(tr);
    return pe;
}

StageTrace refine_gaussians(SceneState& scene, const Dataset& data, int upto_t,
                            const PipelineConfig& cfg, AdamState* adam_out) {
    validate_schedule(cfg.schedule);
    LoopConfig lc;
    lc.name = "refine_" + std::to_string(upto_t);
    lc.stage = Stage::kRefine;
    lc.iters = cfg.schedule.refine_iters;
    lc.times = scheduled_timesteps(data, cfg.frame_stride, upto_t);
    lc.poses_follow_sample = true;
    lc.densify = true;
    lc.reset_until = cfg.schedule.refine_iters - 200;
    lc.weights = cfg.weights;
    lc.stream = 2000000 + std::uint64_t(upto_t);
    return run_loop(scene, data, cfg, lc, adam_out);
}

StageTrace run_post_refine(SceneState& scene, const Dataset& data,
                           const PipelineConfig& cfg, AdamState* adam_out) {
    validate_schedule(cfg.schedule);
    LoopConfig lc;
    lc.name = "post_refine";
    lc.stage = Stage::kRefine;
    lc.iters = cfg.schedule.post_alternation_iters;
    lc.times = scheduled_timesteps(data, cfg.frame_stride, -1);
    lc.poses_follow_sample = true;
    lc.densify = true;
    lc.reset_until = cfg.schedule.post_alternation_iters - 200;
    lc.weights = cfg.weights;
    lc.weights.lambda_pnormal *= cfg.prior_reduction;
    lc.weights.lambda_pdepth *= cfg.prior_reduction;
    lc.stream = 3;
    return run_loop(scene, data, cfg, lc, adam_out);
}

void convert_to_factorized(SceneState& scene) {
    const double y00 = 0.5 / std::sqrt(kPi);
    for (auto& g : scene.gaussians)
        g.k_d = (y00 * g.sh.coeffs[0]).cwiseMax(0.0).cwiseMin(1.0);
    scene.shared.theta_s = SHCoefficients::zeros(kSpecularOrder);
    scene.shared.theta_d = SHCoefficients::zeros(kDiffuseOrder);
    // f(v; theta_d) == 1 everywhere, so k_d starts out reproducing the DC color.
    scene.shared.theta_d.coeffs[0] = Vec3::Constant(1.0 / y00);
}

StageTrace run_final_refine(SceneState& scene, const Dataset& data,
                            const PipelineConfig& cfg, AdamState* adam_out) {
    validate_schedule(cfg.schedule);
    convert_to_factorized(scene);
    LoopConfig lc;
    lc.name = "final_refine";
    lc.stage = Stage::kFinal;
    lc.mode = AppearanceMode::kFactorized;
    lc.update.sh = false;  // replaced by albedo + shared fields
    lc.update.theta_s = !cfg.no_specular;
    lc.iters = cfg.schedule.final_iters;
    lc.times = scheduled_timesteps(data, cfg.frame_stride, -1);
    lc.poses_follow_sample = true;
    lc.densify = true;
    lc.densify_until = cfg.schedule.final_densify_window;
    lc.reset_until = std::min(cfg.schedule.final_densify_window,
                              cfg.schedule.final_iters - 200);
    lc.weights = cfg.weights;
    lc.stream = 4;
    return run_loop(scene, data, cfg, lc, adam_out);
}

StageTrace fit_appearance(SceneState& scene, const Dataset& data,
                          const PipelineConfig& cfg, int iters) {
    if (iters <= 0) throw invalid_input_error("fit_appearance: iters must be positive");
    LoopConfig lc;
    lc.name = "appearance_fit";
    lc.stage = Stage::kPose;  // photometric composition; entropy weight zeroed
    lc.mode = AppearanceMode::kFactorized;
    lc.update.mu = lc.update.q = lc.update.scale = false;
    lc.update.sigma = lc.update.m = lc.update.sh = false;
    lc.update.k_d = true;
    lc.update.theta_s = !cfg.no_specular;
    lc.update.theta_d = true;
    lc.iters = iters;
    lc.times = scheduled_timesteps(data, cfg.frame_stride, -1);
    lc.weights = cfg.weights;
    lc.weights.lambda_entropy = 0.0;
    lc.stream = 5;
    return run_loop(scene, data, cfg, lc);
}

std::vector<PoseError> trajectory_errors(const SceneState& scene, const Dataset& data,
                                         int frame_stride) {
    if (data.gt_trajectory.empty())
        throw invalid_input_error("trajectory_errors: no ground-truth trajectory");
    const Vec3 p_gt = data.gt_scene.gaussians.empty()
                          ? scene.centroid
                          : object_centroid(data.gt_scene.gaussians);
    std::vector<PoseError> errs;
    for (int t : scheduled_timesteps(data, frame_stride)) {
        if (t >= int(scene.trajectory.size()) || t >= int(data.gt_trajectory.size()))
            break;
        const ObjectPose& a = scene.trajectory[t];
        const ObjectPose& b = data.gt_trajectory[t];
        PoseError e;
        e.t = t;
        e.rot_deg = quat_angle_deg(a.q_obj, b.q_obj);
        // x -> R x + (t + p - R p) for rotation center p; compare the offsets.
        const Vec3 off_a = a.t_obj + scene.centroid - quat_rotate(a.q_obj, scene.centroid);
        const Vec3 off_b = b.t_obj + p_gt - quat_rotate(b.q_obj, p_gt);
        e.trans = (off_a - off_b).norm();
        errs.push_back(e);
    }
    return errs;
}

double mean_test_psnr(const SceneState& scene, const Dataset& data,
                      AppearanceMode mode) {
    if (data.test_cameras.empty() || data.test_frames.empty())
        throw invalid_input_error("mean_test_psnr: dataset has no held-out views");
    double sum = 0.0;
    int n = 0;
    std::vector<double> ones;
    for (size_t v = 0; v < data.test_cameras.size(); ++v) {
        const int tmax = std::min(int(data.test_frames[v].size()),
                                  int(scene.trajectory.size()));
        for (int t = 0; t < tmax; ++t) {
            const RenderBuffers b = render(scene, data.test_cameras[v], t, mode);
            ones.assign(b.rgb.size(), 1.0);
            sum += psnr(b.rgb, data.test_frames[v][t].rgb, ones);
            ++n;
        }
    }
    if (n == 0) throw invalid_input_error("mean_test_psnr: no overlapping timesteps");
    return sum / n;
}

namespace {

void emit_checkpoint(const PipelineConfig& cfg, const std::string& name,
                     const SceneState& scene, const AdamState& adam) {
    if (cfg.out_dir.empty()) return;
    fs::create_directories(cfg.out_dir);
    save_scene(cfg.out_dir + "/stage_" + name + ".json", scene);
    save_adam_state(cfg.out_dir + "/stage_" + name + ".adam.json", adam);
}

void emit_metrics(const PipelineConfig& cfg, int idx, const StageTrace& tr,
                  const SceneState& scene, const Dataset& data, AppearanceMode mode,
                  bool with_psnr) {
    if (cfg.out_dir.empty()) return;
    fs::create_directories(cfg.out_dir);
    json j;
    j["stage"] = tr.name;
    j["iterations"] = tr.losses.size();
    j["loss_start"] = tr.ema_start;
    j["loss_end"] = tr.ema_end;
    j["improved"] = tr.improved;
    j["seconds"] = tr.seconds;
    j["n_gaussians"] = tr.n_gaussians;
    if (with_psnr && !data.test_cameras.empty())
        j["test_psnr"] = mean_test_psnr(scene, data, mode);
    if (!data.gt_trajectory.empty()) {
        double rot = 0.0, trans = 0.0;
        for (const PoseError& e : trajectory_errors(scene, data, cfg.frame_stride)) {
            rot = std::max(rot, e.rot_deg);
            trans = std::max(trans, e.trans);
        }
        j["max_rotation_error_deg"] = rot;
        j["max_translation_error"] = trans;
    }
    char fname[64];
    std::snprintf(fname, sizeof(fname), "metrics_%02d_%s.json", idx, tr.name.c_str());
    std::ofstream f(cfg.out_dir + "/" + fname, std::ios::binary);
    if (!f) throw io_error("cannot write metrics: " + cfg.out_dir + "/" + fname);
    f << j.dump(1);
}

void emit_mesh_metrics(const PipelineConfig& cfg, int idx, const MeshStageResult& ms) {
    if (cfg.out_dir.empty()) return;
    fs::create_directories(cfg.out_dir);
    json j;
    j["stage"] = ms.trace.name;
    j["iterations"] = ms.trace.losses.size();
    j["loss_start"] = ms.trace.ema_start;
    j["loss_end"] = ms.trace.ema_end;
    j["improved"] = ms.trace.improved;
    j["seconds"] = ms.trace.seconds;
    j["n_gaussians"] = ms.trace.n_gaussians;
    j["skipped_iterations"] = ms.skipped;
    j["n_vertices"] = ms.mesh.vertices.size();
    j["n_faces"] = ms.mesh.faces.size();
    char fname[64];
    std::snprintf(fname, sizeof(fname), "metrics_%02d_%s.json", idx,
                  ms.trace.name.c_str());
    std::ofstream f(cfg.out_dir + "/" + fname, std::ios::binary);
    if (!f) throw io_error("cannot write metrics: " + cfg.out_dir + "/" + fname);
    f << j.dump(1);
}

}  // namespace

MeshStageResult run_meshing(const SceneState& scene, const Dataset& data,
                            const PipelineConfig& cfg) {
    validate_schedule(cfg.schedule);
    const auto t0 = Clock::now();
    MeshStageResult out;
    out.scaffold = build_scaffold(scene, cfg.schedule.foreground_mask_threshold);
    const std::vector<int> ts =
        cfg.single_frame_only ? std::vector<int>{0}
                              : scheduled_timesteps(data, cfg.frame_stride, -1);
    tsdf_init(out.scaffold, scene, data.cameras, ts);
    SdfOptimConfig sc;
    sc.iters = cfg.schedule.sdf_iters;
    sc.lr = cfg.rates.sdf;
    sc.seed = Rng::derive(cfg.seed, 6);
    const SdfOptimReport rep = optimize_sdf(out.scaffold, scene, data.cameras, ts, sc);
    out.mesh = marching_tets(out.scaffold,
                             pivot_positions(scene, out.scaffold.pivots, 0))
                   .mesh;
    out.skipped = rep.skipped;
    out.trace.name = "sdf";
    out.trace.losses = rep.losses;
    finish_trace(out.trace, t0, scene);
    return out;
}

PipelineResult run_pipeline(const Dataset& data, const PipelineConfig& cfg) {
    validate_schedule(cfg.schedule);
    if (data.n_views() < 2)
        throw invalid_input_error("run_pipeline: need at least two views");
    const int T = data.n_timesteps();
    if (T < 1) throw invalid_input_error("run_pipeline: dataset has no frames");
    if (!cfg.single_frame_only && T < 2)
        throw invalid_input_error("run_pipeline: need at least two timesteps");

    PipelineResult res;
    res.scene = cfg.init_scene_path.empty() ? init_from_first_frame(data, cfg.schedule)
                                            : load_scene(cfg.init_scene_path);
    if (int(res.scene.trajectory.size()) < T)
        res.scene.trajectory.resize(size_t(T));
    SceneState& scene = res.scene;
    AdamState adam;
    int idx = 0;

    StageTrace tr = run_init_refine(scene, data, cfg, &adam);
    emit_checkpoint(cfg, "init", scene, adam);
    emit_metrics(cfg, idx++, tr, scene, data, AppearanceMode::kBodyFrameSH, true);
    res.traces.push_back(std::move(tr));

    tr = run_mask_fit(scene, data, cfg, &adam);
    emit_checkpoint(cfg, "masks", scene, adam);
    emit_metrics(cfg, idx++, tr, scene, data, AppearanceMode::kBodyFrameSH, true);
    res.traces.push_back(std::move(tr));

    const auto mesh_stage = [&] {
        MeshStageResult ms = run_meshing(scene, data, cfg);
        if (!cfg.out_dir.empty()) {
            fs::create_directories(cfg.out_dir);
            export_ply(ms.mesh, cfg.out_dir + "/mesh.ply");
        }
        emit_mesh_metrics(cfg, idx++, ms);
        res.mesh = std::move(ms.mesh);
        res.traces.push_back(std::move(ms.trace));
    };

    if (cfg.single_frame_only) {
        mesh_stage();
        return res;
    }

    const std::vector<int> ts = scheduled_timesteps(data, cfg.frame_stride, -1);
    for (size_t i = 1; i < ts.size(); ++i) {
        const int k = ts[i];
        scene.trajectory[k] = scene.trajectory[ts[i - 1]];
        StageTrace ptr;
        res.poses.push_back(estimate_pose(scene, data, k, cfg, &ptr));
        emit_metrics(cfg, idx++, ptr, scene, data, AppearanceMode::kBodyFrameSH, false);
        res.traces.push_back(std::move(ptr));

        tr = refine_gaussians(scene, data, k, cfg, &adam);
        emit_metrics(cfg, idx++, tr, scene, data, AppearanceMode::kBodyFrameSH, false);
        res.traces.push_back(std::move(tr));
    }
    emit_checkpoint(cfg, "alternation", scene, adam);

    tr = run_post_refine(scene, data, cfg, &adam);
    emit_checkpoint(cfg, "post", scene, adam);
    emit_metrics(cfg, idx++, tr, scene, data, AppearanceMode::kBodyFrameSH, true);
    res.traces.push_back(std::move(tr));

    tr = run_final_refine(scene, data, cfg, &adam);
    emit_checkpoint(cfg, "final", scene, adam);
    emit_metrics(cfg, idx++, tr, scene, data, AppearanceMode::kFactorized, true);
    res.traces.push_back(std::move(tr));

    mesh_stage();
    return res;
}

}  // namespace osp
