#include "orbitsplat/optimizer.hpp"

#include <algorithm>
#include <cmath>

namespace osp {

void AdamState::init(const SceneState& scene) {
    step = 0;
    pose_step.assign(scene.trajectory.size(), 0);
    m1 = ParamGradients::zeros(scene);
    m2 = ParamGradients::zeros(scene);
}

bool AdamState::initialized_for(const SceneState& scene) const {
    return m1.mu.size() == scene.gaussians.size() &&
           m1.q_obj.size() == scene.trajectory.size() &&
           pose_step.size() == scene.trajectory.size();
}

namespace {

struct Stepper {
    double beta1, beta2, eps, c1, c2;

    void operator()(double& x, double& m1, double& m2, double g, double lr) const {
        m1 = beta1 * m1 + (1.0 - beta1) * g;
        m2 = beta2 * m2 + (1.0 - beta2) * g * g;
        x -= lr * (m1 / c1) / (std::sqrt(m2 / c2) + eps);
    }

    template <typename V>
    void vec(V& x, V& m1, V& m2, const V& g, double lr) const {
        for (int k = 0; k < x.size(); ++k) (*this)(x[k], m1[k], m2[k], g[k], lr);
    }
};

Quat renormed(const Quat& q) {
    const double n = q.norm();
    if (n < 1e-12) return Quat::identity();
    return {q.w / n, q.x / n, q.y / n, q.z / n};
}

}  // namespace

void adam_step(SceneState& scene, const ParamGradients& grads, AdamState& state,
               const LearningRates& lrs, const UpdateMask& mask) {
    const size_t n = scene.gaussians.size();
    if (!state.initialized_for(scene))
        throw invalid_input_error("adam_step: state shape does not match the scene");
    if (grads.mu.size() != n || grads.q_obj.size() != scene.trajectory.size())
        throw invalid_input_error("adam_step: gradient shape does not match the scene");
    const std::string bad = grads.first_non_finite();
    if (!bad.empty())
        throw numerical_error("adam_step: non-finite gradient in " + bad);

    ++state.step;
    const auto pw = [](double b, std::int64_t t) { return 1.0 - std::pow(b, double(t)); };
    Stepper st{state.beta1, state.beta2, state.eps, pw(state.beta1, state.step),
               pw(state.beta2, state.step)};

    const int shc = sh_count(kGaussianShOrder);
    for (size_t i = 0; i < n; ++i) {
        auto& g = scene.gaussians[i];
        if (mask.mu)
            st.vec(g.mu, state.m1.mu[i], state.m2.mu[i], grads.mu[i],
                   lrs.position * lrs.extent);
        if (mask.q) {
            Vec4 q = g.q.vec();
            st.vec(q, state.m1.q[i], state.m2.q[i], grads.q[i], lrs.rotation);
            g.q = renormed(Quat(q));
        }
        if (mask.scale) {
            st.vec(g.scale, state.m1.scale[i], state.m2.scale[i], grads.scale[i],
                   lrs.scale);
            g.scale = g.scale.cwiseMax(1e-6);
        }
        if (mask.sigma) {
            st(g.sigma, state.m1.sigma[i], state.m2.sigma[i], grads.sigma[i],
               lrs.opacity);
            g.sigma = std::clamp(g.sigma, 0.0, 1.0);
        }
        if (mask.m) {
            st(g.m, state.m1.m[i], state.m2.m[i], grads.m[i], lrs.mask);
            g.m = std::clamp(g.m, kMaskEps, 1.0 - kMaskEps);
        }
        if (mask.sh)
            for (int c = 0; c < shc; ++c) {
                const size_t k = i * shc + c;
                st.vec(g.sh.coeffs[c], state.m1.sh[k], state.m2.sh[k], grads.sh[k],
                       lrs.sh);
            }
        if (mask.k_d)
            st.vec(g.k_d, state.m1.k_d[i], state.m2.k_d[i], grads.k_d[i], lrs.sh);
    }
    if (mask.theta_s)
        for (size_t c = 0; c < scene.shared.theta_s.coeffs.size(); ++c)
            st.vec(scene.shared.theta_s.coeffs[c], state.m1.theta_s[c],
                   state.m2.theta_s[c], grads.theta_s[c], lrs.theta);
    if (mask.theta_d)
        for (size_t c = 0; c < scene.shared.theta_d.coeffs.size(); ++c)
            st.vec(scene.shared.theta_d.coeffs[c], state.m1.theta_d[c],
                   state.m2.theta_d[c], grads.theta_d[c], lrs.theta);

    for (int t : mask.pose_timesteps) {
        if (t < 0 || size_t(t) >= scene.trajectory.size())
            throw invalid_input_error("adam_step: pose timestep out of range");
        Stepper pst{state.beta1, state.beta2, state.eps,
                    pw(state.beta1, ++state.pose_step[t]),
                    pw(state.beta2, state.pose_step[t])};
        auto& pose = scene.trajectory[t];
        Vec4 q = pose.q_obj.vec();
        pst.vec(q, state.m1.q_obj[t], state.m2.q_obj[t], grads.q_obj[t],
                lrs.pose_rotation);
        pose.q_obj = renormed(Quat(q));
        pst.vec(pose.t_obj, state.m1.t_obj[t], state.m2.t_obj[t], grads.t_obj[t],
                lrs.pose_translation * lrs.extent);
    }
}

void DensifyStats::init(size_t n_gaussians) {
    grad_sum.assign(n_gaussians, 0.0);
    n.assign(n_gaussians, 0);
}

void DensifyStats::accumulate(const ParamGradients& grads) {
    if (grads.mu.size() != grad_sum.size())
        throw invalid_input_error("DensifyStats: gradient count mismatch");
    for (size_t i = 0; i < grad_sum.size(); ++i) {
        grad_sum[i] += grads.mu[i].norm();
        ++n[i];
    }
}

void reset_opacity(SceneState& scene, AdamState& state, double value) {
    if (!state.initialized_for(scene))
        throw invalid_input_error("reset_opacity: state does not match the scene");
    for (size_t i = 0; i < scene.gaussians.size(); ++i) {
        scene.gaussians[i].sigma = std::min(scene.gaussians[i].sigma, value);
        state.m1.sigma[i] = 0.0;
        state.m2.sigma[i] = 0.0;
    }
}

DensityControlReport density_control(SceneState& scene, DensifyStats& stats,
                                     AdamState& state, const DensityControlConfig& cfg,
                                     double extent, Rng& rng) {
    const size_t count = scene.gaussians.size();
    if (stats.grad_sum.size() != count)
        throw invalid_input_error("density_control: stats do not match the scene");
    if (!state.initialized_for(scene))
        throw invalid_input_error("density_control: state does not match the scene");

    const int shc = sh_count(kGaussianShOrder);
    DensityControlReport rep;
    std::vector<GaussianPrimitive> out;
    // Index of the source gaussian whose moments each output keeps; -1 = fresh.
    std::vector<int> moment_src;
    out.reserve(count);
    moment_src.reserve(count);

    for (size_t i = 0; i < count; ++i) {
        const auto& g = scene.gaussians[i];
        if (g.sigma < cfg.tau_prune) {
            ++rep.n_pruned;
            continue;
        }
        const bool may_densify =
            cfg.max_gaussians <= 0 || count < size_t(cfg.max_gaussians);
        const double mean_grad = stats.n[i] > 0 ? stats.grad_sum[i] / stats.n[i] : 0.0;
        if (!may_densify || mean_grad <= cfg.tau_grad) {
            out.push_back(g);
            moment_src.push_back(int(i));
            continue;
        }
        if (g.scale.maxCoeff() > cfg.split_threshold * extent) {
            ++rep.n_split;
            const Mat3 r = rot_from_quat(g.q);
            for (int child = 0; child < 2; ++child) {
                GaussianPrimitive c = g;
                const Vec2 xi(rng.normal(), rng.normal());
                c.mu = g.mu + r.col(0) * (g.scale[0] * xi[0]) +
                       r.col(1) * (g.scale[1] * xi[1]);
                c.scale = g.scale / cfg.split_factor;
                out.push_back(c);
                moment_src.push_back(-1);
            }
        } else {
            ++rep.n_cloned;
            out.push_back(g);
            moment_src.push_back(int(i));
            out.push_back(g);
            moment_src.push_back(-1);
        }
    }

    ParamGradients nm1 = state.m1, nm2 = state.m2;
    const size_t nn = out.size();
    nm1.mu.assign(nn, Vec3::Zero());
    nm1.q.assign(nn, Vec4::Zero());
    nm1.scale.assign(nn, Vec2::Zero());
    nm1.sigma.assign(nn, 0.0);
    nm1.m.assign(nn, 0.0);
    nm1.sh.assign(nn * shc, Vec3::Zero());
    nm1.k_d.assign(nn, Vec3::Zero());
    nm2.mu = nm1.mu;
    nm2.q = nm1.q;
    nm2.scale = nm1.scale;
    nm2.sigma = nm1.sigma;
    nm2.m = nm1.m;
    nm2.sh = nm1.sh;
    nm2.k_d = nm1.k_d;
    for (size_t j = 0; j < nn; ++j) {
        const int src = moment_src[j];
        if (src < 0) continue;
        nm1.mu[j] = state.m1.mu[src];
        nm1.q[j] = state.m1.q[src];
        nm1.scale[j] = state.m1.scale[src];
        nm1.sigma[j] = state.m1.sigma[src];
        nm1.m[j] = state.m1.m[src];
        nm1.k_d[j] = state.m1.k_d[src];
        nm2.mu[j] = state.m2.mu[src];
        nm2.q[j] = state.m2.q[src];
        nm2.scale[j] = state.m2.scale[src];
        nm2.sigma[j] = state.m2.sigma[src];
        nm2.m[j] = state.m2.m[src];
        nm2.k_d[j] = state.m2.k_d[src];
        for (int c = 0; c < shc; ++c) {
            nm1.sh[j * shc + c] = state.m1.sh[size_t(src) * shc + c];
            nm2.sh[j * shc + c] = state.m2.sh[size_t(src) * shc + c];
        }
    }
    scene.gaussians = std::move(out);
    state.m1 = std::move(nm1);
    state.m2 = std::move(nm2);
    stats.init(nn);
    return rep;
}

}  // namespace osp
