#include "orbitsplat/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "orbitsplat/parallel.hpp"

namespace osp {

namespace {

constexpr double kZNear = 1e-4;     // camera-z cull for splat centers and hits
constexpr double kDenomEps = 1e-6;  // |n . ray| below this skips the ray
constexpr double kStopTrans = 1e-4;

inline std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
    h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    return h;
}

inline std::uint64_t bits(double d) {
    std::uint64_t u;
    std::memcpy(&u, &d, sizeof u);
    return u;
}

std::uint64_t compute_fingerprint(const SceneState& scene, const Camera& cam, int t,
                                  AppearanceMode mode, const RenderOptions& opts) {
    std::uint64_t h = 0x243f6a8885a308d3ULL;
    h = mix(h, std::uint64_t(scene.gaussians.size()));
    h = mix(h, std::uint64_t(scene.trajectory.size()));
    h = mix(h, std::uint64_t(t));
    h = mix(h, mode == AppearanceMode::kFactorized ? 2u : 1u);
    h = mix(h, opts.foreground_only ? 1u : 0u);
    h = mix(h, bits(opts.foreground_threshold));
    h = mix(h, std::uint64_t(cam.width));
    h = mix(h, std::uint64_t(cam.height));
    for (int i = 0; i < 9; ++i) {
        h = mix(h, bits(cam.K.data()[i]));
        h = mix(h, bits(cam.R.data()[i]));
    }
    for (int i = 0; i < 3; ++i) h = mix(h, bits(cam.t[i]));
    for (int i = 0; i < 3; ++i) h = mix(h, bits(scene.centroid[i]));
    for (const auto& g : scene.gaussians) {
        for (int i = 0; i < 3; ++i) h = mix(h, bits(g.mu[i]));
        const Vec4 q = g.q.vec();
        for (int i = 0; i < 4; ++i) h = mix(h, bits(q[i]));
        h = mix(h, bits(g.scale[0]));
        h = mix(h, bits(g.scale[1]));
        h = mix(h, bits(g.sigma));
        h = mix(h, bits(g.m));
        for (const auto& c : g.sh.coeffs)
            for (int i = 0; i < 3; ++i) h = mix(h, bits(c[i]));
        for (int i = 0; i < 3; ++i) h = mix(h, bits(g.k_d[i]));
    }
    for (const auto& p : scene.trajectory) {
        const Vec4 q = p.q_obj.vec();
        for (int i = 0; i < 4; ++i) h = mix(h, bits(q[i]));
        for (int i = 0; i < 3; ++i) h = mix(h, bits(p.t_obj[i]));
    }
    for (const auto& c : scene.shared.theta_s.coeffs)
        for (int i = 0; i < 3; ++i) h = mix(h, bits(c[i]));
    for (const auto& c : scene.shared.theta_d.coeffs)
        for (int i = 0; i < 3; ++i) h = mix(h, bits(c[i]));
    return h;
}

struct SplatPre {
    bool live = false;
    Vec3 mu_cam;
    Vec3 a1c, a2c, nc;  // camera-frame unit axes of the splat
    double s1 = 1, s2 = 1;
    double sigma = 0;
    double mask = 0;
    Vec3 n_cf;  // camera-facing world normal
    double flip = 1;
    Vec3 color = Vec3::Zero();
    Vec3 view = Vec3::UnitZ();  // unit world direction surface -> camera
    double view_len = 1;
    Quat q_tilde = Quat::identity();
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1;
    double zmean = 0;
};

struct Prep {
    std::vector<GaussianPrimitive> posed;
    std::vector<SplatPre> pre;
    std::vector<int> order;  // live indices, front-to-back by mean camera z
};

Prep prepare(const SceneState& scene, const Camera& cam, int t, AppearanceMode mode,
             const RenderOptions& opts) {
    validate_scene(scene);
    validate_camera(cam);
    Prep prep;
    prep.posed = transform_gaussians(scene, t);
    const Vec3 cam_pos = cam.position();
    const ObjectPose& pose = scene.trajectory[t];
    const int n = int(prep.posed.size());
    prep.pre.resize(n);
    const double w_lim = cam.width - 1.0, h_lim = cam.height - 1.0;
    for (int i = 0; i < n; ++i) {
        const GaussianPrimitive& g = prep.posed[i];
        SplatPre& p = prep.pre[i];
        if (opts.foreground_only && g.m < opts.foreground_threshold) continue;
        if (g.sigma < kAlphaCull) continue;
        const Vec3 mu_cam = cam.to_camera(g.mu);
        if (mu_cam.z() <= kZNear) continue;
        const Vec3 vv = cam_pos - g.mu;
        const double vlen = vv.norm();
        if (vlen < 1e-9) continue;

        const Mat3 rg = rot_from_quat(g.q);
        const Vec3 a1 = rg.col(0), a2 = rg.col(1), nw = rg.col(2);
        p.view = vv / vlen;
        p.view_len = vlen;
        p.flip = nw.dot(p.view) >= 0.0 ? 1.0 : -1.0;
        p.n_cf = p.flip * nw;
        p.mu_cam = mu_cam;
        p.a1c = cam.R * a1;
        p.a2c = cam.R * a2;
        p.nc = cam.R * nw;
        p.s1 = g.scale[0];
        p.s2 = g.scale[1];
        p.sigma = g.sigma;
        p.mask = g.m;
        p.zmean = mu_cam.z();

        if (mode == AppearanceMode::kFactorized) {
            p.color = shade_factorized(g.k_d, p.n_cf, p.view, scene.shared);
        } else {
            p.q_tilde = soft_masked_pose(pose, g.m).q;
            const Vec3 d_obj = quat_rotate(p.q_tilde.conjugate(), p.view);
            p.color = shade_bodyframe(g.sh, d_obj);
        }

        // Conservative pixel bounds: project the corners of the in-plane
        // rectangle that contains the alpha >= 1/255 ellipse.
        const double u_max = std::sqrt(std::max(0.0, 2.0 * std::log(255.0 * g.sigma)));
        double px0 = 1e30, px1 = -1e30, py0 = 1e30, py1 = -1e30;
        bool fallback = false;
        for (int cx = 0; cx < 4 && !fallback; ++cx) {
            const double sx = (cx & 1) ? 1.0 : -1.0;
            const double sy = (cx & 2) ? 1.0 : -1.0;
            const Vec3 corner =
                g.mu + sx * u_max * p.s1 * a1 + sy * u_max * p.s2 * a2;
            const Vec3 c_cam = cam.to_camera(corner);
            if (c_cam.z() <= kZNear) {
                fallback = true;
                break;
            }
            const Vec3 proj = cam.K * c_cam;
            const double px = proj.x() / c_cam.z(), py = proj.y() / c_cam.z();
            px0 = std::min(px0, px);
            px1 = std::max(px1, px);
            py0 = std::min(py0, py);
            py1 = std::max(py1, py);
        }
        if (fallback) {
            px0 = 0;
            px1 = w_lim;
            py0 = 0;
            py1 = h_lim;
        }
        p.x0 = std::max(0, int(std::floor(px0)) - 1);
        p.x1 = std::min(cam.width - 1, int(std::ceil(px1)) + 1);
        p.y0 = std::max(0, int(std::floor(py0)) - 1);
        p.y1 = std::min(cam.height - 1, int(std::ceil(py1)) + 1);
        if (p.x0 > p.x1 || p.y0 > p.y1) continue;
        p.live = true;
    }
    for (int i = 0; i < n; ++i)
        if (prep.pre[i].live) prep.order.push_back(i);
    std::sort(prep.order.begin(), prep.order.end(), [&](int a, int b) {
        if (prep.pre[a].zmean != prep.pre[b].zmean)
            return prep.pre[a].zmean < prep.pre[b].zmean;
        return a < b;
    });
    return prep;
}

std::vector<std::vector<int>> build_rows(const Prep& prep, int height) {
    std::vector<std::vector<int>> rows(height);
    for (int gi : prep.order)
        for (int y = prep.pre[gi].y0; y <= prep.pre[gi].y1; ++y)
            rows[y].push_back(gi);
    return rows;
}

}  // namespace

ParamGradients ParamGradients::zeros(const SceneState& scene) {
    ParamGradients g;
    const int n = int(scene.gaussians.size());
    g.mu.assign(n, Vec3::Zero());
    g.q.assign(n, Vec4::Zero());
    g.scale.assign(n, Vec2::Zero());
    g.sigma.assign(n, 0.0);
    g.m.assign(n, 0.0);
    g.sh.assign(size_t(n) * sh_count(kGaussianShOrder), Vec3::Zero());
    g.k_d.assign(n, Vec3::Zero());
    g.q_obj.assign(scene.trajectory.size(), Vec4::Zero());
    g.t_obj.assign(scene.trajectory.size(), Vec3::Zero());
    g.theta_s.assign(sh_count(kSpecularOrder), Vec3::Zero());
    g.theta_d.assign(sh_count(kDiffuseOrder), Vec3::Zero());
    return g;
}

void ParamGradients::accumulate(const ParamGradients& o) {
    auto add = [](auto& a, const auto& b) {
        for (size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    };
    add(mu, o.mu);
    add(q, o.q);
    add(scale, o.scale);
    add(sigma, o.sigma);
    add(m, o.m);
    add(sh, o.sh);
    add(k_d, o.k_d);
    add(q_obj, o.q_obj);
    add(t_obj, o.t_obj);
    add(theta_s, o.theta_s);
    add(theta_d, o.theta_d);
}

std::string ParamGradients::first_non_finite() const {
    auto bad3 = [](const std::vector<Vec3>& v) {
        for (const auto& x : v)
            if (!x.allFinite()) return true;
        return false;
    };
    for (const auto& x : mu)
        if (!x.allFinite()) return "mu";
    for (const auto& x : q)
        if (!x.allFinite()) return "q";
    for (const auto& x : scale)
        if (!x.allFinite()) return "scale";
    for (double x : sigma)
        if (!std::isfinite(x)) return "sigma";
    for (double x : m)
        if (!std::isfinite(x)) return "m";
    if (bad3(sh)) return "sh";
    if (bad3(k_d)) return "k_d";
    for (const auto& x : q_obj)
        if (!x.allFinite()) return "q_obj";
    if (bad3(t_obj)) return "t_obj";
    if (bad3(theta_s)) return "theta_s";
    if (bad3(theta_d)) return "theta_d";
    return {};
}

RenderBuffers render(const SceneState& scene, const Camera& cam, int t,
                     AppearanceMode mode, const RenderOptions& opts) {
    const Prep prep = prepare(scene, cam, t, mode, opts);
    const int w = cam.width, h = cam.height, np = w * h;

    RenderBuffers out;
    out.width = w;
    out.height = h;
    out.rgb.assign(np, Vec3::Zero());
    out.depth.assign(np, 0.0);
    out.normal.assign(np, Vec3::Zero());
    out.alpha.assign(np, 0.0);
    out.mask.assign(np, 0.0);

    const auto rows = build_rows(prep, h);
    std::vector<std::vector<BlendRecord>> pix_records(np);

    parallel_rows(h, [&](int y) {
        for (int x = 0; x < w; ++x) {
            const int p = y * w + x;
            const Vec3 d = cam.pixel_dir_cam(x, y);
            double trans = 1.0, dep = 0.0, alp = 0.0, msk = 0.0;
            Vec3 rgb = Vec3::Zero(), nrm = Vec3::Zero();
            for (int gi : rows[size_t(y)]) {
                const SplatPre& s = prep.pre[gi];
                if (x < s.x0 || x > s.x1) continue;
                const double denom = s.nc.dot(d);
                if (std::abs(denom) < kDenomEps) continue;
                const double t_ray = s.nc.dot(s.mu_cam) / denom;
                if (t_ray <= kZNear) continue;
                const Vec3 delta = t_ray * d - s.mu_cam;
                const double u1 = delta.dot(s.a1c) / s.s1;
                const double u2 = delta.dot(s.a2c) / s.s2;
                const double gexp = std::exp(-0.5 * (u1 * u1 + u2 * u2));
                const double alpha = std::min(s.sigma * gexp, kAlphaMax);
                if (alpha < kAlphaCull) continue;
                const double wgt = alpha * trans;
                rgb += wgt * s.color;
                dep += wgt * t_ray;
                nrm += wgt * s.n_cf;
                msk += wgt * s.mask;
                alp += wgt;
                pix_records[p].push_back({gi, alpha, trans});
                trans *= 1.0 - alpha;
                if (trans < kStopTrans) break;
            }
            out.rgb[p] = rgb;
            out.alpha[p] = alp;
            out.mask[p] = msk;
            out.depth[p] = alp > 0.0 ? dep / alp : 0.0;
            const double nn = nrm.norm();
            out.normal[p] = nn > 1e-12 ? Vec3(nrm / nn) : Vec3::Zero();
        }
    });

    out.rec_offset.resize(np + 1);
    out.rec_offset[0] = 0;
    for (int p = 0; p < np; ++p)
        out.rec_offset[p + 1] = out.rec_offset[p] + int(pix_records[p].size());
    out.records.resize(out.rec_offset[np]);
    for (int p = 0; p < np; ++p)
        std::copy(pix_records[p].begin(), pix_records[p].end(),
                  out.records.begin() + out.rec_offset[p]);

    out.fingerprint = compute_fingerprint(scene, cam, t, mode, opts);
    return out;
}

namespace {

// Per-shard partial sums that feed the shared post-pixel chains.
struct ShardAcc {
    std::vector<Vec3> g_color;
    std::vector<Vec3> g_mu_posed;
    std::vector<Vec4> g_q_posed;
    std::vector<Vec2> g_scale;
    std::vector<double> g_sigma;
    std::vector<double> g_m;

    explicit ShardAcc(int n)
        : g_color(n, Vec3::Zero()),
          g_mu_posed(n, Vec3::Zero()),
          g_q_posed(n, Vec4::Zero()),
          g_scale(n, Vec2::Zero()),
          g_sigma(n, 0.0),
          g_m(n, 0.0) {}
};

}  // namespace

ParamGradients render_backward(const SceneState& scene, const Camera& cam, int t,
                               AppearanceMode mode, const RenderBuffers& buffers,
                               const BufferGrads& upstream,
                               const RenderOptions& opts) {
    if (buffers.fingerprint != compute_fingerprint(scene, cam, t, mode, opts))
        throw invalid_input_error(
            "render_backward: buffers were produced from different inputs");
    const int w = cam.width, h = cam.height, np = w * h;
    auto check_size = [&](size_t sz, const char* name) {
        if (sz != 0 && int(sz) != np)
            throw invalid_input_error(std::string("render_backward: upstream size for ") +
                                      name);
    };
    check_size(upstream.rgb.size(), "rgb");
    check_size(upstream.depth.size(), "depth");
    check_size(upstream.normal.size(), "normal");
    check_size(upstream.alpha.size(), "alpha");
    check_size(upstream.mask.size(), "mask");

    const Prep prep = prepare(scene, cam, t, mode, opts);
    const int n = int(scene.gaussians.size());

    const int n_shards = fixed_shard_count(np);
    std::vector<ShardAcc> shards(n_shards, ShardAcc(n));

    parallel_shards(np, [&](int shard, int begin, int end) {
        ShardAcc& acc = shards[shard];
        for (int p = begin; p < end; ++p) {
            const int rb = buffers.rec_offset[p], re = buffers.rec_offset[p + 1];
            if (rb == re) continue;
            const int x = p % w, y = p / w;
            const Vec3 d = cam.pixel_dir_cam(x, y);

            const Vec3 g_rgb = upstream.rgb.empty() ? Vec3::Zero() : upstream.rgb[p];
            const double g_dep_buf = upstream.depth.empty() ? 0.0 : upstream.depth[p];
            const Vec3 g_nrm_buf =
                upstream.normal.empty() ? Vec3::Zero() : upstream.normal[p];
            const double g_msk = upstream.mask.empty() ? 0.0 : upstream.mask[p];
            double g_alp = upstream.alpha.empty() ? 0.0 : upstream.alpha[p];

            double g_dep_raw = 0.0;
            const double alp = buffers.alpha[p];
            if (g_dep_buf != 0.0 && alp > 0.0) {
                g_dep_raw = g_dep_buf / alp;
                g_alp -= g_dep_buf * buffers.depth[p] / alp;
            }
            Vec3 g_nrm_raw = Vec3::Zero();
            if (g_nrm_buf != Vec3::Zero()) {
                Vec3 v_acc = Vec3::Zero();
                for (int k = rb; k < re; ++k) {
                    const BlendRecord& r = buffers.records[k];
                    v_acc += r.alpha * r.trans * prep.pre[r.id].n_cf;
                }
                const double vn = v_acc.norm();
                if (vn > 1e-12) {
                    const Vec3 nu = v_acc / vn;
                    g_nrm_raw = (g_nrm_buf - nu * nu.dot(g_nrm_buf)) / vn;
                }
            }

            Vec3 s_rgb = Vec3::Zero(), s_nrm = Vec3::Zero();
            double s_dep = 0.0, s_msk = 0.0, s_alp = 0.0;
            for (int k = re - 1; k >= rb; --k) {
                const BlendRecord& rec = buffers.records[k];
                const int gi = rec.id;
                const SplatPre& s = prep.pre[gi];
                const double denom = s.nc.dot(d);
                const double t_ray = s.nc.dot(s.mu_cam) / denom;
                const Vec3 delta = t_ray * d - s.mu_cam;
                const double u1 = delta.dot(s.a1c) / s.s1;
                const double u2 = delta.dot(s.a2c) / s.s2;
                const double gexp = std::exp(-0.5 * (u1 * u1 + u2 * u2));
                const double at = rec.alpha * rec.trans;
                const double om = 1.0 - rec.alpha;

                acc.g_color[gi] += g_rgb * at;
                acc.g_m[gi] += g_msk * at;
                double d_tray = g_dep_raw * at;
                const Vec3 d_ncf = g_nrm_raw * at;

                const double d_alpha =
                    g_rgb.dot(s.color * rec.trans - s_rgb / om) +
                    g_dep_raw * (t_ray * rec.trans - s_dep / om) +
                    g_nrm_raw.dot(s.n_cf * rec.trans - s_nrm / om) +
                    g_msk * (s.mask * rec.trans - s_msk / om) +
                    g_alp * (rec.trans - s_alp / om);
                s_rgb += s.color * at;
                s_dep += t_ray * at;
                s_nrm += s.n_cf * at;
                s_msk += s.mask * at;
                s_alp += at;

                Vec3 d_delta = Vec3::Zero(), d_a1c = Vec3::Zero(), d_a2c = Vec3::Zero();
                if (s.sigma * gexp < kAlphaMax) {
                    acc.g_sigma[gi] += d_alpha * gexp;
                    const double d_gexp = d_alpha * s.sigma;
                    const double du1 = -u1 * gexp * d_gexp;
                    const double du2 = -u2 * gexp * d_gexp;
                    acc.g_scale[gi][0] += du1 * (-u1 / s.s1);
                    acc.g_scale[gi][1] += du2 * (-u2 / s.s2);
                    d_delta = du1 * s.a1c / s.s1 + du2 * s.a2c / s.s2;
                    d_a1c = du1 * delta / s.s1;
                    d_a2c = du2 * delta / s.s2;
                }
                d_tray += d_delta.dot(d);
                const Vec3 d_mu_cam = d_tray * (s.nc / denom) - d_delta;
                const Vec3 d_nc = -(d_tray / denom) * delta;

                acc.g_mu_posed[gi] += cam.R.transpose() * d_mu_cam;
                Mat3 drg;
                drg.col(0) = cam.R.transpose() * d_a1c;
                drg.col(1) = cam.R.transpose() * d_a2c;
                drg.col(2) = cam.R.transpose() * d_nc + s.flip * d_ncf;
                acc.g_q_posed[gi] += rot_from_quat_backward(prep.posed[gi].q, drg);
            }
        }
    });

    // Deterministic reduction, then the per-gaussian shading chains.
    ParamGradients grads = ParamGradients::zeros(scene);
    std::vector<Vec3> g_color(n, Vec3::Zero());
    std::vector<Vec3> g_mu_posed(n, Vec3::Zero());
    std::vector<Vec4> g_q_posed(n, Vec4::Zero());
    for (const ShardAcc& acc : shards) {
        for (int i = 0; i < n; ++i) {
            g_color[i] += acc.g_color[i];
            g_mu_posed[i] += acc.g_mu_posed[i];
            g_q_posed[i] += acc.g_q_posed[i];
            grads.scale[i] += acc.g_scale[i];
            grads.sigma[i] += acc.g_sigma[i];
            grads.m[i] += acc.g_m[i];
        }
    }

    const int shn = sh_count(kGaussianShOrder);
    std::vector<Vec4> g_qtilde;
    if (mode == AppearanceMode::kBodyFrameSH) g_qtilde.assign(n, Vec4::Zero());
    for (int i = 0; i < n; ++i) {
        if (g_color[i] == Vec3::Zero()) continue;
        const SplatPre& s = prep.pre[i];
        if (mode == AppearanceMode::kFactorized) {
            const FactorizedGrads fg = shade_factorized_backward(
                prep.posed[i].k_d, s.n_cf, s.view, scene.shared, g_color[i],
                grads.theta_s.data(), grads.theta_d.data());
            grads.k_d[i] += fg.d_kd;
            Mat3 drg = Mat3::Zero();
            drg.col(2) = s.flip * fg.d_normal;
            g_q_posed[i] += rot_from_quat_backward(prep.posed[i].q, drg);
            const Vec3 pv = fg.d_view - s.view * s.view.dot(fg.d_view);
            g_mu_posed[i] -= pv / s.view_len;
        } else {
            const Vec3 d_obj = quat_rotate(s.q_tilde.conjugate(), s.view);
            const BodyframeGrads bg = shade_bodyframe_backward(
                prep.posed[i].sh, d_obj, g_color[i], &grads.sh[size_t(i) * shn]);
            const Mat3 rt = rot_from_quat(s.q_tilde);
            const Vec3 d_view = rt * bg.d_view;
            const Vec3 pv = d_view - s.view * s.view.dot(d_view);
            g_mu_posed[i] -= pv / s.view_len;
            g_qtilde[i] +=
                rot_from_quat_backward(s.q_tilde, s.view * bg.d_view.transpose());
        }
    }

    transform_gaussians_backward(
        scene, t, g_mu_posed, g_q_posed, &grads.mu, &grads.q, &grads.m,
        &grads.q_obj[t], &grads.t_obj[t],
        mode == AppearanceMode::kBodyFrameSH ? &g_qtilde : nullptr);
    return grads;
}

}  // namespace osp
