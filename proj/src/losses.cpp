#include "orbitsplat/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "orbitsplat/parallel.hpp"

namespace osp {

namespace {

constexpr int kWin = 11;
constexpr int kHalf = kWin / 2;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const std::array<double, kWin>& window() {
    static const std::array<double, kWin> w = [] {
        std::array<double, kWin> k{};
        double sum = 0.0;
        for (int i = 0; i < kWin; ++i) {
            const double d = i - kHalf;
            k[i] = std::exp(-0.5 * d * d / (1.5 * 1.5));
            sum += k[i];
        }
        for (auto& v : k) v /= sum;
        return k;
    }();
    return w;
}

// Separable Gaussian blur with clamp-to-edge padding, and its exact adjoint
// (out-of-range taps scatter back onto edge pixels).
void conv_h(const std::vector<double>& in, std::vector<double>& out, int w, int h) {
    const auto& k = window();
    parallel_rows(h, [&](int y) {
        const double* row = in.data() + size_t(y) * w;
        double* orow = out.data() + size_t(y) * w;
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -kHalf; i <= kHalf; ++i)
                acc += k[i + kHalf] * row[std::clamp(x + i, 0, w - 1)];
            orow[x] = acc;
        }
    });
}

void conv_v(const std::vector<double>& in, std::vector<double>& out, int w, int h) {
    const auto& k = window();
    parallel_rows(w, [&](int x) {
        for (int y = 0; y < h; ++y) {
            double acc = 0.0;
            for (int i = -kHalf; i <= kHalf; ++i)
                acc += k[i + kHalf] * in[size_t(std::clamp(y + i, 0, h - 1)) * w + x];
            out[size_t(y) * w + x] = acc;
        }
    });
}

void conv_h_adj(const std::vector<double>& in, std::vector<double>& out, int w, int h) {
    const auto& k = window();
    parallel_rows(h, [&](int y) {
        const double* row = in.data() + size_t(y) * w;
        double* orow = out.data() + size_t(y) * w;
        std::fill(orow, orow + w, 0.0);
        for (int x = 0; x < w; ++x)
            for (int i = -kHalf; i <= kHalf; ++i)
                orow[std::clamp(x + i, 0, w - 1)] += k[i + kHalf] * row[x];
    });
}

void conv_v_adj(const std::vector<double>& in, std::vector<double>& out, int w, int h) {
    const auto& k = window();
    parallel_rows(w, [&](int x) {
        for (int y = 0; y < h; ++y) out[size_t(y) * w + x] = 0.0;
        for (int y = 0; y < h; ++y)
            for (int i = -kHalf; i <= kHalf; ++i)
                out[size_t(std::clamp(y + i, 0, h - 1)) * w + x] += k[i + kHalf] * in[size_t(y) * w + x];
    });
}

void blur(const std::vector<double>& in, std::vector<double>& tmp, std::vector<double>& out,
          int w, int h) {
    conv_h(in, tmp, w, h);
    conv_v(tmp, out, w, h);
}

void blur_adj(const std::vector<double>& in, std::vector<double>& tmp,
              std::vector<double>& out, int w, int h) {
    conv_v_adj(in, tmp, w, h);
    conv_h_adj(tmp, out, w, h);
}

}  // namespace

RgbLossResult rgb_loss(const std::vector<Vec3>& rendered, const std::vector<Vec3>& target,
                       int width, int height, double lambda_dssim,
                       const std::vector<double>* pixel_weight) {
    const size_t np = size_t(width) * height;
    if (width <= 0 || height <= 0 || rendered.size() != np || target.size() != np)
        throw invalid_input_error("rgb_loss: image dimensions do not match");
    if (pixel_weight && pixel_weight->size() != np)
        throw invalid_input_error("rgb_loss: pixel weight size mismatch");

    double weight_sum = 0.0;
    if (pixel_weight) {
        for (double w : *pixel_weight) weight_sum += w;
    } else {
        weight_sum = double(np);
    }
    RgbLossResult res;
    res.d_rgb.assign(np, Vec3::Zero());
    if (weight_sum <= 0.0) return res;
    const double inv_n = 1.0 / (3.0 * weight_sum);
    auto wp = [&](size_t p) { return pixel_weight ? (*pixel_weight)[p] : 1.0; };

    // Truncated-SH shading can dip below zero; the loss sees the non-negative
    // clamp of both images and the gradient is cut where the clamp is active.
    std::vector<Vec3> rend(np), targ(np);
    for (size_t p = 0; p < np; ++p) {
        rend[p] = rendered[p].cwiseMax(0.0);
        targ[p] = target[p].cwiseMax(0.0);
    }

    double l1 = 0.0;
    for (size_t p = 0; p < np; ++p) {
        const Vec3 d = rend[p] - targ[p];
        l1 += wp(p) * d.cwiseAbs().sum();
        for (int c = 0; c < 3; ++c) {
            const double s = d[c] > 0.0 ? 1.0 : (d[c] < 0.0 ? -1.0 : 0.0);
            res.d_rgb[p][c] += (1.0 - lambda_dssim) * s * wp(p) * inv_n;
        }
    }
    res.l1 = l1 * inv_n;

    // SSIM per channel from blurred first/second moments.
    std::vector<double> x(np), y(np), xx(np), yy(np), xy(np), tmp(np);
    std::vector<double> mx(np), my(np), wx2(np), wy2(np), wxy(np);
    std::vector<double> g_mx(np), g_wx2(np), g_wxy(np), adj(np);
    double dssim_sum = 0.0;  // sum of (1 - s); exact 0 for identical images
    for (int c = 0; c < 3; ++c) {
        for (size_t p = 0; p < np; ++p) {
            x[p] = rend[p][c];
            y[p] = targ[p][c];
            xx[p] = x[p] * x[p];
            yy[p] = y[p] * y[p];
            xy[p] = x[p] * y[p];
        }
        blur(x, tmp, mx, width, height);
        blur(y, tmp, my, width, height);
        blur(xx, tmp, wx2, width, height);
        blur(yy, tmp, wy2, width, height);
        blur(xy, tmp, wxy, width, height);

        for (size_t p = 0; p < np; ++p) {
            const double a1 = 2.0 * (mx[p] * my[p]) + kC1;
            const double a2 = 2.0 * (wxy[p] - mx[p] * my[p]) + kC2;
            const double b1 = mx[p] * mx[p] + my[p] * my[p] + kC1;
            const double b2 = (wx2[p] - mx[p] * mx[p]) + (wy2[p] - my[p] * my[p]) + kC2;
            const double s = (a1 * a2) / (b1 * b2);
            dssim_sum += wp(p) * (1.0 - s);

            // d(dssim)/ds = -w/2 * inv_n; chain into the moment maps. The
            // partials are arranged so that they cancel bitwise when the two
            // images are identical, keeping the gradient exactly zero there.
            const double gs = -0.5 * lambda_dssim * wp(p) * inv_n;
            const double inv_bb = 1.0 / (b1 * b2);
            const double ds_da1 = a2 * inv_bb;
            const double ds_da2 = a1 * inv_bb;
            const double ds_db1 = -s * (b2 * inv_bb);
            const double ds_db2 = -s * (b1 * inv_bb);
            g_mx[p] = gs * 2.0 *
                      (my[p] * (ds_da1 - ds_da2) + mx[p] * (ds_db1 - ds_db2));
            g_wx2[p] = gs * ds_db2;
            g_wxy[p] = gs * ds_da2 * 2.0;
        }
        blur_adj(g_mx, tmp, adj, width, height);
        for (size_t p = 0; p < np; ++p) res.d_rgb[p][c] += adj[p];
        blur_adj(g_wx2, tmp, adj, width, height);
        for (size_t p = 0; p < np; ++p) res.d_rgb[p][c] += adj[p] * 2.0 * x[p];
        blur_adj(g_wxy, tmp, adj, width, height);
        for (size_t p = 0; p < np; ++p) res.d_rgb[p][c] += adj[p] * y[p];
    }
    for (size_t p = 0; p < np; ++p)
        for (int c = 0; c < 3; ++c)
            if (rendered[p][c] < 0.0) res.d_rgb[p][c] = 0.0;
    res.dssim = 0.5 * dssim_sum * inv_n;
    res.loss = (1.0 - lambda_dssim) * res.l1 + lambda_dssim * res.dssim;
    return res;
}

std::vector<double> ssim_map(const std::vector<Vec3>& a, const std::vector<Vec3>& b,
                             int width, int height) {
    const size_t np = size_t(width) * height;
    if (width <= 0 || height <= 0 || a.size() != np || b.size() != np)
        throw invalid_input_error("ssim_map: image dimensions do not match");
    std::vector<double> x(np), y(np), xx(np), yy(np), xy(np), tmp(np);
    std::vector<double> mx(np), my(np), wx2(np), wy2(np), wxy(np);
    std::vector<double> out(np, 0.0);
    for (int c = 0; c < 3; ++c) {
        for (size_t p = 0; p < np; ++p) {
            x[p] = a[p][c];
            y[p] = b[p][c];
            xx[p] = x[p] * x[p];
            yy[p] = y[p] * y[p];
            xy[p] = x[p] * y[p];
        }
        blur(x, tmp, mx, width, height);
        blur(y, tmp, my, width, height);
        blur(xx, tmp, wx2, width, height);
        blur(yy, tmp, wy2, width, height);
        blur(xy, tmp, wxy, width, height);
        for (size_t p = 0; p < np; ++p) {
            const double a1 = 2.0 * (mx[p] * my[p]) + kC1;
            const double a2 = 2.0 * (wxy[p] - mx[p] * my[p]) + kC2;
            const double b1 = mx[p] * mx[p] + my[p] * my[p] + kC1;
            const double b2 = (wx2[p] - mx[p] * mx[p]) + (wy2[p] - my[p] * my[p]) + kC2;
            out[p] += (a1 * a2) / (b1 * b2) / 3.0;
        }
    }
    return out;
}

EntropyLossResult entropy_loss(const std::vector<double>& masks) {
    // x ln x extended by its limit so exactly binary masks cost exactly zero;
    // the gradient stays finite through the clamp.
    const auto xlnx = [](double v) { return v > 0.0 ? v * std::log(v) : 0.0; };
    EntropyLossResult res;
    res.d_m.resize(masks.size());
    for (size_t i = 0; i < masks.size(); ++i) {
        res.loss += -xlnx(masks[i]) - xlnx(1.0 - masks[i]);
        const double m = std::clamp(masks[i], kMaskEps, 1.0 - kMaskEps);
        res.d_m[i] = std::log((1.0 - m) / m);
    }
    return res;
}

ConsistencyLossResult depth_normal_consistency(const RenderBuffers& b, const Camera& cam,
                                               double alpha_threshold) {
    const int w = b.width, h = b.height;
    ConsistencyLossResult res;
    res.d_depth.assign(b.pixels(), 0.0);
    res.d_normal.assign(b.pixels(), Vec3::Zero());
    if (w < 3 || h < 3) return res;

    auto valid = [&](int x, int y) {
        return b.alpha[size_t(y) * w + x] >= alpha_threshold;
    };
    auto point = [&](int x, int y) -> Vec3 {
        return b.depth[size_t(y) * w + x] * cam.pixel_dir_cam(x, y);
    };

    struct Contribution {
        int x, y;
        double term;
        Vec3 g_t1, g_t2;  // dL/d(central differences), before the 1/n factor
        Vec3 g_nr;        // dL/d(rendered normal)
    };
    std::vector<Contribution> contribs;
    for (int y = 1; y < h - 1; ++y)
        for (int x = 1; x < w - 1; ++x) {
            if (!valid(x, y) || !valid(x - 1, y) || !valid(x + 1, y) || !valid(x, y - 1) ||
                !valid(x, y + 1))
                continue;
            const Vec3 t1 = 0.5 * (point(x + 1, y) - point(x - 1, y));
            const Vec3 t2 = 0.5 * (point(x, y + 1) - point(x, y - 1));
            const Vec3 c = t2.cross(t1);  // camera-facing for a front surface
            const double cn = c.norm();
            if (cn < 1e-12) continue;
            const Vec3 n_cam = c / cn;
            const Vec3 n_world = cam.R.transpose() * n_cam;
            const Vec3 n_r = b.normal[size_t(y) * w + x];

            Contribution ct;
            ct.x = x;
            ct.y = y;
            ct.term = 1.0 - n_world.dot(n_r);
            ct.g_nr = -n_world;
            const Vec3 g_ncam = cam.R * (-n_r);
            const Vec3 g_c = (g_ncam - n_cam * n_cam.dot(g_ncam)) / cn;
            ct.g_t1 = g_c.cross(t2);
            ct.g_t2 = t1.cross(g_c);
            contribs.push_back(ct);
        }
    if (contribs.empty()) return res;

    const double inv_n = 1.0 / double(contribs.size());
    res.n_valid = int(contribs.size());
    double sum = 0.0;
    for (const auto& ct : contribs) {
        sum += ct.term;
        res.d_normal[size_t(ct.y) * w + ct.x] += inv_n * ct.g_nr;
        const auto scatter = [&](int px, int py, const Vec3& g) {
            res.d_depth[size_t(py) * w + px] += inv_n * g.dot(cam.pixel_dir_cam(px, py));
        };
        scatter(ct.x + 1, ct.y, 0.5 * ct.g_t1);
        scatter(ct.x - 1, ct.y, -0.5 * ct.g_t1);
        scatter(ct.x, ct.y + 1, 0.5 * ct.g_t2);
        scatter(ct.x, ct.y - 1, -0.5 * ct.g_t2);
    }
    res.loss = sum * inv_n;
    return res;
}

PriorLossResult prior_losses(const RenderBuffers& b, const PriorMaps& priors,
                             double alpha_threshold) {
    const size_t np = size_t(b.pixels());
    if (priors.width != b.width || priors.height != b.height ||
        priors.depth.size() != np || priors.normal.size() != np ||
        priors.depth_valid.size() != np || priors.normal_valid.size() != np)
        throw invalid_input_error("prior_losses: prior maps do not match the render size");

    PriorLossResult res;
    res.d_depth.assign(np, 0.0);
    res.d_normal.assign(np, Vec3::Zero());

    size_t nd = 0, nn = 0;
    for (size_t p = 0; p < np; ++p) {
        if (b.alpha[p] < alpha_threshold) continue;
        if (priors.depth_valid[p]) ++nd;
        if (priors.normal_valid[p]) ++nn;
    }
    if (nd == 0 && nn == 0) {
        res.low_coverage = true;
        return res;
    }
    for (size_t p = 0; p < np; ++p) {
        if (b.alpha[p] < alpha_threshold) continue;
        if (priors.depth_valid[p]) {
            const double d = b.depth[p] - priors.depth[p];
            res.depth_term += std::abs(d);
            res.d_depth[p] = (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / double(nd);
        }
        if (priors.normal_valid[p]) {
            res.normal_term += 1.0 - b.normal[p].dot(priors.normal[p]);
            res.d_normal[p] = -priors.normal[p] / double(nn);
        }
    }
    if (nd > 0) res.depth_term /= double(nd);
    if (nn > 0) res.normal_term /= double(nn);
    return res;
}

double compose_stage_loss(Stage stage, const LossParts& parts, const LossWeights& w) {
    auto need = [](const std::optional<double>& v, const char* name) {
        if (!v) throw invalid_input_error(std::string("compose_stage_loss: missing part ") + name);
        return *v;
    };
    switch (stage) {
        case Stage::kPose:
            return w.lambda_rgb * need(parts.rgb, "rgb") +
                   w.lambda_entropy * need(parts.entropy, "entropy");
        case Stage::kRefine:
            return w.lambda_rgb * need(parts.rgb, "rgb") +
                   w.lambda_n * need(parts.consistency, "consistency") +
                   w.lambda_pnormal * need(parts.prior_normal, "prior_normal") +
                   w.lambda_pdepth * need(parts.prior_depth, "prior_depth") +
                   w.lambda_entropy * need(parts.entropy, "entropy");
        case Stage::kFinal:
            return w.lambda_rgb * need(parts.rgb, "rgb") +
                   w.lambda_n * need(parts.consistency, "consistency") +
                   w.lambda_entropy * need(parts.entropy, "entropy");
    }
    throw invalid_input_error("compose_stage_loss: unknown stage");
}

}  // namespace osp
