#include "orbitsplat/meshing.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_map>

#include "orbitsplat/parallel.hpp"
#include "orbitsplat/rng.hpp"

namespace osp {

namespace {

constexpr double kNormalHalfExtent = 2e-4;
constexpr double kSdfNudge = 1e-12;
constexpr double kMinTriangleArea = 1e-12;

double nudged(double sdf) { return sdf == 0.0 ? kSdfNudge : sdf; }

}  // namespace

std::vector<int> extract_foreground(const SceneState& scene, double threshold) {
    std::vector<int> ids;
    for (int i = 0; i < int(scene.gaussians.size()); ++i)
        if (scene.gaussians[i].m >= threshold) ids.push_back(i);
    if (ids.empty())
        throw degenerate_error("extract_foreground: no mask reaches the threshold");
    return ids;
}

std::vector<Pivot> place_pivots(const SceneState& scene,
                                const std::vector<int>& foreground) {
    std::vector<Pivot> pivots;
    pivots.reserve(foreground.size() * 9);
    for (int id : foreground) {
        const GaussianPrimitive& g = scene.gaussians[size_t(id)];
        pivots.push_back({id, Vec3::Zero(), 0.0});
        const double hx = 1.5 * g.scale.x(), hy = 1.5 * g.scale.y();
        for (int corner = 0; corner < 8; ++corner) {
            const Vec3 local((corner & 1) ? hx : -hx, (corner & 2) ? hy : -hy,
                             (corner & 4) ? kNormalHalfExtent : -kNormalHalfExtent);
            pivots.push_back({id, local, 0.0});
        }
    }
    return pivots;
}

std::vector<Vec3> pivot_positions(const SceneState& scene,
                                  const std::vector<Pivot>& pivots, int t) {
    const std::vector<GaussianPrimitive> posed = transform_gaussians(scene, t);
    std::vector<Vec3> out(pivots.size());
    for (size_t i = 0; i < pivots.size(); ++i) {
        const GaussianPrimitive& g = posed[size_t(pivots[i].parent)];
        out[i] = g.mu + rot_from_quat(g.q) * pivots[i].local;
    }
    return out;
}

TetScaffold build_scaffold(const SceneState& scene, double threshold) {
    TetScaffold sc;
    sc.threshold = threshold;
    sc.foreground = extract_foreground(scene, threshold);
    sc.pivots = place_pivots(scene, sc.foreground);
    const std::vector<Vec3> pos = pivot_positions(scene, sc.pivots, 0);
    Vec3 lo = pos[0], hi = pos[0];
    for (const auto& p : pos) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    sc.tets = delaunay_tets(pos, (hi - lo).norm());
    return sc;
}

void tsdf_init(TetScaffold& scaffold, const SceneState& scene,
               const std::vector<Camera>& cams, const std::vector<int>& timesteps) {
    if (cams.empty() || timesteps.empty())
        throw invalid_input_error("tsdf_init: no views or timesteps");

    std::vector<double> scales;
    scales.reserve(scaffold.foreground.size());
    for (int id : scaffold.foreground) {
        const Vec2& s = scene.gaussians[size_t(id)].scale;
        scales.push_back(0.5 * (s.x() + s.y()));
    }
    std::nth_element(scales.begin(), scales.begin() + scales.size() / 2, scales.end());
    const double tau = 5.0 * scales[scales.size() / 2];
    scaffold.truncation = tau;

    const size_t np = scaffold.pivots.size();
    std::vector<double> sum(np, 0.0);
    std::vector<int> count(np, 0);

    RenderOptions opts;
    opts.foreground_only = true;
    opts.foreground_threshold = scaffold.threshold;
    for (int t : timesteps) {
        const std::vector<Vec3> pos = pivot_positions(scene, scaffold.pivots, t);
        for (const Camera& cam : cams) {
            const RenderBuffers buf =
                render(scene, cam, t, AppearanceMode::kBodyFrameSH, opts);
            parallel_shards(int(np), [&](int, int begin, int end) {
                for (int i = begin; i < end; ++i) {
                    const Vec3 pc = cam.to_camera(pos[size_t(i)]);
                    if (pc.z() <= 1e-4) continue;
                    const Vec3 uvw = cam.K * (pc / pc.z());
                    const int px = int(std::lround(uvw.x() - 0.5));
                    const int py = int(std::lround(uvw.y() - 0.5));
                    if (px < 0 || px >= buf.width || py < 0 || py >= buf.height)
                        continue;
                    const double d = buf.depth[size_t(py) * buf.width + px];
                    if (d <= 0.0) continue;
                    sum[size_t(i)] += std::clamp(d - pc.z(), -tau, tau);
                    ++count[size_t(i)];
                }
            });
        }
    }
    for (size_t i = 0; i < np; ++i)
        scaffold.pivots[i].sdf = count[i] > 0 ? sum[i] / count[i] : tau;
}

namespace {

// Ordered "other three" for a lone negative vertex i such that (i, a, b, c)
// is an even permutation of (0,1,2,3); keeps windings outward on positively
// oriented tets.
constexpr int kLone[4][3] = {{1, 2, 3}, {0, 3, 2}, {0, 1, 3}, {0, 2, 1}};

// For two negative vertices {i, j} (i < j), the (k, l) making (i,j,k,l) even.
constexpr int kPairKL[4][4][2] = {
    {{0, 0}, {2, 3}, {3, 1}, {1, 2}},
    {{0, 0}, {0, 0}, {0, 3}, {2, 0}},
    {{0, 0}, {0, 0}, {0, 0}, {0, 1}},
    {{0, 0}, {0, 0}, {0, 0}, {0, 0}},
};

struct TetTriangles {
    // Up to 2 triangles, each as 3 pivot-pair edges.
    std::array<std::array<std::array<int, 2>, 3>, 2> tri;
    int n = 0;
};

TetTriangles tet_case(const std::array<int, 4>& v, const double s[4]) {
    TetTriangles out;
    int neg[4], pos[4], nn = 0, np = 0;
    for (int k = 0; k < 4; ++k) {
        if (s[k] < 0.0)
            neg[nn++] = k;
        else
            pos[np++] = k;
    }
    auto edge = [&](int a, int b) { return std::array<int, 2>{v[size_t(a)], v[size_t(b)]}; };
    if (nn == 1) {
        const int i = neg[0];
        const int* o = kLone[i];
        out.tri[0] = {edge(i, o[0]), edge(i, o[1]), edge(i, o[2])};
        out.n = 1;
    } else if (nn == 3) {
        const int j = pos[0];
        const int* o = kLone[j];
        out.tri[0] = {edge(j, o[0]), edge(j, o[2]), edge(j, o[1])};
        out.n = 1;
    } else if (nn == 2) {
        const int i = neg[0], j = neg[1];
        const int k = kPairKL[i][j][0], l = kPairKL[i][j][1];
        out.tri[0] = {edge(i, k), edge(i, l), edge(j, l)};
        out.tri[1] = {edge(i, k), edge(j, l), edge(j, k)};
        out.n = 2;
    }
    return out;
}

}  // namespace

ScaffoldMesh marching_tets(const TetScaffold& scaffold,
                           const std::vector<Vec3>& positions) {
    if (positions.size() != scaffold.pivots.size())
        throw invalid_input_error("marching_tets: positions size mismatch");
    const int nt = int(scaffold.tets.size());

    // Classify tets in fixed shards so the mesh is identical for any thread
    // count; assembly walks shards in order.
    const int shards = std::max(fixed_shard_count(nt), 1);
    std::vector<std::vector<TetTriangles>> found(static_cast<size_t>(shards));
    parallel_shards(nt, [&](int shard, int begin, int end) {
        auto& local = found[size_t(shard)];
        for (int ti = begin; ti < end; ++ti) {
            const auto& tet = scaffold.tets[size_t(ti)];
            double s[4];
            for (int k = 0; k < 4; ++k)
                s[k] = nudged(scaffold.pivots[size_t(tet[size_t(k)])].sdf);
            const TetTriangles tc = tet_case(tet, s);
            if (tc.n > 0) local.push_back(tc);
        }
    });

    ScaffoldMesh out;
    std::unordered_map<std::uint64_t, int> vertex_of;
    auto vertex_for = [&](const std::array<int, 2>& e) {
        const int a = std::min(e[0], e[1]), b = std::max(e[0], e[1]);
        const std::uint64_t key =
            (std::uint64_t(std::uint32_t(a)) << 32) | std::uint32_t(b);
        auto it = vertex_of.find(key);
        if (it != vertex_of.end()) return it->second;
        const double sa = nudged(scaffold.pivots[size_t(a)].sdf);
        const double sb = nudged(scaffold.pivots[size_t(b)].sdf);
        const double w = sa / (sa - sb);
        const Vec3 v =
            positions[size_t(a)] + w * (positions[size_t(b)] - positions[size_t(a)]);
        const int idx = int(out.mesh.vertices.size());
        out.mesh.vertices.push_back(v);
        out.edges.push_back({a, b});
        out.weights.push_back(w);
        vertex_of.emplace(key, idx);
        return idx;
    };

    for (const auto& local : found)
        for (const TetTriangles& tc : local)
            for (int k = 0; k < tc.n; ++k) {
                const int i0 = vertex_for(tc.tri[size_t(k)][0]);
                const int i1 = vertex_for(tc.tri[size_t(k)][1]);
                const int i2 = vertex_for(tc.tri[size_t(k)][2]);
                out.mesh.faces.push_back({i0, i1, i2});
                if (out.mesh.face_area(int(out.mesh.faces.size()) - 1) <=
                    kMinTriangleArea)
                    out.mesh.faces.pop_back();
            }

    // Drop vertices only referenced by dropped degenerate faces.
    std::vector<int> remap(out.mesh.vertices.size(), -1);
    ScaffoldMesh packed;
    for (auto& f : out.mesh.faces) {
        for (int& vi : f) {
            if (remap[size_t(vi)] < 0) {
                remap[size_t(vi)] = int(packed.mesh.vertices.size());
                packed.mesh.vertices.push_back(out.mesh.vertices[size_t(vi)]);
                packed.edges.push_back(out.edges[size_t(vi)]);
                packed.weights.push_back(out.weights[size_t(vi)]);
            }
            vi = remap[size_t(vi)];
        }
        packed.mesh.faces.push_back(f);
    }
    return packed;
}

SdfOptimReport optimize_sdf(TetScaffold& scaffold, const SceneState& scene,
                            const std::vector<Camera>& cams,
                            const std::vector<int>& timesteps,
                            const SdfOptimConfig& cfg) {
    if (cams.empty() || timesteps.empty())
        throw invalid_input_error("optimize_sdf: no views or timesteps");
    if (cfg.iters <= 0) throw invalid_input_error("optimize_sdf: iters must be > 0");
    if (scaffold.truncation <= 0.0)
        throw invalid_input_error("optimize_sdf: run tsdf_init first");

    const size_t np = scaffold.pivots.size();
    const double lr = cfg.lr * scaffold.truncation;
    std::vector<double> m1(np, 0.0), m2(np, 0.0), grad(np);
    std::int64_t step = 0;

    // Positions per timestep and render targets per (view, timestep) are
    // constant through the stage.
    std::unordered_map<int, std::vector<Vec3>> pos_at;
    for (int t : timesteps) pos_at.emplace(t, pivot_positions(scene, scaffold.pivots, t));
    RenderOptions opts;
    opts.foreground_only = true;
    opts.foreground_threshold = scaffold.threshold;
    std::unordered_map<std::int64_t, RenderBuffers> target;
    auto target_for = [&](int v, int t) -> const RenderBuffers& {
        const std::int64_t key = std::int64_t(v) * 100000 + t;
        auto it = target.find(key);
        if (it == target.end())
            it = target
                     .emplace(key, render(scene, cams[size_t(v)], t,
                                          AppearanceMode::kBodyFrameSH, opts))
                     .first;
        return it->second;
    };

    Rng rng(cfg.seed);
    SdfOptimReport report;
    report.losses.reserve(size_t(cfg.iters));
    bool warned = false;
    for (int it = 0; it < cfg.iters; ++it) {
        const int v = rng.uniform_int(int(cams.size()));
        const int t = timesteps[size_t(rng.uniform_int(int(timesteps.size())))];
        const std::vector<Vec3>& pos = pos_at.at(t);

        const ScaffoldMesh sm = marching_tets(scaffold, pos);
        if (sm.mesh.empty()) {
            ++report.skipped;
            if (!warned) {
                std::fprintf(stderr,
                             "optimize_sdf: empty mesh at iteration %d, skipping\n",
                             it);
                warned = true;
            }
            continue;
        }

        const Camera& cam = cams[size_t(v)];
        const MeshRaster raster = rasterize_mesh(sm.mesh, cam);
        const RenderBuffers& tgt = target_for(v, t);

        int n_valid = 0;
        for (int p = 0; p < raster.width * raster.height; ++p)
            if (raster.tri[size_t(p)] >= 0 && tgt.depth[size_t(p)] > 0.0) ++n_valid;
        if (n_valid == 0) {
            ++report.skipped;
            continue;
        }

        const double inv_n = 1.0 / n_valid;
        double loss = 0.0;
        std::vector<double> d_depth(raster.depth.size(), 0.0);
        std::vector<Vec3> d_normal(raster.normal.size(), Vec3::Zero());
        for (int p = 0; p < raster.width * raster.height; ++p) {
            if (raster.tri[size_t(p)] < 0 || tgt.depth[size_t(p)] <= 0.0) continue;
            const double dd = raster.depth[size_t(p)] - tgt.depth[size_t(p)];
            loss += std::abs(dd) * inv_n;
            d_depth[size_t(p)] =
                (dd > 0.0 ? 1.0 : (dd < 0.0 ? -1.0 : 0.0)) * inv_n;
            const Vec3& ng = tgt.normal[size_t(p)];
            loss += (1.0 - raster.normal[size_t(p)].dot(ng)) * inv_n;
            d_normal[size_t(p)] = -ng * inv_n;
        }
        if (!std::isfinite(loss))
            throw numerical_error("optimize_sdf: non-finite loss at iteration " +
                                  std::to_string(it));

        const std::vector<Vec3> vgrad =
            rasterize_mesh_backward(sm.mesh, cam, raster, d_depth, d_normal);

        std::fill(grad.begin(), grad.end(), 0.0);
        for (size_t k = 0; k < sm.mesh.vertices.size(); ++k) {
            const int a = sm.edges[k][0], b = sm.edges[k][1];
            const double sa = nudged(scaffold.pivots[size_t(a)].sdf);
            const double sb = nudged(scaffold.pivots[size_t(b)].sdf);
            const double inv_d2 = 1.0 / ((sb - sa) * (sb - sa));
            const Vec3 pab = pos[size_t(a)] - pos[size_t(b)];
            grad[size_t(a)] += vgrad[k].dot(sb * pab) * inv_d2;
            grad[size_t(b)] += vgrad[k].dot(-sa * pab) * inv_d2;
        }

        ++step;
        const double c1 = 1.0 - std::pow(cfg.beta1, double(step));
        const double c2 = 1.0 - std::pow(cfg.beta2, double(step));
        for (size_t i = 0; i < np; ++i) {
            m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * grad[i];
            m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            const double update =
                (m1[i] / c1) / (std::sqrt(m2[i] / c2) + cfg.eps);
            scaffold.pivots[i].sdf -= lr * update;
        }
        report.losses.push_back(loss);
    }

    if (report.skipped * 2 > cfg.iters)
        throw degenerate_error("optimize_sdf: " + std::to_string(report.skipped) +
                               " of " + std::to_string(cfg.iters) +
                               " iterations had no usable mesh");
    return report;
}

}  // namespace osp
