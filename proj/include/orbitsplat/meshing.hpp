#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "orbitsplat/mesh.hpp"
#include "orbitsplat/render.hpp"
#include "orbitsplat/scene.hpp"

namespace osp {

// Pivot anchored to a parent splat. `local` is constant in the parent's frame,
// so pivot pairs of one parent keep their exact distances under any pose.
struct Pivot {
    int parent = 0;
    Vec3 local = Vec3::Zero();
    double sdf = 0.0;  // world units, negative inside the object
};

struct TetScaffold {
    std::vector<int> foreground;           // gaussian ids kept for meshing
    std::vector<Pivot> pivots;
    std::vector<std::array<int, 4>> tets;  // positively oriented
    double threshold = 0.5;                // mask cut that chose the foreground
    double truncation = 0.0;               // TSDF clamp band, set by tsdf_init
};

// Ids of splats with mask >= threshold. Throws degenerate_error when empty.
std::vector<int> extract_foreground(const SceneState& scene, double threshold = 0.5);

// Nine pivots per splat: the center plus the corners of the oriented cuboid
// spanning 1.5x the in-plane scales and 2e-4 along the normal.
std::vector<Pivot> place_pivots(const SceneState& scene,
                                const std::vector<int>& foreground);

// World positions under the soft-masked pose of trajectory[t].
std::vector<Vec3> pivot_positions(const SceneState& scene,
                                  const std::vector<Pivot>& pivots, int t);

// 3D Delaunay tetrahedralization (incremental Bowyer-Watson with exact-sign
// predicate fallback). Tets come out positively oriented. Degenerate inputs
// are retried once with uniform jitter of 1e-9 * extent before failing.
std::vector<std::array<int, 4>> delaunay_tets(const std::vector<Vec3>& points,
                                              double extent);

// extract_foreground + place_pivots + delaunay over first-frame positions.
TetScaffold build_scaffold(const SceneState& scene, double threshold = 0.5);

// TSDF initialization: per pivot, the average over all (view, timestep)
// foreground renders of the clamped signed distance (rendered depth minus the
// pivot's camera depth). Truncation = 5x the median in-plane scale of the
// foreground splats; pivots observed by no render get +truncation.
void tsdf_init(TetScaffold& scaffold, const SceneState& scene,
               const std::vector<Camera>& cams, const std::vector<int>& timesteps);

// Isosurface with provenance: vertex i lies on the pivot pair edges[i] at
// parameter weights[i], i.e. v = lerp(p_a, p_b, weights[i]).
struct ScaffoldMesh {
    TriMesh mesh;
    std::vector<std::array<int, 2>> edges;
    std::vector<double> weights;
};

ScaffoldMesh marching_tets(const TetScaffold& scaffold,
                           const std::vector<Vec3>& positions);

struct MeshRaster {
    int width = 0, height = 0;
    std::vector<double> depth;  // camera z; 0 where no triangle
    std::vector<Vec3> normal;   // world-frame face normal, flipped toward camera
    std::vector<int> tri;       // triangle id per pixel, -1 where empty
    std::vector<Vec3> bary;     // screen-space barycentric weights at the center
};

// Nearest-triangle z-buffer with screen-space barycentric depth interpolation.
MeshRaster rasterize_mesh(const TriMesh& mesh, const Camera& cam);

// dL/d(vertex position) for upstream depth/normal gradients, holding the
// pixel-triangle assignment of `raster` fixed. Empty grad vectors mean zero.
std::vector<Vec3> rasterize_mesh_backward(const TriMesh& mesh, const Camera& cam,
                                          const MeshRaster& raster,
                                          const std::vector<double>& d_depth,
                                          const std::vector<Vec3>& d_normal);

struct SdfOptimConfig {
    int iters = 1000;
    double lr = 0.02;  // in units of the truncation band
    std::uint64_t seed = 1;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-15;
};

struct SdfOptimReport {
    std::vector<double> losses;  // one entry per non-skipped iteration
    int skipped = 0;
};

// Adam refinement of the pivot SDF values. Every iteration samples one
// (view, timestep), extracts the mesh at that timestep's pose and penalizes
// L1 depth plus (1 - n.n) against a foreground splat render. Iterations with
// an empty mesh or no pixel overlap are skipped; more than 50% skipped is a
// degenerate_error. Pivot positions never change.
SdfOptimReport optimize_sdf(TetScaffold& scaffold, const SceneState& scene,
                            const std::vector<Camera>& cams,
                            const std::vector<int>& timesteps,
                            const SdfOptimConfig& cfg);

// Reads the binary PLY dialect written by export_ply.
TriMesh load_ply(const std::string& path);

}  // namespace osp
