#pragma once

#include <vector>

#include "orbitsplat/common.hpp"
#include "orbitsplat/mesh.hpp"

namespace osp {

// Image metrics over the object region (mask >= 0.5), dynamic range 1.0.
// All throw undefined_metric_error when the mask selects no pixel.
double psnr(const std::vector<Vec3>& a, const std::vector<Vec3>& b,
            const std::vector<double>& mask);  // capped at 100 dB
double l1_error(const std::vector<Vec3>& a, const std::vector<Vec3>& b,
                const std::vector<double>& mask);
double masked_ssim(const std::vector<Vec3>& a, const std::vector<Vec3>& b, int width,
                   int height, const std::vector<double>& mask);

struct NormalErrorStats {
    double mean_deg = 0.0;
    double median_deg = 0.0;  // nearest-rank
    double p80_deg = 0.0;     // nearest-rank 80th percentile
};

NormalErrorStats normal_angular_error(const std::vector<Vec3>& pred,
                                      const std::vector<Vec3>& gt,
                                      const std::vector<double>& mask);

// Symmetric mean sample-to-nearest-surface distance with area-uniform samples
// per mesh and grid-accelerated nearest queries.
double chamfer(const TriMesh& a, const TriMesh& b, int samples = 100000,
               std::uint64_t seed = 1);

// Mean angle (degrees) between sample normals on `pred` and the face normal at
// the nearest point of `gt`.
double mesh_normal_error(const TriMesh& pred, const TriMesh& gt, int samples = 100000,
                         std::uint64_t seed = 1);

}  // namespace osp
