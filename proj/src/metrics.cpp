#include "orbitsplat/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "orbitsplat/losses.hpp"
#include "orbitsplat/parallel.hpp"

namespace osp {

namespace {

void check_sizes(const std::vector<Vec3>& a, const std::vector<Vec3>& b,
                 const std::vector<double>& mask) {
    if (a.size() != b.size() || a.size() != mask.size())
        throw invalid_input_error("image metric: size mismatch");
}

size_t masked_count(const std::vector<double>& mask) {
    size_t n = 0;
    for (double m : mask)
        if (m >= 0.5) ++n;
    if (n == 0) throw undefined_metric_error("image metric: empty mask");
    return n;
}

}  // namespace

double psnr(const std::vector<Vec3>& a, const std::vector<Vec3>& b,
            const std::vector<double>& mask) {
    check_sizes(a, b, mask);
    const size_t n = masked_count(mask);
    double se = 0.0;
    for (size_t p = 0; p < a.size(); ++p)
        if (mask[p] >= 0.5) se += (a[p] - b[p]).squaredNorm();
    const double mse = se / (3.0 * n);
    if (mse <= 0.0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

double l1_error(const std::vector<Vec3>& a, const std::vector<Vec3>& b,
                const std::vector<double>& mask) {
    check_sizes(a, b, mask);
    const size_t n = masked_count(mask);
    double acc = 0.0;
    for (size_t p = 0; p < a.size(); ++p)
        if (mask[p] >= 0.5) acc += (a[p] - b[p]).cwiseAbs().sum();
    return acc / (3.0 * n);
}

double masked_ssim(const std::vector<Vec3>& a, const std::vector<Vec3>& b, int width,
                   int height, const std::vector<double>& mask) {
    check_sizes(a, b, mask);
    const size_t n = masked_count(mask);
    const std::vector<double> map = ssim_map(a, b, width, height);
    double acc = 0.0;
    for (size_t p = 0; p < map.size(); ++p)
        if (mask[p] >= 0.5) acc += map[p];
    return acc / double(n);
}

NormalErrorStats normal_angular_error(const std::vector<Vec3>& pred,
                                      const std::vector<Vec3>& gt,
                                      const std::vector<double>& mask) {
    if (pred.size() != gt.size() || pred.size() != mask.size())
        throw invalid_input_error("normal_angular_error: size mismatch");
    std::vector<double> errs;
    for (size_t p = 0; p < pred.size(); ++p) {
        if (mask[p] < 0.5) continue;
        const double d = std::clamp(pred[p].dot(gt[p]), -1.0, 1.0);
        errs.push_back(rad2deg(std::acos(d)));
    }
    if (errs.empty()) throw undefined_metric_error("normal_angular_error: empty mask");

    NormalErrorStats stats;
    for (double e : errs) stats.mean_deg += e;
    stats.mean_deg /= double(errs.size());
    std::sort(errs.begin(), errs.end());
    const auto rank = [&](double q) {
        const size_t r = size_t(std::ceil(q * double(errs.size())));
        return errs[std::min(errs.size() - 1, std::max<size_t>(r, 1) - 1)];
    };
    stats.median_deg = rank(0.5);
    stats.p80_deg = rank(0.8);
    return stats;
}

namespace {

// Mean over area-uniform samples of fn(sample, nearest-on-target), reduced in
// fixed shard order for thread-count independence.
template <typename Fn>
double sampled_mesh_mean(const TriMesh& src, const MeshDistanceQuery& target, int samples,
                         Rng& rng, const Fn& fn) {
    const std::vector<SurfaceSample> pts = sample_surface(src, samples, rng);
    const int n_shards = fixed_shard_count(int(pts.size()));
    std::vector<double> partial(n_shards, 0.0);
    parallel_shards(int(pts.size()), [&](int shard, int begin, int end) {
        double acc = 0.0;
        for (int i = begin; i < end; ++i) acc += fn(pts[i], target.nearest(pts[i].p));
        partial[shard] = acc;
    });
    double total = 0.0;
    for (double v : partial) total += v;
    return total / double(pts.size());
}

}  // namespace

double chamfer(const TriMesh& a, const TriMesh& b, int samples, std::uint64_t seed) {
    if (a.empty() || b.empty()) throw undefined_metric_error("chamfer: empty mesh");
    const MeshDistanceQuery qa(a), qb(b);
    Rng ra(Rng::derive(seed, 1)), rb(Rng::derive(seed, 2));
    const auto dist = [](const SurfaceSample&, const MeshDistanceQuery::Result& r) {
        return r.dist;
    };
    const double ab = sampled_mesh_mean(a, qb, samples, ra, dist);
    const double ba = sampled_mesh_mean(b, qa, samples, rb, dist);
    return 0.5 * (ab + ba);
}

double mesh_normal_error(const TriMesh& pred, const TriMesh& gt, int samples,
                         std::uint64_t seed) {
    if (pred.empty() || gt.empty())
        throw undefined_metric_error("mesh_normal_error: empty mesh");
    const MeshDistanceQuery q(gt);
    Rng rng(Rng::derive(seed, 3));
    return sampled_mesh_mean(
        pred, q, samples, rng,
        [&](const SurfaceSample& s, const MeshDistanceQuery::Result& r) {
            const double d = std::clamp(s.n.dot(gt.face_normal(r.face)), -1.0, 1.0);
            return rad2deg(std::acos(d));
        });
}

}  // namespace osp
