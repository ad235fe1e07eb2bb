#pragma once

#include <cstdint>
#include <vector>

#include "orbitsplat/scene.hpp"

namespace osp {

enum class AppearanceMode {
    kBodyFrameSH,  // per-splat SH probed at the object-frame view direction
    kFactorized,   // shared specular environment + albedo-scaled shared irradiance
};

struct RenderOptions {
    bool foreground_only = false;  // drop splats with m below the threshold
    double foreground_threshold = 0.5;
};

struct BlendRecord {
    int32_t id;    // gaussian index
    double alpha;  // per-splat alpha after clamping
    double trans;  // transmittance in front of this splat
};

struct RenderBuffers {
    int width = 0, height = 0;
    std::vector<Vec3> rgb;       // linear radiance, background black
    std::vector<double> depth;   // alpha-normalized camera-z; 0 where alpha == 0
    std::vector<Vec3> normal;    // renormalized alpha-weighted world normals
    std::vector<double> alpha;
    std::vector<double> mask;
    std::vector<int> rec_offset;       // size width*height+1
    std::vector<BlendRecord> records;  // front-to-back per pixel
    std::uint64_t fingerprint = 0;

    int pixels() const { return width * height; }
};

// Gradient slots for every differentiable scalar of a SceneState. Pose slots
// are per-timestep; a render backward pass fills only the rendered timestep.
struct ParamGradients {
    std::vector<Vec3> mu;
    std::vector<Vec4> q;
    std::vector<Vec2> scale;
    std::vector<double> sigma;
    std::vector<double> m;
    std::vector<Vec3> sh;  // per gaussian: sh_count(kGaussianShOrder) entries
    std::vector<Vec3> k_d;
    std::vector<Vec4> q_obj;
    std::vector<Vec3> t_obj;
    std::vector<Vec3> theta_s;
    std::vector<Vec3> theta_d;

    static ParamGradients zeros(const SceneState& scene);
    void accumulate(const ParamGradients& other);
    // Name of the first non-finite slot, or empty when all values are finite.
    std::string first_non_finite() const;
};

// Upstream loss gradients with respect to the output buffers. Empty vectors
// mean zero gradient for that buffer.
struct BufferGrads {
    std::vector<Vec3> rgb;
    std::vector<double> depth;   // with respect to the normalized depth
    std::vector<Vec3> normal;    // with respect to the renormalized normal
    std::vector<double> alpha;
    std::vector<double> mask;
};

RenderBuffers render(const SceneState& scene, const Camera& cam, int t,
                     AppearanceMode mode, const RenderOptions& opts = {});

ParamGradients render_backward(const SceneState& scene, const Camera& cam, int t,
                               AppearanceMode mode, const RenderBuffers& buffers,
                               const BufferGrads& upstream,
                               const RenderOptions& opts = {});

}  // namespace osp
