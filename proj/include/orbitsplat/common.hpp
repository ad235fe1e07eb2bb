#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace osp {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;

// Validation failures on caller-supplied data (bad arguments, malformed files,
// mismatched buffers). CLI maps these to exit code 2.
struct invalid_input_error : std::runtime_error {
    explicit invalid_input_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Geometrically degenerate input (all-zero masks, coplanar point sets,
// near-cancelling quaternion blends).
struct degenerate_error : invalid_input_error {
    explicit degenerate_error(const std::string& msg) : invalid_input_error(msg) {}
};

// Metric requested on an empty domain (empty mask, empty mesh).
struct undefined_metric_error : invalid_input_error {
    explicit undefined_metric_error(const std::string& msg) : invalid_input_error(msg) {}
};

// Non-finite values mid-optimization. Carries stage/parameter provenance in the
// message. CLI maps these to exit code 3.
struct numerical_error : std::runtime_error {
    explicit numerical_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct io_error : std::runtime_error {
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

inline constexpr double kPi = 3.14159265358979323846;

// Mask values live in [kMaskEps, 1 - kMaskEps] so the entropy term stays finite.
inline constexpr double kMaskEps = 1e-7;

// Per-splat alpha clamp; keeps transmittance positive and log-gradients bounded.
inline constexpr double kAlphaMax = 0.999;

// Contributions below 1/255 are culled during blending.
inline constexpr double kAlphaCull = 1.0 / 255.0;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

// Exact double <-> string round trip for checkpoints ("%a" hex-float form).
std::string double_to_hex(double v);
double double_from_hex(const std::string& s);

}  // namespace osp
