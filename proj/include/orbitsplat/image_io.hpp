#pragma once

#include <string>
#include <vector>

#include "orbitsplat/common.hpp"

namespace osp {

// Linear <-> sRGB transfer (D65, IEC 61966-2-1).
double linear_to_srgb(double x);
double srgb_to_linear(double x);

// Binary PPM (P6, 8-bit). `linear_input` applies the sRGB transfer on save and
// inverts it on load; pass false for data that is stored linearly (masks).
void save_ppm(const std::string& path, const std::vector<Vec3>& rgb, int width,
              int height, bool linear_input = true);
struct PpmImage {
    int width = 0, height = 0;
    std::vector<Vec3> rgb;
};
PpmImage load_ppm(const std::string& path, bool to_linear = true);

// Raw little-endian float32 flat files for depth / normal / linear images.
void save_f32(const std::string& path, const double* data, size_t count);
std::vector<double> load_f32(const std::string& path, size_t expected_count);

void save_f32_vec3(const std::string& path, const std::vector<Vec3>& data);
std::vector<Vec3> load_f32_vec3(const std::string& path, size_t expected_count);

}  // namespace osp
