#include "orbitsplat/image_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace osp {

double linear_to_srgb(double x) {
    x = std::clamp(x, 0.0, 1.0);
    return x <= 0.0031308 ? 12.92 * x : 1.055 * std::pow(x, 1.0 / 2.4) - 0.055;
}

double srgb_to_linear(double x) {
    x = std::clamp(x, 0.0, 1.0);
    return x <= 0.04045 ? x / 12.92 : std::pow((x + 0.055) / 1.055, 2.4);
}

void save_ppm(const std::string& path, const std::vector<Vec3>& rgb, int width,
              int height, bool linear_input) {
    if (int(rgb.size()) != width * height)
        throw invalid_input_error("save_ppm: size mismatch");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open for write: " + path);
    f << "P6\n" << width << " " << height << "\n255\n";
    std::vector<unsigned char> row(size_t(width) * 3);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const Vec3& c = rgb[size_t(y) * width + x];
            for (int k = 0; k < 3; ++k) {
                const double v = linear_input ? linear_to_srgb(c[k])
                                              : std::clamp(c[k], 0.0, 1.0);
                row[size_t(x) * 3 + k] =
                    (unsigned char)(std::lround(v * 255.0));
            }
        }
        f.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
    }
    if (!f) throw io_error("write failed: " + path);
}

PpmImage load_ppm(const std::string& path, bool to_linear) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open: " + path);
    std::string magic;
    f >> magic;
    if (magic != "P6") throw io_error("not a P6 PPM: " + path);
    int w = 0, h = 0, maxv = 0;
    // Header tokens may be separated by whitespace or comment lines.
    auto next_int = [&]() {
        for (;;) {
            int c = f.peek();
            if (c == '#') {
                std::string line;
                std::getline(f, line);
            } else if (std::isspace(c)) {
                f.get();
            } else {
                break;
            }
        }
        int v;
        f >> v;
        return v;
    };
    w = next_int();
    h = next_int();
    maxv = next_int();
    if (maxv != 255) throw io_error("unsupported maxval in PPM: " + path);
    f.get();  // single whitespace after header
    PpmImage img;
    img.width = w;
    img.height = h;
    img.rgb.resize(size_t(w) * h);
    std::vector<unsigned char> raw(size_t(w) * h * 3);
    f.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
    if (f.gcount() != std::streamsize(raw.size()))
        throw io_error("truncated PPM: " + path);
    for (size_t i = 0; i < img.rgb.size(); ++i)
        for (int k = 0; k < 3; ++k) {
            const double v = raw[i * 3 + k] / 255.0;
            img.rgb[i][k] = to_linear ? srgb_to_linear(v) : v;
        }
    return img;
}

void save_f32(const std::string& path, const double* data, size_t count) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open for write: " + path);
    std::vector<float> buf(count);
    for (size_t i = 0; i < count; ++i) buf[i] = float(data[i]);
    f.write(reinterpret_cast<const char*>(buf.data()),
            std::streamsize(count * sizeof(float)));
    if (!f) throw io_error("write failed: " + path);
}

std::vector<double> load_f32(const std::string& path, size_t expected_count) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open: " + path);
    std::vector<float> buf(expected_count);
    f.read(reinterpret_cast<char*>(buf.data()),
           std::streamsize(expected_count * sizeof(float)));
    if (f.gcount() != std::streamsize(expected_count * sizeof(float)))
        throw io_error("truncated f32 file: " + path);
    std::vector<double> out(expected_count);
    for (size_t i = 0; i < expected_count; ++i) out[i] = buf[i];
    return out;
}

void save_f32_vec3(const std::string& path, const std::vector<Vec3>& data) {
    std::vector<double> flat;
    flat.reserve(data.size() * 3);
    for (const auto& v : data) {
        flat.push_back(v[0]);
        flat.push_back(v[1]);
        flat.push_back(v[2]);
    }
    save_f32(path, flat.data(), flat.size());
}

std::vector<Vec3> load_f32_vec3(const std::string& path, size_t expected_count) {
    const std::vector<double> flat = load_f32(path, expected_count * 3);
    std::vector<Vec3> out(expected_count);
    for (size_t i = 0; i < expected_count; ++i)
        out[i] = Vec3(flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]);
    return out;
}

}  // namespace osp
