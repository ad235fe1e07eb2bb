#include "orbitsplat/appearance.hpp"

#include <fstream>

#include <Eigen/Dense>
#include <json.hpp>

namespace osp {

Vec3 shade_factorized(const Vec3& k_d, const Vec3& normal, const Vec3& view,
                      const SharedAppearance& app) {
    const Vec3 wr = reflect_about(view, normal);
    const Vec3 spec = sh_eval(wr, app.theta_s);
    const Vec3 diff = sh_eval(normal, app.theta_d);
    return spec + k_d.cwiseProduct(diff);
}

FactorizedGrads shade_factorized_backward(const Vec3& k_d, const Vec3& normal,
                                          const Vec3& view, const SharedAppearance& app,
                                          const Vec3& dL_dc, Vec3* grad_theta_s,
                                          Vec3* grad_theta_d) {
    FactorizedGrads out;
    const Vec3 wr = reflect_about(view, normal);

    const int ns = app.theta_s.count();
    static thread_local std::vector<double> bs;
    static thread_local std::vector<Vec3> gs;
    bs.resize(ns);
    gs.resize(ns);
    sh_basis_grad(wr, app.theta_s.order, bs.data(), gs.data());

    const int nd = app.theta_d.count();
    static thread_local std::vector<double> bd;
    static thread_local std::vector<Vec3> gd;
    bd.resize(nd);
    gd.resize(nd);
    sh_basis_grad(normal, app.theta_d.order, bd.data(), gd.data());

    Vec3 diff = Vec3::Zero();
    Vec3 d_wr = Vec3::Zero();
    for (int i = 0; i < ns; ++i) {
        if (grad_theta_s) grad_theta_s[i] += bs[i] * dL_dc;
        d_wr += gs[i] * dL_dc.dot(app.theta_s.coeffs[i]);
    }
    const Vec3 dl_kd = dL_dc.cwiseProduct(k_d);
    Vec3 d_n_diffuse = Vec3::Zero();
    for (int i = 0; i < nd; ++i) {
        diff += bd[i] * app.theta_d.coeffs[i];
        if (grad_theta_d) grad_theta_d[i] += bd[i] * dl_kd;
        d_n_diffuse += gd[i] * dl_kd.dot(app.theta_d.coeffs[i]);
    }

    out.d_kd = dL_dc.cwiseProduct(diff);
    out.d_view = reflect_jacobian_v(normal).transpose() * d_wr;
    out.d_normal = reflect_jacobian_n(view, normal).transpose() * d_wr + d_n_diffuse;
    return out;
}

Vec3 shade_bodyframe(const SHCoefficients& sh, const Vec3& view_obj) {
    return sh_eval(view_obj, sh);
}

BodyframeGrads shade_bodyframe_backward(const SHCoefficients& sh, const Vec3& view_obj,
                                        const Vec3& dL_dc, Vec3* grad_sh) {
    BodyframeGrads out;
    const int n = sh.count();
    static thread_local std::vector<double> b;
    static thread_local std::vector<Vec3> g;
    b.resize(n);
    g.resize(n);
    sh_basis_grad(view_obj, sh.order, b.data(), g.data());
    for (int i = 0; i < n; ++i) {
        if (grad_sh) grad_sh[i] += b[i] * dL_dc;
        out.d_view += g[i] * dL_dc.dot(sh.coeffs[i]);
    }
    return out;
}

namespace {

Vec3 fibonacci_dir(int k, int n) {
    const double golden = kPi * (3.0 - std::sqrt(5.0));
    const double z = 1.0 - 2.0 * (k + 0.5) / n;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * k;
    return {r * std::cos(phi), r * std::sin(phi), z};
}

Vec3 irradiance_quadrature(const std::function<Vec3(const Vec3&)>& env, const Vec3& n,
                           const std::vector<double>& zn, const std::vector<double>& zw,
                           int n_phi) {
    Vec3 acc = Vec3::Zero();
    for (size_t i = 0; i < zn.size(); ++i) {
        const double z = zn[i];
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        for (int j = 0; j < n_phi; ++j) {
            const double phi = 2.0 * kPi * (j + 0.5) / n_phi;
            const Vec3 w(r * std::cos(phi), r * std::sin(phi), z);
            const double cosine = w.dot(n);
            if (cosine <= 0.0) continue;
            acc += (zw[i] * 2.0 * kPi / n_phi * cosine) * env(w);
        }
    }
    return acc;
}

}  // namespace

SHCoefficients fit_diffuse_irradiance(const std::function<Vec3(const Vec3&)>& env,
                                      int order, int n_normals,
                                      bool* refinement_warning) {
    const int basis_n = sh_count(order);
    if (n_normals <= 0) n_normals = std::max(2 * basis_n, 64);
    if (n_normals < 2 * basis_n)
        throw invalid_input_error("fit_diffuse_irradiance: too few sample normals");

    std::vector<double> zn, zw;
    gauss_legendre(64, &zn, &zw);
    const int n_phi = 128;

    Eigen::MatrixXd a(n_normals, basis_n);
    Eigen::MatrixXd b(n_normals, 3);
    std::vector<double> row(basis_n);
    std::vector<Vec3> normals(n_normals);
    for (int k = 0; k < n_normals; ++k) {
        normals[k] = fibonacci_dir(k, n_normals);
        sh_basis(normals[k], order, row.data());
        for (int c = 0; c < basis_n; ++c) a(k, c) = row[c];
        b.row(k) = irradiance_quadrature(env, normals[k], zn, zw, n_phi).transpose();
    }

    if (refinement_warning) {
        *refinement_warning = false;
        std::vector<double> zn2, zw2;
        gauss_legendre(128, &zn2, &zw2);
        for (int k = 0; k < std::min(8, n_normals); ++k) {
            const Vec3 fine = irradiance_quadrature(env, normals[k], zn2, zw2, 256);
            const double ref = std::max(1e-12, fine.norm());
            if ((fine - Vec3(b.row(k).transpose())).norm() / ref > 1e-3) {
                *refinement_warning = true;
                break;
            }
        }
    }

    const Eigen::MatrixXd sol = a.colPivHouseholderQr().solve(b);
    SHCoefficients out = SHCoefficients::zeros(order);
    for (int i = 0; i < basis_n; ++i) out.coeffs[i] = sol.row(i).transpose();
    return out;
}

Vec3 EnvMap::sample(const Vec3& dir) const {
    const Vec3 d = dir.normalized();
    const double theta = std::acos(std::clamp(d.z(), -1.0, 1.0));
    double phi = std::atan2(d.y(), d.x());
    if (phi < 0.0) phi += 2.0 * kPi;
    int r = int(theta / kPi * height);
    int c = int(phi / (2.0 * kPi) * width);
    r = std::clamp(r, 0, height - 1);
    c = std::clamp(c, 0, width - 1);
    const int idx = (r * width + c) * 3;
    return {rgb[idx], rgb[idx + 1], rgb[idx + 2]};
}

EnvMap load_envmap(const std::string& raw_path, const std::string& meta_path) {
    std::ifstream meta(meta_path);
    if (!meta) throw io_error("cannot open: " + meta_path);
    nlohmann::json j;
    try {
        meta >> j;
    } catch (const nlohmann::json::exception& e) {
        throw io_error(std::string("envmap meta parse failed: ") + e.what());
    }
    EnvMap env;
    env.width = j.at("width").get<int>();
    env.height = j.at("height").get<int>();
    if (env.width <= 0 || env.height <= 0)
        throw invalid_input_error("envmap: bad dimensions");
    std::ifstream raw(raw_path, std::ios::binary);
    if (!raw) throw io_error("cannot open: " + raw_path);
    env.rgb.resize(size_t(env.width) * env.height * 3);
    raw.read(reinterpret_cast<char*>(env.rgb.data()),
             std::streamsize(env.rgb.size() * sizeof(float)));
    if (raw.gcount() != std::streamsize(env.rgb.size() * sizeof(float)))
        throw io_error("envmap raw file truncated: " + raw_path);
    return env;
}

void save_envmap(const EnvMap& env, const std::string& raw_path,
                 const std::string& meta_path) {
    {
        std::ofstream raw(raw_path, std::ios::binary);
        if (!raw) throw io_error("cannot open for write: " + raw_path);
        raw.write(reinterpret_cast<const char*>(env.rgb.data()),
                  std::streamsize(env.rgb.size() * sizeof(float)));
        if (!raw) throw io_error("write failed: " + raw_path);
    }
    nlohmann::json j;
    j["format"] = "equirect-rgb-f32";
    j["width"] = env.width;
    j["height"] = env.height;
    j["channels"] = 3;
    std::ofstream meta(meta_path);
    if (!meta) throw io_error("cannot open for write: " + meta_path);
    meta << j.dump(1);
}

}  // namespace osp
