#include <fstream>

#include <json.hpp>

#include "orbitsplat/optimizer.hpp"
#include "orbitsplat/scene.hpp"

namespace osp {

using nlohmann::json;

namespace {

json hex_array(const double* v, int n) {
    json a = json::array();
    for (int i = 0; i < n; ++i) a.push_back(double_to_hex(v[i]));
    return a;
}

void read_hex(const json& a, double* v, int n, const char* what) {
    if (!a.is_array() || int(a.size()) != n)
        throw invalid_input_error(std::string("checkpoint: bad array for ") + what);
    for (int i = 0; i < n; ++i) v[i] = double_from_hex(a[i].get<std::string>());
}

json sh_to_json(const SHCoefficients& c) {
    std::vector<double> flat;
    flat.reserve(c.count() * 3);
    for (const auto& v : c.coeffs) {
        flat.push_back(v[0]);
        flat.push_back(v[1]);
        flat.push_back(v[2]);
    }
    json j;
    j["order"] = c.order;
    j["coeffs"] = hex_array(flat.data(), int(flat.size()));
    return j;
}

SHCoefficients sh_from_json(const json& j) {
    SHCoefficients c = SHCoefficients::zeros(j.at("order").get<int>());
    std::vector<double> flat(c.count() * 3);
    read_hex(j.at("coeffs"), flat.data(), int(flat.size()), "sh coeffs");
    for (int i = 0; i < c.count(); ++i)
        c.coeffs[i] = Vec3(flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]);
    return c;
}

template <typename V>
json vecs_to_json(const std::vector<V>& v) {
    constexpr int d = V::RowsAtCompileTime;
    std::vector<double> flat;
    flat.reserve(v.size() * d);
    for (const auto& e : v)
        for (int c = 0; c < d; ++c) flat.push_back(e[c]);
    return hex_array(flat.data(), int(flat.size()));
}

template <typename V>
std::vector<V> vecs_from_json(const json& a, const char* what) {
    constexpr int d = V::RowsAtCompileTime;
    if (!a.is_array() || a.size() % d != 0)
        throw invalid_input_error(std::string("checkpoint: bad array for ") + what);
    std::vector<double> flat(a.size());
    read_hex(a, flat.data(), int(flat.size()), what);
    std::vector<V> v(flat.size() / d);
    for (size_t i = 0; i < v.size(); ++i)
        for (int c = 0; c < d; ++c) v[i][c] = flat[i * d + c];
    return v;
}

json grads_to_json(const ParamGradients& g) {
    json j;
    j["mu"] = vecs_to_json(g.mu);
    j["q"] = vecs_to_json(g.q);
    j["scale"] = vecs_to_json(g.scale);
    j["sigma"] = hex_array(g.sigma.data(), int(g.sigma.size()));
    j["m"] = hex_array(g.m.data(), int(g.m.size()));
    j["sh"] = vecs_to_json(g.sh);
    j["k_d"] = vecs_to_json(g.k_d);
    j["q_obj"] = vecs_to_json(g.q_obj);
    j["t_obj"] = vecs_to_json(g.t_obj);
    j["theta_s"] = vecs_to_json(g.theta_s);
    j["theta_d"] = vecs_to_json(g.theta_d);
    return j;
}

ParamGradients grads_from_json(const json& j) {
    ParamGradients g;
    g.mu = vecs_from_json<Vec3>(j.at("mu"), "mu");
    g.q = vecs_from_json<Vec4>(j.at("q"), "q");
    g.scale = vecs_from_json<Vec2>(j.at("scale"), "scale");
    g.sigma.resize(j.at("sigma").size());
    read_hex(j.at("sigma"), g.sigma.data(), int(g.sigma.size()), "sigma");
    g.m.resize(j.at("m").size());
    read_hex(j.at("m"), g.m.data(), int(g.m.size()), "m");
    g.sh = vecs_from_json<Vec3>(j.at("sh"), "sh");
    g.k_d = vecs_from_json<Vec3>(j.at("k_d"), "k_d");
    g.q_obj = vecs_from_json<Vec4>(j.at("q_obj"), "q_obj");
    g.t_obj = vecs_from_json<Vec3>(j.at("t_obj"), "t_obj");
    g.theta_s = vecs_from_json<Vec3>(j.at("theta_s"), "theta_s");
    g.theta_d = vecs_from_json<Vec3>(j.at("theta_d"), "theta_d");
    return g;
}

}  // namespace

std::string scene_to_json_string(const SceneState& scene) {
    json j;
    j["format"] = "orbitsplat-scene";
    j["version"] = 1;
    j["centroid"] = hex_array(scene.centroid.data(), 3);
    json gs = json::array();
    for (const auto& g : scene.gaussians) {
        json e;
        e["mu"] = hex_array(g.mu.data(), 3);
        const Vec4 q = g.q.vec();
        e["q"] = hex_array(q.data(), 4);
        e["scale"] = hex_array(g.scale.data(), 2);
        e["sigma"] = double_to_hex(g.sigma);
        e["m"] = double_to_hex(g.m);
        e["sh"] = sh_to_json(g.sh);
        e["k_d"] = hex_array(g.k_d.data(), 3);
        gs.push_back(std::move(e));
    }
    j["gaussians"] = std::move(gs);
    json traj = json::array();
    for (const auto& p : scene.trajectory) {
        json e;
        const Vec4 q = p.q_obj.vec();
        e["q_obj"] = hex_array(q.data(), 4);
        e["t_obj"] = hex_array(p.t_obj.data(), 3);
        traj.push_back(std::move(e));
    }
    j["trajectory"] = std::move(traj);
    j["appearance"]["theta_s"] = sh_to_json(scene.shared.theta_s);
    j["appearance"]["theta_d"] = sh_to_json(scene.shared.theta_d);
    return j.dump(1);
}

SceneState scene_from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw io_error(std::string("checkpoint: JSON parse failed: ") + e.what());
    }
    try {
        if (j.at("format").get<std::string>() != "orbitsplat-scene")
            throw invalid_input_error("checkpoint: wrong format tag");
        SceneState scene;
        read_hex(j.at("centroid"), scene.centroid.data(), 3, "centroid");
        for (const auto& e : j.at("gaussians")) {
            GaussianPrimitive g;
            read_hex(e.at("mu"), g.mu.data(), 3, "mu");
            Vec4 q;
            read_hex(e.at("q"), q.data(), 4, "q");
            g.q = Quat(q);
            read_hex(e.at("scale"), g.scale.data(), 2, "scale");
            g.sigma = double_from_hex(e.at("sigma").get<std::string>());
            g.m = double_from_hex(e.at("m").get<std::string>());
            g.sh = sh_from_json(e.at("sh"));
            read_hex(e.at("k_d"), g.k_d.data(), 3, "k_d");
            scene.gaussians.push_back(std::move(g));
        }
        for (const auto& e : j.at("trajectory")) {
            ObjectPose p;
            Vec4 q;
            read_hex(e.at("q_obj"), q.data(), 4, "q_obj");
            p.q_obj = Quat(q);
            read_hex(e.at("t_obj"), p.t_obj.data(), 3, "t_obj");
            scene.trajectory.push_back(p);
        }
        scene.shared.theta_s = sh_from_json(j.at("appearance").at("theta_s"));
        scene.shared.theta_d = sh_from_json(j.at("appearance").at("theta_d"));
        return scene;
    } catch (const json::exception& e) {
        throw invalid_input_error(std::string("checkpoint: missing field: ") + e.what());
    }
}

void save_scene(const std::string& path, const SceneState& scene) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open for write: " + path);
    f << scene_to_json_string(scene);
    if (!f) throw io_error("write failed: " + path);
}

SceneState load_scene(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open: " + path);
    std::string text((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
    return scene_from_json_string(text);
}

std::string adam_state_to_json_string(const AdamState& state) {
    json j;
    j["format"] = "orbitsplat-adam";
    j["version"] = 1;
    j["beta1"] = double_to_hex(state.beta1);
    j["beta2"] = double_to_hex(state.beta2);
    j["eps"] = double_to_hex(state.eps);
    j["step"] = state.step;
    j["pose_step"] = state.pose_step;
    j["m1"] = grads_to_json(state.m1);
    j["m2"] = grads_to_json(state.m2);
    return j.dump(1);
}

AdamState adam_state_from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw io_error(std::string("adam state: JSON parse failed: ") + e.what());
    }
    try {
        if (j.at("format").get<std::string>() != "orbitsplat-adam")
            throw invalid_input_error("adam state: wrong format tag");
        AdamState s;
        s.beta1 = double_from_hex(j.at("beta1").get<std::string>());
        s.beta2 = double_from_hex(j.at("beta2").get<std::string>());
        s.eps = double_from_hex(j.at("eps").get<std::string>());
        s.step = j.at("step").get<std::int64_t>();
        s.pose_step = j.at("pose_step").get<std::vector<std::int64_t>>();
        s.m1 = grads_from_json(j.at("m1"));
        s.m2 = grads_from_json(j.at("m2"));
        return s;
    } catch (const json::exception& e) {
        throw invalid_input_error(std::string("adam state: missing field: ") + e.what());
    }
}

void save_adam_state(const std::string& path, const AdamState& state) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open for write: " + path);
    f << adam_state_to_json_string(state);
    if (!f) throw io_error("write failed: " + path);
}

AdamState load_adam_state(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open: " + path);
    std::string text((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
    return adam_state_from_json_string(text);
}

std::string camera_to_json_string(const Camera& cam) {
    json j;
    j["width"] = cam.width;
    j["height"] = cam.height;
    j["K"] = hex_array(cam.K.data(), 9);  // column-major
    j["R"] = hex_array(cam.R.data(), 9);
    j["t"] = hex_array(cam.t.data(), 3);
    return j.dump(1);
}

Camera camera_from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw io_error(std::string("camera: JSON parse failed: ") + e.what());
    }
    try {
        Camera cam;
        cam.width = j.at("width").get<int>();
        cam.height = j.at("height").get<int>();
        read_hex(j.at("K"), cam.K.data(), 9, "K");
        read_hex(j.at("R"), cam.R.data(), 9, "R");
        read_hex(j.at("t"), cam.t.data(), 3, "t");
        validate_camera(cam);
        return cam;
    } catch (const json::exception& e) {
        throw invalid_input_error(std::string("camera: missing field: ") + e.what());
    }
}

}  // namespace osp
