#include "orbitsplat/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>

namespace osp {

Vec3 TriMesh::face_normal(int f) const {
    const auto& t = faces[f];
    const Vec3 n =
        (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]);
    const double len = n.norm();
    return len > 1e-300 ? Vec3(n / len) : Vec3::Zero();
}

double TriMesh::face_area(int f) const {
    const auto& t = faces[f];
    return 0.5 *
           (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]).norm();
}

double TriMesh::area() const {
    double a = 0.0;
    for (int f = 0; f < int(faces.size()); ++f) a += face_area(f);
    return a;
}

namespace {

// Flip any face whose normal points toward `center`; valid for star-shaped
// meshes, which covers every primitive generated here.
void orient_outward(TriMesh& m, const Vec3& center) {
    for (auto& f : m.faces) {
        const Vec3 c = (m.vertices[f[0]] + m.vertices[f[1]] + m.vertices[f[2]]) / 3.0;
        const Vec3 n = (m.vertices[f[1]] - m.vertices[f[0]])
                           .cross(m.vertices[f[2]] - m.vertices[f[0]]);
        if (n.dot(c - center) < 0.0) std::swap(f[1], f[2]);
    }
}

}  // namespace

TriMesh icosahedron(double radius, const Vec3& center) {
    const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
    TriMesh m;
    const double verts[12][3] = {{-1, phi, 0}, {1, phi, 0},   {-1, -phi, 0}, {1, -phi, 0},
                                 {0, -1, phi}, {0, 1, phi},   {0, -1, -phi}, {0, 1, -phi},
                                 {phi, 0, -1}, {phi, 0, 1},   {-phi, 0, -1}, {-phi, 0, 1}};
    for (const auto& v : verts)
        m.vertices.push_back(center + radius * Vec3(v[0], v[1], v[2]).normalized());
    const int faces[20][3] = {{0, 11, 5},  {0, 5, 1},   {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                              {1, 5, 9},   {5, 11, 4},  {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                              {3, 9, 4},   {3, 4, 2},   {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                              {4, 9, 5},   {2, 4, 11},  {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
    for (const auto& f : faces) m.faces.push_back({f[0], f[1], f[2]});
    orient_outward(m, center);
    return m;
}

TriMesh icosphere(double radius, int subdivisions, const Vec3& center) {
    TriMesh m = icosahedron(1.0, Vec3::Zero());
    for (int s = 0; s < subdivisions; ++s) {
        std::map<std::pair<int, int>, int> midpoint;
        auto mid = [&](int a, int b) {
            const auto key = std::minmax(a, b);
            auto it = midpoint.find(key);
            if (it != midpoint.end()) return it->second;
            const int idx = int(m.vertices.size());
            m.vertices.push_back(((m.vertices[a] + m.vertices[b]) / 2.0).normalized());
            midpoint.emplace(key, idx);
            return idx;
        };
        std::vector<std::array<int, 3>> next;
        next.reserve(m.faces.size() * 4);
        for (const auto& f : m.faces) {
            const int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
            next.push_back({f[0], ab, ca});
            next.push_back({f[1], bc, ab});
            next.push_back({f[2], ca, bc});
            next.push_back({ab, bc, ca});
        }
        m.faces = std::move(next);
    }
    for (auto& v : m.vertices) v = center + radius * v;
    orient_outward(m, center);
    return m;
}

TriMesh box_mesh(const Vec3& he, const Vec3& center) {
    TriMesh m;
    for (int i = 0; i < 8; ++i)
        m.vertices.push_back(center + Vec3((i & 1) ? he.x() : -he.x(),
                                           (i & 2) ? he.y() : -he.y(),
                                           (i & 4) ? he.z() : -he.z()));
    const int quads[6][4] = {{0, 2, 3, 1}, {4, 5, 7, 6}, {0, 1, 5, 4},
                             {2, 6, 7, 3}, {0, 4, 6, 2}, {1, 3, 7, 5}};
    for (const auto& q : quads) {
        m.faces.push_back({q[0], q[1], q[2]});
        m.faces.push_back({q[0], q[2], q[3]});
    }
    orient_outward(m, center);
    return m;
}

std::vector<SurfaceSample> sample_surface(const TriMesh& mesh, int n, Rng& rng) {
    if (mesh.empty()) throw undefined_metric_error("sample_surface: empty mesh");
    std::vector<double> cdf(mesh.faces.size());
    double acc = 0.0;
    for (size_t f = 0; f < mesh.faces.size(); ++f) {
        acc += mesh.face_area(int(f));
        cdf[f] = acc;
    }
    if (acc <= 0.0) throw undefined_metric_error("sample_surface: zero-area mesh");

    std::vector<SurfaceSample> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform() * acc;
        int f = int(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
        f = std::min(f, int(mesh.faces.size()) - 1);
        const auto& t = mesh.faces[f];
        const double r1 = std::sqrt(rng.uniform());
        const double r2 = rng.uniform();
        const double a = 1.0 - r1, b = r1 * (1.0 - r2), c = r1 * r2;
        SurfaceSample s;
        s.p = a * mesh.vertices[t[0]] + b * mesh.vertices[t[1]] + c * mesh.vertices[t[2]];
        s.n = mesh.face_normal(f);
        s.face = f;
        out.push_back(s);
    }
    return out;
}

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
    const Vec3 ab = b - a, ac = c - a, ap = p - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0) return a;

    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3) return b;

    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + (d1 / (d1 - d3)) * ab;

    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6) return c;

    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + (d2 / (d2 - d6)) * ac;

    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
        const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + w * (c - b);
    }

    const double denom = 1.0 / (va + vb + vc);
    return a + ab * (vb * denom) + ac * (vc * denom);
}

MeshDistanceQuery::MeshDistanceQuery(const TriMesh& mesh, int grid_res) : mesh_(mesh) {
    if (mesh.empty()) throw undefined_metric_error("MeshDistanceQuery: empty mesh");
    Vec3 lo = mesh.vertices[0], hi = mesh.vertices[0];
    for (const auto& v : mesh.vertices) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
    }
    const Vec3 extent = (hi - lo).cwiseMax(1e-9);
    const double longest = extent.maxCoeff();
    nx_ = std::max(1, int(std::ceil(extent.x() / longest * grid_res)));
    ny_ = std::max(1, int(std::ceil(extent.y() / longest * grid_res)));
    nz_ = std::max(1, int(std::ceil(extent.z() / longest * grid_res)));
    lo_ = lo - 1e-9 * Vec3::Ones();
    cell_ = Vec3(extent.x() / nx_, extent.y() / ny_, extent.z() / nz_) +
            Vec3::Constant(1e-12);
    cells_.assign(size_t(nx_) * ny_ * nz_, {});

    for (int f = 0; f < int(mesh.faces.size()); ++f) {
        const auto& t = mesh.faces[f];
        Vec3 flo = mesh.vertices[t[0]], fhi = flo;
        for (int k = 1; k < 3; ++k) {
            flo = flo.cwiseMin(mesh.vertices[t[k]]);
            fhi = fhi.cwiseMax(mesh.vertices[t[k]]);
        }
        const auto clampi = [](int v, int n) { return std::clamp(v, 0, n - 1); };
        const int x0 = clampi(int((flo.x() - lo_.x()) / cell_.x()), nx_);
        const int x1 = clampi(int((fhi.x() - lo_.x()) / cell_.x()), nx_);
        const int y0 = clampi(int((flo.y() - lo_.y()) / cell_.y()), ny_);
        const int y1 = clampi(int((fhi.y() - lo_.y()) / cell_.y()), ny_);
        const int z0 = clampi(int((flo.z() - lo_.z()) / cell_.z()), nz_);
        const int z1 = clampi(int((fhi.z() - lo_.z()) / cell_.z()), nz_);
        for (int z = z0; z <= z1; ++z)
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) cells_[cell_index(x, y, z)].push_back(f);
    }
}

MeshDistanceQuery::Result MeshDistanceQuery::nearest(const Vec3& p) const {
    const auto clampi = [](int v, int n) { return std::clamp(v, 0, n - 1); };
    const int cx = clampi(int((p.x() - lo_.x()) / cell_.x()), nx_);
    const int cy = clampi(int((p.y() - lo_.y()) / cell_.y()), ny_);
    const int cz = clampi(int((p.z() - lo_.z()) / cell_.z()), nz_);

    Result best{std::numeric_limits<double>::infinity(), -1, Vec3::Zero()};
    const int max_ring = std::max({nx_, ny_, nz_});
    for (int ring = 0; ring <= max_ring; ++ring) {
        for (int dz = -ring; dz <= ring; ++dz)
            for (int dy = -ring; dy <= ring; ++dy)
                for (int dx = -ring; dx <= ring; ++dx) {
                    if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring)
                        continue;
                    const int x = cx + dx, y = cy + dy, z = cz + dz;
                    if (x < 0 || x >= nx_ || y < 0 || y >= ny_ || z < 0 || z >= nz_)
                        continue;
                    for (int f : cells_[cell_index(x, y, z)]) {
                        const auto& t = mesh_.faces[f];
                        const Vec3 q = closest_point_on_triangle(
                            p, mesh_.vertices[t[0]], mesh_.vertices[t[1]],
                            mesh_.vertices[t[2]]);
                        const double d = (q - p).norm();
                        if (d < best.dist) best = {d, f, q};
                    }
                }
        if (best.face >= 0) {
            // Everything outside the visited box is at least `clearance` away.
            const Vec3 blo = lo_ + Vec3((cx - ring) * cell_.x(), (cy - ring) * cell_.y(),
                                        (cz - ring) * cell_.z());
            const Vec3 bhi = lo_ + Vec3((cx + ring + 1) * cell_.x(),
                                        (cy + ring + 1) * cell_.y(),
                                        (cz + ring + 1) * cell_.z());
            const double clearance =
                std::min({p.x() - blo.x(), bhi.x() - p.x(), p.y() - blo.y(),
                          bhi.y() - p.y(), p.z() - blo.z(), bhi.z() - p.z()});
            if (clearance >= best.dist) break;
        }
    }
    return best;
}

void export_ply(const TriMesh& mesh, const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw io_error("export_ply: cannot open " + path);
    std::string header = "ply\nformat binary_little_endian 1.0\n";
    header += "element vertex " + std::to_string(mesh.vertices.size()) + "\n";
    header += "property float x\nproperty float y\nproperty float z\n";
    header += "element face " + std::to_string(mesh.faces.size()) + "\n";
    header += "property list uchar int vertex_indices\n";
    header += "end_header\n";
    std::fwrite(header.data(), 1, header.size(), f);
    for (const auto& v : mesh.vertices) {
        const float xyz[3] = {float(v.x()), float(v.y()), float(v.z())};
        std::fwrite(xyz, sizeof(float), 3, f);
    }
    for (const auto& face : mesh.faces) {
        const unsigned char n = 3;
        std::fwrite(&n, 1, 1, f);
        const int32_t idx[3] = {face[0], face[1], face[2]};
        std::fwrite(idx, sizeof(int32_t), 3, f);
    }
    if (std::fclose(f) != 0) throw io_error("export_ply: write failed for " + path);
}

void export_obj(const TriMesh& mesh, const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw io_error("export_obj: cannot open " + path);
    for (const auto& v : mesh.vertices)
        std::fprintf(f, "v %.17g %.17g %.17g\n", v.x(), v.y(), v.z());
    for (const auto& face : mesh.faces)
        std::fprintf(f, "f %d %d %d\n", face[0] + 1, face[1] + 1, face[2] + 1);
    if (std::fclose(f) != 0) throw io_error("export_obj: write failed for " + path);
}

}  // namespace osp
