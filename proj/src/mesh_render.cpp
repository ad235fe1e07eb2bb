#include "orbitsplat/meshing.hpp"

#include <algorithm>
#include <cmath>

#include "orbitsplat/parallel.hpp"

namespace osp {

namespace {

constexpr double kMinZ = 1e-6;
constexpr double kMinArea2 = 1e-18;  // twice the signed screen area

struct ProjectedTri {
    Vec2 a, b, c;   // pixel-center coordinates
    double za, zb, zc;
    Vec3 normal;    // world frame, camera-facing
    int lo_y, hi_y, lo_x, hi_x;
    bool ok = false;
};

ProjectedTri project_triangle(const TriMesh& mesh, int f, const Camera& cam) {
    ProjectedTri out;
    const auto& t = mesh.faces[size_t(f)];
    Vec3 pc[3];
    for (int k = 0; k < 3; ++k) {
        pc[k] = cam.to_camera(mesh.vertices[size_t(t[size_t(k)])]);
        if (pc[k].z() <= kMinZ) return out;
    }
    const double fx = cam.K(0, 0), fy = cam.K(1, 1), cx = cam.K(0, 2),
                 cy = cam.K(1, 2), sk = cam.K(0, 1);
    Vec2 s[3];
    for (int k = 0; k < 3; ++k) {
        const double inv_z = 1.0 / pc[k].z();
        s[k] = Vec2((fx * pc[k].x() + sk * pc[k].y()) * inv_z + cx - 0.5,
                    fy * pc[k].y() * inv_z + cy - 0.5);
    }
    out.a = s[0];
    out.b = s[1];
    out.c = s[2];
    out.za = pc[0].z();
    out.zb = pc[1].z();
    out.zc = pc[2].z();

    const Vec3 n = mesh.face_normal(f);
    if (n == Vec3::Zero()) return out;
    const Vec3 centroid = (mesh.vertices[size_t(t[0])] + mesh.vertices[size_t(t[1])] +
                           mesh.vertices[size_t(t[2])]) /
                          3.0;
    out.normal = n.dot(cam.position() - centroid) >= 0.0 ? n : Vec3(-n);

    const double lox = std::min({s[0].x(), s[1].x(), s[2].x()});
    const double hix = std::max({s[0].x(), s[1].x(), s[2].x()});
    const double loy = std::min({s[0].y(), s[1].y(), s[2].y()});
    const double hiy = std::max({s[0].y(), s[1].y(), s[2].y()});
    out.lo_x = std::max(0, int(std::ceil(lox)));
    out.hi_x = std::min(cam.width - 1, int(std::floor(hix)));
    out.lo_y = std::max(0, int(std::ceil(loy)));
    out.hi_y = std::min(cam.height - 1, int(std::floor(hiy)));
    out.ok = out.lo_x <= out.hi_x && out.lo_y <= out.hi_y;
    return out;
}

double cross2(const Vec2& u, const Vec2& v) {
    return u.x() * v.y() - u.y() * v.x();
}

}  // namespace

MeshRaster rasterize_mesh(const TriMesh& mesh, const Camera& cam) {
    validate_camera(cam);
    MeshRaster out;
    out.width = cam.width;
    out.height = cam.height;
    const size_t np = size_t(cam.width) * cam.height;
    out.depth.assign(np, 0.0);
    out.normal.assign(np, Vec3::Zero());
    out.tri.assign(np, -1);
    out.bary.assign(np, Vec3::Zero());
    if (mesh.empty()) return out;

    std::vector<ProjectedTri> proj(mesh.faces.size());
    parallel_shards(int(mesh.faces.size()), [&](int, int begin, int end) {
        for (int f = begin; f < end; ++f)
            proj[size_t(f)] = project_triangle(mesh, f, cam);
    });

    // Row buckets so each row only tests overlapping triangles; rows are
    // independent, which keeps the result identical for any thread count.
    std::vector<std::vector<int>> rows(size_t(cam.height));
    for (int f = 0; f < int(mesh.faces.size()); ++f) {
        const ProjectedTri& p = proj[size_t(f)];
        if (!p.ok) continue;
        for (int y = p.lo_y; y <= p.hi_y; ++y) rows[size_t(y)].push_back(f);
    }

    parallel_rows(cam.height, [&](int y) {
        double* drow = out.depth.data() + size_t(y) * cam.width;
        Vec3* nrow = out.normal.data() + size_t(y) * cam.width;
        int* trow = out.tri.data() + size_t(y) * cam.width;
        Vec3* brow = out.bary.data() + size_t(y) * cam.width;
        for (int f : rows[size_t(y)]) {
            const ProjectedTri& p = proj[size_t(f)];
            const double area2 = cross2(p.b - p.a, p.c - p.a);
            if (std::abs(area2) < kMinArea2) continue;
            const double inv_area = 1.0 / area2;
            for (int x = p.lo_x; x <= p.hi_x; ++x) {
                const Vec2 q(static_cast<double>(x), static_cast<double>(y));
                const double w0 = cross2(p.c - p.b, q - p.b) * inv_area;
                const double w1 = cross2(p.a - p.c, q - p.c) * inv_area;
                const double w2 = cross2(p.b - p.a, q - p.a) * inv_area;
                if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
                const double z = w0 * p.za + w1 * p.zb + w2 * p.zc;
                if (z <= kMinZ) continue;
                if (trow[x] >= 0 && drow[x] <= z) continue;
                drow[x] = z;
                nrow[x] = p.normal;
                trow[x] = f;
                brow[x] = Vec3(w0, w1, w2);
            }
        }
    });
    return out;
}

std::vector<Vec3> rasterize_mesh_backward(const TriMesh& mesh, const Camera& cam,
                                          const MeshRaster& raster,
                                          const std::vector<double>& d_depth,
                                          const std::vector<Vec3>& d_normal) {
    const size_t np = size_t(raster.width) * raster.height;
    if ((!d_depth.empty() && d_depth.size() != np) ||
        (!d_normal.empty() && d_normal.size() != np))
        throw invalid_input_error("rasterize_mesh_backward: gradient size mismatch");

    std::vector<Vec3> vgrad(mesh.vertices.size(), Vec3::Zero());
    const double fx = cam.K(0, 0), fy = cam.K(1, 1), sk = cam.K(0, 1);
    const Vec3 cam_pos = cam.position();

    for (size_t p = 0; p < np; ++p) {
        const int f = raster.tri[p];
        if (f < 0) continue;
        const double gd = d_depth.empty() ? 0.0 : d_depth[p];
        const Vec3 gn = d_normal.empty() ? Vec3::Zero() : d_normal[p];
        if (gd == 0.0 && gn == Vec3::Zero()) continue;

        const auto& tri = mesh.faces[size_t(f)];
        const Vec3* v[3];
        Vec3 pc[3];
        Vec2 s[3];
        for (int k = 0; k < 3; ++k) {
            v[k] = &mesh.vertices[size_t(tri[size_t(k)])];
            pc[k] = cam.to_camera(*v[k]);
            const double inv_z = 1.0 / pc[k].z();
            s[k] = Vec2((fx * pc[k].x() + sk * pc[k].y()) * inv_z + cam.K(0, 2) - 0.5,
                        fy * pc[k].y() * inv_z + cam.K(1, 2) - 0.5);
        }

        if (gd != 0.0) {
            // depth = sum_k w_k z_k with screen-space barycentrics; gradients
            // flow through both the camera depths and the projections.
            const int y = int(p) / raster.width, x = int(p) % raster.width;
            const Vec2 q(static_cast<double>(x), static_cast<double>(y));
            const double area2 = cross2(s[1] - s[0], s[2] - s[0]);
            const double inv_area = 1.0 / area2;
            const double w[3] = {raster.bary[p].x(), raster.bary[p].y(),
                                 raster.bary[p].z()};
            const double z[3] = {pc[0].z(), pc[1].z(), pc[2].z()};

            // dw_k/ds_j: numerators N_k depend on the two other projections,
            // the shared denominator depends on all three.
            const double dz_dw[3] = {z[0], z[1], z[2]};
            Vec2 gs[3] = {Vec2::Zero(), Vec2::Zero(), Vec2::Zero()};
            const Vec2 dA[3] = {
                Vec2(s[1].y() - s[2].y(), s[2].x() - s[1].x()),
                Vec2(s[2].y() - s[0].y(), s[0].x() - s[2].x()),
                Vec2(s[0].y() - s[1].y(), s[1].x() - s[0].x()),
            };
            for (int k = 0; k < 3; ++k) {
                // w_k = N_k / A; dN_k/ds_{k+1} and ds_{k+2} as derived from
                // N_k = cross2(s_{k+2} - s_{k+1}, q - s_{k+1}).
                const int k1 = (k + 1) % 3, k2 = (k + 2) % 3;
                const Vec2 dN_dk1(s[k2].y() - q.y(), q.x() - s[k2].x());
                const Vec2 dN_dk2(q.y() - s[k1].y(), s[k1].x() - q.x());
                const double coef = gd * dz_dw[k];
                gs[k1] += coef * inv_area * dN_dk1;
                gs[k2] += coef * inv_area * dN_dk2;
                for (int j = 0; j < 3; ++j)
                    gs[j] += coef * (-w[k] * inv_area) * dA[j];
            }

            for (int k = 0; k < 3; ++k) {
                const double inv_z = 1.0 / pc[k].z();
                Vec3 gpc(gs[k].x() * fx * inv_z,
                         gs[k].x() * sk * inv_z + gs[k].y() * fy * inv_z,
                         -inv_z * (gs[k].x() * (s[k].x() - cam.K(0, 2) + 0.5) +
                                   gs[k].y() * (s[k].y() - cam.K(1, 2) + 0.5)));
                gpc.z() += gd * w[k];
                vgrad[size_t(tri[size_t(k)])] += cam.R.transpose() * gpc;
            }
        }

        if (gn != Vec3::Zero()) {
            const Vec3 u = *v[1] - *v[0], w2 = *v[2] - *v[0];
            const Vec3 c = u.cross(w2);
            const double len = c.norm();
            if (len > 1e-300) {
                const Vec3 nh = c / len;
                const Vec3 centroid = (*v[0] + *v[1] + *v[2]) / 3.0;
                const double flip =
                    nh.dot(cam_pos - centroid) >= 0.0 ? 1.0 : -1.0;
                const Vec3 gC = flip * (gn - nh * nh.dot(gn)) / len;
                const Vec3 g1 = w2.cross(gC);
                const Vec3 g2 = gC.cross(u);
                vgrad[size_t(tri[1])] += g1;
                vgrad[size_t(tri[2])] += g2;
                vgrad[size_t(tri[0])] -= g1 + g2;
            }
        }
    }
    return vgrad;
}

TriMesh load_ply(const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw io_error("load_ply: cannot open " + path);
    std::string header;
    int nv = -1, nf = -1;
    {
        std::string line;
        int c;
        while ((c = std::fgetc(f)) != EOF) {
            if (c == '\n') {
                if (line.rfind("element vertex ", 0) == 0)
                    nv = std::atoi(line.c_str() + 15);
                else if (line.rfind("element face ", 0) == 0)
                    nf = std::atoi(line.c_str() + 13);
                if (line == "end_header") break;
                line.clear();
            } else {
                line.push_back(char(c));
            }
        }
        if (line != "end_header" || nv < 0 || nf < 0) {
            std::fclose(f);
            throw io_error("load_ply: malformed header in " + path);
        }
    }
    TriMesh mesh;
    mesh.vertices.reserve(size_t(nv));
    for (int i = 0; i < nv; ++i) {
        float xyz[3];
        if (std::fread(xyz, sizeof(float), 3, f) != 3) {
            std::fclose(f);
            throw io_error("load_ply: truncated vertex data in " + path);
        }
        mesh.vertices.emplace_back(xyz[0], xyz[1], xyz[2]);
    }
    mesh.faces.reserve(size_t(nf));
    for (int i = 0; i < nf; ++i) {
        unsigned char n = 0;
        int32_t idx[3];
        if (std::fread(&n, 1, 1, f) != 1 || n != 3 ||
            std::fread(idx, sizeof(int32_t), 3, f) != 3) {
            std::fclose(f);
            throw io_error("load_ply: truncated face data in " + path);
        }
        mesh.faces.push_back({idx[0], idx[1], idx[2]});
    }
    std::fclose(f);
    return mesh;
}

}  // namespace osp
