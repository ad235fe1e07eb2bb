#pragma once

#include <array>
#include <string>
#include <vector>

#include "orbitsplat/common.hpp"
#include "orbitsplat/rng.hpp"

namespace osp {

struct TriMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> faces;

    bool empty() const { return faces.empty(); }
    Vec3 face_normal(int f) const;  // unit; zero for degenerate faces
    double face_area(int f) const;
    double area() const;
};

// Primitive generators, all outward-oriented and centered at `center`.
TriMesh icosahedron(double radius, const Vec3& center = Vec3::Zero());
TriMesh icosphere(double radius, int subdivisions, const Vec3& center = Vec3::Zero());
TriMesh box_mesh(const Vec3& half_extents, const Vec3& center = Vec3::Zero());

struct SurfaceSample {
    Vec3 p;
    Vec3 n;
    int face;
};

// Area-uniform surface samples with flat per-face normals.
std::vector<SurfaceSample> sample_surface(const TriMesh& mesh, int n, Rng& rng);

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

// Uniform-grid nearest-triangle queries. Holds a reference to the mesh, which
// must outlive the query object. Queries are thread-safe.
class MeshDistanceQuery {
public:
    explicit MeshDistanceQuery(const TriMesh& mesh, int grid_res = 48);

    struct Result {
        double dist;
        int face;
        Vec3 closest;
    };
    Result nearest(const Vec3& p) const;

private:
    const TriMesh& mesh_;
    Vec3 lo_, cell_;
    int nx_, ny_, nz_;
    std::vector<std::vector<int>> cells_;

    int cell_index(int x, int y, int z) const { return (z * ny_ + y) * nx_ + x; }
};

// Binary little-endian PLY with float vertex positions and int vertex indices.
void export_ply(const TriMesh& mesh, const std::string& path);
void export_obj(const TriMesh& mesh, const std::string& path);

}  // namespace osp
