#include "orbitsplat/meshing.hpp"

#include <boost/multiprecision/cpp_int.hpp>

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <vector>

#include "orbitsplat/rng.hpp"

namespace osp {

namespace {

using Rational = boost::multiprecision::cpp_rational;

// Sign of det[b-a, c-a, d-a]: positive when d lies on the side of plane (a,b,c)
// that the right-handed winding normal points to. Floating-point filter with a
// relative error bound; ambiguous cases fall through to exact rationals.
int orient3d_sign(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
    const double ux = b.x() - a.x(), uy = b.y() - a.y(), uz = b.z() - a.z();
    const double vx = c.x() - a.x(), vy = c.y() - a.y(), vz = c.z() - a.z();
    const double wx = d.x() - a.x(), wy = d.y() - a.y(), wz = d.z() - a.z();

    const double det = ux * (vy * wz - vz * wy) - uy * (vx * wz - vz * wx) +
                       uz * (vx * wy - vy * wx);
    const double perm = std::abs(ux) * (std::abs(vy * wz) + std::abs(vz * wy)) +
                        std::abs(uy) * (std::abs(vx * wz) + std::abs(vz * wx)) +
                        std::abs(uz) * (std::abs(vx * wy) + std::abs(vy * wx));
    if (std::abs(det) > 1e-14 * perm) return det > 0.0 ? 1 : -1;
    if (perm == 0.0) return 0;

    auto r = [](double x) { return Rational(x); };
    const Rational rux = r(b.x()) - r(a.x()), ruy = r(b.y()) - r(a.y()),
                   ruz = r(b.z()) - r(a.z());
    const Rational rvx = r(c.x()) - r(a.x()), rvy = r(c.y()) - r(a.y()),
                   rvz = r(c.z()) - r(a.z());
    const Rational rwx = r(d.x()) - r(a.x()), rwy = r(d.y()) - r(a.y()),
                   rwz = r(d.z()) - r(a.z());
    const Rational rdet = rux * (rvy * rwz - rvz * rwy) -
                          ruy * (rvx * rwz - rvz * rwx) +
                          ruz * (rvx * rwy - rvy * rwx);
    return rdet == 0 ? 0 : (rdet > 0 ? 1 : -1);
}

// Sign of the 4x4 determinant with rows (p_i - e, |p_i - e|^2). For a tet
// (a,b,c,d) with orient3d_sign > 0, a negative sign means e lies strictly
// inside the circumsphere.
int insphere_sign(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d,
                  const Vec3& e) {
    const Vec3 pa = a - e, pb = b - e, pc = c - e, pd = d - e;
    const double na = pa.squaredNorm(), nb = pb.squaredNorm(), nc = pc.squaredNorm(),
                 nd = pd.squaredNorm();

    auto det3 = [](double m00, double m01, double m02, double m10, double m11,
                   double m12, double m20, double m21, double m22) {
        return m00 * (m11 * m22 - m12 * m21) - m01 * (m10 * m22 - m12 * m20) +
               m02 * (m10 * m21 - m11 * m20);
    };
    auto perm3 = [](double m00, double m01, double m02, double m10, double m11,
                    double m12, double m20, double m21, double m22) {
        return std::abs(m00) * (std::abs(m11 * m22) + std::abs(m12 * m21)) +
               std::abs(m01) * (std::abs(m10 * m22) + std::abs(m12 * m20)) +
               std::abs(m02) * (std::abs(m10 * m21) + std::abs(m11 * m20));
    };

    // Expand along the norm column.
    const double det =
        -na * det3(pb.x(), pb.y(), pb.z(), pc.x(), pc.y(), pc.z(), pd.x(), pd.y(),
                   pd.z()) +
        nb * det3(pa.x(), pa.y(), pa.z(), pc.x(), pc.y(), pc.z(), pd.x(), pd.y(),
                  pd.z()) -
        nc * det3(pa.x(), pa.y(), pa.z(), pb.x(), pb.y(), pb.z(), pd.x(), pd.y(),
                  pd.z()) +
        nd * det3(pa.x(), pa.y(), pa.z(), pb.x(), pb.y(), pb.z(), pc.x(), pc.y(),
                  pc.z());
    const double perm =
        na * perm3(pb.x(), pb.y(), pb.z(), pc.x(), pc.y(), pc.z(), pd.x(), pd.y(),
                   pd.z()) +
        nb * perm3(pa.x(), pa.y(), pa.z(), pc.x(), pc.y(), pc.z(), pd.x(), pd.y(),
                   pd.z()) +
        nc * perm3(pa.x(), pa.y(), pa.z(), pb.x(), pb.y(), pb.z(), pd.x(), pd.y(),
                   pd.z()) +
        nd * perm3(pa.x(), pa.y(), pa.z(), pb.x(), pb.y(), pb.z(), pc.x(), pc.y(),
                   pc.z());
    if (std::abs(det) > 1e-13 * perm) return det > 0.0 ? 1 : -1;
    if (perm == 0.0) return 0;

    auto r = [](double x) { return Rational(x); };
    std::array<std::array<Rational, 4>, 4> m;
    const Vec3* pts[4] = {&a, &b, &c, &d};
    for (int i = 0; i < 4; ++i) {
        const Rational dx = r(pts[i]->x()) - r(e.x());
        const Rational dy = r(pts[i]->y()) - r(e.y());
        const Rational dz = r(pts[i]->z()) - r(e.z());
        m[i] = {dx, dy, dz, dx * dx + dy * dy + dz * dz};
    }
    auto rdet3 = [&](int r0, int r1, int r2, int c0, int c1, int c2) {
        return m[r0][c0] * (m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]) -
               m[r0][c1] * (m[r1][c0] * m[r2][c2] - m[r1][c2] * m[r2][c0]) +
               m[r0][c2] * (m[r1][c0] * m[r2][c1] - m[r1][c1] * m[r2][c0]);
    };
    const Rational rdet = -m[0][3] * rdet3(1, 2, 3, 0, 1, 2) +
                          m[1][3] * rdet3(0, 2, 3, 0, 1, 2) -
                          m[2][3] * rdet3(0, 1, 3, 0, 1, 2) +
                          m[3][3] * rdet3(0, 1, 2, 0, 1, 2);
    return rdet == 0 ? 0 : (rdet > 0 ? 1 : -1);
}

struct Tet {
    std::array<int, 4> v;
    std::array<int, 4> nb;  // neighbor across the face opposite v[i], -1 = none
    bool alive = true;
};

// Outward winding of the face opposite vertex i, valid for positively
// oriented tets.
constexpr int kFace[4][3] = {{1, 2, 3}, {0, 3, 2}, {0, 1, 3}, {0, 2, 1}};

class Triangulator {
public:
    explicit Triangulator(const std::vector<Vec3>& points) : pts_(points) {
        const size_t n = pts_.size();
        Vec3 lo = pts_[0], hi = pts_[0];
        for (const auto& p : pts_) {
            lo = lo.cwiseMin(p);
            hi = hi.cwiseMax(p);
        }
        const Vec3 c = 0.5 * (lo + hi);
        const double r = std::max((hi - lo).norm(), 1e-12);
        const double s = 1e4 * r;
        pts_.push_back(c + s * Vec3(1, 1, 1));
        pts_.push_back(c + s * Vec3(1, -1, -1));
        pts_.push_back(c + s * Vec3(-1, 1, -1));
        pts_.push_back(c + s * Vec3(-1, -1, 1));
        std::array<int, 4> sv = {int(n), int(n) + 1, int(n) + 2, int(n) + 3};
        if (orient3d_sign(pts_[sv[0]], pts_[sv[1]], pts_[sv[2]], pts_[sv[3]]) < 0)
            std::swap(sv[1], sv[2]);
        tets_.push_back({sv, {-1, -1, -1, -1}, true});

        for (int i = 0; i < int(n); ++i) insert(i);
    }

    std::vector<std::array<int, 4>> finite_tets(int n_input) const {
        std::vector<std::array<int, 4>> out;
        for (const auto& t : tets_) {
            if (!t.alive) continue;
            bool finite = true;
            for (int k : t.v) finite &= k < n_input;
            if (finite) out.push_back(t.v);
        }
        return out;
    }

private:
    bool in_sphere(const Tet& t, const Vec3& p) const {
        return insphere_sign(pts_[t.v[0]], pts_[t.v[1]], pts_[t.v[2]], pts_[t.v[3]],
                             p) < 0;
    }

    int locate(const Vec3& p) const {
        int cur = last_;
        for (int guard = 0; guard < int(tets_.size()) * 4 + 64; ++guard) {
            const Tet& t = tets_[cur];
            int next = -2;
            for (int f = 0; f < 4; ++f) {
                const int s = orient3d_sign(pts_[t.v[kFace[f][0]]],
                                            pts_[t.v[kFace[f][1]]],
                                            pts_[t.v[kFace[f][2]]], p);
                if (s > 0) {
                    next = t.nb[f];
                    break;
                }
            }
            if (next == -2) return cur;
            if (next == -1)
                throw degenerate_error("delaunay: point escaped the bounding tet");
            cur = next;
        }
        // The visibility walk stalled; fall back to scanning everything.
        for (int i = 0; i < int(tets_.size()); ++i) {
            if (!tets_[i].alive) continue;
            bool inside = true;
            const Tet& t = tets_[i];
            for (int f = 0; f < 4 && inside; ++f)
                inside = orient3d_sign(pts_[t.v[kFace[f][0]]], pts_[t.v[kFace[f][1]]],
                                       pts_[t.v[kFace[f][2]]], p) <= 0;
            if (inside) return i;
        }
        throw degenerate_error("delaunay: containing tet not found");
    }

    void insert(int pi) {
        const Vec3& p = pts_[pi];
        const int loc = locate(p);
        if (!in_sphere(tets_[loc], p)) return;  // duplicate of an existing vertex

        // Cavity: flood over circumsphere-violating tets.
        std::vector<int> cavity, stack = {loc};
        ++stamp_;
        if (visited_.size() < tets_.size()) visited_.resize(tets_.size(), 0);
        visited_[loc] = stamp_;
        struct Boundary {
            int a, b, c;  // outward winding seen from inside the cavity
            int outer;
        };
        std::vector<Boundary> boundary;
        while (!stack.empty()) {
            const int ti = stack.back();
            stack.pop_back();
            cavity.push_back(ti);
            const Tet t = tets_[ti];
            for (int f = 0; f < 4; ++f) {
                const int n = t.nb[f];
                if (n >= 0 && visited_[n] == stamp_) continue;
                if (n >= 0 && in_sphere(tets_[n], p)) {
                    visited_[n] = stamp_;
                    stack.push_back(n);
                } else {
                    boundary.push_back({t.v[kFace[f][0]], t.v[kFace[f][1]],
                                        t.v[kFace[f][2]], n});
                }
            }
        }
        for (int ti : cavity) tets_[ti].alive = false;

        // Retriangulate: connect p to every boundary face.
        struct EdgeKey {
            std::uint64_t k;
            bool operator==(const EdgeKey& o) const { return k == o.k; }
        };
        struct EdgeHash {
            size_t operator()(const EdgeKey& e) const {
                return std::hash<std::uint64_t>()(e.k);
            }
        };
        auto edge_key = [](int u, int v) {
            if (u > v) std::swap(u, v);
            return EdgeKey{(std::uint64_t(std::uint32_t(u)) << 32) |
                           std::uint32_t(v)};
        };
        std::unordered_map<EdgeKey, std::pair<int, int>, EdgeHash> open;
        open.reserve(boundary.size() * 2);

        int first_new = -1;
        for (const Boundary& bf : boundary) {
            const int id = alloc_tet();
            if (first_new < 0) first_new = id;
            Tet& nt = tets_[id];
            nt.v = {bf.b, bf.a, bf.c, pi};
            nt.nb = {-1, -1, -1, -1};
            nt.alive = true;

            nt.nb[3] = bf.outer;
            if (bf.outer >= 0) {
                Tet& out = tets_[bf.outer];
                for (int f = 0; f < 4; ++f) {
                    const int a = out.v[kFace[f][0]], b = out.v[kFace[f][1]],
                              c = out.v[kFace[f][2]];
                    const auto match = [&](int x) {
                        return x == bf.a || x == bf.b || x == bf.c;
                    };
                    if (match(a) && match(b) && match(c)) {
                        out.nb[f] = id;
                        break;
                    }
                }
            }

            // Faces containing p, keyed by the boundary edge they straddle:
            // opposite v[0]=b is (a,c), opposite v[1]=a is (b,c),
            // opposite v[2]=c is (a,b).
            const std::pair<EdgeKey, int> pfaces[3] = {
                {edge_key(bf.a, bf.c), 0},
                {edge_key(bf.b, bf.c), 1},
                {edge_key(bf.a, bf.b), 2},
            };
            for (const auto& [key, f] : pfaces) {
                auto it = open.find(key);
                if (it == open.end()) {
                    open.emplace(key, std::make_pair(id, f));
                } else {
                    tets_[id].nb[f] = it->second.first;
                    tets_[it->second.first].nb[it->second.second] = id;
                    open.erase(it);
                }
            }
        }
        last_ = first_new;
    }

    int alloc_tet() {
        tets_.push_back({});
        if (visited_.size() < tets_.size()) visited_.push_back(0);
        return int(tets_.size()) - 1;
    }

    std::vector<Vec3> pts_;
    std::vector<Tet> tets_;
    std::vector<std::uint32_t> visited_;
    std::uint32_t stamp_ = 0;
    int last_ = 0;
};

std::vector<std::array<int, 4>> try_delaunay(const std::vector<Vec3>& points) {
    Triangulator tri(points);
    return tri.finite_tets(int(points.size()));
}

}  // namespace

std::vector<std::array<int, 4>> delaunay_tets(const std::vector<Vec3>& points,
                                              double extent) {
    if (points.size() < 5)
        throw invalid_input_error("delaunay_tets: need at least 5 points");
    for (const auto& p : points)
        if (!p.allFinite())
            throw invalid_input_error("delaunay_tets: non-finite point");

    std::vector<std::array<int, 4>> tets = try_delaunay(points);
    if (!tets.empty()) return tets;

    // Degenerate (coplanar/collinear) input: jitter once and retry.
    Rng rng(Rng::derive(0x5eedull, 41));
    const double amp = 1e-9 * std::max(extent, 1e-12);
    std::vector<Vec3> jittered = points;
    for (auto& p : jittered)
        p += amp * Vec3(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                        rng.uniform(-1.0, 1.0));
    tets = try_delaunay(jittered);
    if (tets.empty())
        throw degenerate_error("delaunay_tets: degenerate input even after jitter");
    return tets;
}

}  // namespace osp
