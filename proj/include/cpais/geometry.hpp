// Convex rigid-body collision queries: signed distance between posed convex
// shapes (GJK for separation, expanding-polytope refinement for penetration
// depth), distance gradients with respect to state, and swept collision
// checking over a discrete trajectory by conservative advancement.
#pragma once

#include "cpais/common.hpp"
#include "cpais/dynamics.hpp"

#include <array>
#include <optional>
#include <vector>

namespace cpais {

struct ConvexShape {
    enum class Kind { Sphere, Polytope };

    Kind kind = Kind::Sphere;
    Eigen::Vector3d center = Eigen::Vector3d::Zero();      // sphere only
    double radius = 0.0;                                    // sphere only
    std::vector<Eigen::Vector3d> vertices;                  // polytope only

    static ConvexShape sphere(const Eigen::Vector3d& center, double radius) {
        require(radius > 0, "ConvexShape: sphere radius must be positive");
        ConvexShape s;
        s.kind = Kind::Sphere;
        s.center = center;
        s.radius = radius;
        return s;
    }

    static ConvexShape polytope(std::vector<Eigen::Vector3d> vertices) {
        require(vertices.size() >= 4, "ConvexShape: polytope needs at least 4 vertices");
        Eigen::MatrixXd diffs(vertices.size() - 1, 3);
        for (std::size_t i = 1; i < vertices.size(); ++i)
            diffs.row(i - 1) = (vertices[i] - vertices[0]).transpose();
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(diffs);
        require(svd.rank() == 3, "ConvexShape: polytope vertices must be affinely independent (3-D)");
        ConvexShape s;
        s.kind = Kind::Polytope;
        s.vertices = std::move(vertices);
        return s;
    }

    static ConvexShape box(const Eigen::Vector3d& center, const Eigen::Vector3d& half_extents) {
        std::vector<Eigen::Vector3d> v;
        v.reserve(8);
        for (int sx : {-1, 1})
            for (int sy : {-1, 1})
                for (int sz : {-1, 1})
                    v.push_back(center + Eigen::Vector3d(sx * half_extents.x(), sy * half_extents.y(),
                                                         sz * half_extents.z()));
        return polytope(std::move(v));
    }

    // Radius of the smallest origin-centered ball containing the shape
    // (body frame); bounds witness-point speed under rotation.
    double circumradius() const {
        if (kind == Kind::Sphere) return center.norm() + radius;
        double r = 0;
        for (const auto& v : vertices) r = std::max(r, v.norm());
        return r;
    }

    // Center and radius of a loose bounding sphere in body frame.
    std::pair<Eigen::Vector3d, double> bounding_sphere() const {
        if (kind == Kind::Sphere) return {center, radius};
        Eigen::Vector3d c = Eigen::Vector3d::Zero();
        for (const auto& v : vertices) c += v;
        c /= static_cast<double>(vertices.size());
        double r = 0;
        for (const auto& v : vertices) r = std::max(r, (v - c).norm());
        return {c, r};
    }
};

struct RobotBody {
    std::vector<std::pair<std::string, ConvexShape>> parts;  // body frame

    void validate() const { require(!parts.empty(), "RobotBody: needs at least one part"); }
};

struct Environment {
    std::vector<std::pair<std::string, ConvexShape>> obstacles;  // world frame
};

struct DistanceResult {
    double distance = 0.0;           // separation > 0, penetration depth < 0
    Eigen::Vector3d witness_a = Eigen::Vector3d::Zero();  // world frame
    Eigen::Vector3d witness_b = Eigen::Vector3d::Zero();
    bool degenerate = false;         // |distance| ~ 0 with possibly non-unique witness
};

namespace gjk_detail {

// One vertex of the Minkowski difference A - B with its source points.
struct SupportPoint {
    Eigen::Vector3d v;  // a - b
    Eigen::Vector3d a;
    Eigen::Vector3d b;
};

// Support of the shape core (sphere treated as its center point; radii are
// applied outside the iteration).
inline Eigen::Vector3d core_support(const ConvexShape& shape, const Pose& pose,
                                    const Eigen::Vector3d& dir) {
    if (shape.kind == ConvexShape::Kind::Sphere)
        return pose.rotation * shape.center + pose.translation;
    const Eigen::Vector3d local_dir = pose.rotation.conjugate() * dir;
    double best = -kInf;
    const Eigen::Vector3d* best_v = nullptr;
    for (const auto& v : shape.vertices) {
        const double score = v.dot(local_dir);
        if (score > best) {
            best = score;
            best_v = &v;
        }
    }
    return pose.rotation * (*best_v) + pose.translation;
}

inline SupportPoint minkowski_support(const ConvexShape& sa, const Pose& pa, const ConvexShape& sb,
                                      const Pose& pb, const Eigen::Vector3d& dir) {
    SupportPoint p;
    p.a = core_support(sa, pa, dir);
    p.b = core_support(sb, pb, -dir);
    p.v = p.a - p.b;
    return p;
}

// Closest point to the origin on the segment [a, b].
inline void closest_on_segment(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                               Eigen::Vector3d& point, double& t) {
    const Eigen::Vector3d ab = b - a;
    const double denom = ab.squaredNorm();
    t = denom > 0 ? std::clamp(-a.dot(ab) / denom, 0.0, 1.0) : 0.0;
    point = a + t * ab;
}

// Closest point to the origin on a triangle, with barycentric coordinates
// and the supporting feature (bitmask over {a, b, c}).
inline void closest_on_triangle(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                                const Eigen::Vector3d& c, Eigen::Vector3d& point,
                                std::array<double, 3>& bary, int& feature) {
    const Eigen::Vector3d ab = b - a, ac = c - a;

    // Collinear vertices: fall back to the best edge.
    const double area2 = ab.cross(ac).squaredNorm();
    const double edge_scale = std::max({ab.squaredNorm(), ac.squaredNorm(), (c - b).squaredNorm()});
    if (area2 <= 1e-20 * edge_scale * edge_scale) {
        Eigen::Vector3d best_point = Eigen::Vector3d::Zero();
        double best_dist = kInf;
        for (int e = 0; e < 3; ++e) {
            const Eigen::Vector3d &p = e == 0 ? a : (e == 1 ? a : b);
            const Eigen::Vector3d &q = e == 0 ? b : (e == 1 ? c : c);
            Eigen::Vector3d candidate;
            double t;
            closest_on_segment(p, q, candidate, t);
            if (candidate.squaredNorm() < best_dist) {
                best_dist = candidate.squaredNorm();
                best_point = candidate;
                if (e == 0) {
                    bary = {1 - t, t, 0};
                    feature = t <= 0 ? 0b001 : (t >= 1 ? 0b010 : 0b011);
                } else if (e == 1) {
                    bary = {1 - t, 0, t};
                    feature = t <= 0 ? 0b001 : (t >= 1 ? 0b100 : 0b101);
                } else {
                    bary = {0, 1 - t, t};
                    feature = t <= 0 ? 0b010 : (t >= 1 ? 0b100 : 0b110);
                }
            }
        }
        point = best_point;
        return;
    }

    const Eigen::Vector3d ap = -a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0 && d2 <= 0) {
        point = a; bary = {1, 0, 0}; feature = 0b001; return;
    }
    const Eigen::Vector3d bp = -b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0 && d4 <= d3) {
        point = b; bary = {0, 1, 0}; feature = 0b010; return;
    }
    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0 && d1 >= 0 && d3 <= 0) {
        const double t = d1 / (d1 - d3);
        point = a + t * ab; bary = {1 - t, t, 0}; feature = 0b011; return;
    }
    const Eigen::Vector3d cp = -c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0 && d5 <= d6) {
        point = c; bary = {0, 0, 1}; feature = 0b100; return;
    }
    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0 && d2 >= 0 && d6 <= 0) {
        const double t = d2 / (d2 - d6);
        point = a + t * ac; bary = {1 - t, 0, t}; feature = 0b101; return;
    }
    const double va = d3 * d6 - d5 * d4;
    if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
        const double t = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        point = b + t * (c - b); bary = {0, 1 - t, t}; feature = 0b110; return;
    }
    const double denom = 1.0 / (va + vb + vc);
    const double v = vb * denom, w = vc * denom;
    point = a + ab * v + ac * w;
    bary = {1 - v - w, v, w};
    feature = 0b111;
}

// Reduces the simplex to the minimal feature supporting the closest point to
// the origin. Returns false when the origin is enclosed by a tetrahedron.
inline bool reduce_simplex(std::vector<SupportPoint>& simplex, Eigen::Vector3d& closest,
                           std::vector<double>& lambdas) {
    const auto keep = [&](std::initializer_list<int> idx, std::initializer_list<double> lam) {
        std::vector<SupportPoint> next;
        next.reserve(idx.size());
        for (int i : idx) next.push_back(simplex[i]);
        simplex = std::move(next);
        lambdas.assign(lam);
    };

    if (simplex.size() == 1) {
        closest = simplex[0].v;
        lambdas = {1.0};
        return true;
    }
    if (simplex.size() == 2) {
        const Eigen::Vector3d a = simplex[0].v, b = simplex[1].v;
        const Eigen::Vector3d ab = b - a;
        const double denom = ab.squaredNorm();
        double t = denom > 0 ? -a.dot(ab) / denom : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        closest = a + t * ab;
        if (t <= 0) keep({0}, {1.0});
        else if (t >= 1) keep({1}, {1.0});
        else lambdas = {1 - t, t};
        return true;
    }
    if (simplex.size() == 3) {
        Eigen::Vector3d point;
        std::array<double, 3> bary;
        int feature;
        closest_on_triangle(simplex[0].v, simplex[1].v, simplex[2].v, point, bary, feature);
        closest = point;
        std::vector<SupportPoint> next;
        std::vector<double> lam;
        for (int i = 0; i < 3; ++i) {
            if (feature & (1 << i)) {
                next.push_back(simplex[i]);
                lam.push_back(bary[i]);
            }
        }
        simplex = std::move(next);
        lambdas = std::move(lam);
        return true;
    }

    // Tetrahedron: enclosed-origin test, else closest over the outward faces.
    const Eigen::Vector3d a = simplex[0].v, b = simplex[1].v, c = simplex[2].v, d = simplex[3].v;
    const auto side = [](const Eigen::Vector3d& p0, const Eigen::Vector3d& p1,
                         const Eigen::Vector3d& p2, const Eigen::Vector3d& q) {
        return (p1 - p0).cross(p2 - p0).dot(q - p0);
    };
    struct Face {
        std::array<int, 3> idx;
    };
    const std::array<Face, 4> faces = {Face{{0, 1, 2}}, Face{{0, 1, 3}}, Face{{0, 2, 3}},
                                       Face{{1, 2, 3}}};
    const std::array<int, 4> opposite = {3, 2, 1, 0};
    const std::array<Eigen::Vector3d, 4> verts = {a, b, c, d};

    // A flat tetrahedron (e.g. four coplanar supports from one box face)
    // cannot enclose the origin; search all faces instead of trusting the
    // side tests.
    double edge_scale = 0.0;
    for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j)
            edge_scale = std::max(edge_scale, (verts[i] - verts[j]).norm());
    const double volume = side(a, b, c, d);
    const bool flat = std::abs(volume) <= 1e-10 * edge_scale * edge_scale * edge_scale;

    bool outside_any = false;
    double best_dist2 = kInf;
    Eigen::Vector3d best_point = Eigen::Vector3d::Zero();
    std::array<double, 3> best_bary{};
    int best_feature = 0;
    Face best_face{};
    for (int f = 0; f < 4; ++f) {
        const auto& fc = faces[f];
        const Eigen::Vector3d &p0 = verts[fc.idx[0]], &p1 = verts[fc.idx[1]], &p2 = verts[fc.idx[2]];
        if (!flat) {
            const double s_origin = side(p0, p1, p2, Eigen::Vector3d::Zero());
            const double s_opposite = side(p0, p1, p2, verts[opposite[f]]);
            if (s_origin * s_opposite >= 0) continue;  // origin on the inner side of this face
        }
        outside_any = true;
        Eigen::Vector3d point;
        std::array<double, 3> bary;
        int feature;
        closest_on_triangle(p0, p1, p2, point, bary, feature);
        const double dist2 = point.squaredNorm();
        if (dist2 < best_dist2) {
            best_dist2 = dist2;
            best_point = point;
            best_bary = bary;
            best_feature = feature;
            best_face = fc;
        }
    }
    if (!outside_any) return false;  // origin enclosed

    closest = best_point;
    std::vector<SupportPoint> next;
    std::vector<double> lam;
    for (int i = 0; i < 3; ++i) {
        if (best_feature & (1 << i)) {
            next.push_back(simplex[best_face.idx[i]]);
            lam.push_back(best_bary[i]);
        }
    }
    simplex = std::move(next);
    lambdas = std::move(lam);
    return true;
}

struct GjkResult {
    bool overlap = false;
    double core_distance = 0.0;
    Eigen::Vector3d point_a = Eigen::Vector3d::Zero();
    Eigen::Vector3d point_b = Eigen::Vector3d::Zero();
    std::vector<SupportPoint> simplex;  // terminal simplex (for EPA seeding)
};

inline constexpr int kIterationCap = 256;

inline GjkResult gjk_core_distance(const ConvexShape& sa, const Pose& pa, const ConvexShape& sb,
                                   const Pose& pb) {
    GjkResult result;
    Eigen::Vector3d dir =
        (pa.rotation * (sa.kind == ConvexShape::Kind::Sphere ? sa.center : sa.vertices[0]) +
         pa.translation) -
        (pb.rotation * (sb.kind == ConvexShape::Kind::Sphere ? sb.center : sb.vertices[0]) +
         pb.translation);
    if (dir.squaredNorm() < 1e-24) dir = Eigen::Vector3d::UnitX();

    std::vector<SupportPoint> simplex{minkowski_support(sa, pa, sb, pb, -dir)};
    std::vector<double> lambdas{1.0};
    Eigen::Vector3d closest = simplex[0].v;

    bool converged = false;
    for (int iter = 0; iter < kIterationCap; ++iter) {
        const double dist2 = closest.squaredNorm();
        if (dist2 < 1e-20) {  // origin reached: touching or overlapping
            result.overlap = true;
            result.simplex = simplex;
            return result;
        }
        const SupportPoint w = minkowski_support(sa, pa, sb, pb, -closest);
        // No further progress possible toward the origin. The relative
        // tolerance absorbs cancellation noise from far-away supports; the
        // implied distance error is <= 1e-9 * |v|.
        const double progress = dist2 - closest.dot(w.v);
        if (progress <= 1e-9 * dist2 + 1e-24) {
            converged = true;
            break;
        }
        bool duplicate = false;
        for (const auto& s : simplex)
            if ((s.v - w.v).squaredNorm() < 1e-24) duplicate = true;
        if (duplicate) {
            converged = true;
            break;
        }

        simplex.push_back(w);
        if (!reduce_simplex(simplex, closest, lambdas)) {
            result.overlap = true;
            result.simplex = simplex;
            return result;
        }
        if (closest.squaredNorm() >= dist2 * (1.0 - 1e-12)) {  // stagnated
            converged = true;
            break;
        }
    }
    if (!converged)
        throw std::runtime_error("signed_distance: GJK iteration cap (" +
                                 std::to_string(kIterationCap) + ") exceeded at distance " +
                                 std::to_string(closest.norm()));

    result.core_distance = closest.norm();
    result.point_a = Eigen::Vector3d::Zero();
    result.point_b = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < simplex.size(); ++i) {
        result.point_a += lambdas[i] * simplex[i].a;
        result.point_b += lambdas[i] * simplex[i].b;
    }
    result.simplex = simplex;
    return result;
}

struct EpaResult {
    double depth = 0.0;                 // penetration of the cores (>= 0)
    Eigen::Vector3d normal = Eigen::Vector3d::UnitX();  // from B into A
    Eigen::Vector3d point_a = Eigen::Vector3d::Zero();
    Eigen::Vector3d point_b = Eigen::Vector3d::Zero();
};

// Expands a degenerate terminal simplex to a tetrahedron enclosing volume.
inline bool build_initial_tetrahedron(const ConvexShape& sa, const Pose& pa, const ConvexShape& sb,
                                      const Pose& pb, std::vector<SupportPoint>& pts) {
    const auto add_unique = [&](const Eigen::Vector3d& dir) {
        const SupportPoint w = minkowski_support(sa, pa, sb, pb, dir);
        for (const auto& p : pts)
            if ((p.v - w.v).squaredNorm() < 1e-20) return false;
        pts.push_back(w);
        return true;
    };

    const std::array<Eigen::Vector3d, 6> axes = {
        Eigen::Vector3d::UnitX(),  -Eigen::Vector3d::UnitX(), Eigen::Vector3d::UnitY(),
        -Eigen::Vector3d::UnitY(), Eigen::Vector3d::UnitZ(),  -Eigen::Vector3d::UnitZ()};

    for (const auto& dir : axes) {
        if (pts.size() >= 2) break;
        add_unique(dir);
    }
    if (pts.size() < 2) return false;

    if (pts.size() == 2) {
        const Eigen::Vector3d seg = (pts[1].v - pts[0].v).normalized();
        for (const auto& axis : axes) {
            const Eigen::Vector3d perp = seg.cross(axis);
            if (perp.squaredNorm() < 1e-12) continue;
            if (add_unique(perp.normalized()) && pts.size() >= 3) break;
            if (add_unique(-perp.normalized()) && pts.size() >= 3) break;
        }
    }
    if (pts.size() < 3) return false;

    const Eigen::Vector3d n =
        (pts[1].v - pts[0].v).cross(pts[2].v - pts[0].v);
    if (n.squaredNorm() < 1e-20) return false;
    if (!add_unique(n.normalized())) add_unique(-n.normalized());
    if (pts.size() < 4) return false;

    // Volume check; EPA needs a non-degenerate start.
    const double vol = (pts[1].v - pts[0].v)
                           .cross(pts[2].v - pts[0].v)
                           .dot(pts[3].v - pts[0].v);
    return std::abs(vol) > 1e-18;
}

inline EpaResult epa_penetration(const ConvexShape& sa, const Pose& pa, const ConvexShape& sb,
                                 const Pose& pb, std::vector<SupportPoint> seed) {
    EpaResult out;
    if (seed.size() < 4 && !build_initial_tetrahedron(sa, pa, sb, pb, seed)) {
        // Flat difference: shapes touch with ~zero interpenetration.
        out.depth = 0.0;
        if (!seed.empty()) {
            out.point_a = seed[0].a;
            out.point_b = seed[0].b;
        }
        return out;
    }

    std::vector<SupportPoint> verts(seed.begin(), seed.begin() + 4);
    struct Face {
        std::array<int, 3> idx;
        Eigen::Vector3d normal;  // outward
        double dist;             // distance of face plane from origin (>= 0)
        bool alive = true;
    };
    std::vector<Face> faces;

    const auto make_face = [&](int i, int j, int k) {
        Face f;
        f.idx = {i, j, k};
        const Eigen::Vector3d &a = verts[i].v, &b = verts[j].v, &c = verts[k].v;
        Eigen::Vector3d n = (b - a).cross(c - a);
        const double nn = n.norm();
        if (nn < 1e-18) {
            f.normal = Eigen::Vector3d::Zero();
            f.dist = kInf;
            return f;
        }
        n /= nn;
        double d = n.dot(a);
        if (d < 0) {  // flip to outward orientation
            n = -n;
            d = -d;
            std::swap(f.idx[1], f.idx[2]);
        }
        f.normal = n;
        f.dist = d;
        return f;
    };

    // Ensure positive orientation of the seed tetrahedron.
    {
        const double vol = (verts[1].v - verts[0].v)
                               .cross(verts[2].v - verts[0].v)
                               .dot(verts[3].v - verts[0].v);
        if (vol < 0) std::swap(verts[1], verts[2]);
    }
    faces.push_back(make_face(0, 1, 2));
    faces.push_back(make_face(0, 3, 1));
    faces.push_back(make_face(0, 2, 3));
    faces.push_back(make_face(1, 3, 2));

    int best_face = -1;
    for (int iter = 0; iter < kIterationCap; ++iter) {
        best_face = -1;
        double best = kInf;
        for (int f = 0; f < static_cast<int>(faces.size()); ++f) {
            if (faces[f].alive && faces[f].dist < best) {
                best = faces[f].dist;
                best_face = f;
            }
        }
        if (best_face < 0) break;

        const Face face = faces[best_face];
        const SupportPoint w = minkowski_support(sa, pa, sb, pb, face.normal);
        const double growth = face.normal.dot(w.v) - face.dist;
        if (growth < 1e-9) break;  // converged

        // Remove faces visible from w, collect horizon edges.
        std::vector<std::pair<int, int>> horizon;
        for (auto& f : faces) {
            if (!f.alive) continue;
            if (f.normal.dot(w.v - verts[f.idx[0]].v) > 1e-12) {
                f.alive = false;
                const std::array<std::pair<int, int>, 3> edges = {
                    std::make_pair(f.idx[0], f.idx[1]), std::make_pair(f.idx[1], f.idx[2]),
                    std::make_pair(f.idx[2], f.idx[0])};
                for (const auto& e : edges) {
                    bool removed = false;
                    for (std::size_t h = 0; h < horizon.size(); ++h) {
                        if (horizon[h].first == e.second && horizon[h].second == e.first) {
                            horizon.erase(horizon.begin() + static_cast<long>(h));
                            removed = true;
                            break;
                        }
                    }
                    if (!removed) horizon.push_back(e);
                }
            }
        }
        if (horizon.empty()) break;
        verts.push_back(w);
        const int wi = static_cast<int>(verts.size()) - 1;
        for (const auto& e : horizon) faces.push_back(make_face(e.first, e.second, wi));
    }

    if (best_face < 0) {
        out.depth = 0.0;
        return out;
    }
    const Face& face = faces[best_face];
    out.depth = face.dist;
    out.normal = face.normal;
    // Witnesses: barycentric projection of the origin onto the face plane.
    Eigen::Vector3d point;
    std::array<double, 3> bary;
    int feature;
    closest_on_triangle(verts[face.idx[0]].v, verts[face.idx[1]].v, verts[face.idx[2]].v, point,
                        bary, feature);
    // Use plane barycentrics even if the projection lies on an edge.
    out.point_a = bary[0] * verts[face.idx[0]].a + bary[1] * verts[face.idx[1]].a +
                  bary[2] * verts[face.idx[2]].a;
    out.point_b = bary[0] * verts[face.idx[0]].b + bary[1] * verts[face.idx[1]].b +
                  bary[2] * verts[face.idx[2]].b;
    return out;
}

}  // namespace gjk_detail

// Signed distance between two posed convex shapes: Euclidean separation when
// disjoint, negative maximum penetration extent when overlapping. Witness
// points come along for gradient and advancement bounds.
inline DistanceResult signed_distance(const ConvexShape& a, const Pose& pose_a,
                                      const ConvexShape& b, const Pose& pose_b = Pose{}) {
    using namespace gjk_detail;

    const double ra = a.kind == ConvexShape::Kind::Sphere ? a.radius : 0.0;
    const double rb = b.kind == ConvexShape::Kind::Sphere ? b.radius : 0.0;

    // Sphere-sphere in closed form.
    if (a.kind == ConvexShape::Kind::Sphere && b.kind == ConvexShape::Kind::Sphere) {
        const Eigen::Vector3d ca = pose_a.rotation * a.center + pose_a.translation;
        const Eigen::Vector3d cb = pose_b.rotation * b.center + pose_b.translation;
        const Eigen::Vector3d delta = ca - cb;
        const double dist = delta.norm();
        DistanceResult res;
        res.distance = dist - ra - rb;
        Eigen::Vector3d dir = dist > 1e-15 ? Eigen::Vector3d(delta / dist) : Eigen::Vector3d::UnitX();
        res.degenerate = dist <= 1e-15 || std::abs(res.distance) < 1e-9;
        res.witness_a = ca - ra * dir;
        res.witness_b = cb + rb * dir;
        return res;
    }

    GjkResult gjk = gjk_core_distance(a, pose_a, b, pose_b);
    DistanceResult res;
    if (!gjk.overlap && gjk.core_distance > 1e-12) {
        res.distance = gjk.core_distance - ra - rb;
        const Eigen::Vector3d dir = (gjk.point_a - gjk.point_b) / gjk.core_distance;
        res.witness_a = gjk.point_a - ra * dir;
        res.witness_b = gjk.point_b + rb * dir;
        res.degenerate = std::abs(res.distance) < 1e-9;
        return res;
    }

    // Cores overlap (or touch): expand for penetration depth.
    EpaResult epa = epa_penetration(a, pose_a, b, pose_b, std::move(gjk.simplex));
    res.distance = -(epa.depth + ra + rb);
    res.witness_a = epa.point_a - ra * epa.normal;
    res.witness_b = epa.point_b + rb * epa.normal;
    res.degenerate = std::abs(res.distance) < 1e-9;
    return res;
}

inline DistanceResult signed_distance(const RobotBody& robot, int part, const Pose& pose,
                                      const Environment& env, int obstacle) {
    return signed_distance(robot.parts.at(part).second, pose, env.obstacles.at(obstacle).second);
}

// d/dx of the part-obstacle distance through the configuration map, by
// central differences with per-coordinate step 1e-5 * max(1, |x_i|).
struct DistanceGradient {
    Vector gradient;
    double distance = 0.0;
    bool degenerate = false;
};

inline DistanceGradient distance_gradient(const Plant& plant, const RobotBody& robot, int part,
                                          const Environment& env, int obstacle, const Vector& state) {
    const auto d_of = [&](const Vector& x) {
        return signed_distance(robot, part, plant.configuration(x), env, obstacle).distance;
    };
    DistanceGradient out;
    const DistanceResult at_state = signed_distance(robot, part, plant.configuration(state), env, obstacle);
    out.distance = at_state.distance;
    out.degenerate = std::abs(at_state.distance) < 1e-9 && at_state.degenerate;
    out.gradient.resize(state.size());
    for (int i = 0; i < state.size(); ++i) {
        const double h = 1e-5 * std::max(1.0, std::abs(state[i]));
        Vector xp = state, xm = state;
        xp[i] += h;
        xm[i] -= h;
        out.gradient[i] = (d_of(xp) - d_of(xm)) / (2.0 * h);
    }
    return out;
}

struct SweptHit {
    int step = 0;      // interval index t (between states t and t+1); t for static hits
    int part = 0;
    int obstacle = 0;
    double lambda = 0.0;
};

struct SweptResult {
    bool collided = false;
    std::optional<SweptHit> first_hit;
    double min_distance = kInf;  // over all checked poses and pairs
};

inline Pose interpolate_pose(const Pose& p0, const Pose& p1, double lambda) {
    Pose out;
    out.translation = (1.0 - lambda) * p0.translation + lambda * p1.translation;
    out.rotation = p0.rotation.slerp(lambda, p1.rotation);
    return out;
}

// Conservative advancement over linearly interpolated poses: the advance is
// safe because witness points move at most
//   ||dp|| + (rotation angle) * circumradius
// per unit lambda. d_floor keeps the loop from stalling at close approach.
inline SweptResult swept_collides(const RobotBody& robot, const Environment& env,
                                  const std::vector<Pose>& poses, double margin = 0.0,
                                  double d_floor = 1e-4) {
    robot.validate();
    require(!poses.empty(), "swept_collides: needs at least one pose");
    require(margin >= 0.0, "swept_collides: margin must be nonnegative");
    SweptResult result;
    if (env.obstacles.empty()) return result;

    const int parts = static_cast<int>(robot.parts.size());
    const int obstacles = static_cast<int>(env.obstacles.size());

    std::vector<std::pair<Eigen::Vector3d, double>> part_bounds(parts);
    std::vector<double> part_circum(parts);
    for (int i = 0; i < parts; ++i) {
        part_bounds[i] = robot.parts[i].second.bounding_sphere();
        part_circum[i] = robot.parts[i].second.circumradius();
    }
    std::vector<std::pair<Eigen::Vector3d, double>> obstacle_bounds(obstacles);
    for (int j = 0; j < obstacles; ++j)
        obstacle_bounds[j] = env.obstacles[j].second.bounding_sphere();

    const auto check_pair_static = [&](const Pose& pose, int i, int j, int step) {
        const DistanceResult d = signed_distance(robot, i, pose, env, j);
        result.min_distance = std::min(result.min_distance, d.distance);
        if (d.distance <= 0.0 && !result.collided) {
            result.collided = true;
            result.first_hit = SweptHit{step, i, j, 0.0};
        }
        return d.distance;
    };

    // Static t = 0 check covers single-pose rollouts and penetrating starts.
    for (int i = 0; i < parts && !result.collided; ++i)
        for (int j = 0; j < obstacles && !result.collided; ++j) check_pair_static(poses[0], i, j, 0);
    if (result.collided) return result;

    for (std::size_t t = 0; t + 1 < poses.size() && !result.collided; ++t) {
        const Pose& p0 = poses[t];
        const Pose& p1 = poses[t + 1];
        const double translation = (p1.translation - p0.translation).norm();
        const double angle = p0.rotation.angularDistance(p1.rotation);

        for (int i = 0; i < parts && !result.collided; ++i) {
            const double speed_bound = translation + angle * part_circum[i];
            for (int j = 0; j < obstacles && !result.collided; ++j) {
                // Bounding-sphere prefilter: the pair cannot meet anywhere in
                // the interval if the swept ball misses the obstacle ball.
                const Eigen::Vector3d c0 = p0.rotation * part_bounds[i].first + p0.translation;
                const Eigen::Vector3d c1 = p1.rotation * part_bounds[i].first + p1.translation;
                const double reach = part_bounds[i].second + obstacle_bounds[j].second + margin;
                const Eigen::Vector3d oc = obstacle_bounds[j].first;
                const double seg_dist = [&] {
                    const Eigen::Vector3d ab = c1 - c0;
                    const double denom = ab.squaredNorm();
                    double s = denom > 0 ? (oc - c0).dot(ab) / denom : 0.0;
                    s = std::clamp(s, 0.0, 1.0);
                    return (c0 + s * ab - oc).norm();
                }();
                if (seg_dist > reach + 1e-9) continue;

                double lambda = 0.0;
                for (int iter = 0; iter < 100000; ++iter) {
                    const Pose pose = interpolate_pose(p0, p1, lambda);
                    const DistanceResult d = signed_distance(robot, i, pose, env, j);
                    result.min_distance = std::min(result.min_distance, d.distance);
                    if (d.distance <= 0.0) {
                        result.collided = true;
                        result.first_hit = SweptHit{static_cast<int>(t), i, j, lambda};
                        break;
                    }
                    if (speed_bound < 1e-12) break;  // pair is static over the interval
                    lambda += std::max(d.distance - margin, d_floor) / speed_bound;
                    if (lambda >= 1.0) break;
                }
            }
        }
    }
    return result;
}

}  // namespace cpais
