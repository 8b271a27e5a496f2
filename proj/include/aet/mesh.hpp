#ifndef AET_MESH_HPP
#define AET_MESH_HPP

#include "aet/common.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>

namespace aet {

/// Unstructured P1 triangulation of a disk centered at the origin.
///
/// Invariants (checked by validate()):
///  - every triangle has positive signed area (consistent CCW orientation)
///  - boundary nodes lie on |x| = radius to 1e-9
///  - conforming: each interior edge is shared by exactly two triangles,
///    each boundary edge by exactly one
struct TriangleMesh {
    std::vector<Eigen::Vector2d> nodes;
    std::vector<std::array<int, 3>> triangles;
    std::vector<int> boundary_nodes;                 // ordered CCW around the rim
    std::vector<std::array<int, 2>> boundary_edges;  // consecutive rim pairs
    double radius = 1.0;

    int n_nodes() const { return static_cast<int>(nodes.size()); }
    int n_triangles() const { return static_cast<int>(triangles.size()); }

    double signed_area(int t) const {
        const auto& tri = triangles[t];
        const Eigen::Vector2d& a = nodes[tri[0]];
        const Eigen::Vector2d& b = nodes[tri[1]];
        const Eigen::Vector2d& c = nodes[tri[2]];
        return 0.5 * ((b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y()));
    }

    double total_area() const {
        double s = 0;
        for (int t = 0; t < n_triangles(); ++t) s += signed_area(t);
        return s;
    }

    double min_angle_degrees() const {
        double worst = 180.0;
        for (const auto& tri : triangles) {
            for (int k = 0; k < 3; ++k) {
                const Eigen::Vector2d e1 = nodes[tri[(k + 1) % 3]] - nodes[tri[k]];
                const Eigen::Vector2d e2 = nodes[tri[(k + 2) % 3]] - nodes[tri[k]];
                const double cosv = e1.dot(e2) / (e1.norm() * e2.norm());
                const double ang = std::acos(std::clamp(cosv, -1.0, 1.0)) * 180.0 / std::numbers::pi;
                worst = std::min(worst, ang);
            }
        }
        return worst;
    }

    void validate() const {
        require(!nodes.empty() && !triangles.empty(), "mesh: empty");
        for (int t = 0; t < n_triangles(); ++t)
            require(signed_area(t) > 0, format_msg("mesh: nonpositive triangle area at index ", t));
        for (int b : boundary_nodes) {
            require(b >= 0 && b < n_nodes(), "mesh: boundary index out of range");
            require(std::abs(nodes[b].norm() - radius) <= 1e-9,
                    format_msg("mesh: boundary node ", b, " off the circle by ",
                               std::abs(nodes[b].norm() - radius)));
        }
        // Conformity: interior edges twice, boundary edges once.
        std::map<std::pair<int, int>, int> edge_count;
        for (const auto& tri : triangles) {
            for (int k = 0; k < 3; ++k) {
                int a = tri[k], b = tri[(k + 1) % 3];
                if (a > b) std::swap(a, b);
                edge_count[{a, b}]++;
            }
        }
        std::vector<char> is_boundary(n_nodes(), 0);
        for (int b : boundary_nodes) is_boundary[b] = 1;
        for (const auto& [edge, cnt] : edge_count) {
            require(cnt == 1 || cnt == 2, "mesh: edge shared by more than 2 triangles");
            if (cnt == 1)
                require(is_boundary[edge.first] && is_boundary[edge.second],
                        "mesh: interior edge missing a neighbor triangle");
        }
    }
};

namespace detail {

/// Triangulates the annulus between two concentric CCW node rings by merging
/// them in angle order. Produces near-Delaunay strips for ring layouts.
inline void triangulate_annulus(const std::vector<Eigen::Vector2d>& pts,
                                const std::vector<int>& inner, const std::vector<int>& outer,
                                std::vector<std::array<int, 3>>& out) {
    const auto angle_of = [&](int idx) {
        double a = std::atan2(pts[idx].y(), pts[idx].x());
        if (a < 0) a += 2 * std::numbers::pi;
        return a;
    };
    const int ni = static_cast<int>(inner.size());
    const int no = static_cast<int>(outer.size());
    // Cumulative angles so the walk wraps exactly once around each ring.
    const auto cum = [&](const std::vector<int>& ring, int k) {
        const int n = static_cast<int>(ring.size());
        return angle_of(ring[k % n]) + 2 * std::numbers::pi * (k / n);
    };
    int ci = 0, co = 0;
    // Align start: begin both walks near angle of inner[0].
    while (ci < ni || co < no) {
        const bool take_inner =
            (co == no) || (ci < ni && cum(inner, ci + 1) <= cum(outer, co + 1));
        if (take_inner) {
            out.push_back({inner[ci % ni], outer[co % no], inner[(ci + 1) % ni]});
            ++ci;
        } else {
            out.push_back({outer[co % no], outer[(co + 1) % no], inner[ci % ni]});
            ++co;
        }
    }
}

inline int ring_node_count(int ring, double scale) {
    return std::max(3, static_cast<int>(std::lround(6.0 * ring * scale)));
}

inline int total_node_count(int rings, double scale) {
    int n = 1;
    for (int j = 1; j <= rings; ++j) n += ring_node_count(j, scale);
    return n;
}

}  // namespace detail

/// Deterministic disk mesh: concentric polar rings merged into triangle
/// strips (the Delaunay triangulation of this layout up to ties), followed by
/// a few Laplacian smoothing passes on interior nodes.
///
/// Fails if the ring layout cannot land within 15% of target_nodes or the
/// resulting quality drops below a 20 degree minimum angle.
inline TriangleMesh generate_disk_mesh(double radius, int target_nodes) {
    require(radius > 0, "generate_disk_mesh: radius must be positive");
    require(target_nodes >= 4, "generate_disk_mesh: target_nodes must be >= 4");

    // Choose ring count and a per-ring density scale hitting the target.
    int best_rings = 1;
    double best_scale = 1.0;
    int best_err = std::numeric_limits<int>::max();
    const int rings_guess = std::max(1, static_cast<int>(std::lround(std::sqrt(target_nodes / 3.0))));
    for (int rings = std::max(1, rings_guess - 2); rings <= rings_guess + 2; ++rings) {
        double lo = 0.5, hi = 2.0;
        for (int it = 0; it < 60; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (detail::total_node_count(rings, mid) < target_nodes)
                lo = mid;
            else
                hi = mid;
        }
        for (double s : {lo, hi}) {
            const int err = std::abs(detail::total_node_count(rings, s) - target_nodes);
            // Prefer scales close to 1 (isotropic elements) on ties.
            if (err < best_err ||
                (err == best_err && std::abs(s - 1.0) < std::abs(best_scale - 1.0))) {
                best_err = err;
                best_rings = rings;
                best_scale = s;
            }
        }
    }
    const int achieved = detail::total_node_count(best_rings, best_scale);
    require(std::abs(achieved - target_nodes) <= 0.15 * target_nodes,
            format_msg("generate_disk_mesh: ring layout reaches ", achieved,
                       " nodes, more than 15% away from target ", target_nodes));

    TriangleMesh mesh;
    mesh.radius = radius;
    mesh.nodes.emplace_back(0.0, 0.0);
    std::vector<std::vector<int>> rings_idx(best_rings + 1);
    rings_idx[0] = {0};
    for (int j = 1; j <= best_rings; ++j) {
        const int nj = detail::ring_node_count(j, best_scale);
        const double r = radius * static_cast<double>(j) / best_rings;
        const double offset = (j % 2 == 1) ? 0.0 : std::numbers::pi / nj;  // stagger
        for (int k = 0; k < nj; ++k) {
            const double a = offset + 2 * std::numbers::pi * k / nj;
            rings_idx[j].push_back(static_cast<int>(mesh.nodes.size()));
            mesh.nodes.emplace_back(r * std::cos(a), r * std::sin(a));
        }
    }

    // Center fan, then annulus strips.
    if (best_rings >= 1) {
        const auto& r1 = rings_idx[1];
        const int n1 = static_cast<int>(r1.size());
        for (int k = 0; k < n1; ++k) mesh.triangles.push_back({0, r1[k], r1[(k + 1) % n1]});
        for (int j = 1; j < best_rings; ++j)
            detail::triangulate_annulus(mesh.nodes, rings_idx[j], rings_idx[j + 1], mesh.triangles);
    }

    mesh.boundary_nodes = rings_idx[best_rings];
    const int nb = static_cast<int>(mesh.boundary_nodes.size());
    for (int k = 0; k < nb; ++k)
        mesh.boundary_edges.push_back({mesh.boundary_nodes[k], mesh.boundary_nodes[(k + 1) % nb]});

    // Fix any CW triangles produced by the strip walk.
    for (auto& tri : mesh.triangles) {
        const Eigen::Vector2d& a = mesh.nodes[tri[0]];
        const Eigen::Vector2d& b = mesh.nodes[tri[1]];
        const Eigen::Vector2d& c = mesh.nodes[tri[2]];
        const double s2 = (b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y());
        if (s2 < 0) std::swap(tri[1], tri[2]);
    }

    // Laplacian smoothing of interior nodes (boundary ring stays on the circle).
    std::vector<char> on_boundary(mesh.n_nodes(), 0);
    for (int b : mesh.boundary_nodes) on_boundary[b] = 1;
    std::vector<std::vector<int>> neighbors(mesh.n_nodes());
    for (const auto& tri : mesh.triangles)
        for (int k = 0; k < 3; ++k) {
            neighbors[tri[k]].push_back(tri[(k + 1) % 3]);
            neighbors[tri[k]].push_back(tri[(k + 2) % 3]);
        }
    for (int pass = 0; pass < 3; ++pass) {
        std::vector<Eigen::Vector2d> fresh = mesh.nodes;
        for (int i = 0; i < mesh.n_nodes(); ++i) {
            if (on_boundary[i] || neighbors[i].empty()) continue;
            Eigen::Vector2d avg(0, 0);
            for (int nb_i : neighbors[i]) avg += mesh.nodes[nb_i];
            avg /= static_cast<double>(neighbors[i].size());
            fresh[i] = 0.5 * (mesh.nodes[i] + avg);
        }
        // Keep the pass only if no triangle flipped.
        std::swap(mesh.nodes, fresh);
        bool flipped = false;
        for (int t = 0; t < mesh.n_triangles() && !flipped; ++t)
            if (mesh.signed_area(t) <= 0) flipped = true;
        if (flipped) {
            std::swap(mesh.nodes, fresh);
            break;
        }
    }

    mesh.validate();
    const double q = mesh.min_angle_degrees();
    require(q >= 20.0, format_msg("generate_disk_mesh: min angle ", q, " below 20 degrees"));
    return mesh;
}

// ---------------------------------------------------------------------------
// Plain-text mesh / nodal-field files.
//   header:  "nodes N triangles T boundary B"
//   then N node coordinate lines, T triangle index lines, B boundary indices.
// ---------------------------------------------------------------------------

inline void save_mesh(const std::string& path, const TriangleMesh& mesh) {
    std::ofstream out(path);
    require(out.good(), "save_mesh: cannot open " + path);
    out << "nodes " << mesh.n_nodes() << " triangles " << mesh.n_triangles() << " boundary "
        << mesh.boundary_nodes.size() << "\n";
    for (const auto& p : mesh.nodes) out << fmt_double(p.x()) << " " << fmt_double(p.y()) << "\n";
    for (const auto& t : mesh.triangles) out << t[0] << " " << t[1] << " " << t[2] << "\n";
    for (int b : mesh.boundary_nodes) out << b << "\n";
    require(out.good(), "save_mesh: write failure on " + path);
}

inline TriangleMesh load_mesh(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "load_mesh: cannot open " + path);
    std::string kw_nodes, kw_tris, kw_bdry;
    int n = 0, t = 0, b = 0;
    in >> kw_nodes >> n >> kw_tris >> t >> kw_bdry >> b;
    require(kw_nodes == "nodes" && kw_tris == "triangles" && kw_bdry == "boundary",
            "load_mesh: bad header in " + path);
    TriangleMesh mesh;
    mesh.nodes.resize(n);
    for (auto& p : mesh.nodes) in >> p.x() >> p.y();
    mesh.triangles.resize(t);
    for (auto& tri : mesh.triangles) in >> tri[0] >> tri[1] >> tri[2];
    mesh.boundary_nodes.resize(b);
    for (auto& idx : mesh.boundary_nodes) in >> idx;
    require(!in.fail(), "load_mesh: truncated file " + path);
    for (int k = 0; k < b; ++k)
        mesh.boundary_edges.push_back({mesh.boundary_nodes[k], mesh.boundary_nodes[(k + 1) % b]});
    double rad = 0;
    for (int idx : mesh.boundary_nodes) rad = std::max(rad, mesh.nodes[idx].norm());
    mesh.radius = rad;
    mesh.validate();
    return mesh;
}

/// One value per node, same ordering as the mesh file.
inline void save_field(const std::string& path, const Vec& field) {
    std::ofstream out(path);
    require(out.good(), "save_field: cannot open " + path);
    for (Eigen::Index i = 0; i < field.size(); ++i) out << fmt_double(field[i]) << "\n";
    require(out.good(), "save_field: write failure on " + path);
}

inline Vec load_field(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "load_field: cannot open " + path);
    std::vector<double> vals;
    double v;
    while (in >> v) vals.push_back(v);
    require(!vals.empty(), "load_field: no values in " + path);
    return Eigen::Map<Vec>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

}  // namespace aet

#endif
