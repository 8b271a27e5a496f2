#ifndef AET_FEM_HPP
#define AET_FEM_HPP

#include "aet/mesh.hpp"

#include <Eigen/SparseCholesky>

#include <memory>

namespace aet {

/// Per-triangle geometry for P1 elements: area and constant basis gradients.
struct TriGeometry {
    double area;
    Eigen::Vector2d grad[3];  // grad of the hat function at each local vertex
};

inline TriGeometry tri_geometry(const TriangleMesh& mesh, int t) {
    const auto& tri = mesh.triangles[t];
    const Eigen::Vector2d& p0 = mesh.nodes[tri[0]];
    const Eigen::Vector2d& p1 = mesh.nodes[tri[1]];
    const Eigen::Vector2d& p2 = mesh.nodes[tri[2]];
    TriGeometry g;
    const double twoA = (p1.x() - p0.x()) * (p2.y() - p0.y()) - (p2.x() - p0.x()) * (p1.y() - p0.y());
    g.area = 0.5 * twoA;
    require(g.area > 0, "tri_geometry: nonpositive area");
    const double b[3] = {p1.y() - p2.y(), p2.y() - p0.y(), p0.y() - p1.y()};
    const double c[3] = {p2.x() - p1.x(), p0.x() - p2.x(), p1.x() - p0.x()};
    for (int k = 0; k < 3; ++k) g.grad[k] = Eigen::Vector2d(b[k], c[k]) / twoA;
    return g;
}

/// Per-triangle constant gradient of a P1 nodal field.
inline Eigen::Vector2d tri_gradient(const TriangleMesh& mesh, const TriGeometry& g, int t,
                                    const Vec& u) {
    const auto& tri = mesh.triangles[t];
    return u[tri[0]] * g.grad[0] + u[tri[1]] * g.grad[1] + u[tri[2]] * g.grad[2];
}

inline void check_symmetric(const SpMat& A, double rel_tol = 1e-12) {
    SpMat diff = SpMat(A.transpose()) - A;
    const double nrm = A.norm();
    require(diff.norm() <= rel_tol * std::max(nrm, 1.0), "matrix not symmetric");
}

// ---------------------------------------------------------------------------
// Assembly. Coefficients are P1 nodal fields; all element integrals of
// products of up to three linear factors are exact:
//   int phi_i phi_j          = A/12 (1 + delta_ij)
//   int phi_k phi_i phi_j    = A/60 * {6 if i=j=k, 2 if exactly two equal, 1 else}
// ---------------------------------------------------------------------------

/// Mass matrix, optionally weighted by a strictly positive P1 field:
/// (M_w)_ij = int w phi_i phi_j dx. With w absent this is the plain mass matrix.
inline SpMat assemble_mass(const TriangleMesh& mesh, const Vec* weight = nullptr) {
    const int n = mesh.n_nodes();
    if (weight) {
        require(weight->size() == n, "assemble_mass: weight size mismatch");
        for (int i = 0; i < n; ++i)
            require((*weight)[i] > 0,
                    format_msg("assemble_mass: nonpositive weight at node ", i));
    }
    std::vector<Triplet> trips;
    trips.reserve(mesh.n_triangles() * 9);
    for (int t = 0; t < mesh.n_triangles(); ++t) {
        const auto& tri = mesh.triangles[t];
        const double A = mesh.signed_area(t);
        if (!weight) {
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b)
                    trips.emplace_back(tri[a], tri[b], A / 12.0 * (a == b ? 2.0 : 1.0));
        } else {
            const double w0 = (*weight)[tri[0]], w1 = (*weight)[tri[1]], w2 = (*weight)[tri[2]];
            const double wsum = w0 + w1 + w2;
            const double w[3] = {w0, w1, w2};
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b) {
                    // sum_k w_k int phi_k phi_a phi_b
                    double v;
                    if (a == b)
                        v = A / 30.0 * (wsum + 2.0 * w[a]);
                    else
                        v = A / 60.0 * (wsum + w[a] + w[b]);
                    trips.emplace_back(tri[a], tri[b], v);
                }
        }
    }
    SpMat M(n, n);
    M.setFromTriplets(trips.begin(), trips.end());
    return M;
}

/// Mass matrix with a piecewise-constant (per-triangle) weight; used for
/// M_u with weight |grad u|^2.
inline SpMat assemble_mass_p0(const TriangleMesh& mesh, const Vec& tri_weight) {
    const int n = mesh.n_nodes();
    require(tri_weight.size() == mesh.n_triangles(), "assemble_mass_p0: weight size mismatch");
    std::vector<Triplet> trips;
    trips.reserve(mesh.n_triangles() * 9);
    for (int t = 0; t < mesh.n_triangles(); ++t) {
        const auto& tri = mesh.triangles[t];
        const double wA = tri_weight[t] * mesh.signed_area(t);
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b)
                trips.emplace_back(tri[a], tri[b], wA / 12.0 * (a == b ? 2.0 : 1.0));
    }
    SpMat M(n, n);
    M.setFromTriplets(trips.begin(), trips.end());
    return M;
}

/// Weighted stiffness (K_c)_ij = int c grad phi_i . grad phi_j dx with a
/// strictly positive P1 coefficient. Row sums vanish (constants in nullspace).
inline SpMat assemble_stiffness(const TriangleMesh& mesh, const Vec& coeff) {
    const int n = mesh.n_nodes();
    require(coeff.size() == n, "assemble_stiffness: coeff size mismatch");
    for (int i = 0; i < n; ++i)
        require(coeff[i] > 0, format_msg("assemble_stiffness: nonpositive coefficient at node ", i));
    std::vector<Triplet> trips;
    trips.reserve(mesh.n_triangles() * 9);
    for (int t = 0; t < mesh.n_triangles(); ++t) {
        const auto& tri = mesh.triangles[t];
        const TriGeometry g = tri_geometry(mesh, t);
        const double cbar = (coeff[tri[0]] + coeff[tri[1]] + coeff[tri[2]]) / 3.0;
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b)
                trips.emplace_back(tri[a], tri[b], cbar * g.area * g.grad[a].dot(g.grad[b]));
    }
    SpMat K(n, n);
    K.setFromTriplets(trips.begin(), trips.end());
    return K;
}

/// Stiffness from prescribed per-triangle coefficient integrals int_T c dx;
/// lets callers integrate products of P1 factors (e.g. sigma (1 + eta p))
/// exactly while reusing the same gradient terms.
inline SpMat assemble_stiffness_from_integrals(const TriangleMesh& mesh,
                                               const Vec& tri_integrals) {
    const int n = mesh.n_nodes();
    require(tri_integrals.size() == mesh.n_triangles(),
            "assemble_stiffness_from_integrals: size mismatch");
    std::vector<Triplet> trips;
    trips.reserve(mesh.n_triangles() * 9);
    for (int t = 0; t < mesh.n_triangles(); ++t) {
        const auto& tri = mesh.triangles[t];
        const TriGeometry g = tri_geometry(mesh, t);
        const double ci = tri_integrals[t];
        require(ci > 0, format_msg("assemble_stiffness_from_integrals: nonpositive coefficient "
                                   "integral on triangle ",
                                   t));
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b)
                trips.emplace_back(tri[a], tri[b], ci * g.grad[a].dot(g.grad[b]));
    }
    SpMat K(n, n);
    K.setFromTriplets(trips.begin(), trips.end());
    return K;
}

/// Boundary mass vector b_i = int_dOmega phi_i ds (P1 on boundary edges).
inline Vec boundary_mass_vector(const TriangleMesh& mesh) {
    Vec b = Vec::Zero(mesh.n_nodes());
    for (const auto& e : mesh.boundary_edges) {
        const double len = (mesh.nodes[e[0]] - mesh.nodes[e[1]]).norm();
        b[e[0]] += 0.5 * len;
        b[e[1]] += 0.5 * len;
    }
    return b;
}

/// Exact boundary inner product int_dOmega f g ds for P1 traces given as
/// full-length nodal fields (values off the boundary are ignored).
inline double boundary_inner(const TriangleMesh& mesh, const Vec& f, const Vec& g) {
    double s = 0;
    for (const auto& e : mesh.boundary_edges) {
        const double len = (mesh.nodes[e[0]] - mesh.nodes[e[1]]).norm();
        const double fa = f[e[0]], fb = f[e[1]], ga = g[e[0]], gb = g[e[1]];
        s += len / 6.0 * (2 * fa * ga + 2 * fb * gb + fa * gb + fb * ga);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Sparse Cholesky with optional diagonal shift: A + shift*I = L L^T.
// Wraps Eigen's SimplicialLLT; the permuted factor is exposed through
// multiply/solve operations so norm identities like |L^T v|^2 = v^T A v hold.
// ---------------------------------------------------------------------------

class CholeskyFactor {
public:
    CholeskyFactor() = default;

    CholeskyFactor(const SpMat& A, double shift) { compute(A, shift); }

    void compute(const SpMat& A, double shift) {
        require(A.rows() == A.cols(), "cholesky_factor: matrix not square");
        SpMat As = A;
        if (shift != 0.0) {
            SpMat I(A.rows(), A.cols());
            I.setIdentity();
            As = A + shift * I;
        }
        llt_ = std::make_unique<Eigen::SimplicialLLT<SpMat>>();
        llt_->compute(As);
        require(llt_->info() == Eigen::Success,
                "cholesky_factor: factorization failed (matrix not positive definite; "
                "try a larger shift)");
        // Roundoff lets LLT slip through on singular PSD matrices; a pivot
        // ratio this small means a numerically zero eigenvalue.
        const Vec pivots = llt_->matrixL().nestedExpression().diagonal();
        require(pivots.minCoeff() > 1e-7 * pivots.maxCoeff(),
                "cholesky_factor: numerically singular matrix (pivot ratio below 1e-7); "
                "try a larger shift");
        n_ = static_cast<int>(A.rows());
        shift_ = shift;
    }

    int size() const { return n_; }
    double shift() const { return shift_; }

    /// (A + shift I)^{-1} v
    Vec solve(const Vec& v) const { return llt_->solve(v); }

    /// L v with the permutation folded in, so mult then mult_t reproduces A+shift*I.
    Vec mult_lower(const Vec& v) const {
        return llt_->permutationPinv() * Vec(llt_->matrixL() * v);
    }

    /// L^T v; |mult_lower_t(v)|_2^2 == v^T (A + shift I) v.
    Vec mult_lower_t(const Vec& v) const {
        return Vec(llt_->matrixU() * Vec(llt_->permutationP() * v));
    }

    /// Solve L y = v.
    Vec solve_lower(const Vec& v) const {
        return Vec(llt_->matrixL().solve(Vec(llt_->permutationP() * v)));
    }

    /// Solve L^T y = v.
    Vec solve_lower_t(const Vec& v) const {
        return llt_->permutationPinv() * Vec(llt_->matrixU().solve(v));
    }

private:
    std::unique_ptr<Eigen::SimplicialLLT<SpMat>> llt_;
    int n_ = 0;
    double shift_ = 0.0;
};

inline CholeskyFactor cholesky_factor(const SpMat& A, double shift = 0.0) {
    return CholeskyFactor(A, shift);
}

/// Point evaluation of P1 nodal fields: triangles are binned into a coarse
/// uniform grid for lookup, evaluation is barycentric. Points outside the
/// triangulation fall back to the nearest node value.
class FieldSampler {
public:
    explicit FieldSampler(const TriangleMesh& mesh) : mesh_(&mesh) {
        lo_ = mesh.nodes.front();
        hi_ = lo_;
        for (const auto& p : mesh.nodes) {
            lo_ = lo_.cwiseMin(p);
            hi_ = hi_.cwiseMax(p);
        }
        nbins_ = std::max(4, static_cast<int>(std::sqrt(mesh.n_triangles() / 2.0)));
        bins_.resize(static_cast<std::size_t>(nbins_) * nbins_);
        for (int t = 0; t < mesh.n_triangles(); ++t) {
            Eigen::Vector2d tlo = mesh.nodes[mesh.triangles[t][0]];
            Eigen::Vector2d thi = tlo;
            for (int k = 1; k < 3; ++k) {
                tlo = tlo.cwiseMin(mesh.nodes[mesh.triangles[t][k]]);
                thi = thi.cwiseMax(mesh.nodes[mesh.triangles[t][k]]);
            }
            const auto [i0, j0] = bin_of(tlo.x(), tlo.y());
            const auto [i1, j1] = bin_of(thi.x(), thi.y());
            for (int i = i0; i <= i1; ++i)
                for (int j = j0; j <= j1; ++j)
                    bins_[static_cast<std::size_t>(i) * nbins_ + j].push_back(t);
        }
    }

    double eval(const Vec& field, double x, double y) const {
        const auto [bi, bj] = bin_of(x, y);
        for (int t : bins_[static_cast<std::size_t>(bi) * nbins_ + bj]) {
            const auto& tri = mesh_->triangles[t];
            const Eigen::Vector2d& a = mesh_->nodes[tri[0]];
            const Eigen::Vector2d& b = mesh_->nodes[tri[1]];
            const Eigen::Vector2d& c = mesh_->nodes[tri[2]];
            const double det = (b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y());
            const double l1 = ((x - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (y - a.y())) / det;
            const double l2 = ((b.x() - a.x()) * (y - a.y()) - (x - a.x()) * (b.y() - a.y())) / det;
            const double l0 = 1.0 - l1 - l2;
            const double tol = -1e-12;
            if (l0 >= tol && l1 >= tol && l2 >= tol)
                return l0 * field[tri[0]] + l1 * field[tri[1]] + l2 * field[tri[2]];
        }
        int best = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (int i = 0; i < mesh_->n_nodes(); ++i) {
            const double d = (mesh_->nodes[i] - Eigen::Vector2d(x, y)).squaredNorm();
            if (d < bd) {
                bd = d;
                best = i;
            }
        }
        return field[best];
    }

private:
    std::pair<int, int> bin_of(double x, double y) const {
        const auto clampi = [&](double v, double lo, double hi) {
            return std::clamp(static_cast<int>((v - lo) / (hi - lo) * nbins_), 0, nbins_ - 1);
        };
        return {clampi(x, lo_.x(), hi_.x()), clampi(y, lo_.y(), hi_.y())};
    }

    const TriangleMesh* mesh_;
    Eigen::Vector2d lo_, hi_;
    int nbins_;
    std::vector<std::vector<int>> bins_;
};

/// Lumped nodal areas (row sums of the mass matrix); handy for means over
/// node subsets and quick integrals of nodal quantities.
inline Vec lumped_mass(const TriangleMesh& mesh) {
    Vec m = Vec::Zero(mesh.n_nodes());
    for (int t = 0; t < mesh.n_triangles(); ++t) {
        const double A = mesh.signed_area(t);
        for (int k = 0; k < 3; ++k) m[mesh.triangles[t][k]] += A / 3.0;
    }
    return m;
}

}  // namespace aet

#endif
