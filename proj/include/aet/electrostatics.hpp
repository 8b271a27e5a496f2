#ifndef AET_ELECTROSTATICS_HPP
#define AET_ELECTROSTATICS_HPP

#include "aet/fem.hpp"
#include "aet/wave.hpp"

#include <Eigen/SparseLU>

#include <functional>

namespace aet {

/// Current flux density on the boundary nodes (ordered as
/// mesh.boundary_nodes). Compatibility requires zero boundary mean.
struct BoundaryCurrent {
    std::string id;
    Vec values;  // size = boundary_nodes.size()
};

/// Spreads boundary-node values into a full-length nodal vector.
inline Vec expand_boundary(const TriangleMesh& mesh, const Vec& bvals) {
    require(bvals.size() == static_cast<Eigen::Index>(mesh.boundary_nodes.size()),
            "expand_boundary: size mismatch");
    Vec full = Vec::Zero(mesh.n_nodes());
    for (std::size_t k = 0; k < mesh.boundary_nodes.size(); ++k)
        full[mesh.boundary_nodes[k]] = bvals[k];
    return full;
}

inline double boundary_integral(const TriangleMesh& mesh, const Vec& full_field) {
    return boundary_inner(mesh, full_field, Vec::Ones(mesh.n_nodes()));
}

inline void check_zero_mean(const TriangleMesh& mesh, const BoundaryCurrent& f) {
    const Vec full = expand_boundary(mesh, f.values);
    const double mean = boundary_integral(mesh, full);
    const double scale = std::max(1.0, boundary_inner(mesh, full.cwiseAbs(), full.cwiseAbs()));
    require(std::abs(mean) <= 1e-10 * scale,
            format_msg("boundary current '", f.id, "' is not zero-mean: integral = ", mean));
}

/// Samples fn at the boundary nodes and projects out the boundary mean, so
/// the compatibility condition holds exactly in the edge quadrature.
inline BoundaryCurrent make_boundary_current(
    const TriangleMesh& mesh, const std::string& id,
    const std::function<double(double, double)>& fn) {
    BoundaryCurrent f;
    f.id = id;
    f.values.resize(static_cast<Eigen::Index>(mesh.boundary_nodes.size()));
    for (std::size_t k = 0; k < mesh.boundary_nodes.size(); ++k) {
        const auto& p = mesh.nodes[mesh.boundary_nodes[k]];
        f.values[static_cast<Eigen::Index>(k)] = fn(p.x(), p.y());
    }
    const Vec full = expand_boundary(mesh, f.values);
    const double perimeter = boundary_integral(mesh, Vec::Ones(mesh.n_nodes()));
    const double mean = boundary_integral(mesh, full) / perimeter;
    f.values.array() -= mean;
    check_zero_mean(mesh, f);
    return f;
}

/// Neumann load vector rhs_i = int_dOmega f phi_i ds.
inline Vec assemble_boundary_load(const TriangleMesh& mesh, const BoundaryCurrent& f) {
    const Vec full = expand_boundary(mesh, f.values);
    Vec rhs = Vec::Zero(mesh.n_nodes());
    for (const auto& e : mesh.boundary_edges) {
        const double len = (mesh.nodes[e[0]] - mesh.nodes[e[1]]).norm();
        rhs[e[0]] += len / 6.0 * (2.0 * full[e[0]] + full[e[1]]);
        rhs[e[1]] += len / 6.0 * (full[e[0]] + 2.0 * full[e[1]]);
    }
    return rhs;
}

struct PotentialSolution {
    Vec u;          // nodal potential, gauged to zero boundary mean
    Vec sigma;      // conductivity the solve used
    Vec g;          // boundary trace at boundary nodes
    double multiplier = 0.0;
};

/// FEM solver for -div(sigma grad u) = 0, sigma du/dnu = f, with the zero
/// boundary-mean gauge enforced by one Lagrange multiplier row (the boundary
/// mass vector). The augmented system is factorized with SparseLU; the
/// symbolic analysis is reused when sigma changes (perturbed solves
/// refactorize numerically only).
class NeumannSolver {
public:
    explicit NeumannSolver(const TriangleMesh& mesh, double sigma_floor = 1e-6)
        : mesh_(&mesh), sigma_floor_(sigma_floor), b_(boundary_mass_vector(mesh)) {}

    const TriangleMesh& mesh() const { return *mesh_; }
    const Vec& boundary_mass() const { return b_; }

    void factorize(const Vec& sigma) {
        const int n = mesh_->n_nodes();
        require(sigma.size() == n, "NeumannSolver: sigma size mismatch");
        for (int i = 0; i < n; ++i)
            require(sigma[i] >= sigma_floor_,
                    format_msg("NeumannSolver: sigma below positive floor at node ", i));
        factorize_matrix(assemble_stiffness(*mesh_, sigma), sigma);
    }

    /// Factorization with prescribed per-triangle coefficient integrals (the
    /// perturbed solves integrate sigma (1 + eta p) exactly).
    void factorize_with_integrals(const Vec& tri_integrals, const Vec& sigma_for_record) {
        factorize_matrix(assemble_stiffness_from_integrals(*mesh_, tri_integrals),
                         sigma_for_record);
    }

private:
    void factorize_matrix(const SpMat& K, const Vec& sigma) {
        const int n = mesh_->n_nodes();
        sigma_ = sigma;
        std::vector<Triplet> trips;
        trips.reserve(K.nonZeros() + 2 * mesh_->boundary_nodes.size());
        for (int col = 0; col < K.outerSize(); ++col)
            for (SpMat::InnerIterator it(K, col); it; ++it)
                trips.emplace_back(static_cast<int>(it.row()), col, it.value());
        for (int i = 0; i < n; ++i) {
            if (b_[i] == 0.0) continue;
            trips.emplace_back(i, n, b_[i]);
            trips.emplace_back(n, i, b_[i]);
        }
        SpMat A(n + 1, n + 1);
        A.setFromTriplets(trips.begin(), trips.end());
        if (!analyzed_) {
            lu_.analyzePattern(A);
            analyzed_ = true;
        }
        lu_.factorize(A);
        require(lu_.info() == Eigen::Success, "NeumannSolver: LU factorization failed");
        aug_ = std::move(A);
    }

public:
    bool is_factorized() const { return analyzed_; }
    const Vec& sigma() const { return sigma_; }

    /// Solves with rhs_i = int f phi_i ds for a compatible boundary current.
    PotentialSolution solve(const BoundaryCurrent& f) const {
        check_zero_mean(*mesh_, f);
        PotentialSolution sol = solve_load(assemble_boundary_load(*mesh_, f));
        return sol;
    }

    /// Solves the gauged system for an arbitrary compatible load vector
    /// (sum of entries ~ 0); used by the linearized-operator inner solves.
    PotentialSolution solve_load(const Vec& rhs) const {
        const int n = mesh_->n_nodes();
        require(rhs.size() == n, "NeumannSolver: rhs size mismatch");
        Vec rhs_aug = Vec::Zero(n + 1);
        rhs_aug.head(n) = rhs;
        const Vec x = lu_.solve(rhs_aug);
        require(lu_.info() == Eigen::Success, "NeumannSolver: solve failed");
        const double resid = (aug_ * x - rhs_aug).norm();
        const double scale = std::max(rhs_aug.norm(), 1e-300);
        require(resid <= 1e-10 * scale,
                format_msg("NeumannSolver: residual ", resid / scale, " above 1e-10"));
        PotentialSolution sol;
        sol.u = x.head(n);
        sol.sigma = sigma_;
        sol.multiplier = x[n];
        sol.g.resize(static_cast<Eigen::Index>(mesh_->boundary_nodes.size()));
        for (std::size_t k = 0; k < mesh_->boundary_nodes.size(); ++k)
            sol.g[static_cast<Eigen::Index>(k)] = sol.u[mesh_->boundary_nodes[k]];
        return sol;
    }

private:
    const TriangleMesh* mesh_;
    double sigma_floor_;
    Vec b_;
    Vec sigma_;
    SpMat aug_;
    Eigen::SparseLU<SpMat> lu_;
    bool analyzed_ = false;
};

/// One-shot convenience wrapper.
inline PotentialSolution solve_neumann(const TriangleMesh& mesh, const Vec& sigma,
                                       const BoundaryCurrent& f, double sigma_floor = 1e-6) {
    NeumannSolver solver(mesh, sigma_floor);
    solver.factorize(sigma);
    return solver.solve(f);
}

/// Power density H = sigma |grad u|^2, L2-projected onto the P1 nodal basis
/// through a mass-matrix solve. |grad u|^2 is constant per triangle and the
/// P1 sigma is integrated exactly, so the projection matches the linearized
/// operators built on the same quadrature.
inline Vec power_density(const TriangleMesh& mesh, const Vec& sigma, const Vec& u,
                         const CholeskyFactor* mass_chol = nullptr) {
    require(u.size() == mesh.n_nodes() && sigma.size() == mesh.n_nodes(),
            "power_density: size mismatch");
    Vec rhs = Vec::Zero(mesh.n_nodes());
    for (int t = 0; t < mesh.n_triangles(); ++t) {
        const TriGeometry g = tri_geometry(mesh, t);
        const auto& tri = mesh.triangles[t];
        const Eigen::Vector2d gu = tri_gradient(mesh, g, t, u);
        const double gradsq = gu.squaredNorm();
        const double ssum = sigma[tri[0]] + sigma[tri[1]] + sigma[tri[2]];
        // int_T sigma phi_k = A/12 (sum sigma + sigma_k)
        for (int k = 0; k < 3; ++k)
            rhs[tri[k]] += gradsq * g.area / 12.0 * (ssum + sigma[tri[k]]);
    }
    if (mass_chol) return mass_chol->solve(rhs);
    return CholeskyFactor(assemble_mass(mesh), 0.0).solve(rhs);
}

/// Time series I(t_i) for one (boundary current, wave source) pair.
struct PowerSignal {
    std::string current_id;
    int source_id = 0;
    double dt = 0.0;
    Vec values;
};

/// Exact boundary power signal: for each recorded time solves the perturbed
/// problem with sigma_* = sigma (1 + eta p) and evaluates
///   I(t_i) = -eta int p sigma grad u . grad u_* dx,
/// cross-checked against the boundary form int f (g_* - g) ds to 1e-6
/// relative (the two agree identically in the discrete weak form).
inline PowerSignal boundary_power_signal(const TriangleMesh& mesh, const Vec& sigma, double eta,
                                         const WaveRecord& wave, const BoundaryCurrent& f) {
    require(eta > 0, "boundary_power_signal: eta must be positive");
    require(wave.n_nodes() == mesh.n_nodes(), "boundary_power_signal: wave/mesh mismatch");

    NeumannSolver solver(mesh);
    solver.factorize(sigma);
    const PotentialSolution base = solver.solve(f);
    const Vec f_full = expand_boundary(mesh, f.values);
    const Vec g_full = expand_boundary(mesh, base.g);
    const double f_scale = std::sqrt(std::max(boundary_inner(mesh, f_full, f_full), 0.0));

    PowerSignal sig;
    sig.current_id = f.id;
    sig.source_id = wave.source_id;
    sig.dt = wave.dt;
    sig.values.resize(wave.steps() + 1);

    NeumannSolver perturbed(mesh);
    Vec p_row(mesh.n_nodes());
    Vec tri_int(mesh.n_triangles());
    Vec tri_int_sp(mesh.n_triangles());  // int_T sigma p, exact for P1 factors
    for (int i = 0; i <= wave.steps(); ++i) {
        p_row = wave.p.row(i).transpose();
        const Vec sigma_star = sigma.array() * (1.0 + eta * p_row.array());
        require(sigma_star.minCoeff() > 0,
                format_msg("boundary_power_signal: sigma_* <= 0 at t index ", i,
                           " (eta too large)"));
        // Perturbed stiffness integrates sigma (1 + eta p) exactly per
        // triangle: int sigma_* = A sigma_bar + eta A/12 (Sp Ss + sum sp).
        for (int t = 0; t < mesh.n_triangles(); ++t) {
            const auto& tri = mesh.triangles[t];
            const double A = mesh.signed_area(t);
            const double ssum = sigma[tri[0]] + sigma[tri[1]] + sigma[tri[2]];
            const double psum = p_row[tri[0]] + p_row[tri[1]] + p_row[tri[2]];
            const double spdot = sigma[tri[0]] * p_row[tri[0]] + sigma[tri[1]] * p_row[tri[1]] +
                                 sigma[tri[2]] * p_row[tri[2]];
            tri_int_sp[t] = A / 12.0 * (ssum * psum + spdot);
            tri_int[t] = A * ssum / 3.0 + eta * tri_int_sp[t];
        }
        perturbed.factorize_with_integrals(tri_int, sigma_star);
        const PotentialSolution pert = perturbed.solve(f);

        // Volume form -eta int p sigma grad u . grad u_* with the same exact
        // product quadrature, so the weak-form identity with the boundary
        // form holds identically in the discrete space.
        double I_exact = 0.0;
        for (int t = 0; t < mesh.n_triangles(); ++t) {
            const TriGeometry g = tri_geometry(mesh, t);
            const Eigen::Vector2d gu = tri_gradient(mesh, g, t, base.u);
            const Eigen::Vector2d gs = tri_gradient(mesh, g, t, pert.u);
            I_exact += gu.dot(gs) * tri_int_sp[t];
        }
        I_exact *= -eta;

        const Vec gstar_full = expand_boundary(mesh, pert.g);
        const double I_bdry = boundary_inner(mesh, f_full, Vec(gstar_full - g_full));
        const double g_scale = std::sqrt(std::max(boundary_inner(mesh, g_full, g_full), 0.0)) +
                               std::sqrt(std::max(boundary_inner(mesh, gstar_full, gstar_full), 0.0));
        const double tol = 1e-6 * std::abs(I_exact) + 1e-12 * f_scale * g_scale;
        require(std::abs(I_exact - I_bdry) <= tol,
                format_msg("boundary_power_signal: exact/boundary forms disagree at t index ", i,
                           ": ", I_exact, " vs ", I_bdry));
        sig.values[i] = I_exact;
    }
    return sig;
}

// CSV "t,I" with a comment header naming the boundary-current and source ids.
inline void save_power_signal(const std::string& path, const PowerSignal& sig) {
    std::ofstream out(path);
    require(out.good(), "save_power_signal: cannot open " + path);
    out << "# boundary_current=" << sig.current_id << " source=" << sig.source_id << "\n";
    out << "t,I\n";
    for (Eigen::Index i = 0; i < sig.values.size(); ++i)
        out << fmt_double(i * sig.dt) << "," << fmt_double(sig.values[i]) << "\n";
    require(out.good(), "save_power_signal: write failure on " + path);
}

inline PowerSignal load_power_signal(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "load_power_signal: cannot open " + path);
    std::string line;
    std::getline(in, line);
    PowerSignal sig;
    char ident[256] = {0};
    int src = 0;
    require(std::sscanf(line.c_str(), "# boundary_current=%255s source=%d", ident, &src) == 2,
            "load_power_signal: bad header in " + path);
    sig.current_id = ident;
    sig.source_id = src;
    std::getline(in, line);  // column names
    std::vector<double> ts, vs;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        double t, v;
        require(std::sscanf(line.c_str(), "%lf,%lf", &t, &v) == 2,
                "load_power_signal: bad row in " + path);
        ts.push_back(t);
        vs.push_back(v);
    }
    require(ts.size() >= 2, "load_power_signal: too few samples in " + path);
    sig.dt = ts[1] - ts[0];
    sig.values = Eigen::Map<Vec>(vs.data(), static_cast<Eigen::Index>(vs.size()));
    return sig;
}

}  // namespace aet

#endif
