#ifndef AET_RECON_SIGMA_HPP
#define AET_RECON_SIGMA_HPP

#include "aet/electrostatics.hpp"

namespace aet {

struct SigmaReconParams {
    double gamma_tv = 1e-3;   // TV weight in the objective
    double tau = 1e-4;        // smoothing |.| ~ sqrt(|.|^2 + tau^2)
    double eps_shift = 1e-8;  // Cholesky shift for K_w0
    int outer_iters = 20;
    double cg_tol = 1e-8;
    int cg_max_iters = 60;
    double sigma_min = 0.1;
    double sigma_max = 10.0;
    double update_tol = 1e-4;  // stop when relative sigma update drops below
    int max_halvings = 20;

    void validate() const {
        require(gamma_tv >= 0 && tau > 0 && eps_shift > 0, "sigma recon: bad smoothing params");
        require(outer_iters >= 1 && cg_max_iters >= 1, "sigma recon: bad iteration counts");
        require(sigma_min > 0 && sigma_min < sigma_max, "sigma recon: bad sigma bounds");
    }
};

inline double smooth_abs(double v, double tau) { return std::sqrt(v * v + tau * tau); }

/// Discretized Frechet derivative of sigma -> H[sigma] at a fixed sigma and
/// boundary current:
///   W = M^{-1} (M_u - 2 W_{sigma,u} K_sigma^{-1} L_u),
/// applied matrix-free; the inner K_sigma solve uses the zero-boundary-mean
/// gauge. The adjoint swaps the sparse factors and reuses the same gauged
/// solve (it is self-adjoint on compatible loads).
class LinearizedOperator {
public:
    LinearizedOperator(const TriangleMesh& mesh, const Vec& sigma, const BoundaryCurrent& f,
                       const CholeskyFactor& mass_chol)
        : mesh_(&mesh), mass_chol_(&mass_chol), solver_(mesh) {
        solver_.factorize(sigma);
        potential_ = solver_.solve(f);
        const int nt = mesh.n_triangles();
        Vec gradsq(nt);
        std::vector<Triplet> wtrips, ltrips;
        wtrips.reserve(nt * 9);
        ltrips.reserve(nt * 9);
        for (int t = 0; t < nt; ++t) {
            const TriGeometry g = tri_geometry(mesh, t);
            const auto& tri = mesh.triangles[t];
            const Eigen::Vector2d gu = tri_gradient(mesh, g, t, potential_.u);
            gradsq[t] = gu.squaredNorm();
            const double ssum = sigma[tri[0]] + sigma[tri[1]] + sigma[tri[2]];
            for (int a = 0; a < 3; ++a) {
                const double gdot_a = gu.dot(g.grad[a]);
                // (L_u)_ij = int phi_j grad u . grad phi_i
                for (int b = 0; b < 3; ++b) {
                    ltrips.emplace_back(tri[a], tri[b], gdot_a * g.area / 3.0);
                    // (W_su)_ij = int phi_i sigma grad u . grad phi_j
                    const double int_phis = g.area / 12.0 * (ssum + sigma[tri[a]]);
                    wtrips.emplace_back(tri[a], tri[b], int_phis * gu.dot(g.grad[b]));
                }
            }
        }
        const int n = mesh.n_nodes();
        W_su_.resize(n, n);
        W_su_.setFromTriplets(wtrips.begin(), wtrips.end());
        L_u_.resize(n, n);
        L_u_.setFromTriplets(ltrips.begin(), ltrips.end());
        M_u_ = assemble_mass_p0(mesh, gradsq);
        gradsq_ = gradsq;
    }

    const PotentialSolution& potential() const { return potential_; }
    const Vec& triangle_gradsq() const { return gradsq_; }

    /// kappa -> discretized H'[sigma, kappa].
    Vec apply(const Vec& kappa) const {
        const Vec inner = solver_.solve_load(Vec(-(L_u_ * kappa))).u;  // u'[sigma, kappa]
        return mass_chol_->solve(Vec(M_u_ * kappa + 2.0 * (W_su_ * inner)));
    }

    /// Adjoint W^T y.
    Vec apply_transpose(const Vec& y) const {
        const Vec my = mass_chol_->solve(y);
        const Vec inner = solver_.solve_load(Vec(W_su_.transpose() * my)).u;
        return M_u_ * my - 2.0 * (L_u_.transpose() * inner);
    }

private:
    const TriangleMesh* mesh_;
    const CholeskyFactor* mass_chol_;
    NeumannSolver solver_;
    PotentialSolution potential_;
    SpMat W_su_, L_u_, M_u_;
    Vec gradsq_;
};

inline Vec apply_frechet(const LinearizedOperator& linop, const Vec& kappa) {
    return linop.apply(kappa);
}

/// One fidelity term of the linearized problem: operator, weight mass matrix
/// and weighted residual at the current sigma.
struct FidelityTerm {
    std::unique_ptr<LinearizedOperator> op;
    SpMat M_w;
    Vec z_sigma;  // z - H[sigma]
};

/// Solves the preconditioned linearized problem
///   L0^{-1} (sum_d W_d^T M_w,d W_d) L0^{-T} ktilde = L0^{-1} sum_d W_d^T M_w,d z_sigma,d
/// by conjugate gradients (gamma set to zero inside the system; TV enters
/// through the preconditioner), and returns kappa = L0^{-T} ktilde.
inline Vec linearized_step(const std::vector<FidelityTerm>& terms, const CholeskyFactor& L0,
                           const SigmaReconParams& params, int* cg_iters_out = nullptr) {
    require(!terms.empty(), "linearized_step: no fidelity terms");
    const auto apply_A = [&](const Vec& kt) -> Vec {
        const Vec kappa = L0.solve_lower_t(kt);
        Vec acc = Vec::Zero(kappa.size());
        for (const auto& term : terms) {
            const Vec wk = term.op->apply(kappa);
            acc += term.op->apply_transpose(Vec(term.M_w * wk));
        }
        return L0.solve_lower(acc);
    };
    Vec rhs = Vec::Zero(terms.front().z_sigma.size());
    for (const auto& term : terms)
        rhs += term.op->apply_transpose(Vec(term.M_w * term.z_sigma));
    rhs = L0.solve_lower(rhs);

    const double rhs_norm = rhs.norm();
    Vec x = Vec::Zero(rhs.size());
    if (rhs_norm == 0.0) {
        if (cg_iters_out) *cg_iters_out = 0;
        return x;
    }
    Vec r = rhs;
    Vec p = r;
    double rr = r.squaredNorm();
    int it = 0;
    for (; it < params.cg_max_iters; ++it) {
        if (std::sqrt(rr) <= params.cg_tol * rhs_norm) break;
        const Vec Ap = apply_A(p);
        const double pAp = p.dot(Ap);
        require(pAp > 0, format_msg("linearized_step: CG breakdown at iteration ", it,
                                    " (p^T A p = ", pAp, ")"));
        const double alpha = rr / pAp;
        x += alpha * p;
        r -= alpha * Ap;
        const double rr_new = r.squaredNorm();
        p = r + (rr_new / rr) * p;
        rr = rr_new;
    }
    if (cg_iters_out) *cg_iters_out = it;
    return L0.solve_lower_t(x);
}

/// Smoothed L1-TV objective J(sigma) = sum_d int |H_d[sigma] - z_d| +
/// gamma int |grad sigma|, both absolute values tau-smoothed. Forward solves
/// are done fresh; used by the line search.
inline double sigma_objective(const TriangleMesh& mesh, const Vec& sigma,
                              const std::vector<std::pair<Vec, BoundaryCurrent>>& z_list,
                              const SigmaReconParams& params, const CholeskyFactor& mass_chol,
                              const Vec& lumped) {
    NeumannSolver solver(mesh);
    solver.factorize(sigma);
    double J = 0.0;
    for (const auto& [z, f] : z_list) {
        const PotentialSolution sol = solver.solve(f);
        const Vec H = power_density(mesh, sigma, sol.u, &mass_chol);
        for (int i = 0; i < mesh.n_nodes(); ++i)
            J += lumped[i] * smooth_abs(H[i] - z[i], params.tau);
    }
    for (int t = 0; t < mesh.n_triangles(); ++t) {
        const TriGeometry g = tri_geometry(mesh, t);
        const Eigen::Vector2d gs = tri_gradient(mesh, g, t, sigma);
        J += params.gamma_tv * g.area * smooth_abs(gs.norm(), params.tau);
    }
    return J;
}

struct SigmaIterationLog {
    int iteration;
    double objective;
    double step_size;
    int cg_iterations;
    double update_norm;  // relative sigma update
};

struct SigmaReconResult {
    Vec sigma;
    std::vector<SigmaIterationLog> log;
};

/// Iteratively reweighted linearized reconstruction of the conductivity from
/// one or more power densities. Each outer iteration refreshes the forward
/// state and weights, takes a preconditioned linearized step, and accepts the
/// update through a backtracking (halving) line search on the smoothed
/// objective; sigma is clamped to the configured box after each update.
inline SigmaReconResult reconstruct_conductivity(
    const TriangleMesh& mesh, const std::vector<std::pair<Vec, BoundaryCurrent>>& z_list,
    const SigmaReconParams& params, Vec initial_sigma = Vec()) {
    params.validate();
    require(!z_list.empty(), "reconstruct_conductivity: no data");
    const int n = mesh.n_nodes();
    for (const auto& [z, f] : z_list)
        require(z.size() == n && z.allFinite(), "reconstruct_conductivity: bad data field");

    const SpMat M = assemble_mass(mesh);
    const CholeskyFactor mass_chol(M, 0.0);
    const Vec lumped = lumped_mass(mesh);

    SigmaReconResult out;
    out.sigma = initial_sigma.size() == n ? initial_sigma : Vec(Vec::Constant(n, 1.0));
    double J = sigma_objective(mesh, out.sigma, z_list, params, mass_chol, lumped);

    for (int outer = 0; outer < params.outer_iters; ++outer) {
        // Fidelity terms at the current sigma.
        std::vector<FidelityTerm> terms;
        terms.reserve(z_list.size());
        try {
            for (const auto& [z, f] : z_list) {
                FidelityTerm term;
                term.op = std::make_unique<LinearizedOperator>(mesh, out.sigma, f, mass_chol);
                const Vec H = power_density(mesh, out.sigma, term.op->potential().u, &mass_chol);
                Vec w(n);
                for (int i = 0; i < n; ++i) w[i] = 1.0 / smooth_abs(H[i] - z[i], params.tau);
                term.M_w = assemble_mass(mesh, &w);
                term.z_sigma = z - H;
                terms.push_back(std::move(term));
            }
        } catch (const Error& e) {
            throw Error(format_msg("reconstruct_conductivity: forward solve failed at outer "
                                   "iteration ",
                                   outer, " (J = ", J, ", sigma in [", out.sigma.minCoeff(), ", ",
                                   out.sigma.maxCoeff(), "]): ", e.what()));
        }
        // TV weight w0 = 1/|grad sigma| (tau-smoothed), averaged onto nodes.
        Vec w0_node = Vec::Zero(n);
        Vec area_acc = Vec::Zero(n);
        for (int t = 0; t < mesh.n_triangles(); ++t) {
            const TriGeometry g = tri_geometry(mesh, t);
            const Eigen::Vector2d gs = tri_gradient(mesh, g, t, out.sigma);
            const double w0 = 1.0 / smooth_abs(gs.norm(), params.tau);
            for (int k = 0; k < 3; ++k) {
                w0_node[mesh.triangles[t][k]] += w0 * g.area;
                area_acc[mesh.triangles[t][k]] += g.area;
            }
        }
        w0_node.array() /= area_acc.array();
        const SpMat K_w0 = assemble_stiffness(mesh, w0_node);
        const CholeskyFactor L0(K_w0, params.eps_shift);

        int cg_iters = 0;
        const Vec kappa = linearized_step(terms, L0, params, &cg_iters);

        // Backtracking line search with box clamping.
        double step = 1.0;
        double J_new = J;
        Vec sigma_new = out.sigma;
        bool accepted = false;
        for (int half = 0; half <= params.max_halvings; ++half) {
            Vec cand = (out.sigma + step * kappa)
                           .cwiseMax(params.sigma_min)
                           .cwiseMin(params.sigma_max);
            double J_cand;
            try {
                J_cand = sigma_objective(mesh, cand, z_list, params, mass_chol, lumped);
            } catch (const Error&) {
                step *= 0.5;
                continue;
            }
            if (J_cand < J) {
                J_new = J_cand;
                sigma_new = std::move(cand);
                accepted = true;
                break;
            }
            step *= 0.5;
        }

        const double upd =
            accepted ? (sigma_new - out.sigma).norm() / std::max(out.sigma.norm(), 1e-300) : 0.0;
        out.log.push_back({outer, accepted ? J_new : J, accepted ? step : 0.0, cg_iters, upd});
        if (!accepted) break;  // no descent step found: converged
        out.sigma = std::move(sigma_new);
        J = J_new;
        if (upd < params.update_tol) break;
    }
    return out;
}

inline void save_sigma_log(const std::string& path, const SigmaReconResult& res) {
    std::ofstream out(path);
    require(out.good(), "save_sigma_log: cannot open " + path);
    out << "iteration,objective,step_size,cg_iterations,update_norm\n";
    for (const auto& row : res.log)
        out << row.iteration << "," << fmt_double(row.objective) << ","
            << fmt_double(row.step_size) << "," << row.cg_iterations << ","
            << fmt_double(row.update_norm) << "\n";
    require(out.good(), "save_sigma_log: write failure on " + path);
}

}  // namespace aet

#endif
