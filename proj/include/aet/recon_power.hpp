#ifndef AET_RECON_POWER_HPP
#define AET_RECON_POWER_HPP

#include "aet/forward_op.hpp"

#include <Eigen/Eigenvalues>

#include <memory>

namespace aet {

struct TikhonovResult {
    Vec h;
    double beta = 0.0;
    double data_residual = 0.0;        // |K h - I|_2
    double reg_norm = 0.0;             // |L^T h|_2
    double normal_residual_rel = 0.0;  // |(K^T K + beta M) h - K^T I| / |K^T I|
    bool beta_optimal = false;
    int cg_iterations = 0;
};

namespace detail {

inline void finalize_result(TikhonovResult& r, const ForwardMatrix& K, const Vec& I,
                            const SpMat& M, const CholeskyFactor& mass_chol) {
    r.data_residual = (K.apply(r.h) - I).norm();
    r.reg_norm = mass_chol.mult_lower_t(r.h).norm();
    const Vec rhs = K.apply_transpose(I);
    const Vec resid = K.apply_transpose(K.apply(r.h)) + r.beta * (M * r.h) - rhs;
    r.normal_residual_rel = resid.norm() / std::max(rhs.norm(), 1e-300);
}

}  // namespace detail

/// Minimizer of 1/2 |K h - I|^2 + beta/2 |L^T h|^2 through the normal
/// equations (K^T K + beta M) h = K^T I, solved by conjugate gradients
/// preconditioned with beta M (mass solves via the Cholesky factor).
inline TikhonovResult tikhonov_solve(const ForwardMatrix& K, const Vec& I, double beta,
                                     const SpMat& M, const CholeskyFactor& mass_chol,
                                     double tol = 1e-10, int max_iters = 4000,
                                     const Vec* warm_start = nullptr) {
    require(beta > 0, "tikhonov_solve: beta must be positive");
    require(I.size() == K.n_rows(), "tikhonov_solve: signal length mismatch");
    require(M.rows() == K.n_cols(), "tikhonov_solve: mass size mismatch");

    const auto apply_A = [&](const Vec& x) -> Vec {
        return K.apply_transpose(K.apply(x)) + beta * (M * x);
    };
    const auto apply_Pinv = [&](const Vec& r) -> Vec { return mass_chol.solve(r) / beta; };

    const Vec b = K.apply_transpose(I);
    const double b_norm = b.norm();
    Vec x = warm_start ? *warm_start : Vec(Vec::Zero(K.n_cols()));
    if (b_norm == 0.0) {
        TikhonovResult r;
        r.h = Vec::Zero(K.n_cols());
        r.beta = beta;
        detail::finalize_result(r, K, I, M, mass_chol);
        return r;
    }

    Vec res = b - apply_A(x);
    Vec z = apply_Pinv(res);
    Vec p = z;
    double rz = res.dot(z);
    int it = 0;
    for (; it < max_iters; ++it) {
        if (res.norm() <= tol * b_norm) break;
        const Vec Ap = apply_A(p);
        const double alpha = rz / p.dot(Ap);
        x += alpha * p;
        res -= alpha * Ap;
        const Vec z_new = apply_Pinv(res);
        const double rz_new = res.dot(z_new);
        p = z_new + (rz_new / rz) * p;
        z = z_new;
        rz = rz_new;
    }
    require(res.norm() <= 1e-8 * b_norm,
            format_msg("tikhonov_solve: CG did not converge in ", max_iters,
                       " iterations; relative residual ", res.norm() / b_norm));
    TikhonovResult r;
    r.h = x;
    r.beta = beta;
    r.cg_iterations = it;
    detail::finalize_result(r, K, I, M, mass_chol);
    return r;
}

/// Spectral factorization of the whitened operator G = K L^{-T}, enabling
/// O(n) Tikhonov solves and error evaluations for any beta. Used to make the
/// optimal-beta search affordable; the grand-scale path stays iterative.
/// The smaller Gram matrix (G^T G or G G^T) is eigendecomposed.
class TikhonovSpectralCache {
public:
    TikhonovSpectralCache(const ForwardMatrix& K, const CholeskyFactor& mass_chol)
        : mass_chol_(&mass_chol) {
        const Eigen::Index r = K.n_rows(), n = K.n_cols();
        G_.resize(r, n);
        Vec row(n);
        for (Eigen::Index i = 0; i < r; ++i) {
            row = K.rows.row(i).transpose();
            G_.row(i) = mass_chol.solve_lower(row).transpose();  // G = K L^{-T}
        }
        dual_ = r < n;
        if (dual_) {
            const Mat gram = G_ * G_.transpose();
            Eigen::SelfAdjointEigenSolver<Mat> eig(gram);
            require(eig.info() == Eigen::Success, "spectral cache: eigendecomposition failed");
            lambda_ = eig.eigenvalues().cwiseMax(0.0);
            basis_ = eig.eigenvectors();
        } else {
            const Mat gram = G_.transpose() * G_;
            Eigen::SelfAdjointEigenSolver<Mat> eig(gram);
            require(eig.info() == Eigen::Success, "spectral cache: eigendecomposition failed");
            lambda_ = eig.eigenvalues().cwiseMax(0.0);
            basis_ = eig.eigenvectors();
        }
    }

    /// Prepared right-hand side / truth pair for repeated beta evaluations.
    struct Prepared {
        Vec coef;     // spectral coefficients of the data
        Vec truth;    // spectral data of the truth (primal: y* coords)
        double truth_norm2 = 0.0;
        bool dual = false;
    };

    Prepared prepare(const ForwardMatrix& K, const Vec& I, const Vec* h_true) const {
        Prepared p;
        p.dual = dual_;
        if (dual_) {
            p.coef = basis_.transpose() * I;
            if (h_true) {
                const Vec ystar = mass_chol_->mult_lower_t(*h_true);
                p.truth = basis_.transpose() * (G_ * ystar);
                p.truth_norm2 = ystar.squaredNorm();
            }
        } else {
            p.coef = basis_.transpose() * (G_.transpose() * I);
            if (h_true) p.truth = basis_.transpose() * mass_chol_->mult_lower_t(*h_true);
        }
        (void)K;
        return p;
    }

    /// |h_beta - h_true|_M as a function of beta, in O(#eigenvalues).
    double error_M(const Prepared& p, double beta) const {
        if (dual_) {
            double val = p.truth_norm2;
            for (Eigen::Index i = 0; i < lambda_.size(); ++i) {
                const double d = p.coef[i] / (lambda_[i] + beta);
                val += d * d * lambda_[i] - 2.0 * d * p.truth[i];
            }
            return std::sqrt(std::max(val, 0.0));
        }
        double val = 0.0;
        for (Eigen::Index i = 0; i < lambda_.size(); ++i) {
            const double y = p.coef[i] / (lambda_[i] + beta);
            val += (y - p.truth[i]) * (y - p.truth[i]);
        }
        return std::sqrt(val);
    }

    Vec solve(const Vec& I, double beta) const {
        require(beta > 0, "spectral solve: beta must be positive");
        if (dual_) {
            Vec d = basis_.transpose() * I;
            d.array() /= (lambda_.array() + beta);
            const Vec y = G_.transpose() * (basis_ * d);
            return mass_chol_->solve_lower_t(y);
        }
        Vec d = basis_.transpose() * (G_.transpose() * I);
        d.array() /= (lambda_.array() + beta);
        const Vec y = basis_ * d;
        return mass_chol_->solve_lower_t(y);
    }

private:
    const CholeskyFactor* mass_chol_;
    Mat G_;
    Mat basis_;   // eigenvectors of the chosen Gram matrix
    Vec lambda_;  // eigenvalues (clamped at 0)
    bool dual_ = false;
};

struct BetaSearchOptions {
    double log10_min = -8.0;
    double log10_max = 2.0;
    double bracket_factor = 1.1;  // stop when the beta bracket is below this factor
    /// Build a spectral cache when min(rows, cols) is at most this; beyond it
    /// the search falls back to warm-started preconditioned CG solves.
    Eigen::Index spectral_cap = 6000;
};

struct BetaSearchResult {
    double beta_star = 0.0;
    TikhonovResult result;
    bool hit_lower_bound = false;
    int evaluations = 0;
};

/// Oracle protocol: beta* minimizes |h_beta - h_true|_M via golden-section
/// search on log10(beta) over [log10_min, log10_max]; terminates when the
/// bracket narrows below bracket_factor or collapses onto the lower bound.
inline BetaSearchResult optimal_beta_search(const ForwardMatrix& K, const Vec& I,
                                            const Vec& h_true, const SpMat& M,
                                            const CholeskyFactor& mass_chol,
                                            const BetaSearchOptions& opts = {},
                                            const TikhonovSpectralCache* cache = nullptr) {
    require(h_true.size() == K.n_cols(), "optimal_beta_search: h_true size mismatch");
    std::unique_ptr<TikhonovSpectralCache> owned;
    const TikhonovSpectralCache* spec = cache;
    if (!spec && std::min(K.n_rows(), K.n_cols()) <= opts.spectral_cap) {
        owned = std::make_unique<TikhonovSpectralCache>(K, mass_chol);
        spec = owned.get();
    }
    TikhonovSpectralCache::Prepared prep;
    if (spec) prep = spec->prepare(K, I, &h_true);

    int evals = 0;
    Vec warm = Vec::Zero(K.n_cols());
    const auto error_at = [&](double log_beta) -> double {
        ++evals;
        const double beta = std::pow(10.0, log_beta);
        if (spec) return spec->error_M(prep, beta);
        const TikhonovResult r =
            tikhonov_solve(K, I, beta, M, mass_chol, 1e-10, 4000, &warm);
        warm = r.h;
        return mass_chol.mult_lower_t(Vec(r.h - h_true)).norm();
    };

    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = opts.log10_min, b = opts.log10_max;
    const double width_tol = std::log10(opts.bracket_factor);
    double x1 = b - gr * (b - a);
    double x2 = a + gr * (b - a);
    double f1 = error_at(x1);
    double f2 = error_at(x2);
    while (b - a > width_tol) {
        if (f1 <= f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - gr * (b - a);
            f1 = error_at(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + gr * (b - a);
            f2 = error_at(x2);
        }
    }
    BetaSearchResult out;
    const double log_beta_star = 0.5 * (a + b);
    out.beta_star = std::pow(10.0, log_beta_star);
    out.hit_lower_bound = (a <= opts.log10_min + 1e-12);
    out.evaluations = evals;

    if (spec) {
        TikhonovResult r;
        r.h = spec->solve(I, out.beta_star);
        r.beta = out.beta_star;
        detail::finalize_result(r, K, I, M, mass_chol);
        // The result contract is the normal equations; polish iteratively in
        // the rare case the direct spectral solve is not tight enough.
        if (r.normal_residual_rel > 1e-8)
            r = tikhonov_solve(K, I, out.beta_star, M, mass_chol, 1e-10, 4000, &r.h);
        r.beta_optimal = true;
        out.result = std::move(r);
    } else {
        out.result = tikhonov_solve(K, I, out.beta_star, M, mass_chol, 1e-10, 4000, &warm);
        out.result.beta_optimal = true;
    }
    return out;
}

}  // namespace aet

#endif
