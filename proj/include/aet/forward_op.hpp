#ifndef AET_FORWARD_OP_HPP
#define AET_FORWARD_OP_HPP

#include "aet/electrostatics.hpp"

#include <random>

namespace aet {

/// Dense discretization of the integral operator mapping nodal power
/// densities to stacked time signals. Row (s, i) is -eta (M p_s(t_i))^T,
/// i.e. exact P1 quadrature of -eta int p(., t_i) phi_j dx. Rows are stacked
/// source-major, time-minor; the uniform-time-grid scaling factor is
/// deliberately omitted on both sides of every norm comparison.
struct ForwardMatrix {
    RowMat rows;       // (n_sources * (m+1)) x n_nodes
    double eta = 0.0;
    double dt = 0.0;
    int n_sources = 0;
    int records_per_source = 0;  // m+1
    std::string provenance;      // which sound speed produced the waves

    Eigen::Index n_rows() const { return rows.rows(); }
    Eigen::Index n_cols() const { return rows.cols(); }

    Vec apply(const Vec& h) const { return rows * h; }
    Vec apply_transpose(const Vec& y) const { return rows.transpose() * y; }
};

inline ForwardMatrix assemble_forward_matrix(const TriangleMesh& mesh,
                                             const std::vector<WaveRecord>& waves, double eta,
                                             const std::string& provenance = "") {
    require(!waves.empty(), "assemble_forward_matrix: no waves");
    const int m = waves.front().steps();
    const double dt = waves.front().dt;
    for (const auto& w : waves) {
        require(w.n_nodes() == mesh.n_nodes(), "assemble_forward_matrix: wave/mesh mismatch");
        require(w.steps() == m && std::abs(w.dt - dt) <= 1e-12 * std::max(dt, 1.0),
                "assemble_forward_matrix: inconsistent time grids across waves");
    }
    const SpMat M = assemble_mass(mesh);
    ForwardMatrix K;
    K.eta = eta;
    K.dt = dt;
    K.n_sources = static_cast<int>(waves.size());
    K.records_per_source = m + 1;
    K.provenance = provenance;
    K.rows.resize(static_cast<Eigen::Index>(K.n_sources) * (m + 1), mesh.n_nodes());
    for (int s = 0; s < K.n_sources; ++s) {
        for (int i = 0; i <= m; ++i) {
            const Vec p = waves[s].p.row(i).transpose();
            K.rows.row(static_cast<Eigen::Index>(s) * (m + 1) + i) = (-eta) * (M * p).transpose();
        }
    }
    return K;
}

/// Linearized signal I = K H for one source, computed without materializing
/// K: I(t_i) = -eta p_i^T (M H). Pass mass_times_h = M * H.
inline PowerSignal linearized_signal(const WaveRecord& wave, const Vec& mass_times_h, double eta,
                                     const std::string& current_id) {
    PowerSignal sig;
    sig.current_id = current_id;
    sig.source_id = wave.source_id;
    sig.dt = wave.dt;
    sig.values = (-eta) * (wave.p * mass_times_h);
    return sig;
}

/// Largest singular value of (K1 - K2) L^{-T} (L the mass Cholesky factor),
/// so the value is the L2(Omega) -> l2 operator norm of the difference.
/// Estimated by power iteration on the normal map to 1e-6 relative.
inline double operator_norm_diff(const ForwardMatrix& K1, const ForwardMatrix& K2,
                                 const CholeskyFactor& mass_chol, double rel_tol = 1e-6,
                                 int max_iters = 500) {
    require(K1.n_rows() == K2.n_rows() && K1.n_cols() == K2.n_cols(),
            "operator_norm_diff: shape mismatch");
    const Eigen::Index n = K1.n_cols();
    std::mt19937_64 rng(12345);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = gauss(rng);
    v.normalize();
    double sigma_prev = 0.0;
    for (int it = 0; it < max_iters; ++it) {
        const Vec w = mass_chol.solve_lower_t(v);
        const Vec y = K1.apply(w) - K2.apply(w);
        const Vec z = K1.apply_transpose(y) - K2.apply_transpose(y);
        Vec u = mass_chol.solve_lower(z);
        const double lambda = u.norm();  // v normalized, so |B^T B v|
        if (lambda == 0.0) return 0.0;
        const double sigma = std::sqrt(lambda);
        u /= lambda;
        v = u;
        if (it > 0 && std::abs(sigma - sigma_prev) <= rel_tol * sigma) return sigma;
        sigma_prev = sigma;
    }
    return sigma_prev;
}

// Binary matrix file: "K rows=<r> cols=<n> eta=<eta>\n" then row-major doubles.
inline void save_forward_matrix(const std::string& path, const ForwardMatrix& K) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "save_forward_matrix: cannot open " + path);
    out << "K rows=" << K.n_rows() << " cols=" << K.n_cols() << " eta=" << fmt_double(K.eta)
        << "\n";
    out.write(reinterpret_cast<const char*>(K.rows.data()),
              static_cast<std::streamsize>(sizeof(double) * K.rows.size()));
    require(out.good(), "save_forward_matrix: write failure on " + path);
}

inline ForwardMatrix load_forward_matrix(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "load_forward_matrix: cannot open " + path);
    std::string header;
    std::getline(in, header);
    long rows = 0, cols = 0;
    double eta = 0;
    require(std::sscanf(header.c_str(), "K rows=%ld cols=%ld eta=%lf", &rows, &cols, &eta) == 3,
            "load_forward_matrix: bad header in " + path);
    ForwardMatrix K;
    K.eta = eta;
    K.rows.resize(rows, cols);
    in.read(reinterpret_cast<char*>(K.rows.data()),
            static_cast<std::streamsize>(sizeof(double) * K.rows.size()));
    require(in.gcount() == static_cast<std::streamsize>(sizeof(double) * K.rows.size()),
            "load_forward_matrix: truncated file " + path);
    return K;
}

}  // namespace aet

#endif
