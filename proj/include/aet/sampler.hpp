#ifndef AET_SAMPLER_HPP
#define AET_SAMPLER_HPP

#include "aet/grid.hpp"

#include <fftw3.h>

#include <complex>
#include <numbers>
#include <random>

namespace aet {

/// Parameters of the structured sound-speed perturbation sampler.
/// The spectral law: amplitude c0 at xi = 0, c1 |xi|^(-beta/2) e^{-i theta}
/// for 0 < |xi| < f0, zero beyond; the two exponents beta0 > beta1 give two
/// thresholded fields whose difference is the ternary structure s.
struct SamplerParams {
    double f0 = 20.0;          // spectral cutoff
    double ell = 25.0;         // half-width of the sampling square
    double c0 = 0.5;           // amplitude at xi = 0
    double c1 = 1.0;           // amplitude of the power law
    int n = 255;               // grid side (odd keeps xi = 0 on the grid)
    double beta0 = 3.3;
    double beta1 = 2.8;
    double gamma_cut = 0.35;   // quantile level for the threshold
    double u_radius_ratio = 0.8;  // control-region radius over the disk radius
    double mu = 0.05;          // perturbation scale in the speed formula
    std::uint64_t seed = 1;
    bool shared_phases = false;   // independent draws per beta (shared collapses s)
    double smooth_width = 0.0;    // optional Gaussian mollifier (grid units of ell)
    double target_half_width = 1.6;  // wave-grid L the square [-ell,ell]^2 maps onto

    void validate() const {
        require(gamma_cut > 0 && gamma_cut < 1, "sampler: gamma_cut must be in (0,1)");
        require(beta0 >= beta1 && beta1 > 0, "sampler: need beta0 >= beta1 > 0");
        require(f0 < ell * std::numbers::sqrt2, "sampler: f0 must be < ell*sqrt(2)");
        require(n >= 8, "sampler: grid too small");
        require(mu >= 0, "sampler: mu must be nonnegative");
        require(target_half_width > 0, "sampler: target_half_width must be positive");
    }

    double xi(int j) const { return ell * (2.0 * j / (n - 1.0) - 1.0); }
};

/// Ternary structure on the sampling square; values in {-1, 0, 1}. The
/// interpolant rescales [-ell, ell]^2 onto the wave grid's [-L, L]^2.
struct StructureField {
    int n = 0;
    double ell = 0.0;
    double target_half_width = 0.0;
    Mat s;  // n x n, s(j, k) at (xi_j, xi_k)

    /// Bilinear sample at physical wave-grid coordinates.
    double at(double x, double y) const {
        const double gx = (x / target_half_width * ell + ell) * (n - 1.0) / (2.0 * ell);
        const double gy = (y / target_half_width * ell + ell) * (n - 1.0) / (2.0 * ell);
        const double cx = std::clamp(gx, 0.0, n - 1.0);
        const double cy = std::clamp(gy, 0.0, n - 1.0);
        const int j = std::min(static_cast<int>(cx), n - 2);
        const int k = std::min(static_cast<int>(cy), n - 2);
        const double tx = cx - j, ty = cy - k;
        return (1 - tx) * (1 - ty) * s(j, k) + tx * (1 - ty) * s(j + 1, k) +
               (1 - tx) * ty * s(j, k + 1) + tx * ty * s(j + 1, k + 1);
    }
};

namespace detail {

inline std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

/// Unnormalized inverse 2D DFT via FFTW, then 1/N^2 like the usual ifft2.
inline void idft2(std::vector<std::complex<double>>& data, int n) {
    fftw_plan plan;
    {
        std::lock_guard<std::mutex> lock(fftw_planner_mutex());
        plan = fftw_plan_dft_2d(n, n, reinterpret_cast<fftw_complex*>(data.data()),
                                reinterpret_cast<fftw_complex*>(data.data()), FFTW_BACKWARD,
                                FFTW_ESTIMATE);
    }
    fftw_execute(plan);
    {
        std::lock_guard<std::mutex> lock(fftw_planner_mutex());
        fftw_destroy_plan(plan);
    }
    const double inv = 1.0 / (static_cast<double>(n) * n);
    for (auto& z : data) z *= inv;
}

}  // namespace detail

/// Evaluates the spectral law on the grid with the given phases, applies the
/// inverse 2D DFT and returns the entrywise magnitude field q.
inline Mat spectral_field(const SamplerParams& params, double beta, const Mat& phases) {
    params.validate();
    const int n = params.n;
    require(phases.rows() == n && phases.cols() == n, "spectral_field: phases size mismatch");
    require(phases.minCoeff() > -std::numbers::pi - 1e-12 &&
                phases.maxCoeff() <= std::numbers::pi + 1e-12,
            "spectral_field: phases outside (-pi, pi]");
    std::vector<std::complex<double>> data(static_cast<std::size_t>(n) * n);
    for (int j = 0; j < n; ++j) {
        for (int k = 0; k < n; ++k) {
            const double r = std::hypot(params.xi(j), params.xi(k));
            std::complex<double> v(0.0, 0.0);
            if (r == 0.0)
                v = params.c0;
            else if (r < params.f0)
                v = params.c1 * std::pow(r, -0.5 * beta) *
                    std::exp(std::complex<double>(0.0, -phases(j, k)));
            data[static_cast<std::size_t>(j) * n + k] = v;
        }
    }
    detail::idft2(data, n);
    Mat q(n, n);
    for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) q(j, k) = std::abs(data[static_cast<std::size_t>(j) * n + k]);
    return q;
}

/// Empirical cut height: the value r among the samples in J minimizing
/// |gamma - (fraction of samples strictly below r)|, ties toward smaller r.
inline double quantile_cut(const Mat& field, const std::vector<std::pair<int, int>>& region,
                           double gamma_cut) {
    require(!region.empty(), "quantile_cut: empty region");
    std::vector<double> vals;
    vals.reserve(region.size());
    for (const auto& [j, k] : region) vals.push_back(field(j, k));
    std::sort(vals.begin(), vals.end());
    const double m = static_cast<double>(vals.size());
    // Candidate cuts: each distinct sample value (fraction strictly below it
    // is its first-occurrence rank) plus one value just above the maximum.
    vals.push_back(std::nextafter(vals.back(), std::numeric_limits<double>::infinity()));
    double best_r = vals.front();
    double best_err = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < vals.size(); ++i) {
        if (i > 0 && vals[i] == vals[i - 1]) continue;
        const double err = std::abs(gamma_cut - static_cast<double>(i) / m);
        if (err < best_err - 1e-15) {
            best_err = err;
            best_r = vals[i];
        }
    }
    return best_r;
}

/// Draws one structure realization: two spectral fields (shared or
/// independent phases), each thresholded at its own quantile cut over the
/// control region U, then differenced to {-1, 0, 1}.
inline StructureField sample_structure(const SamplerParams& params) {
    params.validate();
    const int n = params.n;
    std::mt19937_64 rng(params.seed);
    std::uniform_real_distribution<double> unif(-std::numbers::pi, std::numbers::pi);
    const auto draw_phases = [&]() {
        Mat th(n, n);
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k) th(j, k) = unif(rng);
        return th;
    };
    const Mat theta = draw_phases();
    const Mat q0 = spectral_field(params, params.beta0, theta);
    const Mat q1 = spectral_field(params, params.beta1,
                                  params.shared_phases ? theta : Mat(draw_phases()));

    // Control region U: disk of radius u_radius_ratio * disk radius, expressed
    // in sampling-square coordinates through the [-ell,ell] -> [-L,L] rescale.
    const double r_u = params.u_radius_ratio * params.ell / params.target_half_width;
    std::vector<std::pair<int, int>> region;
    for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k)
            if (std::hypot(params.xi(j), params.xi(k)) <= r_u) region.emplace_back(j, k);
    require(!region.empty(), "sample_structure: control region contains no grid points");

    const double r0 = quantile_cut(q0, region, params.gamma_cut);
    const double r1 = quantile_cut(q1, region, params.gamma_cut);

    StructureField sf;
    sf.n = n;
    sf.ell = params.ell;
    sf.target_half_width = params.target_half_width;
    sf.s.resize(n, n);
    for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) {
            const double a = q0(j, k) < r0 ? 1.0 : 0.0;
            const double b = q1(j, k) < r1 ? 1.0 : 0.0;
            sf.s(j, k) = a - b;
        }

    if (params.smooth_width > 0.0) {
        // Gaussian mollifier, separable; width in units of the xi spacing.
        const double sg = params.smooth_width;
        const int rad = std::max(1, static_cast<int>(std::ceil(3 * sg)));
        Vec kern(2 * rad + 1);
        for (int i = -rad; i <= rad; ++i) kern[i + rad] = std::exp(-0.5 * i * i / (sg * sg));
        kern /= kern.sum();
        Mat tmp = Mat::Zero(n, n);
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k) {
                double acc = 0;
                for (int i = -rad; i <= rad; ++i)
                    acc += kern[i + rad] * sf.s(std::clamp(j + i, 0, n - 1), k);
                tmp(j, k) = acc;
            }
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k) {
                double acc = 0;
                for (int i = -rad; i <= rad; ++i)
                    acc += kern[i + rad] * tmp(j, std::clamp(k + i, 0, n - 1));
                sf.s(j, k) = acc;
            }
    }
    return sf;
}

struct DiskSpec {
    Eigen::Vector2d center{0.0, 0.375};
    double radius = 0.25;

    bool contains(double x, double y) const {
        return std::hypot(x - center.x(), y - center.y()) <= radius;
    }
};

/// c(x) = (c_bg + chi_D (c_incl - c_bg)) (1 + mu s(x)) evaluated on the wave
/// grid. Fails if the resulting speed is not strictly positive.
inline SoundSpeedField build_sound_speed(const StructureField& structure, const DiskSpec& inclusion,
                                         double c_bg, double c_incl, double mu,
                                         const CartesianGrid& grid) {
    require(c_bg > 0 && c_incl > 0, "build_sound_speed: speeds must be positive");
    SoundSpeedField out;
    out.field = make_grid_field(grid);
    for (int i = 0; i < grid.n; ++i) {
        const double x = grid.coord(i);
        for (int j = 0; j < grid.n; ++j) {
            const double y = grid.coord(j);
            const double base = inclusion.contains(x, y) ? c_incl : c_bg;
            const double v = base * (1.0 + mu * structure.at(x, y));
            require(v > 0, "build_sound_speed: nonpositive speed (mu too large)");
            out.field.at(i, j) = v;
        }
    }
    const double lo = out.min_value(), hi = out.max_value();
    out.lower_bound = std::min(lo, 1.0 / hi) * (1.0 - 1e-12);
    out.label = SoundSpeedField::Label::True;
    out.validate();
    return out;
}

/// ASCII PGM export of a structure field for eyeballing realizations;
/// {-1, 0, 1} map to {0, 127, 255}.
inline void write_structure_pgm(const std::string& path, const StructureField& sf) {
    std::ofstream out(path);
    require(out.good(), "write_structure_pgm: cannot open " + path);
    out << "P2\n" << sf.n << " " << sf.n << "\n255\n";
    for (int k = sf.n - 1; k >= 0; --k) {
        for (int j = 0; j < sf.n; ++j) {
            const int v = static_cast<int>(std::lround((sf.s(j, k) + 1.0) * 127.5));
            out << std::clamp(v, 0, 255) << (j + 1 == sf.n ? "" : " ");
        }
        out << "\n";
    }
    require(out.good(), "write_structure_pgm: write failure on " + path);
}

}  // namespace aet

#endif
