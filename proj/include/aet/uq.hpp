#ifndef AET_UQ_HPP
#define AET_UQ_HPP

#include "aet/pipeline.hpp"

namespace aet {

/// Node-wise first and second moments of the per-sample reconstructions.
/// Statistics use the (n-1)-denominator estimator and need n >= 2; with a
/// single sample only the reconstructions themselves are produced.
struct EnsembleSummary {
    int n_requested = 0;
    int n_ok = 0;
    std::uint64_t master_seed = 0;
    std::vector<Vec> mean_h;  // per boundary current
    std::vector<Vec> std_h;   // empty when n_ok < 2
    Vec mean_sigma;
    Vec std_sigma;
    std::vector<int> failed_samples;
    bool has_std() const { return std_sigma.size() > 0; }
};

/// Sampled covariance / correlation over stacked signal indices
/// (source-major, time-minor, subsampled by stats_stride).
struct SignalStatistics {
    Mat cov;
    Mat corr;
    int samples = 0;
    bool corr_valid = false;  // false when some index has zero variance
    int n_sources = 0;
    int times_per_source = 0;
};

namespace detail {

inline void two_pass_moments(const std::vector<Vec>& samples, Vec& mean, Vec& stddev) {
    const int n = static_cast<int>(samples.size());
    mean = Vec::Zero(samples.front().size());
    for (const auto& s : samples) mean += s;
    mean /= static_cast<double>(n);
    if (n < 2) {
        stddev = Vec();
        return;
    }
    Vec acc = Vec::Zero(mean.size());
    for (const auto& s : samples) acc += (s - mean).cwiseAbs2();
    stddev = (acc / static_cast<double>(n - 1)).cwiseSqrt();
}

}  // namespace detail

inline SignalStatistics signal_statistics(const std::vector<Vec>& signals, int n_sources,
                                          int times_per_source) {
    require(signals.size() >= 2, "signal_statistics: need at least 2 samples");
    const Eigen::Index d = signals.front().size();
    SignalStatistics st;
    st.samples = static_cast<int>(signals.size());
    st.n_sources = n_sources;
    st.times_per_source = times_per_source;
    Vec mean = Vec::Zero(d);
    for (const auto& s : signals) mean += s;
    mean /= static_cast<double>(st.samples);
    Mat centered(st.samples, d);
    for (int k = 0; k < st.samples; ++k) centered.row(k) = (signals[k] - mean).transpose();
    st.cov = (centered.transpose() * centered) / static_cast<double>(st.samples - 1);
    const Vec sd = st.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
    const double floor = 1e-14 * sd.maxCoeff();
    st.corr_valid = sd.minCoeff() > floor && sd.minCoeff() > 0.0;
    st.corr = Mat::Zero(d, d);
    if (st.corr_valid) {
        for (Eigen::Index i = 0; i < d; ++i)
            for (Eigen::Index j = 0; j < d; ++j) st.corr(i, j) = st.cov(i, j) / (sd[i] * sd[j]);
        st.corr.diagonal().setOnes();
    }
    return st;
}

struct EnsembleOptions {
    int n_samples = 30;
    std::uint64_t master_seed = 1000;
    int stats_stride = 3;
    int threads = 1;
    bool reconstruct_sigma = true;
    bool reuse_master_seed_for_all = false;  // degenerate mode used by tests
    std::string out_dir;                     // empty: keep everything in memory
};

struct EnsembleRun {
    EnsembleSummary summary;
    SignalStatistics stats;
    bool has_stats = false;
    // per-sample payloads (index-aligned with seeds; failed slots empty)
    std::vector<std::vector<Vec>> h_recons;  // [sample][current]
    std::vector<Vec> sigma_recons;
    std::vector<Vec> signals_first_current;  // subsampled stacks for statistics
    std::vector<double> beta_stars;          // first current
};

/// Draws n sound-speed realizations, pushes each through the full linearized
/// data -> Tikhonov -> conductivity pipeline with the assumed constant speed,
/// and reduces node-wise moments plus the sampled signal statistics.
/// A failing sample is recorded, skipped and reported in the summary.
inline EnsembleRun run_ensemble(const Scenario& scenario, const EnsembleOptions& opts) {
    require(opts.n_samples >= 1, "run_ensemble: need at least one sample");
    const auto& cfg = scenario.cfg;

    // Shared reconstruction operator for the assumed speed c~ = c_bg.
    const SoundSpeedField c_assumed = scenario.assumed_speed();
    const std::vector<WaveRecord> waves_assumed =
        scenario.simulate_all(c_assumed, opts.threads);
    const ForwardMatrix K = scenario.assemble_operator(waves_assumed, "assumed");
    const TikhonovSpectralCache cache(K, scenario.mass_chol);
    const int rows_per = waves_assumed.front().steps() + 1;

    // Structure realizations are drawn serially (FFT planning is locked
    // anyway); the heavy wave/reconstruction work parallelizes per sample.
    std::vector<StructureField> structures(opts.n_samples);
    for (int i = 0; i < opts.n_samples; ++i) {
        const std::uint64_t seed = opts.reuse_master_seed_for_all
                                       ? opts.master_seed
                                       : derived_seed(opts.master_seed, i);
        structures[i] = sample_structure(scenario.sampler_params(seed));
    }

    EnsembleRun run;
    run.h_recons.assign(opts.n_samples, {});
    run.sigma_recons.assign(opts.n_samples, Vec());
    run.signals_first_current.assign(opts.n_samples, Vec());
    run.beta_stars.assign(opts.n_samples, 0.0);
    std::vector<std::string> errors(opts.n_samples);

    parallel_for(opts.n_samples, opts.threads, [&](std::int64_t i) {
        try {
            const SoundSpeedField c_true =
                scenario.true_speed(structures[i], cfg.sampler_mu);
            const std::vector<WaveRecord> waves = scenario.simulate_all(c_true, 1);
            std::vector<Vec> hs;
            std::vector<std::pair<Vec, BoundaryCurrent>> z_list;
            for (std::size_t d = 0; d < scenario.currents.size(); ++d) {
                const Vec I = scenario.stacked_signals(waves, scenario.H_true[d]);
                if (d == 0) {
                    // Subsampled stack for the covariance/correlation study.
                    // The t = 0 row is identically zero (zero initial data)
                    // and carries no variance, so stacking starts at t_1.
                    std::vector<double> sub;
                    for (int s = 0; s < static_cast<int>(waves.size()); ++s)
                        for (int t = 1; t < rows_per; t += std::max(1, opts.stats_stride))
                            sub.push_back(I[static_cast<Eigen::Index>(s) * rows_per + t]);
                    run.signals_first_current[i] =
                        Eigen::Map<Vec>(sub.data(), static_cast<Eigen::Index>(sub.size()));
                }
                const BetaSearchResult res =
                    optimal_beta_search(K, I, scenario.H_true[d], scenario.M,
                                        scenario.mass_chol, scenario.beta_options(), &cache);
                if (d == 0) run.beta_stars[i] = res.beta_star;
                hs.push_back(res.result.h);
                z_list.emplace_back(res.result.h, scenario.currents[d]);
            }
            if (opts.reconstruct_sigma) {
                const SigmaReconResult sr =
                    reconstruct_conductivity(scenario.mesh, z_list, scenario.sigma_params());
                run.sigma_recons[i] = sr.sigma;
            }
            run.h_recons[i] = std::move(hs);
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    });

    EnsembleSummary& sum = run.summary;
    sum.n_requested = opts.n_samples;
    sum.master_seed = opts.master_seed;
    std::vector<std::vector<Vec>> ok_h(scenario.currents.size());
    std::vector<Vec> ok_sigma;
    std::vector<Vec> ok_signals;
    for (int i = 0; i < opts.n_samples; ++i) {
        if (!errors[i].empty() || run.h_recons[i].empty()) {
            sum.failed_samples.push_back(i);
            continue;
        }
        ++sum.n_ok;
        for (std::size_t d = 0; d < scenario.currents.size(); ++d)
            ok_h[d].push_back(run.h_recons[i][d]);
        if (opts.reconstruct_sigma) ok_sigma.push_back(run.sigma_recons[i]);
        ok_signals.push_back(run.signals_first_current[i]);
    }
    require(sum.n_ok >= 1, "run_ensemble: every sample failed; first error: " +
                               (errors.empty() ? std::string("?") : errors[0]));

    sum.mean_h.resize(scenario.currents.size());
    sum.std_h.resize(scenario.currents.size());
    for (std::size_t d = 0; d < scenario.currents.size(); ++d)
        detail::two_pass_moments(ok_h[d], sum.mean_h[d], sum.std_h[d]);
    if (opts.reconstruct_sigma) detail::two_pass_moments(ok_sigma, sum.mean_sigma, sum.std_sigma);

    if (sum.n_ok >= 2) {
        run.stats = signal_statistics(ok_signals, static_cast<int>(waves_assumed.size()),
                                      (rows_per - 1 + std::max(1, opts.stats_stride) - 1) /
                                          std::max(1, opts.stats_stride));
        run.has_stats = true;
    }

    if (!opts.out_dir.empty()) {
        namespace fs = std::filesystem;
        const fs::path dir(opts.out_dir);
        fs::create_directories(dir);
        char buf[32];
        for (int i = 0; i < opts.n_samples; ++i) {
            if (run.h_recons[i].empty()) continue;
            std::snprintf(buf, sizeof(buf), "sample_%03d", i);
            fs::create_directories(dir / buf);
            for (std::size_t d = 0; d < scenario.currents.size(); ++d)
                save_field((dir / buf / ("h_" + scenario.currents[d].id + ".field")).string(),
                           run.h_recons[i][d]);
            if (opts.reconstruct_sigma && run.sigma_recons[i].size())
                save_field((dir / buf / "sigma.field").string(), run.sigma_recons[i]);
        }
        for (std::size_t d = 0; d < scenario.currents.size(); ++d) {
            save_field((dir / ("mean_h_" + scenario.currents[d].id + ".field")).string(),
                       sum.mean_h[d]);
            if (sum.std_h[d].size())
                save_field((dir / ("std_h_" + scenario.currents[d].id + ".field")).string(),
                           sum.std_h[d]);
        }
        if (sum.mean_sigma.size())
            save_field((dir / "mean_sigma.field").string(), sum.mean_sigma);
        if (sum.std_sigma.size()) save_field((dir / "std_sigma.field").string(), sum.std_sigma);
        if (run.has_stats) {
            // corr.bin shares the dense-matrix header style of operator files.
            std::ofstream out(dir / "corr.bin", std::ios::binary);
            require(out.good(), "run_ensemble: cannot open corr.bin");
            out << "K rows=" << run.stats.corr.rows() << " cols=" << run.stats.corr.cols()
                << " eta=0\n";
            RowMat corr_rm = run.stats.corr;
            out.write(reinterpret_cast<const char*>(corr_rm.data()),
                      static_cast<std::streamsize>(sizeof(double) * corr_rm.size()));
        }
        std::ofstream rep(dir / "report.csv");
        rep << "sample,seed,status,beta_star_first,signal_dim\n";
        for (int i = 0; i < opts.n_samples; ++i) {
            const std::uint64_t seed = opts.reuse_master_seed_for_all
                                           ? opts.master_seed
                                           : derived_seed(opts.master_seed, i);
            rep << i << "," << seed << ","
                << (run.h_recons[i].empty() ? ("failed: " + errors[i]) : "ok") << ","
                << fmt_double(run.beta_stars[i]) << "," << run.signals_first_current[i].size()
                << "\n";
        }
    }
    return run;
}

struct MuSweepRow {
    double mu;
    double rel_error;  // M-norm relative error of the first-current h
    double beta_star;
    bool hit_lower_bound;
};

/// Fixes one structure realization and sweeps the perturbation scale mu,
/// reconstructing the first-current power density with the assumed constant
/// speed at the oracle-optimal beta.
inline std::vector<MuSweepRow> mu_sweep(const Scenario& scenario,
                                        const std::vector<double>& mu_values, int threads,
                                        const TikhonovSpectralCache* shared_cache = nullptr,
                                        const ForwardMatrix* shared_K = nullptr) {
    require(!mu_values.empty(), "mu_sweep: no mu values");
    for (double mu : mu_values) require(mu >= 0, "mu_sweep: mu must be nonnegative");

    std::unique_ptr<ForwardMatrix> K_owned;
    std::unique_ptr<TikhonovSpectralCache> cache_owned;
    const ForwardMatrix* K = shared_K;
    const TikhonovSpectralCache* cache = shared_cache;
    if (!K) {
        const auto waves = scenario.simulate_all(scenario.assumed_speed(), threads);
        K_owned = std::make_unique<ForwardMatrix>(scenario.assemble_operator(waves, "assumed"));
        K = K_owned.get();
    }
    if (!cache) {
        cache_owned = std::make_unique<TikhonovSpectralCache>(*K, scenario.mass_chol);
        cache = cache_owned.get();
    }

    const StructureField structure =
        sample_structure(scenario.sampler_params(scenario.cfg.sampler_seed));
    std::vector<MuSweepRow> rows(mu_values.size());
    parallel_for(static_cast<std::int64_t>(mu_values.size()), threads, [&](std::int64_t k) {
        const double mu = mu_values[k];
        // mu = 0 is the no-uncertainty baseline: data generated with the
        // reconstruction speed itself (the reference column of the study);
        // positive mu applies the full structured speed model.
        const SoundSpeedField c_true =
            mu == 0.0 ? scenario.assumed_speed() : scenario.true_speed(structure, mu);
        const auto waves = scenario.simulate_all(c_true, 1);
        const Vec I = scenario.stacked_signals(waves, scenario.H_true[0]);
        const BetaSearchResult res =
            optimal_beta_search(*K, I, scenario.H_true[0], scenario.M, scenario.mass_chol,
                                scenario.beta_options(), cache);
        rows[k] = {mu, scenario.rel_error_M(res.result.h, scenario.H_true[0]), res.beta_star,
                   res.hit_lower_bound};
    });
    return rows;
}

inline void save_mu_sweep(const std::string& path, const std::vector<MuSweepRow>& rows) {
    std::ofstream out(path);
    require(out.good(), "save_mu_sweep: cannot open " + path);
    out << "mu,rel_error,beta_star,hit_lower_bound\n";
    for (const auto& r : rows)
        out << fmt_double(r.mu) << "," << fmt_double(r.rel_error) << ","
            << fmt_double(r.beta_star) << "," << (r.hit_lower_bound ? 1 : 0) << "\n";
    require(out.good(), "save_mu_sweep: write failure on " + path);
}

/// Angular amplitude spectrum of a nodal field, summed incoherently over
/// narrow radial bands (the sign of ring-shaped artifacts alternates with
/// radius, so a single wide-annulus average would cancel them).
inline Vec angular_band_spectrum(const TriangleMesh& mesh, const Vec& field, int kmax = 30) {
    const int nbins = 144;
    const Vec lumped = lumped_mass(mesh);
    Vec spec = Vec::Zero(kmax + 1);
    for (double r0 = 0.30; r0 < 0.95; r0 += 0.05) {
        Vec prof = Vec::Zero(nbins), w = Vec::Zero(nbins);
        for (int i = 0; i < mesh.n_nodes(); ++i) {
            const auto& p = mesh.nodes[i];
            const double r = p.norm();
            if (r < r0 || r >= r0 + 0.05) continue;
            double a = std::atan2(p.y(), p.x());
            if (a < 0) a += 2 * std::numbers::pi;
            const int b = std::min(nbins - 1, static_cast<int>(a / (2 * std::numbers::pi) * nbins));
            prof[b] += lumped[i] * field[i];
            w[b] += lumped[i];
        }
        for (int b = 0; b < nbins; ++b) prof[b] = w[b] > 0 ? prof[b] / w[b] : 0.0;
        for (int k = 1; k <= kmax; ++k) {
            std::complex<double> acc(0, 0);
            for (int b = 0; b < nbins; ++b)
                acc += prof[b] * std::exp(std::complex<double>(
                                     0, -2.0 * std::numbers::pi * k * (b + 0.5) / nbins));
            spec[k] += std::abs(acc) / nbins;
        }
    }
    return spec;
}

inline int dominant_harmonic(const Vec& spectrum, int kmin = 4) {
    int dom = kmin;
    for (int k = kmin; k < spectrum.size(); ++k)
        if (spectrum[k] > spectrum[dom]) dom = k;
    return dom;
}

struct ArtifactDemoResult {
    Vec h;                     // reconstructed power density
    Vec angular_amplitude;     // band-summed harmonic magnitudes of h - H_true
    int dominant_harmonic = 0; // largest amplitude among harmonics 4..30
    double boundary_band_ratio = 0.0;  // mean |h| in r>0.88 over mean |h| in r in (0.3,0.7)
    double rel_error = 0.0;
};

/// The few-wave artifact study: data generated at 1.05x the phantom speed,
/// reconstructed with the unscaled model speed and n_sources transducers.
/// With few sources the reconstruction carries an n_sources-fold angular
/// harmonic; the wrong mean speed leaves a low-energy band near the rim.
inline ArtifactDemoResult few_source_artifact_demo(const Scenario& base, int n_sources,
                                                   int threads,
                                                   const std::string& current_id = "x2") {
    require(n_sources >= 1, "few_source_artifact_demo: need at least one source");
    Scenario scenario = Scenario::build([&] {
        ExperimentConfig c = base.cfg;
        c.wave_sources = n_sources;
        return c;
    }());

    const SoundSpeedField c_model = scenario.phantom_speed();
    SoundSpeedField c_data = c_model;
    c_data.field.values *= 1.05;
    c_data.lower_bound = std::min(c_data.min_value(), 1.0 / c_data.max_value()) * (1 - 1e-12);

    const auto waves_model = scenario.simulate_all(c_model, threads);
    const auto waves_data = scenario.simulate_all(c_data, threads);
    const ForwardMatrix K = scenario.assemble_operator(waves_model, "model");
    const TikhonovSpectralCache cache(K, scenario.mass_chol);

    std::size_t d = 0;
    for (; d < scenario.currents.size(); ++d)
        if (scenario.currents[d].id == current_id) break;
    require(d < scenario.currents.size(), "few_source_artifact_demo: unknown current id");

    const Vec I = scenario.stacked_signals(waves_data, scenario.H_true[d]);
    const BetaSearchResult res =
        optimal_beta_search(K, I, scenario.H_true[d], scenario.M, scenario.mass_chol,
                            scenario.beta_options(), &cache);

    ArtifactDemoResult out;
    out.h = res.result.h;
    out.rel_error = scenario.rel_error_M(out.h, scenario.H_true[d]);

    // The artifact lives in the deviation from the ideal reconstruction.
    out.angular_amplitude =
        angular_band_spectrum(scenario.mesh, Vec(out.h - scenario.H_true[d]));
    out.dominant_harmonic = dominant_harmonic(out.angular_amplitude);

    double inner_sum = 0, inner_w = 0, rim_sum = 0, rim_w = 0;
    for (int i = 0; i < scenario.mesh.n_nodes(); ++i) {
        const double r = scenario.mesh.nodes[i].norm();
        const double w = scenario.lumped[i];
        if (r > 0.3 && r < 0.7) {
            inner_sum += w * std::abs(out.h[i]);
            inner_w += w;
        } else if (r > 0.88) {
            rim_sum += w * std::abs(out.h[i]);
            rim_w += w;
        }
    }
    out.boundary_band_ratio = (rim_sum / std::max(rim_w, 1e-300)) /
                              std::max(inner_sum / std::max(inner_w, 1e-300), 1e-300);
    return out;
}

}  // namespace aet

#endif
