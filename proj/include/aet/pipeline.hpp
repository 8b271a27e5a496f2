#ifndef AET_PIPELINE_HPP
#define AET_PIPELINE_HPP

#include "aet/config.hpp"
#include "aet/forward_op.hpp"
#include "aet/recon_power.hpp"
#include "aet/recon_sigma.hpp"
#include "aet/sampler.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>

namespace aet {

using Json = nlohmann::json;

/// Everything the pipeline stages share for one experiment configuration:
/// mesh, FEM operators, boundary currents, the phantom and its true power
/// densities, the wave grid and source layout.
struct Scenario {
    ExperimentConfig cfg;
    TriangleMesh mesh;
    SpMat M;
    CholeskyFactor mass_chol;
    Vec lumped;
    std::vector<BoundaryCurrent> currents;
    Vec sigma_true;
    std::vector<Vec> H_true;  // per boundary current
    CartesianGrid grid;
    SourceConfig sources;
    DiskSpec inclusion;
    std::unique_ptr<MeshInterpolator> interp;
    double record_dt = 0.0;

    static BoundaryCurrent named_current(const TriangleMesh& mesh, const std::string& id) {
        if (id == "x1")
            return make_boundary_current(mesh, id, [](double x, double) { return x; });
        if (id == "x2")
            return make_boundary_current(mesh, id, [](double, double y) { return y; });
        if (id == "x1px2")
            return make_boundary_current(
                mesh, id, [](double x, double y) { return (x + y) / std::numbers::sqrt2; });
        throw Error("unknown boundary current id '" + id + "' (expected x1, x2 or x1px2)");
    }

    static Scenario build(const ExperimentConfig& cfg) {
        Scenario s;
        s.cfg = cfg;
        s.mesh = generate_disk_mesh(cfg.mesh_radius, cfg.mesh_target_nodes);
        s.M = assemble_mass(s.mesh);
        s.mass_chol.compute(s.M, 0.0);
        s.lumped = lumped_mass(s.mesh);
        s.grid.n = cfg.grid_n;
        s.grid.half_width = cfg.grid_half_width;
        s.grid.inner_half_width = cfg.grid_inner_half_width;
        s.grid.validate(cfg.mesh_radius);
        s.sources.source_count = cfg.wave_sources;
        s.sources.points_per_source = cfg.wave_points_per_source;
        s.sources.arc_degrees = cfg.wave_arc_degrees;
        s.sources.disk_radius = cfg.mesh_radius;
        s.sources.frequency = cfg.wave_frequency;
        s.sources.cycles = cfg.wave_cycles;
        s.sources.amplitude = cfg.wave_amplitude;
        s.inclusion.center = {cfg.incl_center_x, cfg.incl_center_y};
        s.inclusion.radius = cfg.incl_radius;
        s.interp = std::make_unique<MeshInterpolator>(s.grid, s.mesh);
        s.record_dt = cfg.wave_final_time / cfg.wave_records;

        s.sigma_true.resize(s.mesh.n_nodes());
        for (int i = 0; i < s.mesh.n_nodes(); ++i) {
            const auto& p = s.mesh.nodes[i];
            s.sigma_true[i] = cfg.sigma_background +
                              (s.inclusion.contains(p.x(), p.y())
                                   ? cfg.sigma_inclusion - cfg.sigma_background
                                   : 0.0);
        }
        NeumannSolver solver(s.mesh);
        solver.factorize(s.sigma_true);
        for (const auto& id : cfg.boundary_currents) {
            s.currents.push_back(named_current(s.mesh, id));
            const PotentialSolution sol = solver.solve(s.currents.back());
            s.H_true.push_back(power_density(s.mesh, s.sigma_true, sol.u, &s.mass_chol));
        }
        return s;
    }

    SamplerParams sampler_params(std::uint64_t seed) const {
        SamplerParams p;
        p.f0 = cfg.sampler_f0;
        p.ell = cfg.sampler_ell;
        p.c0 = cfg.sampler_c0;
        p.c1 = cfg.sampler_c1;
        p.n = cfg.sampler_n;
        p.beta0 = cfg.sampler_beta0;
        p.beta1 = cfg.sampler_beta1;
        p.gamma_cut = cfg.sampler_gamma_cut;
        p.u_radius_ratio = cfg.sampler_u_radius_ratio;
        p.mu = cfg.sampler_mu;
        p.seed = seed;
        p.shared_phases = cfg.sampler_shared_phases;
        p.smooth_width = cfg.sampler_smooth_width;
        p.target_half_width = cfg.grid_half_width;
        return p;
    }

    /// True speed from one structure realization at perturbation scale mu.
    SoundSpeedField true_speed(const StructureField& structure, double mu) const {
        return build_sound_speed(structure, inclusion, cfg.c_bg, cfg.c_incl, mu, grid);
    }

    /// Inclusion phantom speed with no structured perturbation.
    SoundSpeedField phantom_speed() const {
        StructureField flat;
        flat.n = 2;
        flat.ell = cfg.sampler_ell;
        flat.target_half_width = cfg.grid_half_width;
        flat.s = Mat::Zero(2, 2);
        return build_sound_speed(flat, inclusion, cfg.c_bg, cfg.c_incl, 0.0, grid);
    }

    /// The reconstruction-side constant speed c~ = c_bg.
    SoundSpeedField assumed_speed() const {
        SoundSpeedField s = constant_sound_speed(grid, cfg.c_bg, SoundSpeedField::Label::Assumed);
        return s;
    }

    /// Solver step: the largest divisor of the recording step below the
    /// stability bound of the worst admissible speed (so every realization
    /// of one scenario shares the same step and numerical dispersion).
    std::pair<double, int> solver_step(const SoundSpeedField& c) const {
        const double c_bound = std::max(c.max_value(), cfg.c_incl * 1.12);
        const double limit = 0.5 * grid.spacing() / (std::numbers::sqrt2 * c_bound) *
                             cfg.wave_cfl_fraction;
        const int stride = std::max(1, static_cast<int>(std::ceil(record_dt / limit - 1e-12)));
        return {record_dt / stride, stride};
    }

    WaveRecord simulate_source(const SoundSpeedField& c, int source_index) const {
        const auto [dt, stride] = solver_step(c);
        return simulate_wave(grid, c, sources, source_index, dt, cfg.wave_final_time, *interp,
                             stride, nullptr, cfg.wave_sponge_strength);
    }

    std::vector<WaveRecord> simulate_all(const SoundSpeedField& c, int threads) const {
        std::vector<WaveRecord> waves(sources.source_count);
        parallel_for(sources.source_count, threads,
                     [&](std::int64_t k) { waves[k] = simulate_source(c, static_cast<int>(k)); });
        return waves;
    }

    /// Stacked linearized signals I = K H for one power density, computed
    /// per source without materializing K (source-major, time-minor).
    Vec stacked_signals(const std::vector<WaveRecord>& waves, const Vec& H) const {
        const Vec MH = M * H;
        const int rows_per = waves.front().steps() + 1;
        Vec I(static_cast<Eigen::Index>(waves.size()) * rows_per);
        for (std::size_t s = 0; s < waves.size(); ++s)
            I.segment(static_cast<Eigen::Index>(s) * rows_per, rows_per) =
                (-cfg.eta) * (waves[s].p * MH);
        return I;
    }

    ForwardMatrix assemble_operator(const std::vector<WaveRecord>& waves,
                                    const std::string& provenance) const {
        return assemble_forward_matrix(mesh, waves, cfg.eta, provenance);
    }

    SigmaReconParams sigma_params() const {
        SigmaReconParams p;
        p.gamma_tv = cfg.rs_gamma_tv;
        p.tau = cfg.rs_tau;
        p.eps_shift = cfg.rs_eps_shift;
        p.outer_iters = cfg.rs_outer_iters;
        p.cg_tol = cfg.rs_cg_tol;
        p.cg_max_iters = cfg.rs_cg_max_iters;
        p.sigma_min = cfg.rs_sigma_min;
        p.sigma_max = cfg.rs_sigma_max;
        return p;
    }

    BetaSearchOptions beta_options() const {
        BetaSearchOptions o;
        o.log10_min = cfg.rh_log10_beta_min;
        o.log10_max = cfg.rh_log10_beta_max;
        o.bracket_factor = cfg.rh_bracket_factor;
        return o;
    }

    double rel_error_M(const Vec& approx, const Vec& truth) const {
        const Vec d = approx - truth;
        return std::sqrt(d.dot(M * d) / std::max(truth.dot(M * truth), 1e-300));
    }
};

// ---------------------------------------------------------------------------
// Manifests: every subcommand records its outputs (path, size, FNV-1a hash)
// and the hashes of the inputs it consumed; downstream stages verify that the
// artifacts they read still match what the producer recorded.
// ---------------------------------------------------------------------------

class Manifest {
public:
    Manifest(std::string subcommand, std::filesystem::path out_dir)
        : sub_(std::move(subcommand)), dir_(std::move(out_dir)) {}

    void add_output(const std::filesystem::path& path) {
        Json e;
        e["path"] = std::filesystem::relative(path, dir_).generic_string();
        e["bytes"] = static_cast<std::uint64_t>(std::filesystem::file_size(path));
        e["fnv1a64"] = hex64(fnv1a64_file(path.string()));
        outputs_.push_back(std::move(e));
    }

    void add_input(const std::filesystem::path& path) {
        Json e;
        e["path"] = std::filesystem::relative(path, dir_).generic_string();
        e["fnv1a64"] = hex64(fnv1a64_file(path.string()));
        inputs_.push_back(std::move(e));
    }

    template <typename T>
    void add_scalar(const std::string& name, const T& value) {
        scalars_[name] = value;
    }

    std::filesystem::path write() const {
        Json j;
        j["subcommand"] = sub_;
        j["inputs"] = inputs_;
        j["outputs"] = outputs_;
        j["scalars"] = scalars_;
        const auto path = dir_ / ("manifest-" + sub_ + ".json");
        std::ofstream out(path);
        require(out.good(), "manifest: cannot open " + path.string());
        out << j.dump(2) << "\n";
        require(out.good(), "manifest: write failure");
        return path;
    }

private:
    std::string sub_;
    std::filesystem::path dir_;
    Json inputs_ = Json::array();
    Json outputs_ = Json::array();
    Json scalars_ = Json::object();
};

/// Verifies that `artifact` still hashes to what `producer`'s manifest in
/// `dir` recorded. Fails if the manifest or the entry is missing.
inline void verify_against_manifest(const std::filesystem::path& dir, const std::string& producer,
                                    const std::filesystem::path& artifact) {
    const auto mpath = dir / ("manifest-" + producer + ".json");
    require(std::filesystem::exists(mpath),
            format_msg("missing manifest for producer '", producer, "': ", mpath.string(),
                       " (run the '", producer, "' subcommand first)"));
    std::ifstream in(mpath);
    Json j;
    in >> j;
    const std::string rel = std::filesystem::relative(artifact, dir).generic_string();
    for (const auto& e : j["outputs"]) {
        if (e["path"] == rel) {
            const std::string want = e["fnv1a64"];
            const std::string got = hex64(fnv1a64_file(artifact.string()));
            require(want == got, format_msg("artifact ", rel, " does not match the hash in ",
                                            mpath.string(), " (stale pipeline)"));
            return;
        }
    }
    throw Error(format_msg("artifact ", rel, " is not listed in ", mpath.string()));
}

}  // namespace aet

#endif
