// Command-line front end for the acousto-electric tomography lab. Every
// subcommand reads declared inputs from the output directory, writes its
// artifacts there and records a manifest with content hashes; downstream
// subcommands verify the hashes of what they consume.
//
// Exit codes: 0 success, 2 config error, 3 pipeline error, 4 verification
// failure.

#include "aet/uq.hpp"
#include "aet/verify.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace aet;

namespace {

struct CliState {
    std::string config_path;
    std::string out_dir = "out";
    std::vector<std::string> overrides;
    int threads = 0;        // 0: take from config
    long long seed = -1;    // -1: take from config
};

ExperimentConfig load_config(const CliState& st) {
    ConfigMap map = st.config_path.empty() ? ConfigMap::from_overrides(st.overrides)
                                           : ConfigMap::parse_file(st.config_path, st.overrides);
    ExperimentConfig cfg = ExperimentConfig::from_map(map);
    if (st.threads > 0) cfg.threads = st.threads;
    if (st.seed >= 0) {
        cfg.sampler_seed = static_cast<std::uint64_t>(st.seed);
        cfg.ensemble_master_seed = static_cast<std::uint64_t>(st.seed);
    }
    return cfg;
}

std::string wave_file(const fs::path& dir, const std::string& label, int src) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "wave_%s_s%02d.bin", label.c_str(), src);
    return (dir / "waves" / buf).string();
}

std::vector<WaveRecord> load_waves(const fs::path& dir, const std::string& label, int count) {
    std::vector<WaveRecord> waves;
    waves.reserve(count);
    for (int k = 0; k < count; ++k) {
        const std::string path = wave_file(dir, label, k);
        verify_against_manifest(dir, "simulate", path);
        waves.push_back(load_wave_record(path));
    }
    return waves;
}

int cmd_mesh(const ExperimentConfig& cfg, const fs::path& out) {
    const TriangleMesh mesh = generate_disk_mesh(cfg.mesh_radius, cfg.mesh_target_nodes);
    fs::create_directories(out);
    const fs::path mpath = out / "mesh.txt";
    save_mesh(mpath.string(), mesh);
    Manifest man("mesh", out);
    man.add_output(mpath);
    man.add_scalar("node_count", mesh.n_nodes());
    man.add_scalar("triangle_count", mesh.n_triangles());
    man.add_scalar("min_angle_degrees", mesh.min_angle_degrees());
    man.write();
    std::cout << "mesh: " << mesh.n_nodes() << " nodes, " << mesh.n_triangles()
              << " triangles, min angle " << mesh.min_angle_degrees() << " deg\n";
    return 0;
}

int cmd_sample_c(const ExperimentConfig& cfg, const fs::path& out) {
    const Scenario s = Scenario::build(cfg);
    const StructureField structure = sample_structure(s.sampler_params(cfg.sampler_seed));
    const SoundSpeedField c_true = s.true_speed(structure, cfg.sampler_mu);
    const SoundSpeedField c_assumed = s.assumed_speed();
    fs::create_directories(out);
    save_sound_speed((out / "c_true.bin").string(), c_true);
    save_sound_speed((out / "c_assumed.bin").string(), c_assumed);
    write_structure_pgm((out / "structure.pgm").string(), structure);
    Manifest man("sample-c", out);
    man.add_output(out / "c_true.bin");
    man.add_output(out / "c_assumed.bin");
    man.add_output(out / "structure.pgm");
    man.add_scalar("seed", cfg.sampler_seed);
    man.add_scalar("mu", cfg.sampler_mu);
    man.add_scalar("c_min", c_true.min_value());
    man.add_scalar("c_max", c_true.max_value());
    man.write();
    std::cout << "sample-c: c in [" << c_true.min_value() << ", " << c_true.max_value()
              << "], seed " << cfg.sampler_seed << "\n";
    return 0;
}

int cmd_simulate(const ExperimentConfig& cfg, const fs::path& out) {
    const Scenario s = Scenario::build(cfg);
    Manifest man("simulate", out);
    for (const std::string label : {"true", "assumed"}) {
        const fs::path cpath = out / (std::string("c_") + label + ".bin");
        verify_against_manifest(out, "sample-c", cpath);
        SoundSpeedField c = load_sound_speed(cpath.string(),
                                             label == std::string("true")
                                                 ? SoundSpeedField::Label::True
                                                 : SoundSpeedField::Label::Assumed);
        require(c.field.grid.n == cfg.grid_n, "simulate: grid size mismatch with config");
        c.field.grid.inner_half_width = cfg.grid_inner_half_width;
        man.add_input(cpath);
        fs::create_directories(out / "waves");
        std::vector<WaveRecord> waves = s.simulate_all(c, cfg.threads);
        for (int k = 0; k < static_cast<int>(waves.size()); ++k) {
            const std::string path = wave_file(out, label, k);
            save_wave_record(path, waves[k]);
            man.add_output(path);
        }
        std::cout << "simulate (" << label << "): " << waves.size() << " sources, "
                  << waves.front().steps() + 1 << " records\n";
    }
    man.add_scalar("record_dt", s.record_dt);
    man.write();
    return 0;
}

int cmd_assemble(const ExperimentConfig& cfg, const fs::path& out) {
    const fs::path mpath = out / "mesh.txt";
    verify_against_manifest(out, "mesh", mpath);
    const TriangleMesh mesh = load_mesh(mpath.string());
    Manifest man("assemble", out);
    man.add_input(mpath);
    for (const std::string label : {"true", "assumed"}) {
        const auto waves = load_waves(out, label, cfg.wave_sources);
        const ForwardMatrix K = assemble_forward_matrix(mesh, waves, cfg.eta, label);
        const fs::path kpath = out / (std::string("K_") + label + ".bin");
        save_forward_matrix(kpath.string(), K);
        man.add_output(kpath);
        std::cout << "assemble (" << label << "): " << K.n_rows() << " x " << K.n_cols() << "\n";
    }
    man.write();
    return 0;
}

int cmd_synth_data(const ExperimentConfig& cfg, const fs::path& out) {
    const fs::path mpath = out / "mesh.txt";
    verify_against_manifest(out, "mesh", mpath);
    const TriangleMesh mesh = load_mesh(mpath.string());
    const SpMat M = assemble_mass(mesh);
    const CholeskyFactor chol(M, 0.0);
    Vec sigma_true(mesh.n_nodes());
    DiskSpec incl;
    incl.center = {cfg.incl_center_x, cfg.incl_center_y};
    incl.radius = cfg.incl_radius;
    for (int i = 0; i < mesh.n_nodes(); ++i)
        sigma_true[i] = cfg.sigma_background +
                        (incl.contains(mesh.nodes[i].x(), mesh.nodes[i].y())
                             ? cfg.sigma_inclusion - cfg.sigma_background
                             : 0.0);
    NeumannSolver solver(mesh);
    solver.factorize(sigma_true);
    const auto waves = load_waves(out, "true", cfg.wave_sources);
    Manifest man("synth-data", out);
    man.add_input(mpath);
    fs::create_directories(out / "signals");
    save_field((out / "sigma_true.field").string(), sigma_true);
    man.add_output(out / "sigma_true.field");
    for (const auto& id : cfg.boundary_currents) {
        const BoundaryCurrent f = Scenario::named_current(mesh, id);
        const Vec H = power_density(mesh, sigma_true, solver.solve(f).u, &chol);
        const fs::path hpath = out / ("H_true_" + id + ".field");
        save_field(hpath.string(), H);
        man.add_output(hpath);
        const Vec MH = M * H;
        for (const auto& wave : waves) {
            const PowerSignal sig = linearized_signal(wave, MH, cfg.eta, id);
            char buf[64];
            std::snprintf(buf, sizeof(buf), "I_%s_s%02d.csv", id.c_str(), wave.source_id);
            const fs::path spath = out / "signals" / buf;
            save_power_signal(spath.string(), sig);
            man.add_output(spath);
        }
    }
    man.write();
    std::cout << "synth-data: " << cfg.boundary_currents.size() << " currents x " << waves.size()
              << " sources\n";
    return 0;
}

int cmd_recon_h(const ExperimentConfig& cfg, const fs::path& out) {
    const fs::path mpath = out / "mesh.txt";
    verify_against_manifest(out, "mesh", mpath);
    const TriangleMesh mesh = load_mesh(mpath.string());
    const SpMat M = assemble_mass(mesh);
    const CholeskyFactor chol(M, 0.0);
    const fs::path kpath = out / "K_assumed.bin";
    verify_against_manifest(out, "assemble", kpath);
    const ForwardMatrix K = load_forward_matrix(kpath.string());
    const TikhonovSpectralCache cache(K, chol);
    Manifest man("recon-h", out);
    man.add_input(mpath);
    man.add_input(kpath);
    fs::create_directories(out / "recon");
    std::ofstream report(out / "recon" / "recon_h_report.txt");
    report << "current beta beta_optimal data_residual reg_norm normal_residual_rel\n";
    const int rows_per = static_cast<int>(K.n_rows()) / cfg.wave_sources;
    for (const auto& id : cfg.boundary_currents) {
        Vec I(K.n_rows());
        for (int src = 0; src < cfg.wave_sources; ++src) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "I_%s_s%02d.csv", id.c_str(), src);
            const fs::path spath = out / "signals" / buf;
            verify_against_manifest(out, "synth-data", spath);
            const PowerSignal sig = load_power_signal(spath.string());
            require(sig.values.size() == rows_per, "recon-h: signal length mismatch");
            I.segment(static_cast<Eigen::Index>(src) * rows_per, rows_per) = sig.values;
        }
        TikhonovResult res;
        if (cfg.rh_fixed_beta > 0) {
            res = tikhonov_solve(K, I, cfg.rh_fixed_beta, M, chol);
        } else {
            const fs::path hpath = out / ("H_true_" + id + ".field");
            verify_against_manifest(out, "synth-data", hpath);
            const Vec h_true = load_field(hpath.string());
            BetaSearchOptions opts;
            opts.log10_min = cfg.rh_log10_beta_min;
            opts.log10_max = cfg.rh_log10_beta_max;
            opts.bracket_factor = cfg.rh_bracket_factor;
            res = optimal_beta_search(K, I, h_true, M, chol, opts, &cache).result;
        }
        const fs::path opath = out / "recon" / ("h_" + id + ".field");
        save_field(opath.string(), res.h);
        man.add_output(opath);
        report << id << " " << fmt_double(res.beta) << " " << (res.beta_optimal ? 1 : 0) << " "
               << fmt_double(res.data_residual) << " " << fmt_double(res.reg_norm) << " "
               << fmt_double(res.normal_residual_rel) << "\n";
        std::cout << "recon-h (" << id << "): beta " << res.beta << ", data residual "
                  << res.data_residual << "\n";
    }
    report.close();
    man.add_output(out / "recon" / "recon_h_report.txt");
    man.write();
    return 0;
}

int cmd_recon_sigma(const ExperimentConfig& cfg, const fs::path& out) {
    const fs::path mpath = out / "mesh.txt";
    verify_against_manifest(out, "mesh", mpath);
    const TriangleMesh mesh = load_mesh(mpath.string());
    Manifest man("recon-sigma", out);
    man.add_input(mpath);
    std::vector<std::pair<Vec, BoundaryCurrent>> z_list;
    for (const auto& id : cfg.boundary_currents) {
        const fs::path hpath = out / "recon" / ("h_" + id + ".field");
        verify_against_manifest(out, "recon-h", hpath);
        z_list.emplace_back(load_field(hpath.string()), Scenario::named_current(mesh, id));
        man.add_input(hpath);
    }
    SigmaReconParams params;
    params.gamma_tv = cfg.rs_gamma_tv;
    params.tau = cfg.rs_tau;
    params.eps_shift = cfg.rs_eps_shift;
    params.outer_iters = cfg.rs_outer_iters;
    params.cg_tol = cfg.rs_cg_tol;
    params.cg_max_iters = cfg.rs_cg_max_iters;
    params.sigma_min = cfg.rs_sigma_min;
    params.sigma_max = cfg.rs_sigma_max;
    const SigmaReconResult res = reconstruct_conductivity(mesh, z_list, params);
    save_field((out / "recon" / "sigma.field").string(), res.sigma);
    save_sigma_log((out / "recon" / "sigma_log.csv").string(), res);
    man.add_output(out / "recon" / "sigma.field");
    man.add_output(out / "recon" / "sigma_log.csv");
    man.add_scalar("outer_iterations", static_cast<int>(res.log.size()));
    man.add_scalar("final_objective", res.log.empty() ? 0.0 : res.log.back().objective);
    man.write();
    std::cout << "recon-sigma: " << res.log.size() << " outer iterations, sigma in ["
              << res.sigma.minCoeff() << ", " << res.sigma.maxCoeff() << "]\n";
    return 0;
}

int cmd_ensemble(const ExperimentConfig& cfg, const fs::path& out) {
    const Scenario s = Scenario::build(cfg);
    EnsembleOptions opts;
    opts.n_samples = cfg.ensemble_samples;
    opts.master_seed = cfg.ensemble_master_seed;
    opts.stats_stride = cfg.ensemble_stats_stride;
    opts.threads = cfg.threads;
    opts.out_dir = (out / "ensemble").string();
    const EnsembleRun run = run_ensemble(s, opts);
    Manifest man("ensemble", out);
    man.add_scalar("samples_requested", run.summary.n_requested);
    man.add_scalar("samples_ok", run.summary.n_ok);
    man.add_scalar("master_seed", run.summary.master_seed);
    for (const auto& id : cfg.boundary_currents)
        man.add_output(out / "ensemble" / ("mean_h_" + id + ".field"));
    if (run.summary.mean_sigma.size()) man.add_output(out / "ensemble" / "mean_sigma.field");
    if (run.summary.has_std()) man.add_output(out / "ensemble" / "std_sigma.field");
    if (run.has_stats) man.add_output(out / "ensemble" / "corr.bin");
    man.add_output(out / "ensemble" / "report.csv");
    man.write();
    std::cout << "ensemble: " << run.summary.n_ok << "/" << run.summary.n_requested
              << " samples ok\n";
    if (!run.summary.failed_samples.empty()) {
        std::cout << "  failed samples:";
        for (int i : run.summary.failed_samples) std::cout << " " << i;
        std::cout << " (see ensemble/report.csv)\n";
    }
    return 0;
}

int cmd_mu_sweep(const ExperimentConfig& cfg, const fs::path& out,
                 const std::vector<double>& mus) {
    const Scenario s = Scenario::build(cfg);
    const auto rows = mu_sweep(s, mus, cfg.threads);
    fs::create_directories(out);
    save_mu_sweep((out / "musweep.csv").string(), rows);
    Manifest man("mu-sweep", out);
    man.add_output(out / "musweep.csv");
    man.write();
    for (const auto& r : rows)
        std::cout << "mu-sweep: mu=" << r.mu << " rel_error=" << r.rel_error
                  << " beta*=" << r.beta_star << (r.hit_lower_bound ? " (floor)" : "") << "\n";
    return 0;
}

int cmd_verify(const ExperimentConfig& cfg, const fs::path& out,
               const std::vector<int>& criteria) {
    fs::create_directories(out);
    VerifySuite suite(cfg.threads);
    std::ofstream report_stream(out / "verify_report.txt");
    struct Tee : std::streambuf {
        std::streambuf* a;
        std::streambuf* b;
        int overflow(int c) override {
            if (c != EOF) {
                a->sputc(static_cast<char>(c));
                b->sputc(static_cast<char>(c));
            }
            return c;
        }
    } tee;
    tee.a = std::cout.rdbuf();
    tee.b = report_stream.rdbuf();
    std::ostream both(&tee);
    const auto results = suite.run(criteria, both);
    Manifest man("verify", out);
    man.add_output(out / "verify_report.txt");
    int failures = 0;
    for (const auto& r : results) {
        man.add_scalar(format_msg("criterion_", r.index), r.pass ? "pass" : "fail");
        if (!r.pass) ++failures;
    }
    man.write();
    return failures == 0 ? 0 : 4;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acousto-electric tomography laboratory"};
    app.require_subcommand(1);
    CliState st;
    app.add_option("--config", st.config_path, "Configuration file (sectioned key=value)");
    app.add_option("--out", st.out_dir, "Output directory for artifacts");
    app.add_option("--set", st.overrides, "Override: section.key=value (repeatable)");
    app.add_option("--threads", st.threads, "Worker threads");
    app.add_option("--seed", st.seed, "Master seed override");

    std::string mu_list = "0,0.01,0.05,0.10";
    std::string criteria_list;
    auto* c_mesh = app.add_subcommand("mesh", "Generate the disk mesh");
    auto* c_sample = app.add_subcommand("sample-c", "Draw a sound-speed realization");
    auto* c_sim = app.add_subcommand("simulate", "Run wave simulations for all sources");
    auto* c_asm = app.add_subcommand("assemble", "Assemble forward operators from waves");
    auto* c_synth = app.add_subcommand("synth-data", "Synthesize power signals");
    auto* c_rh = app.add_subcommand("recon-h", "Reconstruct power densities");
    auto* c_rs = app.add_subcommand("recon-sigma", "Reconstruct the conductivity");
    auto* c_ens = app.add_subcommand("ensemble", "Run the uncertainty ensemble");
    auto* c_mu = app.add_subcommand("mu-sweep", "Sweep the perturbation scale mu");
    c_mu->add_option("--mu-values", mu_list, "Comma-separated mu values");
    auto* c_ver = app.add_subcommand("verify", "Run the acceptance suite");
    c_ver->add_option("--criteria", criteria_list, "Comma-separated criterion numbers (1-9)");
    // global flags remain valid after the subcommand name
    for (auto* sub : app.get_subcommands({})) sub->fallthrough();

    CLI11_PARSE(app, argc, argv);

    ExperimentConfig cfg;
    try {
        cfg = load_config(st);
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    }

    const fs::path out(st.out_dir);
    try {
        if (c_mesh->parsed()) return cmd_mesh(cfg, out);
        if (c_sample->parsed()) return cmd_sample_c(cfg, out);
        if (c_sim->parsed()) return cmd_simulate(cfg, out);
        if (c_asm->parsed()) return cmd_assemble(cfg, out);
        if (c_synth->parsed()) return cmd_synth_data(cfg, out);
        if (c_rh->parsed()) return cmd_recon_h(cfg, out);
        if (c_rs->parsed()) return cmd_recon_sigma(cfg, out);
        if (c_ens->parsed()) return cmd_ensemble(cfg, out);
        if (c_mu->parsed()) {
            std::vector<double> mus;
            std::size_t pos = 0;
            while (pos != std::string::npos) {
                auto comma = mu_list.find(',', pos);
                const std::string tok = comma == std::string::npos
                                            ? mu_list.substr(pos)
                                            : mu_list.substr(pos, comma - pos);
                if (!tok.empty()) mus.push_back(std::stod(tok));
                pos = comma == std::string::npos ? std::string::npos : comma + 1;
            }
            return cmd_mu_sweep(cfg, out, mus);
        }
        if (c_ver->parsed()) {
            std::vector<int> criteria;
            std::size_t pos = 0;
            while (pos != std::string::npos && !criteria_list.empty()) {
                auto comma = criteria_list.find(',', pos);
                const std::string tok = comma == std::string::npos
                                            ? criteria_list.substr(pos)
                                            : criteria_list.substr(pos, comma - pos);
                if (!tok.empty()) criteria.push_back(std::stoi(tok));
                pos = comma == std::string::npos ? std::string::npos : comma + 1;
            }
            return cmd_verify(cfg, out, criteria);
        }
    } catch (const Error& e) {
        std::cerr << "pipeline error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
