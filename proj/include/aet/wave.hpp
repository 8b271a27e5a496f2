#ifndef AET_WAVE_HPP
#define AET_WAVE_HPP

#include "aet/grid.hpp"

#include <numbers>

namespace aet {

/// Transducer layout: source_count arcs uniformly distributed in angle on the
/// rim of the unit disk, each made of points_per_source in-phase point sources
/// spanning arc_degrees, radiating radially inward. The pulse is a single
/// sine cycle under a Hann window.
struct SourceConfig {
    int source_count = 36;
    int points_per_source = 9;
    double arc_degrees = 10.0;
    double disk_radius = 1.0;
    double frequency = 2.5;   // background wavelength = 1/frequency (c_bg = 1)
    double cycles = 1.0;
    double amplitude = 1.0;

    double pulse_duration() const { return cycles / frequency; }

    /// Pulse waveform sample at time t (zero outside [0, pulse_duration]).
    double waveform(double t) const {
        const double Tp = pulse_duration();
        if (t <= 0.0 || t >= Tp) return 0.0;
        const double env = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * t / Tp));
        return amplitude * std::sin(2.0 * std::numbers::pi * frequency * t) * env;
    }

    Vec sampled_waveform(double dt, int steps) const {
        Vec w(steps);
        for (int i = 0; i < steps; ++i) w[i] = waveform(i * dt);
        return w;
    }

    /// Point-source positions of transducer k (on the arc of the rim).
    std::vector<Eigen::Vector2d> source_points(int k) const {
        require(k >= 0 && k < source_count, "source index out of range");
        const double center = 2.0 * std::numbers::pi * k / source_count;
        const double half_span = 0.5 * arc_degrees * std::numbers::pi / 180.0;
        std::vector<Eigen::Vector2d> pts;
        pts.reserve(points_per_source);
        for (int i = 0; i < points_per_source; ++i) {
            const double u = points_per_source == 1
                                 ? 0.0
                                 : -1.0 + 2.0 * i / (points_per_source - 1.0);
            const double a = center + u * half_span;
            pts.emplace_back(disk_radius * std::cos(a), disk_radius * std::sin(a));
        }
        return pts;
    }
};

/// Wave snapshots restricted to mesh nodes on a uniform time grid
/// t_i = i*dt, i = 0..steps (zero initial data, so row 0 is zero).
struct WaveRecord {
    int source_id = 0;
    double dt = 0.0;       // recording step
    double final_time = 0.0;
    RowMat p;              // (steps+1) x n_nodes

    int steps() const { return static_cast<int>(p.rows()) - 1; }
    int n_nodes() const { return static_cast<int>(p.cols()); }
};

/// Optional per-record-step diagnostic of sum(p^2)*h^2 over [-L',L']^2.
struct EnergyTrace {
    std::vector<double> time;
    std::vector<double> interior_energy;
};

inline double cfl_limit(const CartesianGrid& grid, const SoundSpeedField& c) {
    return 0.5 * grid.spacing() / (std::numbers::sqrt2 * c.max_value());
}

/// Explicit second-order leapfrog for (d_tt - c^2 Lap) p = S on [-L, L]^2
/// with a quadratic-profile damping sponge outside [-L', L']^2 and zero
/// initial data. Records p at mesh nodes every record_stride steps.
///
/// Preconditions: dt <= 0.5 h / (sqrt(2) max c); all source points inside
/// the grid. Violations fail explicitly.
inline WaveRecord simulate_wave(const CartesianGrid& grid, const SoundSpeedField& c,
                                const SourceConfig& src, int source_index, double dt, double T,
                                const MeshInterpolator& interp, int record_stride = 1,
                                EnergyTrace* energy = nullptr, double sponge_strength = 1.0) {
    grid.validate(src.disk_radius);
    require(c.field.grid.n == grid.n &&
                std::abs(c.field.grid.half_width - grid.half_width) < 1e-12,
            "simulate_wave: sound speed grid mismatch");
    require(T > 0, "simulate_wave: T must be positive");
    require(dt > 0 && dt <= cfl_limit(grid, c) * (1.0 + 1e-9),
            format_msg("simulate_wave: dt=", dt, " violates the stability bound ",
                       cfl_limit(grid, c)));
    require(record_stride >= 1, "simulate_wave: record_stride must be >= 1");

    const int n = grid.n;
    const double h = grid.spacing();
    const double Lp = grid.inner_half_width;
    const double W = grid.half_width - Lp;

    // Source splat: mollified delta (truncated Gaussian, unit mass). The
    // smoothing strips grid-scale spatial content whose numerical dispersion
    // would leak ahead of the physical wavefront.
    struct Splat {
        Eigen::Index idx;
        double w;
    };
    std::vector<Splat> splats;
    const double splat_sigma = 1.5 * h;
    const int splat_rad = 5;  // ~3.3 sigma
    for (const auto& pt : src.source_points(source_index)) {
        require(std::abs(pt.x()) < grid.half_width - splat_rad * h &&
                    std::abs(pt.y()) < grid.half_width - splat_rad * h,
                "simulate_wave: source point outside grid");
        const int ic = static_cast<int>(std::lround((pt.x() + grid.half_width) / h));
        const int jc = static_cast<int>(std::lround((pt.y() + grid.half_width) / h));
        std::vector<Splat> local;
        double mass = 0;
        for (int di = -splat_rad; di <= splat_rad; ++di)
            for (int dj = -splat_rad; dj <= splat_rad; ++dj) {
                const double dx = grid.coord(ic + di) - pt.x();
                const double dy = grid.coord(jc + dj) - pt.y();
                const double w = std::exp(-0.5 * (dx * dx + dy * dy) / (splat_sigma * splat_sigma));
                if (w < 1e-6) continue;
                local.push_back({static_cast<Eigen::Index>(ic + di) * n + jc + dj, w});
                mass += w * h * h;
            }
        for (auto& s : local) splats.push_back({s.idx, s.w / mass});
    }

    const Eigen::Index nn = static_cast<Eigen::Index>(n) * n;
    Vec coef(nn);   // (c dt / h)^2
    Vec damp(nn);   // multiplicative sponge factor per step
    for (int i = 0; i < n; ++i) {
        const double x = grid.coord(i);
        for (int j = 0; j < n; ++j) {
            const double y = grid.coord(j);
            const Eigen::Index id = static_cast<Eigen::Index>(i) * n + j;
            const double cd = c.field.values[id] * dt / h;
            coef[id] = cd * cd;
            const double zeta = std::max({std::abs(x) - Lp, std::abs(y) - Lp, 0.0});
            const double q = zeta / W;
            damp[id] = std::exp(-sponge_strength * q * q * dt);
        }
    }

    const int total_steps = static_cast<int>(std::llround(T / dt));
    const int n_records = total_steps / record_stride;

    Vec p_prev = Vec::Zero(nn), p_cur = Vec::Zero(nn), p_next = Vec::Zero(nn);

    WaveRecord rec;
    rec.source_id = source_index;
    rec.dt = dt * record_stride;
    rec.final_time = rec.dt * n_records;
    rec.p.setZero(n_records + 1, interp.n_nodes());

    const auto record_row = [&](int row, const Vec& state) {
        interp.apply(state.data(), rec.p.row(row).data());
        if (energy) {
            double e = 0.0;
            for (int i = 0; i < n; ++i) {
                if (std::abs(grid.coord(i)) > Lp) continue;
                const double* pr = state.data() + static_cast<Eigen::Index>(i) * n;
                for (int j = 0; j < n; ++j)
                    if (std::abs(grid.coord(j)) <= Lp) e += pr[j] * pr[j];
            }
            energy->time.push_back(row * rec.dt);
            energy->interior_energy.push_back(e * h * h);
        }
    };
    record_row(0, p_cur);

    // One-way (first-order outflow) coefficient per outer-edge point; the
    // sponge handles grazing incidence the outflow condition lets through.
    const auto mur = [&](Eigen::Index edge, Eigen::Index inner, const Vec& pnew, const Vec& pcur) {
        const double cd = c.field.values[edge] * dt;
        const double k = (cd - h) / (cd + h);
        return pcur[inner] + k * (pnew[inner] - pcur[edge]);
    };

    const double dt2 = dt * dt;
    for (int step = 1; step <= total_steps; ++step) {
        const double t_src = (step - 1) * dt;
        const double* pc = p_cur.data();
        double* pn = p_next.data();
        const double* cf = coef.data();
        for (int i = 1; i < n - 1; ++i) {
            const Eigen::Index row = static_cast<Eigen::Index>(i) * n;
            for (int j = 1; j < n - 1; ++j) {
                const Eigen::Index id = row + j;
                const double lap = pc[id - n] + pc[id + n] + pc[id - 1] + pc[id + 1] - 4.0 * pc[id];
                pn[id] = 2.0 * pc[id] - p_prev[id] + cf[id] * lap;
            }
        }
        for (int k = 1; k < n - 1; ++k) {
            p_next[k] = mur(k, n + k, p_next, p_cur);                                   // i = 0
            p_next[static_cast<Eigen::Index>(n - 1) * n + k] =
                mur(static_cast<Eigen::Index>(n - 1) * n + k,
                    static_cast<Eigen::Index>(n - 2) * n + k, p_next, p_cur);           // i = n-1
            p_next[static_cast<Eigen::Index>(k) * n] =
                mur(static_cast<Eigen::Index>(k) * n, static_cast<Eigen::Index>(k) * n + 1,
                    p_next, p_cur);                                                     // j = 0
            p_next[static_cast<Eigen::Index>(k) * n + n - 1] =
                mur(static_cast<Eigen::Index>(k) * n + n - 1,
                    static_cast<Eigen::Index>(k) * n + n - 2, p_next, p_cur);           // j = n-1
        }
        const double w = src.waveform(t_src);
        if (w != 0.0)
            for (const auto& s : splats) p_next[s.idx] += dt2 * w * s.w;
        // Sponge damps both time levels so the layer stays reflection-quiet.
        p_next.array() *= damp.array();
        p_cur.array() *= damp.array();

        std::swap(p_prev, p_cur);
        std::swap(p_cur, p_next);
        if (step % record_stride == 0) record_row(step / record_stride, p_cur);
    }
    return rec;
}

/// sup over recorded times of the nodal l2 norm of the difference; the
/// computable proxy for |p~ - p| in L^inf(0,T; L^2).
inline double wave_discrepancy(const WaveRecord& a, const WaveRecord& b) {
    require(a.p.rows() == b.p.rows() && a.p.cols() == b.p.cols() &&
                std::abs(a.dt - b.dt) <= 1e-12 * std::max(a.dt, b.dt),
            "wave_discrepancy: records use different discretizations");
    double worst = 0.0;
    for (Eigen::Index i = 0; i < a.p.rows(); ++i)
        worst = std::max(worst, (a.p.row(i) - b.p.row(i)).norm());
    return worst;
}

// Binary record file: "wave m=<steps> n=<nodes> dt=<dt> src=<id>\n" then
// (m+1) x n row-major doubles.
inline void save_wave_record(const std::string& path, const WaveRecord& rec) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "save_wave_record: cannot open " + path);
    out << "wave m=" << rec.steps() << " n=" << rec.n_nodes() << " dt=" << fmt_double(rec.dt)
        << " src=" << rec.source_id << "\n";
    out.write(reinterpret_cast<const char*>(rec.p.data()),
              static_cast<std::streamsize>(sizeof(double) * rec.p.size()));
    require(out.good(), "save_wave_record: write failure on " + path);
}

inline WaveRecord load_wave_record(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "load_wave_record: cannot open " + path);
    std::string header;
    std::getline(in, header);
    int m = 0, n = 0, src = 0;
    double dt = 0;
    require(std::sscanf(header.c_str(), "wave m=%d n=%d dt=%lf src=%d", &m, &n, &dt, &src) == 4,
            "load_wave_record: bad header in " + path);
    WaveRecord rec;
    rec.source_id = src;
    rec.dt = dt;
    rec.final_time = dt * m;
    rec.p.resize(m + 1, n);
    in.read(reinterpret_cast<char*>(rec.p.data()),
            static_cast<std::streamsize>(sizeof(double) * rec.p.size()));
    require(in.gcount() == static_cast<std::streamsize>(sizeof(double) * rec.p.size()),
            "load_wave_record: truncated file " + path);
    return rec;
}

}  // namespace aet

#endif
