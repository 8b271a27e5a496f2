#ifndef AET_GRID_HPP
#define AET_GRID_HPP

#include "aet/mesh.hpp"

namespace aet {

/// Square grid [-L, L]^2 with an inner observation square [-L', L']^2.
/// The damping layer of the wave solver lives between the two.
struct CartesianGrid {
    double half_width = 1.6;        // L
    double inner_half_width = 1.1;  // L'
    int n = 512;                    // points per side

    double spacing() const { return 2.0 * half_width / (n - 1); }
    double coord(int i) const { return -half_width + spacing() * i; }

    void validate(double domain_radius = 1.0) const {
        require(n >= 8, "grid: too few points");
        require(inner_half_width < half_width, "grid: L' must be < L");
        require(domain_radius <= inner_half_width,
                "grid: the disk does not fit inside the inner square");
    }
};

/// Scalar field sampled on a CartesianGrid, row-major with index i*n + j for
/// point (coord(i), coord(j)).
struct GridField {
    CartesianGrid grid;
    Vec values;

    double at(int i, int j) const { return values[static_cast<Eigen::Index>(i) * grid.n + j]; }
    double& at(int i, int j) { return values[static_cast<Eigen::Index>(i) * grid.n + j]; }
};

inline GridField make_grid_field(const CartesianGrid& grid, double fill = 0.0) {
    GridField f;
    f.grid = grid;
    f.values = Vec::Constant(static_cast<Eigen::Index>(grid.n) * grid.n, fill);
    return f;
}

/// Bilinear interpolation at (x, y); fails outside the grid bounding box.
inline double bilinear(const GridField& f, double x, double y) {
    const auto& g = f.grid;
    const double h = g.spacing();
    double sx = (x + g.half_width) / h;
    double sy = (y + g.half_width) / h;
    require(sx >= -1e-12 && sy >= -1e-12 && sx <= g.n - 1 + 1e-12 && sy <= g.n - 1 + 1e-12,
            format_msg("bilinear: point (", x, ", ", y, ") outside grid"));
    sx = std::clamp(sx, 0.0, static_cast<double>(g.n - 1));
    sy = std::clamp(sy, 0.0, static_cast<double>(g.n - 1));
    const int i = std::min(static_cast<int>(sx), g.n - 2);
    const int j = std::min(static_cast<int>(sy), g.n - 2);
    const double tx = sx - i, ty = sy - j;
    return (1 - tx) * (1 - ty) * f.at(i, j) + tx * (1 - ty) * f.at(i + 1, j) +
           (1 - tx) * ty * f.at(i, j + 1) + tx * ty * f.at(i + 1, j + 1);
}

/// Precomputed grid-to-mesh transfer: bilinear weights for every mesh node.
/// Building it once amortizes the lookup across recorded wave frames.
class MeshInterpolator {
public:
    MeshInterpolator(const CartesianGrid& grid, const TriangleMesh& mesh)
        : MeshInterpolator(grid, mesh.nodes) {}

    MeshInterpolator(const CartesianGrid& grid, const std::vector<Eigen::Vector2d>& points)
        : grid_(grid) {
        const double h = grid.spacing();
        const int n = grid.n;
        cells_.reserve(points.size());
        for (const auto& p : points) {
            const double sx = (p.x() + grid.half_width) / h;
            const double sy = (p.y() + grid.half_width) / h;
            require(sx >= -1e-12 && sy >= -1e-12 && sx <= n - 1 + 1e-12 && sy <= n - 1 + 1e-12,
                    "interpolate_grid_to_mesh: mesh node outside grid");
            const int i = std::min(static_cast<int>(std::clamp(sx, 0.0, double(n - 1))), n - 2);
            const int j = std::min(static_cast<int>(std::clamp(sy, 0.0, double(n - 1))), n - 2);
            const double tx = std::clamp(sx - i, 0.0, 1.0);
            const double ty = std::clamp(sy - j, 0.0, 1.0);
            Entry e;
            e.base = static_cast<Eigen::Index>(i) * n + j;
            e.w00 = (1 - tx) * (1 - ty);
            e.w10 = tx * (1 - ty);
            e.w01 = (1 - tx) * ty;
            e.w11 = tx * ty;
            cells_.push_back(e);
        }
    }

    int n_nodes() const { return static_cast<int>(cells_.size()); }

    /// Interpolates grid values (row-major, as in GridField) onto mesh nodes.
    void apply(const double* grid_values, double* out) const {
        const int n = grid_.n;
        for (std::size_t k = 0; k < cells_.size(); ++k) {
            const Entry& e = cells_[k];
            out[k] = e.w00 * grid_values[e.base] + e.w10 * grid_values[e.base + n] +
                     e.w01 * grid_values[e.base + 1] + e.w11 * grid_values[e.base + n + 1];
        }
    }

    Vec apply(const Vec& grid_values) const {
        Vec out(n_nodes());
        apply(grid_values.data(), out.data());
        return out;
    }

private:
    struct Entry {
        Eigen::Index base;
        double w00, w10, w01, w11;
    };
    CartesianGrid grid_;
    std::vector<Entry> cells_;
};

inline Vec interpolate_grid_to_mesh(const GridField& f, const TriangleMesh& mesh) {
    return MeshInterpolator(f.grid, mesh).apply(f.values);
}

/// Sound speed on the wave grid, nondimensionalized so the background speed
/// is 1. Admissibility: lambda <= c <= 1/lambda with lambda in (0, 1).
struct SoundSpeedField {
    GridField field;
    double lower_bound = 0.0;  // lambda
    enum class Label { True, Assumed } label = Label::True;

    double min_value() const { return field.values.minCoeff(); }
    double max_value() const { return field.values.maxCoeff(); }

    void validate() const {
        const double lo = min_value(), hi = max_value();
        require(lo > 0, "sound speed: nonpositive value");
        require(lower_bound > 0 && lower_bound < 1, "sound speed: lambda must be in (0,1)");
        require(lo >= lower_bound - 1e-12 && hi <= 1.0 / lower_bound + 1e-12,
                "sound speed: values outside admissible band [lambda, 1/lambda]");
    }
};

inline SoundSpeedField constant_sound_speed(const CartesianGrid& grid, double c,
                                            SoundSpeedField::Label label) {
    SoundSpeedField s;
    s.field = make_grid_field(grid, c);
    s.lower_bound = std::min(0.99 * c, 0.99 / c);
    s.label = label;
    s.validate();
    return s;
}

// Binary field file: text header "c N=<N_g> L=<L>\n", then row-major doubles.
inline void save_sound_speed(const std::string& path, const SoundSpeedField& s) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "save_sound_speed: cannot open " + path);
    out << "c N=" << s.field.grid.n << " L=" << fmt_double(s.field.grid.half_width) << "\n";
    out.write(reinterpret_cast<const char*>(s.field.values.data()),
              static_cast<std::streamsize>(sizeof(double) * s.field.values.size()));
    require(out.good(), "save_sound_speed: write failure on " + path);
}

inline SoundSpeedField load_sound_speed(const std::string& path,
                                        SoundSpeedField::Label label) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "load_sound_speed: cannot open " + path);
    std::string header;
    std::getline(in, header);
    int n = 0;
    double L = 0;
    require(std::sscanf(header.c_str(), "c N=%d L=%lf", &n, &L) == 2,
            "load_sound_speed: bad header in " + path);
    SoundSpeedField s;
    s.field.grid.n = n;
    s.field.grid.half_width = L;
    s.field.grid.inner_half_width = 0.6875 * L;  // restored by callers if they care
    s.field.values.resize(static_cast<Eigen::Index>(n) * n);
    in.read(reinterpret_cast<char*>(s.field.values.data()),
            static_cast<std::streamsize>(sizeof(double) * s.field.values.size()));
    require(in.gcount() == static_cast<std::streamsize>(sizeof(double) * s.field.values.size()),
            "load_sound_speed: truncated file " + path);
    const double lo = s.field.values.minCoeff(), hi = s.field.values.maxCoeff();
    s.lower_bound = std::min(0.999 * lo, 0.999 / hi);
    s.label = label;
    return s;
}

}  // namespace aet

#endif
