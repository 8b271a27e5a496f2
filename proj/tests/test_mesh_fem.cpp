#include "aet/fem.hpp"
#include "aet/grid.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <random>

using namespace aet;
using Catch::Approx;

TEST_CASE("disk mesh hits the paper-scale node count", "[mesh_fem]") {
    const TriangleMesh mesh = generate_disk_mesh(1.0, 20100);
    CHECK(std::abs(mesh.n_nodes() - 20100) <= 0.15 * 20100);
    CHECK(mesh.min_angle_degrees() >= 20.0);
    mesh.validate();
    // Mass matrix of the paper-scale mesh is SPD (Cholesky succeeds).
    const SpMat M = assemble_mass(mesh);
    CHECK_NOTHROW(cholesky_factor(M, 0.0));
}

TEST_CASE("smallest valid disk mesh", "[mesh_fem]") {
    const TriangleMesh mesh = generate_disk_mesh(1.0, 4);
    CHECK(mesh.n_nodes() == 4);
    CHECK(mesh.n_triangles() == 3);
    mesh.validate();
    CHECK(mesh.min_angle_degrees() >= 20.0);
}

TEST_CASE("mesh area approximates the disk", "[mesh_fem]") {
    const TriangleMesh mesh = generate_disk_mesh(1.0, 500);
    CHECK(mesh.total_area() == Approx(std::numbers::pi).epsilon(0.01));
}

TEST_CASE("mesh generation is deterministic and rejects bad input", "[mesh_fem]") {
    const TriangleMesh a = generate_disk_mesh(1.0, 777);
    const TriangleMesh b = generate_disk_mesh(1.0, 777);
    REQUIRE(a.n_nodes() == b.n_nodes());
    for (int i = 0; i < a.n_nodes(); ++i) REQUIRE(a.nodes[i] == b.nodes[i]);
    CHECK_THROWS_AS(generate_disk_mesh(-1.0, 100), Error);
    CHECK_THROWS_AS(generate_disk_mesh(1.0, 3), Error);
}

TEST_CASE("mesh file round trip", "[mesh_fem]") {
    const TriangleMesh mesh = generate_disk_mesh(1.0, 200);
    const std::string path = "test_mesh_roundtrip.txt";
    save_mesh(path, mesh);
    const TriangleMesh back = load_mesh(path);
    REQUIRE(back.n_nodes() == mesh.n_nodes());
    REQUIRE(back.n_triangles() == mesh.n_triangles());
    for (int i = 0; i < mesh.n_nodes(); ++i) CHECK(back.nodes[i] == mesh.nodes[i]);
    std::remove(path.c_str());
}

namespace {
TriangleMesh unit_right_triangle() {
    TriangleMesh m;
    m.nodes = {{0, 0}, {1, 0}, {0, 1}};
    m.triangles = {{0, 1, 2}};
    m.boundary_nodes = {0, 1, 2};
    m.boundary_edges = {{0, 1}, {1, 2}, {2, 0}};
    return m;
}
}  // namespace

TEST_CASE("P1 element mass matrix is analytic", "[mesh_fem]") {
    const TriangleMesh tri = unit_right_triangle();
    const SpMat M = assemble_mass(tri);
    const double A = 0.5;
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
            CHECK(M.coeff(a, b) == Approx(A / 12.0 * (a == b ? 2.0 : 1.0)).margin(1e-15));
}

TEST_CASE("mass matrix sums to the domain area and is linear in the weight", "[mesh_fem]") {
    const TriangleMesh mesh = generate_disk_mesh(1.0, 900);
    const SpMat M = assemble_mass(mesh);
    const Vec ones = Vec::Ones(mesh.n_nodes());
    CHECK(ones.dot(M * ones) == Approx(std::numbers::pi).epsilon(0.01));

    const Vec two = Vec::Constant(mesh.n_nodes(), 2.0);
    const SpMat M2 = assemble_mass(mesh, &two);
    CHECK(SpMat(M2 - 2.0 * M).norm() <= 1e-12 * M.norm());

    Vec bad = Vec::Ones(mesh.n_nodes());
    bad[5] = 0.0;
    CHECK_THROWS_AS(assemble_mass(mesh, &bad), Error);
}

TEST_CASE("stiffness has constants in its nullspace and scales linearly", "[mesh_fem]") {
    const TriangleMesh mesh = generate_disk_mesh(1.0, 900);
    const Vec ones = Vec::Ones(mesh.n_nodes());
    const SpMat K = assemble_stiffness(mesh, ones);
    double row_scale = 0;
    for (int i = 0; i < K.rows(); ++i) row_scale = std::max(row_scale, K.row(i).cwiseAbs().sum());
    CHECK((K * ones).cwiseAbs().maxCoeff() <= 1e-10 * row_scale);

    // int |grad x1|^2 over the disk = area.
    Vec x1(mesh.n_nodes());
    for (int i = 0; i < mesh.n_nodes(); ++i) x1[i] = mesh.nodes[i].x();
    CHECK(x1.dot(K * x1) == Approx(std::numbers::pi).epsilon(0.01));

    const Vec three = Vec::Constant(mesh.n_nodes(), 3.0);
    const SpMat K3 = assemble_stiffness(mesh, three);
    CHECK(SpMat(K3 - 3.0 * K).norm() <= 1e-12 * K.norm());

    Vec bad = ones;
    bad[0] = -1.0;
    CHECK_THROWS_AS(assemble_stiffness(mesh, bad), Error);
}

TEST_CASE("stiffness is positive on the complement of constants", "[mesh_fem]") {
    const TriangleMesh mesh = generate_disk_mesh(1.0, 300);
    const SpMat K = assemble_stiffness(mesh, Vec::Ones(mesh.n_nodes()));
    std::mt19937_64 rng(5);
    std::normal_distribution<double> gauss;
    for (int rep = 0; rep < 5; ++rep) {
        Vec v(mesh.n_nodes());
        for (int i = 0; i < mesh.n_nodes(); ++i) v[i] = gauss(rng);
        v.array() -= v.mean();  // remove the constant component
        CHECK(v.dot(K * v) > 0);
    }
}

TEST_CASE("cholesky factor: identity, shifts and the mass-norm identity", "[mesh_fem]") {
    SpMat I(4, 4);
    I.setIdentity();
    const CholeskyFactor ci(I, 0.0);
    for (int k = 0; k < 4; ++k) {
        Vec e = Vec::Zero(4);
        e[k] = 1.0;
        CHECK((ci.mult_lower(e) - e).norm() == Approx(0.0).margin(1e-14));
    }

    const TriangleMesh mesh = generate_disk_mesh(1.0, 400);
    const SpMat K = assemble_stiffness(mesh, Vec::Ones(mesh.n_nodes()));
    CHECK_THROWS_AS(cholesky_factor(K, 0.0), Error);  // singular: constants
    CHECK_NOTHROW(cholesky_factor(K, 1e-8));

    const SpMat M = assemble_mass(mesh);
    const CholeskyFactor cm(M, 0.0);
    std::mt19937_64 rng(17);
    std::normal_distribution<double> gauss;
    for (int rep = 0; rep < 5; ++rep) {
        Vec v(mesh.n_nodes());
        for (int i = 0; i < mesh.n_nodes(); ++i) v[i] = gauss(rng);
        const double lhs = cm.mult_lower_t(v).squaredNorm();
        const double rhs = v.dot(M * v);
        CHECK(std::abs(lhs - rhs) <= 1e-10 * rhs);
        // solve/mult are inverse pairs
        CHECK((cm.solve_lower(cm.mult_lower(v)) - v).norm() <= 1e-10 * v.norm());
        CHECK((cm.solve_lower_t(cm.mult_lower_t(v)) - v).norm() <= 1e-10 * v.norm());
    }
}

TEST_CASE("partition of unity: mass row sums equal basis integrals", "[mesh_fem]") {
    const TriangleMesh mesh = generate_disk_mesh(1.0, 500);
    const SpMat M = assemble_mass(mesh);
    const Vec lumped = lumped_mass(mesh);
    const Vec rowsum = M * Vec::Ones(mesh.n_nodes());
    CHECK((rowsum - lumped).cwiseAbs().maxCoeff() <= 1e-13);
    CHECK(rowsum.sum() == Approx(mesh.total_area()).epsilon(1e-12));
}

TEST_CASE("grid-to-mesh interpolation reproduces constants and linears", "[mesh_fem]") {
    const TriangleMesh mesh = generate_disk_mesh(1.0, 300);
    CartesianGrid grid;
    grid.n = 64;
    GridField f = make_grid_field(grid, 5.0);
    const Vec c = interpolate_grid_to_mesh(f, mesh);
    CHECK((c.array() - 5.0).abs().maxCoeff() <= 1e-13);

    for (int i = 0; i < grid.n; ++i)
        for (int j = 0; j < grid.n; ++j) f.at(i, j) = grid.coord(i);
    const Vec lin = interpolate_grid_to_mesh(f, mesh);
    for (int k = 0; k < mesh.n_nodes(); ++k)
        CHECK(std::abs(lin[k] - mesh.nodes[k].x()) <= 1e-12);
}

TEST_CASE("grid-to-mesh interpolation converges at second order", "[mesh_fem]") {
    const TriangleMesh mesh = generate_disk_mesh(1.0, 400);
    const auto gaussian = [](double x, double y) {
        return std::exp(-2.0 * (x * x + y * y)) * std::cos(3.0 * x);
    };
    const auto max_err = [&](int n) {
        CartesianGrid grid;
        grid.n = n;
        GridField f = make_grid_field(grid);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) f.at(i, j) = gaussian(grid.coord(i), grid.coord(j));
        const Vec v = interpolate_grid_to_mesh(f, mesh);
        double worst = 0;
        for (int k = 0; k < mesh.n_nodes(); ++k)
            worst = std::max(worst,
                             std::abs(v[k] - gaussian(mesh.nodes[k].x(), mesh.nodes[k].y())));
        return worst;
    };
    const double e1 = max_err(81);
    const double e2 = max_err(161);  // same endpoints, halved spacing
    CHECK(e1 / e2 > 3.2);
    CHECK(e1 / e2 < 4.8);
}

TEST_CASE("interpolation rejects nodes outside the grid", "[mesh_fem]") {
    const TriangleMesh mesh = generate_disk_mesh(1.0, 100);
    CartesianGrid grid;
    grid.n = 32;
    grid.half_width = 0.5;  // disk pokes out
    GridField f = make_grid_field(grid);
    CHECK_THROWS_AS(interpolate_grid_to_mesh(f, mesh), Error);
}

TEST_CASE("nodal field file round trip", "[mesh_fem]") {
    Vec v(5);
    v << 1.0, -2.5, 3.25e-17, 4.0, 5.5;
    const std::string path = "test_field_roundtrip.field";
    save_field(path, v);
    const Vec back = load_field(path);
    REQUIRE(back.size() == v.size());
    for (int i = 0; i < 5; ++i) CHECK(back[i] == v[i]);
    std::remove(path.c_str());
}
