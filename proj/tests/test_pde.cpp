#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mfc/pde.hpp"
#include "test_support.hpp"

#include <cmath>

using namespace mfc;
using namespace mfc::testing;

namespace {

PdeOptions desk_options(int probe_scenarios = 16000) {
    PdeOptions o;
    o.solver.method = SolveMethod::picard_feedback;
    o.solver.tol = 1e-8;
    o.lfd.probe_scenarios = probe_scenarios;
    return o;
}

ControlProblem setup_problem(const char* name, int M, int K, int N, std::uint64_t seed,
                             std::map<std::string, double> params = {}) {
    TimeGrid grid(0.0, 1.0, N);
    return lq_problem(params, 0.3, grid, M, K, seed, name);
}

}  // namespace

TEST_CASE("ito check: linear test function, zero drift, zero diffusion") {
    TimeGrid grid(0.0, 1.0, 10);
    ControlProblem p = setup_problem("zero_cost", 8, 16, 10, 900);
    p.eta = Mat::Zero(1, 1);
    p.noise = brownian_paths(p.grid, 900, 16, 1);
    const FieldProcess drift = zero_control(p);
    const FieldProcess X = simulate_forward(p, drift);
    ItoTest t;
    t.psi = [](VecCRef x, double) { return x(0); };
    t.psi_x = [](VecCRef, double) { return Vec(Vec::Ones(1)); };
    t.psi_xx = [](VecCRef, double) { return Mat(Mat::Zero(1, 1)); };
    CHECK(ito_check(t, p.grid, X, drift, Mat::Zero(1, 1)) <= 1e-14);
}

TEST_CASE("ito check: quadratic test function recovers the trace term") {
    // noise of the difference quotient scales as 1/sqrt(K dt), so the
    // stated K = 1e5 check runs on a coarse grid
    const int K = 100000, M = 32;
    TimeGrid grid(0.0, 1.0, 10);
    CostModel model = make_builtin("zero_cost");
    auto atoms = gaussian_atoms(M, 1, 901);
    ControlProblem p = make_problem(model, Mat::Identity(1, 1), grid,
                                    RandomField::identity(atoms, K), 902, K);
    const FieldProcess drift = zero_control(p);
    const FieldProcess X = simulate_forward(p, drift);
    ItoTest t;
    t.psi = [](VecCRef x, double) { return x.squaredNorm(); };
    t.psi_x = [](VecCRef x, double) { return Vec(2.0 * x); };
    t.psi_xx = [](VecCRef x, double) { return Mat(2.0 * Mat::Identity(x.size(), x.size())); };
    // slope of <Y^2> against the trace term 1: sup-node gap within 5%
    CHECK(ito_check(t, p.grid, X, drift, Mat::Identity(1, 1)) <= 0.05);
}

TEST_CASE("ito check: linear test function with constant drift is exact") {
    TimeGrid grid(0.0, 1.0, 20);
    ControlProblem p = setup_problem("zero_cost", 8, 32, 20, 903);
    p.eta = Mat::Zero(1, 1);
    FieldProcess drift = zero_control(p);
    for (auto& f : drift.node)
        for (double& v : f.values) v = 0.7;
    const FieldProcess X = simulate_forward(p, drift);
    ItoTest t;
    t.psi = [](VecCRef x, double) { return x(0); };
    t.psi_x = [](VecCRef, double) { return Vec(Vec::Ones(1)); };
    t.psi_xx = [](VecCRef, double) { return Mat(Mat::Zero(1, 1)); };
    CHECK(ito_check(t, p.grid, X, drift, p.eta) <= 1e-12);
}

TEST_CASE("bellman residual: zero-cost problem is identically zero") {
    ControlProblem p = setup_problem("zero_cost", 32, 16, 20, 904);
    const ResidualReport rep = bellman_residual(p, 10, desk_options());
    CHECK(std::abs(rep.residual) <= 1e-9);
    CHECK(rep.terminal_identity_error <= 1e-12);
}

TEST_CASE("bellman residual: LQ at desk resolution") {
    ControlProblem p = setup_problem("lq_scalar", 200, 100, 50, 905);
    const ResidualReport rep = bellman_residual(p, 25, desk_options());
    INFO(rep.to_json());
    CHECK(rep.normalized <= 0.05);
    CHECK(rep.terminal_identity_error <= 1e-10);
    // components sum to the residual exactly
    double total = 0.0;
    for (const auto& [name, v] : rep.components) total += v;
    CHECK(rep.residual == doctest::Approx(total).epsilon(1e-12));

    // refinement does not worsen the residual
    ControlProblem fine = setup_problem("lq_scalar", 200, 100, 100, 905);
    const ResidualReport rep2 = bellman_residual(fine, 50, desk_options());
    INFO("coarse ", rep.normalized, " fine ", rep2.normalized);
    CHECK(rep2.normalized < rep.normalized);
}

TEST_CASE("bellman trace term computed two ways agrees") {
    // matrix-flow trace versus the Gaussian quadratic form with sampled
    // auxiliary normals
    ControlProblem p = setup_problem("lq_scalar", 100, 64, 25, 906);
    PdeOptions o = desk_options();
    const OptimalQuadruple quad = solve_optimal(p, o.solver);
    REQUIRE(quad.log.converged);
    const JacobianFlowSolution mj = matrix_jacobian(p, quad, o.flow);
    double trace_matrix = 0.0;
    for (int i = 0; i < 100; ++i)
        trace_matrix += p.eta(0, 0) * atom_mean(mj.DZ0_grad, i)(0) * p.eta(0, 0) / 100.0;

    // quadratic-form route: psi = eta * N with fresh scenario Gaussians
    GaussianStream g(907);
    RandomField psi(100, 64, 1);
    for (int k = 0; k < 64; ++k) {
        const double nk = g.next();
        for (int i = 0; i < 100; ++i) psi.at(i, k, 0) = p.eta(0, 0) * nk;
    }
    const RandomField d2v = second_derivative_V(p, quad, psi, o.flow);
    const double trace_mc = hm_inner(d2v, psi);
    INFO("matrix ", trace_matrix, " sampled ", trace_mc);
    CHECK(std::abs(trace_matrix - trace_mc) <=
          0.15 * std::max({std::abs(trace_matrix), std::abs(trace_mc), 1e-6}));
}

TEST_CASE("costate equals the value gradient along the flow at a mid node") {
    ControlProblem p = setup_problem("lq_scalar", 100, 200, 40, 908);
    PdeOptions o = desk_options();
    o.solver.tol = 1e-10;
    const OptimalQuadruple quad = solve_optimal(p, o.solver);
    REQUIRE(quad.log.converged);
    const int mid = 20;

    ControlProblem restart = p;
    restart.start_node = mid;
    restart.x0 = quad.Y.at_node(mid);
    restart.x0.adapted_to = mid;
    const double v_mid = value_function(restart, o.solver);

    const RandomField psi = atom_field(100, 200, 1, 909);
    const double eps = 1e-3;
    ControlProblem shifted = restart;
    RandomField step = psi;
    step *= eps;
    shifted.x0 = restart.x0 + step;
    const double v_shift = value_function(shifted, o.solver);
    const double fd = (v_shift - v_mid) / eps;
    const double inner = hm_inner(quad.Z.at_node(mid), psi);
    INFO("fd ", fd, " <Z,psi> ", inner);
    // O(eps) + O(dt) agreement against the interior costate convention
    CHECK(std::abs(fd - inner) <= 0.05 * std::max(1.0, std::abs(fd)));
}

TEST_CASE("master residual: no measure coupling reduces to the tagged HJB") {
    ControlProblem p = setup_problem("lq_scalar", 200, 100, 50, 910);
    const ResidualReport rep = master_residual(p, Vec::Constant(1, 1.0), 25, desk_options());
    INFO(rep.to_json());
    CHECK(rep.normalized <= 0.05);
    CHECK(rep.terminal_identity_error <= 1e-10);
}

TEST_CASE("master residual: mean interaction at desk resolution, tightening") {
    ControlProblem p = setup_problem("lq_mean", 200, 100, 50, 911);
    PdeOptions o = desk_options();
    double coarse_worst = 0.0;
    for (double x : {0.0, 1.0}) {
        const ResidualReport rep = master_residual(p, Vec::Constant(1, x), 12, o);
        INFO("x=", x, " ", rep.to_json());
        CHECK(rep.normalized <= 0.10);
        CHECK(rep.terminal_identity_error <= 1e-10);
        coarse_worst = std::max(coarse_worst, rep.normalized);
    }
    // the time-derivative noise scales like N/sqrt(probe scenarios), so the
    // refinement run rebalances the estimator with 4x the probe ensemble
    ControlProblem fine = setup_problem("lq_mean", 200, 100, 100, 911);
    const ResidualReport rep2 = master_residual(fine, Vec::Constant(1, 1.0), 24,
                                                desk_options(64000));
    INFO("fine ", rep2.to_json());
    CHECK(rep2.normalized < coarse_worst);
}
