#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mfc/oracle.hpp"
#include "test_support.hpp"

#include <cmath>

using namespace mfc;

TEST_CASE("riccati: zero weights give zero gain and value offset only") {
    TimeGrid grid(0.0, 1.0, 50);
    LqParams p;
    p.q = 0.0;
    p.q_T = 0.0;
    p.r = 1.0;
    RiccatiSolution sol = riccati_solve(p, grid);
    for (double v : sol.P) CHECK(v == doctest::Approx(0.0));
    CHECK(sol.feedback(0, 1.7, 0.0) == doctest::Approx(0.0));
    CHECK(sol.value(2.0, 0.3) == doctest::Approx(0.0));
}

TEST_CASE("riccati: analytic solution P(t) = 1/(1+T-t)") {
    // dP/ds = P^2, P(T) = 1  =>  P(t) = 1/(1 + (T - t))
    TimeGrid grid(0.0, 1.0, 40);
    LqParams p;
    p.q = 0.0;
    p.q_T = 1.0;
    p.r = 1.0;
    RiccatiSolution sol = riccati_solve(p, grid);
    for (int k = 0; k <= grid.steps; ++k) {
        const double expected = 1.0 / (1.0 + grid.T - grid.node(k));
        CHECK(std::abs(sol.P[k] - expected) <= 1e-8);
    }
}

TEST_CASE("riccati: RK4 self-convergence under substep halving") {
    TimeGrid grid(0.0, 1.0, 50);
    LqParams p;
    p.q = 1.0;
    p.q_T = 1.0;
    p.r = 1.0;
    p.lambda_bar = 0.5;
    RiccatiSolution coarse = riccati_solve(p, grid, 10);
    RiccatiSolution fine = riccati_solve(p, grid, 20);
    for (int k = 0; k <= grid.steps; ++k) CHECK(std::abs(coarse.P[k] - fine.P[k]) <= 1e-10);
}

TEST_CASE("riccati: blow-up detection for concave running cost") {
    TimeGrid grid(0.0, 1.0, 50);
    LqParams p;
    p.q = -10.0;
    p.q_T = 0.0;
    p.r = 1.0;
    CHECK_THROWS_AS(riccati_solve(p, grid), std::runtime_error);
}

TEST_CASE("riccati: mean-coupled gain solves the combined equation") {
    // Phi = P + R must satisfy the Riccati equation with weight q + s_bar
    TimeGrid grid(0.0, 1.0, 50);
    LqParams pa;
    pa.q = 1.0;
    pa.q_T = 1.0;
    pa.r = 1.0;
    pa.s_bar = 0.5;
    RiccatiSolution sol = riccati_solve(pa, grid);
    LqParams pb = pa;
    pb.q = pa.q + pa.s_bar;
    pb.s_bar = 0.0;
    RiccatiSolution ref = riccati_solve(pb, grid);
    for (int k = 0; k <= grid.steps; ++k) CHECK(sol.Phi[k] == doctest::Approx(ref.P[k]).epsilon(1e-12));
    CHECK(sol.R_at(grid.steps) == doctest::Approx(0.0));
}

TEST_CASE("riccati value invariant under atom permutation of the ensemble") {
    TimeGrid grid(0.0, 1.0, 20);
    LqParams p;
    p.q = 1.0;
    p.q_T = 1.0;
    p.r = 1.0;
    p.eta = 0.3;
    RiccatiSolution sol = riccati_solve(p, grid);
    auto atoms = mfc::testing::gaussian_atoms(40, 1, 5);
    double m2 = 0.0, mean = 0.0;
    for (const auto& a : atoms) {
        m2 += a(0) * a(0) / atoms.size();
        mean += a(0) / atoms.size();
    }
    const double v1 = sol.value(m2, mean);
    std::reverse(atoms.begin(), atoms.end());
    double m2b = 0.0, meanb = 0.0;
    for (const auto& a : atoms) {
        m2b += a(0) * a(0) / atoms.size();
        meanb += a(0) / atoms.size();
    }
    CHECK(v1 == doctest::Approx(sol.value(m2b, meanb)).epsilon(1e-12));
}

TEST_CASE("fd_gradient_oracle: zero direction gives zero") {
    TimeGrid grid(0.0, 1.0, 10);
    ControlProblem prob = mfc::testing::lq_problem({{"q", 1.0}, {"q_T", 1.0}}, 0.2, grid, 8, 4, 11);
    FieldProcess u = mfc::testing::atom_control(prob, 3);
    FieldProcess psi = zero_control(prob);
    CHECK(fd_gradient_oracle(prob, u, psi, 1e-3) == doctest::Approx(0.0));
}

TEST_CASE("dzdnu oracle vanishes without mean coupling") {
    TimeGrid grid(0.0, 1.0, 30);
    LqParams p;
    p.q = 1.0;
    p.q_T = 1.0;
    p.r = 1.0;
    RiccatiSolution sol = riccati_solve(p, grid);
    CHECK(lq_dzdnu_oracle(sol, 0.4, 1.3) == doctest::Approx(0.0));
}

TEST_CASE("dzdnu oracle slope matches the coupling gain for centered measures") {
    // with mean0 = 0 the representative is exactly R(t0) * x
    TimeGrid grid(0.0, 1.0, 50);
    LqParams p;
    p.q = 1.0;
    p.q_T = 1.0;
    p.r = 1.0;
    p.s_bar = 0.5;
    RiccatiSolution sol = riccati_solve(p, grid);
    const double at1 = lq_dzdnu_oracle(sol, 0.0, 1.0);
    const double at2 = lq_dzdnu_oracle(sol, 0.0, 2.0);
    CHECK(at2 == doctest::Approx(2.0 * at1).epsilon(1e-9));
    CHECK(at1 == doctest::Approx(sol.R_at(0)).epsilon(1e-4));
    CHECK(lq_dzdnu_oracle(sol, 0.0, 0.0) == doctest::Approx(0.0).epsilon(1e-12));
}
