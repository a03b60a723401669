#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mfc/core.hpp"
#include "test_support.hpp"

#include <cmath>
#include <sstream>

using namespace mfc;

TEST_CASE("hm_inner on zero and constant fields") {
    RandomField zero(3, 4, 1);
    CHECK(hm_inner(zero, zero) == 0.0);

    RandomField ones = RandomField::constant(3, 4, Vec::Ones(1));
    CHECK(hm_inner(ones, ones) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("hm_inner equals the direct ensemble sum") {
    // atoms {0,1,2}, one scenario: <X, 1> = (0+1+2)/3 = 1
    std::vector<Vec> atoms{Vec::Constant(1, 0.0), Vec::Constant(1, 1.0), Vec::Constant(1, 2.0)};
    RandomField X = RandomField::identity(atoms, 1);
    RandomField ones = RandomField::constant(3, 1, Vec::Ones(1));
    CHECK(hm_inner(X, ones) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("hm_inner rejects shape mismatch") {
    RandomField a(2, 2, 1), b(2, 3, 1);
    CHECK_THROWS_AS(hm_inner(a, b), std::invalid_argument);
}

TEST_CASE("hm_inner is symmetric, bilinear, Cauchy-Schwarz") {
    GaussianStream g(7);
    RandomField X(5, 6, 2), Y(5, 6, 2), W(5, 6, 2);
    for (auto* f : {&X, &Y, &W})
        for (double& v : f->values) v = g.next();
    CHECK(hm_inner(X, Y) == doctest::Approx(hm_inner(Y, X)).epsilon(1e-14));
    RandomField lin = X;
    lin *= 2.5;
    lin += W;
    CHECK(hm_inner(lin, Y) ==
          doctest::Approx(2.5 * hm_inner(X, Y) + hm_inner(W, Y)).epsilon(1e-12));
    CHECK(std::abs(hm_inner(X, Y)) <= hm_norm(X) * hm_norm(Y) + 1e-14);
}

TEST_CASE("pushforward of a constant field integrates like a point mass") {
    RandomField c = RandomField::constant(4, 3, Vec::Constant(1, 2.5));
    EmpiricalMeasure mu = pushforward(c);
    CHECK(mu.integrate([](Eigen::Map<const Vec> x) { return x(0) * x(0); }) ==
          doctest::Approx(6.25).epsilon(1e-15));
    CHECK(mu.mean()(0) == doctest::Approx(2.5).epsilon(1e-15));
}

TEST_CASE("pushforward of the identity field reproduces the atom measure") {
    std::vector<Vec> atoms{Vec::Constant(1, -1.0), Vec::Constant(1, 1.0)};
    EmpiricalMeasure mu = pushforward(RandomField::identity(atoms, 1));
    CHECK(mu.mean()(0) == doctest::Approx(0.0));
    CHECK(mu.second_moment() == doctest::Approx(1.0));
}

TEST_CASE("pushforward moment for atoms {0,1,2}") {
    std::vector<Vec> atoms{Vec::Constant(1, 0.0), Vec::Constant(1, 1.0), Vec::Constant(1, 2.0)};
    EmpiricalMeasure mu = pushforward(RandomField::identity(atoms, 1));
    CHECK(mu.integrate([](Eigen::Map<const Vec> x) { return x(0) * x(0); }) ==
          doctest::Approx(5.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("w2_1d basics") {
    std::vector<double> pa{0.0}, pb{3.5};
    EmpiricalMeasure da(pa, {1.0}, 1);
    EmpiricalMeasure db(pb, {1.0}, 1);
    CHECK(w2_1d(da, da) == doctest::Approx(0.0));
    CHECK(w2_1d(da, db) == doctest::Approx(3.5).epsilon(1e-15));

    EmpiricalMeasure mu({0.0, 2.0}, {0.5, 0.5}, 1);
    EmpiricalMeasure nu({1.0, 3.0}, {0.5, 0.5}, 1);
    // exhaustive coupling check: sqrt(min(1, 5)) = 1
    CHECK(w2_1d(mu, nu) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("w2_1d triangle inequality on random triples") {
    GaussianStream g(42);
    for (int rep = 0; rep < 25; ++rep) {
        auto rand_measure = [&](int count) {
            std::vector<double> pts(count), w(count, 1.0 / count);
            for (double& p : pts) p = g.next();
            return EmpiricalMeasure(pts, w, 1);
        };
        EmpiricalMeasure a = rand_measure(4), b = rand_measure(5), c = rand_measure(3);
        CHECK(w2_1d(a, c) <= w2_1d(a, b) + w2_1d(b, c) + 1e-12);
    }
}

TEST_CASE("w2_1d rejects multi-dimensional measures") {
    std::vector<double> pts{0.0, 0.0};
    EmpiricalMeasure mu(pts, {1.0}, 2);
    CHECK_THROWS_AS(w2_1d(mu, mu), std::invalid_argument);
}

TEST_CASE("brownian_paths reproducibility and moments") {
    TimeGrid grid(0.0, 1.0, 100);
    NoiseBundle a = brownian_paths(grid, 99, 8, 2);
    NoiseBundle b = brownian_paths(grid, 99, 8, 2);
    for (int s = 0; s < grid.steps; ++s)
        for (int k = 0; k < 8; ++k)
            for (int d = 0; d < 2; ++d) CHECK(a.incr(s, k, d) == b.incr(s, k, d));
    CHECK_THROWS_AS(brownian_paths(grid, 1, 0, 1), std::invalid_argument);

    // K = 1e5: per-step sample variance within 3% of dt, mean within 4 sd
    const int K = 100000;
    TimeGrid small(0.0, 0.05, 5);
    NoiseBundle big = brownian_paths(small, 2024, K, 1);
    const double dt = small.dt();
    for (int s = 0; s < small.steps; ++s) {
        double sum = 0.0, sq = 0.0;
        for (int k = 0; k < K; ++k) {
            sum += big.incr(s, k, 0);
            sq += big.incr(s, k, 0) * big.incr(s, k, 0);
        }
        const double mean = sum / K;
        const double var = sq / K - mean * mean;
        CHECK(std::abs(var - dt) <= 0.03 * dt);
        CHECK(std::abs(mean) <= 4.0 * std::sqrt(dt / K));
    }
}

TEST_CASE("noise bundle serialisation round-trips the generator") {
    TimeGrid grid(0.25, 1.25, 10);
    NoiseBundle a = brownian_paths(grid, 7, 3, 2);
    NoiseBundle b = NoiseBundle::from_json(a.to_json());
    for (int s = 0; s < grid.steps; ++s)
        for (int k = 0; k < 3; ++k)
            for (int d = 0; d < 2; ++d) CHECK(a.incr(s, k, d) == b.incr(s, k, d));
}

TEST_CASE("pairwise sum does not depend on the split") {
    GaussianStream g(5);
    std::vector<double> xs(1000);
    for (double& v : xs) v = g.next() * 1e6;
    const double whole = pairwise_sum(xs);
    const double split = pairwise_sum(xs.data(), 512) + pairwise_sum(xs.data() + 512, 488);
    CHECK(whole == doctest::Approx(split).epsilon(1e-12));
}

TEST_CASE("empirical measure validates weights") {
    CHECK_THROWS_AS(EmpiricalMeasure({0.0, 1.0}, {0.6, 0.6}, 1), std::invalid_argument);
    CHECK_THROWS_AS(EmpiricalMeasure({0.0, 1.0}, {1.5, -0.5}, 1), std::invalid_argument);
}

TEST_CASE("time grid invariants") {
    CHECK_THROWS_AS(TimeGrid(1.0, 1.0, 5), std::invalid_argument);
    CHECK_THROWS_AS(TimeGrid(0.0, 1.0, 0), std::invalid_argument);
    TimeGrid g(0.0, 1.0, 4);
    CHECK(g.node(2) == doctest::Approx(0.5));
    CHECK(g.nodes() == 5);
}
