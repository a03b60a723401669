// Acceptance suite: one pass/fail line per criterion, exit 0 iff all pass.
//
// Desk scale: scalar state, M = 200 atoms, K in [100, 1000] scenarios,
// N = 50 steps, horizon [0, 1], eta = 0.3. Tolerances are pinned inline.

#include "mfc/export.hpp"
#include "mfc/lfd.hpp"
#include "mfc/oracle.hpp"
#include "mfc/pde.hpp"

#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

using namespace mfc;

namespace {

int g_pass = 0, g_fail = 0;
int g_only = 0;  // run a single criterion when nonzero

void report(int id, const char* title, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %2d: %-38s %s\n", pass ? "PASS" : "FAIL", id, title,
                detail.c_str());
    std::fflush(stdout);
    (pass ? g_pass : g_fail) += 1;
}

bool enabled(int id) { return g_only == 0 || g_only == id; }

std::string fmt(const char* pattern, ...) {
    char buf[512];
    va_list args;
    va_start(args, pattern);
    std::vsnprintf(buf, sizeof(buf), pattern, args);
    va_end(args);
    return buf;
}

// shared builders -----------------------------------------------------------

std::vector<Vec> atom_cloud(int M, std::uint64_t seed) {
    GaussianStream g(seed);
    std::vector<Vec> atoms(M);
    for (auto& a : atoms) a = g.next_vec(1);
    return atoms;
}

ControlProblem make_desk_problem(const std::string& model_name,
                                 const std::map<std::string, double>& params, int M, int K,
                                 int N, std::uint64_t seed) {
    return make_problem(make_builtin(model_name, params), Mat::Constant(1, 1, 0.3),
                        TimeGrid(0.0, 1.0, N), RandomField::identity(atom_cloud(M, seed), K),
                        seed, K);
}

const std::map<std::string, double> kLqParams{
    {"q", 1.0}, {"q_T", 1.0}, {"r", 1.0}, {"lambda_bar", 0.5}};

LqParams lq_oracle_params() {
    LqParams p;
    p.q = 1.0;
    p.q_T = 1.0;
    p.r = 1.0;
    p.lambda_bar = 0.5;
    p.eta = 0.3;
    return p;
}

SolveOptions picard(double tol = 1e-8) {
    SolveOptions o;
    o.method = SolveMethod::picard_feedback;
    o.tol = tol;
    return o;
}

RandomField atom_direction(int M, int K, std::uint64_t seed, double scale = 1.0) {
    GaussianStream g(seed);
    RandomField f(M, K, 1);
    for (int i = 0; i < M; ++i) {
        const double v = scale * g.next();
        for (int k = 0; k < K; ++k) f.at(i, k, 0) = v;
    }
    return f;
}

FieldProcess atom_process(const ControlProblem& p, std::uint64_t seed, double scale = 1.0) {
    FieldProcess u = zero_control(p);
    GaussianStream g(seed);
    for (auto& f : u.node)
        for (int i = 0; i < f.atoms; ++i) {
            const double v = scale * g.next();
            for (int k = 0; k < f.scenarios; ++k) f.at(i, k, 0) = v;
        }
    return u;
}

double l2_time_inner(const TimeGrid& grid, const FieldProcess& a, const FieldProcess& b) {
    double acc = 0.0;
    for (int j = 0; j + 1 < a.nodes(); ++j) acc += grid.dt() * hm_inner(a.node[j], b.node[j]);
    return acc;
}

// criteria -------------------------------------------------------------------

void criterion_1() {
    // LQ oracle equivalence: control node-RMS and value within 2%, both methods
    const ControlProblem p = make_desk_problem("lq_scalar", kLqParams, 200, 1000, 50, 101);
    const RiccatiSolution ric = riccati_solve(lq_oracle_params(), p.grid);
    const EmpiricalMeasure m0 = pushforward(p.x0);
    const double v_oracle = ric.value(m0.second_moment(), m0.mean()(0));

    bool pass = true;
    std::string detail;
    for (const SolveMethod method :
         {SolveMethod::gradient_descent, SolveMethod::picard_feedback}) {
        SolveOptions opts = picard(1e-8);
        opts.method = method;
        if (method == SolveMethod::gradient_descent) opts.rho = 0.4;
        const OptimalQuadruple quad = solve_optimal(p, opts);
        pass = pass && quad.log.converged;
        double sq = 0.0, worst = 0.0;
        for (int j = 0; j < quad.Y.nodes(); ++j) {
            RandomField expect = quad.Y.node[j];
            expect *= -ric.P_at(j);
            const double err =
                hm_norm(quad.u.node[j] - expect) / std::max(1e-12, hm_norm(expect));
            sq += err * err;
            worst = std::max(worst, err);
        }
        const double rms = std::sqrt(sq / quad.Y.nodes());
        const double verr =
            std::abs(objective(p, quad.u) - v_oracle) / std::abs(v_oracle);
        pass = pass && rms <= 0.02 && verr <= 0.02;
        detail += fmt("%s: u-rms %.4f (worst node %.4f), value %.4f; ",
                      method == SolveMethod::gradient_descent ? "gd" : "picard", rms, worst,
                      verr);
    }
    report(1, "LQ oracle equivalence (2%)", pass, detail);
}

void criterion_2() {
    // gradient vs central FD at eps = 1e-3, scale-aware relative error 1e-3
    bool pass = true;
    std::string detail;
    for (const char* name : {"lq_scalar", "exp_well"}) {
        const ControlProblem p = make_desk_problem(name, {}, 200, 1000, 50, 102);
        double worst = 0.0;
        for (int rep = 0; rep < 5; ++rep) {
            const FieldProcess u = atom_process(p, 210 + rep, 0.7);
            const FieldProcess psi = atom_process(p, 260 + rep, 1.0);
            const FieldProcess g = gradient(p, u);
            double inner = 0.0, g2 = 0.0, p2 = 0.0;
            for (int j = 0; j + 1 < g.nodes(); ++j) {
                inner += p.grid.dt() * hm_inner(g.node[j], psi.node[j]);
                g2 += p.grid.dt() * hm_inner(g.node[j], g.node[j]);
                p2 += p.grid.dt() * hm_inner(psi.node[j], psi.node[j]);
            }
            const double fd = fd_gradient_oracle(p, u, psi, 1e-3);
            const double scale = std::max(std::abs(fd), std::sqrt(g2 * p2));
            worst = std::max(worst, std::abs(inner - fd) / scale);
        }
        pass = pass && worst <= 1e-3;
        detail += fmt("%s worst %.2e; ", name, worst);
    }
    report(2, "gradient exactness (1e-3)", pass, detail);
}

void criterion_3() {
    // monotonicity quotient >= 0.9 c0 over 20 random control pairs
    bool pass = true;
    std::string detail;
    for (const char* name : {"lq_scalar", "exp_well"}) {
        const ControlProblem p = make_desk_problem(name, {}, 200, 200, 50, 103);
        const double margin = c0(p);
        double worst = 1e300;
        for (int rep = 0; rep < 10; ++rep) {
            const FieldProcess v1 = atom_process(p, 300 + rep, 0.8);
            const FieldProcess v2 = atom_process(p, 350 + rep, 0.8);
            const FieldProcess g1 = gradient(p, v1);
            const FieldProcess g2 = gradient(p, v2);
            FieldProcess dg = g1, dv = v1;
            for (int j = 0; j < dg.nodes(); ++j) {
                dg.node[j] -= g2.node[j];
                dv.node[j] -= v2.node[j];
            }
            worst = std::min(worst,
                             l2_time_inner(p.grid, dg, dv) / l2_time_inner(p.grid, dv, dv));
        }
        pass = pass && worst >= 0.9 * margin;
        detail += fmt("%s min quotient %.3f (c0 %.2f); ", name, worst, margin);
    }
    report(3, "strong convexity (>= 0.9 c0)", pass, detail);
}

void criterion_4() {
    // directional FD of V vs <Z0,psi>: divided remainder decays first order
    const ControlProblem p = make_desk_problem("lq_scalar", kLqParams, 200, 1000, 50, 104);
    const SolveOptions opts = picard(1e-10);
    const OptimalQuadruple quad = solve_optimal(p, opts);
    const double v0 = objective(p, quad.u);
    const RandomField psi = atom_direction(200, 1000, 105, 2.0);
    const double psi2 = hm_inner(psi, psi);

    double rem[2] = {0.0, 0.0};
    const double eps_list[2] = {1e-2, 1e-3};
    for (int idx = 0; idx < 2; ++idx) {
        ControlProblem shifted = p;
        RandomField step = psi;
        step *= eps_list[idx];
        shifted.x0 = p.x0 + step;
        const OptimalQuadruple qs = solve_optimal(shifted, opts);
        rem[idx] =
            std::abs((objective(shifted, qs.u) - v0) / eps_list[idx] -
                     hm_inner(quad.Z0_grad, psi));
    }
    const double ratio = rem[1] / rem[0];
    const double cfit = rem[0] / (eps_list[0] * psi2);
    const bool pass = ratio >= 0.05 && ratio <= 0.2 && std::isfinite(cfit);
    report(4, "D_X V = Z (remainder band)", pass,
           fmt("remainders %.3e / %.3e, ratio %.3f, fitted C %.2f", rem[0], rem[1], ratio,
               cfit));
}

void criterion_5() {
    // jacobian flow vs solver finite differences; LQ gain vs Riccati
    bool pass = true;
    std::string detail;
    const SolveOptions tight = picard(1e-12);
    JacobianOptions jo;
    jo.tol = 1e-12;
    jo.max_iters = 400;
    for (const char* name : {"lq_scalar", "exp_well"}) {
        const ControlProblem p = make_desk_problem(name, {}, 200, 200, 50, 106);
        const RandomField psi = atom_direction(200, 200, 107, 2.0);
        const FdJacobianReport coarse = fd_check_jacobian(p, psi, 1e-2, tight, jo);
        const FdJacobianReport fine = fd_check_jacobian(p, psi, 5e-3, tight, jo);
        const double floor = 1e-6 * (1.0 + coarse.psi_norm);
        const bool at_floor = coarse.discrepancy <= floor && fine.discrepancy <= floor;
        const double ratio = fine.discrepancy / coarse.discrepancy;
        const bool ok = at_floor || (ratio >= 0.4 && ratio <= 0.6);
        pass = pass && ok;
        detail += fmt("%s disc %.2e->%.2e ratio %.2f%s; ", name, coarse.discrepancy,
                      fine.discrepancy, ratio, at_floor ? " (floor)" : "");
    }
    {
        const ControlProblem p = make_desk_problem("lq_scalar", kLqParams, 200, 200, 50, 108);
        const RiccatiSolution ric = riccati_solve(lq_oracle_params(), p.grid);
        const OptimalQuadruple quad = solve_optimal(p, picard(1e-9));
        const JacobianFlowSolution mj = matrix_jacobian(p, quad);
        double got = 0.0;
        for (int i = 0; i < 200; ++i)
            got += 0.5 * (atom_mean(mj.DZ.node.front(), i)(0) + atom_mean(mj.DZ0_grad, i)(0)) /
                   200.0;
        const double err = std::abs(got - ric.P_at(0)) / ric.P_at(0);
        pass = pass && err <= 0.02;
        detail += fmt("DxZ(t0) %.4f vs P %.4f (err %.3f)", got, ric.P_at(0), err);
    }
    report(5, "jacobian flow = derivative", pass, detail);
}

void criterion_6() {
    // second-derivative self-adjointness on builtin (a)
    const ControlProblem p = make_desk_problem("lq_scalar", kLqParams, 200, 200, 50, 109);
    const OptimalQuadruple quad = solve_optimal(p, picard(1e-9));
    bool pass = true;
    double worst = 0.0;
    for (int rep = 0; rep < 5; ++rep) {
        const RandomField psi = atom_direction(200, 200, 400 + rep);
        const RandomField phi = atom_direction(200, 200, 450 + rep);
        const RandomField d2p = second_derivative_V(p, quad, psi);
        const RandomField d2q = second_derivative_V(p, quad, phi);
        const double gap = std::abs(hm_inner(d2p, phi) - hm_inner(d2q, psi));
        const double bound = 1e-2 * hm_norm(psi) * hm_norm(phi);
        worst = std::max(worst, gap / bound);
        pass = pass && gap <= bound;
    }
    report(6, "second derivative self-adjoint", pass, fmt("worst gap/bound %.3f", worst));
}

void criterion_7() {
    // Bellman residual on builtin (a) at M=200, K=100, N=50
    PdeOptions opts;
    opts.solver = picard(1e-8);
    const ControlProblem coarse = make_desk_problem("lq_scalar", kLqParams, 200, 100, 50, 110);
    const ResidualReport r1 = bellman_residual(coarse, 25, opts);
    const ControlProblem fine = make_desk_problem("lq_scalar", kLqParams, 200, 100, 100, 110);
    const ResidualReport r2 = bellman_residual(fine, 50, opts);
    const bool pass =
        r1.normalized <= 0.05 && r2.normalized < r1.normalized &&
        r1.terminal_identity_error <= 1e-10;
    report(7, "Bellman residual (<= 5%)", pass,
           fmt("N=50: %.4f, N=100: %.4f, terminal %.1e", r1.normalized, r2.normalized,
               r1.terminal_identity_error));
}

void criterion_8() {
    // master residual on builtin (b) at x in {0,1}, t ~ t0 + 0.25 (T-t0)
    PdeOptions opts;
    opts.solver = picard(1e-8);
    opts.lfd.probe_scenarios = 16000;
    const ControlProblem coarse = make_desk_problem("lq_mean", {}, 200, 100, 50, 111);
    bool pass = true;
    std::string detail;
    double worst = 0.0;
    for (double x : {0.0, 1.0}) {
        const ResidualReport rep = master_residual(coarse, Vec::Constant(1, x), 12, opts);
        pass = pass && rep.normalized <= 0.10 && rep.terminal_identity_error <= 1e-10;
        worst = std::max(worst, rep.normalized);
        detail += fmt("x=%.0f: %.4f (term %.1e); ", x, rep.normalized,
                      rep.terminal_identity_error);
    }
    // refinement: the time-derivative estimator is rebalanced with 4x probes
    PdeOptions fine_opts = opts;
    fine_opts.lfd.probe_scenarios = 64000;
    const ControlProblem fine = make_desk_problem("lq_mean", {}, 200, 100, 100, 111);
    const ResidualReport rf = master_residual(fine, Vec::Constant(1, 1.0), 24, fine_opts);
    const bool halves = rf.normalized <= std::max(0.65 * worst, 0.02);
    pass = pass && halves;
    detail += fmt("N=100: %.4f%s", rf.normalized, halves ? "" : " (no decay)");
    report(8, "master residual (<= 10%)", pass, detail);
}

void criterion_9() {
    // flow property and dynamic-programming identity on builtin (a)
    const ControlProblem p = make_desk_problem("lq_scalar", kLqParams, 200, 200, 50, 112);
    const SolveOptions opts = picard(1e-8);
    const OptimalQuadruple quad = solve_optimal(p, opts);
    const double restart = flow_restart_check(p, quad, 25, opts);

    // running cost over [t0, s] plus the restarted value
    const double v0 = objective(p, quad.u);
    std::vector<double> terms;
    for (int j = 0; j < 25; ++j) {
        const RandomField& y = quad.Y.node[j];
        const RandomField& u = quad.u.node[j];
        std::vector<double> vals(static_cast<std::size_t>(y.atoms) * y.scenarios);
        for (int i = 0; i < y.atoms; ++i)
            for (int k = 0; k < y.scenarios; ++k)
                vals[static_cast<std::size_t>(i) * y.scenarios + k] =
                    p.model.l(y.point(i, k), u.point(i, k));
        terms.push_back(p.grid.dt() * (pairwise_sum(vals) / static_cast<double>(vals.size()) +
                                       p.model.F(pushforward(y))));
    }
    ControlProblem restarted = p;
    restarted.start_node = 25;
    restarted.x0 = quad.Y.at_node(25);
    restarted.x0.adapted_to = 25;
    const double dp_gap =
        std::abs(v0 - pairwise_sum(terms) - value_function(restarted, opts));
    const bool pass = restart <= 10 * opts.tol && dp_gap <= 1e-6;
    report(9, "flow/optimality principle", pass,
           fmt("restart %.2e (<= %.0e), dp gap %.2e", restart, 10 * opts.tol, dp_gap));
}

void criterion_10() {
    // bounds suites: fitted constants finite and stable across 3 seeds
    bool pass = true;
    std::string detail;
    auto spread = [](const std::vector<double>& v) {
        const double hi = *std::max_element(v.begin(), v.end());
        const double lo = *std::min_element(v.begin(), v.end());
        return hi / std::max(lo, 1e-300);
    };
    // linear growth of the quadruple
    for (const char* name : {"lq_scalar", "exp_well"}) {
        std::vector<double> fitted;
        for (std::uint64_t seed : {501u, 502u, 503u}) {
            const ControlProblem p = make_desk_problem(name, {}, 200, 100, 50, seed);
            const OptimalQuadruple quad = solve_optimal(p, picard(1e-8));
            double worst = 0.0;
            for (int j = 0; j < quad.Y.nodes(); ++j)
                worst = std::max({worst, hm_norm(quad.Y.node[j]), hm_norm(quad.Z.node[j]),
                                  hm_norm(quad.u.node[j])});
            fitted.push_back(worst / (1.0 + hm_norm(p.x0)));
        }
        const double ratio = spread(fitted);
        pass = pass && std::isfinite(fitted[0]) && ratio <= 1.5;
        detail += fmt("%s C4 %.3f (spread %.2f); ", name, fitted[0], ratio);
    }
    // measure-derivative flow bounds on builtin (b)
    {
        std::vector<double> c10s, c11s;
        LfdOptions lo;
        lo.probe_scenarios = 2000;
        for (std::uint64_t seed : {504u, 505u, 506u}) {
            const ControlProblem p = make_desk_problem("lq_mean", {}, 200, 100, 50, seed);
            const OptimalQuadruple quad = solve_optimal(p, picard(1e-8));
            const JacobianFlowSolution mj = matrix_jacobian(p, quad);
            double c10 = 0.0, c11 = 0.0;
            for (double x : {0.0, 1.0, 5.0}) {
                LfdSolution lfd = solve_lfd_flow(p, quad, Vec::Constant(1, x), lo);
                lfd = solve_grad_lfd_flow(p, quad, mj, std::move(lfd), lo);
                double m10 = 0.0, m11 = 0.0;
                for (int j = 0; j < lfd.dZ.nodes(); ++j) {
                    m10 = std::max(m10, hm_inner(lfd.dZ.node[j], lfd.dZ.node[j]));
                    m11 = std::max(m11, hm_inner(lfd.gdZ.node[j], lfd.gdZ.node[j]));
                }
                c10 = std::max(c10, m10 / (1.0 + x * x));
                c11 = std::max(c11, m11 / (1.0 + x * x));
            }
            c10s.push_back(c10);
            c11s.push_back(c11);
        }
        pass = pass && std::isfinite(c10s[0]) && spread(c10s) <= 1.5;
        detail += fmt("C10 %.4f (spread %.2f), C11 %.2e (spread %.2f)", c10s[0], spread(c10s),
                      c11s[0], spread(c11s));
        // C11 for the bilinear kernel is numerically zero; only finiteness
        // and stability of the measured values are asserted
        pass = pass && std::isfinite(c11s[0]);
    }
    report(10, "bounds suites (stable fits)", pass, detail);
}

void criterion_11() {
    // mean-field change-of-variable check at K = 1e5
    const int K = 100000, M = 32;
    const TimeGrid grid(0.0, 1.0, 10);
    ControlProblem p = make_problem(make_builtin("zero_cost"), Mat::Identity(1, 1), grid,
                                    RandomField::identity(atom_cloud(M, 113), K), 114, K);
    const FieldProcess drift = zero_control(p);
    const FieldProcess X = simulate_forward(p, drift);
    ItoTest t;
    t.psi = [](VecCRef x, double) { return x.squaredNorm(); };
    t.psi_x = [](VecCRef x, double) { return Vec(2.0 * x); };
    t.psi_xx = [](VecCRef x, double) { return Mat(2.0 * Mat::Identity(x.size(), x.size())); };
    const double gap = ito_check(t, grid, X, drift, Mat::Identity(1, 1));
    report(11, "mean-field Ito check (5%)", gap <= 0.05, fmt("sup-node gap %.4f", gap));
}

void criterion_12() {
    // c0 arithmetic plus the flagship non-LQ example through b(i)-b(v)*
    const TimeGrid grid(0.0, 1.0, 50);
    CostModel m = make_builtin("lq_scalar");
    auto set = [&](double lambda, double ct_ch, double cl_c) {
        m.constants.lambda = lambda;
        m.constants.c_T_prime = ct_ch;
        m.constants.c_h_prime = 0.0;
        m.constants.c_l_prime = cl_c;
        m.constants.c_prime = 0.0;
        return c0(m, grid);
    };
    const bool arithmetic = set(1.0, 0.0, 0.0) == 1.0 && set(1.0, 0.5, 0.5) == 0.25 &&
                            set(1.0, 2.0, 0.0) == -1.0;

    const AssumptionReport rep =
        check_assumptions(make_builtin("exp_well"), grid, default_probes(1, 2024));
    bool b_pass = rep.b5_star;
    for (const char* name : {"b(i) measure gradient growth", "b(ii) measure curvature bounds"}) {
        const auto* chk = rep.find(name);
        b_pass = b_pass && chk && chk->pass;
    }
    report(12, "assumption gate", arithmetic && b_pass,
           fmt("c0 cases %s, exp_well b-suite %s", arithmetic ? "exact" : "off",
               b_pass ? "pass" : "fail"));
}

}  // namespace

int main(int argc, char** argv) {
    for (int i = 1; i < argc; ++i)
        if (std::strncmp(argv[i], "--criterion=", 12) == 0) g_only = std::atoi(argv[i] + 12);

    using CriterionFn = void (*)();
    const CriterionFn criteria[] = {criterion_1, criterion_2, criterion_3, criterion_4,
                                    criterion_5, criterion_6, criterion_7, criterion_8,
                                    criterion_9, criterion_10, criterion_11, criterion_12};
    for (int i = 0; i < 12; ++i)
        if (enabled(i + 1)) criteria[i]();

    std::printf("acceptance: %d passed, %d failed\n", g_pass, g_fail);
    return g_fail == 0 ? 0 : 1;
}
