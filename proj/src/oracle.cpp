#include "mfc/oracle.hpp"

#include <cmath>

namespace mfc {

namespace {

// dP/dtau = q_eff - P^2/r looking backward from the terminal node.
double riccati_rhs(double p, double q_eff, double r) { return q_eff - p * p / r; }

void rk4_backward(std::vector<double>& fine, double q_eff, double r, double terminal,
                  double h, int count) {
    fine.resize(count + 1);
    fine[0] = terminal;  // tau = 0 at s = T
    for (int j = 0; j < count; ++j) {
        const double p = fine[j];
        const double k1 = riccati_rhs(p, q_eff, r);
        const double k2 = riccati_rhs(p + 0.5 * h * k1, q_eff, r);
        const double k3 = riccati_rhs(p + 0.5 * h * k2, q_eff, r);
        const double k4 = riccati_rhs(p + h * k3, q_eff, r);
        fine[j + 1] = p + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!std::isfinite(fine[j + 1]) || std::abs(fine[j + 1]) > 1e8)
            throw std::runtime_error("riccati_solve: finite-horizon blow-up detected");
    }
}

}  // namespace

RiccatiSolution riccati_solve(const LqParams& params, const TimeGrid& grid, int substeps) {
    if (params.r <= 0.0) throw std::invalid_argument("riccati_solve: r must be positive");
    if (substeps < 1) throw std::invalid_argument("riccati_solve: substeps must be >= 1");
    RiccatiSolution out;
    out.grid = grid;
    out.params = params;

    const int fine_count = grid.steps * substeps;
    const double h = grid.dt() / substeps;
    std::vector<double> fine_p, fine_phi;
    rk4_backward(fine_p, params.q + params.lambda_bar, params.r, params.q_T, h, fine_count);
    rk4_backward(fine_phi, params.q + params.lambda_bar + params.s_bar, params.r, params.q_T, h,
                 fine_count);

    out.P.resize(grid.nodes());
    out.Phi.resize(grid.nodes());
    for (int k = 0; k <= grid.steps; ++k) {
        out.P[k] = fine_p[(grid.steps - k) * substeps];
        out.Phi[k] = fine_phi[(grid.steps - k) * substeps];
    }

    // (eta^2/2) int P ds via the composite trapezoid on the fine mesh
    std::vector<double> terms(fine_count);
    for (int j = 0; j < fine_count; ++j) terms[j] = 0.5 * (fine_p[j] + fine_p[j + 1]) * h;
    out.trace_offset = 0.5 * params.eta * params.eta * pairwise_sum(terms);
    return out;
}

std::vector<double> RiccatiSolution::mean_path(double mean0, int start_node) const {
    std::vector<double> ybar(grid.nodes(), 0.0);
    ybar[start_node] = mean0;
    // fine RK4 on the node-to-node intervals with Phi interpolated linearly
    const int sub = 10;
    for (int k = start_node; k < grid.steps; ++k) {
        double y = ybar[k];
        const double h = grid.dt() / sub;
        for (int j = 0; j < sub; ++j) {
            auto phi_at = [&](double frac) {
                return Phi[k] + (Phi[k + 1] - Phi[k]) * frac;
            };
            const double a = static_cast<double>(j) / sub;
            const double b = static_cast<double>(j + 1) / sub;
            const double m = 0.5 * (a + b);
            const double k1 = -phi_at(a) * y / params.r;
            const double k2 = -phi_at(m) * (y + 0.5 * h * k1) / params.r;
            const double k3 = -phi_at(m) * (y + 0.5 * h * k2) / params.r;
            const double k4 = -phi_at(b) * (y + h * k3) / params.r;
            y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        ybar[k + 1] = y;
    }
    return ybar;
}

double RiccatiSolution::value(double second_moment, double mean, int start_node) const {
    const double var = second_moment - mean * mean;
    // trace offset accrues only over [node(start), T]
    double offset = trace_offset;
    if (start_node > 0) {
        std::vector<double> terms(start_node);
        for (int k = 0; k < start_node; ++k)
            terms[k] = 0.5 * (P[k] + P[k + 1]) * grid.dt();
        offset -= 0.5 * params.eta * params.eta * pairwise_sum(terms);
    }
    return 0.5 * P[start_node] * var + 0.5 * Phi[start_node] * mean * mean + offset;
}

double lq_dzdnu_oracle(const RiccatiSolution& ric, double mean0, double x_probe,
                       int start_node) {
    const auto& grid = ric.grid;
    const auto& p = ric.params;
    const int sub = 10;
    const double h = grid.dt() / sub;
    const int total = grid.steps * sub;
    const int offset = start_node * sub;
    const int fine_count = total - offset;

    // regenerate P and Phi on the oracle's own fine mesh (index 0 = t0)
    std::vector<double> fp, fphi;
    rk4_backward(fp, p.q + p.lambda_bar, p.r, p.q_T, h, total);
    rk4_backward(fphi, p.q + p.lambda_bar + p.s_bar, p.r, p.q_T, h, total);
    std::reverse(fp.begin(), fp.end());
    std::reverse(fphi.begin(), fphi.end());
    auto half = [](const std::vector<double>& f, double idx) {
        const int lo = static_cast<int>(idx);
        if (idx == lo) return f[lo];
        return 0.5 * (f[lo] + f[lo + 1]);
    };

    // forward: base mean ybar and probe mean ytld
    std::vector<double> ybar(fine_count + 1), ytld(fine_count + 1);
    ybar[0] = mean0;
    ytld[0] = x_probe;
    for (int j = 0; j < fine_count; ++j) {
        auto rhs = [&](double yb, double yt, double idx, double* db, double* dtl) {
            const double phi = half(fphi, offset + idx);
            const double pp = half(fp, offset + idx);
            *db = -phi * yb / p.r;
            *dtl = -(pp * yt + (phi - pp) * yb) / p.r;
        };
        double b1, t1, b2, t2, b3, t3, b4, t4;
        rhs(ybar[j], ytld[j], j, &b1, &t1);
        rhs(ybar[j] + 0.5 * h * b1, ytld[j] + 0.5 * h * t1, j + 0.5, &b2, &t2);
        rhs(ybar[j] + 0.5 * h * b2, ytld[j] + 0.5 * h * t2, j + 0.5, &b3, &t3);
        rhs(ybar[j] + h * b3, ytld[j] + h * t3, j + 1.0, &b4, &t4);
        ybar[j + 1] = ybar[j] + h / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4);
        ytld[j + 1] = ytld[j] + h / 6.0 * (t1 + 2 * t2 + 2 * t3 + t4);
    }

    // backward: B' = Phi B / r - s_bar ytld, B(T) = 0
    double B = 0.0;
    for (int j = fine_count; j > 0; --j) {
        auto rhs = [&](double b, double idx) {
            const double phi = half(fphi, offset + idx);
            const double yt = half(ytld, idx);
            return phi * b / p.r - p.s_bar * yt;
        };
        const double k1 = rhs(B, j);
        const double k2 = rhs(B - 0.5 * h * k1, j - 0.5);
        const double k3 = rhs(B - 0.5 * h * k2, j - 0.5);
        const double k4 = rhs(B - h * k3, j - 1.0);
        B -= h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    return B;
}

std::pair<FieldProcess, FieldProcess> oracle_feedback_rollout(const ControlProblem& problem,
                                                              const RiccatiSolution& ric) {
    if (problem.dim() != 1)
        throw std::invalid_argument("oracle_feedback_rollout: scalar problems only");
    const int K = problem.x0.scenarios;
    const int M = problem.x0.atoms;
    const double dt = problem.grid.dt();

    const double mean0 = ensemble_mean(problem.x0, [](Eigen::Map<const Vec> x) { return x(0); });
    const std::vector<double> ybar = ric.mean_path(mean0, problem.start_node);

    FieldProcess Y, u;
    Y.first_node = u.first_node = problem.start_node;
    const int nodes = problem.grid.steps - problem.start_node + 1;
    Y.node.resize(nodes);
    u.node.resize(nodes);
    Y.node[0] = problem.x0;
    for (int j = 0; j < nodes; ++j) {
        const int node = problem.start_node + j;
        const RandomField& yk = Y.node[j];
        RandomField uk(M, K, 1);
        uk.time_index = node;
        uk.adapted_to = yk.adapted_to;
        for (int i = 0; i < M; ++i)
            for (int k = 0; k < K; ++k)
                uk.at(i, k, 0) = ric.feedback(node, yk.at(i, k, 0), ybar[node]);
        u.node[j] = std::move(uk);
        if (j + 1 < nodes) {
            RandomField next(M, K, 1);
            next.time_index = node + 1;
            next.adapted_to = node + 1;
            for (int i = 0; i < M; ++i)
                for (int k = 0; k < K; ++k)
                    next.at(i, k, 0) = yk.at(i, k, 0) + dt * u.node[j].at(i, k, 0) +
                                       problem.eta(0, 0) * problem.noise.incr(node, k, 0);
            Y.node[j + 1] = std::move(next);
        }
    }
    return {std::move(Y), std::move(u)};
}

double fd_gradient_oracle(const ControlProblem& problem, const FieldProcess& control,
                          const FieldProcess& psi, double eps) {
    FieldProcess up = control, um = control;
    for (int j = 0; j < control.nodes(); ++j) {
        RandomField step = psi.node[j];
        step *= eps;
        up.node[j] += step;
        um.node[j] -= step;
    }
    return (objective(problem, up) - objective(problem, um)) / (2.0 * eps);
}

}  // namespace mfc
