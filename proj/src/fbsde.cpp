#include "mfc/fbsde.hpp"

#include "mfc/condexp.hpp"

#include <cmath>

namespace mfc {

namespace {

void check_adapted(const ControlProblem& problem, const FieldProcess& control) {
    if (control.first_node != problem.start_node ||
        control.nodes() != problem.grid.steps - problem.start_node + 1)
        throw std::invalid_argument("control process does not span the problem grid slice");
    for (int j = 0; j < control.nodes(); ++j) {
        if (control.node[j].adapted_to > control.first_node + j)
            throw std::invalid_argument("control is not adapted");
        if (!control.node[j].same_shape(problem.x0))
            throw std::invalid_argument("control shape mismatch");
    }
}

/// driver l_x(Y,u) + D_x dF/dnu(mu)(Y) evaluated over a field.
RandomField running_driver(const CostModel& model, const RandomField& y, const RandomField& u,
                           const EmpiricalMeasure& mu) {
    RandomField out(y.atoms, y.scenarios, y.dim);
    out.time_index = y.time_index;
    out.adapted_to = std::max(y.adapted_to, u.adapted_to);
    parallel_for(y.atoms, [&](int i) {
        for (int k = 0; k < y.scenarios; ++k) {
            const Vec val = model.l_x(y.point(i, k), u.point(i, k)) +
                            model.dF_dnu_x(mu, y.point(i, k));
            for (int d = 0; d < y.dim; ++d) out.at(i, k, d) = val(d);
        }
    });
    return out;
}

RandomField terminal_costate(const CostModel& model, const RandomField& yT,
                             const EmpiricalMeasure& muT) {
    RandomField out(yT.atoms, yT.scenarios, yT.dim);
    out.time_index = yT.time_index;
    out.adapted_to = yT.adapted_to;
    parallel_for(yT.atoms, [&](int i) {
        for (int k = 0; k < yT.scenarios; ++k) {
            const Vec val = model.h_x(yT.point(i, k)) + model.dFT_dnu_x(muT, yT.point(i, k));
            for (int d = 0; d < yT.dim; ++d) out.at(i, k, d) = val(d);
        }
    });
    return out;
}

}  // namespace

FieldProcess zero_control(const ControlProblem& problem) {
    FieldProcess u;
    u.first_node = problem.start_node;
    u.node.resize(problem.grid.steps - problem.start_node + 1);
    for (int j = 0; j < u.nodes(); ++j) {
        u.node[j] = RandomField(problem.x0.atoms, problem.x0.scenarios, problem.x0.dim);
        u.node[j].time_index = problem.start_node + j;
        u.node[j].adapted_to = 0;
    }
    return u;
}

double ensemble_mean(const RandomField& f,
                     const std::function<double(Eigen::Map<const Vec>)>& fn) {
    std::vector<double> vals(static_cast<std::size_t>(f.atoms) * f.scenarios);
    for (int i = 0; i < f.atoms; ++i)
        for (int k = 0; k < f.scenarios; ++k)
            vals[static_cast<std::size_t>(i) * f.scenarios + k] = fn(f.point(i, k));
    return pairwise_sum(vals) / static_cast<double>(vals.size());
}

double sup_node_norm(const FieldProcess& f) {
    double worst = 0.0;
    for (const auto& g : f.node) worst = std::max(worst, hm_norm(g));
    return worst;
}

FieldProcess simulate_forward(const ControlProblem& problem, const FieldProcess& control) {
    check_adapted(problem, control);
    const int n = problem.dim();
    const int K = problem.x0.scenarios;
    if (problem.noise.scenarios() != K)
        throw std::invalid_argument("noise bundle scenario count mismatch");
    const double dt = problem.grid.dt();

    FieldProcess Y;
    Y.first_node = problem.start_node;
    Y.node.resize(control.nodes());
    Y.node[0] = problem.x0;
    Y.node[0].time_index = problem.start_node;
    for (int j = 0; j + 1 < control.nodes(); ++j) {
        const int step = problem.start_node + j;
        const RandomField& yk = Y.node[j];
        const RandomField& uk = control.node[j];
        RandomField& next = Y.node[j + 1];
        next = RandomField(yk.atoms, K, n);
        next.time_index = step + 1;
        next.adapted_to = step + 1;
        parallel_for(yk.atoms, [&](int i) {
            for (int k = 0; k < K; ++k) {
                const Vec dW = problem.eta * problem.noise.incr_vec(step, k);
                for (int d = 0; d < n; ++d)
                    next.at(i, k, d) = yk.at(i, k, d) + dt * uk.at(i, k, d) + dW(d);
            }
        });
    }
    return Y;
}

AdjointSolution solve_adjoint_bsde(const ControlProblem& problem, const FieldProcess& Y,
                                   const FieldProcess& control, int basis_degree,
                                   double ridge) {
    check_adapted(problem, control);
    const int n = problem.dim();
    const int K = problem.x0.scenarios;
    const int nodes = Y.nodes();
    const double dt = problem.grid.dt();
    const auto& model = problem.model;

    AdjointSolution sol;
    sol.diag.basis_degree = basis_degree;
    sol.diag.ridge = ridge;
    sol.diag.min_pivot = std::numeric_limits<double>::infinity();
    sol.Z.first_node = Y.first_node;
    sol.Z.node.resize(nodes);
    sol.r.first_node = Y.first_node;
    sol.r.node.resize(nodes);

    const EmpiricalMeasure muT = pushforward(Y.node[nodes - 1]);
    sol.Z.node[nodes - 1] = terminal_costate(model, Y.node[nodes - 1], muT);
    sol.r.node[nodes - 1] = RandomField(problem.x0.atoms, K, n * n);
    sol.r.node[nodes - 1].time_index = Y.first_node + nodes - 1;

    // right-endpoint driver accumulation inside the conditional expectation:
    // Z_j = E_j[ Z_{j+1} + dt driver_{j+1} ] with no running driver at the
    // terminal node, so that l_v + Z is the exact gradient of the discrete
    // objective at polynomial-fit resolution.
    for (int j = nodes - 2; j >= 0; --j) {
        const int step = Y.first_node + j;
        const RandomField& yk = Y.node[j];
        const CondExp ce(Y.node[j + 1], basis_degree, ridge);
        sol.diag.min_pivot = std::min(sol.diag.min_pivot, ce.min_pivot());

        RandomField mean_next = control.node[j];
        mean_next *= dt;
        mean_next += yk;

        RandomField payload = sol.Z.node[j + 1];
        if (j + 1 <= nodes - 2) {
            const EmpiricalMeasure mu1 = pushforward(Y.node[j + 1]);
            const RandomField drv =
                running_driver(model, Y.node[j + 1], control.node[j + 1], mu1);
            for (std::size_t idx = 0; idx < payload.values.size(); ++idx)
                payload.values[idx] += dt * drv.values[idx];
        }

        RandomField cond, rjs;
        ce.project(payload, mean_next, problem.eta, dt, &cond, &rjs);
        rjs.time_index = step;
        rjs.adapted_to = step;
        sol.diag.max_integrand_norm =
            std::max(sol.diag.max_integrand_norm, hm_norm(rjs));
        sol.r.node[j] = std::move(rjs);
        cond.time_index = step;
        cond.adapted_to = step;
        sol.Z.node[j] = std::move(cond);
    }
    {
        const EmpiricalMeasure mu0 = pushforward(Y.node.front());
        const RandomField drv0 =
            running_driver(model, Y.node.front(), control.node.front(), mu0);
        sol.Z0_grad = sol.Z.node.front();
        if (nodes > 1)
            for (std::size_t idx = 0; idx < sol.Z0_grad.values.size(); ++idx)
                sol.Z0_grad.values[idx] += dt * drv0.values[idx];
    }
    return sol;
}

double objective(const ControlProblem& problem, const FieldProcess& control) {
    const FieldProcess Y = simulate_forward(problem, control);
    const double dt = problem.grid.dt();
    const auto& model = problem.model;
    std::vector<double> terms;
    terms.reserve(Y.nodes());
    for (int j = 0; j + 1 < Y.nodes(); ++j) {
        const RandomField& yk = Y.node[j];
        const RandomField& uk = control.node[j];
        std::vector<double> vals(static_cast<std::size_t>(yk.atoms) * yk.scenarios);
        for (int i = 0; i < yk.atoms; ++i)
            for (int k = 0; k < yk.scenarios; ++k)
                vals[static_cast<std::size_t>(i) * yk.scenarios + k] =
                    model.l(yk.point(i, k), uk.point(i, k));
        const double lbar = pairwise_sum(vals) / static_cast<double>(vals.size());
        terms.push_back(dt * (lbar + model.F(pushforward(yk))));
    }
    const RandomField& yT = Y.node[Y.nodes() - 1];
    terms.push_back(ensemble_mean(yT, [&](Eigen::Map<const Vec> x) { return model.h(x); }));
    terms.push_back(model.F_T(pushforward(yT)));
    return pairwise_sum(terms);
}

double objective_cv(const ControlProblem& problem, const OptimalQuadruple& quad) {
    const double base = objective(problem, quad.u);
    const int K = problem.x0.scenarios;
    const int n = problem.dim();
    std::vector<double> terms(static_cast<std::size_t>(problem.x0.atoms) * K, 0.0);
    for (int j = 0; j + 1 < quad.Z.nodes(); ++j) {
        const int step = quad.Z.first_node + j;
        const RandomField& z = quad.Z.node[j];
        for (int i = 0; i < z.atoms; ++i)
            for (int k = 0; k < K; ++k) {
                const Vec ew = problem.eta * problem.noise.incr_vec(step, k);
                double dot = 0.0;
                for (int d = 0; d < n; ++d) dot += z.at(i, k, d) * ew(d);
                terms[static_cast<std::size_t>(i) * K + k] += dot;
            }
    }
    return base - pairwise_sum(terms) / static_cast<double>(terms.size());
}

FieldProcess gradient(const ControlProblem& problem, const FieldProcess& control,
                      int basis_degree, double ridge) {
    const FieldProcess Y = simulate_forward(problem, control);
    const AdjointSolution adj = solve_adjoint_bsde(problem, Y, control, basis_degree, ridge);
    FieldProcess g;
    g.first_node = control.first_node;
    g.node.resize(control.nodes());
    for (int j = 0; j < control.nodes(); ++j) {
        const RandomField& yk = Y.node[j];
        const RandomField& uk = control.node[j];
        RandomField gk(yk.atoms, yk.scenarios, yk.dim);
        gk.time_index = control.first_node + j;
        gk.adapted_to = std::max(yk.adapted_to, uk.adapted_to);
        parallel_for(yk.atoms, [&](int i) {
            for (int k = 0; k < yk.scenarios; ++k) {
                const Vec val = problem.model.l_v(yk.point(i, k), uk.point(i, k)) +
                                adj.Z.node[j].point(i, k);
                for (int d = 0; d < yk.dim; ++d) gk.at(i, k, d) = val(d);
            }
        });
        g.node[j] = std::move(gk);
    }
    return g;
}

double first_order_residual(const ControlProblem& problem, const FieldProcess& Y,
                            const FieldProcess& u, const FieldProcess& Z) {
    double worst = 0.0;
    for (int j = 0; j < Y.nodes(); ++j) {
        RandomField res(Y.node[j].atoms, Y.node[j].scenarios, Y.node[j].dim);
        parallel_for(res.atoms, [&](int i) {
            for (int k = 0; k < res.scenarios; ++k) {
                const Vec val = problem.model.l_v(Y.node[j].point(i, k), u.node[j].point(i, k)) +
                                Z.node[j].point(i, k);
                for (int d = 0; d < res.dim; ++d) res.at(i, k, d) = val(d);
            }
        });
        worst = std::max(worst, hm_norm(res));
    }
    return worst;
}

OptimalQuadruple solve_optimal(const ControlProblem& problem, const SolveOptions& opts) {
    const auto& k = problem.model.constants;
    const double margin = c0(problem);
    const bool warn = margin <= 0.0;

    const double denom = k.c_l + k.c_T + k.c_h + k.c + 1.0;
    double rho = opts.rho > 0.0 ? opts.rho
                                : std::max(warn ? 0.5 * k.lambda : margin, 1e-6) /
                                      (denom * denom);
    rho = std::min(rho, 1.0);
    double theta = warn ? 0.5 * opts.theta : opts.theta;

    const int max_iters =
        opts.max_iters > 0 ? opts.max_iters
                           : (opts.method == SolveMethod::gradient_descent ? 20000 : 500);

    OptimalQuadruple best;
    best.log.method =
        opts.method == SolveMethod::gradient_descent ? "gradient_descent" : "picard_feedback";
    best.log.c0_warning = warn;
    best.first_order_residual = std::numeric_limits<double>::infinity();

    FieldProcess u = zero_control(problem);
    for (int it = 0; it <= max_iters; ++it) {
        const FieldProcess Y = simulate_forward(problem, u);
        const AdjointSolution adj =
            solve_adjoint_bsde(problem, Y, u, opts.basis_degree, opts.ridge);
        const double res = first_order_residual(problem, Y, u, adj.Z);
        best.log.residuals.push_back(res);
        if (res < best.first_order_residual) {
            best.Y = Y;
            best.Z = adj.Z;
            best.u = u;
            best.r = adj.r;
            best.Z0_grad = adj.Z0_grad;
            best.first_order_residual = res;
        }
        if (res <= opts.tol) {
            best.log.converged = true;
            best.log.iterations = it;
            return best;
        }
        if (it == max_iters) break;

        if (opts.method == SolveMethod::gradient_descent) {
            for (int j = 0; j < u.nodes(); ++j) {
                RandomField g(Y.node[j].atoms, Y.node[j].scenarios, Y.node[j].dim);
                parallel_for(g.atoms, [&](int i) {
                    for (int kk = 0; kk < g.scenarios; ++kk) {
                        const Vec val =
                            problem.model.l_v(Y.node[j].point(i, kk), u.node[j].point(i, kk)) +
                            adj.Z.node[j].point(i, kk);
                        for (int d = 0; d < g.dim; ++d) g.at(i, kk, d) = val(d);
                    }
                });
                g *= rho;
                u.node[j] -= g;
                u.node[j].adapted_to = std::max(Y.node[j].adapted_to, adj.Z.node[j].adapted_to);
            }
        } else {
            for (int j = 0; j < u.nodes(); ++j) {
                const RandomField fb =
                    feedback_field(Y.node[j], adj.Z.node[j], problem.model, opts.feedback);
                u.node[j] *= (1.0 - theta);
                RandomField scaled = fb;
                scaled *= theta;
                u.node[j] += scaled;
                u.node[j].adapted_to = fb.adapted_to;
            }
        }
    }
    best.log.converged = false;
    best.log.iterations = max_iters;
    return best;
}

double value_function(const ControlProblem& problem, const SolveOptions& opts) {
    const OptimalQuadruple quad = solve_optimal(problem, opts);
    if (!quad.log.converged)
        throw std::runtime_error("value_function: optimal control solve did not converge");
    return objective(problem, quad.u);
}

double flow_restart_check(const ControlProblem& problem, const OptimalQuadruple& quad,
                          int mid_node, const SolveOptions& opts) {
    if (mid_node <= problem.start_node || mid_node > problem.grid.steps)
        throw std::invalid_argument("flow_restart_check: mid node outside the slice");
    ControlProblem restarted = problem;
    restarted.start_node = mid_node;
    restarted.x0 = quad.Y.at_node(mid_node);
    restarted.x0.adapted_to = mid_node;
    const OptimalQuadruple rq = solve_optimal(restarted, opts);

    double worst = 0.0;
    for (int node = mid_node; node <= problem.grid.steps; ++node) {
        const double dy = hm_norm(rq.Y.at_node(node) - quad.Y.at_node(node));
        const double dz = hm_norm(rq.Z.at_node(node) - quad.Z.at_node(node));
        worst = std::max(worst, dy + dz);
    }
    return worst;
}

}  // namespace mfc
