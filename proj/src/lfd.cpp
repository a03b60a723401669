#include "mfc/lfd.hpp"

#include "flow_internal.hpp"

#include <cmath>

namespace mfc {

namespace {

constexpr std::uint64_t kProbeSeedSalt = 0x50b3a7755eedULL;

TimeGrid slice_grid(const ControlProblem& problem) {
    return TimeGrid(problem.grid.node(problem.start_node), problem.grid.T,
                    problem.grid.steps - problem.start_node);
}

std::vector<EmpiricalMeasure> base_measures(const OptimalQuadruple& quad) {
    std::vector<EmpiricalMeasure> mu(quad.Y.nodes());
    for (int j = 0; j < quad.Y.nodes(); ++j) mu[j] = pushforward(quad.Y.node[j]);
    return mu;
}

void require_identity_start(const OptimalQuadruple& quad) {
    const RandomField& y0 = quad.Y.node.front();
    for (int i = 0; i < y0.atoms; ++i)
        for (int k = 1; k < y0.scenarios; ++k)
            for (int d = 0; d < y0.dim; ++d)
                if (y0.at(i, k, d) != y0.at(i, 0, d))
                    throw std::invalid_argument(
                        "lfd flows require a quadruple solved from an identity initial field");
}

}  // namespace

double require_delta1(const ControlProblem& problem) {
    const auto d1 = delta1_max(problem.model, slice_grid(problem));
    if (!d1)
        throw std::runtime_error(
            "lfd flow: no delta1 in (0,1) satisfies the contraction margin for these "
            "constants and horizon");
    return *d1;
}

ProbePath solve_probe_path(const ControlProblem& problem, const OptimalQuadruple& quad,
                           VecCRef x, const LfdOptions& opts) {
    if (!quad.log.converged)
        throw std::invalid_argument("solve_probe_path: base quadruple not converged");
    const int n = problem.dim();
    const int Kp = opts.probe_scenarios > 0 ? opts.probe_scenarios : problem.x0.scenarios;
    const double dt = problem.grid.dt();
    const int nodes = quad.Y.nodes();
    const auto& model = problem.model;

    ProbePath pp;
    pp.x = x;
    pp.noise = brownian_paths(problem.grid, problem.noise.seed() ^ kProbeSeedSalt, Kp, n);
    if (opts.center_probe_noise) pp.noise = pp.noise.centered_copy();
    const std::vector<EmpiricalMeasure> mu = base_measures(quad);

    auto zero_proc = [&]() {
        FieldProcess p;
        p.first_node = quad.Y.first_node;
        p.node.resize(nodes);
        for (int j = 0; j < nodes; ++j) {
            p.node[j] = RandomField(1, Kp, n);
            p.node[j].time_index = quad.Y.first_node + j;
            p.node[j].adapted_to = quad.Y.first_node + j;
        }
        return p;
    };
    FieldProcess u = zero_proc(), Y = zero_proc(), Z = zero_proc();

    auto forward = [&]() {
        for (int k = 0; k < Kp; ++k)
            for (int d = 0; d < n; ++d) Y.node[0].at(0, k, d) = x(d);
        for (int j = 0; j + 1 < nodes; ++j) {
            const int step = quad.Y.first_node + j;
            for (int k = 0; k < Kp; ++k) {
                const Vec dW = problem.eta * pp.noise.incr_vec(step, k);
                for (int d = 0; d < n; ++d)
                    Y.node[j + 1].at(0, k, d) =
                        Y.node[j].at(0, k, d) + dt * u.node[j].at(0, k, d) + dW(d);
            }
        }
    };

    pp.log.method = "picard_feedback(tagged)";
    bool converged = false;
    for (int it = 0; it <= opts.probe_max_iters; ++it) {
        forward();
        // backward sweep along the tagged path with the frozen measure flow
        RandomField& zT = Z.node[nodes - 1];
        for (int k = 0; k < Kp; ++k) {
            const Vec val = model.h_x(Y.node[nodes - 1].point(0, k)) +
                            model.dFT_dnu_x(mu[nodes - 1], Y.node[nodes - 1].point(0, k));
            for (int d = 0; d < n; ++d) zT.at(0, k, d) = val(d);
        }
        for (int j = nodes - 2; j >= 0; --j) {
            const CondExp ce(Y.node[j + 1], opts.basis_degree, opts.ridge);
            RandomField mean_next = u.node[j];
            mean_next *= dt;
            mean_next += Y.node[j];
            RandomField payload = Z.node[j + 1];
            if (j + 1 <= nodes - 2) {
                for (int k = 0; k < Kp; ++k) {
                    const Vec drv =
                        model.l_x(Y.node[j + 1].point(0, k), u.node[j + 1].point(0, k)) +
                        model.dF_dnu_x(mu[j + 1], Y.node[j + 1].point(0, k));
                    for (int d = 0; d < n; ++d) payload.at(0, k, d) += dt * drv(d);
                }
            }
            Z.node[j] = ce.expectation(payload, mean_next, problem.eta, dt);
        }
        double res = 0.0;
        for (int j = 0; j < nodes; ++j) {
            RandomField g(1, Kp, n);
            for (int k = 0; k < Kp; ++k) {
                const Vec val = model.l_v(Y.node[j].point(0, k), u.node[j].point(0, k)) +
                                Z.node[j].point(0, k);
                for (int d = 0; d < n; ++d) g.at(0, k, d) = val(d);
            }
            res = std::max(res, hm_norm(g));
        }
        pp.log.residuals.push_back(res);
        pp.log.iterations = it;
        if (res <= opts.probe_tol) {
            converged = true;
            break;
        }
        if (it == opts.probe_max_iters) break;
        for (int j = 0; j < nodes; ++j) {
            const RandomField fb = feedback_field(Y.node[j], Z.node[j], model);
            RandomField& uj = u.node[j];
            for (std::size_t idx = 0; idx < uj.values.size(); ++idx)
                uj.values[idx] = 0.5 * uj.values[idx] + 0.5 * fb.values[idx];
        }
    }
    if (!converged) throw std::runtime_error("solve_probe_path: Picard did not converge");
    pp.log.converged = true;
    pp.Z0_grad = Z.node.front();
    if (nodes > 1) {
        for (int k = 0; k < Kp; ++k) {
            const Vec drv = model.l_x(Y.node[0].point(0, k), u.node[0].point(0, k)) +
                            model.dF_dnu_x(mu[0], Y.node[0].point(0, k));
            for (int d = 0; d < n; ++d) pp.Z0_grad.at(0, k, d) += dt * drv(d);
        }
    }
    pp.Y = std::move(Y);
    pp.Z = std::move(Z);
    pp.u = std::move(u);
    return pp;
}

namespace {

/// Per-node exogenous sources E~[kernel(Y_base, Y_probe)] for the first-order
/// dnu system; empty when the model has no second-lfd kernel.
std::vector<RandomField> dnu_sources(const ControlProblem& problem,
                                     const OptimalQuadruple& quad, const ProbePath& probe,
                                     const std::vector<EmpiricalMeasure>& mu,
                                     RandomField* terminal_out) {
    const auto& model = problem.model;
    const int n = problem.dim();
    const int nodes = quad.Y.nodes();
    const int count = quad.Y.node.front().atoms * quad.Y.node.front().scenarios;
    const CouplingAvg src_run = detail::resolve_source_x(model, false);
    const CouplingAvg src_term = detail::resolve_source_x(model, true);

    std::vector<RandomField> out;
    if (src_run) {
        out.resize(nodes);
        for (int j = 0; j < nodes; ++j) {
            out[j] = RandomField(quad.Y.node[j].atoms, quad.Y.node[j].scenarios, n);
            PointView eval{quad.Y.node[j].values.data(), count, n, n};
            PointView copies{probe.Y.node[j].values.data(),
                             probe.Y.node[j].atoms * probe.Y.node[j].scenarios, n, n};
            src_run(mu[j], eval, copies, out[j].values.data());
        }
    }
    if (terminal_out && src_term) {
        *terminal_out = RandomField(quad.Y.node[nodes - 1].atoms,
                                    quad.Y.node[nodes - 1].scenarios, n);
        PointView eval{quad.Y.node[nodes - 1].values.data(), count, n, n};
        PointView copies{probe.Y.node[nodes - 1].values.data(),
                         probe.Y.node[nodes - 1].atoms * probe.Y.node[nodes - 1].scenarios, n,
                         n};
        src_term(mu[nodes - 1], eval, copies, terminal_out->values.data());
    }
    return out;
}

}  // namespace

LfdSolution solve_lfd_flow(const ControlProblem& problem, const OptimalQuadruple& quad,
                           VecCRef x_probe, const LfdOptions& opts) {
    if (!quad.log.converged)
        throw std::invalid_argument("solve_lfd_flow: base quadruple not converged");
    require_identity_start(quad);
    require_delta1(problem);

    LfdSolution sol;
    sol.x_probe = x_probe;
    sol.probe = solve_probe_path(problem, quad, x_probe, opts);

    const detail::PathView path{&quad.Y, &quad.Z, &quad.u};
    const detail::FlowCoeffs fc = detail::build_flow_coeffs(
        problem, path, problem.noise, opts.basis_degree, opts.ridge, false);

    RandomField term_src;
    std::vector<RandomField> sources =
        dnu_sources(problem, quad, sol.probe, fc.mu, &term_src);
    const bool has_term = term_src.size() > 0;

    detail::UnknownCoupling coupling;
    coupling.op_F = detail::resolve_couple_xxt(problem.model, false);
    coupling.op_FT = detail::resolve_couple_xxt(problem.model, true);
    detail::LinearFlowOptions lopts{opts.tol, opts.max_iters, opts.damping, 0.0};

    RandomField zero0(problem.x0.atoms, problem.x0.scenarios, problem.dim());
    detail::LinearFlowResult res = detail::linear_flow_solve(
        fc, quad.Y, zero0, 1, nullptr, sources.empty() ? nullptr : &sources,
        has_term ? &term_src : nullptr, coupling, lopts);
    sol.dY = std::move(res.DY);
    sol.dZ = std::move(res.DZ);
    sol.du = std::move(res.Du);
    sol.dZ0_grad = std::move(res.DZ0_grad);
    sol.log = std::move(res.log);
    return sol;
}

LfdSolution solve_grad_lfd_flow(const ControlProblem& problem, const OptimalQuadruple& quad,
                                const JacobianFlowSolution& matrix_flow, LfdSolution lfd,
                                const LfdOptions& opts) {
    if (problem.dim() != 1)
        throw std::invalid_argument("solve_grad_lfd_flow: scalar state only");
    if (!matrix_flow.matrix_mode)
        throw std::invalid_argument("solve_grad_lfd_flow: needs the matrix Jacobian flow");
    require_delta1(problem);
    const auto& model = problem.model;

    const detail::PathView path{&quad.Y, &quad.Z, &quad.u};
    const detail::FlowCoeffs fc = detail::build_flow_coeffs(
        problem, path, problem.noise, opts.basis_degree, opts.ridge, true);
    const int nodes = fc.nodes;
    const int count = fc.M * fc.K;

    const CouplingApply cpl3_run = detail::resolve_couple_xxxt(model, false);
    const CouplingApply cpl3_term = detail::resolve_couple_xxxt(model, true);
    const CouplingAvg src2_run = detail::resolve_source_xx(model, false);
    const CouplingAvg src2_term = detail::resolve_source_xx(model, true);

    // Known sources: W enters both the forward drift and (through l_xv W)
    // the backward driver; the remaining terms carry the third-order
    // coefficients against the first-order flows.
    std::vector<RandomField> fwd(nodes), bwd(nodes);
    RandomField term(fc.M, fc.K, 1);
    for (int j = 0; j < nodes; ++j) {
        fwd[j] = RandomField(fc.M, fc.K, 1);
        bwd[j] = RandomField(fc.M, fc.K, 1);
        const bool last = (j == nodes - 1);

        std::vector<double> cpl(count, 0.0), src(count, 0.0);
        PointView eval{quad.Y.node[j].values.data(), count, 1, 1};
        const CouplingApply& cpl_op = last ? cpl3_term : cpl3_run;
        const CouplingAvg& src_op = last ? src2_term : src2_run;
        if (cpl_op) {
            PointView vals{lfd.dY.node[j].values.data(), count, 1, 1};
            cpl_op(fc.mu[j], eval, eval, vals, cpl.data());
        }
        if (src_op) {
            PointView copies{lfd.probe.Y.node[j].values.data(),
                             lfd.probe.Y.node[j].atoms * lfd.probe.Y.node[j].scenarios, 1, 1};
            src_op(fc.mu[j], eval, copies, src.data());
        }
        // also the running-kernel ones for the terminal node's bwd slot are
        // unused (no running integral at T), matching the system's split.
        for (int pt = 0; pt < count; ++pt) {
            const double G = matrix_flow.DY.node[j].values[pt];
            const double Du_x = matrix_flow.Du.node[j].values[pt];
            const double dy = lfd.dY.node[j].values[pt];
            const double du = lfd.du.node[j].values[pt];
            if (!last) {
                const double w = fc.Bz[j][pt] * ((fc.Lxxv[j][pt] * G + fc.Lxvv[j][pt] * Du_x) * dy +
                                                 (fc.Lxvv[j][pt] * G + fc.Lvvv[j][pt] * Du_x) * du);
                fwd[j].values[pt] = w;
                bwd[j].values[pt] = (fc.T1[j][pt] * G + fc.Lxxv[j][pt] * Du_x) * dy +
                                    fc.Lxv[j][pt] * w +
                                    fc.Lxxv[j][pt] * G * du + fc.Lxvv[j][pt] * Du_x * du +
                                    G * (cpl[pt] + src[pt]);
            } else {
                term.values[pt] = fc.T1_T[pt] * G * dy + G * (cpl[pt] + src[pt]);
            }
        }
    }
    // forward source at the terminal node only feeds Du there
    {
        const int j = nodes - 1;
        for (int pt = 0; pt < count; ++pt) {
            const double G = matrix_flow.DY.node[j].values[pt];
            const double Du_x = matrix_flow.Du.node[j].values[pt];
            const double dy = lfd.dY.node[j].values[pt];
            const double du = lfd.du.node[j].values[pt];
            fwd[j].values[pt] =
                fc.Bz[j][pt] * ((fc.Lxxv[j][pt] * G + fc.Lxvv[j][pt] * Du_x) * dy +
                                (fc.Lxvv[j][pt] * G + fc.Lvvv[j][pt] * Du_x) * du);
        }
    }

    detail::UnknownCoupling no_coupling;  // the unknown does not self-couple here
    detail::LinearFlowOptions lopts{opts.tol, opts.max_iters, opts.damping, 0.0, false};
    RandomField zero0(fc.M, fc.K, 1);
    detail::LinearFlowResult res =
        detail::linear_flow_solve(fc, quad.Y, zero0, 1, &fwd, &bwd, &term, no_coupling, lopts);

    lfd.gradient_mode = true;
    lfd.gdY = std::move(res.DY);
    lfd.gdZ = std::move(res.DZ);
    lfd.gdu = std::move(res.Du);
    lfd.gdZ0_grad = std::move(res.DZ0_grad);
    return lfd;
}

TaggedMatrixFlow solve_tagged_matrix_flow(const ControlProblem& problem,
                                          const OptimalQuadruple& quad,
                                          const ProbePath& probe, const LfdOptions& opts) {
    const int n = problem.dim();

    const std::vector<EmpiricalMeasure> mu = base_measures(quad);
    const detail::PathView path{&probe.Y, &probe.Z, &probe.u};
    const detail::FlowCoeffs fc = detail::build_flow_coeffs(
        problem, path, probe.noise, opts.basis_degree, opts.ridge, false, &mu);

    // the population measure is frozen along the tagged path, so the
    // x-derivative carries no independent-copy coupling
    detail::UnknownCoupling coupling;

    RandomField dy0(1, probe.Y.node.front().scenarios, n * n);
    for (int k = 0; k < dy0.scenarios; ++k)
        for (int d = 0; d < n; ++d) dy0.at(0, k, d * n + d) = 1.0;

    detail::LinearFlowOptions lopts{opts.tol, opts.max_iters, opts.damping, 0.0};
    detail::LinearFlowResult res = detail::linear_flow_solve(
        fc, probe.Y, dy0, n, nullptr, nullptr, nullptr, coupling, lopts);
    TaggedMatrixFlow out;
    out.DY = std::move(res.DY);
    out.DZ = std::move(res.DZ);
    out.Du = std::move(res.Du);
    out.DZ0_grad = std::move(res.DZ0_grad);
    out.log = std::move(res.log);
    return out;
}

ValueLfdResult value_lfd(const ControlProblem& problem, const OptimalQuadruple& quad,
                         VecCRef x_probe, const LfdOptions& opts) {
    if (!problem.model.dF_dnu || !problem.model.dFT_dnu)
        throw std::invalid_argument("value_lfd: model must provide dF/dnu and dF_T/dnu values");
    ValueLfdResult out;
    out.path = solve_probe_path(problem, quad, x_probe, opts);
    const auto& model = problem.model;
    const std::vector<EmpiricalMeasure> mu = base_measures(quad);
    const double dt = problem.grid.dt();
    const int nodes = quad.Y.nodes();

    std::vector<double> terms;
    terms.reserve(nodes + 1);
    for (int j = 0; j + 1 < nodes; ++j) {
        const RandomField& yj = out.path.Y.node[j];
        const RandomField& uj = out.path.u.node[j];
        std::vector<double> vals(yj.scenarios);
        for (int k = 0; k < yj.scenarios; ++k)
            vals[k] = model.l(yj.point(0, k), uj.point(0, k)) +
                      model.dF_dnu(mu[j], yj.point(0, k));
        terms.push_back(dt * pairwise_sum(vals) / static_cast<double>(yj.scenarios));
    }
    const RandomField& yT = out.path.Y.node[nodes - 1];
    std::vector<double> vt(yT.scenarios);
    for (int k = 0; k < yT.scenarios; ++k)
        vt[k] = model.h(yT.point(0, k)) + model.dFT_dnu(mu[nodes - 1], yT.point(0, k));
    terms.push_back(pairwise_sum(vt) / static_cast<double>(yT.scenarios));

    // costate martingale control variate along the probe path (zero mean)
    {
        const int Kp = yT.scenarios;
        std::vector<double> cv(Kp, 0.0);
        for (int j = 0; j + 1 < nodes; ++j) {
            const int step = out.path.Z.first_node + j;
            for (int k = 0; k < Kp; ++k) {
                const Vec ew = problem.eta * out.path.noise.incr_vec(step, k);
                cv[k] += out.path.Z.node[j].point(0, k).dot(ew);
            }
        }
        terms.push_back(-pairwise_sum(cv) / static_cast<double>(Kp));
    }
    out.value = pairwise_sum(terms);

    out.grad_x = Vec::Zero(problem.dim());
    const RandomField& z0 = out.path.Z0_grad;
    for (int k = 0; k < z0.scenarios; ++k) out.grad_x += z0.point(0, k);
    out.grad_x /= static_cast<double>(z0.scenarios);
    return out;
}

}  // namespace mfc
