#include "mfc/jacobian.hpp"

#include "flow_internal.hpp"

#include <cmath>

namespace mfc {

namespace {

void require_converged(const OptimalQuadruple& quad) {
    if (!quad.log.converged)
        throw std::invalid_argument("jacobian flow requires a converged quadruple");
}

detail::PathView path_of(const OptimalQuadruple& quad) {
    return {&quad.Y, &quad.Z, &quad.u};
}

}  // namespace

JacobianFlowSolution solve_jacobian_flow(const ControlProblem& problem,
                                         const OptimalQuadruple& quad, const RandomField& psi,
                                         const JacobianOptions& opts) {
    require_converged(quad);
    if (psi.adapted_to != 0)
        throw std::invalid_argument("solve_jacobian_flow: psi must be noise-independent");
    if (!psi.same_shape(problem.x0))
        throw std::invalid_argument("solve_jacobian_flow: psi shape mismatch");

    const detail::FlowCoeffs fc = detail::build_flow_coeffs(
        problem, path_of(quad), problem.noise, opts.basis_degree, opts.ridge, false);
    detail::UnknownCoupling coupling;
    coupling.op_F = detail::resolve_couple_xxt(problem.model, false);
    coupling.op_FT = detail::resolve_couple_xxt(problem.model, true);
    detail::LinearFlowOptions lopts{opts.tol, opts.max_iters, opts.damping, opts.init_fill};
    detail::LinearFlowResult res =
        detail::linear_flow_solve(fc, quad.Y, psi, 1, nullptr, nullptr, nullptr, coupling,
                                  lopts);

    JacobianFlowSolution out;
    out.matrix_mode = false;
    out.psi = psi;
    out.Dr = detail::martingale_integrand(problem.noise, fc, res.DZ);
    out.DY = std::move(res.DY);
    out.DZ = std::move(res.DZ);
    out.Du = std::move(res.Du);
    out.DZ0_grad = std::move(res.DZ0_grad);
    out.log = std::move(res.log);
    return out;
}

RandomField second_derivative_V(const ControlProblem& problem, const OptimalQuadruple& quad,
                                const RandomField& psi, const JacobianOptions& opts) {
    return solve_jacobian_flow(problem, quad, psi, opts).DZ0_grad;
}

JacobianFlowSolution matrix_jacobian(const ControlProblem& problem,
                                     const OptimalQuadruple& quad,
                                     const JacobianOptions& opts) {
    require_converged(quad);
    const int n = problem.dim();
    RandomField dy0(problem.x0.atoms, problem.x0.scenarios, n * n);
    for (int i = 0; i < dy0.atoms; ++i)
        for (int k = 0; k < dy0.scenarios; ++k)
            for (int d = 0; d < n; ++d) dy0.at(i, k, d * n + d) = 1.0;

    const detail::FlowCoeffs fc = detail::build_flow_coeffs(
        problem, path_of(quad), problem.noise, opts.basis_degree, opts.ridge, false);
    detail::UnknownCoupling coupling;
    if (opts.measure_coupling) {
        coupling.op_F = detail::resolve_couple_xxt(problem.model, false);
        coupling.op_FT = detail::resolve_couple_xxt(problem.model, true);
    }
    detail::LinearFlowOptions lopts{opts.tol, opts.max_iters, opts.damping, opts.init_fill};
    detail::LinearFlowResult res =
        detail::linear_flow_solve(fc, quad.Y, dy0, n, nullptr, nullptr, nullptr, coupling,
                                  lopts);

    JacobianFlowSolution out;
    out.matrix_mode = true;
    out.DY = std::move(res.DY);
    out.DZ = std::move(res.DZ);
    out.Du = std::move(res.Du);
    out.DZ0_grad = std::move(res.DZ0_grad);
    out.log = std::move(res.log);
    return out;
}

FdJacobianReport fd_check_jacobian(const ControlProblem& problem, const RandomField& psi,
                                   double eps, const SolveOptions& solver_opts,
                                   const JacobianOptions& flow_opts) {
    const OptimalQuadruple base = solve_optimal(problem, solver_opts);
    if (!base.log.converged)
        throw std::runtime_error("fd_check_jacobian: base solve did not converge");
    const JacobianFlowSolution flow = solve_jacobian_flow(problem, base, psi, flow_opts);

    ControlProblem shifted = problem;
    RandomField step = psi;
    step *= eps;
    shifted.x0 = problem.x0 + step;
    const OptimalQuadruple pert = solve_optimal(shifted, solver_opts);
    if (!pert.log.converged)
        throw std::runtime_error("fd_check_jacobian: perturbed solve did not converge");

    FdJacobianReport rep;
    rep.eps = eps;
    rep.psi_norm = hm_norm(psi);
    for (int j = 0; j < base.Y.nodes(); ++j) {
        RandomField dy = pert.Y.node[j] - base.Y.node[j];
        RandomField dz = pert.Z.node[j] - base.Z.node[j];
        RandomField du = pert.u.node[j] - base.u.node[j];
        dy *= 1.0 / eps;
        dz *= 1.0 / eps;
        du *= 1.0 / eps;
        rep.y_part = std::max(rep.y_part, hm_norm(dy - flow.DY.node[j]));
        rep.z_part = std::max(rep.z_part, hm_norm(dz - flow.DZ.node[j]));
        rep.u_part = std::max(rep.u_part, hm_norm(du - flow.Du.node[j]));
    }
    rep.discrepancy = rep.y_part + rep.z_part + rep.u_part;
    return rep;
}

}  // namespace mfc
