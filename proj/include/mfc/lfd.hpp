#pragma once

#include "mfc/jacobian.hpp"

namespace mfc {

/// Tagged particle started at a deterministic point with the population
/// measure flow frozen from the base ensemble. Scenario axis carries its
/// own noise bundle (independent copy of the base noise).
struct ProbePath {
    Vec x;
    FieldProcess Y, Z, u;  // one atom, probe_scenarios scenarios
    RandomField Z0_grad;   // start costate with its driver cell (D_x of the
                           // value measure derivative at the probe)
    NoiseBundle noise;
    ConvergenceLog log;
};

struct LfdOptions {
    double tol = 1e-8;
    int max_iters = 200;
    double damping = 0.5;
    int basis_degree = 2;
    double ridge = 1e-8;
    int probe_scenarios = 0;  // 0 = same count as the base ensemble
    double probe_tol = 1e-9;
    int probe_max_iters = 400;
    bool center_probe_noise = false;  // moment-match the probe increments
};

/// Measure-derivative flows of the solution at one probe point x:
/// dY/dnu, dZ/dnu, du/dnu over the base (atom, scenario) ensemble, and in
/// gradient mode their derivatives with respect to the base point.
struct LfdSolution {
    Vec x_probe;
    bool gradient_mode = false;
    ProbePath probe;
    FieldProcess dY, dZ, du;
    RandomField dZ0_grad;        // start-node dnu costate with its driver cell
    FieldProcess gdY, gdZ, gdu;  // gradient mode only
    RandomField gdZ0_grad;
    ConvergenceLog log;
};

ProbePath solve_probe_path(const ControlProblem& problem, const OptimalQuadruple& quad,
                           VecCRef x, const LfdOptions& opts = {});

/// Linear FBSDE for the first-order measure derivative; requires the
/// delta1 margin of the model constants and a quadruple solved from an
/// identity initial field.
LfdSolution solve_lfd_flow(const ControlProblem& problem, const OptimalQuadruple& quad,
                           VecCRef x_probe, const LfdOptions& opts = {});

/// Adds the base-point gradients of the measure-derivative flows (scalar
/// state only; needs third-order callbacks and the matrix Jacobian flow).
LfdSolution solve_grad_lfd_flow(const ControlProblem& problem, const OptimalQuadruple& quad,
                                const JacobianFlowSolution& matrix_flow, LfdSolution lfd,
                                const LfdOptions& opts = {});

/// Tagged single-path matrix flow DxY, DxZ at the probe point: the
/// x-derivative of the tagged solution at frozen population measure (the
/// curvature the dynamic-programming residuals substitute).
struct TaggedMatrixFlow {
    FieldProcess DY, DZ, Du;  // one atom, dim n*n
    RandomField DZ0_grad;
    ConvergenceLog log;
};
TaggedMatrixFlow solve_tagged_matrix_flow(const ControlProblem& problem,
                                          const OptimalQuadruple& quad,
                                          const ProbePath& probe,
                                          const LfdOptions& opts = {});

/// Measure derivative of the value function at a probe point:
/// running/terminal costs along the tagged path plus the measure-kernel
/// terms; grad_x is the tagged costate at the start node.
struct ValueLfdResult {
    double value = 0.0;       // raw representative (additive constant free)
    Vec grad_x;               // D_x of the measure derivative at x
    ProbePath path;
};
ValueLfdResult value_lfd(const ControlProblem& problem, const OptimalQuadruple& quad,
                         VecCRef x_probe, const LfdOptions& opts = {});

/// delta1 gate used by the lfd solvers; throws when no margin exists.
double require_delta1(const ControlProblem& problem);

}  // namespace mfc
