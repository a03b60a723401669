#pragma once

#include "mfc/fbsde.hpp"

namespace mfc {

struct JacobianOptions {
    double tol = 1e-8;       // sup-node H_m fixed-point tolerance
    int max_iters = 200;
    double damping = 0.5;
    int basis_degree = 2;
    double ridge = 1e-8;
    double init_fill = 0.0;  // initial costate iterate fill (uniqueness probes)
    // When false the matrix flow differentiates at frozen measure (the
    // x-gradient the dynamic-programming residuals substitute); the default
    // keeps the independent-copy coupling of the full matrix system.
    bool measure_coupling = true;
};

/// Directional (dim n) or matrix (dim n*n, column j at [j*n+d]) flow of the
/// solution with respect to the initial field along a frozen optimal path.
struct JacobianFlowSolution {
    bool matrix_mode = false;
    RandomField psi;
    FieldProcess DY, DZ, Du;
    FieldProcess Dr;       // directional mode only
    RandomField DZ0_grad;  // start-node flow costate with its driver cell
    ConvergenceLog log;
};

/// Linear FBSDE for (DY, DZ) with DY(start) = psi; psi must be independent
/// of the noise. Coefficients are frozen along the converged quadruple.
JacobianFlowSolution solve_jacobian_flow(const ControlProblem& problem,
                                         const OptimalQuadruple& quad, const RandomField& psi,
                                         const JacobianOptions& opts = {});

/// D_X^2 V(X x m, t)(psi): the gradient-consistent start-node flow costate.
RandomField second_derivative_V(const ControlProblem& problem, const OptimalQuadruple& quad,
                                const RandomField& psi, const JacobianOptions& opts = {});

/// n x n flows with DY(start) = Identity; factorises the directional flow
/// as DZ^psi = DxZ psi for noise-independent psi.
JacobianFlowSolution matrix_jacobian(const ControlProblem& problem,
                                     const OptimalQuadruple& quad,
                                     const JacobianOptions& opts = {});

struct FdJacobianReport {
    double eps = 0.0;
    double discrepancy = 0.0;  // sup-node |dY| + |dZ| + |du| gap to the flow
    double y_part = 0.0, z_part = 0.0, u_part = 0.0;
    double psi_norm = 0.0;
};

/// Difference quotient of the full nonlinear solve from x0 + eps psi under
/// common random numbers, compared to the Jacobian flow.
FdJacobianReport fd_check_jacobian(const ControlProblem& problem, const RandomField& psi,
                                   double eps, const SolveOptions& solver_opts = {},
                                   const JacobianOptions& flow_opts = {});

}  // namespace mfc
