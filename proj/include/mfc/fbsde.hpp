#pragma once

#include "mfc/hamiltonian.hpp"
#include "mfc/model.hpp"

namespace mfc {

struct RegressionDiagnostics {
    int basis_degree = 2;
    double ridge = 1e-8;
    double min_pivot = 0.0;
    double max_integrand_norm = 0.0;  // sup-node martingale-integrand H_m norm
};

/// Costate process: terminal Z = h_x + D_x dF_T/dnu along the terminal
/// state; r_j estimated from the centered martingale increment.
struct AdjointSolution {
    FieldProcess Z;
    FieldProcess r;  // dim n*n, column j at r[j*n + d]
    /// Z at the start node plus dt times the start-node driver: the exact
    /// gradient of the discrete objective in the initial field, used
    /// wherever the initial costate stands for D_X V.
    RandomField Z0_grad;
    RegressionDiagnostics diag;
};

struct ConvergenceLog {
    std::string method;
    std::vector<double> residuals;
    bool converged = false;
    bool c0_warning = false;
    int iterations = 0;
};

struct OptimalQuadruple {
    FieldProcess Y, Z, u, r;
    RandomField Z0_grad;  // gradient-consistent initial costate (D_X V)
    ConvergenceLog log;
    double first_order_residual = 0.0;  // sup-node H_m norm of l_v(Y,u)+Z
};

enum class SolveMethod { gradient_descent, picard_feedback };

struct SolveOptions {
    SolveMethod method = SolveMethod::picard_feedback;
    double tol = 1e-6;            // sup-node H_m first-order residual
    int max_iters = 0;            // 0 = method default
    double rho = 0.0;             // gradient step; 0 = c0/(c_l+c_T+c_h+c+1)^2
    double theta = 0.5;           // feedback damping
    int basis_degree = 2;
    double ridge = 1e-8;
    FeedbackOptions feedback;
};

/// Explicit Euler: Y_{k+1} = Y_k + u_k dt + eta dw_k, Y at start = x0.
FieldProcess simulate_forward(const ControlProblem& problem, const FieldProcess& control);

/// Backward regression sweep for the costate along a given state/control.
AdjointSolution solve_adjoint_bsde(const ControlProblem& problem, const FieldProcess& Y,
                                   const FieldProcess& control, int basis_degree = 2,
                                   double ridge = 1e-8);

/// Left-endpoint quadrature of the running cost plus terminal terms.
double objective(const ControlProblem& problem, const FieldProcess& control);

/// Same estimand with the costate martingale control variate subtracted:
/// the sampled sum of eta' Z dw has exact zero mean by adaptedness, and
/// removes the scenario-common fluctuation of the cost. Used by the
/// dynamic-programming residual evaluators.
double objective_cv(const ControlProblem& problem, const OptimalQuadruple& quad);

/// Exact objective gradient l_v(Y, u) + Z via the adjoint solve.
FieldProcess gradient(const ControlProblem& problem, const FieldProcess& control,
                      int basis_degree = 2, double ridge = 1e-8);

double sup_node_norm(const FieldProcess& f);

OptimalQuadruple solve_optimal(const ControlProblem& problem, const SolveOptions& opts = {});

/// Objective at the optimum; depends on x0 only through its pushforward.
double value_function(const ControlProblem& problem, const SolveOptions& opts = {});

/// Re-solves from (node, Y(node)) sharing the noise tail; returns
/// max over nodes >= mid_node of |Y_r - Y| + |Z_r - Z| in H_m.
double flow_restart_check(const ControlProblem& problem, const OptimalQuadruple& quad,
                          int mid_node, const SolveOptions& opts = {});

// shared helpers
FieldProcess zero_control(const ControlProblem& problem);
double ensemble_mean(const RandomField& f,
                     const std::function<double(Eigen::Map<const Vec>)>& fn);
double first_order_residual(const ControlProblem& problem, const FieldProcess& Y,
                            const FieldProcess& u, const FieldProcess& Z);

}  // namespace mfc
