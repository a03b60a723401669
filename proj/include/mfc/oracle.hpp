#pragma once

#include "mfc/fbsde.hpp"

namespace mfc {

/// Scalar LQ family covering the quadratic and mean-interaction builtins:
/// l = r v^2/2 + q x^2/2, h = q_T x^2/2, F = lambda_bar/2 int x^2 dmu
/// plus s_bar/2 (int x dmu)^2.
struct LqParams {
    double q = 1.0;
    double q_T = 1.0;
    double r = 1.0;
    double lambda_bar = 0.0;
    double s_bar = 0.0;
    double eta = 0.0;
};

/// Backward RK4 integration at sub-step resolution. P gains the
/// per-particle weight q + lambda_bar; Phi = P + R gains additionally
/// s_bar and drives the ensemble mean.
struct RiccatiSolution {
    TimeGrid grid;
    LqParams params;
    std::vector<double> P;    // at grid nodes
    std::vector<double> Phi;  // at grid nodes; R = Phi - P
    double trace_offset = 0.0;  // (eta^2/2) int_t0^T P ds

    double P_at(int node) const { return P.at(node); }
    double R_at(int node) const { return Phi.at(node) - P.at(node); }

    /// u*(x; ybar) = -(P x + R ybar)/r at a grid node.
    double feedback(int node, double x, double ybar) const {
        return -(P_at(node) * x + R_at(node) * ybar) / params.r;
    }

    /// Deterministic mean path ybar' = -Phi ybar / r from the given start mean.
    std::vector<double> mean_path(double mean0, int start_node = 0) const;

    /// V = P0/2 (m2 - mean^2) + Phi0/2 mean^2 + trace offset, at start_node.
    double value(double second_moment, double mean, int start_node = 0) const;
};

/// Integrates the Riccati ODEs backward with RK4 at grid resolution x substeps.
/// Throws on finite-horizon blow-up.
RiccatiSolution riccati_solve(const LqParams& params, const TimeGrid& grid, int substeps = 10);

/// Linear-functional-derivative cross term of the costate at the start node:
/// the x-probe representative dZ/dnu(x, t0) for the mean-interaction model.
double lq_dzdnu_oracle(const RiccatiSolution& ric, double mean0, double x_probe,
                       int start_node = 0);

/// Closed-loop rollout of the oracle feedback on the problem's own noise;
/// returns (state, control) processes ready for objective().
std::pair<FieldProcess, FieldProcess> oracle_feedback_rollout(const ControlProblem& problem,
                                                              const RiccatiSolution& ric);

/// Central difference (J(u+eps psi) - J(u-eps psi)) / (2 eps) under the
/// problem's fixed noise.
double fd_gradient_oracle(const ControlProblem& problem, const FieldProcess& control,
                          const FieldProcess& psi, double eps);

}  // namespace mfc
