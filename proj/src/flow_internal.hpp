#pragma once

// Internal machinery shared by the Jacobian-flow and lfd-flow solvers:
// frozen coefficients along an optimal path and the damped Picard core for
// the associated linear FBSDEs.

#include "mfc/condexp.hpp"
#include "mfc/fbsde.hpp"

#include <memory>

namespace mfc::detail {

/// Slimmed quadruple view: any (Y, Z, u) triple a flow is frozen along.
struct PathView {
    const FieldProcess* Y = nullptr;
    const FieldProcess* Z = nullptr;
    const FieldProcess* u = nullptr;
};

/// Per-node frozen coefficients along (Y, Z, u):
///   A  = du/dy,  Bz = du/dz          (feedback Jacobians)
///   QQ = l_xx + l_xv A + Dx^2 dF/dnu (backward local term on DY)
///   CC = l_xv Bz                     (backward local term on DZ)
/// Matrices stored column-major per (atom, scenario) point.
struct FlowCoeffs {
    int first_node = 0;
    int nodes = 0;
    int M = 0, K = 0, n = 0;
    double dt = 0.0;
    Mat eta;
    std::vector<std::vector<double>> A, Bz, QQ, CC;
    std::vector<double> QT;  // terminal h_xx + Dx^2 dF_T/dnu
    std::vector<EmpiricalMeasure> mu;
    std::vector<std::unique_ptr<CondExp>> ce;  // fitted on the node j+1 state
    std::vector<RandomField> mean_next;        // transition means Y_j + dt u_j
    std::vector<RandomField> base_payload;     // base regressand at each fit

    // third-order extras for the gradient-of-lfd system (scalar state only)
    bool third_order = false;
    std::vector<std::vector<double>> T1, Lxv, Lxxv, Lxvv, Lvvv;
    std::vector<double> T1_T;  // terminal h_xxx + Dx^3 dF_T/dnu
};

/// mu_override supplies the measure flow when the path is a tagged particle
/// whose own pushforward is not the population law.
FlowCoeffs build_flow_coeffs(const ControlProblem& problem, const PathView& path,
                             const NoiseBundle& noise, int basis_degree, double ridge,
                             bool third_order,
                             const std::vector<EmpiricalMeasure>* mu_override = nullptr);

/// Batch coupling operators resolved against the model: explicit batch form
/// when provided, pointwise fallback otherwise, empty when the kernel is
/// absent (identically zero).
CouplingApply resolve_couple_xxt(const CostModel& model, bool terminal);
CouplingAvg resolve_source_x(const CostModel& model, bool terminal);
CouplingApply resolve_couple_xxxt(const CostModel& model, bool terminal);
CouplingAvg resolve_source_xx(const CostModel& model, bool terminal);

struct LinearFlowResult {
    FieldProcess DY, DZ, Du;
    RandomField DZ0_grad;  // DZ at the start node plus dt x start-node driver
    ConvergenceLog log;
};

struct LinearFlowOptions {
    double tol = 1e-8;
    int max_iters = 200;
    double damping = 0.5;
    double init_fill = 0.0;
    bool linearize_operator = true;  // carry the regression-operator movement
};

/// Measure coupling of the unknown flow itself (kernel Dx Dxt d2F/dnu2
/// against the pooled copy ensemble). `copy_*` views may point at a
/// different ensemble than the unknown (tagged solves freeze them).
struct UnknownCoupling {
    CouplingApply op_F, op_FT;
    const FieldProcess* copy_Y = nullptr;   // defaults to the path itself
    const FieldProcess* copy_DY = nullptr;  // defaults to the unknown
};

/// Solves the frozen-coefficient linear FBSDE for an unknown with `cols`
/// stacked n-vector columns:
///   forward  DY' = A DY + Bz DZ + fwd_src,  DY(start) = DY0
///   backward DZ_j = E_j[ DZ_{j+1} + dt (QQ DY + CC DZ + couple(DY) +
///                        bwd_src)_{j+1} ], no running driver at the
///                        terminal node (right-endpoint rule, matching the
///                        adjoint scheme; bwd_src[0] is never consumed)
///   terminal DZ(T) = QT DY(T) + couple_T(DY(T)) + term_src
/// Du = A DY + Bz DZ + fwd_src. Damped Picard iteration.
LinearFlowResult linear_flow_solve(const FlowCoeffs& fc, const FieldProcess& pathY,
                                   const RandomField& DY0, int cols,
                                   const std::vector<RandomField>* fwd_src,
                                   const std::vector<RandomField>* bwd_src,
                                   const RandomField* term_src,
                                   const UnknownCoupling& coupling,
                                   const LinearFlowOptions& opts);

/// Per-point matrix action out_col (+)= coef * in_col for every stacked column.
void apply_coeff(const std::vector<double>& coef, int n, int cols, const RandomField& in,
                 RandomField& out, bool accumulate);

/// r-style martingale integrand recovery from a converged costate flow.
FieldProcess martingale_integrand(const NoiseBundle& noise, const FlowCoeffs& fc,
                                  const FieldProcess& DZ);

}  // namespace mfc::detail
