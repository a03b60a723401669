#pragma once

#include "mfc/model.hpp"

namespace mfc {

struct FeedbackResult {
    Vec u;
    int newton_iters = 0;
    double residual = 0.0;
};

struct FeedbackOptions {
    double tol = 1e-10;
    int max_iters = 50;
};

/// Solves l_v(x, u) + p = 0 by damped Newton from u = 0. Strong convexity
/// of l in v (A(v)) makes the root unique; non-convergence throws.
FeedbackResult feedback_u(VecCRef x, VecCRef p, const CostModel& model,
                          const FeedbackOptions& opts = {});

struct HamiltonianResult {
    double H = 0.0;
    Vec H_x;  // l_x(x, u(x,p))
    Vec H_p;  // u(x,p)
};

/// H(x,p) = inf_v [ l(x,v) + v.p ] evaluated through the feedback map.
HamiltonianResult hamiltonian(VecCRef x, VecCRef p, const CostModel& model,
                              const FeedbackOptions& opts = {});

struct FeedbackJacobians {
    Mat du_dy;  // -l_vv^{-1} l_vx at (x, u(x,p))
    Mat du_dz;  // -l_vv^{-1}
};

FeedbackJacobians feedback_jacobians(VecCRef x, VecCRef p, const CostModel& model,
                                     const FeedbackOptions& opts = {});

/// Pointwise feedback applied over a whole field pair.
RandomField feedback_field(const RandomField& y, const RandomField& z, const CostModel& model,
                           const FeedbackOptions& opts = {});

}  // namespace mfc
