#pragma once

#include "mfc/lfd.hpp"

namespace mfc {

struct PdeOptions {
    SolveOptions solver;
    JacobianOptions flow;
    LfdOptions lfd;
    int delta_steps = 2;  // time-derivative displacement in grid steps
};

/// Signed residual components that sum to the residual exactly, plus the
/// normalisation by the largest component magnitude.
struct ResidualReport {
    std::string equation;
    int node = 0;
    double t = 0.0;
    Vec x_probe;
    std::vector<std::pair<std::string, double>> components;
    double residual = 0.0;
    double scale = 0.0;       // max |component|
    double normalized = 0.0;  // |residual| / scale
    double terminal_identity_error = 0.0;
    double dt = 0.0;
    double delta_t = 0.0;
    std::string to_json() const;
};

/// Residual of the measure-form dynamic-programming PDE at (m, t_node),
/// with the gradient/curvature of the value-function measure derivative
/// substituted from the costate and the matrix Jacobian flow. The setup
/// problem must carry an identity initial field on the atoms of m.
ResidualReport bellman_residual(const ControlProblem& setup, int t_node,
                                const PdeOptions& opts = {});

/// Residual of the measure-derivative PDE at (x, m, t_node); requires the
/// lfd flows (delta1 margin, second-lfd and third-order callbacks).
ResidualReport master_residual(const ControlProblem& setup, VecCRef x_probe, int t_node,
                               const PdeOptions& opts = {});

struct ItoTest {
    std::function<double(VecCRef, double)> psi;
    std::function<Vec(VecCRef, double)> psi_x;
    std::function<Mat(VecCRef, double)> psi_xx;
    std::function<double(VecCRef, double)> psi_t;  // optional, default 0
};

/// Compares the discrete slope of int psi d(X(s) x m) against the drift and
/// trace terms of the change-of-variable formula; returns the sup-node gap.
double ito_check(const ItoTest& test, const TimeGrid& grid, const FieldProcess& X,
                 const FieldProcess& drift, const Mat& eta);

/// Shifted copy of a problem starting at a later node (identity x0 reused).
ControlProblem at_node(const ControlProblem& setup, int node);

}  // namespace mfc
