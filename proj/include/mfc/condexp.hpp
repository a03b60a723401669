#pragma once

#include "mfc/core.hpp"

namespace mfc {

/// Conditional expectation across scenarios, one least-squares fit per atom.
///
/// Scenario values at the next node are regressed onto a polynomial basis
/// in the next state (z-scored monomials, degree <= 2 with cross terms,
/// ridge on the non-constant columns), then pushed back through the exact
/// Gaussian transition of the Euler step: with next = mean + eta dw the
/// moments of the basis are closed-form, so E[. | current node] and the
/// martingale integrand E[. dw_j]/dt come out of the same fit. Values that
/// are polynomial in the next state are reproduced without Monte Carlo
/// noise; degenerate regressors fall back to the scenario mean.
class CondExp {
public:
    CondExp(const RandomField& next_state, int degree, double ridge);

    int basis_size() const { return p_; }
    double min_pivot() const { return min_pivot_; }

    /// Fits vals once and evaluates the requested operators: expectation_out
    /// gets E[vals | node] at the per-point transition mean (state + dt u);
    /// integrand_out gets E[vals dw_j]/dt stacked as vals.dim * n with
    /// column j at [j*vals.dim + d]. Either output may be null.
    void project(const RandomField& vals, const RandomField& mean_next, const Mat& eta,
                 double dt, RandomField* expectation_out, RandomField* integrand_out) const;

    RandomField expectation(const RandomField& vals, const RandomField& mean_next,
                            const Mat& eta, double dt) const;
    RandomField integrand(const RandomField& vals, const RandomField& mean_next,
                          const Mat& eta, double dt) const;

    /// Derivative of the fitted operator itself: the regression inputs move
    /// by V (next state) and W (transition mean) while the regressand value
    /// samples stay fixed, so the basis, its z-scores and the evaluation
    /// moments all shift. Applied to the base payload this supplies the
    /// residual-coupled part of the exact solver linearization; the value
    /// movement is handled separately through expectation().
    RandomField operator_derivative(const RandomField& base_vals,
                                    const RandomField& mean_next, const Mat& eta, double dt,
                                    const RandomField& V, const RandomField& W) const;

private:
    int M_ = 0, K_ = 0, n_ = 0, p_ = 0, degree_ = 1;
    std::vector<Vec> center_;  // per atom basis centering
    std::vector<Vec> scale_;   // per atom basis scaling (0 = dropped column)
    std::vector<Mat> phi_;     // per atom, K x p
    std::vector<Eigen::LDLT<Mat>> fact_;
    double min_pivot_ = 0.0;
};

}  // namespace mfc
