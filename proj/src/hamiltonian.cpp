#include "mfc/hamiltonian.hpp"

#include <cmath>

namespace mfc {

FeedbackResult feedback_u(VecCRef x, VecCRef p, const CostModel& model,
                          const FeedbackOptions& opts) {
    const int n = model.dim;
    Vec u = Vec::Zero(n);
    Vec g = model.l_v(x, u) + p;
    double res = g.norm();
    int it = 0;
    auto merit = [&](const Vec& v) { return model.l(x, v) + v.dot(p); };
    while (res > opts.tol && it < opts.max_iters) {
        const Mat lvv = model.l_vv(x, u);
        Eigen::LDLT<Mat> ldlt(lvv);
        if (ldlt.info() != Eigen::Success)
            throw std::runtime_error("feedback_u: l_vv not factorizable (A(v) violated?)");
        const Vec step = ldlt.solve(-g);
        // Armijo backtracking on the Lagrangian
        double alpha = 1.0;
        const double base = merit(u);
        const double slope = g.dot(step);
        while (alpha > 1e-8 && merit(u + alpha * step) > base + 1e-4 * alpha * slope)
            alpha *= 0.5;
        u += alpha * step;
        g = model.l_v(x, u) + p;
        res = g.norm();
        ++it;
    }
    if (res > opts.tol)
        throw std::runtime_error("feedback_u: Newton failed to converge (A(v) violated?)");
    return {u, it, res};
}

HamiltonianResult hamiltonian(VecCRef x, VecCRef p, const CostModel& model,
                              const FeedbackOptions& opts) {
    const FeedbackResult fb = feedback_u(x, p, model, opts);
    HamiltonianResult out;
    out.H = model.l(x, fb.u) + fb.u.dot(p);
    out.H_x = model.l_x(x, fb.u);
    out.H_p = fb.u;
    return out;
}

FeedbackJacobians feedback_jacobians(VecCRef x, VecCRef p, const CostModel& model,
                                     const FeedbackOptions& opts) {
    const FeedbackResult fb = feedback_u(x, p, model, opts);
    const Mat lvv = model.l_vv(x, fb.u);
    Eigen::LDLT<Mat> ldlt(lvv);
    if (ldlt.info() != Eigen::Success)
        throw std::runtime_error("feedback_jacobians: singular l_vv");
    const Mat lvx = model.l_xv(x, fb.u).transpose();
    FeedbackJacobians j;
    j.du_dy = -ldlt.solve(lvx);
    j.du_dz = -ldlt.solve(Mat::Identity(model.dim, model.dim));
    return j;
}

RandomField feedback_field(const RandomField& y, const RandomField& z, const CostModel& model,
                           const FeedbackOptions& opts) {
    if (!y.same_shape(z)) throw std::invalid_argument("feedback_field: shape mismatch");
    RandomField u(y.atoms, y.scenarios, y.dim);
    u.time_index = y.time_index;
    u.adapted_to = std::max(y.adapted_to, z.adapted_to);
    parallel_for(y.atoms, [&](int i) {
        for (int k = 0; k < y.scenarios; ++k) {
            const FeedbackResult fb = feedback_u(y.point(i, k), z.point(i, k), model, opts);
            for (int d = 0; d < y.dim; ++d) u.at(i, k, d) = fb.u(d);
        }
    });
    return u;
}

}  // namespace mfc
