#include "flow_internal.hpp"

#include <cmath>

namespace mfc::detail {

FlowCoeffs build_flow_coeffs(const ControlProblem& problem, const PathView& path,
                             const NoiseBundle& /*noise*/, int basis_degree, double ridge,
                             bool third_order,
                             const std::vector<EmpiricalMeasure>* mu_override) {
    const auto& model = problem.model;
    const int n = model.dim;
    const RandomField& y0 = path.Y->node.front();
    const int M = y0.atoms;
    const int K = y0.scenarios;
    const int nodes = path.Y->nodes();
    const std::size_t per_node = static_cast<std::size_t>(M) * K * n * n;

    if (third_order && n != 1)
        throw std::invalid_argument("third-order flow coefficients: scalar state only");
    if (per_node * static_cast<std::size_t>(nodes) > 400000000ULL)
        throw std::invalid_argument("flow coefficients exceed the memory cap");
    if (mu_override && static_cast<int>(mu_override->size()) != nodes)
        throw std::invalid_argument("measure override must cover every node");

    FlowCoeffs fc;
    fc.first_node = path.Y->first_node;
    fc.nodes = nodes;
    fc.M = M;
    fc.K = K;
    fc.n = n;
    fc.dt = problem.grid.dt();
    fc.eta = problem.eta;
    fc.A.assign(nodes, {});
    fc.Bz.assign(nodes, {});
    fc.QQ.assign(nodes, {});
    fc.CC.assign(nodes, {});
    if (!mu_override) fc.mu.resize(nodes);
    fc.ce.resize(nodes);
    fc.mean_next.resize(nodes);
    fc.third_order = third_order;
    if (third_order) {
        fc.T1.assign(nodes, {});
        fc.Lxv.assign(nodes, {});
        fc.Lxxv.assign(nodes, {});
        fc.Lxvv.assign(nodes, {});
        fc.Lvvv.assign(nodes, {});
    }

    for (int j = 0; j < nodes; ++j) {
        const RandomField& y = path.Y->node[j];
        const RandomField& u = path.u->node[j];
        if (!mu_override) fc.mu[j] = pushforward(y);
        const EmpiricalMeasure& mu = mu_override ? (*mu_override)[j] : fc.mu[j];
        if (j + 1 < nodes) {
            fc.ce[j] =
                std::make_unique<CondExp>(path.Y->node[j + 1], basis_degree, ridge);
            RandomField mn = u;
            mn *= fc.dt;
            mn += y;
            fc.mean_next[j] = std::move(mn);
        }

        fc.A[j].resize(per_node);
        fc.Bz[j].resize(per_node);
        fc.QQ[j].resize(per_node);
        fc.CC[j].resize(per_node);
        if (third_order) {
            const std::size_t pts = static_cast<std::size_t>(M) * K;
            fc.T1[j].resize(pts);
            fc.Lxv[j].resize(pts);
            fc.Lxxv[j].resize(pts);
            fc.Lxvv[j].resize(pts);
            fc.Lvvv[j].resize(pts);
        }
        parallel_for(M, [&](int i) {
            for (int k = 0; k < K; ++k) {
                const auto x = y.point(i, k);
                const auto v = u.point(i, k);
                const Mat lvv = model.l_vv(x, v);
                const Mat lxv = model.l_xv(x, v);
                Eigen::LDLT<Mat> ldlt(lvv);
                const Mat a = -ldlt.solve(lxv.transpose());
                const Mat b = -ldlt.solve(Mat::Identity(n, n));
                const Mat qq = model.l_xx(x, v) + lxv * a + model.dF_dnu_xx(mu, x);
                const Mat cc = lxv * b;
                const std::size_t off = (static_cast<std::size_t>(i) * K + k) * n * n;
                Eigen::Map<Mat>(&fc.A[j][off], n, n) = a;
                Eigen::Map<Mat>(&fc.Bz[j][off], n, n) = b;
                Eigen::Map<Mat>(&fc.QQ[j][off], n, n) = qq;
                Eigen::Map<Mat>(&fc.CC[j][off], n, n) = cc;
                if (third_order) {
                    const std::size_t pt = static_cast<std::size_t>(i) * K + k;
                    fc.T1[j][pt] = (model.l_xxx ? model.l_xxx(x, v) : 0.0) +
                                   (model.dF_dnu_xxx ? model.dF_dnu_xxx(mu, x) : 0.0);
                    fc.Lxv[j][pt] = lxv(0, 0);
                    fc.Lxxv[j][pt] = model.l_xxv ? model.l_xxv(x, v) : 0.0;
                    fc.Lxvv[j][pt] = model.l_xvv ? model.l_xvv(x, v) : 0.0;
                    fc.Lvvv[j][pt] = model.l_vvv ? model.l_vvv(x, v) : 0.0;
                }
            }
        });
    }

    // base regressand of each conditional-expectation fit, for the
    // operator-movement part of the flow linearization
    fc.base_payload.resize(nodes);
    for (int j = 0; j + 1 < nodes; ++j) {
        RandomField payload = path.Z->node[j + 1];
        if (j + 1 <= nodes - 2) {
            const RandomField& y1 = path.Y->node[j + 1];
            const RandomField& u1 = path.u->node[j + 1];
            const EmpiricalMeasure& mu1 = mu_override ? (*mu_override)[j + 1] : fc.mu[j + 1];
            parallel_for(M, [&](int i) {
                for (int k = 0; k < K; ++k) {
                    const Vec drv = model.l_x(y1.point(i, k), u1.point(i, k)) +
                                    model.dF_dnu_x(mu1, y1.point(i, k));
                    for (int d = 0; d < n; ++d)
                        payload.at(i, k, d) += fc.dt * drv(d);
                }
            });
        }
        fc.base_payload[j] = std::move(payload);
    }

    fc.QT.resize(per_node);
    if (third_order) fc.T1_T.resize(static_cast<std::size_t>(M) * K);
    const RandomField& yT = path.Y->node[nodes - 1];
    const EmpiricalMeasure& muT = mu_override ? (*mu_override)[nodes - 1] : fc.mu[nodes - 1];
    parallel_for(M, [&](int i) {
        for (int k = 0; k < K; ++k) {
            const auto x = yT.point(i, k);
            const Mat qt = model.h_xx(x) + model.dFT_dnu_xx(muT, x);
            Eigen::Map<Mat>(&fc.QT[(static_cast<std::size_t>(i) * K + k) * n * n], n, n) = qt;
            if (third_order)
                fc.T1_T[static_cast<std::size_t>(i) * K + k] =
                    (model.h_xxx ? model.h_xxx(x) : 0.0) +
                    (model.dFT_dnu_xxx ? model.dFT_dnu_xxx(muT, x) : 0.0);
        }
    });
    return fc;
}

CouplingApply resolve_couple_xxt(const CostModel& model, bool terminal) {
    if (terminal) {
        if (model.couple_xxt_FT) return model.couple_xxt_FT;
        if (model.d2FT_dnu2_xxt) return pointwise_coupling(model.d2FT_dnu2_xxt);
    } else {
        if (model.couple_xxt_F) return model.couple_xxt_F;
        if (model.d2F_dnu2_xxt) return pointwise_coupling(model.d2F_dnu2_xxt);
    }
    return {};
}

CouplingAvg resolve_source_x(const CostModel& model, bool terminal) {
    if (terminal) {
        if (model.source_x_FT) return model.source_x_FT;
        if (model.d2FT_dnu2_x) return pointwise_source(model.d2FT_dnu2_x);
    } else {
        if (model.source_x_F) return model.source_x_F;
        if (model.d2F_dnu2_x) return pointwise_source(model.d2F_dnu2_x);
    }
    return {};
}

CouplingApply resolve_couple_xxxt(const CostModel& model, bool terminal) {
    if (terminal) {
        if (model.couple_xxxt_FT) return model.couple_xxxt_FT;
        if (model.d2FT_dnu2_xxxt)
            return pointwise_coupling([f = model.d2FT_dnu2_xxxt](const EmpiricalMeasure& mu,
                                                                 VecCRef x, VecCRef xt) {
                return Mat(Mat::Constant(1, 1, f(mu, x, xt)));
            });
    } else {
        if (model.couple_xxxt_F) return model.couple_xxxt_F;
        if (model.d2F_dnu2_xxxt)
            return pointwise_coupling([f = model.d2F_dnu2_xxxt](const EmpiricalMeasure& mu,
                                                                VecCRef x, VecCRef xt) {
                return Mat(Mat::Constant(1, 1, f(mu, x, xt)));
            });
    }
    return {};
}

CouplingAvg resolve_source_xx(const CostModel& model, bool terminal) {
    if (terminal) {
        if (model.source_xx_FT) return model.source_xx_FT;
        if (model.d2FT_dnu2_xx)
            return pointwise_source([f = model.d2FT_dnu2_xx](const EmpiricalMeasure& mu,
                                                             VecCRef x, VecCRef xt) {
                return Vec(Vec::Constant(1, f(mu, x, xt)));
            });
    } else {
        if (model.source_xx_F) return model.source_xx_F;
        if (model.d2F_dnu2_xx)
            return pointwise_source([f = model.d2F_dnu2_xx](const EmpiricalMeasure& mu,
                                                            VecCRef x, VecCRef xt) {
                return Vec(Vec::Constant(1, f(mu, x, xt)));
            });
    }
    return {};
}

void apply_coeff(const std::vector<double>& coef, int n, int cols, const RandomField& in,
                 RandomField& out, bool accumulate) {
    const int points = in.atoms * in.scenarios;
    parallel_for(points, [&](int pt) {
        const double* m = &coef[static_cast<std::size_t>(pt) * n * n];
        const double* x = &in.values[static_cast<std::size_t>(pt) * n * cols];
        double* o = &out.values[static_cast<std::size_t>(pt) * n * cols];
        for (int c = 0; c < cols; ++c) {
            for (int r2 = 0; r2 < n; ++r2) {
                double acc = accumulate ? o[c * n + r2] : 0.0;
                for (int d = 0; d < n; ++d) acc += m[d * n + r2] * x[c * n + d];
                o[c * n + r2] = acc;
            }
        }
    });
}

namespace {

/// drv += couple(eval = path Y points; copies = copy ensemble) column by column.
void add_coupling(const CouplingApply& op, const EmpiricalMeasure& mu, const RandomField& y,
                  const RandomField& copy_y, const RandomField& copy_dy, int n, int cols,
                  RandomField& drv) {
    if (!op) return;
    const int count = y.atoms * y.scenarios;
    const int copy_count = copy_y.atoms * copy_y.scenarios;
    PointView eval{y.values.data(), count, n, n};
    PointView copies{copy_y.values.data(), copy_count, n, n};
    std::vector<double> colbuf(static_cast<std::size_t>(count) * n);
    for (int c = 0; c < cols; ++c) {
        PointView vals{copy_dy.values.data() + static_cast<std::size_t>(c) * n, copy_count, n,
                       copy_dy.dim};
        std::fill(colbuf.begin(), colbuf.end(), 0.0);
        op(mu, eval, copies, vals, colbuf.data());
        for (int pt = 0; pt < count; ++pt)
            for (int d = 0; d < n; ++d)
                drv.values[static_cast<std::size_t>(pt) * n * cols + c * n + d] +=
                    colbuf[static_cast<std::size_t>(pt) * n + d];
    }
}

}  // namespace

LinearFlowResult linear_flow_solve(const FlowCoeffs& fc, const FieldProcess& pathY,
                                   const RandomField& DY0, int cols,
                                   const std::vector<RandomField>* fwd_src,
                                   const std::vector<RandomField>* bwd_src,
                                   const RandomField* term_src,
                                   const UnknownCoupling& coupling,
                                   const LinearFlowOptions& opts) {
    const int nodes = fc.nodes;
    const int n = fc.n;
    const int D = n * cols;
    const double dt = fc.dt;

    auto make_process = [&](double fill) {
        FieldProcess p;
        p.first_node = fc.first_node;
        p.node.resize(nodes);
        for (int j = 0; j < nodes; ++j) {
            p.node[j] = RandomField(fc.M, fc.K, D);
            p.node[j].time_index = fc.first_node + j;
            p.node[j].adapted_to = fc.first_node + j;
            if (fill != 0.0)
                std::fill(p.node[j].values.begin(), p.node[j].values.end(), fill);
        }
        return p;
    };

    FieldProcess DZ = make_process(opts.init_fill);
    FieldProcess DY = make_process(0.0);
    LinearFlowResult out;
    out.log.method = "linear_flow_picard";

    auto forward_pass = [&]() {
        DY.node[0] = DY0;
        for (int j = 0; j + 1 < nodes; ++j) {
            RandomField drift(fc.M, fc.K, D);
            apply_coeff(fc.A[j], n, cols, DY.node[j], drift, false);
            apply_coeff(fc.Bz[j], n, cols, DZ.node[j], drift, true);
            if (fwd_src) drift += (*fwd_src)[j];
            RandomField& next = DY.node[j + 1];
            for (std::size_t idx = 0; idx < next.values.size(); ++idx)
                next.values[idx] = DY.node[j].values[idx] + dt * drift.values[idx];
        }
    };

    RandomField drv(fc.M, fc.K, D);
    bool converged = false;
    double theta = opts.damping;
    double prev_delta = std::numeric_limits<double>::infinity();
    // Per iteration: forward pass from the mixed costate, then one exact
    // backward pass given DY (the unknown enters the backward recursion
    // only through already-computed later nodes), then damped mixing of
    // the candidate. Damping acts on the forward/backward feedback alone.
    for (int it = 0; it < opts.max_iters; ++it) {
        forward_pass();

        FieldProcess DZc;
        DZc.first_node = fc.first_node;
        DZc.node.resize(nodes);
        DZc.node[nodes - 1] = RandomField(fc.M, fc.K, D);
        apply_coeff(fc.QT, n, cols, DY.node[nodes - 1], DZc.node[nodes - 1], false);
        add_coupling(coupling.op_FT, fc.mu[nodes - 1], pathY.node[nodes - 1],
                     coupling.copy_Y ? coupling.copy_Y->node[nodes - 1] : pathY.node[nodes - 1],
                     coupling.copy_DY ? coupling.copy_DY->node[nodes - 1] : DY.node[nodes - 1],
                     n, cols, DZc.node[nodes - 1]);
        if (term_src) DZc.node[nodes - 1] += *term_src;

        for (int j = nodes - 2; j >= 0; --j) {
            RandomField payload = DZc.node[j + 1];
            if (j + 1 <= nodes - 2) {
                apply_coeff(fc.QQ[j + 1], n, cols, DY.node[j + 1], drv, false);
                apply_coeff(fc.CC[j + 1], n, cols, DZc.node[j + 1], drv, true);
                add_coupling(coupling.op_F, fc.mu[j + 1], pathY.node[j + 1],
                             coupling.copy_Y ? coupling.copy_Y->node[j + 1]
                                             : pathY.node[j + 1],
                             coupling.copy_DY ? coupling.copy_DY->node[j + 1]
                                              : DY.node[j + 1],
                             n, cols, drv);
                if (bwd_src) drv += (*bwd_src)[j + 1];
                for (std::size_t idx = 0; idx < payload.values.size(); ++idx)
                    payload.values[idx] += dt * drv.values[idx];
            }
            DZc.node[j] = fc.ce[j]->expectation(payload, fc.mean_next[j], fc.eta, dt);
            if (opts.linearize_operator) {
                // regression inputs move with the flow: V at the fit node,
                // W at the transition mean (Du lagged through the mixed DZ)
                RandomField wfield(fc.M, fc.K, D);
                apply_coeff(fc.A[j], n, cols, DY.node[j], wfield, false);
                apply_coeff(fc.Bz[j], n, cols, DZ.node[j], wfield, true);
                if (fwd_src) wfield += (*fwd_src)[j];
                wfield *= dt;
                wfield += DY.node[j];
                for (int c = 0; c < cols; ++c) {
                    RandomField vcol(fc.M, fc.K, n), wcol(fc.M, fc.K, n);
                    for (int pt = 0; pt < fc.M * fc.K; ++pt)
                        for (int d = 0; d < n; ++d) {
                            vcol.values[static_cast<std::size_t>(pt) * n + d] =
                                DY.node[j + 1].values[static_cast<std::size_t>(pt) * D + c * n + d];
                            wcol.values[static_cast<std::size_t>(pt) * n + d] =
                                wfield.values[static_cast<std::size_t>(pt) * D + c * n + d];
                        }
                    const RandomField corr = fc.ce[j]->operator_derivative(
                        fc.base_payload[j], fc.mean_next[j], fc.eta, dt, vcol, wcol);
                    for (int pt = 0; pt < fc.M * fc.K; ++pt)
                        for (int d = 0; d < n; ++d)
                            DZc.node[j].values[static_cast<std::size_t>(pt) * D + c * n + d] +=
                                corr.values[static_cast<std::size_t>(pt) * n + d];
                }
            }
        }

        double delta = 0.0;
        for (int j = 0; j < nodes; ++j) delta = std::max(delta, hm_norm(DZc.node[j] - DZ.node[j]));
        for (int j = 0; j < nodes; ++j) {
            RandomField& z = DZ.node[j];
            for (std::size_t idx = 0; idx < z.values.size(); ++idx)
                z.values[idx] = (1.0 - theta) * z.values[idx] + theta * DZc.node[j].values[idx];
        }

        out.log.residuals.push_back(delta);
        out.log.iterations = it + 1;
        if (delta <= opts.tol) {
            converged = true;
            break;
        }
        // shrink the damping whenever the fixed-point gap stops improving
        if (delta > 0.98 * prev_delta) theta = std::max(0.05, 0.6 * theta);
        prev_delta = delta;
    }
    if (!converged) {
        std::string hist;
        for (std::size_t q = 0; q < out.log.residuals.size(); q += 10)
            hist += " " + std::to_string(out.log.residuals[q]);
        throw std::runtime_error("linear_flow_solve: Picard iteration did not contract;"
                                 " residuals" + hist);
    }
    out.log.converged = true;

    forward_pass();
    FieldProcess Du = make_process(0.0);
    for (int j = 0; j < nodes; ++j) {
        apply_coeff(fc.A[j], n, cols, DY.node[j], Du.node[j], false);
        apply_coeff(fc.Bz[j], n, cols, DZ.node[j], Du.node[j], true);
        if (fwd_src) Du.node[j] += (*fwd_src)[j];
    }

    // gradient-consistent start-node costate: add the local driver cell
    out.DZ0_grad = DZ.node.front();
    if (nodes > 1) {
        apply_coeff(fc.QQ[0], n, cols, DY.node[0], drv, false);
        apply_coeff(fc.CC[0], n, cols, DZ.node[0], drv, true);
        add_coupling(coupling.op_F, fc.mu[0], pathY.node[0],
                     coupling.copy_Y ? coupling.copy_Y->node[0] : pathY.node[0],
                     coupling.copy_DY ? coupling.copy_DY->node[0] : DY.node[0], n, cols, drv);
        if (bwd_src) drv += (*bwd_src)[0];
        for (std::size_t idx = 0; idx < out.DZ0_grad.values.size(); ++idx)
            out.DZ0_grad.values[idx] += dt * drv.values[idx];
    }
    out.DY = std::move(DY);
    out.DZ = std::move(DZ);
    out.Du = std::move(Du);
    return out;
}

FieldProcess martingale_integrand(const NoiseBundle& /*noise*/, const FlowCoeffs& fc,
                                  const FieldProcess& DZ) {
    const int n = fc.n;
    const int cols = DZ.node.front().dim / n;
    if (cols != 1)
        throw std::invalid_argument("martingale_integrand: directional flows only");
    FieldProcess Dr;
    Dr.first_node = fc.first_node;
    Dr.node.resize(fc.nodes);
    for (int j = 0; j + 1 < fc.nodes; ++j) {
        Dr.node[j] = fc.ce[j]->integrand(DZ.node[j + 1], fc.mean_next[j], fc.eta, fc.dt);
        Dr.node[j].time_index = fc.first_node + j;
        Dr.node[j].adapted_to = fc.first_node + j;
    }
    Dr.node[fc.nodes - 1] = RandomField(fc.M, fc.K, n * n);
    Dr.node[fc.nodes - 1].time_index = fc.first_node + fc.nodes - 1;
    return Dr;
}

}  // namespace mfc::detail
