#include "mfc/condexp.hpp"

#include <cmath>

namespace mfc {

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

int basis_count(int n, int degree) {
    int p = 1 + n;
    if (degree >= 2) p += n * (n + 1) / 2;
    return p;
}
}  // namespace

CondExp::CondExp(const RandomField& next_state, int degree, double ridge)
    : M_(next_state.atoms), K_(next_state.scenarios), n_(next_state.dim), degree_(degree) {
    if (degree < 1 || degree > 2) throw std::invalid_argument("CondExp: degree must be 1 or 2");
    p_ = basis_count(n_, degree);
    center_.resize(M_);
    scale_.resize(M_);
    phi_.resize(M_);
    fact_.resize(M_);
    std::vector<double> pivots(M_, 0.0);

    parallel_for(M_, [&](int i) {
        Vec mean = Vec::Zero(n_), alpha = Vec::Zero(n_);
        for (int k = 0; k < K_; ++k) mean += next_state.point(i, k);
        mean /= K_;
        for (int d = 0; d < n_; ++d) {
            double var = 0.0;
            for (int k = 0; k < K_; ++k) {
                const double c = next_state.at(i, k, d) - mean(d);
                var += c * c;
            }
            var /= std::max(1, K_ - 1);
            alpha(d) = var > 1e-24 ? 1.0 / std::sqrt(var) : 0.0;
        }
        Mat phi(K_, p_);
        for (int k = 0; k < K_; ++k) {
            phi(k, 0) = 1.0;
            int col = 1;
            Vec z(n_);
            for (int d = 0; d < n_; ++d) {
                z(d) = (next_state.at(i, k, d) - mean(d)) * alpha(d);
                phi(k, col++) = z(d);
            }
            if (degree >= 2)
                for (int d = 0; d < n_; ++d)
                    for (int e = d; e < n_; ++e) phi(k, col++) = z(d) * z(e);
        }
        Mat gram = phi.transpose() * phi;
        for (int c = 1; c < p_; ++c) gram(c, c) += ridge * K_;  // intercept unpenalised
        Eigen::LDLT<Mat> fact(gram);
        if (fact.info() != Eigen::Success)
            throw std::runtime_error("CondExp: regression normal equations not factorizable");
        pivots[i] = fact.vectorD().minCoeff();
        center_[i] = std::move(mean);
        scale_[i] = std::move(alpha);
        phi_[i] = std::move(phi);
        fact_[i] = std::move(fact);
    });
    min_pivot_ = *std::min_element(pivots.begin(), pivots.end());
    if (!(min_pivot_ > 0.0))
        throw std::runtime_error("CondExp: rank-deficient regression (basis size " +
                                 std::to_string(p_) + ", min pivot " +
                                 std::to_string(min_pivot_) + ")");
}

void CondExp::project(const RandomField& vals, const RandomField& mean_next, const Mat& eta,
                      double dt, RandomField* expectation_out,
                      RandomField* integrand_out) const {
    if (vals.atoms != M_ || vals.scenarios != K_)
        throw std::invalid_argument("CondExp: value shape mismatch");
    if (mean_next.atoms != M_ || mean_next.scenarios != K_ || mean_next.dim != n_)
        throw std::invalid_argument("CondExp: transition-mean shape mismatch");
    const int D = vals.dim;
    if (expectation_out) {
        *expectation_out = RandomField(M_, K_, D);
        expectation_out->time_index = vals.time_index;
    }
    if (integrand_out) {
        *integrand_out = RandomField(M_, K_, D * n_);
        integrand_out->time_index = vals.time_index;
    }
    const Mat eta_dt = eta * dt;  // E[(eta dw)_d dw_j] = eta_{dj} dt

    parallel_for(M_, [&](int i) {
        Eigen::Map<const RowMat> v(&vals.values[static_cast<std::size_t>(i) * K_ * D], K_, D);
        const Mat beta = fact_[i].solve(phi_[i].transpose() * v);  // p x D
        const Vec& alpha = scale_[i];
        const Vec& mu = center_[i];

        // scaled transition covariance, shared across scenarios of this atom
        Mat cov_scaled;
        if (degree_ >= 2) {
            cov_scaled = (alpha * alpha.transpose()).cwiseProduct(eta * eta.transpose() * dt);
        }

        Vec ephi(p_), ephi_dw(p_);
        for (int k = 0; k < K_; ++k) {
            const auto m = mean_next.point(i, k);
            Vec zbar(n_);
            for (int d = 0; d < n_; ++d) zbar(d) = alpha(d) * (m(d) - mu(d));

            if (expectation_out) {
                ephi(0) = 1.0;
                int col = 1;
                for (int d = 0; d < n_; ++d) ephi(col++) = zbar(d);
                if (degree_ >= 2)
                    for (int d = 0; d < n_; ++d)
                        for (int e = d; e < n_; ++e)
                            ephi(col++) = zbar(d) * zbar(e) + cov_scaled(d, e);
                for (int c = 0; c < D; ++c) {
                    double acc = 0.0;
                    for (int q = 0; q < p_; ++q) acc += beta(q, c) * ephi(q);
                    expectation_out->at(i, k, c) = acc;
                }
            }
            if (integrand_out) {
                for (int j = 0; j < n_; ++j) {
                    ephi_dw(0) = 0.0;
                    int col = 1;
                    for (int d = 0; d < n_; ++d) ephi_dw(col++) = alpha(d) * eta_dt(d, j);
                    if (degree_ >= 2)
                        for (int d = 0; d < n_; ++d)
                            for (int e = d; e < n_; ++e)
                                ephi_dw(col++) = zbar(d) * alpha(e) * eta_dt(e, j) +
                                                 zbar(e) * alpha(d) * eta_dt(d, j);
                    for (int c = 0; c < D; ++c) {
                        double acc = 0.0;
                        for (int q = 1; q < p_; ++q) acc += beta(q, c) * ephi_dw(q);
                        integrand_out->at(i, k, j * D + c) = acc / dt;
                    }
                }
            }
        }
    });
}


RandomField CondExp::operator_derivative(const RandomField& base_vals,
                                         const RandomField& mean_next, const Mat& eta,
                                         double dt, const RandomField& V,
                                         const RandomField& W) const {
    if (base_vals.atoms != M_ || base_vals.scenarios != K_)
        throw std::invalid_argument("CondExp: base payload shape mismatch");
    if (V.dim != n_ || W.dim != n_)
        throw std::invalid_argument("CondExp: direction shape mismatch");
    const int D = base_vals.dim;
    RandomField out(M_, K_, D);
    out.time_index = base_vals.time_index;
    const Mat eeT_dt = eta * eta.transpose() * dt;

    parallel_for(M_, [&](int i) {
        Eigen::Map<const RowMat> sval(&base_vals.values[static_cast<std::size_t>(i) * K_ * D],
                                      K_, D);
        const Mat beta = fact_[i].solve(phi_[i].transpose() * sval);  // p x D
        const Mat rho = sval - phi_[i] * beta;                        // K x D
        const Vec& alpha = scale_[i];
        const Vec& mu = center_[i];

        // movements of the per-atom z-score parameters
        Vec dmu = Vec::Zero(n_);
        for (int k = 0; k < K_; ++k) dmu += V.point(i, k);
        dmu /= K_;
        Vec dvar = Vec::Zero(n_);
        for (int k = 0; k < K_; ++k) {
            for (int d = 0; d < n_; ++d) {
                const double yc = alpha(d) > 0.0 ? phi_[i](k, 1 + d) / alpha(d) : 0.0;
                dvar(d) += 2.0 * yc * (V.at(i, k, d) - dmu(d));
            }
        }
        dvar /= std::max(1, K_ - 1);
        Vec dalpha(n_);
        for (int d = 0; d < n_; ++d)
            dalpha(d) = alpha(d) > 0.0 ? -0.5 * alpha(d) * alpha(d) * alpha(d) * dvar(d) : 0.0;

        // basis movement at the sample points
        Mat dphi = Mat::Zero(K_, p_);
        for (int k = 0; k < K_; ++k) {
            Vec z(n_), dz(n_);
            for (int d = 0; d < n_; ++d) {
                z(d) = phi_[i](k, 1 + d);
                const double yc = alpha(d) > 0.0 ? z(d) / alpha(d) : 0.0;
                dz(d) = alpha(d) * (V.at(i, k, d) - dmu(d)) + dalpha(d) * yc;
            }
            int col = 1;
            for (int d = 0; d < n_; ++d) dphi(k, col++) = dz(d);
            if (degree_ >= 2)
                for (int d = 0; d < n_; ++d)
                    for (int e = d; e < n_; ++e) dphi(k, col++) = dz(d) * z(e) + z(d) * dz(e);
        }
        const Mat dbeta =
            fact_[i].solve(dphi.transpose() * rho - phi_[i].transpose() * (dphi * beta));

        Mat cov_scaled, dcov;
        if (degree_ >= 2) {
            cov_scaled = (alpha * alpha.transpose()).cwiseProduct(eeT_dt);
            dcov = (dalpha * alpha.transpose() + alpha * dalpha.transpose()).cwiseProduct(eeT_dt);
        }

        Vec ephi(p_), dephi(p_);
        for (int k = 0; k < K_; ++k) {
            const auto m = mean_next.point(i, k);
            Vec zbar(n_), dzbar(n_);
            for (int d = 0; d < n_; ++d) {
                const double mc = m(d) - mu(d);
                zbar(d) = alpha(d) * mc;
                dzbar(d) = alpha(d) * (W.at(i, k, d) - dmu(d)) + dalpha(d) * mc;
            }
            ephi(0) = 1.0;
            dephi(0) = 0.0;
            int col = 1;
            for (int d = 0; d < n_; ++d) {
                ephi(col) = zbar(d);
                dephi(col) = dzbar(d);
                ++col;
            }
            if (degree_ >= 2)
                for (int d = 0; d < n_; ++d)
                    for (int e = d; e < n_; ++e) {
                        ephi(col) = zbar(d) * zbar(e) + cov_scaled(d, e);
                        dephi(col) = dzbar(d) * zbar(e) + zbar(d) * dzbar(e) + dcov(d, e);
                        ++col;
                    }
            for (int c = 0; c < D; ++c) {
                double acc = 0.0;
                for (int q = 0; q < p_; ++q)
                    acc += dephi(q) * beta(q, c) + ephi(q) * dbeta(q, c);
                out.at(i, k, c) = acc;
            }
        }
    });
    return out;
}

RandomField CondExp::expectation(const RandomField& vals, const RandomField& mean_next,
                                 const Mat& eta, double dt) const {
    RandomField out;
    project(vals, mean_next, eta, dt, &out, nullptr);
    return out;
}

RandomField CondExp::integrand(const RandomField& vals, const RandomField& mean_next,
                               const Mat& eta, double dt) const {
    RandomField out;
    project(vals, mean_next, eta, dt, nullptr, &out);
    return out;
}

}  // namespace mfc
