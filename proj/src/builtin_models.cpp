#include "mfc/model.hpp"

#include <cmath>

namespace mfc {

namespace {

double param(const std::map<std::string, double>& p, const std::string& key, double fallback) {
    auto it = p.find(key);
    return it == p.end() ? fallback : it->second;
}

void fill_quadratic_l_h(CostModel& m, double q, double q_T, double r) {
    m.l = [q, r](VecCRef x, VecCRef v) {
        return 0.5 * r * v.squaredNorm() + 0.5 * q * x.squaredNorm();
    };
    m.l_x = [q](VecCRef x, VecCRef) { return Vec(q * x); };
    m.l_v = [r](VecCRef, VecCRef v) { return Vec(r * v); };
    m.l_xx = [q](VecCRef x, VecCRef) { return Mat(q * Mat::Identity(x.size(), x.size())); };
    m.l_xv = [](VecCRef x, VecCRef) { return Mat(Mat::Zero(x.size(), x.size())); };
    m.l_vv = [r](VecCRef x, VecCRef) { return Mat(r * Mat::Identity(x.size(), x.size())); };
    m.h = [q_T](VecCRef x) { return 0.5 * q_T * x.squaredNorm(); };
    m.h_x = [q_T](VecCRef x) { return Vec(q_T * x); };
    m.h_xx = [q_T](VecCRef x) { return Mat(q_T * Mat::Identity(x.size(), x.size())); };
    m.l_xxx = [](VecCRef, VecCRef) { return 0.0; };
    m.l_xxv = [](VecCRef, VecCRef) { return 0.0; };
    m.l_xvv = [](VecCRef, VecCRef) { return 0.0; };
    m.l_vvv = [](VecCRef, VecCRef) { return 0.0; };
    m.h_xxx = [](VecCRef) { return 0.0; };
}

void fill_zero_terminal_functional(CostModel& m) {
    m.F_T = [](const EmpiricalMeasure&) { return 0.0; };
    m.dFT_dnu = [](const EmpiricalMeasure&, VecCRef) { return 0.0; };
    m.dFT_dnu_x = [](const EmpiricalMeasure&, VecCRef x) { return Vec(Vec::Zero(x.size())); };
    m.dFT_dnu_xx = [](const EmpiricalMeasure&, VecCRef x) {
        return Mat(Mat::Zero(x.size(), x.size()));
    };
    m.dFT_dnu_xxx = [](const EmpiricalMeasure&, VecCRef) { return 0.0; };
    // second-lfd kernels of F_T left unset: identically zero
}

CostModel make_lq_scalar(const std::map<std::string, double>& p) {
    const double q = param(p, "q", 1.0);
    const double q_T = param(p, "q_T", 1.0);
    const double r = param(p, "r", 1.0);
    const double lb = param(p, "lambda_bar", 0.5);
    if (r <= 0.0) throw std::invalid_argument("lq_scalar: r must be positive");

    CostModel m;
    m.name = "lq_scalar";
    m.dim = 1;
    fill_quadratic_l_h(m, q, q_T, r);
    m.F = [lb](const EmpiricalMeasure& mu) { return 0.5 * lb * mu.second_moment(); };
    m.dF_dnu = [lb](const EmpiricalMeasure&, VecCRef x) { return 0.5 * lb * x.squaredNorm(); };
    m.dF_dnu_x = [lb](const EmpiricalMeasure&, VecCRef x) { return Vec(lb * x); };
    m.dF_dnu_xx = [lb](const EmpiricalMeasure&, VecCRef x) {
        return Mat(lb * Mat::Identity(x.size(), x.size()));
    };
    m.dF_dnu_xxx = [](const EmpiricalMeasure&, VecCRef) { return 0.0; };
    // second-lfd kernels left unset: identically zero
    fill_zero_terminal_functional(m);

    auto& k = m.constants;
    k.lambda = r;
    k.c_l = std::max({std::abs(q), r, 1e-8});
    k.c_h = std::max(std::abs(q_T), 1e-8);
    k.c = std::max(2.0 * lb, 1e-8);
    k.c_T = 0.0;
    k.c_prime = -lb;     // lifted: <D^2F(Y),Y> = lb ||Y||^2
    k.c_l_prime = -q;
    k.c_h_prime = -q_T;
    k.c_T_prime = 0.0;
    return m;
}

CostModel make_lq_mean(const std::map<std::string, double>& p) {
    const double q = param(p, "q", 1.0);
    const double q_T = param(p, "q_T", 1.0);
    const double r = param(p, "r", 1.0);
    const double sb = param(p, "s_bar", 0.5);
    if (r <= 0.0) throw std::invalid_argument("lq_mean: r must be positive");

    CostModel m;
    m.name = "lq_mean";
    m.dim = 1;
    fill_quadratic_l_h(m, q, q_T, r);
    m.F = [sb](const EmpiricalMeasure& mu) { return 0.5 * sb * mu.mean().squaredNorm(); };
    m.dF_dnu = [sb](const EmpiricalMeasure& mu, VecCRef x) { return sb * mu.mean().dot(x); };
    m.dF_dnu_x = [sb](const EmpiricalMeasure& mu, VecCRef) { return Vec(sb * mu.mean()); };
    m.dF_dnu_xx = [](const EmpiricalMeasure&, VecCRef x) {
        return Mat(Mat::Zero(x.size(), x.size()));
    };
    m.d2F_dnu2 = [sb](const EmpiricalMeasure&, VecCRef x, VecCRef xt) { return sb * x.dot(xt); };
    m.d2F_dnu2_x = [sb](const EmpiricalMeasure&, VecCRef, VecCRef xt) { return Vec(sb * xt); };
    m.d2F_dnu2_xxt = [sb](const EmpiricalMeasure&, VecCRef x, VecCRef) {
        return Mat(sb * Mat::Identity(x.size(), x.size()));
    };
    m.couple_xxt_F = constant_coupling(sb * Mat::Identity(1, 1));
    m.source_x_F = [sb](const EmpiricalMeasure&, PointView eval, PointView copy_pts,
                        double* out) {
        Vec mean_copy = Vec::Zero(eval.dim);
        for (int q2 = 0; q2 < copy_pts.count; ++q2) mean_copy += copy_pts[q2];
        mean_copy /= static_cast<double>(copy_pts.count);
        for (int j = 0; j < eval.count; ++j)
            for (int d = 0; d < eval.dim; ++d)
                out[static_cast<std::size_t>(j) * eval.dim + d] += sb * mean_copy(d);
    };
    m.dF_dnu_xxx = [](const EmpiricalMeasure&, VecCRef) { return 0.0; };
    // Dx^2 d2F/dnu2 and Dx^2 Dxt d2F/dnu2 vanish for the bilinear kernel
    fill_zero_terminal_functional(m);

    auto& k = m.constants;
    k.lambda = r;
    k.c_l = std::max({std::abs(q), r, 1e-8});
    k.c_h = std::max(std::abs(q_T), 1e-8);
    k.c = std::max(2.0 * sb, 1e-8);
    k.c_T = 0.0;
    k.c_prime = 0.0;     // lifted: <D^2F(Y),Y> = sb (mean Y)^2 >= 0
    k.c_l_prime = -q;
    k.c_h_prime = -q_T;
    k.c_T_prime = 0.0;
    return m;
}

CostModel make_exp_well(const std::map<std::string, double>& p) {
    const double q = param(p, "q", 0.5);
    const double q_T = param(p, "q_T", 0.5);
    const double r = param(p, "r", 1.0);
    const double kp = param(p, "kappa", 0.5);
    if (r <= 0.0) throw std::invalid_argument("exp_well: r must be positive");

    CostModel m;
    m.name = "exp_well";
    m.dim = 1;
    fill_quadratic_l_h(m, q, q_T, r);
    m.F = [kp](const EmpiricalMeasure& mu) {
        return kp * mu.integrate([](Eigen::Map<const Vec> x) {
            const double s = x.squaredNorm();
            return s + std::exp(-s);
        });
    };
    m.dF_dnu = [kp](const EmpiricalMeasure&, VecCRef x) {
        const double s = x.squaredNorm();
        return kp * (s + std::exp(-s));
    };
    m.dF_dnu_x = [kp](const EmpiricalMeasure&, VecCRef x) {
        const double e = std::exp(-x.squaredNorm());
        return Vec(kp * (2.0 * x - 2.0 * e * x));
    };
    m.dF_dnu_xx = [kp](const EmpiricalMeasure&, VecCRef x) {
        const double s = x.squaredNorm();
        const double e = std::exp(-s);
        Mat out = (2.0 - 2.0 * e) * Mat::Identity(x.size(), x.size());
        out += 4.0 * e * x * x.transpose();
        return Mat(kp * out);
    };
    m.dF_dnu_xxx = [kp](const EmpiricalMeasure&, VecCRef x) {
        const double s = x.squaredNorm();
        return kp * (12.0 * x(0) - 8.0 * x(0) * s) * std::exp(-s);
    };
    // second-lfd kernels left unset: identically zero
    fill_zero_terminal_functional(m);

    auto& k = m.constants;
    k.lambda = r;
    k.c_l = std::max({std::abs(q), r, 1e-8});
    k.c_h = std::max(std::abs(q_T), 1e-8);
    // sup |d2/dx2 (x^2+e^{-x^2})| = 2 + max (4x^2-2)e^{-x^2} = 2.8929...
    k.c = 6.0 * kp;
    k.c_T = 0.0;
    k.c_prime = 0.0;  // integrand is convex: second derivative >= 0
    k.c_l_prime = -q;
    k.c_h_prime = -q_T;
    k.c_T_prime = 0.0;
    return m;
}

}  // namespace

std::vector<std::string> builtin_models() {
    return {"lq_scalar", "lq_mean", "exp_well", "zero_cost"};
}

CostModel make_builtin(const std::string& name, const std::map<std::string, double>& params) {
    if (name == "lq_scalar") return make_lq_scalar(params);
    if (name == "lq_mean") return make_lq_mean(params);
    if (name == "exp_well") return make_exp_well(params);
    if (name == "zero_cost") {
        std::map<std::string, double> p{{"q", 0.0}, {"q_T", 0.0}, {"r", 1.0}, {"lambda_bar", 0.0}};
        for (const auto& [key, value] : params) p[key] = value;
        CostModel m = make_lq_scalar(p);
        m.name = "zero_cost";
        return m;
    }
    throw std::invalid_argument("unknown builtin model: " + name);
}

}  // namespace mfc
