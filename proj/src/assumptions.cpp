#include "mfc/model.hpp"

#include <json.hpp>

#include <cmath>
#include <sstream>

namespace mfc {

namespace {

double op_norm(const Mat& a) {
    if (a.rows() == 1 && a.cols() == 1) return std::abs(a(0, 0));
    return a.jacobiSvd().singularValues()(0);
}

std::string loc_str(VecCRef x) {
    std::ostringstream os;
    os << "x=[" << x.transpose() << "]";
    return os.str();
}

std::string loc_str(VecCRef x, VecCRef v) {
    std::ostringstream os;
    os << "x=[" << x.transpose() << "] v=[" << v.transpose() << "]";
    return os.str();
}

struct MarginTracker {
    double worst = std::numeric_limits<double>::infinity();
    std::string where;
    void offer(double margin, const std::string& loc) {
        if (margin < worst) {
            worst = margin;
            where = loc;
        }
    }
    AssumptionCheck finish(const std::string& name) const {
        AssumptionCheck c;
        c.name = name;
        c.pass = worst >= 0.0;
        c.worst_margin = worst;
        c.worst_location = where;
        return c;
    }
};

}  // namespace

AssumptionReport check_assumptions(const CostModel& model, const TimeGrid& grid,
                                   const ProbeSet& probes) {
    if (probes.xs.empty() || probes.measures.empty())
        throw std::invalid_argument("check_assumptions: probe set is empty");
    const auto& k = model.constants;
    const int n = model.dim;
    AssumptionReport report;
    report.c0_value = c0(model, grid);
    report.delta1 = delta1_max(model, grid);

    GaussianStream dirs(0x5eedu);

    MarginTracker a1, a2, a3, a5, a6, b1, b2, b5s, b5d, b5l;
    for (std::size_t pi = 0; pi < probes.xs.size(); ++pi) {
        const Vec& x = probes.xs[pi];
        const Vec& v = probes.vs[pi % probes.vs.size()];
        const std::string loc = loc_str(x, v);
        const double g2 = 1.0 + x.squaredNorm() + v.squaredNorm();

        a1.offer(k.c_l * g2 - std::abs(model.l(x, v)), loc);
        a1.offer(k.c_l * std::sqrt(g2) - model.l_x(x, v).norm(), loc);
        a1.offer(k.c_l * std::sqrt(g2) - model.l_v(x, v).norm(), loc);

        const Mat lxx = model.l_xx(x, v);
        const Mat lxv = model.l_xv(x, v);
        const Mat lvv = model.l_vv(x, v);
        a2.offer(k.c_l - op_norm(lxx), loc);
        a2.offer(k.c_l - op_norm(lxv), loc);
        a2.offer(k.c_l - op_norm(lvv), loc);

        const double hx2 = 1.0 + x.squaredNorm();
        a3.offer(k.c_h * hx2 - std::abs(model.h(x)), loc_str(x));
        a3.offer(k.c_h * std::sqrt(hx2) - model.h_x(x).norm(), loc_str(x));
        a3.offer(k.c_h - op_norm(model.h_xx(x)), loc_str(x));

        // A(v): joint convexity, random directions plus the pure-control one
        for (int d = 0; d < 16; ++d) {
            Vec xi = dirs.next_vec(n);
            Vec zeta = dirs.next_vec(n);
            if (d == 0) xi.setZero();
            const double nx = xi.norm(), nz = zeta.norm();
            if (nz > 0) zeta /= nz;
            if (nx > 0) xi /= nx;
            const double quad = xi.dot(lxx * xi) + 2.0 * zeta.dot(lxv.transpose() * xi) +
                                zeta.dot(lvv * zeta);
            a5.offer(quad - k.lambda * zeta.squaredNorm() + k.c_l_prime * xi.squaredNorm(), loc);
        }
        a6.offer(x.dot(model.h_xx(x) * x) + k.c_h_prime * x.squaredNorm(), loc_str(x));
    }

    const double root2 = std::sqrt(2.0);
    for (const auto& mu : probes.measures) {
        for (std::size_t pi = 0; pi < probes.xs.size(); pi += 7) {  // thinned sweep
            const Vec& x = probes.xs[pi];
            const Vec& xt = probes.xts[pi % probes.xts.size()];
            const std::string loc = loc_str(x);
            const double lin = 1.0 + x.norm();

            b1.offer(k.c / root2 * lin - model.dF_dnu_x(mu, x).norm(), loc);
            b1.offer(k.c_T / root2 * lin - model.dFT_dnu_x(mu, x).norm(), loc);

            const Mat fxx = model.dF_dnu_xx(mu, x);
            const Mat ftxx = model.dFT_dnu_xx(mu, x);
            b2.offer(k.c / 2.0 - op_norm(fxx), loc);
            b2.offer(k.c_T / 2.0 - op_norm(ftxx), loc);
            const Mat kxxt = model.d2F_dnu2_xxt ? model.d2F_dnu2_xxt(mu, x, xt)
                                                : Mat::Zero(n, n);
            const Mat ktxxt = model.d2FT_dnu2_xxt ? model.d2FT_dnu2_xxt(mu, x, xt)
                                                  : Mat::Zero(n, n);
            b2.offer(k.c / 2.0 - op_norm(kxxt), loc);
            b2.offer(k.c_T / 2.0 - op_norm(ktxxt), loc);

            // pointwise convexity variants
            const double fq = x.dot(fxx * x);
            const double ftq = x.dot(ftxx * x);
            const double kq = x.dot(kxxt * xt);
            const double ktq = x.dot(ktxxt * xt);
            b5s.offer(fq + k.c_prime * x.squaredNorm(), loc);
            b5s.offer(kq, loc);
            b5s.offer(ftq + k.c_T_prime * x.squaredNorm(), loc);
            b5s.offer(ktq, loc);
            b5d.offer(fq + kq + k.c_prime * x.squaredNorm(), loc);
            b5d.offer(ftq + ktq + k.c_T_prime * x.squaredNorm(), loc);
        }

        // lifted variant B(v)(b): identity field on the probe support, random Y
        const int support = mu.size();
        std::vector<double> ybuf(static_cast<std::size_t>(support) * n);
        GaussianStream yg(0x11f7edULL ^ static_cast<std::uint64_t>(support));
        for (double& yv : ybuf) yv = yg.next();
        std::vector<double> xbuf(static_cast<std::size_t>(support) * n);
        for (int j = 0; j < support; ++j)
            for (int d = 0; d < n; ++d) xbuf[static_cast<std::size_t>(j) * n + d] = mu.point(j)(d);
        PointView xs{xbuf.data(), support, n};
        PointView ys{ybuf.data(), support, n};
        auto lifted = [&](const std::function<Mat(const EmpiricalMeasure&, VecCRef)>& dxx,
                          const CouplingApply& couple, double cp) {
            std::vector<double> d2(static_cast<std::size_t>(support) * n, 0.0);
            for (int j = 0; j < support; ++j) {
                const Vec val = dxx(mu, xs[j]) * ys[j];
                for (int d = 0; d < n; ++d) d2[static_cast<std::size_t>(j) * n + d] = val(d);
            }
            if (couple) couple(mu, xs, xs, ys, d2.data());
            double quad = 0.0, norm2 = 0.0;
            for (int j = 0; j < support; ++j) {
                quad += mu.weight(j) * PointView{d2.data(), support, n}[j].dot(ys[j]);
                norm2 += mu.weight(j) * ys[j].squaredNorm();
            }
            return quad + cp * norm2;
        };
        b5l.offer(lifted(model.dF_dnu_xx, model.couple_xxt_F, k.c_prime), "lifted F");
        b5l.offer(lifted(model.dFT_dnu_xx, model.couple_xxt_FT, k.c_T_prime), "lifted F_T");
    }

    report.checks.push_back(a1.finish("A(i) growth of l"));
    report.checks.push_back(a2.finish("A(ii) second derivatives of l"));
    report.checks.push_back(a3.finish("A(iii) growth of h"));
    report.checks.push_back(a5.finish("A(v) joint convexity of l"));
    report.checks.push_back(a6.finish("A(vi) semi-convexity of h"));
    report.checks.push_back(b1.finish("b(i) measure gradient growth"));
    report.checks.push_back(b2.finish("b(ii) measure curvature bounds"));
    report.checks.push_back(b5s.finish("b(v)* pointwise convexity"));
    report.checks.push_back(b5d.finish("b(v)+ pointwise convexity"));
    report.checks.push_back(b5l.finish("B(v)(b) lifted convexity"));
    report.b5_star = report.checks[7].pass;
    report.b5_dagger = report.checks[8].pass;
    report.b5_lifted = report.checks[9].pass;
    return report;
}

std::string AssumptionReport::to_json() const {
    nlohmann::json j;
    j["c0"] = c0_value;
    if (delta1) j["delta1_max"] = *delta1;
    j["b5_star"] = b5_star;
    j["b5_dagger"] = b5_dagger;
    j["b5_lifted"] = b5_lifted;
    j["all_core_pass"] = all_core_pass();
    auto arr = nlohmann::json::array();
    for (const auto& c : checks) {
        arr.push_back({{"name", c.name},
                       {"pass", c.pass},
                       {"worst_margin", c.worst_margin},
                       {"worst_location", c.worst_location}});
    }
    j["checks"] = arr;
    return j.dump(2);
}

}  // namespace mfc
