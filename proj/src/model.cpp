#include "mfc/model.hpp"

namespace mfc {

CouplingApply pointwise_coupling(
    std::function<Mat(const EmpiricalMeasure&, VecCRef, VecCRef)> kernel) {
    return [kernel = std::move(kernel)](const EmpiricalMeasure& mu, PointView eval,
                                        PointView copy_pts, PointView copy_vals, double* out) {
        const int n = eval.dim;
        const double inv_q = 1.0 / static_cast<double>(copy_pts.count);
        for (int p = 0; p < eval.count; ++p) {
            Vec acc = Vec::Zero(n);
            for (int q = 0; q < copy_pts.count; ++q)
                acc.noalias() += kernel(mu, eval[p], copy_pts[q]) * copy_vals[q];
            for (int d = 0; d < n; ++d) out[static_cast<std::size_t>(p) * n + d] += inv_q * acc(d);
        }
    };
}

CouplingAvg pointwise_source(
    std::function<Vec(const EmpiricalMeasure&, VecCRef, VecCRef)> kernel) {
    return [kernel = std::move(kernel)](const EmpiricalMeasure& mu, PointView eval,
                                        PointView copy_pts, double* out) {
        const int n = eval.dim;
        const double inv_q = 1.0 / static_cast<double>(copy_pts.count);
        for (int p = 0; p < eval.count; ++p) {
            Vec acc = Vec::Zero(n);
            for (int q = 0; q < copy_pts.count; ++q) acc += kernel(mu, eval[p], copy_pts[q]);
            for (int d = 0; d < n; ++d) out[static_cast<std::size_t>(p) * n + d] += inv_q * acc(d);
        }
    };
}

CouplingApply constant_coupling(const Mat& kernel_value) {
    return [kernel_value](const EmpiricalMeasure&, PointView eval, PointView /*copy_pts*/,
                          PointView copy_vals, double* out) {
        const int n = eval.dim;
        Vec mean_val = Vec::Zero(n);
        for (int q = 0; q < copy_vals.count; ++q) mean_val += copy_vals[q];
        mean_val /= static_cast<double>(copy_vals.count);
        const Vec c = kernel_value * mean_val;
        for (int p = 0; p < eval.count; ++p)
            for (int d = 0; d < n; ++d) out[static_cast<std::size_t>(p) * n + d] += c(d);
    };
}

ControlProblem make_problem(CostModel model, const Mat& eta, const TimeGrid& grid,
                            RandomField x0, std::uint64_t seed, int scenarios) {
    if (eta.rows() != model.dim || eta.cols() != model.dim)
        throw std::invalid_argument("make_problem: eta must be dim x dim");
    if (x0.dim != model.dim) throw std::invalid_argument("make_problem: x0 dimension mismatch");
    if (x0.adapted_to != 0)
        throw std::invalid_argument("make_problem: x0 must be independent of the noise");
    ControlProblem p;
    p.model = std::move(model);
    p.eta = eta;
    p.grid = grid;
    p.x0 = std::move(x0);
    p.noise = brownian_paths(grid, seed, scenarios, p.model.dim);
    return p;
}

double c0(const CostModel& model, const TimeGrid& grid) {
    const auto& k = model.constants;
    const double horizon = grid.T - grid.t0;
    const double term_t = std::max(k.c_T_prime + k.c_h_prime, 0.0) * horizon;
    const double run_t = std::max(k.c_l_prime + k.c_prime, 0.0) * horizon * horizon / 2.0;
    return k.lambda - term_t - run_t;
}

double c0(const ControlProblem& problem) {
    const auto& k = problem.model.constants;
    const double horizon = problem.horizon();
    return k.lambda - std::max(k.c_T_prime + k.c_h_prime, 0.0) * horizon -
           std::max(k.c_l_prime + k.c_prime, 0.0) * horizon * horizon / 2.0;
}

std::optional<double> delta1_max(const CostModel& model, const TimeGrid& grid) {
    const auto& k = model.constants;
    const double horizon = grid.T - grid.t0;
    const double mid = (k.c_h_prime + k.c_T_prime + k.c_T) * horizon;
    const double last = (k.c + k.c_prime + k.c_l_prime) * horizon * horizon / 2.0;
    for (int j = 99; j >= 1; --j) {
        const double d1 = j / 100.0;
        if ((1.0 - d1) * k.lambda - mid - last > 0.0) return d1;
    }
    return std::nullopt;
}

ProbeSet default_probes(int dim, std::uint64_t seed, int count, double radius) {
    ProbeSet ps;
    GaussianStream g(seed);
    auto clamp_radius = [&](Vec v) {
        const double r = v.norm();
        if (r > radius) v *= radius / r;
        return v;
    };
    for (int i = 0; i < count; ++i) {
        ps.xs.push_back(clamp_radius(3.0 * g.next_vec(dim)));
        ps.vs.push_back(clamp_radius(3.0 * g.next_vec(dim)));
        ps.xts.push_back(clamp_radius(3.0 * g.next_vec(dim)));
    }
    // axis grid points out to the probe radius
    for (int d = 0; d < dim; ++d) {
        for (double s : {-radius, -radius / 2, -1.0, 1.0, radius / 2, radius}) {
            Vec v = Vec::Zero(dim);
            v(d) = s;
            ps.xs.push_back(v);
            ps.vs.push_back(v);
            ps.xts.push_back(v);
        }
    }
    // small Gaussian clouds with a spread of means and scales
    for (double mean : {-2.0, 0.0, 2.0}) {
        for (double scale : {0.5, 1.5}) {
            const int support = 64;
            std::vector<double> pts(static_cast<std::size_t>(support) * dim);
            for (int j = 0; j < support; ++j)
                for (int d = 0; d < dim; ++d)
                    pts[static_cast<std::size_t>(j) * dim + d] = mean + scale * g.next();
            std::vector<double> w(support, 1.0 / support);
            ps.measures.emplace_back(std::move(pts), std::move(w), dim);
        }
    }
    return ps;
}

bool AssumptionReport::all_core_pass() const {
    for (const auto& c : checks) {
        if (c.name.rfind("b(v)", 0) == 0) continue;  // variants reported separately
        if (!c.pass) return false;
    }
    return b5_star || b5_dagger || b5_lifted;
}

const AssumptionCheck* AssumptionReport::find(const std::string& name) const {
    for (const auto& c : checks)
        if (c.name == name) return &c;
    return nullptr;
}

}  // namespace mfc
