#pragma once

#include "mfc/core.hpp"

#include <map>
#include <optional>
#include <string>

namespace mfc {

using VecCRef = const Eigen::Ref<const Vec>&;

/// Flat view over `count` points of dimension `dim`, `stride` doubles apart
/// (0 means densely packed).
struct PointView {
    const double* data = nullptr;
    int count = 0;
    int dim = 0;
    int stride = 0;
    Eigen::Map<const Vec> operator[](int j) const {
        const int s = stride > 0 ? stride : dim;
        return Eigen::Map<const Vec>(data + static_cast<std::size_t>(j) * s, dim);
    }
};

/// out[p] += (1/Q) sum_q Kernel(eval_p, copy_q) * vals_q, Kernel matrix-valued.
/// Batch form so models with structured kernels (zero, constant, rank-one)
/// avoid the quadratic point-by-point loop.
using CouplingApply =
    std::function<void(const EmpiricalMeasure& mu, PointView eval, PointView copy_pts,
                       PointView copy_vals, double* out)>;

/// out[p] += (1/Q) sum_q kernel(eval_p, copy_q), kernel vector-valued.
using CouplingAvg = std::function<void(const EmpiricalMeasure& mu, PointView eval,
                                       PointView copy_pts, double* out)>;

/// Paper-facing constants of the assumption set. The primed group may be
/// non-positive; lambda is the strong-convexity modulus of l in v.
struct ModelConstants {
    double lambda = 1.0;
    double c_l = 1.0;
    double c_h = 1.0;
    double c = 1.0;
    double c_T = 0.0;
    double c_prime = 0.0;    // lifted lower bound for D^2 F
    double c_l_prime = 0.0;
    double c_h_prime = 0.0;
    double c_T_prime = 0.0;  // lifted lower bound for D^2 F_T
};

/// Running/terminal costs and measure functionals with the derivative
/// callbacks the solvers need. All callbacks must be pure and re-entrant.
///
/// Conventions: l_xv(i,j) = d2 l / dx_i dv_j and l_vx = l_xv transposed;
/// d2F_dnu2 is symmetric in (x, xt); *_x on a second-order kernel
/// differentiates the first slot. Measure-functional values are used only
/// through x-derivatives, so additive normalisation of dF_dnu is free.
struct CostModel {
    std::string name;
    int dim = 1;
    ModelConstants constants;

    std::function<double(VecCRef x, VecCRef v)> l;
    std::function<Vec(VecCRef, VecCRef)> l_x, l_v;
    std::function<Mat(VecCRef, VecCRef)> l_xx, l_xv, l_vv;

    std::function<double(VecCRef)> h;
    std::function<Vec(VecCRef)> h_x;
    std::function<Mat(VecCRef)> h_xx;

    std::function<double(const EmpiricalMeasure&)> F, F_T;
    std::function<double(const EmpiricalMeasure&, VecCRef)> dF_dnu, dFT_dnu;
    std::function<Vec(const EmpiricalMeasure&, VecCRef)> dF_dnu_x, dFT_dnu_x;
    std::function<Mat(const EmpiricalMeasure&, VecCRef)> dF_dnu_xx, dFT_dnu_xx;

    // second-order linear functional derivative kernels
    std::function<double(const EmpiricalMeasure&, VecCRef, VecCRef)> d2F_dnu2, d2FT_dnu2;
    std::function<Vec(const EmpiricalMeasure&, VecCRef, VecCRef)> d2F_dnu2_x, d2FT_dnu2_x;
    std::function<Mat(const EmpiricalMeasure&, VecCRef, VecCRef)> d2F_dnu2_xxt, d2FT_dnu2_xxt;

    // batch couplings; absent means identically zero
    CouplingApply couple_xxt_F, couple_xxt_FT;  // kernel Dx Dxt d2F/dnu2
    CouplingAvg source_x_F, source_x_FT;        // kernel Dx d2F/dnu2

    // higher derivatives, needed by the gradient-of-lfd flow (scalar state)
    std::function<double(VecCRef, VecCRef)> l_xxx, l_xxv, l_xvv, l_vvv;
    std::function<double(VecCRef)> h_xxx;
    std::function<double(const EmpiricalMeasure&, VecCRef)> dF_dnu_xxx, dFT_dnu_xxx;
    std::function<double(const EmpiricalMeasure&, VecCRef, VecCRef)> d2F_dnu2_xx, d2FT_dnu2_xx;
    std::function<double(const EmpiricalMeasure&, VecCRef, VecCRef)> d2F_dnu2_xxxt,
        d2FT_dnu2_xxxt;
    CouplingApply couple_xxxt_F, couple_xxxt_FT;  // kernel Dx^2 Dxt d2F/dnu2
    CouplingAvg source_xx_F, source_xx_FT;        // kernel Dx^2 d2F/dnu2

    bool has_second_lfd() const { return static_cast<bool>(d2F_dnu2_xxt) ||
                                         static_cast<bool>(d2FT_dnu2_xxt); }
};

/// Generic quadratic-cost fallbacks for the batch couplings.
CouplingApply pointwise_coupling(
    std::function<Mat(const EmpiricalMeasure&, VecCRef, VecCRef)> kernel);
CouplingAvg pointwise_source(
    std::function<Vec(const EmpiricalMeasure&, VecCRef, VecCRef)> kernel);
CouplingApply constant_coupling(const Mat& kernel_value);

/// Control problem instance: dY = u dt + eta dw on the grid slice
/// [start_node, grid.steps], started from x0 (adapted_to <= start_node).
struct ControlProblem {
    CostModel model;
    Mat eta;
    TimeGrid grid;
    RandomField x0;
    NoiseBundle noise;
    int start_node = 0;

    int dim() const { return model.dim; }
    double horizon() const { return grid.T - grid.node(start_node); }
};

ControlProblem make_problem(CostModel model, const Mat& eta, const TimeGrid& grid,
                            RandomField x0, std::uint64_t seed, int scenarios);

/// Strict-convexity margin lambda - (c'_T+c'_h)+ T - (c'_l+c')+ T^2/2.
double c0(const CostModel& model, const TimeGrid& grid);
double c0(const ControlProblem& problem);

/// Largest delta1 in (0,1), on a 100-point grid, with
/// (1-delta1) lambda - (c'_h+c'_T+c_T) T - (c+c'+c'_l) T^2/2 > 0; nullopt if none.
std::optional<double> delta1_max(const CostModel& model, const TimeGrid& grid);

// -- numeric assumption checking --------------------------------------------

struct ProbeSet {
    std::vector<Vec> xs;   // state probes
    std::vector<Vec> vs;   // control probes (paired with xs by index modulo size)
    std::vector<Vec> xts;  // second-slot probes
    std::vector<EmpiricalMeasure> measures;
};

/// Gaussian cloud + axis grid points, radius-limited. Deterministic in seed.
ProbeSet default_probes(int dim, std::uint64_t seed, int count = 1000, double radius = 10.0);

struct AssumptionCheck {
    std::string name;
    bool pass = false;
    double worst_margin = 0.0;  // >= 0 means the inequality held everywhere
    std::string worst_location;
};

struct AssumptionReport {
    std::vector<AssumptionCheck> checks;
    double c0_value = 0.0;
    std::optional<double> delta1;
    bool b5_star = false;    // pointwise b(v)* variant holds at probes
    bool b5_dagger = false;  // pointwise b(v)+ variant holds at probes
    bool b5_lifted = false;  // Hilbert-space B(v)(b) variant holds at probes

    bool all_core_pass() const;
    const AssumptionCheck* find(const std::string& name) const;
    std::string to_json() const;
};

AssumptionReport check_assumptions(const CostModel& model, const TimeGrid& grid,
                                   const ProbeSet& probes);

// -- builtin instances -------------------------------------------------------

/// Registered model names: lq_scalar, lq_mean, exp_well, zero_cost.
std::vector<std::string> builtin_models();
CostModel make_builtin(const std::string& name,
                       const std::map<std::string, double>& params = {});

}  // namespace mfc
