#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Deterministic summation: result does not depend on how callers would
/// otherwise chunk the data, so ensemble reductions can be parallelised
/// and still reproduce bit-identical totals.
double pairwise_sum(const double* x, std::size_t n);
double pairwise_sum(const std::vector<double>& x);

/// Worker cap for ensemble sweeps. Defaults to 1; MFC_THREADS or the CLI
/// --threads flag raises it. Results are identical for any worker count.
int worker_count();
void set_worker_count(int n);

/// Runs fn(i) for i in [0, n). Each index must write only to its own slots.
void parallel_for(int n, const std::function<void(int)>& fn);

/// Uniform grid on [t0, T] with N steps; node(k) = t0 + k*dt.
struct TimeGrid {
    double t0 = 0.0;
    double T = 1.0;
    int steps = 1;

    TimeGrid() = default;
    TimeGrid(double t0_, double T_, int steps_) : t0(t0_), T(T_), steps(steps_) {
        if (!(t0 < T)) throw std::invalid_argument("TimeGrid: t0 must be < T");
        if (steps < 1) throw std::invalid_argument("TimeGrid: need at least one step");
    }

    double dt() const { return (T - t0) / steps; }
    double node(int k) const { return t0 + k * dt(); }
    int nodes() const { return steps + 1; }
};

/// Seeded Brownian increments, one n-vector per (step, scenario).
/// A single Wiener path is shared by every spatial atom; only the
/// scenario index samples Omega. Regeneration from the same seed is
/// bit-identical (fixed generator, fixed Box-Muller).
class NoiseBundle {
public:
    NoiseBundle() = default;
    NoiseBundle(const TimeGrid& grid, std::uint64_t seed, int scenarios, int dim);

    std::uint64_t seed() const { return seed_; }
    int scenarios() const { return K_; }
    int dim() const { return n_; }
    int steps() const { return steps_; }
    double dt() const { return dt_; }

    double incr(int step, int k, int d) const {
        return incr_[(static_cast<std::size_t>(step) * K_ + k) * n_ + d];
    }
    Eigen::Map<const Vec> incr_vec(int step, int k) const {
        return Eigen::Map<const Vec>(&incr_[(static_cast<std::size_t>(step) * K_ + k) * n_], n_);
    }

    std::string to_json() const;
    static NoiseBundle from_json(const std::string& record);

    /// Moment-matched variant: per-step scenario means removed. Used by the
    /// residual evaluators so difference quotients do not pick up the
    /// first-moment wander of the sampled flow; the increment law is
    /// conditioned (variance scaled by 1 - 1/K).
    NoiseBundle centered_copy() const;

private:
    std::uint64_t seed_ = 0;
    int K_ = 0, n_ = 0, steps_ = 0;
    double t0_ = 0.0, T_ = 0.0, dt_ = 0.0;
    std::vector<double> incr_;
};

NoiseBundle brownian_paths(const TimeGrid& grid, std::uint64_t seed, int scenarios, int dim);

/// Standard normal stream used everywhere randomness is needed outside
/// NoiseBundle (probe clouds, test directions). mt19937_64 + Box-Muller.
class GaussianStream {
public:
    explicit GaussianStream(std::uint64_t seed);
    double next();
    Vec next_vec(int n);

private:
    std::uint64_t s_[4];
    double spare_ = 0.0;
    bool has_spare_ = false;
    double uniform();
};

/// Discretised element of the working Hilbert space: values on
/// atoms x scenarios x dim at one time node. adapted_to marks the last
/// noise step the entries may depend on (0 = independent of all noise).
struct RandomField {
    int atoms = 0, scenarios = 0, dim = 0;
    int time_index = 0;
    int adapted_to = 0;
    std::vector<double> values;

    RandomField() = default;
    RandomField(int M, int K, int n)
        : atoms(M), scenarios(K), dim(n),
          values(static_cast<std::size_t>(M) * K * n, 0.0) {}

    static RandomField constant(int M, int K, const Vec& c);
    /// I_x on the given atom positions: every scenario carries the atom value.
    static RandomField identity(const std::vector<Vec>& atom_points, int K);

    double& at(int i, int k, int d) {
        return values[(static_cast<std::size_t>(i) * scenarios + k) * dim + d];
    }
    double at(int i, int k, int d) const {
        return values[(static_cast<std::size_t>(i) * scenarios + k) * dim + d];
    }
    Eigen::Map<const Vec> point(int i, int k) const {
        return Eigen::Map<const Vec>(
            &values[(static_cast<std::size_t>(i) * scenarios + k) * dim], dim);
    }
    Eigen::Map<Vec> point(int i, int k) {
        return Eigen::Map<Vec>(&values[(static_cast<std::size_t>(i) * scenarios + k) * dim], dim);
    }

    bool same_shape(const RandomField& o) const {
        return atoms == o.atoms && scenarios == o.scenarios && dim == o.dim;
    }
    std::size_t size() const { return values.size(); }

    RandomField& operator+=(const RandomField& o);
    RandomField& operator-=(const RandomField& o);
    RandomField& operator*=(double a);
};

RandomField operator+(RandomField a, const RandomField& b);
RandomField operator-(RandomField a, const RandomField& b);
RandomField operator*(double a, RandomField x);

/// <X,Y> = (1/(M K)) sum_{i,k} X_{ik} . Y_{ik}; pairwise-summed.
double hm_inner(const RandomField& X, const RandomField& Y);
double hm_norm(const RandomField& X);

/// Time-indexed sequence of fields on a grid slice [first_node, first_node+node.size()).
struct FieldProcess {
    int first_node = 0;
    std::vector<RandomField> node;

    int nodes() const { return static_cast<int>(node.size()); }
    const RandomField& at_node(int k) const { return node.at(k - first_node); }
    RandomField& at_node(int k) { return node.at(k - first_node); }
};

/// Finitely supported probability measure; first/second moments cached.
class EmpiricalMeasure {
public:
    EmpiricalMeasure() = default;
    EmpiricalMeasure(std::vector<double> points, std::vector<double> weights, int dim);

    int size() const { return static_cast<int>(w_.size()); }
    int dim() const { return n_; }
    Eigen::Map<const Vec> point(int j) const {
        return Eigen::Map<const Vec>(&pts_[static_cast<std::size_t>(j) * n_], n_);
    }
    double weight(int j) const { return w_[j]; }
    const Vec& mean() const { return mean_; }
    double second_moment() const { return second_moment_; }

    double integrate(const std::function<double(Eigen::Map<const Vec>)>& phi) const;

private:
    std::vector<double> pts_;
    std::vector<double> w_;
    int n_ = 0;
    Vec mean_;
    double second_moment_ = 0.0;
};

/// All (atom, scenario) values with equal weight 1/(M K).
EmpiricalMeasure pushforward(const RandomField& X);

/// Exact 1-d 2-Wasserstein distance via the sorted quantile coupling.
double w2_1d(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu);

/// Scenario-average value of a field at one atom.
Vec atom_mean(const RandomField& f, int atom);

}  // namespace mfc
