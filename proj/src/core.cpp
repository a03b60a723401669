#include "mfc/core.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <thread>

namespace mfc {

double pairwise_sum(const double* x, std::size_t n) {
    if (n <= 16) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += x[i];
        return s;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(x, half) + pairwise_sum(x + half, n - half);
}

double pairwise_sum(const std::vector<double>& x) { return pairwise_sum(x.data(), x.size()); }

namespace {
std::atomic<int> g_workers{0};  // 0 = uninitialised

int env_workers() {
    if (const char* s = std::getenv("MFC_THREADS")) {
        const int v = std::atoi(s);
        if (v >= 1) return v;
    }
    return 1;
}
}  // namespace

int worker_count() {
    int w = g_workers.load(std::memory_order_relaxed);
    if (w == 0) {
        w = env_workers();
        g_workers.store(w, std::memory_order_relaxed);
    }
    return w;
}

void set_worker_count(int n) { g_workers.store(std::max(1, n), std::memory_order_relaxed); }

void parallel_for(int n, const std::function<void(int)>& fn) {
    const int workers = std::min(worker_count(), n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            for (int i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------------------
// Gaussian stream: xoshiro256++ core with Box-Muller. Fixed algorithm so the
// same seed reproduces the same reals on every platform and standard library.

namespace {
inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}
}  // namespace

GaussianStream::GaussianStream(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& si : s_) si = splitmix64(sm);
}

double GaussianStream::uniform() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return static_cast<double>(result >> 11) * 0x1.0p-53;
}

double GaussianStream::next() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    constexpr double two_pi = 6.283185307179586476925286766559;
    spare_ = r * std::sin(two_pi * u2);
    has_spare_ = true;
    return r * std::cos(two_pi * u2);
}

Vec GaussianStream::next_vec(int n) {
    Vec v(n);
    for (int i = 0; i < n; ++i) v(i) = next();
    return v;
}

// ---------------------------------------------------------------------------
// NoiseBundle

NoiseBundle::NoiseBundle(const TimeGrid& grid, std::uint64_t seed, int scenarios, int dim)
    : seed_(seed), K_(scenarios), n_(dim), steps_(grid.steps),
      t0_(grid.t0), T_(grid.T), dt_(grid.dt()) {
    if (scenarios < 1) throw std::invalid_argument("NoiseBundle: need at least one scenario");
    if (dim < 1) throw std::invalid_argument("NoiseBundle: dim must be >= 1");
    incr_.resize(static_cast<std::size_t>(steps_) * K_ * n_);
    const double sd = std::sqrt(dt_);
    GaussianStream g(seed);
    for (double& v : incr_) v = sd * g.next();
}

NoiseBundle brownian_paths(const TimeGrid& grid, std::uint64_t seed, int scenarios, int dim) {
    return NoiseBundle(grid, seed, scenarios, dim);
}

NoiseBundle NoiseBundle::centered_copy() const {
    NoiseBundle out = *this;
    for (int s = 0; s < steps_; ++s)
        for (int d = 0; d < n_; ++d) {
            double mean = 0.0;
            for (int k = 0; k < K_; ++k)
                mean += out.incr_[(static_cast<std::size_t>(s) * K_ + k) * n_ + d];
            mean /= K_;
            for (int k = 0; k < K_; ++k)
                out.incr_[(static_cast<std::size_t>(s) * K_ + k) * n_ + d] -= mean;
        }
    return out;
}

std::string NoiseBundle::to_json() const {
    nlohmann::json j;
    j["seed"] = seed_;
    j["K"] = K_;
    j["n"] = n_;
    j["N"] = steps_;
    j["t0"] = t0_;
    j["T"] = T_;
    return j.dump();
}

NoiseBundle NoiseBundle::from_json(const std::string& record) {
    const auto j = nlohmann::json::parse(record);
    TimeGrid grid(j.value("t0", 0.0), j.value("T", 1.0), j.at("N").get<int>());
    return NoiseBundle(grid, j.at("seed").get<std::uint64_t>(), j.at("K").get<int>(),
                       j.at("n").get<int>());
}

// ---------------------------------------------------------------------------
// RandomField

RandomField RandomField::constant(int M, int K, const Vec& c) {
    RandomField f(M, K, static_cast<int>(c.size()));
    for (int i = 0; i < M; ++i)
        for (int k = 0; k < K; ++k)
            for (int d = 0; d < f.dim; ++d) f.at(i, k, d) = c(d);
    return f;
}

RandomField RandomField::identity(const std::vector<Vec>& atom_points, int K) {
    if (atom_points.empty()) throw std::invalid_argument("identity field: no atoms");
    const int n = static_cast<int>(atom_points.front().size());
    RandomField f(static_cast<int>(atom_points.size()), K, n);
    for (int i = 0; i < f.atoms; ++i) {
        if (atom_points[i].size() != n)
            throw std::invalid_argument("identity field: atom dimension mismatch");
        for (int k = 0; k < K; ++k)
            for (int d = 0; d < n; ++d) f.at(i, k, d) = atom_points[i](d);
    }
    return f;
}

RandomField& RandomField::operator+=(const RandomField& o) {
    if (!same_shape(o)) throw std::invalid_argument("RandomField: shape mismatch");
    for (std::size_t j = 0; j < values.size(); ++j) values[j] += o.values[j];
    adapted_to = std::max(adapted_to, o.adapted_to);
    return *this;
}

RandomField& RandomField::operator-=(const RandomField& o) {
    if (!same_shape(o)) throw std::invalid_argument("RandomField: shape mismatch");
    for (std::size_t j = 0; j < values.size(); ++j) values[j] -= o.values[j];
    adapted_to = std::max(adapted_to, o.adapted_to);
    return *this;
}

RandomField& RandomField::operator*=(double a) {
    for (double& v : values) v *= a;
    return *this;
}

RandomField operator+(RandomField a, const RandomField& b) { return a += b; }
RandomField operator-(RandomField a, const RandomField& b) { return a -= b; }
RandomField operator*(double a, RandomField x) { return x *= a; }

double hm_inner(const RandomField& X, const RandomField& Y) {
    if (!X.same_shape(Y)) throw std::invalid_argument("hm_inner: shape mismatch");
    const int M = X.atoms, K = X.scenarios, n = X.dim;
    std::vector<double> per_pair(static_cast<std::size_t>(M) * K);
    for (int i = 0; i < M; ++i) {
        for (int k = 0; k < K; ++k) {
            const double* a = &X.values[(static_cast<std::size_t>(i) * K + k) * n];
            const double* b = &Y.values[(static_cast<std::size_t>(i) * K + k) * n];
            double dot = 0.0;
            for (int d = 0; d < n; ++d) dot += a[d] * b[d];
            per_pair[static_cast<std::size_t>(i) * K + k] = dot;
        }
    }
    return pairwise_sum(per_pair) / (static_cast<double>(M) * K);
}

double hm_norm(const RandomField& X) { return std::sqrt(std::max(0.0, hm_inner(X, X))); }

// ---------------------------------------------------------------------------
// EmpiricalMeasure

EmpiricalMeasure::EmpiricalMeasure(std::vector<double> points, std::vector<double> weights,
                                   int dim)
    : pts_(std::move(points)), w_(std::move(weights)), n_(dim) {
    if (n_ < 1) throw std::invalid_argument("EmpiricalMeasure: dim must be >= 1");
    if (pts_.size() != w_.size() * static_cast<std::size_t>(n_))
        throw std::invalid_argument("EmpiricalMeasure: points/weights size mismatch");
    if (w_.empty()) throw std::invalid_argument("EmpiricalMeasure: empty support");
    double total = pairwise_sum(w_);
    if (std::abs(total - 1.0) > 1e-12)
        throw std::invalid_argument("EmpiricalMeasure: weights must sum to 1");
    for (double wj : w_)
        if (wj < 0.0) throw std::invalid_argument("EmpiricalMeasure: negative weight");
    mean_ = Vec::Zero(n_);
    std::vector<double> m2(w_.size());
    for (int d = 0; d < n_; ++d) {
        std::vector<double> md(w_.size());
        for (std::size_t j = 0; j < w_.size(); ++j) md[j] = w_[j] * pts_[j * n_ + d];
        mean_(d) = pairwise_sum(md);
    }
    for (std::size_t j = 0; j < w_.size(); ++j) {
        double sq = 0.0;
        for (int d = 0; d < n_; ++d) sq += pts_[j * n_ + d] * pts_[j * n_ + d];
        m2[j] = w_[j] * sq;
    }
    second_moment_ = pairwise_sum(m2);
}

double EmpiricalMeasure::integrate(
    const std::function<double(Eigen::Map<const Vec>)>& phi) const {
    std::vector<double> vals(w_.size());
    for (int j = 0; j < size(); ++j) vals[j] = w_[j] * phi(point(j));
    return pairwise_sum(vals);
}

EmpiricalMeasure pushforward(const RandomField& X) {
    for (double v : X.values)
        if (!std::isfinite(v)) throw std::invalid_argument("pushforward: non-finite field");
    const std::size_t count = static_cast<std::size_t>(X.atoms) * X.scenarios;
    std::vector<double> w(count, 1.0 / static_cast<double>(count));
    return EmpiricalMeasure(X.values, std::move(w), X.dim);
}

Vec atom_mean(const RandomField& f, int atom) {
    Vec acc = Vec::Zero(f.dim);
    for (int k = 0; k < f.scenarios; ++k) acc += f.point(atom, k);
    return acc / static_cast<double>(f.scenarios);
}

double w2_1d(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
    if (mu.dim() != 1 || nu.dim() != 1)
        throw std::invalid_argument("w2_1d: defined for 1-d measures only");

    auto sorted = [](const EmpiricalMeasure& m) {
        std::vector<std::pair<double, double>> s(m.size());
        for (int j = 0; j < m.size(); ++j) s[j] = {m.point(j)(0), m.weight(j)};
        std::sort(s.begin(), s.end());
        return s;
    };
    auto a = sorted(mu);
    auto b = sorted(nu);

    // Walk the common refinement of the two weight partitions.
    std::size_t ia = 0, ib = 0;
    double ra = a[0].second, rb = b[0].second;
    std::vector<double> terms;
    terms.reserve(a.size() + b.size());
    while (ia < a.size() && ib < b.size()) {
        const double m = std::min(ra, rb);
        const double diff = a[ia].first - b[ib].first;
        terms.push_back(m * diff * diff);
        ra -= m;
        rb -= m;
        if (ra <= 1e-15 && ia + 1 < a.size()) ra = a[++ia].second;
        else if (ra <= 1e-15) ++ia;
        if (rb <= 1e-15 && ib + 1 < b.size()) rb = b[++ib].second;
        else if (rb <= 1e-15) ++ib;
    }
    return std::sqrt(std::max(0.0, pairwise_sum(terms)));
}

}  // namespace mfc
