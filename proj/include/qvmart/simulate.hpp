#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "qvmart/error.hpp"
#include "qvmart/parallel.hpp"
#include "qvmart/path_core.hpp"
#include "qvmart/rng.hpp"

namespace qvmart {

// ---------------------------------------------------------------------------
// The Gaussian martingale M_t = int_0^t sigma(u) dB_u
// ---------------------------------------------------------------------------

/// sigma(t) = |log(1-t)|^{-2/3} / sqrt(1-t) on (1/2, 1), zero on [0, 1/2].
inline double sigma_eval(double t)
{
    if (!(t >= 0.0)) throw DomainError("sigma_eval: t must be >= 0");
    if (t >= 1.0) throw DomainError("sigma_eval: singular at t = 1");
    if (t <= 0.5) return 0.0;
    const double v = -std::log1p(-t);
    return std::pow(v, -2.0 / 3.0) / std::sqrt(1.0 - t);
}

namespace detail {
/// |log(1-x)|^{-1/3}, an antiderivative of -sigma^2/3 on [1/2, 1]; 0 at x = 1.
inline double m_variance_primitive(double x)
{
    if (x >= 1.0) return 0.0;
    return std::pow(-std::log1p(-x), -1.0 / 3.0);
}
}  // namespace detail

/// Var(M_t - M_s) = int_s^t sigma^2(u) du, closed form; t = 1 is the finite limit.
inline double m_variance(double s, double t)
{
    if (!(s >= 0.0 && s <= t && t <= 1.0)) throw DomainError("m_variance: need 0 <= s <= t <= 1");
    s = std::max(s, 0.5);
    t = std::max(t, 0.5);
    if (s == t) return 0.0;
    return 3.0 * (detail::m_variance_primitive(s) - detail::m_variance_primitive(t));
}

// ---------------------------------------------------------------------------
// Brownian motion
// ---------------------------------------------------------------------------

namespace detail {
inline constexpr std::uint64_t sequential_counter_lane = 1000;
}

/// Standard Brownian motion with B_0 = 0.
///
/// On dyadic grids the path is built by Brownian-bridge midpoint insertion:
/// B_1 first, then level by level, the normal for the midpoint (2j+1)/2^l
/// being keyed by (l, j). Grids 2^L and 2^{L+1} therefore agree at every
/// shared point. Other grids use sequential increments.
inline SamplePath gen_brownian(const SeedStream& seed, std::uint64_t path_index, const TimeGrid& grid)
{
    const StreamKey key = seed.key(path_index, Purpose::brownian);
    const std::size_t n = grid.n_steps();
    std::vector<double> b(n + 1, 0.0);
    if (const auto level = grid.dyadic_level()) {
        b[n] = normal_pair(key.block(0, 0)).first;
        for (unsigned l = 1; l <= *level; ++l) {
            const std::size_t stride = n >> l;
            const std::size_t count = std::size_t{1} << (l - 1);
            const double sd = std::sqrt(std::ldexp(1.0, -static_cast<int>(l) - 1));
            for (std::size_t j = 0; j < count; j += 2) {
                const auto [z0, z1] = normal_pair(key.block(j >> 1, l));
                std::size_t mid = (2 * j + 1) * stride;
                b[mid] = 0.5 * (b[mid - stride] + b[mid + stride]) + sd * z0;
                if (j + 1 < count) {
                    mid += 2 * stride;
                    b[mid] = 0.5 * (b[mid - stride] + b[mid + stride]) + sd * z1;
                }
            }
        }
    } else {
        for (std::size_t c = 0; c < n; c += 2) {
            const auto [z0, z1] = normal_pair(key.block(c >> 1, detail::sequential_counter_lane));
            b[c + 1] = b[c] + std::sqrt(grid.cell_length(c)) * z0;
            if (c + 1 < n) b[c + 2] = b[c + 1] + std::sqrt(grid.cell_length(c + 1)) * z1;
        }
    }
    b[0] = 0.0;
    return SamplePath(grid, std::move(b));
}

// ---------------------------------------------------------------------------
// Model specification
// ---------------------------------------------------------------------------

struct BrownianModel {};

/// dS = mu(t) dt + sigma(t) dB, Euler with left-endpoint coefficients.
struct DriftedDiffusion {
    std::function<double(double)> mu;
    std::function<double(double)> sigma;
    /// Set when mu and sigma are constants; Euler is then exact and
    /// refinement consistent on dyadic grids.
    bool constant_coefficients = false;
    std::string description;

    static DriftedDiffusion constant(double mu, double sigma)
    {
        return {[mu](double) { return mu; }, [sigma](double) { return sigma; }, true,
                "mu=" + std::to_string(mu) + ",sigma=" + std::to_string(sigma)};
    }
};

struct GaussianMModel {};

struct CounterexampleModel {
    double poisson_rate = 1.0;
};

/// Any user-supplied generator.
struct CustomModel {
    std::string name;
    std::function<SamplePath(const SeedStream&, std::uint64_t, const TimeGrid&)> generate;
    bool refinement_consistent = false;
};

struct ModelSpec {
    std::variant<BrownianModel, DriftedDiffusion, GaussianMModel, CounterexampleModel, CustomModel> variant;
    /// Generation stops at 1 - eps for the models singular at t = 1.
    double truncation_eps = 0.0;

    void validate(const TimeGrid& grid) const
    {
        const bool singular = std::holds_alternative<GaussianMModel>(variant) ||
                              std::holds_alternative<CounterexampleModel>(variant);
        if (singular && !(truncation_eps > 0.0 && truncation_eps < 0.5))
            throw ConfigError("ModelSpec: truncation eps must lie in (0, 1/2) for singular models");
        if (const auto* d = std::get_if<DriftedDiffusion>(&variant)) {
            if (!d->mu || !d->sigma) throw ConfigError("ModelSpec: drifted diffusion needs mu and sigma");
            for (std::size_t i = 0; i < grid.size(); ++i)
                if (!(d->sigma(grid[i]) > 0.0)) throw ConfigError("ModelSpec: sigma must be positive on [0, 1]");
        }
        if (const auto* c = std::get_if<CounterexampleModel>(&variant))
            if (!(c->poisson_rate > 0.0)) throw ConfigError("ModelSpec: Poisson rate must be positive");
        if (const auto* c = std::get_if<CustomModel>(&variant))
            if (!c->generate) throw ConfigError("ModelSpec: custom model without generator");
    }

    std::string tag() const
    {
        struct Visitor {
            std::string operator()(const BrownianModel&) const { return "brownian"; }
            std::string operator()(const DriftedDiffusion& d) const { return "diffusion(" + d.description + ")"; }
            std::string operator()(const GaussianMModel&) const { return "gaussian_m"; }
            std::string operator()(const CounterexampleModel&) const { return "counterexample"; }
            std::string operator()(const CustomModel& c) const { return "custom(" + c.name + ")"; }
        };
        return std::visit(Visitor{}, variant);
    }
};

inline SamplePath gen_drifted(const SeedStream& seed, std::uint64_t path_index, const TimeGrid& grid,
                              const DriftedDiffusion& model)
{
    const SamplePath b = gen_brownian(seed, path_index, grid);
    std::vector<double> s(grid.size(), 0.0);
    for (std::size_t c = 0; c < grid.n_steps(); ++c) {
        const double t = grid[c];
        s[c + 1] = s[c] + model.mu(t) * grid.cell_length(c) + model.sigma(t) * (b[c + 1] - b[c]);
    }
    return SamplePath(grid, std::move(s));
}

// ---------------------------------------------------------------------------
// M jointly with B
// ---------------------------------------------------------------------------

struct GaussianPair {
    SamplePath brownian;
    SamplePath martingale;
};

/// M_{t_{c+1}} = M_{t_c} + sigma(t_c) (B_{t_{c+1}} - B_{t_c}) for cells ending
/// at or before 1 - eps; M is frozen afterwards. Deterministic in B.
inline SamplePath m_from_brownian(const SamplePath& brownian, double eps)
{
    if (!(eps > 0.0)) throw DomainError("M needs a truncation eps > 0 (sigma is singular at t = 1)");
    const TimeGrid& grid = brownian.grid();
    std::vector<double> m(grid.size(), 0.0);
    const double stop = 1.0 - eps + 1e-12;
    for (std::size_t c = 0; c < grid.n_steps(); ++c) {
        double dm = 0.0;
        if (grid[c + 1] <= stop) dm = sigma_eval(grid[c]) * (brownian[c + 1] - brownian[c]);
        m[c + 1] = m[c] + dm;
    }
    return SamplePath(grid, std::move(m));
}

inline void check_singular_grid(const TimeGrid& grid, double eps)
{
    if (!(eps > 0.0)) throw DomainError("eps = 0 refused: sigma is singular at t = 1");
    if (grid.n_steps() < 2 || grid[grid.n_steps() - 1] > 1.0 - eps + 1e-12)
        throw ConfigError("grid's last interior point must be <= 1 - eps");
}

inline GaussianPair gen_M(const SeedStream& seed, std::uint64_t path_index, const TimeGrid& grid, double eps)
{
    check_singular_grid(grid, eps);
    SamplePath b = gen_brownian(seed, path_index, grid);
    SamplePath m = m_from_brownian(b, eps);
    return {std::move(b), std::move(m)};
}

// ---------------------------------------------------------------------------
// Poisson pair and the counterexample S = M + int 1/(1-u) dN
// ---------------------------------------------------------------------------

struct PoissonPair {
    std::vector<double> first;   ///< jump times of N^1 in (0, 1]
    std::vector<double> second;  ///< jump times of N^2 in (0, 1]
};

inline std::vector<double> poisson_jump_times(StreamKey key, double rate)
{
    if (!(rate > 0.0)) throw DomainError("Poisson rate must be positive");
    RandomStream stream(key);
    std::vector<double> times;
    double t = stream.exponential(rate);
    while (t <= 1.0) {
        times.push_back(t);
        t += stream.exponential(rate);
    }
    return times;
}

/// Two independent unit-horizon Poisson processes via exponential inter-arrivals.
inline PoissonPair gen_poisson_pair(const SeedStream& seed, std::uint64_t path_index, double rate)
{
    return {poisson_jump_times(seed.key(path_index, Purpose::poisson_first), rate),
            poisson_jump_times(seed.key(path_index, Purpose::poisson_second), rate)};
}

struct PathBundle {
    SamplePath B;
    SamplePath M;
    std::vector<double> N1_jumps;  ///< exact (unsnapped) jump times
    std::vector<double> N2_jumps;
    SamplePath S;
    double B1 = 0.0;
    double eps = 0.0;
    double rate = 1.0;
    /// Jumps in the last cell, moved to u_max = t_{n-1}.
    std::size_t capped_jumps = 0;
    /// Jumps sharing a grid point with an earlier jump (kept as separate jumps).
    std::size_t coincident_jumps = 0;

    const TimeGrid& grid() const { return S.grid(); }
};

namespace detail {

/// Snaps jumps to grid points (first point >= u, capped at t_{n-1}) with size
/// sign / (1 - snapped time). Jumps landing on one point stay separate, in
/// order of their exact times.
inline std::vector<Jump> snap_counterexample_jumps(const TimeGrid& grid, const std::vector<double>& up,
                                                   const std::vector<double>& down, std::size_t& capped,
                                                   std::size_t& coincident)
{
    struct Raw {
        double exact;
        std::size_t index;
        double size;
    };
    std::vector<Raw> raw;
    const std::size_t last = grid.n_steps() - 1;
    auto add = [&](double u, double sign) {
        std::size_t i = grid.ceil_index(u);
        if (i == 0) i = 1;
        if (i > last) {
            i = last;
            ++capped;
        }
        raw.push_back({u, i, sign / (1.0 - grid[i])});
    };
    for (double u : up) add(u, +1.0);
    for (double u : down) add(u, -1.0);
    std::sort(raw.begin(), raw.end(), [](const Raw& a, const Raw& b) { return a.exact < b.exact; });
    std::vector<Jump> jumps;
    for (std::size_t k = 0; k < raw.size(); ++k) {
        if (k > 0 && raw[k].index == raw[k - 1].index) ++coincident;
        jumps.push_back({grid[raw[k].index], raw[k].size});
    }
    return jumps;
}

inline SamplePath add_jumps(const SamplePath& continuous, std::vector<Jump> jumps)
{
    const TimeGrid& grid = continuous.grid();
    std::vector<double> v(continuous.values().begin(), continuous.values().end());
    double level = 0.0;
    std::size_t j = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        while (j < jumps.size() && jumps[j].time == grid[i]) level += jumps[j++].size;
        v[i] += level;
    }
    return SamplePath(grid, std::move(v), std::move(jumps));
}

}  // namespace detail

/// Rebuilds M and S of a bundle with generation stopped at 1 - eps (eps at
/// least the bundle's own truncation). Jumps and B are unchanged.
inline PathBundle with_truncation(const PathBundle& bundle, double eps)
{
    if (eps < bundle.eps) throw ContractError("with_truncation: eps below the bundle's generation eps");
    PathBundle out = bundle;
    out.eps = eps;
    out.M = m_from_brownian(bundle.B, eps);
    out.S = detail::add_jumps(out.M, std::vector<Jump>(bundle.S.jumps().begin(), bundle.S.jumps().end()));
    return out;
}

inline PathBundle gen_counterexample(const SeedStream& seed, std::uint64_t path_index, const TimeGrid& grid,
                                     double eps, double rate)
{
    auto [b, m] = gen_M(seed, path_index, grid, eps);
    PoissonPair n = gen_poisson_pair(seed, path_index, rate);
    PathBundle bundle;
    bundle.eps = eps;
    bundle.rate = rate;
    auto jumps = detail::snap_counterexample_jumps(grid, n.first, n.second, bundle.capped_jumps, bundle.coincident_jumps);
    bundle.S = detail::add_jumps(m, std::move(jumps));
    bundle.B1 = b.terminal();
    bundle.B = std::move(b);
    bundle.M = std::move(m);
    bundle.N1_jumps = std::move(n.first);
    bundle.N2_jumps = std::move(n.second);
    return bundle;
}

inline std::vector<PathBundle> gen_counterexample_bundles(const SeedStream& seed, std::size_t count,
                                                          const TimeGrid& grid, double eps, double rate,
                                                          unsigned threads = 1)
{
    std::vector<PathBundle> out(count);
    parallel_for(count, threads, [&](std::size_t i) { out[i] = gen_counterexample(seed, i, grid, eps, rate); });
    return out;
}

// ---------------------------------------------------------------------------
// Insider drift: the finite-variation part of M under G = F v sigma(B_1)
// ---------------------------------------------------------------------------

struct InsiderDrift {
    /// A_t = int_0^t sigma(u) (B_1 - B_u) / (1 - u) du, frozen after 1 - eps.
    SamplePath drift;
    /// M_hat = M - A on [0, 1 - eps].
    SamplePath martingale;
    /// int_0^{1-eps} |dA|.
    double total_variation = 0.0;
};

/// Left-endpoint quadrature of the insider drift on the bundle's grid.
inline InsiderDrift insider_drift(const PathBundle& bundle, double eps)
{
    if (eps + 1e-15 < bundle.eps) throw ContractError("insider_drift: eps below the bundle's generation eps");
    const TimeGrid& grid = bundle.B.grid();
    const double stop = 1.0 - eps + 1e-12;
    std::vector<double> a(grid.size(), 0.0);
    double tv = 0.0;
    for (std::size_t c = 0; c < grid.n_steps(); ++c) {
        double da = 0.0;
        if (grid[c + 1] <= stop) {
            const double t = grid[c];
            da = sigma_eval(t) * (bundle.B1 - bundle.B[c]) / (1.0 - t) * grid.cell_length(c);
        }
        tv += std::abs(da);
        a[c + 1] = a[c] + da;
    }
    const SamplePath m = eps == bundle.eps ? bundle.M : m_from_brownian(bundle.B, eps);
    std::vector<double> mhat(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) mhat[i] = m[i] - a[i];
    return {SamplePath(grid, std::move(a)), SamplePath(grid, std::move(mhat)), tv};
}

// ---------------------------------------------------------------------------
// Ensembles
// ---------------------------------------------------------------------------

/// One path of the model: S itself (M for GaussianM, the full S for the counterexample).
inline SamplePath generate_path(const ModelSpec& spec, const SeedStream& seed, std::uint64_t path_index,
                                const TimeGrid& grid)
{
    struct Visitor {
        const ModelSpec& spec;
        const SeedStream& seed;
        std::uint64_t index;
        const TimeGrid& grid;
        SamplePath operator()(const BrownianModel&) const { return gen_brownian(seed, index, grid); }
        SamplePath operator()(const DriftedDiffusion& d) const { return gen_drifted(seed, index, grid, d); }
        SamplePath operator()(const GaussianMModel&) const
        {
            return gen_M(seed, index, grid, spec.truncation_eps).martingale;
        }
        SamplePath operator()(const CounterexampleModel& c) const
        {
            return gen_counterexample(seed, index, grid, spec.truncation_eps, c.poisson_rate).S;
        }
        SamplePath operator()(const CustomModel& c) const { return c.generate(seed, index, grid); }
    };
    return std::visit(Visitor{spec, seed, path_index, grid}, spec.variant);
}

inline Ensemble generate_ensemble(const ModelSpec& spec, const TimeGrid& grid, std::size_t n_paths,
                                  std::uint64_t master_seed, unsigned threads = 1)
{
    if (n_paths < 1) throw ConfigError("generate_ensemble: need at least one path");
    spec.validate(grid);
    if (std::holds_alternative<GaussianMModel>(spec.variant) ||
        std::holds_alternative<CounterexampleModel>(spec.variant))
        check_singular_grid(grid, spec.truncation_eps);
    const SeedStream seed(master_seed);
    std::vector<SamplePath> paths(n_paths);
    parallel_for(n_paths, threads, [&](std::size_t i) { paths[i] = generate_path(spec, seed, i, grid); });
    return Ensemble(std::move(paths), master_seed, spec.tag());
}

/// Fixed realisation of a model, evaluable on any dyadic grid; feeds
/// refine_and_compare_qv.
class RefinableRealisation {
public:
    RefinableRealisation(ModelSpec spec, std::uint64_t master_seed, std::uint64_t path_index = 0)
        : spec_(std::move(spec)), seed_(master_seed), index_(path_index)
    {
    }

    bool refinement_consistent() const
    {
        if (std::holds_alternative<BrownianModel>(spec_.variant)) return true;
        if (const auto* d = std::get_if<DriftedDiffusion>(&spec_.variant)) return d->constant_coefficients;
        if (const auto* c = std::get_if<CustomModel>(&spec_.variant)) return c->refinement_consistent;
        return false;
    }

    SamplePath operator()(const TimeGrid& grid) const { return generate_path(spec_, seed_, index_, grid); }

private:
    ModelSpec spec_;
    SeedStream seed_;
    std::uint64_t index_;
};

}  // namespace qvmart
