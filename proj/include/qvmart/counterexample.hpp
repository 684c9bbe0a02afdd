#pragma once

// The insider jump counterexample S = M + int 1/(1-u) d(N^1 - N^2) under
// G = F v sigma(B_1): bounded log-utility despite S failing to be a
// G-semimartingale.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <iterator>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "qvmart/error.hpp"
#include "qvmart/format.hpp"
#include "qvmart/parallel.hpp"
#include "qvmart/path_core.hpp"
#include "qvmart/simulate.hpp"
#include "qvmart/stats.hpp"
#include "qvmart/strategy.hpp"
#include "qvmart/wealth.hpp"

namespace qvmart {

/// G-information carried by a bundle: B read by prefix, B_1 known at time 0.
inline Information insider_information(const PathBundle& bundle) { return {&bundle.B, bundle.B1}; }

// ---------------------------------------------------------------------------
// Difference-of-Poissons decomposition
// ---------------------------------------------------------------------------

struct FlipDecomposition {
    StepFunction beta;
    std::vector<double> n_plus_jumps;
    std::vector<double> n_minus_jumps;
};

namespace detail {
/// beta on the cell where a jump at exact time t materialises on the grid:
/// jumps past t_{n-1} are capped there, so they read the cell ending at t_{n-1}.
inline double beta_at_jump(const StepFunction& beta, double t)
{
    return beta.at_time(std::min(t, beta.grid[beta.grid.n_steps() - 1]));
}
}  // namespace detail

/// Routes each N^1 jump to N+ where beta = +1 and to N- otherwise; N^2 the
/// other way round.
inline FlipDecomposition flip_decompose(const StepFunction& beta, std::span<const double> n1_jumps,
                                        std::span<const double> n2_jumps)
{
    FlipDecomposition out{beta, {}, {}};
    auto sign_at = [&](double t) {
        const double b = detail::beta_at_jump(beta, t);
        if (b != 1.0 && b != -1.0)
            throw ContractError("flip_decompose: beta must be +-1 at every jump time (got " + std::to_string(b) + ")");
        return b;
    };
    for (double t : n1_jumps) (sign_at(t) > 0 ? out.n_plus_jumps : out.n_minus_jumps).push_back(t);
    for (double t : n2_jumps) (sign_at(t) > 0 ? out.n_minus_jumps : out.n_plus_jumps).push_back(t);
    std::sort(out.n_plus_jumps.begin(), out.n_plus_jumps.end());
    std::sort(out.n_minus_jumps.begin(), out.n_minus_jumps.end());
    return out;
}

/// Number of times shared by N+ and N-.
inline std::size_t common_jump_times(const FlipDecomposition& d)
{
    std::vector<double> common;
    std::set_intersection(d.n_plus_jumps.begin(), d.n_plus_jumps.end(), d.n_minus_jumps.begin(),
                          d.n_minus_jumps.end(), std::back_inserter(common));
    return common.size();
}

/// (N+ - N-)_t == (int beta d(N^1 - N^2))_t at every jump time, in exact integer arithmetic.
inline bool reconstruction_holds(const FlipDecomposition& d, std::span<const double> n1_jumps,
                                 std::span<const double> n2_jumps)
{
    std::vector<double> times(n1_jumps.begin(), n1_jumps.end());
    times.insert(times.end(), n2_jumps.begin(), n2_jumps.end());
    auto count_le = [](const std::vector<double>& xs, double t) {
        return static_cast<long>(std::upper_bound(xs.begin(), xs.end(), t) - xs.begin());
    };
    for (double t : times) {
        long integral = 0;
        for (double u : n1_jumps)
            if (u <= t) integral += detail::beta_at_jump(d.beta, u) > 0 ? 1 : -1;
        for (double u : n2_jumps)
            if (u <= t) integral -= detail::beta_at_jump(d.beta, u) > 0 ? 1 : -1;
        if (count_le(d.n_plus_jumps, t) - count_le(d.n_minus_jumps, t) != integral) return false;
    }
    return true;
}

/// A predictable +-1 integrand built from a bundle.
struct BetaRule {
    std::string id;
    std::function<StepFunction(const PathBundle&)> make;
};

namespace betas {

inline BetaRule plus_one()
{
    return {"plus", [](const PathBundle& b) { return StepFunction::constant(b.grid(), 1.0); }};
}

inline BetaRule minus_one()
{
    return {"minus", [](const PathBundle& b) { return StepFunction::constant(b.grid(), -1.0); }};
}

/// +1 on [0, t_switch], -1 afterwards.
inline BetaRule switch_at(double t_switch)
{
    return {"switch(" + format_double(t_switch) + ")", [t_switch](const PathBundle& b) {
                StepFunction f = StepFunction::constant(b.grid(), 1.0);
                for (std::size_t c = 0; c < f.cells.size(); ++c)
                    if (b.grid()[c] >= t_switch) f.cells[c] = -1.0;
                return f;
            }};
}

/// sgn(S) at the cell's left endpoint: the last pre-jump level.
inline BetaRule sign_of_prefix()
{
    return {"sign_prefix_S", [](const PathBundle& b) {
                StepFunction f = StepFunction::constant(b.grid(), 1.0);
                for (std::size_t c = 0; c < f.cells.size(); ++c) f.cells[c] = rules::sgn(b.S[c]);
                return f;
            }};
}

/// sgn(B_1 - B) at the left endpoint: G-predictable.
inline BetaRule informed()
{
    return {"informed_sign", [](const PathBundle& b) {
                StepFunction f = StepFunction::constant(b.grid(), 1.0);
                for (std::size_t c = 0; c < f.cells.size(); ++c) f.cells[c] = rules::sgn(b.B1 - b.B[c]);
                return f;
            }};
}

}  // namespace betas

struct PoissonLemmaReport {
    std::string beta_id;
    std::size_t n_samples = 0;
    double rate = 1.0;
    PoissonFit fit_plus;
    PoissonFit fit_minus;
    std::size_t common_jump_times = 0;
    std::size_t reconstruction_failures = 0;
    double correlation = 0.0;
    double correlation_bound = 0.0;  ///< 3 / sqrt(n)
    BinomialSummary minus_exactly_one;
    double minus_exactly_one_target = 0.0;  ///< rate e^{-rate}

    bool fit_passes(double significance = 0.01) const
    {
        return fit_plus.p_value > significance && fit_minus.p_value > significance;
    }
    bool passes() const
    {
        return fit_passes() && common_jump_times == 0 && reconstruction_failures == 0 &&
               std::abs(correlation) <= correlation_bound;
    }
};

/// Grid for Poisson-difference replications, where S only drives beta.
inline TimeGrid default_counterexample_grid(double eps = 1e-3)
{
    std::vector<double> truncations{0.1, eps};
    if (eps > 0.1) truncations = {eps};
    return TimeGrid::singular(64, 64.0, truncations);
}

inline PoissonLemmaReport poisson_lemma_test(std::uint64_t master_seed, std::size_t n_samples, const BetaRule& beta,
                                             const TimeGrid& grid, double eps = 1e-3, double rate = 1.0,
                                             unsigned threads = 1)
{
    if (n_samples < 2) throw ConfigError("poisson_lemma_test: need at least two samples");
    const SeedStream seed(master_seed);
    check_singular_grid(grid, eps);
    struct Sample {
        std::size_t plus = 0, minus = 0, common = 0;
        bool reconstructed = true;
    };
    std::vector<Sample> samples(n_samples);
    parallel_for(n_samples, threads, [&](std::size_t i) {
        const PathBundle b = gen_counterexample(seed, i, grid, eps, rate);
        const FlipDecomposition d = flip_decompose(beta.make(b), b.N1_jumps, b.N2_jumps);
        samples[i] = {d.n_plus_jumps.size(), d.n_minus_jumps.size(), common_jump_times(d),
                      reconstruction_holds(d, b.N1_jumps, b.N2_jumps)};
    });
    PoissonLemmaReport r;
    r.beta_id = beta.id;
    r.n_samples = n_samples;
    r.rate = rate;
    std::vector<std::size_t> plus(n_samples), minus(n_samples);
    std::vector<double> xp(n_samples), xm(n_samples);
    std::size_t exactly_one = 0;
    for (std::size_t i = 0; i < n_samples; ++i) {
        plus[i] = samples[i].plus;
        minus[i] = samples[i].minus;
        xp[i] = static_cast<double>(plus[i]);
        xm[i] = static_cast<double>(minus[i]);
        r.common_jump_times += samples[i].common;
        if (!samples[i].reconstructed) ++r.reconstruction_failures;
        if (minus[i] == 1) ++exactly_one;
    }
    r.fit_plus = poisson_goodness_of_fit(plus, rate);
    r.fit_minus = poisson_goodness_of_fit(minus, rate);
    r.correlation = correlation(xp, xm);
    r.correlation_bound = 3.0 / std::sqrt(static_cast<double>(n_samples));
    r.minus_exactly_one = binomial_summary(exactly_one, n_samples);
    r.minus_exactly_one_target = rate * std::exp(-rate);
    return r;
}

// ---------------------------------------------------------------------------
// Wealth on bundles
// ---------------------------------------------------------------------------

struct BundleWealth {
    StepFunction pi;
    WealthPath wealth;
};

inline BundleWealth bundle_wealth(const SimpleStrategy& strategy, const PathBundle& bundle)
{
    const Information info = insider_information(bundle);
    StepFunction pi = strategy.evaluate(bundle.S, quadratic_variation(bundle.S), info);
    WealthPath w = stoch_exp_jumps(pi, bundle.S, continuous_quadratic_variation(bundle.S));
    return {std::move(pi), std::move(w)};
}

/// Lebesgue measure of the grid cells flagged by a band report.
inline double violation_measure(const StepFunction& pi, const BandReport& report)
{
    double m = 0.0;
    for (const auto& v : report.violations) {
        const std::size_t c = pi.grid.index_of(v.time) - 1;
        m += pi.grid.cell_length(c);
    }
    return m;
}

struct NegativeWealthReport {
    std::string strategy_id;
    /// Time measure of the band violation set (largest over bundles).
    double violation_measure = 0.0;
    /// max pi_t / (1 - t) over the flagged cells, first bundle.
    double max_pi_hat = 0.0;
    BinomialSummary nonpositive;
};

/// Empirical P[W_1 <= 0] for a band-violating strategy.
inline NegativeWealthReport negative_wealth_probability(const SimpleStrategy& strategy,
                                                        std::span<const PathBundle> bundles, unsigned threads = 1)
{
    if (bundles.empty()) throw ContractError("negative_wealth_probability: no bundles");
    std::vector<char> hit(bundles.size(), 0);
    std::vector<double> measure(bundles.size(), 0.0);
    std::vector<double> pi_hat(bundles.size(), 0.0);
    parallel_for(bundles.size(), threads, [&](std::size_t i) {
        const BundleWealth bw = bundle_wealth(strategy, bundles[i]);
        const BandReport band = band_check(bw.pi);
        measure[i] = violation_measure(bw.pi, band);
        for (const auto& v : band.violations) pi_hat[i] = std::max(pi_hat[i], std::abs(v.proportion) / (1.0 - v.time));
        hit[i] = bw.wealth.hit_nonpositive || bw.wealth.terminal() <= 0.0;
    });
    NegativeWealthReport r;
    r.strategy_id = strategy.id();
    r.violation_measure = *std::max_element(measure.begin(), measure.end());
    if (r.violation_measure == 0.0)
        throw ContractError("negative_wealth_probability: strategy '" + strategy.id() +
                            "' respects the admissibility band |pi_t| < 1 - t on every bundle");
    r.max_pi_hat = pi_hat.front();
    r.nonpositive = binomial_summary(static_cast<std::size_t>(std::count(hit.begin(), hit.end(), 1)), bundles.size());
    return r;
}

struct BandOutcome {
    std::string strategy_id;
    bool admissible = true;
    double violation_measure = 0.0;
    std::size_t nonpositive_paths = 0;
    BinomialSummary nonpositive;
};

/// Either the strategy respects the band, or it loses everything with positive probability.
inline BandOutcome band_dichotomy(const SimpleStrategy& strategy, std::span<const PathBundle> bundles,
                                  unsigned threads = 1)
{
    if (bundles.empty()) throw ContractError("band_dichotomy: no bundles");
    std::vector<char> hit(bundles.size(), 0);
    std::vector<double> measure(bundles.size(), 0.0);
    parallel_for(bundles.size(), threads, [&](std::size_t i) {
        const BundleWealth bw = bundle_wealth(strategy, bundles[i]);
        measure[i] = violation_measure(bw.pi, band_check(bw.pi));
        hit[i] = bw.wealth.hit_nonpositive || bw.wealth.terminal() <= 0.0;
    });
    BandOutcome r;
    r.strategy_id = strategy.id();
    r.violation_measure = *std::max_element(measure.begin(), measure.end());
    r.admissible = r.violation_measure == 0.0;
    r.nonpositive_paths = static_cast<std::size_t>(std::count(hit.begin(), hit.end(), 1));
    r.nonpositive = binomial_summary(r.nonpositive_paths, bundles.size());
    return r;
}

// ---------------------------------------------------------------------------
// Utility sweep and the C / D terms
// ---------------------------------------------------------------------------

/// Bundles truncated at eps; bundles generated at a smaller eps are re-truncated.
inline std::vector<PathBundle> truncated_bundles(std::span<const PathBundle> bundles, double eps)
{
    std::vector<PathBundle> out;
    out.reserve(bundles.size());
    for (const auto& b : bundles) out.push_back(b.eps == eps ? b : with_truncation(b, eps));
    return out;
}

struct SweepEntry {
    std::string strategy_id;
    UtilityReport utility;
    /// max over the finite estimates of the entries so far.
    double running_max = -std::numeric_limits<double>::infinity();
};

struct SweepReport {
    double eps = 0.0;
    std::string family_description;
    std::vector<SweepEntry> entries;
    double max = -std::numeric_limits<double>::infinity();
    /// stderr of the maximising entry.
    double max_std_error = 0.0;
    std::string argmax;
    std::size_t n_infinite = 0;
    /// Empirical bound: the max plus 3 stderr.
    double c_hat = -std::numeric_limits<double>::infinity();
};

inline SweepReport utility_sweep(std::span<const SimpleStrategy> family, std::span<const PathBundle> bundles,
                                 double eps, std::string family_description = {}, unsigned threads = 1)
{
    if (family.empty()) throw ConfigError("utility_sweep: empty family");
    if (bundles.empty()) throw ContractError("utility_sweep: no bundles");
    const std::vector<PathBundle> truncated = truncated_bundles(bundles, eps);
    SweepReport r;
    r.eps = eps;
    r.family_description = std::move(family_description);
    for (const auto& s : family) {
        std::vector<double> logw(truncated.size());
        std::vector<char> bad(truncated.size(), 0);
        parallel_for(truncated.size(), threads, [&](std::size_t i) {
            const BundleWealth bw = bundle_wealth(s, truncated[i]);
            bad[i] = !band_check(bw.pi).admissible;
            logw[i] = bw.wealth.log_terminal;
        });
        if (std::find(bad.begin(), bad.end(), 1) != bad.end())
            throw ContractError("utility_sweep: '" + s.id() +
                                "' leaves the admissibility band |pi_t| < 1 - t and can ruin the investor");
        UtilityAccumulator acc;
        for (double x : logw) acc.add(x, !std::isfinite(x));
        SweepEntry e{s.id(), acc.report()};
        if (e.utility.finite()) {
            if (e.utility.estimate > r.max) {
                r.max = e.utility.estimate;
                r.max_std_error = e.utility.std_error;
                r.argmax = s.id();
            }
        } else {
            ++r.n_infinite;
        }
        e.running_max = r.max;
        r.entries.push_back(std::move(e));
    }
    r.c_hat = r.max + 3.0 * r.max_std_error;
    return r;
}

/// Blocks of the sweep family: bands c(1 - t), B_1-informed switchers, and
/// two-leg strategies switching at a hitting time.
inline std::vector<SimpleStrategy> default_sweep_family()
{
    std::vector<SimpleStrategy> f;
    for (int k = -9; k <= 9; ++k) {
        const double c = k / 10.0;
        f.emplace_back("band(" + format_double(c) + ")", std::vector<Leg>{Leg{0.0, rules::band_fraction(c), false, "band"}},
                       std::abs(c));
    }
    for (double c : {0.1, 0.3, 0.5, 0.7, 0.9})
        f.emplace_back("informed(" + format_double(c) + ")",
                       std::vector<Leg>{Leg{0.0, rules::informed_sign(c), true, "informed_sign"}}, c);
    for (double c : {0.3, 0.9})
        f.emplace_back("terminal_sign(" + format_double(c) + ")",
                       std::vector<Leg>{Leg{0.0, rules::terminal_sign(c), false, "terminal_sign"}}, c);
    f.emplace_back("band_then_informed",
                   std::vector<Leg>{Leg{0.0, rules::band_fraction(0.5), false, "band"},
                                    Leg{HitRule{HitRule::Kind::abs_level, 1.0, 1.0}, rules::informed_sign(0.9), true,
                                        "informed_sign"}},
                   0.9);
    f.emplace_back("informed_then_flat",
                   std::vector<Leg>{Leg{0.0, rules::informed_sign(0.7), true, "informed_sign"},
                                    Leg{HitRule{HitRule::Kind::qv, 2.0, 1.0}, rules::constant(0.0), false, "const"}},
                   0.7);
    return f;
}

struct PropositionTerms {
    std::string strategy_id;
    /// C(pi) = E[(pi.M)_1 - 1/2 int pi^2 d[M]].
    Estimate c;
    /// D(pi) = E sum log(1 + pi_s Delta S_s), expected <= 0.
    Estimate d;
    /// E exp(2 (pi.M_hat)_1 - 2 int pi^2 d[M]), a positive G-supermartingale at 1: expected <= 1.
    Estimate supermartingale;
    bool d_nonpositive = true;
    bool supermartingale_bounded = true;
};

inline PropositionTerms proposition_terms(const SimpleStrategy& strategy, std::span<const PathBundle> bundles,
                                          double eps, unsigned threads = 1)
{
    if (bundles.empty()) throw ContractError("proposition_terms: no bundles");
    const std::vector<PathBundle> truncated = truncated_bundles(bundles, eps);
    std::vector<double> cs(truncated.size()), ds(truncated.size()), sm(truncated.size());
    std::vector<char> bad(truncated.size(), 0);
    parallel_for(truncated.size(), threads, [&](std::size_t i) {
        const PathBundle& b = truncated[i];
        const BundleWealth bw = bundle_wealth(strategy, b);
        bad[i] = !band_check(bw.pi).admissible;
        const InsiderDrift drift = insider_drift(b, eps);
        double pm = 0.0, pmhat = 0.0, q = 0.0;
        for (std::size_t c = 0; c < bw.pi.cells.size(); ++c) {
            const double p = bw.pi.cells[c];
            const double dm = b.M[c + 1] - b.M[c];
            pm += p * dm;
            pmhat += p * (drift.martingale[c + 1] - drift.martingale[c]);
            q += p * p * dm * dm;
        }
        double jumps = 0.0;
        for (std::size_t j = 0; j < b.S.jumps().size(); ++j)
            jumps += std::log1p(bw.pi.cells[b.S.jump_points()[j] - 1] * b.S.jumps()[j].size);
        cs[i] = pm - 0.5 * q;
        ds[i] = jumps;
        sm[i] = std::exp(2.0 * pmhat - 2.0 * q);
    });
    if (std::find(bad.begin(), bad.end(), 1) != bad.end())
        throw ContractError("proposition_terms: '" + strategy.id() + "' leaves the admissibility band");
    PropositionTerms t;
    t.strategy_id = strategy.id();
    t.c = mean_estimate(cs);
    t.d = mean_estimate(ds);
    t.supermartingale = mean_estimate(sm);
    t.d_nonpositive = t.d.value <= 3.0 * t.d.std_error;
    t.supermartingale_bounded = t.supermartingale.value <= 1.0 + 3.0 * t.supermartingale.std_error;
    return t;
}

// ---------------------------------------------------------------------------
// Divergence of the insider drift's variation
// ---------------------------------------------------------------------------

/// E int_0^{1-eps} |dA| = sqrt(2/pi) 3 (|log eps|^{1/3} - (ln 2)^{1/3}); 0 for eps >= 1/2.
inline double drift_variation_closed_form(double eps)
{
    if (!(eps > 0.0)) throw DomainError("drift_variation_closed_form: eps must be positive");
    if (eps >= 0.5) return 0.0;
    return std::sqrt(2.0 / std::numbers::pi) * 3.0 * (std::cbrt(-std::log(eps)) - std::cbrt(std::numbers::ln2));
}

struct DivergenceRow {
    double eps = 0.0;
    Estimate mc_tv;
    double closed_form = 0.0;
    double z = 0.0;
    bool matches = true;  ///< |z| <= 3
};

struct DivergenceTable {
    std::vector<DivergenceRow> rows;
    /// mc_tv strictly increasing as eps decreases.
    bool strictly_increasing = true;
    /// Largest relative deviation of mc_tv ratios between consecutive rows from the closed-form ratios.
    double worst_ratio_deviation = 0.0;
};

inline DivergenceTable drift_variation_divergence(std::span<const PathBundle> bundles, std::vector<double> eps_list,
                                                  unsigned threads = 1)
{
    if (bundles.empty()) throw ContractError("drift_variation_divergence: no bundles");
    if (eps_list.empty()) throw ConfigError("drift_variation_divergence: empty eps list");
    std::sort(eps_list.begin(), eps_list.end(), std::greater<>());
    const double gen_eps = bundles.front().eps;
    for (double e : eps_list)
        if (e + 1e-15 < gen_eps)
            throw ContractError("drift_variation_divergence: bundles must be generated at the smallest eps");
    DivergenceTable table;
    for (double eps : eps_list) {
        std::vector<double> tv(bundles.size());
        parallel_for(bundles.size(), threads,
                     [&](std::size_t i) { tv[i] = insider_drift(bundles[i], eps).total_variation; });
        DivergenceRow row;
        row.eps = eps;
        row.mc_tv = mean_estimate(tv);
        row.closed_form = drift_variation_closed_form(eps);
        row.z = row.mc_tv.z(row.closed_form);
        row.matches = std::abs(row.z) <= 3.0;
        table.rows.push_back(row);
    }
    for (std::size_t k = 1; k < table.rows.size(); ++k) {
        const auto& a = table.rows[k - 1];
        const auto& b = table.rows[k];
        if (!(b.mc_tv.value > a.mc_tv.value)) table.strictly_increasing = false;
        if (a.closed_form > 0.0 && a.mc_tv.value > 0.0) {
            const double ratio = b.mc_tv.value / a.mc_tv.value;
            const double target = b.closed_form / a.closed_form;
            table.worst_ratio_deviation = std::max(table.worst_ratio_deviation, std::abs(ratio / target - 1.0));
        }
    }
    return table;
}

}  // namespace qvmart
