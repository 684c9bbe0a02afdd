#pragma once

// Empirical semimartingale decomposition S = S_hat + int alpha d[S] and the
// growth-optimal portfolio, estimated from an ensemble of continuous paths.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qvmart/error.hpp"
#include "qvmart/path_core.hpp"
#include "qvmart/stats.hpp"
#include "qvmart/strategy.hpp"
#include "qvmart/wealth.hpp"

namespace qvmart {

struct BinSpec {
    std::size_t time_bins = 32;
    /// 0 disables state binning; otherwise quantile bins of S at the cell's left endpoint.
    std::size_t state_bins = 0;
    std::size_t min_count = 50;
};

struct AlphaBin {
    double t_start = 0.0;
    double t_end = 1.0;
    double s_low = -std::numeric_limits<double>::infinity();
    double s_high = std::numeric_limits<double>::infinity();
    double alpha = 0.0;
    double std_error = 0.0;
    /// (path, cell) samples that fell in the bin.
    std::size_t count = 0;
    bool has_estimate = false;
};

/// Bin-wise drift density alpha_hat. A cell's bin is decided by its left
/// endpoint (t_c, S_{t_c}), so alpha_hat is predictable.
class DriftEstimate {
public:
    DriftEstimate() = default;
    DriftEstimate(TimeGrid grid, BinSpec spec, std::vector<AlphaBin> bins, std::vector<std::vector<double>> state_edges)
        : grid_(std::move(grid)), spec_(spec), bins_(std::move(bins)), state_edges_(std::move(state_edges))
    {
        if (spec_.time_bins < 1) throw ConfigError("DriftEstimate: need at least one time bin");
        require(bins_.size() == spec_.time_bins * states(), "DriftEstimate: bin count mismatch");
    }

    /// Deterministic alpha on every bin (oracle injection, alpha = 0 for raw S).
    static DriftEstimate constant(const TimeGrid& grid, double alpha, std::size_t time_bins = 1)
    {
        BinSpec spec{time_bins, 0, 0};
        std::vector<AlphaBin> bins(time_bins);
        for (std::size_t b = 0; b < time_bins; ++b) {
            bins[b].t_start = static_cast<double>(b) / static_cast<double>(time_bins);
            bins[b].t_end = static_cast<double>(b + 1) / static_cast<double>(time_bins);
            bins[b].alpha = alpha;
            bins[b].has_estimate = true;
        }
        return DriftEstimate(grid, spec, std::move(bins), {});
    }

    const TimeGrid& grid() const { return grid_; }
    const BinSpec& spec() const { return spec_; }
    std::span<const AlphaBin> bins() const { return bins_; }

    std::size_t time_bin_of_cell(std::size_t c) const
    {
        const auto b = static_cast<std::size_t>(grid_[c] * static_cast<double>(spec_.time_bins));
        return std::min(b, spec_.time_bins - 1);
    }

    std::size_t bin_of(std::size_t c, double s_left) const
    {
        const std::size_t tb = time_bin_of_cell(c);
        if (spec_.state_bins == 0) return tb;
        const auto& edges = state_edges_[tb];
        const auto sb = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), s_left) - edges.begin());
        return tb * spec_.state_bins + sb;
    }

    /// alpha_hat used on cell c of `path`; 0 in no-estimate bins.
    double alpha_at(std::size_t c, const SamplePath& path) const
    {
        const auto& bin = bins_[bin_of(c, path[c])];
        return bin.has_estimate ? bin.alpha : 0.0;
    }

    StepFunction as_step_function(const SamplePath& path) const
    {
        require(path.grid() == grid_, "DriftEstimate: path on a different grid");
        StepFunction pi{grid_, std::vector<double>(grid_.n_steps())};
        for (std::size_t c = 0; c < pi.cells.size(); ++c) pi.cells[c] = alpha_at(c, path);
        return pi;
    }

    /// alpha_hat as a proportion strategy (rebalanced every cell; reads S at the decision time).
    SimpleStrategy as_strategy(std::string id = "alpha_hat") const
    {
        double bound = 0.0;
        for (const auto& b : bins_)
            if (b.has_estimate) bound = std::max(bound, std::abs(b.alpha));
        DriftEstimate self = *this;
        ProportionRule rule = [self](const PathPrefix& p, double) {
            const auto& bin = self.bins_[self.bin_of(p.index(), p.last())];
            return bin.has_estimate ? bin.alpha : 0.0;
        };
        return SimpleStrategy(std::move(id), {Leg{0.0, rule, true, "alpha_hat"}}, bound);
    }

private:
    std::size_t states() const { return spec_.state_bins == 0 ? 1 : spec_.state_bins; }

    TimeGrid grid_;
    BinSpec spec_;
    std::vector<AlphaBin> bins_;
    std::vector<std::vector<double>> state_edges_;
};

namespace detail {

inline void check_inputs(const Ensemble& ensemble, std::span<const QVPath> qvs, const char* what)
{
    if (ensemble.paths.empty()) throw ContractError(std::string(what) + ": empty ensemble");
    require(qvs.size() == ensemble.size(), std::string(what) + ": one QV path per sample path required");
}

inline double integral_terminal(const StepFunction& pi, const SamplePath& path)
{
    const auto v = path.values();
    double acc = 0.0;
    for (std::size_t c = 0; c < pi.cells.size(); ++c) acc += pi.cells[c] * (v[c + 1] - v[c]);
    return acc;
}

inline void apply_truncation(StepFunction& pi, std::size_t stop_index)
{
    for (std::size_t c = stop_index; c < pi.cells.size(); ++c) pi.cells[c] = 0.0;
}

}  // namespace detail

/// Smallest level n with at least `coverage` of the paths never crossing it,
/// so T_n = 1 on those paths.
inline double choose_truncation_level(const Ensemble& ensemble, std::span<const QVPath> qvs, double coverage = 0.99)
{
    detail::check_inputs(ensemble, qvs, "choose_truncation_level");
    std::vector<double> m(ensemble.size());
    for (std::size_t p = 0; p < ensemble.size(); ++p) {
        double sup = 0.0;
        for (double x : ensemble.paths[p].values()) sup = std::max(sup, std::abs(x));
        m[p] = std::max(sup, qvs[p].terminal());
    }
    return upper_quantile(std::move(m), coverage);
}

struct LambdaEstimate {
    std::string strategy_id;
    Estimate estimate;
};

/// Lambda(pi) = E int pi dS. With `truncation_level`, pi is stopped at T_n
/// first (the H^b discipline).
inline LambdaEstimate estimate_lambda(const SimpleStrategy& strategy, const Ensemble& ensemble,
                                      std::span<const QVPath> qvs, std::optional<double> truncation_level = {})
{
    detail::check_inputs(ensemble, qvs, "estimate_lambda");
    MeanAccumulator acc;
    for (std::size_t p = 0; p < ensemble.size(); ++p) {
        StepFunction pi = strategy.evaluate(ensemble.paths[p], qvs[p]);
        if (truncation_level)
            detail::apply_truncation(pi, truncation_time(ensemble.paths[p], qvs[p], *truncation_level).index);
        acc.add(detail::integral_terminal(pi, ensemble.paths[p]));
    }
    return {strategy.id(), acc.estimate()};
}

struct CauchySchwarzRow {
    std::string strategy_id;
    Estimate lambda;
    Estimate h2;       ///< ||pi||^2
    double bound = 0;  ///< sqrt(2C) ||pi||
    double slack = 0;  ///< 3 x combined stderr
    bool holds = true;
};

/// |Lambda(pi)| <= sqrt(2C) ||pi||_{H^2} for every member, within 3 stderr.
inline std::vector<CauchySchwarzRow> cauchy_schwarz_bound_check(std::span<const SimpleStrategy> family,
                                                                const Ensemble& ensemble,
                                                                std::span<const QVPath> qvs, double c_bound)
{
    detail::check_inputs(ensemble, qvs, "cauchy_schwarz_bound_check");
    if (!(c_bound >= 0.0)) throw ContractError("cauchy_schwarz_bound_check: C must be >= 0");
    std::vector<CauchySchwarzRow> rows;
    for (const auto& s : family) {
        CauchySchwarzRow r;
        r.strategy_id = s.id();
        r.lambda = estimate_lambda(s, ensemble, qvs).estimate;
        r.h2 = h2_norm(s, ensemble, qvs);
        const double norm = std::sqrt(r.h2.value);
        const double k = std::sqrt(2.0 * c_bound);
        r.bound = k * norm;
        const double norm_se = norm > 0.0 ? r.h2.std_error / (2.0 * norm) : 0.0;
        r.slack = 3.0 * std::hypot(r.lambda.std_error, k * norm_se);
        r.holds = std::abs(r.lambda.value) <= r.bound + r.slack;
        rows.push_back(std::move(r));
    }
    return rows;
}

/// alpha_hat per bin = sum dS / sum d[S] over all (path, cell) samples in the
/// bin: the weighted least-squares fit of dS ~ alpha d[S].
///
/// The standard error clusters by path (delta method for a ratio of sums), so
/// dependence between cells of one path inside a bin is accounted for.
inline DriftEstimate estimate_alpha(const Ensemble& ensemble, std::span<const QVPath> qvs, const BinSpec& spec)
{
    detail::check_inputs(ensemble, qvs, "estimate_alpha");
    if (spec.time_bins < 1) throw ConfigError("estimate_alpha: need at least one time bin");
    for (const auto& p : ensemble.paths)
        if (!p.continuous()) throw ContractError("estimate_alpha: continuous model required");
    const TimeGrid& grid = ensemble.grid();
    const std::size_t n_cells = grid.n_steps();
    const std::size_t states = spec.state_bins == 0 ? 1 : spec.state_bins;
    const std::size_t n_bins = spec.time_bins * states;

    std::vector<AlphaBin> bins(n_bins);
    std::vector<std::vector<double>> edges;
    DriftEstimate layout(grid, spec, bins, {});
    if (spec.state_bins > 0) {
        std::vector<std::vector<double>> samples(spec.time_bins);
        for (const auto& p : ensemble.paths)
            for (std::size_t c = 0; c < n_cells; ++c) samples[layout.time_bin_of_cell(c)].push_back(p[c]);
        edges.resize(spec.time_bins);
        for (std::size_t tb = 0; tb < spec.time_bins; ++tb) {
            auto& xs = samples[tb];
            std::sort(xs.begin(), xs.end());
            for (std::size_t k = 1; k < spec.state_bins; ++k) {
                double e = xs.empty() ? 0.0 : xs[std::min(xs.size() - 1, k * xs.size() / spec.state_bins)];
                // ties (e.g. all paths start at S_0 = 0) would make empty bins; keep edges strictly increasing
                if (!edges[tb].empty() && e <= edges[tb].back()) e = std::nextafter(edges[tb].back(), HUGE_VAL);
                edges[tb].push_back(e);
            }
        }
        layout = DriftEstimate(grid, spec, bins, edges);
    }

    std::vector<double> sx(n_bins, 0.0), sy(n_bins, 0.0), sxx(n_bins, 0.0), sxy(n_bins, 0.0), syy(n_bins, 0.0);
    std::vector<std::size_t> count(n_bins, 0), paths_in_bin(n_bins, 0), stamp(n_bins, SIZE_MAX);
    std::vector<double> px(n_bins), py(n_bins);
    std::vector<std::size_t> touched;
    for (std::size_t p = 0; p < ensemble.size(); ++p) {
        const auto& path = ensemble.paths[p];
        touched.clear();
        for (std::size_t c = 0; c < n_cells; ++c) {
            const std::size_t b = layout.bin_of(c, path[c]);
            if (stamp[b] != p) {
                stamp[b] = p;
                touched.push_back(b);
                px[b] = 0.0;
                py[b] = 0.0;
            }
            px[b] += path[c + 1] - path[c];
            py[b] += qvs[p].increment(c);
            ++count[b];
        }
        for (std::size_t b : touched) {
            sx[b] += px[b];
            sy[b] += py[b];
            sxx[b] += px[b] * px[b];
            sxy[b] += px[b] * py[b];
            syy[b] += py[b] * py[b];
            ++paths_in_bin[b];
        }
    }

    for (std::size_t b = 0; b < n_bins; ++b) {
        AlphaBin& bin = bins[b];
        const std::size_t tb = b / states, sb = b % states;
        bin.t_start = static_cast<double>(tb) / static_cast<double>(spec.time_bins);
        bin.t_end = static_cast<double>(tb + 1) / static_cast<double>(spec.time_bins);
        if (spec.state_bins > 0) {
            if (sb > 0) bin.s_low = edges[tb][sb - 1];
            if (sb + 1 < states) bin.s_high = edges[tb][sb];
        }
        bin.count = count[b];
        if (count[b] < std::max<std::size_t>(spec.min_count, 1) || !(sy[b] > 0.0) || paths_in_bin[b] < 2) continue;
        bin.has_estimate = true;
        bin.alpha = sx[b] / sy[b];
        const double a = bin.alpha;
        const double rss = std::max(0.0, sxx[b] - 2.0 * a * sxy[b] + a * a * syy[b]);
        const double m = static_cast<double>(paths_in_bin[b]);
        bin.std_error = std::sqrt(rss * m / (m - 1.0)) / sy[b];
    }
    return DriftEstimate(grid, spec, std::move(bins), std::move(edges));
}

struct DecompositionResult {
    DriftEstimate alpha;
    /// S_hat = S - int alpha_hat d[S], one per input path.
    Ensemble s_hat;
    /// Fraction of (path, cell) samples in bins with an estimate.
    double coverage = 1.0;
    /// max |S_hat + int alpha_hat d[S] - S| over all paths and grid points.
    double reconstruction_error = 0.0;
};

inline DecompositionResult decompose(const Ensemble& ensemble, std::span<const QVPath> qvs, const DriftEstimate& alpha,
                                     double max_uncovered = 0.05)
{
    detail::check_inputs(ensemble, qvs, "decompose");
    require(ensemble.grid() == alpha.grid(), "decompose: alpha estimated on a different grid");
    const std::size_t n_cells = ensemble.grid().n_steps();
    std::size_t covered = 0, total = 0;
    std::vector<SamplePath> hats(ensemble.size());
    double worst = 0.0;
    for (std::size_t p = 0; p < ensemble.size(); ++p) {
        const auto& path = ensemble.paths[p];
        std::vector<double> h(path.values().begin(), path.values().end());
        double drift = 0.0;
        for (std::size_t c = 0; c < n_cells; ++c) {
            const auto& bin = alpha.bins()[alpha.bin_of(c, path[c])];
            ++total;
            if (bin.has_estimate) ++covered;
            drift += (bin.has_estimate ? bin.alpha : 0.0) * qvs[p].increment(c);
            h[c + 1] = path[c + 1] - drift;
            const double scale = std::max(1.0, std::abs(path[c + 1]));
            worst = std::max(worst, std::abs(h[c + 1] + drift - path[c + 1]) / scale);
        }
        hats[p] = SamplePath(path.grid(), std::move(h));
    }
    const double coverage = static_cast<double>(covered) / static_cast<double>(total);
    if (1.0 - coverage > max_uncovered)
        throw ContractError("decompose: only " + std::to_string(100.0 * coverage) +
                            "% of samples fall in bins with an alpha estimate");
    return {alpha, Ensemble(std::move(hats), ensemble.master_seed, ensemble.model_tag + "/s_hat"), coverage, worst};
}

struct MartingaleDiagnostic {
    std::string strategy_id;
    Estimate lambda;  ///< E int pi dS_hat
    double z = 0.0;
    bool pass = true;
};

/// z = Lambda_hat_{S_hat}(pi) / stderr per test strategy; passes when |z| <= threshold.
/// Strategies read the observed S (their filtration), integrate against S_hat,
/// and are stopped at T_n when a truncation level is given.
inline std::vector<MartingaleDiagnostic> martingale_residual(const DecompositionResult& result,
                                                             const Ensemble& ensemble, std::span<const QVPath> qvs,
                                                             std::span<const SimpleStrategy> tests,
                                                             std::optional<double> truncation_level = {},
                                                             double threshold = 3.0)
{
    detail::check_inputs(ensemble, qvs, "martingale_residual");
    require(result.s_hat.size() == ensemble.size(), "martingale_residual: decomposition does not match ensemble");
    std::vector<MartingaleDiagnostic> out;
    for (const auto& s : tests) {
        MeanAccumulator acc;
        for (std::size_t p = 0; p < ensemble.size(); ++p) {
            StepFunction pi = s.evaluate(ensemble.paths[p], qvs[p]);
            if (truncation_level)
                detail::apply_truncation(pi, truncation_time(ensemble.paths[p], qvs[p], *truncation_level).index);
            acc.add(detail::integral_terminal(pi, result.s_hat.paths[p]));
        }
        MartingaleDiagnostic d{s.id(), acc.estimate()};
        d.z = d.lambda.z();
        d.pass = std::abs(d.z) <= threshold;
        out.push_back(std::move(d));
    }
    return out;
}

struct RieszCheck {
    std::string strategy_id;
    double lambda = 0.0;     ///< E int pi dS
    double pairing = 0.0;    ///< E int pi alpha_hat d[S]
    Estimate difference;     ///< E int pi dS_hat, per-path paired
    double relative_gap = 0.0;
};

inline RieszCheck riesz_check(const SimpleStrategy& strategy, const DriftEstimate& alpha, const Ensemble& ensemble,
                              std::span<const QVPath> qvs)
{
    detail::check_inputs(ensemble, qvs, "riesz_check");
    MeanAccumulator lam, pair, diff;
    for (std::size_t p = 0; p < ensemble.size(); ++p) {
        const auto& path = ensemble.paths[p];
        const StepFunction pi = strategy.evaluate(path, qvs[p]);
        double l = 0.0, r = 0.0;
        for (std::size_t c = 0; c < pi.cells.size(); ++c) {
            l += pi.cells[c] * (path[c + 1] - path[c]);
            r += pi.cells[c] * alpha.alpha_at(c, path) * qvs[p].increment(c);
        }
        lam.add(l);
        pair.add(r);
        diff.add(l - r);
    }
    RieszCheck out{strategy.id(), lam.mean(), pair.mean(), diff.estimate()};
    const double scale = std::max({std::abs(out.lambda), std::abs(out.pairing), std::numeric_limits<double>::min()});
    out.relative_gap = std::abs(out.lambda - out.pairing) / scale;
    return out;
}

struct GrowthOptimal {
    /// 1/2 E int alpha_hat^2 d[S].
    double value = 0.0;
    /// Path sampling error combined with the propagated alpha_hat bin errors.
    double std_error = 0.0;
    /// Path sampling error alone.
    double path_std_error = 0.0;
    /// Direct E log W^{alpha_hat}_1, the cross-check.
    UtilityReport direct;
};

inline GrowthOptimal growth_optimal_value(const DriftEstimate& alpha, const Ensemble& ensemble,
                                          std::span<const QVPath> qvs)
{
    detail::check_inputs(ensemble, qvs, "growth_optimal_value");
    const std::size_t n_bins = alpha.bins().size();
    std::vector<double> qv_mass(n_bins, 0.0);
    MeanAccumulator half_energy;
    UtilityAccumulator direct;
    for (std::size_t p = 0; p < ensemble.size(); ++p) {
        const auto& path = ensemble.paths[p];
        const StepFunction pi = alpha.as_step_function(path);
        double e = 0.0;
        for (std::size_t c = 0; c < pi.cells.size(); ++c) {
            const double dq = qvs[p].increment(c);
            e += pi.cells[c] * pi.cells[c] * dq;
            qv_mass[alpha.bin_of(c, path[c])] += dq;
        }
        half_energy.add(0.5 * e);
        direct.add(stoch_exp_continuous(pi, path, qvs[p]));
    }
    GrowthOptimal g;
    const Estimate h = half_energy.estimate();
    g.value = h.value;
    g.path_std_error = h.std_error;
    double var = h.std_error * h.std_error;
    const double n = static_cast<double>(ensemble.size());
    for (std::size_t b = 0; b < n_bins; ++b) {
        const auto& bin = alpha.bins()[b];
        if (!bin.has_estimate) continue;
        const double dv = bin.alpha * qv_mass[b] / n;  // d value / d alpha_b
        var += dv * dv * bin.std_error * bin.std_error;
    }
    g.std_error = std::sqrt(var);
    g.direct = direct.report();
    return g;
}

/// E log W^pi_1 - E log W^{alpha_hat}_1, paired per path.
inline Estimate optimality_gap(const SimpleStrategy& strategy, const DriftEstimate& alpha, const Ensemble& ensemble,
                               std::span<const QVPath> qvs)
{
    detail::check_inputs(ensemble, qvs, "optimality_gap");
    MeanAccumulator acc;
    for (std::size_t p = 0; p < ensemble.size(); ++p) {
        const auto& path = ensemble.paths[p];
        const WealthPath w = stoch_exp_continuous(strategy.evaluate(path, qvs[p]), path, qvs[p]);
        const WealthPath wa = stoch_exp_continuous(alpha.as_step_function(path), path, qvs[p]);
        acc.add(w.log_terminal - wa.log_terminal);
    }
    return acc.estimate();
}

/// E[S_hat_t^2] at the given grid indices: bounded across t when E[S]_1 < infinity.
inline std::vector<Estimate> s_hat_second_moments(const DecompositionResult& result, std::span<const std::size_t> indices)
{
    std::vector<Estimate> out;
    for (std::size_t i : indices) {
        MeanAccumulator acc;
        for (const auto& p : result.s_hat.paths) {
            const double x = p[i] - p[0];
            acc.add(x * x);
        }
        out.push_back(acc.estimate());
    }
    return out;
}

}  // namespace qvmart
