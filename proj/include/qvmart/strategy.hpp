#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "qvmart/error.hpp"
#include "qvmart/path_core.hpp"
#include "qvmart/stats.hpp"

namespace qvmart {

/// Information beyond the traded path that a strategy may read.
///
/// `driver` is an auxiliary observed path (B in the counterexample, read by
/// prefix like S). `terminal_driver` is a datum known from time 0, which is how
/// the enlarged filtration G_t = F_t v sigma(B_1) is rendered.
struct Information {
    const SamplePath* driver = nullptr;
    std::optional<double> terminal_driver;
};

/// What a proportion rule is allowed to see: the path and its QV up to the
/// decision index, plus the declared extra information.
class PathPrefix {
public:
    PathPrefix(const SamplePath& path, const QVPath* qv, std::size_t decision_index, const Information& info)
        : path_(&path), qv_(qv), index_(decision_index), info_(&info)
    {
    }

    std::size_t index() const { return index_; }
    double time() const { return path_->grid()[index_]; }

    double value(std::size_t i) const
    {
        check(i);
        return (*path_)[i];
    }
    double last() const { return (*path_)[index_]; }

    double qv(std::size_t i) const
    {
        check(i);
        if (!qv_) throw ContractError("PathPrefix: rule needs [S] but none was supplied");
        return (*qv_)[i];
    }

    double driver_value(std::size_t i) const
    {
        check(i);
        if (!info_->driver) throw ContractError("PathPrefix: rule needs the driver path (insider information)");
        return (*info_->driver)[i];
    }

    double terminal_driver() const
    {
        if (!info_->terminal_driver) throw ContractError("PathPrefix: rule needs B_1 (G-filtration information)");
        return *info_->terminal_driver;
    }

private:
    void check(std::size_t i) const
    {
        if (i > index_) throw ContractError("PathPrefix: read beyond the decision time");
    }

    const SamplePath* path_;
    const QVPath* qv_;
    std::size_t index_;
    const Information* info_;
};

/// K_i: value from the prefix at the leg's decision time. The second argument
/// is the right endpoint of the cell being filled, so deterministic time
/// profiles such as c(1 - t) are expressible.
using ProportionRule = std::function<double(const PathPrefix&, double)>;

/// inf{t : f(S_t, [S]_t) > threshold} ^ deadline on the grid.
struct HitRule {
    enum class Kind { abs_level, qv, abs_level_or_qv };
    Kind kind = Kind::abs_level_or_qv;
    double threshold = 0.0;
    double deadline = 1.0;

    bool triggered(double s, double q) const
    {
        switch (kind) {
        case Kind::abs_level: return std::abs(s) > threshold;
        case Kind::qv: return q > threshold;
        case Kind::abs_level_or_qv: return std::abs(s) > threshold || q > threshold;
        }
        return false;
    }
};

struct Leg {
    /// Decision time T_{i-1}: a deterministic time (snapped up to the grid) or a hitting rule.
    std::variant<double, HitRule> start = 0.0;
    ProportionRule rule;
    /// Re-decides at every grid time inside the leg (a leg per cell).
    bool rebalance = false;
    std::string rule_id;
};

/// pi on the grid: cells[c] applies to the increment over (t_c, t_{c+1}].
struct StepFunction {
    TimeGrid grid;
    std::vector<double> cells;

    static StepFunction constant(const TimeGrid& grid, double value) { return {grid, std::vector<double>(grid.n_steps(), value)}; }

    /// Value on the cell containing t in (0, 1].
    double at_time(double t) const { return cells[grid.cell_of(t)]; }
};

/// pi = sum_i K_i 1_{(T_{i-1}, T_i]} with T_0 = 0, |K_i| <= bound.
class SimpleStrategy {
public:
    SimpleStrategy() = default;
    SimpleStrategy(std::string id, std::vector<Leg> legs, double bound)
        : id_(std::move(id)), legs_(std::move(legs)), bound_(bound)
    {
        if (legs_.empty()) throw ConfigError("SimpleStrategy '" + id_ + "': at least one leg required");
        const auto* t0 = std::get_if<double>(&legs_.front().start);
        if (!t0 || *t0 != 0.0) throw ConfigError("SimpleStrategy '" + id_ + "': first leg must start at T_0 = 0");
        if (!(bound_ >= 0.0 && std::isfinite(bound_))) throw ConfigError("SimpleStrategy: bound must be finite");
        for (const auto& leg : legs_)
            if (!leg.rule) throw ConfigError("SimpleStrategy '" + id_ + "': leg without a rule");
    }

    const std::string& id() const { return id_; }
    std::span<const Leg> legs() const { return legs_; }
    double bound() const { return bound_; }

    /// gamma * pi with the bound scaled alongside.
    SimpleStrategy scaled(double gamma, std::string new_id = {}) const
    {
        SimpleStrategy out = *this;
        out.id_ = new_id.empty() ? id_ + "*" + std::to_string(gamma) : std::move(new_id);
        out.bound_ = std::abs(gamma) * bound_;
        for (auto& leg : out.legs_) {
            ProportionRule inner = leg.rule;
            leg.rule = [inner, gamma](const PathPrefix& p, double t) { return gamma * inner(p, t); };
        }
        return out;
    }

    /// Decision indices T_0 <= T_1 <= ... resolved on this path (T_n = n_steps).
    std::vector<std::size_t> decision_indices(const SamplePath& path, const QVPath& qv) const
    {
        const TimeGrid& grid = path.grid();
        std::vector<std::size_t> idx;
        idx.reserve(legs_.size() + 1);
        std::size_t prev = 0;
        for (const auto& leg : legs_) {
            std::size_t i = grid.n_steps();
            if (const auto* t = std::get_if<double>(&leg.start)) {
                i = std::min(grid.ceil_index(*t), grid.n_steps());
            } else {
                const auto& hit = std::get<HitRule>(leg.start);
                const std::size_t stop = std::min(grid.ceil_index(hit.deadline), grid.n_steps());
                i = stop;
                for (std::size_t k = 0; k < stop; ++k) {
                    if (hit.triggered(path[k], qv[k])) {
                        i = k;
                        break;
                    }
                }
            }
            prev = std::max(prev, i);
            idx.push_back(prev);
        }
        idx.push_back(grid.n_steps());
        return idx;
    }

    StepFunction evaluate(const SamplePath& path, const QVPath& qv, const Information& info = {}) const
    {
        require(path.grid() == qv.grid(), "SimpleStrategy::evaluate: path and QV on different grids");
        const TimeGrid& grid = path.grid();
        const auto idx = decision_indices(path, qv);
        StepFunction pi{grid, std::vector<double>(grid.n_steps(), 0.0)};
        for (std::size_t i = 0; i < legs_.size(); ++i) {
            const Leg& leg = legs_[i];
            const std::size_t lo = idx[i], hi = idx[i + 1];
            for (std::size_t c = lo; c < hi; ++c) {
                const std::size_t decision = leg.rebalance ? c : lo;
                const double k = leg.rule(PathPrefix(path, &qv, decision, info), grid[c + 1]);
                if (!(std::abs(k) <= bound_))
                    throw ContractError("strategy '" + id_ + "': |K| = " + std::to_string(k) +
                                        " exceeds declared bound " + std::to_string(bound_));
                pi.cells[c] = k;
            }
        }
        return pi;
    }

    StepFunction evaluate(const SamplePath& path, const Information& info = {}) const
    {
        return evaluate(path, quadratic_variation(path), info);
    }

private:
    std::string id_;
    std::vector<Leg> legs_;
    double bound_ = 0.0;
};

// ---------------------------------------------------------------------------
// Built-in rules and strategies
// ---------------------------------------------------------------------------

namespace rules {

inline double sgn(double x) { return x >= 0.0 ? 1.0 : -1.0; }

inline ProportionRule constant(double value)
{
    return [value](const PathPrefix&, double) { return value; };
}

/// value * sgn(S at the decision time).
inline ProportionRule sign_prefix_end(double value)
{
    return [value](const PathPrefix& p, double) { return value * sgn(p.last()); };
}

/// c * (1 - t).
inline ProportionRule band_fraction(double c)
{
    return [c](const PathPrefix&, double t) { return c * (1.0 - t); };
}

/// c * (1 - t) * sgn(B_1 - B at the decision time): needs G-information.
inline ProportionRule informed_sign(double c)
{
    return [c](const PathPrefix& p, double t) {
        return c * (1.0 - t) * sgn(p.terminal_driver() - p.driver_value(p.index()));
    };
}

/// c * (1 - t) * sgn(B_1): needs only the time-0 datum of G.
inline ProportionRule terminal_sign(double c)
{
    return [c](const PathPrefix& p, double t) { return c * (1.0 - t) * sgn(p.terminal_driver()); };
}

}  // namespace rules

inline SimpleStrategy constant_strategy(double value, std::string id = {})
{
    if (id.empty()) id = "const(" + std::to_string(value) + ")";
    return SimpleStrategy(std::move(id), {Leg{0.0, rules::constant(value), false, "const"}}, std::abs(value));
}

/// The reduction strategy 1_{(0, tau ^ T_n]} with tau deterministic.
inline SimpleStrategy truncation_strategy(double level, double tau = 1.0, std::string id = {})
{
    if (id.empty()) id = "truncation(" + std::to_string(level) + ")";
    std::vector<Leg> legs{Leg{0.0, rules::constant(1.0), false, "const"},
                          Leg{HitRule{HitRule::Kind::abs_level_or_qv, level, tau}, rules::constant(0.0), false, "const"}};
    return SimpleStrategy(std::move(id), std::move(legs), 1.0);
}

// ---------------------------------------------------------------------------
// Norms and constraints
// ---------------------------------------------------------------------------

/// sum_c pi_c^2 Delta[S]_c for one path ([S] including jump terms).
inline double h2_integral(const StepFunction& pi, const QVPath& qv)
{
    require(pi.grid == qv.grid(), "h2_integral: grids differ");
    double acc = 0.0;
    for (std::size_t c = 0; c < pi.cells.size(); ++c) acc += pi.cells[c] * pi.cells[c] * qv.increment(c);
    return acc;
}

/// ||pi||^2_{H^2} = E int pi^2 d[S], Monte-Carlo over the ensemble.
inline Estimate h2_norm(const SimpleStrategy& strategy, const Ensemble& ensemble, std::span<const QVPath> qvs,
                        const Information& info = {})
{
    if (ensemble.paths.empty()) throw ContractError("h2_norm: empty ensemble");
    require(qvs.size() == ensemble.size(), "h2_norm: one QV path per sample path required");
    MeanAccumulator acc;
    for (std::size_t p = 0; p < ensemble.size(); ++p)
        acc.add(h2_integral(strategy.evaluate(ensemble.paths[p], qvs[p], info), qvs[p]));
    return acc.estimate();
}

struct BandViolation {
    double time = 0.0;
    double proportion = 0.0;
};

struct BandReport {
    bool admissible = true;
    std::vector<BandViolation> violations;
};

/// Flags grid times t < 1 with |pi_t| >= 1 - t (the open band).
inline BandReport band_check(const StepFunction& pi)
{
    BandReport r;
    for (std::size_t c = 0; c + 1 < pi.grid.size(); ++c) {
        const double t = pi.grid[c + 1];
        if (t >= 1.0) continue;
        if (std::abs(pi.cells[c]) >= 1.0 - t) r.violations.push_back({t, pi.cells[c]});
    }
    r.admissible = r.violations.empty();
    return r;
}

/// Band check on a zero probe path; exact for strategies that do not read S.
inline BandReport band_check(const SimpleStrategy& strategy, const TimeGrid& grid, const Information& info = {})
{
    const SamplePath zero(grid, std::vector<double>(grid.size(), 0.0));
    return band_check(strategy.evaluate(zero, info));
}

inline double shares_from_proportion(double pi, double wealth, double price)
{
    if (!(price > 0.0)) throw DomainError("shares_from_proportion: price must be positive");
    if (!(wealth > 0.0)) throw DomainError("shares_from_proportion: wealth must be positive");
    return pi * wealth / price;
}

inline double proportion_from_shares(double shares, double wealth, double price)
{
    if (!(price > 0.0)) throw DomainError("proportion_from_shares: price must be positive");
    if (!(wealth > 0.0)) throw DomainError("proportion_from_shares: wealth must be positive");
    return shares * price / wealth;
}

}  // namespace qvmart
