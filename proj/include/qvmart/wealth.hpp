#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "qvmart/error.hpp"
#include "qvmart/path_core.hpp"
#include "qvmart/stats.hpp"
#include "qvmart/strategy.hpp"

namespace qvmart {

/// W^pi on the grid, W_0 = 1.
struct WealthPath {
    TimeGrid grid;
    std::vector<double> values;
    /// log W_1 accumulated in log space; -inf when wealth hit <= 0.
    double log_terminal = 0.0;
    bool hit_nonpositive = false;
    std::optional<double> first_nonpositive_time;

    double terminal() const { return values.back(); }
};

/// (pi . S)_t = sum_c pi_c (S_{t_{c+1}} - S_{t_c}) accumulated on the grid,
/// jump increments included; jumps of the result are pi times those of S.
inline SamplePath simple_integral(const StepFunction& pi, const SamplePath& path)
{
    require(pi.grid == path.grid(), "simple_integral: grids differ");
    const auto v = path.values();
    std::vector<double> out(v.size(), 0.0);
    for (std::size_t c = 0; c + 1 < v.size(); ++c) out[c + 1] = out[c] + pi.cells[c] * (v[c + 1] - v[c]);
    std::vector<Jump> jumps;
    for (std::size_t j = 0; j < path.jumps().size(); ++j) {
        const double size = pi.cells[path.jump_points()[j] - 1] * path.jumps()[j].size;
        if (size != 0.0) jumps.push_back({path.jumps()[j].time, size});
    }
    return SamplePath(path.grid(), std::move(out), std::move(jumps));
}

namespace detail {

/// Shared core of both exponentials: exponent
/// (pi.S)_t - 1/2 int pi^2 d[S]^c - sum pi dS_jump, times prod (1 + pi dS_jump).
inline WealthPath stochastic_exponential(const StepFunction& pi, const SamplePath& path, const QVPath& qv_continuous)
{
    require(pi.grid == path.grid() && path.grid() == qv_continuous.grid(), "stochastic exponential: grids differ");
    const TimeGrid& grid = path.grid();
    const auto v = path.values();
    const auto jumps = path.jumps();
    const auto jump_points = path.jump_points();
    WealthPath w;
    w.grid = grid;
    w.values.assign(v.size(), 1.0);
    double integral = 0.0, quad = 0.0, jump_comp = 0.0;
    double product = 1.0, log_product = 0.0;
    std::size_t j = 0;
    for (std::size_t c = 0; c + 1 < v.size(); ++c) {
        const double p = pi.cells[c];
        integral += p * (v[c + 1] - v[c]);
        quad += p * p * qv_continuous.increment(c);
        while (j < jumps.size() && jump_points[j] == c + 1) {
            const double x = p * jumps[j].size;
            jump_comp += x;
            const double factor = 1.0 + x;
            if (factor <= 0.0 && !w.hit_nonpositive) {
                w.hit_nonpositive = true;
                w.first_nonpositive_time = grid[c + 1];
            }
            product *= factor;
            log_product += factor > 0.0 ? std::log(factor) : -std::numeric_limits<double>::infinity();
            ++j;
        }
        const double exponent = integral - 0.5 * quad - jump_comp;
        if (w.hit_nonpositive) {
            // frozen at its first nonpositive value
            w.values[c + 1] = w.values[c] <= 0.0 ? w.values[c] : std::exp(exponent) * product;
        } else {
            w.values[c + 1] = std::exp(exponent) * product;
        }
    }
    w.log_terminal = w.hit_nonpositive ? -std::numeric_limits<double>::infinity()
                                       : (integral - 0.5 * quad - jump_comp) + log_product;
    return w;
}

}  // namespace detail

/// E(pi . S)_t = exp((pi . S)_t - 1/2 int pi^2 d[S]) for continuous S.
inline WealthPath stoch_exp_continuous(const StepFunction& pi, const SamplePath& path, const QVPath& qv)
{
    if (!path.continuous()) throw ContractError("stoch_exp_continuous: path has jumps; use stoch_exp_jumps");
    return detail::stochastic_exponential(pi, path, qv);
}

/// Canonical exponential with jumps: qv_continuous must be [S]^c.
inline WealthPath stoch_exp_jumps(const StepFunction& pi, const SamplePath& path, const QVPath& qv_continuous)
{
    return detail::stochastic_exponential(pi, path, qv_continuous);
}

/// max_t |W_t - 1 - sum_{c: t_{c+1} <= t} W_{t_c} pi_c dS_c| (left-endpoint Riemann rendering of dZ = Z pi dS).
inline double dd_residual(const StepFunction& pi, const SamplePath& path, const WealthPath& wealth)
{
    require(pi.grid == path.grid() && path.grid() == wealth.grid, "dd_residual: grids differ");
    const auto v = path.values();
    double riemann = 0.0, worst = 0.0;
    for (std::size_t c = 0; c + 1 < v.size(); ++c) {
        riemann += wealth.values[c] * pi.cells[c] * (v[c + 1] - v[c]);
        worst = std::max(worst, std::abs(wealth.values[c + 1] - 1.0 - riemann));
    }
    return worst;
}

/// Monte-Carlo E[log W_1]; -inf as soon as one path ends with W_1 <= 0.
struct UtilityReport {
    double estimate = 0.0;
    double std_error = 0.0;
    std::size_t n_paths = 0;
    std::size_t n_nonpositive = 0;

    bool finite() const { return n_nonpositive == 0; }
};

/// Mergeable accumulator behind log_utility.
class UtilityAccumulator {
public:
    void add(double log_w1, bool nonpositive)
    {
        ++n_;
        if (nonpositive || !std::isfinite(log_w1)) {
            ++nonpositive_;
            return;
        }
        acc_.add(log_w1);
    }

    void add(const WealthPath& w) { add(w.log_terminal, w.hit_nonpositive || w.terminal() <= 0.0); }

    void merge(const UtilityAccumulator& other)
    {
        n_ += other.n_;
        nonpositive_ += other.nonpositive_;
        acc_.merge(other.acc_);
    }

    UtilityReport report() const
    {
        if (n_ == 0) throw ContractError("log_utility: at least one path required");
        UtilityReport r;
        r.n_paths = n_;
        r.n_nonpositive = nonpositive_;
        if (nonpositive_ > 0) {
            r.estimate = -std::numeric_limits<double>::infinity();
            r.std_error = 0.0;
        } else {
            const Estimate e = acc_.estimate();
            r.estimate = e.value;
            r.std_error = e.std_error;
        }
        return r;
    }

private:
    std::size_t n_ = 0;
    std::size_t nonpositive_ = 0;
    MeanAccumulator acc_;
};

inline UtilityReport log_utility(std::span<const WealthPath> wealths)
{
    UtilityAccumulator acc;
    for (const auto& w : wealths) acc.add(w);
    return acc.report();
}

}  // namespace qvmart
