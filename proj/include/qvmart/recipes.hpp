#pragma once

// Standard strategy families used by the CLI and the acceptance suite.

#include <cmath>
#include <string>
#include <vector>

#include "qvmart/format.hpp"
#include "qvmart/strategy.hpp"

namespace qvmart::recipes {

/// value * sgn(S_{t0}) held on (t0, 1], zero before.
inline SimpleStrategy sign_after(double t0, double value, std::string id = {})
{
    if (id.empty()) id = "sign_after(" + format_double(t0) + ")";
    return SimpleStrategy(std::move(id),
                          {Leg{0.0, rules::constant(0.0), false, "const"},
                           Leg{t0, rules::sign_prefix_end(value), false, "sign_prefix"}},
                          std::abs(value));
}

inline SimpleStrategy band(double c, std::string id = {})
{
    if (id.empty()) id = "band(" + format_double(c) + ")";
    return SimpleStrategy(std::move(id), {Leg{0.0, rules::band_fraction(c), false, "band"}}, std::abs(c));
}

/// value * sgn(S_{t_c}) re-decided every cell.
inline SimpleStrategy rebalanced_sign(double value, std::string id = {})
{
    if (id.empty()) id = "rebalanced_sign(" + format_double(value) + ")";
    return SimpleStrategy(std::move(id), {Leg{0.0, rules::sign_prefix_end(value), true, "sign_prefix"}},
                          std::abs(value));
}

/// Bounded prefix-measurable tests for the martingale diagnostics.
inline std::vector<SimpleStrategy> martingale_tests(double truncation_level)
{
    return {constant_strategy(1.0, "const(1)"),
            sign_after(0.5, 1.0, "sign(S_1/2) on (1/2,1]"),
            truncation_strategy(truncation_level, 0.5, "truncation(tau=1/2)"),
            band(1.0, "1-t"),
            rebalanced_sign(1.0, "rebalanced_sign")};
}

/// Constants 0, 0.625, ..., 5 (nine points bracketing mu/sigma^2 = 2.5 of the
/// reference model) plus three path-dependent strategies scaled by `scale`.
inline std::vector<SimpleStrategy> optimality_family(double scale = 2.5)
{
    std::vector<SimpleStrategy> f;
    for (int k = 0; k <= 8; ++k) f.push_back(constant_strategy(0.625 * k, "const(" + format_double(0.625 * k) + ")"));
    f.push_back(sign_after(0.5, scale, "sign_after(1/2)"));
    f.push_back(band(scale, "band"));
    f.push_back(rebalanced_sign(scale, "rebalanced_sign"));
    return f;
}

/// pi = c (1 - t) on (t0, 1], zero before: pi_hat = c on a set of measure 1 - t0.
inline SimpleStrategy late_band(double t0, double c, std::string id = {})
{
    if (id.empty()) id = "late_band(" + format_double(t0) + "," + format_double(c) + ")";
    return SimpleStrategy(std::move(id),
                          {Leg{0.0, rules::constant(0.0), false, "const"}, Leg{t0, rules::band_fraction(c), false, "band"}},
                          std::abs(c));
}

}  // namespace qvmart::recipes
