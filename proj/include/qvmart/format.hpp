#pragma once

#include <charconv>
#include <cmath>
#include <string>
#include <system_error>

#include "qvmart/error.hpp"

namespace qvmart {

/// Shortest decimal text that parses back to exactly `x`.
inline std::string format_double(double x)
{
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
    if (ec != std::errc{}) throw Error("format_double: to_chars failed");
    return std::string(buf, end);
}

inline double parse_double(std::string_view text)
{
    if (text == "inf") return HUGE_VAL;
    if (text == "-inf") return -HUGE_VAL;
    if (text == "nan") return std::nan("");
    double x = 0.0;
    auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), x);
    if (ec != std::errc{} || end != text.data() + text.size())
        throw ConfigError("cannot parse number '" + std::string(text) + "'");
    return x;
}

}  // namespace qvmart
