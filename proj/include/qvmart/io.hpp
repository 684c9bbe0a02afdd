#pragma once

// Persistence: CSV tables, JSON documents, strategy and model descriptions.

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "qvmart/error.hpp"
#include "qvmart/format.hpp"
#include "qvmart/path_core.hpp"
#include "qvmart/simulate.hpp"
#include "qvmart/strategy.hpp"

namespace qvmart::io {

using nlohmann::json;

/// Writes through a temporary sibling and renames it into place.
inline void atomic_write(const std::filesystem::path& path, std::string_view content)
{
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open " + tmp.string() + " for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw Error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline json parse_json(const std::string& text, const std::string& origin)
{
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(origin + ": invalid JSON: " + e.what());
    }
}

/// Finite doubles as numbers; infinities and NaN as the strings "inf", "-inf", "nan".
inline json number(double x)
{
    if (std::isfinite(x)) return x;
    return format_double(x);
}

inline double to_double(const json& j)
{
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) return parse_double(j.get<std::string>());
    throw ConfigError("expected a number, got " + j.dump());
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

/// Row-oriented CSV with round-trip number formatting.
class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> header) : columns_(header.size())
    {
        append_row(header);
    }

    template <typename... Cells>
    void row(const Cells&... cells)
    {
        std::vector<std::string> r{cell(cells)...};
        require(r.size() == columns_, "CsvTable: wrong number of cells");
        append_row(r);
    }

    const std::string& str() const { return text_; }

private:
    static std::string cell(double x) { return format_double(x); }
    static std::string cell(const std::string& s) { return s; }
    static std::string cell(const char* s) { return s; }
    static std::string cell(bool b) { return b ? "1" : "0"; }
    template <typename T>
        requires std::is_integral_v<T>
    static std::string cell(T x)
    {
        return std::to_string(x);
    }

    void append_row(const std::vector<std::string>& r)
    {
        for (std::size_t i = 0; i < r.size(); ++i) {
            if (i) text_ += ',';
            text_ += r[i];
        }
        text_ += '\n';
    }

    std::size_t columns_;
    std::string text_;
};

inline std::string path_csv(const SamplePath& p)
{
    CsvTable t({"t", "value"});
    for (std::size_t i = 0; i < p.grid().size(); ++i) t.row(p.grid()[i], p[i]);
    return t.str();
}

inline std::string jumps_csv(const SamplePath& p)
{
    CsvTable t({"t", "jump_size"});
    for (const auto& j : p.jumps()) t.row(j.time, j.size);
    return t.str();
}

inline json ensemble_json(const Ensemble& e)
{
    json paths = json::array();
    for (const auto& p : e.paths) {
        json jumps = json::array();
        for (const auto& j : p.jumps()) jumps.push_back({{"t", j.time}, {"size", j.size}});
        paths.push_back({{"values", std::vector<double>(p.values().begin(), p.values().end())}, {"jumps", jumps}});
    }
    return {{"model", e.model_tag},
            {"master_seed", e.master_seed},
            {"grid", std::vector<double>(e.grid().points().begin(), e.grid().points().end())},
            {"paths", paths}};
}

inline Ensemble ensemble_from_json(const json& j)
{
    try {
        const TimeGrid grid = TimeGrid::from_points(j.at("grid").get<std::vector<double>>());
        std::vector<SamplePath> paths;
        for (const auto& p : j.at("paths")) {
            std::vector<Jump> jumps;
            for (const auto& x : p.at("jumps")) jumps.push_back({x.at("t").get<double>(), x.at("size").get<double>()});
            paths.emplace_back(grid, p.at("values").get<std::vector<double>>(), std::move(jumps));
        }
        return Ensemble(std::move(paths), j.at("master_seed").get<std::uint64_t>(), j.at("model").get<std::string>());
    } catch (const json::exception& e) {
        throw ConfigError(std::string("ensemble JSON: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Grids and models
// ---------------------------------------------------------------------------

/// {"kind": "uniform", "steps": n} or
/// {"kind": "singular", "early_steps": n, "steps_per_v": k, "truncations": [eps...]}.
inline TimeGrid grid_from_json(const json& j)
{
    try {
        const std::string kind = j.at("kind").get<std::string>();
        if (kind == "uniform") return TimeGrid::uniform(j.at("steps").get<std::size_t>());
        if (kind == "singular")
            return TimeGrid::singular(j.at("early_steps").get<std::size_t>(), to_double(j.at("steps_per_v")),
                                      j.at("truncations").get<std::vector<double>>());
        throw ConfigError("unknown grid kind '" + kind + "'");
    } catch (const json::exception& e) {
        throw ConfigError(std::string("grid: ") + e.what());
    }
}

/// {"name": "brownian" | "diffusion" | "gaussian_m" | "counterexample", "mu", "sigma", "eps", "rate"}.
inline ModelSpec model_from_json(const json& j)
{
    try {
        const std::string name = j.at("name").get<std::string>();
        ModelSpec spec;
        spec.truncation_eps = j.contains("eps") ? to_double(j.at("eps")) : 0.0;
        if (name == "brownian") {
            spec.variant = BrownianModel{};
        } else if (name == "diffusion") {
            spec.variant = DriftedDiffusion::constant(to_double(j.at("mu")), to_double(j.at("sigma")));
        } else if (name == "gaussian_m") {
            spec.variant = GaussianMModel{};
        } else if (name == "counterexample") {
            spec.variant = CounterexampleModel{j.contains("rate") ? to_double(j.at("rate")) : 1.0};
        } else {
            throw ConfigError("unknown model '" + name + "'");
        }
        return spec;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Strategies
// ---------------------------------------------------------------------------
//
// {"id": "...", "bound": 1, "legs": [
//    {"start": 0, "rule": "constant", "value": 1},
//    {"start": {"hit": "abs_level_or_qv", "threshold": 4, "deadline": 0.5}, "rule": "constant", "value": 0}]}
//
// Rules: constant(value), sign_prefix(value), band(c), informed_sign(c),
// terminal_sign(c); const, sign_prefix_end and band_fraction are aliases.
// "rebalance": true re-decides every cell. A "truncation" leg with "level"
// (and optional "deadline") holds 1 up to T_n and expands into two legs.

inline ProportionRule rule_from_json(const json& leg, std::string& rule_id)
{
    rule_id = leg.at("rule").get<std::string>();
    auto param = [&](const char* key) {
        if (!leg.contains(key)) throw ConfigError("rule '" + rule_id + "' needs '" + key + "'");
        return to_double(leg.at(key));
    };
    if (rule_id == "constant" || rule_id == "const") return rules::constant(param("value"));
    if (rule_id == "sign_prefix" || rule_id == "sign_prefix_end") return rules::sign_prefix_end(param("value"));
    if (rule_id == "band" || rule_id == "band_fraction") return rules::band_fraction(param("c"));
    if (rule_id == "informed_sign") return rules::informed_sign(param("c"));
    if (rule_id == "terminal_sign") return rules::terminal_sign(param("c"));
    throw ConfigError("unknown rule '" + rule_id + "'");
}

inline HitRule::Kind hit_kind_from_string(const std::string& s)
{
    if (s == "abs_level") return HitRule::Kind::abs_level;
    if (s == "qv") return HitRule::Kind::qv;
    if (s == "abs_level_or_qv") return HitRule::Kind::abs_level_or_qv;
    throw ConfigError("unknown hitting rule '" + s + "'");
}

inline SimpleStrategy strategy_from_json(const json& j)
{
    try {
        std::vector<Leg> legs;
        for (const auto& l : j.at("legs")) {
            Leg leg;
            const json& start = l.contains("start") ? l.at("start") : json(0.0);
            if (start.is_object()) {
                HitRule hit;
                hit.kind = hit_kind_from_string(start.at("hit").get<std::string>());
                hit.threshold = to_double(start.at("threshold"));
                hit.deadline = start.contains("deadline") ? to_double(start.at("deadline")) : 1.0;
                leg.start = hit;
            } else {
                leg.start = to_double(start);
            }
            if (l.at("rule") == "truncation") {
                if (!l.contains("level")) throw ConfigError("rule 'truncation' needs 'level'");
                HitRule stop{HitRule::Kind::abs_level_or_qv, to_double(l.at("level")),
                             l.contains("deadline") ? to_double(l.at("deadline")) : 1.0};
                legs.push_back(Leg{leg.start, rules::constant(1.0), false, "const"});
                legs.push_back(Leg{stop, rules::constant(0.0), false, "const"});
                continue;
            }
            leg.rule = rule_from_json(l, leg.rule_id);
            leg.rebalance = l.value("rebalance", false);
            legs.push_back(std::move(leg));
        }
        return SimpleStrategy(j.at("id").get<std::string>(), std::move(legs), to_double(j.at("bound")));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("strategy: ") + e.what());
    }
}

/// A single strategy object, an array of them, or {"strategies": [...]}.
inline std::vector<SimpleStrategy> strategies_from_json(const json& j)
{
    const json& list = j.is_object() && j.contains("strategies") ? j.at("strategies") : j;
    std::vector<SimpleStrategy> out;
    if (list.is_array()) {
        for (const auto& s : list) out.push_back(strategy_from_json(s));
    } else {
        out.push_back(strategy_from_json(list));
    }
    if (out.empty()) throw ConfigError("strategy file lists no strategies");
    return out;
}

}  // namespace qvmart::io
