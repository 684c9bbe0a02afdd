// qvmart: command-line driver for simulation, inference and the counterexample checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qvmart/qvmart.hpp"

namespace fs = std::filesystem;
using namespace qvmart;
using io::json;

namespace {

constexpr const char* tool_version = "0.1.0";

struct Context {
    fs::path out;
    unsigned threads = 1;
};

// ---------------------------------------------------------------------------
// Config helpers
// ---------------------------------------------------------------------------

double num(const json& cfg, const char* key) { return io::to_double(cfg.at(key)); }

std::uint64_t seed_of(const json& cfg) { return cfg.at("seed").get<std::uint64_t>(); }

bool singular_model(const json& model)
{
    const auto name = model.at("name").get<std::string>();
    return name == "gaussian_m" || name == "counterexample";
}

void write(const Context& ctx, const std::string& name, const std::string& content)
{
    io::atomic_write(ctx.out / name, content);
}

void write_manifest(const Context& ctx, const json& config)
{
    json m{{"tool", "qvmart"}, {"version", tool_version}, {"config", config}};
    write(ctx, "manifest.json", io::dump(m));
}

json estimate_json(const Estimate& e)
{
    return {{"value", io::number(e.value)}, {"stderr", io::number(e.std_error)}, {"n", e.n}};
}

json utility_json(const UtilityReport& u)
{
    return {{"estimate", io::number(u.estimate)},
            {"stderr", io::number(u.std_error)},
            {"n_paths", u.n_paths},
            {"n_nonpositive", u.n_nonpositive}};
}

json binomial_json(const BinomialSummary& b)
{
    return {{"successes", b.successes}, {"trials", b.trials},   {"p_hat", b.p_hat},
            {"stderr", b.std_error},    {"lower", b.lower},     {"upper", b.upper},
            {"confidence", b.confidence}};
}

/// Oracle drift density for constant-coefficient diffusions.
std::optional<double> oracle_alpha(const json& model)
{
    if (model.at("name") != "diffusion") return std::nullopt;
    const double s = num(model, "sigma");
    return num(model, "mu") / (s * s);
}

std::vector<SimpleStrategy> strategies_in(const json& cfg, const char* key)
{
    if (!cfg.contains(key) || cfg.at(key).is_null()) return {};
    return io::strategies_from_json(cfg.at(key));
}

Ensemble make_ensemble(const json& cfg, unsigned threads)
{
    const ModelSpec spec = io::model_from_json(cfg.at("model"));
    const TimeGrid grid = io::grid_from_json(cfg.at("grid"));
    return generate_ensemble(spec, grid, cfg.at("paths").get<std::size_t>(), seed_of(cfg), threads);
}

std::vector<PathBundle> make_bundles(const json& cfg, double eps, unsigned threads)
{
    const TimeGrid grid = io::grid_from_json(cfg.at("grid"));
    const double rate = cfg.contains("model") ? cfg.at("model").value("rate", 1.0) : 1.0;
    return gen_counterexample_bundles(SeedStream(seed_of(cfg)), cfg.at("bundles").get<std::size_t>(), grid, eps,
                                      rate, threads);
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

void run_simulate(const json& cfg, const Context& ctx)
{
    const Ensemble e = make_ensemble(cfg, ctx.threads);
    write_manifest(ctx, cfg);
    if (cfg.at("format") == "json") {
        write(ctx, "ensemble.json", io::dump(io::ensemble_json(e)));
        return;
    }
    const bool jumps = cfg.at("model").at("name") == "counterexample";
    for (std::size_t i = 0; i < e.size(); ++i) {
        const std::string stem = "path_" + std::to_string(i);
        write(ctx, stem + ".csv", io::path_csv(e.paths[i]));
        if (jumps) write(ctx, stem + "_jumps.csv", io::jumps_csv(e.paths[i]));
    }
}

void run_qv(const json& cfg, const Context& ctx)
{
    const ModelSpec spec = io::model_from_json(cfg.at("model"));
    const TimeGrid grid = io::grid_from_json(cfg.at("grid"));
    spec.validate(grid);
    if (singular_model(cfg.at("model"))) check_singular_grid(grid, spec.truncation_eps);
    const std::size_t n = cfg.at("paths").get<std::size_t>();
    const SeedStream seed(seed_of(cfg));
    std::vector<double> qv(n);
    // paths are generated and reduced one at a time: fine meshes never hold the whole ensemble
    parallel_for(n, ctx.threads,
                 [&](std::size_t i) { qv[i] = quadratic_variation(generate_path(spec, seed, i, grid)).terminal(); });
    write_manifest(ctx, cfg);

    io::CsvTable table({"path_id", "qv_terminal"});
    for (std::size_t i = 0; i < n; ++i) table.row(i, qv[i]);
    write(ctx, "qv.csv", table.str());

    json report{{"n_paths", n}, {"n_steps", grid.n_steps()}, {"qv_mean", estimate_json(mean_estimate(qv))}};
    std::optional<double> oracle;
    const auto& model = cfg.at("model");
    if (model.at("name") == "brownian") oracle = 1.0;
    if (model.at("name") == "diffusion") oracle = num(model, "sigma") * num(model, "sigma");
    if (model.at("name") == "gaussian_m") oracle = m_variance(0.0, 1.0 - spec.truncation_eps);
    if (oracle) {
        const double lo = 0.98 * *oracle, hi = 1.02 * *oracle;
        const auto inside = std::count_if(qv.begin(), qv.end(), [&](double q) { return q >= lo && q <= hi; });
        report["oracle"] = *oracle;
        report["fraction_within_2pct"] = static_cast<double>(inside) / static_cast<double>(n);
    }
    if (cfg.contains("refine") && !cfg.at("refine").empty()) {
        const auto levels = cfg.at("refine").get<std::vector<unsigned>>();
        const auto rows = refine_and_compare_qv(RefinableRealisation(spec, seed_of(cfg), 0), levels);
        io::CsvTable t({"n_steps", "qv_terminal", "change"});
        for (const auto& r : rows) t.row(r.n_steps, r.qv_terminal, r.change);
        write(ctx, "qv_refinement.csv", t.str());
    }
    write(ctx, "qv_report.json", io::dump(report));
}

void run_wealth(const json& cfg, const Context& ctx)
{
    const auto strategies = strategies_in(cfg, "strategy");
    if (strategies.size() != 1) throw ConfigError("wealth: exactly one strategy required (--strategy FILE)");
    const SimpleStrategy& s = strategies.front();
    const bool counterexample = cfg.contains("model") && cfg.at("model").at("name") == "counterexample";
    std::vector<WealthPath> wealth;
    std::vector<double> dd;
    if (cfg.contains("ensemble")) {
        const std::string file = cfg.at("ensemble");
        const Ensemble e = io::ensemble_from_json(io::parse_json(io::read_file(file), file));
        wealth.resize(e.size());
        std::vector<double> residual(e.size());
        bool jumps = false;
        for (const auto& p : e.paths) jumps = jumps || !p.continuous();
        // paths with jumps carry no insider information here: strategies read S and [S] only
        parallel_for(e.size(), ctx.threads, [&](std::size_t i) {
            const QVPath q = quadratic_variation(e.paths[i]);
            const StepFunction pi = s.evaluate(e.paths[i], q);
            wealth[i] = stoch_exp_jumps(pi, e.paths[i], continuous_quadratic_variation(e.paths[i]));
            residual[i] = dd_residual(pi, e.paths[i], wealth[i]);
        });
        if (!jumps) dd = std::move(residual);
    } else if (counterexample) {
        json bcfg = cfg;
        bcfg["bundles"] = cfg.at("paths");
        const double eps = num(cfg.at("model"), "eps");
        const auto bundles = make_bundles(bcfg, eps, ctx.threads);
        wealth.resize(bundles.size());
        parallel_for(bundles.size(), ctx.threads,
                     [&](std::size_t i) { wealth[i] = bundle_wealth(s, bundles[i]).wealth; });
    } else {
        const Ensemble e = make_ensemble(cfg, ctx.threads);
        wealth.resize(e.size());
        dd.resize(e.size());
        parallel_for(e.size(), ctx.threads, [&](std::size_t i) {
            const QVPath q = quadratic_variation(e.paths[i]);
            const StepFunction pi = s.evaluate(e.paths[i], q);
            wealth[i] = stoch_exp_continuous(pi, e.paths[i], q);
            dd[i] = dd_residual(pi, e.paths[i], wealth[i]);
        });
    }
    write_manifest(ctx, cfg);
    io::CsvTable table({"path_id", "W1", "hit_nonpositive"});
    for (std::size_t i = 0; i < wealth.size(); ++i) table.row(i, wealth[i].terminal(), wealth[i].hit_nonpositive);
    write(ctx, "wealth.csv", table.str());
    json report = utility_json(log_utility(wealth));
    report["strategy"] = s.id();
    if (!dd.empty()) report["median_dd_residual"] = median(dd);
    write(ctx, "utility_report.json", io::dump(report));
}

BinSpec bins_of(const json& cfg)
{
    return {cfg.at("bins").get<std::size_t>(), cfg.at("state_bins").get<std::size_t>(),
            cfg.at("min_count").get<std::size_t>()};
}

void run_decompose(const json& cfg, const Context& ctx)
{
    const Ensemble e = make_ensemble(cfg, ctx.threads);
    const auto qvs = quadratic_variations(e);
    const DriftEstimate alpha = estimate_alpha(e, qvs, bins_of(cfg));
    const DecompositionResult result = decompose(e, qvs, alpha);
    const double level = choose_truncation_level(e, qvs);
    auto tests = strategies_in(cfg, "tests");
    if (tests.empty()) tests = recipes::martingale_tests(level);
    const auto diag = martingale_residual(result, e, qvs, tests, level);
    // raw S read as its own martingale part (alpha = 0): drift should be detected
    const DecompositionResult raw = decompose(e, qvs, DriftEstimate::constant(e.grid(), 0.0));
    const SimpleStrategy one = constant_strategy(1.0, "const(1)");
    const auto control = martingale_residual(raw, e, qvs, std::span(&one, 1), level);
    write_manifest(ctx, cfg);

    const auto oracle = oracle_alpha(cfg.at("model"));
    const bool state = cfg.at("state_bins").get<std::size_t>() > 0;
    io::CsvTable table = state ? io::CsvTable({"bin_start", "bin_end", "s_low", "s_high", "alpha", "stderr", "count"})
                               : io::CsvTable({"bin_start", "bin_end", "alpha", "stderr", "count"});
    json bins = json::array();
    bool all_within = true;
    for (const auto& b : alpha.bins()) {
        const double a = b.has_estimate ? b.alpha : std::nan("");
        if (state)
            table.row(b.t_start, b.t_end, b.s_low, b.s_high, a, b.std_error, b.count);
        else
            table.row(b.t_start, b.t_end, a, b.std_error, b.count);
        json row{{"bin_start", b.t_start}, {"bin_end", b.t_end}, {"alpha", io::number(a)},
                 {"stderr", b.std_error},  {"count", b.count}};
        if (oracle && b.has_estimate) {
            const double z = (b.alpha - *oracle) / b.std_error;
            row["z"] = io::number(z);
            all_within = all_within && std::abs(z) <= 3.0;
        }
        bins.push_back(row);
    }
    write(ctx, "alpha.csv", table.str());

    json d = json::array();
    for (const auto& x : diag)
        d.push_back({{"strategy", x.strategy_id}, {"lambda", estimate_json(x.lambda)}, {"z", io::number(x.z)},
                     {"pass", x.pass}});
    const bool all_pass = std::all_of(diag.begin(), diag.end(), [](const auto& x) { return x.pass; });
    json diagnostics{{"tests", d},
                     {"all_pass", all_pass},
                     {"truncation_level", level},
                     {"negative_control",
                      {{"strategy", control[0].strategy_id},
                       {"lambda", estimate_json(control[0].lambda)},
                       {"z", io::number(control[0].z)},
                       {"detected", !control[0].pass}}}};
    write(ctx, "diagnostics.json", io::dump(diagnostics));

    std::vector<std::size_t> idx;
    for (std::size_t k = 1; k <= 4; ++k) idx.push_back(k * e.grid().n_steps() / 4);
    json moments = json::array();
    const auto m2 = s_hat_second_moments(result, idx);
    for (std::size_t k = 0; k < idx.size(); ++k)
        moments.push_back({{"t", e.grid()[idx[k]]}, {"second_moment", estimate_json(m2[k])}});
    json report{{"coverage", result.coverage},
                {"reconstruction_error", result.reconstruction_error},
                {"bins", bins},
                {"s_hat_second_moments", moments}};
    if (oracle) {
        report["oracle_alpha"] = *oracle;
        report["all_bins_within_3se"] = all_within;
    }
    write(ctx, "decomposition_report.json", io::dump(report));
}

void run_optimize(const json& cfg, const Context& ctx)
{
    const Ensemble e = make_ensemble(cfg, ctx.threads);
    const auto qvs = quadratic_variations(e);
    const DriftEstimate alpha = estimate_alpha(e, qvs, bins_of(cfg));
    const GrowthOptimal g = growth_optimal_value(alpha, e, qvs);
    auto family = strategies_in(cfg, "strategies");
    if (family.empty()) family = recipes::optimality_family();
    write_manifest(ctx, cfg);

    json gaps = json::array();
    io::CsvTable table({"strategy_id", "gap", "stderr", "pass"});
    bool all_pass = true;
    for (const auto& s : family) {
        const Estimate gap = optimality_gap(s, alpha, e, qvs);
        const bool pass = gap.value <= 3.0 * gap.std_error;
        all_pass = all_pass && pass;
        gaps.push_back({{"strategy", s.id()}, {"gap", estimate_json(gap)}, {"pass", pass}});
        table.row(s.id(), gap.value, gap.std_error, pass);
    }
    write(ctx, "gaps.csv", table.str());
    json report{{"value", g.value},
                {"stderr", g.std_error},
                {"path_stderr", g.path_std_error},
                {"direct", utility_json(g.direct)},
                {"gaps", gaps},
                {"all_gaps_nonpositive", all_pass}};
    if (const auto a = oracle_alpha(cfg.at("model"))) {
        const double s = num(cfg.at("model"), "sigma");
        const double oracle = 0.5 * *a * *a * s * s;
        report["oracle"] = oracle;
        report["z"] = io::number((g.value - oracle) / g.std_error);
    }
    write(ctx, "growth_optimal.json", io::dump(report));
}

BetaRule beta_by_name(const std::string& name)
{
    if (name == "plus") return betas::plus_one();
    if (name == "minus") return betas::minus_one();
    if (name == "switch") return betas::switch_at(0.5);
    if (name == "sign_prefix") return betas::sign_of_prefix();
    if (name == "informed") return betas::informed();
    throw ConfigError("unknown beta '" + name + "'");
}

void run_poisson_lemma(const json& cfg, const Context& ctx)
{
    const double eps = num(cfg.at("model"), "eps");
    const auto r = poisson_lemma_test(seed_of(cfg), cfg.at("samples").get<std::size_t>(),
                                      beta_by_name(cfg.at("beta").get<std::string>()),
                                      io::grid_from_json(cfg.at("grid")), eps, num(cfg.at("model"), "rate"),
                                      ctx.threads);
    write_manifest(ctx, cfg);
    auto fit = [](const PoissonFit& f) {
        return json{{"observed", f.observed}, {"expected", f.expected}, {"statistic", f.statistic},
                    {"p_value", f.p_value}};
    };
    json report{{"beta", r.beta_id},
                {"n_samples", r.n_samples},
                {"fit_plus", fit(r.fit_plus)},
                {"fit_minus", fit(r.fit_minus)},
                {"common_jump_times", r.common_jump_times},
                {"reconstruction_failures", r.reconstruction_failures},
                {"correlation", r.correlation},
                {"correlation_bound", r.correlation_bound},
                {"minus_exactly_one", binomial_json(r.minus_exactly_one)},
                {"minus_exactly_one_target", r.minus_exactly_one_target},
                {"pass", r.passes()}};
    write(ctx, "poisson_lemma.json", io::dump(report));
}

void run_band(const json& cfg, const Context& ctx)
{
    const double eps = num(cfg.at("model"), "eps");
    auto family = strategies_in(cfg, "strategies");
    if (family.empty())
        family = {recipes::late_band(0.9, 1.5), recipes::band(0.5), recipes::band(-0.9),
                  constant_strategy(0.0, "const(0)")};
    const auto bundles = make_bundles(cfg, eps, ctx.threads);
    write_manifest(ctx, cfg);
    json rows = json::array();
    io::CsvTable table({"strategy_id", "admissible", "violation_measure", "p_nonpositive", "lower", "upper"});
    for (const auto& s : family) {
        const BandOutcome o = band_dichotomy(s, bundles, ctx.threads);
        rows.push_back({{"strategy", o.strategy_id},
                        {"admissible", o.admissible},
                        {"violation_measure", o.violation_measure},
                        {"nonpositive", binomial_json(o.nonpositive)},
                        {"consistent", o.admissible ? o.nonpositive_paths == 0 : o.nonpositive.lower > 0.0}});
        table.row(o.strategy_id, o.admissible, o.violation_measure, o.nonpositive.p_hat, o.nonpositive.lower,
                  o.nonpositive.upper);
    }
    write(ctx, "band.csv", table.str());
    write(ctx, "band.json", io::dump(json{{"strategies", rows}}));
}

void run_sweep(const json& cfg, const Context& ctx)
{
    auto eps_list = cfg.at("eps_list").get<std::vector<double>>();
    std::sort(eps_list.begin(), eps_list.end(), std::greater<>());
    auto family = strategies_in(cfg, "strategies");
    if (family.empty()) family = default_sweep_family();
    const auto bundles = make_bundles(cfg, eps_list.back(), ctx.threads);
    write_manifest(ctx, cfg);

    json levels = json::array();
    io::CsvTable table({"eps", "strategy_id", "estimate", "stderr", "running_max", "d_hat", "d_stderr"});
    std::vector<SweepReport> reports;
    bool d_ok = true;
    for (double eps : eps_list) {
        const SweepReport r = utility_sweep(family, bundles, eps, "bands, informed switchers, two-leg hits",
                                            ctx.threads);
        json entries = json::array();
        for (std::size_t k = 0; k < family.size(); ++k) {
            const auto& en = r.entries[k];
            const PropositionTerms t = proposition_terms(family[k], bundles, eps, ctx.threads);
            d_ok = d_ok && t.d_nonpositive;
            entries.push_back({{"strategy", en.strategy_id},
                               {"utility", utility_json(en.utility)},
                               {"running_max", io::number(en.running_max)},
                               {"c_hat", estimate_json(t.c)},
                               {"d_hat", estimate_json(t.d)},
                               {"supermartingale", estimate_json(t.supermartingale)},
                               {"d_nonpositive", t.d_nonpositive},
                               {"supermartingale_bounded", t.supermartingale_bounded}});
            table.row(eps, en.strategy_id, en.utility.estimate, en.utility.std_error, en.running_max, t.d.value,
                      t.d.std_error);
        }
        levels.push_back({{"eps", eps},
                          {"family", r.family_description},
                          {"entries", entries},
                          {"max", io::number(r.max)},
                          {"max_stderr", r.max_std_error},
                          {"argmax", r.argmax},
                          {"n_infinite", r.n_infinite},
                          {"c_hat", io::number(r.c_hat)}});
        reports.push_back(r);
    }
    bool stable = true;
    json steps = json::array();
    for (std::size_t k = 1; k < reports.size(); ++k) {
        const double diff = reports[k].max - reports[k - 1].max;
        const double tol = 3.0 * std::hypot(reports[k].max_std_error, reports[k - 1].max_std_error);
        const bool ok = std::abs(diff) <= tol;
        stable = stable && ok;
        steps.push_back({{"from_eps", reports[k - 1].eps}, {"to_eps", reports[k].eps}, {"difference", diff},
                         {"tolerance", tol}, {"stable", ok}});
    }
    const bool finite = std::all_of(reports.begin(), reports.end(), [](const auto& r) { return r.n_infinite == 0; });
    write(ctx, "sweep.csv", table.str());
    write(ctx, "sweep.json", io::dump(json{{"levels", levels},
                                           {"family_size", family.size()},
                                           {"stability", steps},
                                           {"all_finite", finite},
                                           {"max_stable", stable},
                                           {"d_nonpositive", d_ok}}));
}

void run_divergence(const json& cfg, const Context& ctx)
{
    auto eps_list = cfg.at("eps_list").get<std::vector<double>>();
    const double smallest = *std::min_element(eps_list.begin(), eps_list.end());
    const auto bundles = make_bundles(cfg, smallest, ctx.threads);
    const DivergenceTable t = drift_variation_divergence(bundles, eps_list, ctx.threads);
    write_manifest(ctx, cfg);
    io::CsvTable table({"eps", "mc_tv", "closed_form", "stderr"});
    json rows = json::array();
    for (const auto& r : t.rows) {
        table.row(r.eps, r.mc_tv.value, r.closed_form, r.mc_tv.std_error);
        rows.push_back({{"eps", r.eps}, {"mc_tv", estimate_json(r.mc_tv)}, {"closed_form", r.closed_form},
                        {"z", io::number(r.z)}, {"matches", r.matches}});
    }
    write(ctx, "divergence.csv", table.str());
    write(ctx, "divergence.json", io::dump(json{{"rows", rows},
                                                {"strictly_increasing", t.strictly_increasing},
                                                {"worst_ratio_deviation", t.worst_ratio_deviation}}));
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

std::optional<json> load(const fs::path& p)
{
    if (!fs::exists(p)) return std::nullopt;
    return io::parse_json(io::read_file(p), p.string());
}

json criterion(const std::string& module, const std::string& name, bool pass, json detail)
{
    return {{"module", module}, {"criterion", name}, {"pass", pass}, {"detail", std::move(detail)}};
}

void summarise_run(const fs::path& dir, const json& manifest, json& criteria, json& tables)
{
    const json& cfg = manifest.at("config");
    const std::string cmd = cfg.at("command");
    const std::string action = cfg.value("action", "");
    if (cmd == "qv") {
        const auto r = load(dir / "qv_report.json");
        if (r && r->contains("fraction_within_2pct")) {
            const double f = r->at("fraction_within_2pct");
            criteria.push_back(criterion("path_core", "QV within 2% of oracle for >= 95% of paths", f >= 0.95,
                                         {{"fraction", f}, {"run", dir.string()}}));
        }
    } else if (cmd == "decompose") {
        const auto rep = load(dir / "decomposition_report.json");
        const auto diag = load(dir / "diagnostics.json");
        if (rep) {
            json rows = json::array();
            for (const auto& b : rep->at("bins"))
                rows.push_back({{"bin", b.at("bin_start")}, {"alpha", b.at("alpha")},
                                {"oracle", rep->value("oracle_alpha", json())}, {"z", b.value("z", json())}});
            tables.push_back({{"run", dir.string()}, {"kind", "alpha"}, {"rows", rows}});
            if (rep->contains("all_bins_within_3se"))
                criteria.push_back(criterion("inference", "every alpha bin within 3 stderr of the oracle",
                                             rep->at("all_bins_within_3se"), {{"run", dir.string()}}));
        }
        if (diag) {
            criteria.push_back(criterion("inference", "martingale diagnostics on S_hat: all |z| <= 3",
                                         diag->at("all_pass"), {{"run", dir.string()}}));
            criteria.push_back(criterion("inference", "negative control on raw S: |z| > 3",
                                         diag->at("negative_control").at("detected"), {{"run", dir.string()}}));
        }
    } else if (cmd == "optimize") {
        if (const auto r = load(dir / "growth_optimal.json")) {
            if (r->contains("z")) {
                const double z = io::to_double(r->at("z"));
                criteria.push_back(criterion("inference", "growth-optimal value within 3 stderr of oracle",
                                             std::abs(z) <= 3.0, {{"value", r->at("value")}, {"z", z}}));
            }
            criteria.push_back(
                criterion("inference", "optimality gaps <= +3 stderr", r->at("all_gaps_nonpositive"), {}));
        }
    } else if (cmd == "counterexample" && action == "poisson-lemma") {
        if (const auto r = load(dir / "poisson_lemma.json"))
            criteria.push_back(criterion("counterexample", "difference-of-Poissons statistics (beta = " +
                                                               r->at("beta").get<std::string>() + ")",
                                         r->at("pass"), {{"correlation", r->at("correlation")}}));
    } else if (cmd == "counterexample" && action == "band") {
        if (const auto r = load(dir / "band.json")) {
            bool ok = true;
            for (const auto& s : r->at("strategies")) ok = ok && s.at("consistent").get<bool>();
            criteria.push_back(criterion("counterexample", "band dichotomy", ok, {}));
        }
    } else if (cmd == "counterexample" && action == "sweep") {
        if (const auto r = load(dir / "sweep.json"))
            criteria.push_back(criterion("counterexample", "utility sweep finite, stable across eps, D <= 0",
                                         r->at("all_finite").get<bool>() && r->at("max_stable").get<bool>() &&
                                             r->at("d_nonpositive").get<bool>(),
                                         {{"family_size", r->at("family_size")}}));
    } else if (cmd == "counterexample" && action == "divergence") {
        if (const auto r = load(dir / "divergence.json")) {
            bool ok = r->at("strictly_increasing");
            for (const auto& row : r->at("rows")) ok = ok && row.at("matches").get<bool>();
            criteria.push_back(criterion("counterexample", "drift variation matches closed form", ok,
                                         {{"rows", r->at("rows")}}));
        }
    }
}

void run_report(const std::vector<std::string>& dirs, const Context& ctx)
{
    json runs = json::array(), criteria = json::array(), tables = json::array(), skipped = json::array();
    for (const auto& d : dirs) {
        const auto manifest = load(fs::path(d) / "manifest.json");
        if (!manifest) {
            std::cerr << "warning: " << d << ": no manifest.json, skipped\n";
            skipped.push_back(d);
            continue;
        }
        runs.push_back({{"dir", d}, {"command", manifest->at("config").at("command")}});
        summarise_run(d, *manifest, criteria, tables);
    }
    // grouped by module, stable within a module
    std::vector<json> sorted(criteria.begin(), criteria.end());
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const json& a, const json& b) { return a.at("module") < b.at("module"); });
    json summary{{"runs", runs}, {"criteria", sorted}, {"tables", tables}, {"skipped", skipped}};
    std::ostringstream txt;
    std::string module;
    for (const auto& c : sorted) {
        if (c.at("module") != module) {
            module = c.at("module");
            txt << "[" << module << "]\n";
        }
        txt << "  " << (c.at("pass").get<bool>() ? "PASS" : "FAIL") << "  " << c.at("criterion").get<std::string>()
            << "\n";
    }
    for (const auto& t : tables) {
        txt << "table " << t.at("kind").get<std::string>() << " (" << t.at("run").get<std::string>() << ")\n";
        txt << "  bin,alpha,oracle,z\n";
        for (const auto& r : t.at("rows"))
            txt << "  " << r.at("bin").dump() << "," << r.at("alpha").dump() << "," << r.at("oracle").dump() << ","
                << r.at("z").dump() << "\n";
    }
    write(ctx, "summary.json", io::dump(summary));
    write(ctx, "summary.txt", txt.str());
}

void dispatch(const json& cfg, const Context& ctx)
{
    const std::string cmd = cfg.at("command");
    if (cmd == "simulate") return run_simulate(cfg, ctx);
    if (cmd == "qv") return run_qv(cfg, ctx);
    if (cmd == "wealth") return run_wealth(cfg, ctx);
    if (cmd == "decompose") return run_decompose(cfg, ctx);
    if (cmd == "optimize") return run_optimize(cfg, ctx);
    if (cmd == "counterexample") {
        const std::string action = cfg.at("action");
        if (action == "poisson-lemma") return run_poisson_lemma(cfg, ctx);
        if (action == "band") return run_band(cfg, ctx);
        if (action == "sweep") return run_sweep(cfg, ctx);
        if (action == "divergence") return run_divergence(cfg, ctx);
        throw ConfigError("unknown counterexample action '" + action + "'");
    }
    throw ConfigError("manifest names unknown command '" + cmd + "'");
}

// ---------------------------------------------------------------------------
// Option plumbing
// ---------------------------------------------------------------------------

struct ModelOptions {
    std::string model = "brownian";
    double mu = 0.1, sigma = 0.2, eps = 1e-3, rate = 1.0;
    std::size_t paths = 1000, steps = 1024, early_steps = 64;
    double steps_per_v = 64.0;

    void attach(CLI::App* app, bool with_model = true)
    {
        if (with_model)
            app->add_option("--model", model, "brownian | diffusion | gaussian_m | counterexample")
                ->check(CLI::IsMember({"brownian", "diffusion", "gaussian_m", "counterexample"}));
        app->add_option("--mu", mu, "drift of the diffusion model");
        app->add_option("--sigma", sigma, "volatility of the diffusion model");
        app->add_option("--eps", eps, "truncation 1 - eps for the singular models");
        app->add_option("--rate", rate, "Poisson rate of the counterexample");
        app->add_option("--paths", paths, "number of paths");
        app->add_option("--steps", steps, "uniform grid steps (regular models)");
        app->add_option("--early-steps", early_steps, "cells on [0, 1/2] for singular grids");
        app->add_option("--steps-per-v", steps_per_v, "cells per unit of -log(1-t) on singular grids");
    }

    json model_json() const
    {
        json m{{"name", model}};
        if (model == "diffusion") {
            m["mu"] = mu;
            m["sigma"] = sigma;
        }
        if (model == "gaussian_m" || model == "counterexample") m["eps"] = eps;
        if (model == "counterexample") m["rate"] = rate;
        return m;
    }

    json grid_json(std::vector<double> truncations = {}) const
    {
        if (model == "gaussian_m" || model == "counterexample") {
            if (truncations.empty()) truncations = {eps};
            if (std::find(truncations.begin(), truncations.end(), 0.1) == truncations.end() &&
                *std::min_element(truncations.begin(), truncations.end()) < 0.1)
                truncations.push_back(0.1);
            std::sort(truncations.begin(), truncations.end(), std::greater<>());
            return {{"kind", "singular"}, {"early_steps", early_steps}, {"steps_per_v", steps_per_v},
                    {"truncations", truncations}};
        }
        return {{"kind", "uniform"}, {"steps", steps}};
    }
};

json load_strategies(const std::string& file)
{
    if (file.empty()) return nullptr;
    const json j = io::parse_json(io::read_file(file), file);
    io::strategies_from_json(j);  // validate now so a bad file is a usage error
    return j;
}

void fail(const std::string& kind, const std::string& message, const std::optional<fs::path>& out)
{
    const json err{{"error", kind}, {"message", message}};
    std::cerr << err.dump() << "\n";
    if (out && fs::is_directory(*out)) {
        try {
            io::atomic_write(*out / "error.json", io::dump(err));
        } catch (const std::exception&) {
        }
    }
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"qvmart: quadratic-variation martingale toolkit"};
    app.require_subcommand(1);
    std::uint64_t seed = 1;
    std::string out_dir = ".";
    std::string format = "csv";
    std::optional<unsigned> threads;
    app.add_option("--seed", seed, "master seed")->capture_default_str();
    app.add_option("--out", out_dir, "output directory")->capture_default_str();
    app.add_option("--format", format, "csv | json")->check(CLI::IsMember({"csv", "json"}));
    app.add_option("--threads", threads, "worker threads (QVMART_THREADS otherwise)");
    app.fallthrough();

    ModelOptions mo;
    std::string strategy_file, tests_file, ensemble_path;
    std::vector<unsigned> refine;
    std::size_t bins = 32, state_bins = 0, min_count = 50, samples = 10000, bundles = 10000;
    std::string beta = "sign_prefix";
    std::vector<double> eps_list;
    std::vector<std::string> report_dirs;
    std::string manifest_file;

    auto* sim = app.add_subcommand("simulate", "simulate an ensemble of paths");
    mo.attach(sim);
    auto* qv = app.add_subcommand("qv", "terminal quadratic variation per path");
    mo.attach(qv);
    qv->add_option("--refine", refine, "dyadic levels for a refinement table of path 0")->delimiter(',');
    auto* wealth = app.add_subcommand("wealth", "stochastic-exponential wealth and log-utility");
    mo.attach(wealth);
    wealth->add_option("--strategy", strategy_file, "strategy JSON file")->required()->check(CLI::ExistingFile);
    wealth->add_option("--ensemble", ensemble_path, "ensemble.json (or its run directory) from simulate --format json")
        ->check(CLI::ExistingPath);
    auto* dec = app.add_subcommand("decompose", "estimate alpha and test the martingale part");
    mo.attach(dec);
    dec->add_option("--bins", bins, "time bins");
    dec->add_option("--state-bins", state_bins, "quantile bins of S per time bin (0 = none)");
    dec->add_option("--min-count", min_count, "samples needed for a bin estimate");
    dec->add_option("--tests", tests_file, "test strategies JSON")->check(CLI::ExistingFile);
    auto* opt = app.add_subcommand("optimize", "growth-optimal value and optimality gaps");
    mo.attach(opt);
    opt->add_option("--bins", bins, "time bins");
    opt->add_option("--state-bins", state_bins, "quantile bins of S per time bin (0 = none)");
    opt->add_option("--min-count", min_count, "samples needed for a bin estimate");
    opt->add_option("--strategies", strategy_file, "strategies JSON")->check(CLI::ExistingFile);

    auto* ce = app.add_subcommand("counterexample", "insider jump counterexample checks");
    ce->require_subcommand(1);
    auto* pl = ce->add_subcommand("poisson-lemma", "difference-of-Poissons statistics");
    mo.attach(pl, false);
    pl->add_option("--samples", samples, "replications");
    pl->add_option("--beta", beta, "plus | minus | switch | sign_prefix | informed")
        ->check(CLI::IsMember({"plus", "minus", "switch", "sign_prefix", "informed"}));
    auto* band = ce->add_subcommand("band", "admissibility band dichotomy");
    mo.attach(band, false);
    band->add_option("--bundles", bundles, "bundles");
    band->add_option("--strategies", strategy_file, "strategies JSON")->check(CLI::ExistingFile);
    auto* sweep = ce->add_subcommand("sweep", "log-utility sweep over admissible G-strategies");
    mo.attach(sweep, false);
    sweep->add_option("--bundles", bundles, "bundles");
    sweep->add_option("--eps-list", eps_list, "truncations, comma separated")->delimiter(',');
    sweep->add_option("--strategies", strategy_file, "strategies JSON")->check(CLI::ExistingFile);
    auto* div = ce->add_subcommand("divergence", "insider drift variation against its closed form");
    mo.attach(div, false);
    div->add_option("--bundles", bundles, "bundles");
    div->add_option("--eps-list", eps_list, "truncations, comma separated")->delimiter(',');

    auto* rep = app.add_subcommand("report", "consolidate run directories");
    rep->add_option("dirs", report_dirs, "run directories");
    auto* replay = app.add_subcommand("replay", "re-run a manifest");
    replay->add_option("--manifest", manifest_file, "manifest.json of an earlier run")
        ->required()
        ->check(CLI::ExistingFile);

    std::optional<fs::path> out;
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        fail("usage", e.what(), std::nullopt);
        return 2;
    }

    try {
        out = fs::path(out_dir);
        fs::create_directories(*out);
        Context ctx{*out, threads ? *threads : default_thread_count()};
        if (*rep) {
            run_report(report_dirs, ctx);
            return 0;
        }
        json cfg;
        if (*replay) {
            const json m = io::parse_json(io::read_file(manifest_file), manifest_file);
            if (!m.contains("config")) throw ConfigError("manifest without config");
            cfg = m.at("config");
        } else {
            cfg["seed"] = seed;
            cfg["format"] = format;
            auto* sub = app.get_subcommands().front();
            cfg["command"] = sub->get_name();
            if (sub == ce) {
                auto* action = ce->get_subcommands().front();
                cfg["action"] = action->get_name();
                mo.model = "counterexample";
                cfg["model"] = mo.model_json();
                if (action == pl) {
                    cfg["samples"] = samples;
                    cfg["beta"] = beta;
                    cfg["grid"] = mo.grid_json();
                } else if (action == band) {
                    cfg["bundles"] = bundles;
                    cfg["strategies"] = load_strategies(strategy_file);
                    cfg["grid"] = mo.grid_json();
                } else if (action == sweep) {
                    if (eps_list.empty()) eps_list = {0.1, 0.01, 0.001};
                    for (double e : eps_list)
                        if (!(e > 0.0 && e < 0.5)) throw ConfigError("sweep: eps must lie in (0, 1/2)");
                    cfg["bundles"] = bundles;
                    cfg["eps_list"] = eps_list;
                    cfg["strategies"] = load_strategies(strategy_file);
                    cfg["grid"] = mo.grid_json(eps_list);
                    cfg["model"]["eps"] = *std::min_element(eps_list.begin(), eps_list.end());
                } else {
                    if (eps_list.empty()) eps_list = {0.5, 0.1, 0.01, 0.001, 0.0001};
                    for (double e : eps_list)
                        if (!(e > 0.0 && e <= 0.5)) throw ConfigError("divergence: eps must lie in (0, 1/2]");
                    // the drift quadrature needs a fine v-mesh near t = 1/2, where sigma switches on
                    if (div->count("--steps-per-v") == 0) mo.steps_per_v = 512.0;
                    std::vector<double> truncations;
                    for (double e : eps_list)
                        if (e < 0.5) truncations.push_back(e);
                    if (truncations.empty()) truncations = {0.5};
                    cfg["bundles"] = bundles;
                    cfg["eps_list"] = eps_list;
                    cfg["grid"] = mo.grid_json(truncations);
                    cfg["model"]["eps"] = *std::min_element(eps_list.begin(), eps_list.end());
                }
            } else {
                cfg["model"] = mo.model_json();
                cfg["grid"] = mo.grid_json();
                cfg["paths"] = mo.paths;
                if (sub == wealth && !ensemble_path.empty()) {
                    fs::path file = fs::absolute(ensemble_path);
                    if (fs::is_directory(file)) file /= "ensemble.json";
                    cfg = {{"seed", seed}, {"format", format}, {"command", "wealth"}, {"ensemble", file.string()}};
                } else {
                    io::model_from_json(cfg["model"]).validate(io::grid_from_json(cfg["grid"]));
                }
                if (sub == qv) cfg["refine"] = refine;
                if (sub == wealth) cfg["strategy"] = load_strategies(strategy_file);
                if (sub == dec || sub == opt) {
                    cfg["bins"] = bins;
                    cfg["state_bins"] = state_bins;
                    cfg["min_count"] = min_count;
                }
                if (sub == dec) cfg["tests"] = load_strategies(tests_file);
                if (sub == opt) cfg["strategies"] = load_strategies(strategy_file);
            }
        }
        dispatch(cfg, ctx);
        return 0;
    } catch (const ConfigError& e) {
        fail("config", e.what(), out);
        return 2;
    } catch (const ContractError& e) {
        fail("contract", e.what(), out);
        return 1;
    } catch (const DomainError& e) {
        fail("domain", e.what(), out);
        return 1;
    } catch (const std::exception& e) {
        fail("runtime", e.what(), out);
        return 1;
    }
}
