// Acceptance suite: one PASS/FAIL line per criterion. Runs the qvmart CLI for
// the pipeline criteria and the library directly for the Riesz identity.
// Seeds are fixed (criterion k uses 1000 + k); tolerances are pinned below.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qvmart/qvmart.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace qvmart;

namespace {

fs::path work;

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Run {
    int exit_code = -1;
    double seconds = 0.0;
};

Run cli(const std::string& args)
{
    const std::string cmd = std::string(QVMART_CLI_PATH) + " " + args + " > /dev/null 2>> " + (work / "stderr.log").string();
    const auto t0 = std::chrono::steady_clock::now();
    const int rc = std::system(cmd.c_str());
    const auto t1 = std::chrono::steady_clock::now();
    return {WIFEXITED(rc) ? WEXITSTATUS(rc) : -1, std::chrono::duration<double>(t1 - t0).count()};
}

json load(const fs::path& p) { return json::parse(io::read_file(p)); }

double as_double(const json& j) { return io::to_double(j); }

std::string fmt(double x, int precision = 4)
{
    std::ostringstream s;
    s.precision(precision);
    s << x;
    return s.str();
}

std::string dir(int k, const std::string& name = "") { return (work / ("c" + std::to_string(k) + name)).string(); }

std::string seed(int k) { return "--seed " + std::to_string(1000 + k); }

Outcome timed_failure(const Run& r)
{
    return {false, "qvmart exited with " + std::to_string(r.exit_code) + " (see " + (work / "stderr.log").string() + ")"};
}

// 1. QV consistency on 2^20-step Brownian paths.
Outcome qv_consistency()
{
    const Run r = cli(seed(1) + " --out " + dir(1) + " qv --model brownian --paths 1000 --steps 1048576");
    if (r.exit_code != 0) return timed_failure(r);
    const double f = as_double(load(fs::path(dir(1)) / "qv_report.json").at("fraction_within_2pct"));
    const bool ok = f >= 0.95 && r.seconds <= 120.0;
    return {ok, "fraction in [0.98, 1.02] = " + fmt(f) + " (>= 0.95), " + fmt(r.seconds, 3) + " s (<= 120)"};
}

// 2. Doleans-Dade residual shrinks by >= 2 from 2^10 to 2^14 steps.
Outcome dd_residual_shrinks()
{
    const fs::path strategy = work / "const1.json";
    io::atomic_write(strategy, R"j({"id": "const(1)", "bound": 1, "legs": [{"rule": "constant", "value": 1}]})j");
    double total = 0.0;
    double medians[2];
    const int steps[2] = {1024, 16384};
    for (int i = 0; i < 2; ++i) {
        const std::string out = dir(2, "_" + std::to_string(steps[i]));
        const Run r = cli(seed(2) + " --out " + out + " wealth --model brownian --paths 100 --steps " +
                          std::to_string(steps[i]) + " --strategy " + strategy.string());
        if (r.exit_code != 0) return timed_failure(r);
        total += r.seconds;
        medians[i] = as_double(load(fs::path(out) / "utility_report.json").at("median_dd_residual"));
    }
    const double ratio = medians[0] / medians[1];
    return {ratio >= 2.0 && total <= 60.0, "median residual " + fmt(medians[0]) + " -> " + fmt(medians[1]) +
                                               ", ratio " + fmt(ratio) + " (>= 2), " + fmt(total, 3) + " s (<= 60)"};
}

const std::string bs_model = "--model diffusion --mu 0.1 --sigma 0.2 --paths 100000 --steps 256 --bins 32";

// 3. Empirical decomposition on the Black-Scholes-type model.
Outcome decomposition()
{
    const Run r = cli(seed(3) + " --out " + dir(3) + " decompose " + bs_model);
    if (r.exit_code != 0) return timed_failure(r);
    const json rep = load(fs::path(dir(3)) / "decomposition_report.json");
    const json diag = load(fs::path(dir(3)) / "diagnostics.json");
    double worst_alpha = 0.0, worst_test = 0.0;
    for (const auto& b : rep.at("bins")) worst_alpha = std::max(worst_alpha, std::abs(as_double(b.at("z"))));
    for (const auto& t : diag.at("tests")) worst_test = std::max(worst_test, std::abs(as_double(t.at("z"))));
    const double control = as_double(diag.at("negative_control").at("z"));
    const std::size_t n_tests = diag.at("tests").size();
    const bool ok = rep.at("bins").size() == 32 && worst_alpha <= 3.0 && n_tests >= 5 && worst_test <= 3.0 &&
                    std::abs(control) > 3.0 && r.seconds <= 300.0;
    return {ok, "max |z| alpha bins " + fmt(worst_alpha) + " (<= 3), max |z| over " + std::to_string(n_tests) +
                    " tests " + fmt(worst_test) + " (<= 3), raw-S control z " + fmt(control) + " (|z| > 3), " +
                    fmt(r.seconds, 3) + " s (<= 300)"};
}

// 4. Growth-optimal value and optimality gaps.
Outcome growth_optimal()
{
    const Run r = cli(seed(4) + " --out " + dir(4) + " optimize " + bs_model);
    if (r.exit_code != 0) return timed_failure(r);
    const json g = load(fs::path(dir(4)) / "growth_optimal.json");
    const double value = as_double(g.at("value"));
    const double z = (value - 0.125) / as_double(g.at("stderr"));
    double worst_gap = -INFINITY;
    std::size_t n = 0;
    bool gaps_ok = true;
    for (const auto& x : g.at("gaps")) {
        const double v = as_double(x.at("gap").at("value")), se = as_double(x.at("gap").at("stderr"));
        gaps_ok = gaps_ok && v <= 3.0 * se;
        worst_gap = std::max(worst_gap, se > 0 ? v / se : (v > 0 ? INFINITY : 0.0));
        ++n;
    }
    const bool ok = std::abs(z) <= 3.0 && gaps_ok && n >= 12 && r.seconds <= 300.0;
    return {ok, "value " + fmt(value, 6) + " vs 0.125, z " + fmt(z) + " (|z| <= 3); " + std::to_string(n) +
                    " strategies, max gap/stderr " + fmt(worst_gap) + " (<= 3), " + fmt(r.seconds, 3) + " s (<= 300)"};
}

// 5. Riesz identity: exact for bin-measurable strategies, within 3 stderr otherwise.
Outcome riesz()
{
    const Ensemble e =
        generate_ensemble(ModelSpec{DriftedDiffusion::constant(0.1, 0.2)}, TimeGrid::uniform(256), 20000, 1005);
    const auto qvs = quadratic_variations(e);
    const DriftEstimate alpha = estimate_alpha(e, qvs, BinSpec{32, 0, 50});
    // piecewise constant on the 32 time bins: +1 / -1 alternating, plus constants
    std::vector<Leg> legs;
    for (int b = 0; b < 32; ++b)
        legs.push_back(Leg{b / 32.0, rules::constant(b % 2 ? -1.0 : 1.0), false, "const"});
    const std::vector<SimpleStrategy> exact{constant_strategy(1.0, "const(1)"), constant_strategy(2.5, "const(2.5)"),
                                            SimpleStrategy("alternating_bins", legs, 1.0)};
    const std::vector<SimpleStrategy> off{recipes::sign_after(0.5, 1.0), recipes::rebalanced_sign(1.0),
                                          recipes::band(1.0, "1-t")};
    double worst_gap = 0.0, worst_z = 0.0;
    for (const auto& s : exact) worst_gap = std::max(worst_gap, riesz_check(s, alpha, e, qvs).relative_gap);
    for (const auto& s : off) worst_z = std::max(worst_z, std::abs(riesz_check(s, alpha, e, qvs).difference.z()));
    return {worst_gap <= 1e-9 && worst_z <= 3.0, "bin-measurable max relative gap " + fmt(worst_gap, 3) +
                                                     " (<= 1e-9), off-bin max |z| " + fmt(worst_z) + " (<= 3)"};
}

// 6. Difference-of-Poissons statistics under a prefix-dependent beta.
Outcome poisson_lemma()
{
    const Run r = cli(seed(6) + " --out " + dir(6) + " counterexample poisson-lemma --samples 10000 --beta sign_prefix");
    if (r.exit_code != 0) return timed_failure(r);
    const json p = load(fs::path(dir(6)) / "poisson_lemma.json");
    const double pp = as_double(p.at("fit_plus").at("p_value")), pm = as_double(p.at("fit_minus").at("p_value"));
    const std::size_t common = p.at("common_jump_times");
    const double rho = as_double(p.at("correlation"));
    const double one = as_double(p.at("minus_exactly_one").at("p_hat"));
    const bool ok = pp > 0.01 && pm > 0.01 && common == 0 && std::abs(rho) <= 0.03 &&
                    std::abs(one - std::exp(-1.0)) <= 0.015 && r.seconds <= 120.0;
    return {ok, "chi2 p " + fmt(pp) + " / " + fmt(pm) + " (> 0.01), common times " + std::to_string(common) +
                    ", rho " + fmt(rho) + " (|rho| <= 0.03), P(N- = 1) " + fmt(one) + " (e^-1 +- 0.015), " +
                    fmt(r.seconds, 3) + " s (<= 120)"};
}

// 7. Admissibility band dichotomy.
Outcome band()
{
    const Run r = cli(seed(7) + " --out " + dir(7) + " counterexample band --bundles 10000");
    if (r.exit_code != 0) return timed_failure(r);
    const json b = load(fs::path(dir(7)) / "band.json");
    const double floor_p = 0.1 * std::exp(-0.1);
    bool violator_ok = false, admissible_ok = true;
    std::size_t n_admissible = 0;
    std::string violator;
    for (const auto& s : b.at("strategies")) {
        const json& np = s.at("nonpositive");
        if (s.at("admissible").get<bool>()) {
            ++n_admissible;
            admissible_ok = admissible_ok && np.at("successes").get<std::size_t>() == 0;
        } else if (s.at("strategy") == "late_band(0.9,1.5)") {
            const double p = as_double(np.at("p_hat")), se = as_double(np.at("stderr"));
            violator_ok = p >= floor_p - 3.0 * se;
            violator = "P[W1 <= 0] " + fmt(p) + " (>= " + fmt(floor_p - 3.0 * se) + ")";
        }
    }
    const bool ok = violator_ok && admissible_ok && n_admissible >= 1 && r.seconds <= 120.0;
    return {ok, violator + "; " + std::to_string(n_admissible) + " admissible strategies with zero ruined paths: " +
                    (admissible_ok ? "yes" : "no") + ", " + fmt(r.seconds, 3) + " s (<= 120)"};
}

// 8. Utility sweep over G-informed admissible strategies.
Outcome sweep()
{
    const Run r = cli(seed(8) + " --out " + dir(8) + " counterexample sweep --bundles 10000 --eps-list 0.1,0.01,0.001");
    if (r.exit_code != 0) return timed_failure(r);
    const json s = load(fs::path(dir(8)) / "sweep.json");
    const std::size_t n = s.at("family_size");
    std::string maxes;
    for (const auto& l : s.at("levels")) maxes += (maxes.empty() ? "" : ", ") + fmt(as_double(l.at("max")));
    const bool ok = n >= 25 && s.at("all_finite").get<bool>() && s.at("max_stable").get<bool>() &&
                    s.at("d_nonpositive").get<bool>() && r.seconds <= 600.0;
    return {ok, std::to_string(n) + " strategies, all finite " + s.at("all_finite").dump() + ", max per eps " + maxes +
                    " stable " + s.at("max_stable").dump() + ", D <= 3 stderr " + s.at("d_nonpositive").dump() + ", " +
                    fmt(r.seconds, 3) + " s (<= 600)"};
}

// 9. Divergence of the insider drift's total variation.
Outcome divergence()
{
    const Run r = cli(seed(9) + " --out " + dir(9) + " counterexample divergence --bundles 10000");
    if (r.exit_code != 0) return timed_failure(r);
    const json d = load(fs::path(dir(9)) / "divergence.json");
    double worst = 0.0;
    bool all = true;
    for (const auto& row : d.at("rows")) {
        worst = std::max(worst, std::abs(as_double(row.at("z"))));
        all = all && row.at("matches").get<bool>();
    }
    const bool inc = d.at("strictly_increasing");
    return {all && inc && r.seconds <= 300.0, std::to_string(d.at("rows").size()) + " eps levels, max |z| " + fmt(worst) +
                                                  " (<= 3), strictly increasing " + (inc ? "yes" : "no") + ", " +
                                                  fmt(r.seconds, 3) + " s (<= 300)"};
}

bool same_files(const fs::path& a, const fs::path& b, std::string& why)
{
    std::size_t n = 0;
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
        if (!entry.is_regular_file()) continue;
        const fs::path rel = fs::relative(entry.path(), a);
        if (!fs::exists(b / rel) || io::read_file(entry.path()) != io::read_file(b / rel)) {
            why = rel.string();
            return false;
        }
        ++n;
    }
    for (const auto& entry : fs::recursive_directory_iterator(b))
        if (entry.is_regular_file() && !fs::exists(a / fs::relative(entry.path(), b))) {
            why = fs::relative(entry.path(), b).string() + " only in replay";
            return false;
        }
    return n > 0;
}

// 10. Every command's manifest replays byte-exactly, at another thread count.
Outcome determinism()
{
    const std::string kelly = (fs::path(QVMART_SAMPLES_DIR) / "constant_kelly.json").string();
    const std::vector<std::string> runs{
        "simulate --model counterexample --eps 0.01 --paths 4 --early-steps 16 --steps-per-v 16",
        "qv --model gaussian_m --eps 0.01 --paths 50",
        "qv --model brownian --paths 20 --steps 4096 --refine 8,10,12",
        "wealth --model diffusion --paths 200 --steps 128 --strategy " + kelly,
        "decompose --model diffusion --paths 2000 --steps 64 --bins 8 --state-bins 2 --min-count 20",
        "optimize --model diffusion --paths 2000 --steps 64 --bins 8",
        "counterexample poisson-lemma --samples 500 --beta informed",
        "counterexample band --bundles 300",
        "counterexample sweep --bundles 200 --early-steps 16 --steps-per-v 16",
        "counterexample divergence --bundles 200 --eps-list 0.1,0.01"};
    std::size_t k = 0;
    for (const auto& args : runs) {
        const std::string a = dir(10, "_" + std::to_string(k) + "a"), b = dir(10, "_" + std::to_string(k) + "b");
        const Run r1 = cli(seed(10) + " --threads 1 --out " + a + " " + args);
        if (r1.exit_code != 0) return {false, "run failed: " + args};
        const Run r2 = cli("--threads 3 --out " + b + " replay --manifest " + a + "/manifest.json");
        if (r2.exit_code != 0) return {false, "replay failed: " + args};
        std::string why;
        if (!same_files(a, b, why)) return {false, "replay of '" + args + "' differs at " + why};
        ++k;
    }
    return {true, std::to_string(k) + " commands replayed byte-exactly (1 vs 3 threads)"};
}

}  // namespace

int main(int argc, char** argv)
{
    work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "qvmart_acceptance";
    fs::remove_all(work);
    fs::create_directories(work);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"QV consistency", qv_consistency},
        {"Doleans-Dade residual", dd_residual_shrinks},
        {"empirical decomposition", decomposition},
        {"growth-optimal portfolio", growth_optimal},
        {"Riesz identity", riesz},
        {"difference-of-Poissons statistics", poisson_lemma},
        {"admissibility band", band},
        {"utility sweep", sweep},
        {"drift-variation divergence", divergence},
        {"determinism", determinism}};

    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.pass) ++failures;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << i + 1 << " (" << criteria[i].first
                  << "): " << o.detail << std::endl;
    }
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
