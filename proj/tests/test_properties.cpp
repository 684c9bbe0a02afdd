// Property tests over randomly generated grids, paths, jumps and strategies.

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "qvmart/counterexample.hpp"
#include "qvmart/inference.hpp"
#include "qvmart/recipes.hpp"
#include "qvmart/wealth.hpp"

using namespace qvmart;

namespace {

constexpr int kCases = 200;

struct Gen {
    std::mt19937_64 rng;
    explicit Gen(std::uint64_t seed) : rng(seed) {}

    double uniform(double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); }
    std::size_t index(std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); }

    TimeGrid grid()
    {
        const std::size_t n = index(2, 40);
        std::vector<double> pts{0.0, 1.0};
        while (pts.size() < n + 1) {
            const double t = uniform(0.0, 1.0);
            if (std::find(pts.begin(), pts.end(), t) == pts.end() && t > 0.0) pts.push_back(t);
        }
        std::sort(pts.begin(), pts.end());
        return TimeGrid::from_points(pts);
    }

    std::vector<Jump> jumps(const TimeGrid& g, bool band_sized)
    {
        std::vector<Jump> out;
        const std::size_t k = index(0, 5);
        for (std::size_t j = 0; j < k; ++j) {
            const std::size_t i = index(1, g.n_steps() - 1);
            const double sign = uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0;
            out.push_back({g[i], band_sized ? sign / (1.0 - g[i]) : uniform(-3.0, 3.0)});
        }
        std::stable_sort(out.begin(), out.end(), [](const Jump& a, const Jump& b) { return a.time < b.time; });
        return out;
    }

    SamplePath path(const TimeGrid& g, std::vector<Jump> js = {})
    {
        std::vector<double> v(g.size(), 0.0);
        std::size_t j = 0;
        for (std::size_t i = 1; i < g.size(); ++i) v[i] = v[i - 1] + uniform(-1.0, 1.0) * std::sqrt(g.cell_length(i - 1));
        double level = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            while (j < js.size() && js[j].time == g[i]) level += js[j++].size;
            v[i] += level;
        }
        return SamplePath(g, v, std::move(js));
    }

    StepFunction step(const TimeGrid& g, double bound)
    {
        StepFunction f = StepFunction::constant(g, 0.0);
        for (auto& x : f.cells) x = uniform(-bound, bound);
        return f;
    }

    /// |pi_c| < 1 - t_{c+1}
    StepFunction in_band(const TimeGrid& g)
    {
        StepFunction f = StepFunction::constant(g, 0.0);
        for (std::size_t c = 0; c < f.cells.size(); ++c) f.cells[c] = uniform(-0.999, 0.999) * (1.0 - g[c + 1]);
        return f;
    }
};

}  // namespace

TEST(Property, QvNonDecreasingAndQuadraticInScale)
{
    Gen gen(101);
    for (int k = 0; k < kCases; ++k) {
        const TimeGrid g = gen.grid();
        const SamplePath p = gen.path(g, gen.jumps(g, false));
        const QVPath q = quadratic_variation(p);
        for (std::size_t i = 1; i < g.size(); ++i) ASSERT_GE(q[i], q[i - 1]);
        const double a = gen.uniform(-3.0, 3.0);
        std::vector<double> v(p.values().begin(), p.values().end());
        for (auto& x : v) x *= a;
        std::vector<Jump> js(p.jumps().begin(), p.jumps().end());
        for (auto& j : js) j.size *= a;
        const QVPath qa = quadratic_variation(SamplePath(g, v, js));
        ASSERT_NEAR(qa.terminal(), a * a * q.terminal(), 1e-9 * (1.0 + a * a * q.terminal()));
        ASSERT_LE(continuous_quadratic_variation(p).terminal(), q.terminal() + 1e-12);
    }
}

TEST(Property, LogWealthIdentityOnContinuousPaths)
{
    Gen gen(102);
    for (int k = 0; k < kCases; ++k) {
        const TimeGrid g = gen.grid();
        const SamplePath p = gen.path(g);
        const QVPath q = quadratic_variation(p);
        const StepFunction pi = gen.step(g, 3.0);
        const WealthPath w = stoch_exp_continuous(pi, p, q);
        const double expected = simple_integral(pi, p).terminal() - 0.5 * h2_integral(pi, q);
        ASSERT_NEAR(w.log_terminal, expected, 1e-9 * (1.0 + std::abs(expected)));
        ASSERT_GT(w.terminal(), 0.0);
    }
}

TEST(Property, AdmissibleBandKeepsWealthPositive)
{
    Gen gen(103);
    for (int k = 0; k < kCases; ++k) {
        const TimeGrid g = gen.grid();
        const SamplePath p = gen.path(g, gen.jumps(g, true));
        const StepFunction pi = gen.in_band(g);
        ASSERT_TRUE(band_check(pi).admissible);
        const WealthPath w = stoch_exp_jumps(pi, p, continuous_quadratic_variation(p));
        ASSERT_FALSE(w.hit_nonpositive);
        for (double x : w.values) ASSERT_GT(x, 0.0);
        ASSERT_TRUE(std::isfinite(w.log_terminal));
    }
}

TEST(Property, SimpleIntegralIsLinear)
{
    Gen gen(104);
    for (int k = 0; k < kCases; ++k) {
        const TimeGrid g = gen.grid();
        const SamplePath p = gen.path(g, gen.jumps(g, false));
        const StepFunction a = gen.step(g, 2.0), b = gen.step(g, 2.0);
        const double x = gen.uniform(-2.0, 2.0), y = gen.uniform(-2.0, 2.0);
        StepFunction mix = a;
        for (std::size_t c = 0; c < mix.cells.size(); ++c) mix.cells[c] = x * a.cells[c] + y * b.cells[c];
        const double lhs = simple_integral(mix, p).terminal();
        const double rhs = x * simple_integral(a, p).terminal() + y * simple_integral(b, p).terminal();
        ASSERT_NEAR(lhs, rhs, 1e-9 * (1.0 + std::abs(rhs)));
    }
}

TEST(Property, StrategiesDoNotAnticipate)
{
    Gen gen(105);
    const std::vector<SimpleStrategy> strategies{recipes::rebalanced_sign(1.0), truncation_strategy(0.8),
                                                 recipes::sign_after(0.5, 1.0), recipes::band(0.5)};
    for (int k = 0; k < kCases; ++k) {
        const TimeGrid g = gen.grid();
        const SamplePath p = gen.path(g);
        const std::size_t cut = gen.index(0, g.n_steps() - 1);
        // same prefix up to t_cut, arbitrary afterwards
        std::vector<double> v(p.values().begin(), p.values().end());
        for (std::size_t i = cut + 1; i < v.size(); ++i) v[i] = gen.uniform(-5.0, 5.0);
        const SamplePath other(g, v);
        for (const auto& s : strategies) {
            const auto a = s.evaluate(p).cells, b = s.evaluate(other).cells;
            for (std::size_t c = 0; c <= cut && c < a.size(); ++c) ASSERT_EQ(a[c], b[c]) << s.id();
        }
    }
}

TEST(Property, FlipDecompositionReconstructs)
{
    Gen gen(106);
    for (int k = 0; k < kCases; ++k) {
        const TimeGrid g = gen.grid();
        StepFunction beta = StepFunction::constant(g, 1.0);
        for (auto& b : beta.cells) b = gen.uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0;
        std::vector<double> n1, n2;
        for (std::size_t j = gen.index(0, 6); j > 0; --j) n1.push_back(gen.uniform(0.0, 1.0));
        for (std::size_t j = gen.index(0, 6); j > 0; --j) n2.push_back(gen.uniform(0.0, 1.0));
        std::sort(n1.begin(), n1.end());
        std::sort(n2.begin(), n2.end());
        const FlipDecomposition d = flip_decompose(beta, n1, n2);
        ASSERT_EQ(d.n_plus_jumps.size() + d.n_minus_jumps.size(), n1.size() + n2.size());
        ASSERT_TRUE(reconstruction_holds(d, n1, n2));
        ASSERT_EQ(common_jump_times(d), 0u);
    }
}

TEST(Property, DecompositionReconstructsS)
{
    Gen gen(107);
    for (int k = 0; k < 50; ++k) {
        const TimeGrid g = gen.grid();
        std::vector<SamplePath> ps;
        for (int i = 0; i < 5; ++i) ps.push_back(gen.path(g));
        const Ensemble e(ps, 0, "gen");
        const auto qvs = quadratic_variations(e);
        const DriftEstimate a = DriftEstimate::constant(g, gen.uniform(-5.0, 5.0), gen.index(1, 8));
        const DecompositionResult r = decompose(e, qvs, a);
        ASSERT_LT(r.reconstruction_error, 1e-12);
        for (std::size_t p = 0; p < e.size(); ++p) {
            double drift = 0.0;
            for (std::size_t c = 0; c < g.n_steps(); ++c) drift += a.alpha_at(c, e.paths[p]) * qvs[p].increment(c);
            ASSERT_NEAR(r.s_hat.paths[p].terminal(), e.paths[p].terminal() - drift, 1e-12);
        }
    }
}
