#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "qvmart/simulate.hpp"
#include "qvmart/stats.hpp"

using namespace qvmart;

namespace {

// Composite Simpson in v = -log(1 - u): int_s^t sigma^2(u) du = int v^{-4/3} dv.
double m_variance_quadrature(double s, double t)
{
    s = std::max(s, 0.5);
    if (t <= s) return 0.0;
    const double a = -std::log1p(-s), b = -std::log1p(-t);
    const int n = 20000;
    const double h = (b - a) / n;
    double acc = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double v = a + i * h;
        const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        acc += w * std::pow(v, -4.0 / 3.0);
    }
    return acc * h / 3.0;
}

}  // namespace

TEST(Sigma, ClosedFormValues)
{
    EXPECT_EQ(sigma_eval(0.0), 0.0);
    EXPECT_EQ(sigma_eval(0.5), 0.0);
    // sigma(3/4) = 2 (ln 4)^{-2/3}
    EXPECT_NEAR(sigma_eval(0.75), 1.60864306561876213959, 1e-14);
    EXPECT_THROW(sigma_eval(1.0), DomainError);
    EXPECT_THROW(sigma_eval(-0.1), DomainError);
}

TEST(MVariance, ClosedFormAgainstQuadrature)
{
    EXPECT_NEAR(m_variance(0.5, 1.0), 3.38984182901217023821, 1e-13);
    EXPECT_NEAR(m_variance(0.5, 0.9), 1.11797593501944726259, 1e-13);
    EXPECT_NEAR(m_variance(0.5, 0.9), m_variance_quadrature(0.5, 0.9), 1e-9);
    EXPECT_NEAR(m_variance(0.6, 0.999), m_variance_quadrature(0.6, 0.999), 1e-9);
    EXPECT_EQ(m_variance(0.0, 0.5), 0.0);
    EXPECT_THROW(m_variance(0.5, 1.1), DomainError);
}

TEST(Brownian, DyadicRefinementConsistent)
{
    const SeedStream seed(17);
    const SamplePath coarse = gen_brownian(seed, 3, TimeGrid::dyadic(6));
    const SamplePath fine = gen_brownian(seed, 3, TimeGrid::dyadic(9));
    for (std::size_t i = 0; i <= 64; ++i) EXPECT_EQ(coarse[i], fine[8 * i]);
}

TEST(Brownian, IncrementLaw)
{
    const TimeGrid g = TimeGrid::dyadic(4);
    MeanAccumulator terminal, terminal2, incr2;
    for (std::uint64_t p = 0; p < 20000; ++p) {
        const SamplePath b = gen_brownian(SeedStream(1), p, g);
        terminal.add(b.terminal());
        terminal2.add(b.terminal() * b.terminal());
        incr2.add((b[5] - b[4]) * (b[5] - b[4]) * 16.0);
    }
    EXPECT_LT(std::abs(terminal.estimate().z(0.0)), 4.0);
    EXPECT_LT(std::abs(terminal2.estimate().z(1.0)), 4.0);
    EXPECT_LT(std::abs(incr2.estimate().z(1.0)), 4.0);
}

TEST(Brownian, NonDyadicGrid)
{
    const TimeGrid g = TimeGrid::uniform(10);
    MeanAccumulator t2;
    for (std::uint64_t p = 0; p < 20000; ++p) {
        const double x = gen_brownian(SeedStream(2), p, g).terminal();
        t2.add(x * x);
    }
    EXPECT_LT(std::abs(t2.estimate().z(1.0)), 4.0);
}

TEST(GaussianM, VanishesBeforeHalfAndMatchesVariance)
{
    const double eps = 0.01;
    const TimeGrid g = TimeGrid::singular(32, 128.0, {eps});
    const std::size_t half = g.index_of(0.5);
    MeanAccumulator var;
    for (std::uint64_t p = 0; p < 20000; ++p) {
        const auto [b, m] = gen_M(SeedStream(3), p, g, eps);
        ASSERT_EQ(m[half], 0.0);
        var.add(m.terminal() * m.terminal());
    }
    EXPECT_LT(std::abs(var.estimate().z(m_variance(0.5, 1.0 - eps))), 4.0);
}

TEST(GaussianM, RefusesZeroEpsAndCoarseGrid)
{
    const TimeGrid g = TimeGrid::singular(8, 8.0, {0.01});
    EXPECT_THROW(gen_M(SeedStream(1), 0, g, 0.0), DomainError);
    EXPECT_THROW(gen_M(SeedStream(1), 0, TimeGrid::uniform(8), 0.2), ConfigError);
}

TEST(Poisson, CountsAndDistinctStreams)
{
    MeanAccumulator n1, n2;
    std::size_t identical = 0;
    for (std::uint64_t p = 0; p < 20000; ++p) {
        const PoissonPair pp = gen_poisson_pair(SeedStream(4), p, 1.0);
        n1.add(static_cast<double>(pp.first.size()));
        n2.add(static_cast<double>(pp.second.size()));
        if (!pp.first.empty() && pp.first == pp.second) ++identical;
        for (std::size_t k = 1; k < pp.first.size(); ++k) ASSERT_GT(pp.first[k], pp.first[k - 1]);
    }
    EXPECT_LT(std::abs(n1.estimate().z(1.0)), 4.0);
    EXPECT_LT(std::abs(n2.estimate().z(1.0)), 4.0);
    EXPECT_EQ(identical, 0u);
}

TEST(Counterexample, JumpSizesAndStructure)
{
    const double eps = 0.01;
    const TimeGrid g = TimeGrid::singular(32, 64.0, {0.1, eps});
    for (std::uint64_t p = 0; p < 200; ++p) {
        const PathBundle b = gen_counterexample(SeedStream(5), p, g, eps, 1.0);
        EXPECT_EQ(b.B1, b.B.terminal());
        EXPECT_EQ(b.S.jumps().size(), b.N1_jumps.size() + b.N2_jumps.size());
        for (std::size_t j = 0; j < b.S.jumps().size(); ++j) {
            const Jump& jump = b.S.jumps()[j];
            EXPECT_NEAR(std::abs(jump.size), 1.0 / (1.0 - jump.time), 1e-12);
            EXPECT_LE(jump.time, 1.0 - eps);
        }
        // S minus its jumps is M
        const SamplePath c = b.S.continuous_part();
        for (std::size_t i = 0; i < g.size(); ++i) ASSERT_NEAR(c[i], b.M[i], 1e-12);
    }
}

TEST(Counterexample, WithTruncationFreezesLater)
{
    const TimeGrid g = TimeGrid::singular(32, 64.0, {0.1, 0.001});
    const PathBundle b = gen_counterexample(SeedStream(6), 0, g, 0.001, 1.0);
    const PathBundle t = with_truncation(b, 0.1);
    const std::size_t k = g.index_of(0.9);
    EXPECT_EQ(t.M[k], b.M[k]);
    EXPECT_EQ(t.M.terminal(), t.M[k]);
    EXPECT_THROW(with_truncation(t, 0.0001), ContractError);
}

TEST(Counterexample, SnapMergesNothing)
{
    const TimeGrid g = TimeGrid::uniform(4);
    std::size_t capped = 0, coincident = 0;
    const auto jumps = detail::snap_counterexample_jumps(g, {0.3, 0.4, 0.9}, {0.45}, capped, coincident);
    ASSERT_EQ(jumps.size(), 4u);
    EXPECT_EQ(capped, 1u);  // 0.9 > t_{n-1} = 0.75
    EXPECT_EQ(coincident, 2u);
    EXPECT_EQ(jumps[0].time, 0.5);
    EXPECT_EQ(jumps[2].size, -2.0);
    EXPECT_EQ(jumps[3].time, 0.75);
    EXPECT_EQ(jumps[3].size, 4.0);
}

TEST(InsiderDrift, ZeroAtHalfAndPositiveLater)
{
    const TimeGrid g = TimeGrid::singular(16, 64.0, {0.1});
    const PathBundle b = gen_counterexample(SeedStream(7), 0, g, 0.1, 1.0);
    const InsiderDrift d5 = insider_drift(with_truncation(b, 0.5), 0.5);
    EXPECT_EQ(d5.total_variation, 0.0);
    const InsiderDrift d = insider_drift(b, 0.1);
    EXPECT_GT(d.total_variation, 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) ASSERT_NEAR(d.martingale[i] + d.drift[i], b.M[i], 1e-12);
}

TEST(Ensemble, DeterministicAcrossThreads)
{
    ModelSpec spec{DriftedDiffusion::constant(0.1, 0.2)};
    const TimeGrid g = TimeGrid::uniform(64);
    const Ensemble a = generate_ensemble(spec, g, 50, 9, 1);
    const Ensemble b = generate_ensemble(spec, g, 50, 9, 4);
    for (std::size_t p = 0; p < 50; ++p)
        for (std::size_t i = 0; i < g.size(); ++i) ASSERT_EQ(a.paths[p][i], b.paths[p][i]);
}

TEST(ModelSpec, Validation)
{
    const TimeGrid g = TimeGrid::uniform(8);
    EXPECT_THROW((ModelSpec{GaussianMModel{}, 0.0}).validate(g), ConfigError);
    EXPECT_THROW((ModelSpec{DriftedDiffusion::constant(0.1, 0.0)}).validate(g), ConfigError);
    EXPECT_THROW((ModelSpec{CounterexampleModel{-1.0}, 0.01}).validate(g), ConfigError);
    EXPECT_NO_THROW((ModelSpec{BrownianModel{}}).validate(g));
}

TEST(InsiderDrift, ZeroDriverGivesZeroDrift)
{
    const TimeGrid g = TimeGrid::singular(8, 16.0, {0.1});
    PathBundle b;
    b.B = SamplePath(g, std::vector<double>(g.size(), 0.0));
    b.M = m_from_brownian(b.B, 0.1);
    b.S = b.M;
    b.eps = 0.1;
    const InsiderDrift d = insider_drift(b, 0.1);
    EXPECT_EQ(d.total_variation, 0.0);
    for (double x : d.drift.values()) EXPECT_EQ(x, 0.0);
}

TEST(Counterexample, QvSplitsIntoMPlusJumps)
{
    const double eps = 0.01;
    const TimeGrid g = TimeGrid::singular(32, 64.0, {0.1, eps});
    for (std::uint64_t p = 0; p < 50; ++p) {
        const PathBundle b = gen_counterexample(SeedStream(8), p, g, eps, 1.0);
        double jumps = 0.0;
        for (const auto& j : b.S.jumps()) jumps += j.size * j.size;
        const double qm = quadratic_variation(b.M).terminal();
        EXPECT_NEAR(quadratic_variation(b.S).terminal(), qm + jumps, 1e-9 * (qm + jumps));
    }
}
