#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/chi_squared.hpp>

#include "qvmart/error.hpp"

namespace qvmart {

/// Monte-Carlo point estimate with its standard error.
struct Estimate {
    double value = 0.0;
    double std_error = 0.0;
    std::size_t n = 0;

    double z(double target = 0.0) const
    {
        const double d = value - target;
        if (std_error > 0.0) return d / std_error;
        return d == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), d);
    }
};

/// Welford mean/variance; merge() is Chan's pairwise update, so partial
/// accumulators over disjoint path ranges combine associatively.
class MeanAccumulator {
public:
    void add(double x)
    {
        ++n_;
        const double delta = x - mean_;
        mean_ += delta / static_cast<double>(n_);
        m2_ += delta * (x - mean_);
    }

    void merge(const MeanAccumulator& other)
    {
        if (other.n_ == 0) return;
        if (n_ == 0) {
            *this = other;
            return;
        }
        const double n = static_cast<double>(n_ + other.n_);
        const double delta = other.mean_ - mean_;
        mean_ += delta * static_cast<double>(other.n_) / n;
        m2_ += other.m2_ + delta * delta * static_cast<double>(n_) * static_cast<double>(other.n_) / n;
        n_ += other.n_;
    }

    std::size_t count() const { return n_; }
    double mean() const { return mean_; }
    double variance() const { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }

    Estimate estimate() const
    {
        return {mean_, n_ > 1 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0, n_};
    }

private:
    std::size_t n_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

inline Estimate mean_estimate(std::span<const double> xs)
{
    MeanAccumulator acc;
    for (double x : xs) acc.add(x);
    return acc.estimate();
}

inline double correlation(std::span<const double> x, std::span<const double> y)
{
    require(x.size() == y.size() && x.size() > 1, "correlation: need two equal-length samples");
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

inline double chi_square_survival(double statistic, double dof)
{
    const boost::math::chi_squared dist(dof);
    return boost::math::cdf(boost::math::complement(dist, statistic));
}

/// Chi-square goodness of fit of integer counts to Poisson(mean) on the
/// cells {0, 1, 2, >=3}.
struct PoissonFit {
    std::array<std::size_t, 4> observed{};
    std::array<double, 4> expected{};
    double statistic = 0.0;
    double p_value = 1.0;
};

inline PoissonFit poisson_goodness_of_fit(std::span<const std::size_t> counts, double mean)
{
    require(!counts.empty(), "poisson_goodness_of_fit: empty sample");
    PoissonFit fit;
    for (std::size_t c : counts) ++fit.observed[std::min<std::size_t>(c, 3)];
    const double n = static_cast<double>(counts.size());
    const double p0 = std::exp(-mean);
    const double p1 = p0 * mean;
    const double p2 = p1 * mean / 2.0;
    const std::array<double, 4> p{p0, p1, p2, 1.0 - p0 - p1 - p2};
    for (std::size_t k = 0; k < 4; ++k) {
        fit.expected[k] = n * p[k];
        const double d = static_cast<double>(fit.observed[k]) - fit.expected[k];
        fit.statistic += d * d / fit.expected[k];
    }
    fit.p_value = chi_square_survival(fit.statistic, 3.0);
    return fit;
}

/// Binomial proportion with normal-approximation stderr and Clopper-Pearson interval.
struct BinomialSummary {
    std::size_t successes = 0;
    std::size_t trials = 0;
    double p_hat = 0.0;
    double std_error = 0.0;
    double lower = 0.0;
    double upper = 1.0;
    double confidence = 0.99;
};

inline BinomialSummary binomial_summary(std::size_t k, std::size_t n, double confidence = 0.99)
{
    require(n > 0, "binomial_summary: zero trials");
    BinomialSummary s;
    s.successes = k;
    s.trials = n;
    s.confidence = confidence;
    s.p_hat = static_cast<double>(k) / static_cast<double>(n);
    s.std_error = std::sqrt(s.p_hat * (1.0 - s.p_hat) / static_cast<double>(n));
    const double alpha = 1.0 - confidence;
    const double kd = static_cast<double>(k), nd = static_cast<double>(n);
    s.lower = k == 0 ? 0.0 : boost::math::quantile(boost::math::beta_distribution<>(kd, nd - kd + 1.0), alpha / 2.0);
    s.upper = k == n ? 1.0 : boost::math::quantile(boost::math::beta_distribution<>(kd + 1.0, nd - kd), 1.0 - alpha / 2.0);
    return s;
}

inline double median(std::vector<double> xs)
{
    require(!xs.empty(), "median: empty sample");
    const std::size_t mid = xs.size() / 2;
    std::nth_element(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(mid), xs.end());
    double m = xs[mid];
    if (xs.size() % 2 == 0) {
        m = 0.5 * (m + *std::max_element(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(mid)));
    }
    return m;
}

/// Smallest x with at least `fraction` of the sample <= x.
inline double upper_quantile(std::vector<double> xs, double fraction)
{
    require(!xs.empty(), "upper_quantile: empty sample");
    std::sort(xs.begin(), xs.end());
    const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(xs.size())));
    return xs[std::min(xs.size() - 1, k == 0 ? 0 : k - 1)];
}

}  // namespace qvmart
