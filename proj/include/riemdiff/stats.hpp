#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace riemdiff {

// Small sample-statistics toolbox shared by the evaluation paths and the
// test harnesses. Everything works on plain vectors of doubles; nothing
// here owns randomness.

struct SampleSummary {
    double mean = 0.0;
    double variance = 0.0;   // unbiased (n-1 denominator), 0 for n < 2
    double std_error = 0.0;  // sqrt(variance / n)
    std::size_t n = 0;
};

SampleSummary summarize(const std::vector<double>& xs);

// log(sum_i exp(xs[i])) without overflow; -inf for an empty input.
double log_sum_exp(const std::vector<double>& xs);

// Two-sided Kolmogorov-Smirnov statistic of a sample against a reference
// CDF, sup_x |F_n(x) - F(x)|. The sample is copied and sorted internally.
double ks_statistic(std::vector<double> xs, const std::function<double(double)>& cdf);

// Asymptotic 1% critical value for the one-sample KS statistic.
double ks_critical_1pct(std::size_t n);

// Pearson statistic sum (o-e)^2/e over bins; expected counts must be
// positive.
double chi_square_statistic(const std::vector<double>& observed,
                            const std::vector<double>& expected);

// 99th percentile of chi-square with k degrees of freedom, via the
// Wilson-Hilferty cube approximation (good to ~1e-3 relative for k >= 3).
double chi_square_critical_1pct(double k);

// Log-density of the wrapped normal on the circle: a N(mu, sigma^2) on the
// line, wrapped mod 2pi. The image lattice sum is truncated at |k| <= 30,
// far beyond double precision for any sigma below ~12.
double wrapped_normal_log_density(double theta, double mu, double sigma);

// CDF of the same distribution on [0, 2pi), measured from angle 0.
double wrapped_normal_cdf(double theta, double mu, double sigma);

// Probability mass of the angular interval [a, b), with b - a in [0, 2pi],
// summed over lattice images. Used for binned goodness-of-fit expectations.
double wrapped_normal_interval_mass(double a, double b, double mu, double sigma);

// Total variation distance between two histograms with identical bin
// layout: 0.5 * sum |p_i - q_i| after normalizing each to sum 1.
double histogram_total_variation(const std::vector<double>& counts_a,
                                 const std::vector<double>& counts_b);

}  // namespace riemdiff
