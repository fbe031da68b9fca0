#include "riemdiff/stats.hpp"

#include "riemdiff/common.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace riemdiff {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

// ----------------------------------------------------------------- moments

SampleSummary summarize(const std::vector<double>& xs) {
    SampleSummary s;
    s.n = xs.size();
    if (s.n == 0) return s;
    s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / double(s.n);
    if (s.n < 2) return s;
    double acc = 0.0;
    for (double x : xs) {
        const double d = x - s.mean;
        acc += d * d;
    }
    s.variance = acc / double(s.n - 1);
    s.std_error = std::sqrt(s.variance / double(s.n));
    return s;
}

double log_sum_exp(const std::vector<double>& xs) {
    if (xs.empty()) return -std::numeric_limits<double>::infinity();
    const double m = *std::max_element(xs.begin(), xs.end());
    if (!std::isfinite(m)) return m;  // all -inf, or a NaN/inf poisons the sum
    double acc = 0.0;
    for (double x : xs) acc += std::exp(x - m);
    return m + std::log(acc);
}

// ------------------------------------------------------- distribution tests

double ks_statistic(std::vector<double> xs, const std::function<double(double)>& cdf) {
    if (xs.empty()) throw ContractError("ks_statistic: empty sample");
    std::sort(xs.begin(), xs.end());
    const double n = double(xs.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double F = cdf(xs[i]);
        // The empirical CDF jumps at each point; both sides of the jump bound
        // the supremum.
        worst = std::max(worst, std::fabs(double(i + 1) / n - F));
        worst = std::max(worst, std::fabs(double(i) / n - F));
    }
    return worst;
}

double ks_critical_1pct(std::size_t n) {
    if (n == 0) throw ContractError("ks_critical_1pct: n must be positive");
    return 1.628 / std::sqrt(double(n));
}

double chi_square_statistic(const std::vector<double>& observed,
                            const std::vector<double>& expected) {
    if (observed.size() != expected.size())
        throw ContractError("chi_square_statistic: bin count mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        if (expected[i] <= 0.0)
            throw ContractError("chi_square_statistic: expected counts must be positive");
        const double d = observed[i] - expected[i];
        acc += d * d / expected[i];
    }
    return acc;
}

double chi_square_critical_1pct(double k) {
    if (k <= 0.0) throw ContractError("chi_square_critical_1pct: dof must be positive");
    // Wilson-Hilferty: (X/k)^(1/3) is close to normal with mean 1 - 2/(9k)
    // and variance 2/(9k).
    const double z99 = 2.3263478740408408;  // Phi^-1(0.99)
    const double u = 2.0 / (9.0 * k);
    const double c = 1.0 - u + z99 * std::sqrt(u);
    return k * c * c * c;
}

// ------------------------------------------------------------ wrapped normal

double wrapped_normal_log_density(double theta, double mu, double sigma) {
    if (sigma <= 0.0) throw ContractError("wrapped_normal_log_density: sigma must be positive");
    const double inv2s2 = 0.5 / (sigma * sigma);
    std::vector<double> terms;
    terms.reserve(61);
    for (int k = -30; k <= 30; ++k) {
        const double d = theta - mu + kTwoPi * double(k);
        terms.push_back(-d * d * inv2s2);
    }
    return log_sum_exp(terms) - std::log(sigma) - 0.5 * std::log(kTwoPi);
}

double wrapped_normal_cdf(double theta, double mu, double sigma) {
    if (sigma <= 0.0) throw ContractError("wrapped_normal_cdf: sigma must be positive");
    // P(angle in [0, theta)) with the angle measured on [0, 2pi). Summing the
    // line CDF over the image intervals [2pik, 2pik + theta) telescopes to a
    // difference of normal CDFs per image.
    const double t = theta - std::floor(theta / kTwoPi) * kTwoPi;
    auto Phi = [&](double x) { return 0.5 * std::erfc(-(x - mu) / (sigma * std::sqrt(2.0))); };
    double acc = 0.0;
    for (int k = -30; k <= 30; ++k)
        acc += Phi(kTwoPi * double(k) + t) - Phi(kTwoPi * double(k));
    return std::clamp(acc, 0.0, 1.0);
}

double wrapped_normal_interval_mass(double a, double b, double mu, double sigma) {
    if (sigma <= 0.0) throw ContractError("wrapped_normal_interval_mass: sigma must be positive");
    if (b < a || b - a > kTwoPi + 1e-12)
        throw ContractError("wrapped_normal_interval_mass: need a <= b <= a + 2pi");
    auto Phi = [&](double x) { return 0.5 * std::erfc(-(x - mu) / (sigma * std::sqrt(2.0))); };
    double acc = 0.0;
    for (int k = -30; k <= 30; ++k)
        acc += Phi(b + kTwoPi * double(k)) - Phi(a + kTwoPi * double(k));
    return std::clamp(acc, 0.0, 1.0);
}

double histogram_total_variation(const std::vector<double>& counts_a,
                                 const std::vector<double>& counts_b) {
    if (counts_a.size() != counts_b.size())
        throw ContractError("histogram_total_variation: bin count mismatch");
    const double ta = std::accumulate(counts_a.begin(), counts_a.end(), 0.0);
    const double tb = std::accumulate(counts_b.begin(), counts_b.end(), 0.0);
    if (ta <= 0.0 || tb <= 0.0)
        throw ContractError("histogram_total_variation: empty histogram");
    double acc = 0.0;
    for (std::size_t i = 0; i < counts_a.size(); ++i)
        acc += std::fabs(counts_a[i] / ta - counts_b[i] / tb);
    return 0.5 * acc;
}

}  // namespace riemdiff
