#include <doctest.h>

#include "riemdiff/common.hpp"
#include "riemdiff/manifold.hpp"
#include "riemdiff/matrix.hpp"
#include "riemdiff/rng.hpp"
#include "riemdiff/stats.hpp"
#include "riemdiff/targets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

using namespace riemdiff;

TEST_SUITE_BEGIN("targets");

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;
constexpr double kTwoPi = 2.0 * kPi;
constexpr double kFourPi = 4.0 * kPi;

std::vector<double> sphere_point(double cos_theta, double phi) {
    const double st = std::sqrt(std::max(0.0, 1.0 - cos_theta * cos_theta));
    return {st * std::cos(phi), st * std::sin(phi), cos_theta};
}

std::vector<double> torus2_point(double a, double b) {
    return {std::cos(a), std::sin(a), std::cos(b), std::sin(b)};
}

// Generic chi-square of observed cell counts against expected cell masses,
// merging thin cells into a catch-all so every kept expectation is solid.
void check_cell_chi_square(const std::vector<double>& observed,
                           const std::vector<double>& expected_mass, double n_total) {
    REQUIRE(observed.size() == expected_mass.size());
    std::vector<double> obs_kept, exp_kept;
    double obs_rest = 0.0, exp_rest = 0.0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        const double e = expected_mass[i] * n_total;
        if (e >= 15.0) {
            obs_kept.push_back(observed[i]);
            exp_kept.push_back(e);
        } else {
            obs_rest += observed[i];
            exp_rest += e;
        }
    }
    obs_kept.push_back(obs_rest);
    exp_kept.push_back(exp_rest + 1e-12);
    REQUIRE(obs_kept.size() > 20);
    const double stat = chi_square_statistic(obs_kept, exp_kept);
    CHECK(stat < chi_square_critical_1pct(int(obs_kept.size()) - 1));
}

std::string write_temp_csv(const std::string& name, const std::string& body) {
    const std::string path = "/tmp/" + name;
    std::ofstream out(path);
    out << body;
    out.close();
    return path;
}

// Extract "line N" presence from an error message.
template <typename Fn>
void check_io_error_line(Fn&& fn, const std::string& needle) {
    try {
        fn();
        FAIL_CHECK("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
}

}  // namespace

TEST_CASE("vmf density reduces to the uniform at zero concentration") {
    const Manifold M = Manifold::sphere(2);
    const Target t = Target::vmf_mixture(M, {{{0.0, 0.0, 1.0}, 0.0, 1.0}});
    RngStream rng(1, 0);
    for (int i = 0; i < 20; ++i) {
        std::vector<double> x(3);
        prior_sample(M, rng, x);
        CHECK(t.log_density(x) == doctest::Approx(-std::log(kFourPi)).epsilon(1e-12));
    }
}

TEST_CASE("wrapped gaussian density flattens to the uniform at large scale") {
    const Manifold M = Manifold::torus(1);
    const Target t = Target::wrapped_gaussian_mixture(M, {{{1.0, 0.0}, 25.0, 1.0}});
    for (double theta : {0.0, 0.8, 2.4, -1.9, 3.1}) {
        const std::vector<double> x = {std::cos(theta), std::sin(theta)};
        CHECK(t.log_density(x) == doctest::Approx(-std::log(kTwoPi)).epsilon(1e-10));
    }
}

TEST_CASE("vmf sample mean direction points at the mode") {
    const Manifold M = Manifold::sphere(2);
    const Target t = Target::vmf_mixture(M, {{{0.0, 0.0, 1.0}, 10.0, 1.0}});
    RngStream rng(2, 0);
    double sx = 0.0, sy = 0.0, sz = 0.0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const auto x = t.sample(rng);
        CHECK(on_manifold(M, x));
        sx += x[0];
        sy += x[1];
        sz += x[2];
    }
    const double norm = std::sqrt(sx * sx + sy * sy + sz * sz);
    const double angle = std::acos(std::clamp(sz / norm, -1.0, 1.0));
    CHECK(angle < 2.0 * kPi / 180.0);
}

TEST_CASE("wood sampler cosine marginal passes a ks test") {
    // For a single vMF on the 2-sphere the cosine against the mean has
    // density kappa e^(kappa t) / (2 sinh kappa) on [-1, 1], with CDF in
    // closed form; this checks the rejection sampler exactly.
    const double kappa = 5.0;
    const Manifold M = Manifold::sphere(2);
    const Target t = Target::vmf_mixture(M, {{{0.0, 1.0, 0.0}, kappa, 1.0}});
    RngStream rng(3, 0);
    const int n = 10000;
    std::vector<double> ts;
    ts.reserve(n);
    for (int i = 0; i < n; ++i) ts.push_back(t.sample(rng)[1]);
    const auto cdf = [kappa](double v) {
        return (std::exp(kappa * v) - std::exp(-kappa)) / (2.0 * std::sinh(kappa));
    };
    CHECK(ks_statistic(ts, cdf) < ks_critical_1pct(n));
}

TEST_CASE("circle vmf matches the von mises density in binned counts") {
    const double kappa = 3.0;
    const Manifold M = Manifold::sphere(1);
    const double mu = 0.9;
    const Target t =
        Target::vmf_mixture(M, {{{std::cos(mu), std::sin(mu)}, kappa, 1.0}});
    RngStream rng(4, 0);
    const int n = 20000, bins = 24;
    std::vector<double> observed(bins, 0.0), expected(bins, 0.0);
    for (int i = 0; i < n; ++i) {
        const auto x = t.sample(rng);
        double theta = std::atan2(x[1], x[0]);
        if (theta < 0.0) theta += kTwoPi;
        observed[std::size_t(std::min(bins - 1, int(theta / kTwoPi * bins)))] += 1.0;
    }
    const double norm = kTwoPi * std::cyl_bessel_i(0.0, kappa);
    const int refine = 16;
    for (int i = 0; i < bins * refine; ++i) {
        const double theta = kTwoPi * (i + 0.5) / (bins * refine);
        expected[std::size_t(i / refine)] +=
            std::exp(kappa * std::cos(theta - mu)) / norm * (kTwoPi / (bins * refine));
    }
    for (double& e : expected) e *= n;
    CHECK(chi_square_statistic(observed, expected) < chi_square_critical_1pct(bins - 1));
}

TEST_CASE("vmf mixture density integrates to one on the sphere grid") {
    const Manifold M = Manifold::sphere(2);
    const Target t = Target::vmf_mixture(
        M, {{{0.0, 0.0, 1.0}, 10.0, 0.5},
            {{1.0, 0.0, 0.0}, 20.0, 0.3},
            {{0.0, -0.6, 0.8}, 5.0, 0.2}});
    const int nc = 64, np = 128;
    double mass = 0.0;
    for (int i = 0; i < nc; ++i) {
        const double ct = -1.0 + 2.0 * (i + 0.5) / nc;
        for (int j = 0; j < np; ++j) {
            const double phi = kTwoPi * (j + 0.5) / np;
            mass += std::exp(t.log_density(sphere_point(ct, phi))) * (2.0 / nc) * (kTwoPi / np);
        }
    }
    CHECK(mass == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("torus mixture density integrates to one on the grid") {
    const Manifold M = Manifold::torus(2);
    const Target t = Target::wrapped_gaussian_mixture(
        M, {{torus2_point(1.0, 4.5), 0.4, 0.6}, {torus2_point(3.5, 1.2), 0.7, 0.4}});
    const int n = 256;
    double mass = 0.0;
    for (int i = 0; i < n; ++i) {
        const double a = kTwoPi * (i + 0.5) / n;
        for (int j = 0; j < n; ++j) {
            const double b = kTwoPi * (j + 0.5) / n;
            mass += std::exp(t.log_density(torus2_point(a, b))) * (kTwoPi / n) * (kTwoPi / n);
        }
    }
    CHECK(mass == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("vmf mixture samples match the density cell by cell") {
    const Manifold M = Manifold::sphere(2);
    const Target t = Target::vmf_mixture(
        M, {{{0.0, 0.0, 1.0}, 8.0, 0.45},
            {{-1.0, 0.0, 0.0}, 4.0, 0.35},
            {{0.0, 0.6, -0.8}, 10.0, 0.2}});
    RngStream rng(5, 0);
    const int n = 100000, nc = 16, np = 32;
    std::vector<double> observed(std::size_t(nc * np), 0.0);
    for (int i = 0; i < n; ++i) {
        const auto x = t.sample(rng);
        const int ci = std::min(nc - 1, int((x[2] + 1.0) / 2.0 * nc));
        double phi = std::atan2(x[1], x[0]);
        if (phi < 0.0) phi += kTwoPi;
        const int pj = std::min(np - 1, int(phi / kTwoPi * np));
        observed[std::size_t(ci * np + pj)] += 1.0;
    }
    std::vector<double> expected(std::size_t(nc * np), 0.0);
    const int refine = 8;
    for (int ci = 0; ci < nc * refine; ++ci) {
        const double ct = -1.0 + 2.0 * (ci + 0.5) / (nc * refine);
        for (int pj = 0; pj < np * refine; ++pj) {
            const double phi = kTwoPi * (pj + 0.5) / (np * refine);
            expected[std::size_t((ci / refine) * np + pj / refine)] +=
                std::exp(t.log_density(sphere_point(ct, phi))) * (2.0 / (nc * refine)) *
                (kTwoPi / (np * refine));
        }
    }
    check_cell_chi_square(observed, expected, n);
}

TEST_CASE("torus mixture samples match the density cell by cell") {
    const Manifold M = Manifold::torus(2);
    const Target t = Target::wrapped_gaussian_mixture(
        M, {{torus2_point(1.0, 4.5), 0.5, 0.55}, {torus2_point(4.0, 1.5), 0.8, 0.45}});
    RngStream rng(6, 0);
    const int n = 100000, nb = 24;
    std::vector<double> observed(std::size_t(nb * nb), 0.0);
    for (int i = 0; i < n; ++i) {
        const auto x = t.sample(rng);
        double a = std::atan2(x[1], x[0]), b = std::atan2(x[3], x[2]);
        if (a < 0.0) a += kTwoPi;
        if (b < 0.0) b += kTwoPi;
        const int ia = std::min(nb - 1, int(a / kTwoPi * nb));
        const int ib = std::min(nb - 1, int(b / kTwoPi * nb));
        observed[std::size_t(ia * nb + ib)] += 1.0;
    }
    std::vector<double> expected(std::size_t(nb * nb), 0.0);
    const int refine = 4;
    for (int ia = 0; ia < nb * refine; ++ia) {
        const double a = kTwoPi * (ia + 0.5) / (nb * refine);
        for (int ib = 0; ib < nb * refine; ++ib) {
            const double b = kTwoPi * (ib + 0.5) / (nb * refine);
            expected[std::size_t((ia / refine) * nb + ib / refine)] +=
                std::exp(t.log_density(torus2_point(a, b))) * (kTwoPi / (nb * refine)) *
                (kTwoPi / (nb * refine));
        }
    }
    check_cell_chi_square(observed, expected, n);
}

TEST_CASE("hyperboloid wrapped gaussian has the exact radial law") {
    // The exponential map preserves the tangent norm as geodesic distance, so
    // distances from the mean follow sigma times a chi distribution.
    const Manifold M = Manifold::hyperboloid(2);
    const double sigma = 0.7;
    const std::vector<double> mu = {std::cosh(1.0), std::sinh(1.0), 0.0};
    const Target t = Target::wrapped_gaussian_mixture(M, {{mu, sigma, 1.0}});
    RngStream rng(7, 0);
    const int n = 10000;
    std::vector<double> rs;
    rs.reserve(n);
    for (int i = 0; i < n; ++i) {
        const auto x = t.sample(rng);
        CHECK(on_manifold(M, x));
        rs.push_back(std::acosh(std::max(1.0, -lorentz_inner(mu, x))));
    }
    // Rayleigh CDF for intrinsic dimension 2.
    const auto cdf = [sigma](double r) { return 1.0 - std::exp(-r * r / (2.0 * sigma * sigma)); };
    CHECK(ks_statistic(rs, cdf) < ks_critical_1pct(n));
    CHECK_THROWS_AS(t.log_density(mu), ContractError);
}

TEST_CASE("checkerboard samples stay on dark cells with hyperbolic-area weights") {
    const Manifold M = Manifold::hyperboloid(2);
    const Target t = Target::hyperbolic_checkerboard(M);
    RngStream rng(8, 0);
    const int n = 20000;
    std::vector<double> observed(8, 0.0);
    for (int i = 0; i < n; ++i) {
        const auto x = t.sample(rng);
        CHECK(on_manifold(M, x));
        REQUIRE(x[1] >= -3.0);
        REQUIRE(x[1] < 3.0);
        REQUIRE(x[2] >= -3.0);
        REQUIRE(x[2] < 3.0);
        const int ci = int((x[1] + 3.0) / 1.5);
        const int cj = int((x[2] + 3.0) / 1.5);
        REQUIRE((ci + cj) % 2 == 0);
        // Dark cells, row major: cell index among the 8 kept ones.
        observed[std::size_t(ci * 2 + cj / 2)] += 1.0;
    }
    // Expected masses: hyperbolic area of each dark cell, midpoint quadrature.
    std::vector<double> expected(8, 0.0);
    const int r = 40;
    double total = 0.0;
    for (int ci = 0; ci < 4; ++ci)
        for (int cj = 0; cj < 4; ++cj) {
            if ((ci + cj) % 2 != 0) continue;
            double area = 0.0;
            for (int a = 0; a < r; ++a)
                for (int b = 0; b < r; ++b) {
                    const double x1 = -3.0 + 1.5 * (ci + (a + 0.5) / r);
                    const double x2 = -3.0 + 1.5 * (cj + (b + 0.5) / r);
                    area += (1.5 / r) * (1.5 / r) / std::sqrt(1.0 + x1 * x1 + x2 * x2);
                }
            expected[std::size_t(ci * 2 + cj / 2)] = area;
            total += area;
        }
    for (double& e : expected) e *= double(n) / total;
    CHECK(chi_square_statistic(observed, expected) < chi_square_critical_1pct(7));
    const std::vector<double> apex = {1.0, 0.0, 0.0};
    CHECK_THROWS_AS(t.log_density(apex), ContractError);
}

TEST_CASE("so3 target concentrates evenly on its four modes") {
    const Target t = Target::so3_multimodal(Target::so3_default_modes(4.0));
    const Manifold& M = t.manifold();
    RngStream rng(9, 0);
    const int n = 4000;
    std::vector<double> counts(4, 0.0);
    std::vector<double> within(4, 0.0);
    for (int i = 0; i < n; ++i) {
        const auto x = t.sample(rng);
        CHECK(on_manifold(M, x));
        const auto xn = std::size_t(3);
        Matrix R(xn, xn, {x.begin(), x.end()});
        CHECK(determinant(R) > 0.0);
        int best = 0;
        double best_tr = -1e9;
        for (int k = 0; k < 4; ++k) {
            double tr = 0.0;
            for (std::size_t j = 0; j < 9; ++j) tr += t.components()[std::size_t(k)].mean[j] * x[j];
            if (tr > best_tr) {
                best_tr = tr;
                best = k;
            }
        }
        counts[std::size_t(best)] += 1.0;
        within[std::size_t(best)] += best_tr;
    }
    for (int k = 0; k < 4; ++k) {
        CHECK(counts[std::size_t(k)] > 0.25 * n - 5.0 * std::sqrt(0.25 * 0.75 * n));
        CHECK(counts[std::size_t(k)] < 0.25 * n + 5.0 * std::sqrt(0.25 * 0.75 * n));
        CHECK(within[std::size_t(k)] / counts[std::size_t(k)] > 1.5);
    }
    CHECK(!t.has_density());
}

TEST_CASE("target construction rejects malformed specs") {
    const Manifold S2 = Manifold::sphere(2);
    // Weights off by more than 1e-12.
    CHECK_THROWS_AS(Target::vmf_mixture(S2, {{{0.0, 0.0, 1.0}, 5.0, 0.9}}), ConfigError);
    // Mean off the manifold.
    CHECK_THROWS_AS(Target::vmf_mixture(S2, {{{0.0, 0.0, 1.1}, 5.0, 1.0}}), ConfigError);
    // Negative concentration.
    CHECK_THROWS_AS(Target::vmf_mixture(S2, {{{0.0, 0.0, 1.0}, -1.0, 1.0}}), ConfigError);
    // Wrong manifold family.
    CHECK_THROWS_AS(Target::vmf_mixture(Manifold::torus(1), {{{1.0, 0.0}, 5.0, 1.0}}),
                    ConfigError);
    CHECK_THROWS_AS(Target::wrapped_gaussian_mixture(S2, {{{0.0, 0.0, 1.0}, 0.5, 1.0}}),
                    ConfigError);
    // Zero-scale wrapped component.
    CHECK_THROWS_AS(
        Target::wrapped_gaussian_mixture(Manifold::torus(1), {{{1.0, 0.0}, 0.0, 1.0}}),
        ConfigError);
    // Checkerboard needs the standard 2d hyperboloid.
    CHECK_THROWS_AS(Target::hyperbolic_checkerboard(Manifold::hyperboloid(3)), ConfigError);
    CHECK_THROWS_AS(Target::hyperbolic_checkerboard(Manifold::hyperboloid(2, -2.0)),
                    ConfigError);
    // Improper rotation as an SO(3) mode.
    std::vector<TargetComponent> bad = Target::so3_default_modes(2.0);
    bad[0].mean = {1, 0, 0, 0, 1, 0, 0, 0, -1};
    CHECK_THROWS_AS(Target::so3_multimodal(bad), ConfigError);
    // Empty dataset.
    CHECK_THROWS_AS(Target::dataset(S2, {}), ConfigError);
}

TEST_CASE("dataset target resamples its own points") {
    const Manifold M = Manifold::sphere(1);
    std::vector<std::vector<double>> pts = {{1.0, 0.0}, {0.0, 1.0}, {-1.0, 0.0}};
    const Target t = Target::dataset(M, pts);
    RngStream rng(10, 0);
    std::vector<int> seen(3, 0);
    for (int i = 0; i < 300; ++i) {
        const auto x = t.sample(rng);
        bool found = false;
        for (std::size_t k = 0; k < pts.size(); ++k)
            if (x == pts[k]) {
                seen[k] += 1;
                found = true;
            }
        CHECK(found);
    }
    for (int k = 0; k < 3; ++k) CHECK(seen[std::size_t(k)] > 0);
}

TEST_CASE("csv latlon ingestion maps poles and meridians exactly") {
    const Manifold M = Manifold::sphere(2);
    const std::string path = write_temp_csv("riemdiff_latlon.csv",
                                            "lat,lon\n"
                                            "90,123\n"
                                            "0,0\n"
                                            "0,90\n"
                                            "-45.5, 12.25\n");
    const auto pts = ingest_csv(path, CsvMapping::LatLonToSphere, M);
    REQUIRE(pts.size() == 4);
    CHECK(pts[0][0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(pts[0][2] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(pts[1][0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(pts[2][1] == doctest::Approx(1.0).epsilon(1e-12));
    for (const auto& p : pts) CHECK(on_manifold(M, p));
    std::remove(path.c_str());
}

TEST_CASE("csv angle ingestion honors the degree flag") {
    const Manifold M = Manifold::torus(2);
    const std::string rad = write_temp_csv("riemdiff_rad.csv",
                                           "phi,psi\n"
                                           "3.14159265358979324,0\n");
    const auto prad = ingest_csv(rad, CsvMapping::AnglesToTorus, M);
    REQUIRE(prad.size() == 1);
    CHECK(prad[0][0] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(std::abs(prad[0][1]) < 1e-12);
    CHECK(prad[0][2] == doctest::Approx(1.0).epsilon(1e-12));
    std::remove(rad.c_str());

    const std::string deg = write_temp_csv("riemdiff_deg.csv",
                                           "phi,psi\n"
                                           "180,90\n");
    const auto pdeg = ingest_csv(deg, CsvMapping::AnglesToTorus, M, true);
    REQUIRE(pdeg.size() == 1);
    CHECK(pdeg[0][0] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(pdeg[0][3] == doctest::Approx(1.0).epsilon(1e-12));
    std::remove(deg.c_str());
}

TEST_CASE("csv ingestion reports offending lines") {
    const Manifold S2 = Manifold::sphere(2);
    const std::string bad_lat = write_temp_csv("riemdiff_badlat.csv",
                                               "lat,lon\n"
                                               "10,20\n"
                                               "91,0\n");
    check_io_error_line([&] { ingest_csv(bad_lat, CsvMapping::LatLonToSphere, S2); }, "line 3");
    std::remove(bad_lat.c_str());

    const std::string bad_num = write_temp_csv("riemdiff_badnum.csv",
                                               "lat,lon\n"
                                               "10,east\n");
    check_io_error_line([&] { ingest_csv(bad_num, CsvMapping::LatLonToSphere, S2); }, "line 2");
    std::remove(bad_num.c_str());

    const std::string bad_cols = write_temp_csv("riemdiff_badcols.csv",
                                                "lat,lon\n"
                                                "10,20,30\n");
    check_io_error_line([&] { ingest_csv(bad_cols, CsvMapping::LatLonToSphere, S2); },
                        "expected 2 columns");
    std::remove(bad_cols.c_str());

    const std::string off = write_temp_csv("riemdiff_off.csv",
                                           "x,y,z\n"
                                           "1,0,0\n"
                                           "0.5,0.5,0.5\n");
    check_io_error_line([&] { ingest_csv(off, CsvMapping::AmbientRaw, S2); }, "line 3");
    std::remove(off.c_str());

    CHECK_THROWS_AS(ingest_csv("/tmp/riemdiff_missing_file.csv", CsvMapping::AmbientRaw, S2),
                    IoError);
    const std::string empty = write_temp_csv("riemdiff_empty.csv", "");
    CHECK_THROWS_AS(ingest_csv(empty, CsvMapping::LatLonToSphere, S2), IoError);
    std::remove(empty.c_str());

    // Mapping/manifold mismatches are configuration errors, not file errors.
    CHECK_THROWS_AS(ingest_csv("/tmp/whatever.csv", CsvMapping::LatLonToSphere,
                               Manifold::torus(2)),
                    ConfigError);
}

TEST_SUITE_END();
