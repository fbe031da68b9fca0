#include "riemdiff/targets.hpp"

#include "riemdiff/common.hpp"
#include "riemdiff/matrix.hpp"
#include "riemdiff/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <utility>

namespace riemdiff {

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;
constexpr long kMaxRejectionTries = 1000000;

// log |S^{m-1}| for the unit sphere embedded in R^m.
double log_sphere_area(int m) {
    return std::log(2.0) + 0.5 * m * std::log(kPi) - std::lgamma(0.5 * m);
}

// log I_nu(x) for x >= 0, switching to the large-argument asymptotic before
// I_nu itself overflows (it grows like e^x / sqrt(2 pi x)).
double log_bessel_i(double nu, double x) {
    if (x < 600.0) return std::log(std::cyl_bessel_i(nu, x));
    return x - 0.5 * std::log(2.0 * kPi * x) + std::log1p(-(4.0 * nu * nu - 1.0) / (8.0 * x));
}

double vmf_log_normalizer(int m, double kappa) {
    if (kappa <= 1e-12) return -log_sphere_area(m);
    const double half = 0.5 * m;
    return (half - 1.0) * std::log(kappa) - half * std::log(2.0 * kPi) -
           log_bessel_i(half - 1.0, kappa);
}

// Marsaglia-Tsang gamma sampler, shape >= 1, unit rate.
double gamma_variate(RngStream& rng, double shape) {
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        const double z = rng.gaussian();
        const double f = 1.0 + c * z;
        if (f <= 0.0) continue;
        const double v = f * f * f;
        const double u = rng.uniform_pos();
        if (u < 1.0 - 0.0331 * z * z * z * z) return d * v;
        if (std::log(u) < 0.5 * z * z + d * (1.0 - v + std::log(v))) return d * v;
    }
}

double symmetric_beta_variate(RngStream& rng, double shape) {
    const double g1 = gamma_variate(rng, shape);
    const double g2 = gamma_variate(rng, shape);
    return g1 / (g1 + g2);
}

std::vector<double> uniform_sphere_point(RngStream& rng, int m) {
    for (;;) {
        std::vector<double> g = rng.gaussian_vector(std::size_t(m));
        double n2 = 0.0;
        for (double v : g) n2 += v * v;
        if (n2 < 1e-24) continue;
        const double inv = 1.0 / std::sqrt(n2);
        for (double& v : g) v *= inv;
        return g;
    }
}

// Best-Fisher rejection sampler for the circle (wrapped Cauchy envelope).
double von_mises_angle(RngStream& rng, double mean_angle, double kappa) {
    const double a = 1.0 + std::sqrt(1.0 + 4.0 * kappa * kappa);
    const double b = (a - std::sqrt(2.0 * a)) / (2.0 * kappa);
    const double r = (1.0 + b * b) / (2.0 * b);
    for (long tries = 0; tries < kMaxRejectionTries; ++tries) {
        const double u1 = rng.uniform_pos();
        const double z = std::cos(kPi * u1);
        const double f = (1.0 + r * z) / (r + z);
        const double c = kappa * (r - f);
        const double u2 = rng.uniform_pos();
        if (c * (2.0 - c) - u2 > 0.0 || std::log(c / u2) + 1.0 - c >= 0.0) {
            const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
            return mean_angle + sign * std::acos(std::clamp(f, -1.0, 1.0));
        }
    }
    throw NumericError("von Mises sampler stalled");
}

// Wood's rejection sampler for the tangent-normal decomposition on S^{m-1},
// m >= 3: draw the cosine w against the mean, then a uniform direction in
// the orthogonal subsphere.
std::vector<double> vmf_point(RngStream& rng, const std::vector<double>& mu, double kappa) {
    const int m = int(mu.size());
    if (kappa <= 1e-12) return uniform_sphere_point(rng, m);
    if (m == 2) {
        const double theta = von_mises_angle(rng, std::atan2(mu[1], mu[0]), kappa);
        return {std::cos(theta), std::sin(theta)};
    }

    const double dim = double(m - 1);
    const double b = (-2.0 * kappa + std::sqrt(4.0 * kappa * kappa + dim * dim)) / dim;
    const double x0 = (1.0 - b) / (1.0 + b);
    const double c = kappa * x0 + dim * std::log(1.0 - x0 * x0);
    double w = 0.0;
    bool accepted = false;
    for (long tries = 0; tries < kMaxRejectionTries; ++tries) {
        const double z = symmetric_beta_variate(rng, 0.5 * dim);
        const double u = rng.uniform_pos();
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        if (kappa * w + dim * std::log(1.0 - x0 * w) - c >= std::log(u)) {
            accepted = true;
            break;
        }
    }
    if (!accepted) throw NumericError("vMF sampler stalled");

    // Uniform direction orthogonal to mu.
    const auto um = std::size_t(m);
    std::vector<double> v(um);
    for (;;) {
        v = rng.gaussian_vector(um);
        double dotmu = 0.0;
        for (int i = 0; i < m; ++i) dotmu += v[std::size_t(i)] * mu[std::size_t(i)];
        double n2 = 0.0;
        for (int i = 0; i < m; ++i) {
            v[std::size_t(i)] -= dotmu * mu[std::size_t(i)];
            n2 += v[std::size_t(i)] * v[std::size_t(i)];
        }
        if (n2 < 1e-24) continue;
        const double inv = 1.0 / std::sqrt(n2);
        for (double& t : v) t *= inv;
        break;
    }

    std::vector<double> x(um);
    const double sine = std::sqrt(std::max(0.0, 1.0 - w * w));
    for (int i = 0; i < m; ++i) x[std::size_t(i)] = w * mu[std::size_t(i)] + sine * v[std::size_t(i)];
    return x;
}

std::vector<double> haar_so3(RngStream& rng) {
    const auto n = std::size_t(3);
    const Matrix G(n, n, rng.gaussian_vector(n * n));
    Matrix Q = qr_decompose(G).Q;
    if (determinant(Q) < 0.0)
        for (std::size_t i = 0; i < n; ++i) Q(i, 2) = -Q(i, 2);
    std::vector<double> x(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) x[i * n + j] = Q(i, j);
    return x;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_cell(const std::string& cell, long line_no) {
    const std::string t = trim(cell);
    if (t.empty())
        throw IoError("ingest_csv: line " + std::to_string(line_no) + ": empty field");
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(t, &pos);
    } catch (const std::exception&) {
        throw IoError("ingest_csv: line " + std::to_string(line_no) + ": cannot parse '" + t +
                      "' as a number");
    }
    if (pos != t.size() || !std::isfinite(v))
        throw IoError("ingest_csv: line " + std::to_string(line_no) + ": cannot parse '" + t +
                      "' as a number");
    return v;
}

}  // namespace

// ------------------------------------------------------------ construction

void Target::validate_components() const {
    if (comps_.empty()) throw ConfigError("target needs at least one component");
    double total = 0.0;
    for (const auto& c : comps_) {
        if (!(c.weight >= 0.0)) throw ConfigError("target component weight must be nonnegative");
        total += c.weight;
        if (int(c.mean.size()) != M_.m)
            throw ConfigError("target component mean has wrong dimension for " + M_.name());
        if (!on_manifold(M_, c.mean))
            throw ConfigError("target component mean does not satisfy the " + M_.name() +
                              " constraint");
    }
    if (std::fabs(total - 1.0) > 1e-12)
        throw ConfigError("target component weights must sum to 1 within 1e-12");
}

Target Target::vmf_mixture(const Manifold& M, std::vector<TargetComponent> comps) {
    if (M.kind != ManifoldKind::Sphere)
        throw ConfigError("vmf-mixture target requires a sphere manifold");
    Target t(M, TargetKind::VmfMixture);
    t.comps_ = std::move(comps);
    t.validate_components();
    for (const auto& c : t.comps_)
        if (!(c.spread >= 0.0)) throw ConfigError("vMF concentration must be nonnegative");
    return t;
}

Target Target::wrapped_gaussian_mixture(const Manifold& M, std::vector<TargetComponent> comps) {
    const bool torus = M.kind == ManifoldKind::Torus;
    const bool hyper = M.kind == ManifoldKind::Hyperboloid && M.curvature == -1.0;
    if (!torus && !hyper)
        throw ConfigError(
            "wrapped-gaussian-mixture target requires a torus or a curvature -1 hyperboloid");
    Target t(M, TargetKind::WrappedGaussianMixture);
    t.comps_ = std::move(comps);
    t.validate_components();
    for (const auto& c : t.comps_)
        if (!(c.spread > 0.0)) throw ConfigError("wrapped Gaussian scale must be positive");
    if (torus) {
        t.mean_angles_.reserve(t.comps_.size());
        for (const auto& c : t.comps_) {
            std::vector<double> angles(std::size_t(M.d));
            for (int j = 0; j < M.d; ++j)
                angles[std::size_t(j)] =
                    std::atan2(c.mean[std::size_t(2 * j + 1)], c.mean[std::size_t(2 * j)]);
            t.mean_angles_.push_back(std::move(angles));
        }
    }
    return t;
}

Target Target::hyperbolic_checkerboard(const Manifold& M) {
    if (M.kind != ManifoldKind::Hyperboloid || M.d != 2 || M.curvature != -1.0)
        throw ConfigError(
            "hyperbolic-checkerboard target requires the curvature -1 hyperboloid of dimension 2");
    return Target(M, TargetKind::HyperbolicCheckerboard);
}

Target Target::so3_multimodal(std::vector<TargetComponent> comps) {
    Target t(Manifold::orthogonal(3), TargetKind::So3Multimodal);
    t.comps_ = std::move(comps);
    t.validate_components();
    for (const auto& c : t.comps_) {
        if (!(c.spread >= 0.0)) throw ConfigError("SO(3) concentration must be nonnegative");
        // The proper rotations are the det +1 sheet of the constraint set.
        const auto n = std::size_t(3);
        Matrix R(n, n, {c.mean.begin(), c.mean.end()});
        if (determinant(R) < 0.0)
            throw ConfigError("SO(3) target mode must be a proper rotation (det +1)");
    }
    return t;
}

std::vector<TargetComponent> Target::so3_default_modes(double kappa) {
    const std::vector<std::vector<double>> modes = {
        {1, 0, 0, 0, 1, 0, 0, 0, 1},
        {1, 0, 0, 0, -1, 0, 0, 0, -1},
        {-1, 0, 0, 0, 1, 0, 0, 0, -1},
        {-1, 0, 0, 0, -1, 0, 0, 0, 1},
    };
    std::vector<TargetComponent> comps;
    comps.reserve(modes.size());
    for (const auto& mvals : modes) comps.push_back({mvals, kappa, 0.25});
    return comps;
}

Target Target::dataset(const Manifold& M, std::vector<std::vector<double>> points) {
    if (points.empty()) throw ConfigError("dataset target needs at least one point");
    Target t(M, TargetKind::Dataset);
    for (const auto& p : points) {
        if (int(p.size()) != M.m) throw ConfigError("dataset point has wrong dimension");
        if (!on_manifold(M, p))
            throw ConfigError("dataset point does not satisfy the " + M.name() + " constraint");
    }
    t.points_ = std::move(points);
    return t;
}

// ---------------------------------------------------------------- sampling

bool Target::has_density() const {
    switch (kind_) {
    case TargetKind::VmfMixture: return true;
    case TargetKind::WrappedGaussianMixture: return M_.kind == ManifoldKind::Torus;
    default: return false;
    }
}

int Target::pick_component(RngStream& rng) const {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < comps_.size(); ++i) {
        acc += comps_[i].weight;
        if (u < acc) return int(i);
    }
    return int(comps_.size()) - 1;
}

std::vector<double> Target::sample(RngStream& rng) const {
    switch (kind_) {
    case TargetKind::VmfMixture: {
        const auto& c = comps_[std::size_t(pick_component(rng))];
        return vmf_point(rng, c.mean, c.spread);
    }
    case TargetKind::WrappedGaussianMixture: {
        const int k = pick_component(rng);
        const auto& c = comps_[std::size_t(k)];
        if (M_.kind == ManifoldKind::Torus) {
            std::vector<double> x(std::size_t(M_.m));
            for (int j = 0; j < M_.d; ++j) {
                const double theta = mean_angles_[std::size_t(k)][std::size_t(j)] +
                                     c.spread * rng.gaussian();
                x[std::size_t(2 * j)] = std::cos(theta);
                x[std::size_t(2 * j + 1)] = std::sin(theta);
            }
            return x;
        }
        // Hyperboloid: Gaussian in the tangent space at the apex, parallel
        // transported to the mean, pushed through the exponential map. The
        // geodesic distance from the mean is exactly the tangent norm.
        const auto m = std::size_t(M_.m);
        const auto& mu = c.mean;
        std::vector<double> v(m, 0.0);
        for (std::size_t i = 1; i < m; ++i) v[i] = c.spread * rng.gaussian();
        const double alpha = mu[0]; // -<mu0, mu>_L with mu0 the apex
        double muv = 0.0;
        for (std::size_t i = 1; i < m; ++i) muv += mu[i] * v[i];
        std::vector<double> w(m);
        for (std::size_t i = 0; i < m; ++i) {
            const double apex = (i == 0) ? 1.0 : 0.0;
            w[i] = v[i] + muv / (alpha + 1.0) * (apex + mu[i]);
        }
        const double r2 = lorentz_inner(w, w);
        const double r = std::sqrt(std::max(0.0, r2));
        std::vector<double> x(m);
        if (r < 1e-12) {
            x = mu;
        } else {
            const double ch = std::cosh(r), sh = std::sinh(r) / r;
            for (std::size_t i = 0; i < m; ++i) x[i] = ch * mu[i] + sh * w[i];
        }
        std::vector<double> clean(m);
        closest_point(M_, x, clean);
        return clean;
    }
    case TargetKind::HyperbolicCheckerboard: {
        // Uniform over the dark cells of a 4x4 board in the spatial graph
        // coordinates: propose uniformly on the square, thin by 1/x0 to turn
        // coordinate area into hyperbolic area.
        for (long tries = 0; tries < kMaxRejectionTries; ++tries) {
            const double x1 = -3.0 + 6.0 * rng.uniform();
            const double x2 = -3.0 + 6.0 * rng.uniform();
            const int ci = int((x1 + 3.0) / 1.5);
            const int cj = int((x2 + 3.0) / 1.5);
            if ((ci + cj) % 2 != 0) continue;
            const double x0 = std::sqrt(1.0 + x1 * x1 + x2 * x2);
            if (rng.uniform() * x0 < 1.0) return {x0, x1, x2};
        }
        throw NumericError("checkerboard sampler stalled");
    }
    case TargetKind::So3Multimodal: {
        const auto& c = comps_[std::size_t(pick_component(rng))];
        if (c.spread <= 1e-12) return haar_so3(rng);
        for (long tries = 0; tries < kMaxRejectionTries; ++tries) {
            std::vector<double> x = haar_so3(rng);
            double tr = 0.0;
            for (std::size_t i = 0; i < 9; ++i) tr += c.mean[i] * x[i];
            if (std::log(rng.uniform_pos()) < c.spread * (tr - 3.0)) return x;
        }
        throw NumericError("SO(3) sampler stalled (concentration too large for rejection)");
    }
    case TargetKind::Dataset: {
        const auto n = points_.size();
        const auto idx = std::min(n - 1, std::size_t(rng.uniform() * double(n)));
        return points_[idx];
    }
    }
    throw ContractError("Target::sample: unreachable");
}

std::vector<std::vector<double>> Target::sample_n(RngStream& rng, int n) const {
    if (n < 0) throw ContractError("Target::sample_n: negative count");
    std::vector<std::vector<double>> out;
    out.reserve(std::size_t(n));
    for (int i = 0; i < n; ++i) out.push_back(sample(rng));
    return out;
}

// ----------------------------------------------------------------- density

double Target::log_density(std::span<const double> x) const {
    if (!has_density())
        throw ContractError("target kind has no closed-form density");
    if (int(x.size()) != M_.m) throw ContractError("log_density: point dimension mismatch");
    if (!on_manifold(M_, x)) throw ContractError("log_density: point is off the manifold");

    std::vector<double> terms;
    terms.reserve(comps_.size());
    if (kind_ == TargetKind::VmfMixture) {
        for (const auto& c : comps_) {
            if (c.weight == 0.0) continue;
            double dot = 0.0;
            for (int i = 0; i < M_.m; ++i) dot += c.mean[std::size_t(i)] * x[std::size_t(i)];
            terms.push_back(std::log(c.weight) + vmf_log_normalizer(M_.m, c.spread) +
                            c.spread * dot);
        }
    } else {
        for (std::size_t k = 0; k < comps_.size(); ++k) {
            const auto& c = comps_[k];
            if (c.weight == 0.0) continue;
            double lp = std::log(c.weight);
            for (int j = 0; j < M_.d; ++j) {
                const double theta =
                    std::atan2(x[std::size_t(2 * j + 1)], x[std::size_t(2 * j)]);
                lp += wrapped_normal_log_density(theta, mean_angles_[k][std::size_t(j)],
                                                 c.spread);
            }
            terms.push_back(lp);
        }
    }
    return log_sum_exp(terms);
}

// --------------------------------------------------------------- ingestion

std::vector<std::vector<double>> ingest_csv(const std::string& path, CsvMapping mapping,
                                            const Manifold& M, bool degrees) {
    if (mapping == CsvMapping::LatLonToSphere &&
        (M.kind != ManifoldKind::Sphere || M.m != 3))
        throw ConfigError("latlon mapping requires the 2-sphere");
    if (mapping == CsvMapping::AnglesToTorus && M.kind != ManifoldKind::Torus)
        throw ConfigError("angles mapping requires a torus");

    std::ifstream in(path);
    if (!in) throw IoError("ingest_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw IoError("ingest_csv: " + path + " is empty (header row required)");

    int want = 0;
    switch (mapping) {
    case CsvMapping::LatLonToSphere: want = 2; break;
    case CsvMapping::AnglesToTorus: want = M.d; break;
    case CsvMapping::AmbientRaw: want = M.m; break;
    }

    std::vector<std::vector<double>> out;
    long line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        std::vector<double> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(parse_cell(cell, line_no));
        if (int(cells.size()) != want)
            throw IoError("ingest_csv: line " + std::to_string(line_no) + ": expected " +
                          std::to_string(want) + " columns, got " + std::to_string(cells.size()));

        std::vector<double> p;
        switch (mapping) {
        case CsvMapping::LatLonToSphere: {
            const double lat = cells[0], lon = cells[1];
            if (lat < -90.0 || lat > 90.0)
                throw IoError("ingest_csv: line " + std::to_string(line_no) + ": latitude " +
                              std::to_string(lat) + " outside [-90, 90]");
            const double la = lat * kPi / 180.0, lo = lon * kPi / 180.0;
            p = {std::cos(la) * std::cos(lo), std::cos(la) * std::sin(lo), std::sin(la)};
            break;
        }
        case CsvMapping::AnglesToTorus: {
            p.resize(std::size_t(2 * M.d));
            for (int j = 0; j < M.d; ++j) {
                const double theta = degrees ? cells[std::size_t(j)] * kPi / 180.0
                                             : cells[std::size_t(j)];
                p[std::size_t(2 * j)] = std::cos(theta);
                p[std::size_t(2 * j + 1)] = std::sin(theta);
            }
            break;
        }
        case CsvMapping::AmbientRaw: {
            p = cells;
            const double defect = constraint_defect(M, p);
            if (!(defect <= 1e-8))
                throw IoError("ingest_csv: line " + std::to_string(line_no) +
                              ": point is off the manifold (defect " + std::to_string(defect) +
                              ")");
            break;
        }
        }
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace riemdiff
