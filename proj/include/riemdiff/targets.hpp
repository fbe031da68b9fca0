#pragma once

// Target distributions: synthetic densities to train against and CSV
// ingestion of external datasets into ambient manifold coordinates.
//
// Closed-form log-densities (normalized with respect to the manifold's
// surface measure) exist for the vMF mixture on spheres and the wrapped
// Gaussian mixture on tori. The hyperboloid wrapped Gaussian, checkerboard,
// SO(3) target, and datasets are sampling-only; asking them for a density is
// a contract violation, not a silent zero.

#include "riemdiff/manifold.hpp"
#include "riemdiff/rng.hpp"

#include <span>
#include <string>
#include <vector>

namespace riemdiff {

enum class TargetKind {
    VmfMixture,             // spheres; spread = concentration kappa >= 0
    WrappedGaussianMixture, // tori and hyperboloids; spread = scale sigma > 0
    HyperbolicCheckerboard, // curvature -1 surface, alternating cells
    So3Multimodal,          // mixture of exp(kappa tr(M^T X)) components
    Dataset,                // finite point set, sampled with replacement
};

struct TargetComponent {
    std::vector<double> mean; // ambient, must satisfy the manifold constraint
    double spread = 1.0;      // concentration (vMF, SO(3)) or scale (wrapped)
    double weight = 1.0;      // nonnegative, weights sum to 1 within 1e-12
};

class Target {
public:
    static Target vmf_mixture(const Manifold& M, std::vector<TargetComponent> comps);
    static Target wrapped_gaussian_mixture(const Manifold& M,
                                           std::vector<TargetComponent> comps);
    static Target hyperbolic_checkerboard(const Manifold& M);
    static Target so3_multimodal(std::vector<TargetComponent> comps);
    static Target dataset(const Manifold& M, std::vector<std::vector<double>> points);

    // The four maximally separated rotations (identity and the three axis
    // half-turns), equal weights, shared concentration.
    static std::vector<TargetComponent> so3_default_modes(double kappa);

    const Manifold& manifold() const { return M_; }
    TargetKind kind() const { return kind_; }
    bool has_density() const;

    std::vector<double> sample(RngStream& rng) const;
    std::vector<std::vector<double>> sample_n(RngStream& rng, int n) const;

    // Log-density wrt the manifold measure; throws ContractError for kinds
    // without a closed form.
    double log_density(std::span<const double> x) const;

    const std::vector<TargetComponent>& components() const { return comps_; }
    const std::vector<std::vector<double>>& points() const { return points_; }

private:
    Target(const Manifold& M, TargetKind kind) : M_(M), kind_(kind) {}
    void validate_components() const;
    int pick_component(RngStream& rng) const;

    Manifold M_;
    TargetKind kind_;
    std::vector<TargetComponent> comps_;
    std::vector<std::vector<double>> mean_angles_; // torus: per component
    std::vector<std::vector<double>> points_;      // dataset kind
};

enum class CsvMapping {
    LatLonToSphere, // two columns, degrees: (lat, lon) -> unit vector
    AnglesToTorus,  // d angle columns -> (cos, sin) blocks
    AmbientRaw,     // m columns, checked against the manifold constraint
};

// Reads a CSV (UTF-8, header row required, decimal-point floats) and maps
// each row to an ambient point. Malformed rows, wrong column counts,
// latitudes outside [-90, 90], and off-manifold raw points all raise IoError
// naming the offending line. `degrees` applies to the angle mapping only;
// latitudes and longitudes are always degrees.
std::vector<std::vector<double>> ingest_csv(const std::string& path, CsvMapping mapping,
                                            const Manifold& M, bool degrees = false);

}  // namespace riemdiff
