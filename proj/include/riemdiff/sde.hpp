#pragma once

// Path dynamics: Stratonovich-Heun integration of the inference (Langevin)
// and generative SDEs, the one-parameter family that trades diffusion for
// drift (deterministic flow at lambda = 1), direct Brownian sampling on
// tori, and an adaptive deterministic integrator with a scalar quadrature
// rider for exact log-densities.
//
// Noise is extrinsic: ambient Gaussian increments projected onto the tangent
// space inside each step, with a closest-point projection after the
// corrector. Every emitted point is constraint-checked; a violation beyond
// 1e-8 is a NumericError, never a silent drift off the manifold.

#include "riemdiff/divergence.hpp"
#include "riemdiff/graph.hpp"
#include "riemdiff/manifold.hpp"
#include "riemdiff/network.hpp"
#include "riemdiff/rng.hpp"

#include <functional>
#include <span>
#include <vector>

namespace riemdiff {

using DriftFn = std::function<void(std::span<const double> x, double t, std::span<double> out)>;

struct PathConfig {
    double terminal_time = 1.0;
    int n_steps = 100;
    bool project_after_step = true;
};

// The learned field composed with the geometry: value() is the projected
// network output P_x a(x, s); drift_value() subtracts the prior drift U0
// (nonzero only on the hyperboloid); divergence() is the Riemannian
// divergence of that drift field, exact via a tangent-basis contraction.
// Owns one graph and workspace; not thread-safe, copy per worker.
class ProjectedField {
public:
    ProjectedField(const Manifold& M, const NetworkConfig& net_cfg, double terminal_time,
                   ParamValues params);
    // The workspace holds a pointer to the owned graph, so the compiler's
    // copies and moves would alias the source object; rebind it instead.
    ProjectedField(const ProjectedField& other);
    ProjectedField(ProjectedField&& other);
    ProjectedField& operator=(const ProjectedField& other);
    ProjectedField& operator=(ProjectedField&& other);

    const Manifold& manifold() const { return M_; }
    const NetworkConfig& network_config() const { return net_cfg_; }
    double terminal_time() const { return T_; }
    const ParamValues& params() const { return params_; }
    void set_params(ParamValues p) { params_ = std::move(p); }

    void value(std::span<const double> x, double s, std::span<double> out);
    void drift_value(std::span<const double> x, double s, std::span<double> out);
    double divergence(std::span<const double> x, double s, RngStream& rng);
    // One forward pass serving both the value and its divergence.
    double value_and_divergence(std::span<const double> x, double s, RngStream& rng,
                                std::span<double> value_out);
    // Same, for the deterministic transport drift U0 - 0.5 P a whose flow
    // carries the exact log-density change.
    double flow_value_and_divergence(std::span<const double> x, double s, RngStream& rng,
                                     std::span<double> value_out);

private:
    void run_forward(std::span<const double> x, double s);
    double divergence_at_current(int node, std::span<const double> x, RngStream& rng);

    Manifold M_;
    NetworkConfig net_cfg_;
    double T_;
    ParamValues params_;
    Graph g_;
    int x_in_, s_in_, pa_, field_, flow_;
    Workspace ws_;
};

void heun_step(const Manifold& M, const DriftFn& drift, std::span<const double> x, double t,
               double dt, std::span<const double> dB, bool project, std::span<double> out);

struct PathAccumulators {
    double ito = 0.0;        // integral of a . dB along the path (left endpoints)
    double a_norm = 0.0;     // integral of 0.5 |a|^2 ds
    double divergence = 0.0; // integral of div_g(P a - U0) ds
};

struct PathRealization {
    std::vector<double> times;
    std::vector<std::vector<double>> points; // one per time, on-manifold
    std::vector<std::vector<double>> noise;  // ambient increments, one per step
    PathAccumulators acc;                    // filled only when a field is attached
};

// Fixed-step integrator; diffusion_scale multiplies the Brownian increments
// (0 gives the deterministic flow). Records the full path when `record` is
// nonnull, otherwise only returns the terminal point.
std::vector<double> integrate_sde(const Manifold& M, const DriftFn& drift,
                                  double diffusion_scale, const PathConfig& cfg,
                                  std::span<const double> x0, RngStream& rng,
                                  PathRealization* record = nullptr);

// Langevin inference path from a data point, s = 0 to terminal_time, drift
// U0. With a field attached the path functionals needed by the bounds are
// accumulated: Ito term a . dB, kinetic term 0.5 |a|^2 ds, and the
// divergence of (P a - U0), all evaluated at interval left endpoints.
PathRealization simulate_inference(const Manifold& M, const PathConfig& cfg,
                                   std::span<const double> x0, RngStream& rng,
                                   ProjectedField* field = nullptr);

// Generative sampler: starts from the prior and integrates the lambda-family
// drift (1 - lambda/2) P a(x, T-t) - U0 with diffusion sqrt(1-lambda).
// lambda = 0 is the plain generative SDE, lambda = 1 the probability-flow ODE.
std::vector<double> simulate_generative(const Manifold& M, ProjectedField& field,
                                        const PathConfig& cfg, RngStream& rng,
                                        double lambda = 0.0);

enum class Direction { Inference, Generative };

struct LambdaDynamics {
    DriftFn drift;
    double diffusion_scale = 1.0;
};

// The marginally equivalent family: inference drift U0 - (lambda/2) S,
// generative drift (1 - lambda/2) S - U0 with S = P a evaluated at reversed
// time, both with diffusion sqrt(1 - lambda). lambda > 1 is rejected.
LambdaDynamics lambda_family_drift(double lambda, ProjectedField& field, Direction dir);

// Exact Brownian terminal sample on the d-torus: per-circle angles advance
// by N(0, t) and wrap, no integration.
std::vector<double> direct_torus_brownian(int d, double t, std::span<const double> y0,
                                          RngStream& rng);

// Right-hand side of an augmented ODE: writes dx/ds and returns dq/ds, the
// scalar rider (a divergence accumulated alongside the flow).
using OdeRhs = std::function<double(std::span<const double> x, double s, std::span<double> dx)>;

struct OdeResult {
    std::vector<double> x;
    double q = 0.0;
    long accepted = 0;
    long rejected = 0;
};

// Step-doubling error control on the deterministic Heun step: a full step
// against two halves, componentwise error against atol + rtol |x|, step
// factor 0.9 (1/err)^(1/3) clamped to [0.2, 5]. Falling below min_step
// raises NumericError (step-size underflow).
OdeResult integrate_ode_adaptive(const Manifold& M, const OdeRhs& rhs,
                                 std::span<const double> x0, double s0, double s1,
                                 double atol = 1e-3, double rtol = 1e-3,
                                 double min_step = 1e-5);

}  // namespace riemdiff
