#pragma once

// Embedded manifolds in ambient coordinates. Everything downstream (the SDE
// integrator, the divergence estimators, the objective) talks to a manifold
// through three primitives: the tangential projection P_x, the closest-point
// retraction, and the reference prior (uniform on the compact kernels, a
// chart-standard-normal on the hyperboloid). The metric is the one induced
// by the ambient Euclidean embedding throughout.

#include "riemdiff/graph.hpp"
#include "riemdiff/rng.hpp"

#include <span>
#include <string>
#include <vector>

namespace riemdiff {

enum class ManifoldKind { Sphere, Torus, Hyperboloid, Orthogonal };

struct Manifold {
    ManifoldKind kind;
    int d = 0;               // intrinsic dimension
    int m = 0;               // ambient dimension
    double curvature = -1.0; // hyperboloid only (K < 0)
    int n = 0;               // orthogonal group order; points are flattened n x n

    static Manifold sphere(int d);
    static Manifold torus(int d);
    static Manifold hyperboloid(int d, double curvature = -1.0);
    static Manifold orthogonal(int n);

    std::string name() const;
};

// P_x v: orthogonal projection of an ambient vector onto the tangent space.
void tangential_projection(const Manifold& M, std::span<const double> x,
                           std::span<const double> v, std::span<double> out);

// Retraction back onto the manifold (normalization / per-circle normalization
// / Lorentz rescaling / special-orthogonal SVD projection).
void closest_point(const Manifold& M, std::span<const double> x, std::span<double> out);

// Max constraint violation at x (0 on the manifold).
double constraint_defect(const Manifold& M, std::span<const double> x);
bool on_manifold(const Manifold& M, std::span<const double> x, double tol = 1e-8);

double prior_log_density(const Manifold& M, std::span<const double> x);
void prior_sample(const Manifold& M, RngStream& rng, std::span<double> out);

// Drift of the reference (prior-stationary Langevin) inference process:
// U0 = (1/2) grad_g log p0. Identically zero on the compact kernels.
void prior_drift(const Manifold& M, std::span<const double> x, std::span<double> out);
bool has_prior_drift(const Manifold& M); // true only for the hyperboloid

// Minkowski pairing <a,b> = -a0*b0 + a1*b1 + ... (hyperboloid ambient form).
double lorentz_inner(std::span<const double> a, std::span<const double> b);

// log-dets of the chart metric G in graph coordinates (x1..xd), for the
// Euclidean-induced and Lorentz-induced embeddings, evaluated at ambient x.
double hyperbolic_log_det_euclidean(const Manifold& M, std::span<const double> x);
double hyperbolic_log_det_lorentz(const Manifold& M, std::span<const double> x);

// Re-expresses a log-density from the Euclidean-induced area measure to the
// Lorentz-induced one: logp_L = logp_E - (1/2) log(|G_L| / |G_E|).
double hyperbolic_density_conversion(const Manifold& M, std::span<const double> x,
                                     double logp_euclidean);

// Graph builders: append the projection (resp. prior drift) of existing
// nodes to g, so fields stay differentiable end to end. append_prior_drift
// returns -1 on manifolds whose prior drift is identically zero.
int append_projection(const Manifold& M, Graph& g, int x_node, int v_node);
int append_prior_drift(const Manifold& M, Graph& g, int x_node);

} // namespace riemdiff
