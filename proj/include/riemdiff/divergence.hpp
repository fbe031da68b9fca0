#pragma once

// Riemannian divergence of ambient vector fields, three ways: an exact
// QR-basis contraction (d tangent sweeps), a projected Hutchinson estimator
// (unbiased, any sample count), and a spherical-chart oracle used only to
// cross-check the other two in tests. All fields are Graph outputs so the
// same machinery differentiates analytic test fields and the score network.

#include "riemdiff/graph.hpp"
#include "riemdiff/manifold.hpp"
#include "riemdiff/matrix.hpp"
#include "riemdiff/rng.hpp"

#include <span>
#include <utility>
#include <vector>

namespace riemdiff {

// A view of one vector field inside a graph: differentiate the out_node with
// respect to x_node; any other inputs (time, constants under test) are set
// from `bindings` before each evaluation. params may be null for graphs
// without parameters.
struct FieldHandle {
    const Graph* graph = nullptr;
    int x_node = -1;
    int out_node = -1;
    const ParamValues* params = nullptr;
    std::vector<std::pair<int, std::vector<double>>> bindings;
};

// Evaluate the field's primal pass at x (inputs bound, params loaded).
void field_forward(const FieldHandle& f, Workspace& ws, std::span<const double> x);

// An orthonormal tangent basis at x as columns of an m-by-d matrix: project
// d ambient Gaussian draws, then QR. Rank deficiency is retried once with
// fresh draws before the error escapes.
Matrix tangent_basis(const Manifold& M, std::span<const double> x, RngStream& rng);

// Exact divergence sum_j e_j^T (dv/dx) e_j over an orthonormal tangent
// basis; the value does not depend on which basis the draw produces. The
// workspace overloads avoid re-allocating arenas in integration loops.
double divergence_qr(const FieldHandle& f, const Manifold& M, std::span<const double> x,
                     RngStream& rng);
double divergence_qr(const FieldHandle& f, Workspace& ws, const Manifold& M,
                     std::span<const double> x, RngStream& rng);

enum class ProbeDist { Gaussian, Rademacher };

struct HutchinsonEstimate {
    double estimate = 0.0;
    double std_error = 0.0;
};

// Unbiased divergence estimate mean_i z_i'^T (dv/dx) z_i' with z' = P_x z.
HutchinsonEstimate divergence_hutchinson(const FieldHandle& f, const Manifold& M,
                                         std::span<const double> x, int n_samples,
                                         ProbeDist dist, RngStream& rng);
HutchinsonEstimate divergence_hutchinson(const FieldHandle& f, Workspace& ws,
                                         const Manifold& M, std::span<const double> x,
                                         int n_samples, ProbeDist dist, RngStream& rng);

// Chart-based oracle on the unit 2-sphere: pulls the field into spherical
// coordinates and applies the metric divergence formula with central
// differences (step 1e-5). Requires sin(theta) > 1e-3; throws ContractError
// near the poles. Test use only.
double divergence_intrinsic_sphere2(const FieldHandle& f, std::span<const double> x);

// sum_k (div_g V_k) V_k where V_k are the columns of the projection at x,
// each treated as a field of x. The tangential-projection diffusion makes
// this vanish identically; returning it lets tests assert the norm.
std::vector<double> tangential_field_self_divergence(const Manifold& M,
                                                     std::span<const double> x,
                                                     RngStream& rng);

}  // namespace riemdiff
