#include "riemdiff/divergence.hpp"

#include "riemdiff/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

namespace riemdiff {

namespace {

const ParamValues& empty_params() {
    static const ParamValues none;
    return none;
}

}  // namespace

void field_forward(const FieldHandle& f, Workspace& ws, std::span<const double> x) {
    if (!f.graph) throw ContractError("field_forward: unbound field handle");
    ws.set_input(f.x_node, x);
    for (const auto& [node, vals] : f.bindings) ws.set_input(node, vals);
    ws.forward(f.params ? *f.params : empty_params());
}

Matrix tangent_basis(const Manifold& M, std::span<const double> x, RngStream& rng) {
    const auto m = std::size_t(M.m);
    const auto d = std::size_t(M.d);
    for (int attempt = 0; attempt < 2; ++attempt) {
        Matrix B(m, d);
        std::vector<double> z(m), pz(m);
        for (std::size_t j = 0; j < d; ++j) {
            for (auto& v : z) v = rng.gaussian();
            tangential_projection(M, x, z, pz);
            for (std::size_t i = 0; i < m; ++i) B(i, j) = pz[i];
        }
        try {
            return qr_decompose(B).Q;
        } catch (const RankDeficiencyError&) {
            if (attempt == 1) throw;
        }
    }
    throw NumericError("tangent_basis: unreachable");
}

double divergence_qr(const FieldHandle& f, const Manifold& M, std::span<const double> x,
                     RngStream& rng) {
    Workspace ws(*f.graph);
    return divergence_qr(f, ws, M, x, rng);
}

double divergence_qr(const FieldHandle& f, Workspace& ws, const Manifold& M,
                     std::span<const double> x, RngStream& rng) {
    field_forward(f, ws, x);
    const Matrix Q = tangent_basis(M, x, rng);
    const auto m = std::size_t(M.m);
    std::vector<double> e(m);
    double acc = 0.0;
    for (std::size_t j = 0; j < std::size_t(M.d); ++j) {
        for (std::size_t i = 0; i < m; ++i) e[i] = Q(i, j);
        ws.forward_tangent(f.x_node, e);
        const auto dv = ws.tangent(f.out_node);
        double term = 0.0;
        for (std::size_t i = 0; i < m; ++i) term += e[i] * dv[i];
        acc += term;
    }
    return acc;
}

HutchinsonEstimate divergence_hutchinson(const FieldHandle& f, const Manifold& M,
                                         std::span<const double> x, int n_samples,
                                         ProbeDist dist, RngStream& rng) {
    Workspace ws(*f.graph);
    return divergence_hutchinson(f, ws, M, x, n_samples, dist, rng);
}

HutchinsonEstimate divergence_hutchinson(const FieldHandle& f, Workspace& ws,
                                         const Manifold& M, std::span<const double> x,
                                         int n_samples, ProbeDist dist, RngStream& rng) {
    if (n_samples < 1) throw ContractError("divergence_hutchinson: n_samples must be >= 1");
    field_forward(f, ws, x);
    const auto m = std::size_t(M.m);
    std::vector<double> z(m), pz(m);
    double mean = 0.0, m2 = 0.0;
    for (int i = 0; i < n_samples; ++i) {
        if (dist == ProbeDist::Gaussian)
            for (auto& v : z) v = rng.gaussian();
        else
            for (auto& v : z) v = rng.rademacher();
        tangential_projection(M, x, z, pz);
        ws.forward_tangent(f.x_node, pz);
        const auto dv = ws.tangent(f.out_node);
        double q = 0.0;
        for (std::size_t k = 0; k < m; ++k) q += pz[k] * dv[k];
        // Welford keeps the variance accumulation stable at large n.
        const double delta = q - mean;
        mean += delta / double(i + 1);
        m2 += delta * (q - mean);
    }
    HutchinsonEstimate est;
    est.estimate = mean;
    est.std_error =
        n_samples > 1 ? std::sqrt(m2 / double(n_samples - 1) / double(n_samples)) : 0.0;
    return est;
}

namespace {

// Chart point and the two coordinate fields of the (theta, phi) chart.
void chart_embed(double theta, double phi, double out[3]) {
    out[0] = std::sin(theta) * std::cos(phi);
    out[1] = std::sin(theta) * std::sin(phi);
    out[2] = std::cos(theta);
}

// Chart coefficients (u_theta, u_phi) of an ambient tangent field value v at
// (theta, phi): v = u_theta d_theta(x) + u_phi d_phi(x) with metric
// diag(1, sin^2 theta).
void chart_coefficients(const double v[3], double theta, double phi, double& u_theta,
                        double& u_phi) {
    const double st = std::sin(theta), ct = std::cos(theta);
    const double cp = std::cos(phi), sp = std::sin(phi);
    const double dth[3] = {ct * cp, ct * sp, -st};      // unit length
    const double dph[3] = {-st * sp, st * cp, 0.0};     // length sin(theta)
    u_theta = v[0] * dth[0] + v[1] * dth[1] + v[2] * dth[2];
    u_phi = (v[0] * dph[0] + v[1] * dph[1] + v[2] * dph[2]) / (st * st);
}

}  // namespace

double divergence_intrinsic_sphere2(const FieldHandle& f, std::span<const double> x) {
    if (x.size() != 3) throw ContractError("divergence_intrinsic_sphere2: needs a 3-vector");
    const double theta = std::acos(std::clamp(x[2], -1.0, 1.0));
    const double phi = std::atan2(x[1], x[0]);
    const double st = std::sin(theta);
    if (st <= 1e-3)
        throw ContractError("divergence_intrinsic_sphere2: point too close to a pole");

    Workspace ws(*f.graph);
    auto coeffs = [&](double th, double ph, double& ut, double& up) {
        double p[3], v[3];
        chart_embed(th, ph, p);
        field_forward(f, ws, std::span<const double>(p, 3));
        const auto out = ws.value(f.out_node);
        v[0] = out[0];
        v[1] = out[1];
        v[2] = out[2];
        chart_coefficients(v, th, ph, ut, up);
    };

    // div = (1/sin th) d_th(sin th * u_th) + d_ph(u_ph), central differences.
    const double h = 1e-5;
    double ut_p, up_p, ut_m, up_m;
    coeffs(theta + h, phi, ut_p, up_p);
    coeffs(theta - h, phi, ut_m, up_m);
    const double d_theta_term =
        (std::sin(theta + h) * ut_p - std::sin(theta - h) * ut_m) / (2.0 * h * st);
    coeffs(theta, phi + h, ut_p, up_p);
    coeffs(theta, phi - h, ut_m, up_m);
    const double d_phi_term = (up_p - up_m) / (2.0 * h);
    return d_theta_term + d_phi_term;
}

std::vector<double> tangential_field_self_divergence(const Manifold& M,
                                                     std::span<const double> x,
                                                     RngStream& rng) {
    // One graph reused for every column: V_k(x) = P(x) e_k with e_k bound as
    // a second input.
    Graph g;
    const int x_in = g.input(M.m);
    const int e_in = g.input(M.m);
    const int out = append_projection(M, g, x_in, e_in);

    FieldHandle f;
    f.graph = &g;
    f.x_node = x_in;
    f.out_node = out;

    Workspace ws(g);
    const auto m = std::size_t(M.m);
    std::vector<double> result(m, 0.0), e(m, 0.0), col(m);
    for (std::size_t k = 0; k < m; ++k) {
        e.assign(m, 0.0);
        e[k] = 1.0;
        f.bindings = {{e_in, e}};
        const double div_k = divergence_qr(f, ws, M, x, rng);
        tangential_projection(M, x, e, col);
        for (std::size_t i = 0; i < m; ++i) result[i] += div_k * col[i];
    }
    return result;
}

}  // namespace riemdiff
