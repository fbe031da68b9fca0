#include "riemdiff/manifold.hpp"

#include "riemdiff/matrix.hpp"

#include <cmath>

namespace riemdiff {

namespace {
constexpr double kPi = 3.141592653589793238462643383279502884;

void require_point(const Manifold& M, std::span<const double> x, const char* who) {
    if (int(x.size()) != M.m)
        throw ContractError(std::string(who) + ": point has wrong ambient dimension for " + M.name());
}

// Sphere surface area: |S^d| = 2 pi^{(d+1)/2} / Gamma((d+1)/2).
double sphere_log_area(int d) {
    return std::log(2.0) + 0.5 * (d + 1) * std::log(kPi) - std::lgamma(0.5 * (d + 1));
}
} // namespace

Manifold Manifold::sphere(int d) {
    if (d < 1) throw ContractError("sphere dimension must be >= 1");
    return {ManifoldKind::Sphere, d, d + 1};
}

Manifold Manifold::torus(int d) {
    if (d < 1) throw ContractError("torus dimension must be >= 1");
    return {ManifoldKind::Torus, d, 2 * d};
}

Manifold Manifold::hyperboloid(int d, double curvature) {
    if (d < 1) throw ContractError("hyperboloid dimension must be >= 1");
    if (!(curvature < 0.0)) throw ContractError("hyperboloid curvature must be negative");
    Manifold M{ManifoldKind::Hyperboloid, d, d + 1};
    M.curvature = curvature;
    return M;
}

Manifold Manifold::orthogonal(int n) {
    if (n < 2) throw ContractError("orthogonal group order must be >= 2");
    Manifold M{ManifoldKind::Orthogonal, n * (n - 1) / 2, n * n};
    M.n = n;
    return M;
}

std::string Manifold::name() const {
    switch (kind) {
    case ManifoldKind::Sphere: return "sphere(" + std::to_string(d) + ")";
    case ManifoldKind::Torus: return "torus(" + std::to_string(d) + ")";
    case ManifoldKind::Hyperboloid: return "hyperboloid(" + std::to_string(d) + ")";
    case ManifoldKind::Orthogonal: return "orthogonal(" + std::to_string(n) + ")";
    }
    return "?";
}

void tangential_projection(const Manifold& M, std::span<const double> x,
                           std::span<const double> v, std::span<double> out) {
    require_point(M, x, "tangential_projection");
    if (v.size() != x.size() || out.size() != x.size())
        throw ContractError("tangential_projection: vector size mismatch");
    switch (M.kind) {
    case ManifoldKind::Sphere: {
        double xv = 0.0;
        for (int i = 0; i < M.m; ++i) xv += x[i] * v[i];
        for (int i = 0; i < M.m; ++i) out[i] = v[i] - xv * x[i];
        break;
    }
    case ManifoldKind::Torus:
        for (int b = 0; b < M.d; ++b) {
            const double c = x[2 * b], s = x[2 * b + 1];
            const double xv = c * v[2 * b] + s * v[2 * b + 1];
            out[2 * b] = v[2 * b] - xv * c;
            out[2 * b + 1] = v[2 * b + 1] - xv * s;
        }
        break;
    case ManifoldKind::Hyperboloid: {
        // The tangent space is the Euclidean-orthogonal complement of
        // n = (-x0, x1, ..., xd), so this is a plain orthogonal projection.
        double nn = 0.0, nv = 0.0;
        for (int i = 0; i < M.m; ++i) {
            const double ni = (i == 0) ? -x[0] : x[i];
            nn += ni * ni;
            nv += ni * v[i];
        }
        const double c = nv / nn;
        for (int i = 0; i < M.m; ++i) {
            const double ni = (i == 0) ? -x[0] : x[i];
            out[i] = v[i] - c * ni;
        }
        break;
    }
    case ManifoldKind::Orthogonal: {
        // P_X(V) = (V - X V^T X) / 2 in flattened n x n coordinates.
        const int n = M.n;
        std::vector<double> vtx(std::size_t(n) * n, 0.0); // V^T X
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                double acc = 0.0;
                for (int k = 0; k < n; ++k) acc += v[std::size_t(k) * n + i] * x[std::size_t(k) * n + j];
                vtx[std::size_t(i) * n + j] = acc;
            }
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                double acc = 0.0;
                for (int k = 0; k < n; ++k) acc += x[std::size_t(i) * n + k] * vtx[std::size_t(k) * n + j];
                out[std::size_t(i) * n + j] = 0.5 * (v[std::size_t(i) * n + j] - acc);
            }
        break;
    }
    }
}

void closest_point(const Manifold& M, std::span<const double> x, std::span<double> out) {
    require_point(M, x, "closest_point");
    if (out.size() != x.size()) throw ContractError("closest_point: output size mismatch");
    switch (M.kind) {
    case ManifoldKind::Sphere: {
        double nrm = 0.0;
        for (double xi : x) nrm += xi * xi;
        nrm = std::sqrt(nrm);
        if (nrm < 1e-12) throw NumericError("closest_point on sphere: point at the origin");
        for (int i = 0; i < M.m; ++i) out[i] = x[i] / nrm;
        break;
    }
    case ManifoldKind::Torus:
        for (int b = 0; b < M.d; ++b) {
            const double c = x[2 * b], s = x[2 * b + 1];
            const double nrm = std::hypot(c, s);
            if (nrm < 1e-12) throw NumericError("closest_point on torus: circle factor at the origin");
            out[2 * b] = c / nrm;
            out[2 * b + 1] = s / nrm;
        }
        break;
    case ManifoldKind::Hyperboloid: {
        // Lorentz rescaling x / sqrt(K <x,x>_L): the Lorentz-metric closest
        // point on the sheet, defined whenever x stays inside the light cone
        // on the upper branch.
        const double q = lorentz_inner(x, x);
        const double kq = M.curvature * q;
        if (!(kq > 0.0) || !(x[0] > 0.0))
            throw NumericError("closest_point on hyperboloid: point left the upper sheet's cone");
        const double f = 1.0 / std::sqrt(kq);
        for (int i = 0; i < M.m; ++i) out[i] = f * x[i];
        break;
    }
    case ManifoldKind::Orthogonal: {
        const auto n = std::size_t(M.n);
        Matrix A(n, n, {x.begin(), x.end()});
        auto r = svd_square(A);
        // Nearest special-orthogonal matrix: U V^T, flipping the column that
        // belongs to the smallest singular value when det would be -1.
        Matrix R = matmul(r.U, r.V.transposed());
        if (determinant(R) < 0.0) {
            for (int i = 0; i < n; ++i) r.U(std::size_t(i), std::size_t(n - 1)) = -r.U(std::size_t(i), std::size_t(n - 1));
            R = matmul(r.U, r.V.transposed());
        }
        for (int i = 0; i < n * n; ++i) out[std::size_t(i)] = R.a[std::size_t(i)];
        break;
    }
    }
}

double constraint_defect(const Manifold& M, std::span<const double> x) {
    require_point(M, x, "constraint_defect");
    switch (M.kind) {
    case ManifoldKind::Sphere: {
        double nrm2 = 0.0;
        for (double xi : x) nrm2 += xi * xi;
        return std::fabs(nrm2 - 1.0);
    }
    case ManifoldKind::Torus: {
        double worst = 0.0;
        for (int b = 0; b < M.d; ++b) {
            const double nrm2 = x[2 * b] * x[2 * b] + x[2 * b + 1] * x[2 * b + 1];
            worst = std::max(worst, std::fabs(nrm2 - 1.0));
        }
        return worst;
    }
    case ManifoldKind::Hyperboloid: {
        const double q = lorentz_inner(x, x);
        double defect = std::fabs(q - 1.0 / M.curvature);
        if (!(x[0] > 0.0)) defect = std::max(defect, 1.0); // wrong sheet is never "close"
        return defect;
    }
    case ManifoldKind::Orthogonal: {
        const int n = M.n;
        double worst = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                double acc = 0.0;
                for (int k = 0; k < n; ++k) acc += x[std::size_t(k) * n + i] * x[std::size_t(k) * n + j];
                worst = std::max(worst, std::fabs(acc - (i == j ? 1.0 : 0.0)));
            }
        const auto nn = std::size_t(n);
        Matrix A(nn, nn, {x.begin(), x.end()});
        worst = std::max(worst, std::fabs(determinant(A) - 1.0));
        return worst;
    }
    }
    return 0.0;
}

bool on_manifold(const Manifold& M, std::span<const double> x, double tol) {
    return constraint_defect(M, x) <= tol;
}

double prior_log_density(const Manifold& M, std::span<const double> x) {
    require_point(M, x, "prior_log_density");
    switch (M.kind) {
    case ManifoldKind::Sphere:
        return -sphere_log_area(M.d);
    case ManifoldKind::Torus:
        return -double(M.d) * std::log(2.0 * kPi);
    case ManifoldKind::Hyperboloid: {
        // Standard normal over the graph coordinates, re-expressed against
        // the Euclidean-induced area measure of the sheet.
        double r2 = 0.0;
        for (int i = 1; i < M.m; ++i) r2 += x[i] * x[i];
        const double log_normal = -0.5 * double(M.d) * std::log(2.0 * kPi) - 0.5 * r2;
        return log_normal - 0.5 * hyperbolic_log_det_euclidean(M, x);
    }
    case ManifoldKind::Orthogonal:
        if (M.n != 3)
            throw ContractError("uniform prior volume is only pinned for orthogonal(3)");
        return -std::log(8.0 * kPi * kPi);
    }
    return 0.0;
}

void prior_sample(const Manifold& M, RngStream& rng, std::span<double> out) {
    if (int(out.size()) != M.m) throw ContractError("prior_sample: output size mismatch");
    switch (M.kind) {
    case ManifoldKind::Sphere: {
        double nrm2 = 0.0;
        for (int i = 0; i < M.m; ++i) {
            out[i] = rng.gaussian();
            nrm2 += out[i] * out[i];
        }
        const double f = 1.0 / std::sqrt(nrm2);
        for (int i = 0; i < M.m; ++i) out[i] *= f;
        break;
    }
    case ManifoldKind::Torus:
        for (int b = 0; b < M.d; ++b) {
            const double th = 2.0 * kPi * rng.uniform();
            out[2 * b] = std::cos(th);
            out[2 * b + 1] = std::sin(th);
        }
        break;
    case ManifoldKind::Hyperboloid: {
        double r2 = 0.0;
        for (int i = 1; i < M.m; ++i) {
            out[i] = rng.gaussian();
            r2 += out[i] * out[i];
        }
        out[0] = std::sqrt(1.0 / -M.curvature + r2);
        break;
    }
    case ManifoldKind::Orthogonal: {
        // Haar measure: QR of a Gaussian matrix (the nonnegative-diagonal R
        // convention makes Q Haar on O(n)); a final column flip moves the
        // reflection component onto the rotation component.
        const auto n = std::size_t(M.n);
        Matrix A(n, n, rng.gaussian_vector(n * n));
        auto qr = qr_decompose(A);
        if (determinant(qr.Q) < 0.0)
            for (int i = 0; i < n; ++i) qr.Q(std::size_t(i), std::size_t(n - 1)) = -qr.Q(std::size_t(i), std::size_t(n - 1));
        for (int i = 0; i < n * n; ++i) out[std::size_t(i)] = qr.Q.a[std::size_t(i)];
        break;
    }
    }
}

bool has_prior_drift(const Manifold& M) { return M.kind == ManifoldKind::Hyperboloid; }

void prior_drift(const Manifold& M, std::span<const double> x, std::span<double> out) {
    require_point(M, x, "prior_drift");
    if (out.size() != x.size()) throw ContractError("prior_drift: output size mismatch");
    if (M.kind != ManifoldKind::Hyperboloid) {
        std::fill(out.begin(), out.end(), 0.0);
        return;
    }
    // U0 = (1/2) P_x grad of the ambient extension of log p0; with
    // f(xt) = -|xt|^2/2 - (1/2) log((A + 2r)/(A + r)), r = |xt|^2, A = 1/|K|,
    // the chart gradient is  -xt - xt * (2/(A+2r) - 1/(A+r)).
    const double A = 1.0 / -M.curvature;
    double r = 0.0;
    for (int i = 1; i < M.m; ++i) r += x[i] * x[i];
    const double c = 2.0 / (A + 2.0 * r) - 1.0 / (A + r);
    std::vector<double> amb(std::size_t(M.m), 0.0);
    for (int i = 1; i < M.m; ++i) amb[std::size_t(i)] = -x[i] - c * x[i];
    tangential_projection(M, x, amb, out);
    for (int i = 0; i < M.m; ++i) out[i] *= 0.5;
}

double lorentz_inner(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.empty()) throw ContractError("lorentz_inner: size mismatch");
    double s = -a[0] * b[0];
    for (std::size_t i = 1; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double hyperbolic_log_det_euclidean(const Manifold& M, std::span<const double> x) {
    if (M.kind != ManifoldKind::Hyperboloid) throw ContractError("chart log-det needs a hyperboloid");
    require_point(M, x, "hyperbolic_log_det_euclidean");
    double r2 = 0.0;
    for (int i = 1; i < M.m; ++i) r2 += x[i] * x[i];
    return std::log1p(r2 / (x[0] * x[0]));
}

double hyperbolic_log_det_lorentz(const Manifold& M, std::span<const double> x) {
    if (M.kind != ManifoldKind::Hyperboloid) throw ContractError("chart log-det needs a hyperboloid");
    require_point(M, x, "hyperbolic_log_det_lorentz");
    double r2 = 0.0;
    for (int i = 1; i < M.m; ++i) r2 += x[i] * x[i];
    const double v = 1.0 - r2 / (x[0] * x[0]);
    if (!(v > 0.0)) throw NumericError("lorentz chart metric degenerate at this point");
    return std::log(v);
}

double hyperbolic_density_conversion(const Manifold& M, std::span<const double> x,
                                     double logp_euclidean) {
    return logp_euclidean -
           0.5 * (hyperbolic_log_det_lorentz(M, x) - hyperbolic_log_det_euclidean(M, x));
}

int append_projection(const Manifold& M, Graph& g, int x_node, int v_node) {
    if (g.node(x_node).dim != M.m || g.node(v_node).dim != M.m)
        throw ContractError("append_projection: node dimensions do not match the manifold");
    switch (M.kind) {
    case ManifoldKind::Sphere:
        return g.sub(v_node, g.scale(g.dot(x_node, v_node), x_node));
    case ManifoldKind::Torus: {
        std::vector<int> blocks;
        for (int b = 0; b < M.d; ++b) {
            int xb = g.slice(x_node, 2 * b, 2);
            int vb = g.slice(v_node, 2 * b, 2);
            blocks.push_back(g.sub(vb, g.scale(g.dot(xb, vb), xb)));
        }
        return blocks.size() == 1 ? blocks[0] : g.concat(blocks);
    }
    case ManifoldKind::Hyperboloid: {
        int n0 = g.scale_const(-1.0, g.slice(x_node, 0, 1));
        int nrest = g.slice(x_node, 1, M.m - 1);
        int nvec = g.concat({n0, nrest});
        int coef = g.div(g.dot(nvec, v_node), g.dot(nvec, nvec));
        return g.sub(v_node, g.scale(coef, nvec));
    }
    case ManifoldKind::Orthogonal: {
        const int n = M.n;
        int xut = g.matmul(x_node, g.transpose(v_node, n), n);
        int xutx = g.matmul(xut, x_node, n);
        return g.scale_const(0.5, g.sub(v_node, xutx));
    }
    }
    throw ContractError("append_projection: unknown manifold kind");
}

int append_prior_drift(const Manifold& M, Graph& g, int x_node) {
    if (M.kind != ManifoldKind::Hyperboloid) return -1;
    if (g.node(x_node).dim != M.m)
        throw ContractError("append_prior_drift: node dimension does not match the manifold");
    const double A = 1.0 / -M.curvature;
    int xt = g.slice(x_node, 1, M.m - 1);
    int r = g.dot(xt, xt);
    int inv1 = g.div(g.constant({2.0}), g.add_const(A, g.scale_const(2.0, r)));
    int inv2 = g.div(g.constant({1.0}), g.add_const(A, r));
    int c = g.sub(inv1, inv2);
    int grad_t = g.scale_const(-1.0, g.add(xt, g.scale(c, xt)));
    int amb = g.concat({g.constant({0.0}), grad_t});
    // Constants have zero derivative, so the zero time-component is exact.
    int proj = append_projection(M, g, x_node, amb);
    return g.scale_const(0.5, proj);
}

} // namespace riemdiff
