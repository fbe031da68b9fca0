#include "riemdiff/sde.hpp"

#include "riemdiff/common.hpp"
#include "riemdiff/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

namespace riemdiff {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr double kConstraintTol = 1e-8;

void check_on_manifold(const Manifold& M, std::span<const double> x, const char* who) {
    const double defect = constraint_defect(M, x);
    if (!(defect <= kConstraintTol))
        throw NumericError(std::string(who) + ": point left the manifold (defect " +
                           std::to_string(defect) + ")");
}

Graph build_field_graph(const Manifold& M, const NetworkConfig& cfg, double T, int& x_in,
                        int& s_in, int& pa, int& field, int& flow) {
    Graph g;
    x_in = g.input(M.m);
    s_in = g.input(1);
    const int a = append_score_network(g, cfg, x_in, s_in, T);
    pa = append_projection(M, g, x_in, a);
    const int neg_half = g.scale_const(-0.5, pa);
    if (has_prior_drift(M)) {
        const int u0 = append_prior_drift(M, g, x_in);
        field = g.sub(pa, u0);
        flow = g.add(u0, neg_half);
    } else {
        field = pa;
        flow = neg_half;
    }
    return g;
}

}  // namespace

// ------------------------------------------------------------- ProjectedField

ProjectedField::ProjectedField(const Manifold& M, const NetworkConfig& net_cfg,
                               double terminal_time, ParamValues params)
    : M_(M),
      net_cfg_(net_cfg),
      T_(terminal_time),
      params_(std::move(params)),
      g_(build_field_graph(M_, net_cfg_, T_, x_in_, s_in_, pa_, field_, flow_)),
      ws_(g_) {
    if (net_cfg_.ambient_dim != M.m)
        throw ContractError("ProjectedField: network ambient_dim does not match the manifold");
}

ProjectedField::ProjectedField(const ProjectedField& other)
    : M_(other.M_),
      net_cfg_(other.net_cfg_),
      T_(other.T_),
      params_(other.params_),
      g_(other.g_),
      x_in_(other.x_in_),
      s_in_(other.s_in_),
      pa_(other.pa_),
      field_(other.field_),
      flow_(other.flow_),
      ws_(g_) {}

ProjectedField::ProjectedField(ProjectedField&& other)
    : M_(other.M_),
      net_cfg_(std::move(other.net_cfg_)),
      T_(other.T_),
      params_(std::move(other.params_)),
      g_(std::move(other.g_)),
      x_in_(other.x_in_),
      s_in_(other.s_in_),
      pa_(other.pa_),
      field_(other.field_),
      flow_(other.flow_),
      ws_(g_) {}

ProjectedField& ProjectedField::operator=(const ProjectedField& other) {
    if (this == &other) return *this;
    M_ = other.M_;
    net_cfg_ = other.net_cfg_;
    T_ = other.T_;
    params_ = other.params_;
    g_ = other.g_;
    x_in_ = other.x_in_;
    s_in_ = other.s_in_;
    pa_ = other.pa_;
    field_ = other.field_;
    flow_ = other.flow_;
    ws_ = Workspace(g_);
    return *this;
}

ProjectedField& ProjectedField::operator=(ProjectedField&& other) {
    if (this == &other) return *this;
    M_ = other.M_;
    net_cfg_ = std::move(other.net_cfg_);
    T_ = other.T_;
    params_ = std::move(other.params_);
    g_ = std::move(other.g_);
    x_in_ = other.x_in_;
    s_in_ = other.s_in_;
    pa_ = other.pa_;
    field_ = other.field_;
    flow_ = other.flow_;
    ws_ = Workspace(g_);
    return *this;
}

void ProjectedField::run_forward(std::span<const double> x, double s) {
    ws_.set_input(x_in_, x);
    ws_.set_input_scalar(s_in_, s);
    ws_.forward(params_);
}

void ProjectedField::value(std::span<const double> x, double s, std::span<double> out) {
    run_forward(x, s);
    const auto v = ws_.value(pa_);
    std::copy(v.begin(), v.end(), out.begin());
}

void ProjectedField::drift_value(std::span<const double> x, double s, std::span<double> out) {
    run_forward(x, s);
    const auto v = ws_.value(field_);
    std::copy(v.begin(), v.end(), out.begin());
}

double ProjectedField::divergence_at_current(int node, std::span<const double> x,
                                             RngStream& rng) {
    const Matrix Q = tangent_basis(M_, x, rng);
    const auto m = std::size_t(M_.m);
    std::vector<double> e(m);
    double acc = 0.0;
    for (std::size_t j = 0; j < std::size_t(M_.d); ++j) {
        for (std::size_t i = 0; i < m; ++i) e[i] = Q(i, j);
        ws_.forward_tangent(x_in_, e);
        const auto dv = ws_.tangent(node);
        for (std::size_t i = 0; i < m; ++i) acc += e[i] * dv[i];
    }
    return acc;
}

double ProjectedField::divergence(std::span<const double> x, double s, RngStream& rng) {
    run_forward(x, s);
    return divergence_at_current(field_, x, rng);
}

double ProjectedField::value_and_divergence(std::span<const double> x, double s, RngStream& rng,
                                            std::span<double> value_out) {
    run_forward(x, s);
    const auto v = ws_.value(pa_);
    std::copy(v.begin(), v.end(), value_out.begin());
    return divergence_at_current(field_, x, rng);
}

double ProjectedField::flow_value_and_divergence(std::span<const double> x, double s,
                                                 RngStream& rng, std::span<double> value_out) {
    run_forward(x, s);
    const auto v = ws_.value(flow_);
    std::copy(v.begin(), v.end(), value_out.begin());
    return divergence_at_current(flow_, x, rng);
}

// -------------------------------------------------------------- integrators

void heun_step(const Manifold& M, const DriftFn& drift, std::span<const double> x, double t,
               double dt, std::span<const double> dB, bool project, std::span<double> out) {
    const auto m = std::size_t(M.m);
    if (x.size() != m || dB.size() != m || out.size() != m)
        throw ContractError("heun_step: dimension mismatch");

    std::vector<double> f0(m), f1(m), pb0(m), pb1(m), xt(m);
    drift(x, t, f0);
    tangential_projection(M, x, dB, pb0);
    // Predictor: explicit Euler with the projected increment.
    for (std::size_t i = 0; i < m; ++i) xt[i] = x[i] + f0[i] * dt + pb0[i];
    drift(xt, t + dt, f1);
    tangential_projection(M, xt, dB, pb1);
    // Corrector: trapezoid in both the drift and the diffusion coefficient.
    for (std::size_t i = 0; i < m; ++i)
        out[i] = x[i] + 0.5 * (f0[i] + f1[i]) * dt + 0.5 * (pb0[i] + pb1[i]);
    if (project) {
        std::vector<double> proj(m);
        closest_point(M, out, proj);
        std::copy(proj.begin(), proj.end(), out.begin());
        check_on_manifold(M, out, "heun_step");
    }
}

std::vector<double> integrate_sde(const Manifold& M, const DriftFn& drift,
                                  double diffusion_scale, const PathConfig& cfg,
                                  std::span<const double> x0, RngStream& rng,
                                  PathRealization* record) {
    if (cfg.n_steps < 1) throw ContractError("integrate_sde: n_steps must be >= 1");
    if (cfg.terminal_time < 0.0) throw ContractError("integrate_sde: negative terminal time");
    const auto m = std::size_t(M.m);
    std::vector<double> x(x0.begin(), x0.end()), next(m), dB(m);
    check_on_manifold(M, x, "integrate_sde");

    if (record) {
        record->times.clear();
        record->points.clear();
        record->noise.clear();
        record->times.push_back(0.0);
        record->points.push_back(x);
    }
    if (cfg.terminal_time == 0.0) return x;

    const double dt = cfg.terminal_time / cfg.n_steps;
    const double sd = diffusion_scale * std::sqrt(dt);
    for (int k = 0; k < cfg.n_steps; ++k) {
        const double t = dt * k;
        for (auto& b : dB) b = sd * rng.gaussian();
        heun_step(M, drift, x, t, dt, dB, cfg.project_after_step, next);
        x = next;
        if (record) {
            record->times.push_back(dt * (k + 1));
            record->points.push_back(x);
            record->noise.push_back(dB);
        }
    }
    return x;
}

PathRealization simulate_inference(const Manifold& M, const PathConfig& cfg,
                                   std::span<const double> x0, RngStream& rng,
                                   ProjectedField* field) {
    const DriftFn langevin = [&M](std::span<const double> x, double, std::span<double> out) {
        prior_drift(M, x, out);
    };

    PathRealization path;
    if (!field) {
        integrate_sde(M, langevin, 1.0, cfg, x0, rng, &path);
        return path;
    }

    // With a field attached, accumulate the Ito, kinetic and divergence
    // integrals at interval left endpoints while stepping.
    if (cfg.n_steps < 1) throw ContractError("simulate_inference: n_steps must be >= 1");
    const auto m = std::size_t(M.m);
    std::vector<double> x(x0.begin(), x0.end()), next(m), dB(m), a(m);
    check_on_manifold(M, x, "simulate_inference");
    path.times.push_back(0.0);
    path.points.push_back(x);
    if (cfg.terminal_time == 0.0) return path;

    const double dt = cfg.terminal_time / cfg.n_steps;
    const double sd = std::sqrt(dt);
    for (int k = 0; k < cfg.n_steps; ++k) {
        const double s = dt * k;
        const double div = field->value_and_divergence(x, s, rng, a);
        for (auto& b : dB) b = sd * rng.gaussian();
        double a_dot_b = 0.0, a_sq = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            a_dot_b += a[i] * dB[i];
            a_sq += a[i] * a[i];
        }
        path.acc.ito += a_dot_b;
        path.acc.a_norm += 0.5 * a_sq * dt;
        path.acc.divergence += div * dt;
        heun_step(M, langevin, x, s, dt, dB, cfg.project_after_step, next);
        x = next;
        path.times.push_back(dt * (k + 1));
        path.points.push_back(x);
        path.noise.push_back(dB);
    }
    return path;
}

LambdaDynamics lambda_family_drift(double lambda, ProjectedField& field, Direction dir) {
    if (lambda > 1.0)
        throw ContractError("lambda_family_drift: lambda must be <= 1");
    const Manifold& M = field.manifold();
    const double T = field.terminal_time();
    LambdaDynamics dyn;
    dyn.diffusion_scale = std::sqrt(1.0 - lambda);
    if (dir == Direction::Inference) {
        dyn.drift = [&field, &M, lambda](std::span<const double> x, double s,
                                         std::span<double> out) {
            field.value(x, s, out);
            const double c = -0.5 * lambda;
            for (auto& v : out) v *= c;
            if (has_prior_drift(M)) {
                std::vector<double> u0(out.size());
                prior_drift(M, x, u0);
                for (std::size_t i = 0; i < out.size(); ++i) out[i] += u0[i];
            }
        };
    } else {
        dyn.drift = [&field, &M, lambda, T](std::span<const double> x, double t,
                                            std::span<double> out) {
            field.value(x, T - t, out); // the network runs in reversed time
            const double c = 1.0 - 0.5 * lambda;
            for (auto& v : out) v *= c;
            if (has_prior_drift(M)) {
                std::vector<double> u0(out.size());
                prior_drift(M, x, u0);
                for (std::size_t i = 0; i < out.size(); ++i) out[i] -= u0[i];
            }
        };
    }
    return dyn;
}

std::vector<double> simulate_generative(const Manifold& M, ProjectedField& field,
                                        const PathConfig& cfg, RngStream& rng, double lambda) {
    std::vector<double> x0(std::size_t(M.m));
    prior_sample(M, rng, x0);
    const auto dyn = lambda_family_drift(lambda, field, Direction::Generative);
    return integrate_sde(M, dyn.drift, dyn.diffusion_scale, cfg, x0, rng);
}

std::vector<double> direct_torus_brownian(int d, double t, std::span<const double> y0,
                                          RngStream& rng) {
    if (t < 0.0) throw ContractError("direct_torus_brownian: negative time");
    if (int(y0.size()) != 2 * d) throw ContractError("direct_torus_brownian: bad input size");
    std::vector<double> out(y0.size());
    const double sd = std::sqrt(t);
    for (int c = 0; c < d; ++c) {
        const double cos0 = y0[std::size_t(2 * c)], sin0 = y0[std::size_t(2 * c + 1)];
        double angle = std::atan2(sin0, cos0) + sd * rng.gaussian();
        angle -= std::floor(angle / kTwoPi) * kTwoPi;
        out[std::size_t(2 * c)] = std::cos(angle);
        out[std::size_t(2 * c + 1)] = std::sin(angle);
    }
    return out;
}

// ------------------------------------------------------------- adaptive ODE

namespace {

// One deterministic Heun step of the augmented system (x, q).
void heun_ode_step(const Manifold& M, const OdeRhs& rhs, std::span<const double> x, double q,
                   double s, double h, std::vector<double>& x_out, double& q_out) {
    const auto m = x.size();
    std::vector<double> f0(m), f1(m), xt(m), proj(m);
    const double q0 = rhs(x, s, f0);
    for (std::size_t i = 0; i < m; ++i) xt[i] = x[i] + h * f0[i];
    closest_point(M, xt, proj);
    const double q1 = rhs(proj, s + h, f1);
    x_out.resize(m);
    for (std::size_t i = 0; i < m; ++i) x_out[i] = x[i] + 0.5 * h * (f0[i] + f1[i]);
    closest_point(M, x_out, proj);
    x_out = proj;
    q_out = q + 0.5 * h * (q0 + q1);
}

}  // namespace

OdeResult integrate_ode_adaptive(const Manifold& M, const OdeRhs& rhs,
                                 std::span<const double> x0, double s0, double s1, double atol,
                                 double rtol, double min_step) {
    if (s1 < s0) throw ContractError("integrate_ode_adaptive: s1 must be >= s0");
    OdeResult res;
    res.x.assign(x0.begin(), x0.end());
    check_on_manifold(M, res.x, "integrate_ode_adaptive");
    if (s1 == s0) return res;

    double s = s0;
    double h = (s1 - s0) / 16.0; // conservative opening step
    std::vector<double> x_full, x_half, x_two;
    double q_full, q_half, q_two;

    while (s < s1) {
        h = std::min(h, s1 - s);
        if (h < min_step && s + h < s1)
            throw NumericError("integrate_ode_adaptive: step size underflow at s = " +
                               std::to_string(s));

        heun_ode_step(M, rhs, res.x, res.q, s, h, x_full, q_full);
        heun_ode_step(M, rhs, res.x, res.q, s, 0.5 * h, x_half, q_half);
        heun_ode_step(M, rhs, x_half, q_half, s + 0.5 * h, 0.5 * h, x_two, q_two);

        // Scaled max-norm error between the one-step and two-step solutions.
        double err = 0.0;
        for (std::size_t i = 0; i < res.x.size(); ++i) {
            const double scale = atol + rtol * std::fabs(x_two[i]);
            err = std::max(err, std::fabs(x_full[i] - x_two[i]) / scale);
        }
        err = std::max(err, std::fabs(q_full - q_two) / (atol + rtol * std::fabs(q_two)));

        if (err <= 1.0) {
            s += h;
            res.x = x_two;
            res.q = q_two;
            ++res.accepted;
            check_on_manifold(M, res.x, "integrate_ode_adaptive");
        } else {
            ++res.rejected;
        }
        const double factor =
            err > 0.0 ? std::clamp(0.9 * std::pow(1.0 / err, 1.0 / 3.0), 0.2, 5.0) : 5.0;
        h *= factor;
    }
    return res;
}

}  // namespace riemdiff
