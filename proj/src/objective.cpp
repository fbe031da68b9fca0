#include "riemdiff/objective.hpp"

#include "riemdiff/common.hpp"
#include "riemdiff/divergence.hpp"
#include "riemdiff/matrix.hpp"
#include "riemdiff/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iostream>
#include <utility>

namespace riemdiff {

namespace {

// Clamp base draws away from the endpoints where logit blows up. At 1e-12 the
// flow still covers all but an immeasurable sliver of (0, T).
constexpr double kBaseClamp = 1e-12;

// Slot layout per sigmoidal layer, in append order. identity_params and the
// graph builder below must agree on this.
constexpr int kSlotsPerLayer = 3; // raw slopes, biases, raw weights

int append_logit(Graph& g, int y) {
    const int one_minus = g.add_const(1.0, g.scale_const(-1.0, y));
    return g.sub(g.log(y), g.log(one_minus));
}

}  // namespace

// --------------------------------------------------------------- proposal

void ProposalConfig::validate() const {
    if (layers < 1) throw ConfigError("proposal layers must be at least 1");
    if (units < 1) throw ConfigError("proposal units must be at least 1");
}

TimeProposal::TimeProposal(ProposalConfig cfg, double terminal_time) : cfg_(cfg), T_(terminal_time), ws_(g_) {
    cfg_.validate();
    if (!(T_ > 0.0) || !std::isfinite(T_))
        throw ConfigError("proposal terminal time must be positive and finite");

    const auto units = std::size_t(cfg_.units);
    u_in_ = g_.input(1);
    const int ones = g_.constant(std::vector<double>(units, 1.0));
    const int unit_one = g_.constant({1.0});

    int z = append_logit(g_, u_in_);
    int y = -1;
    for (int l = 0; l < cfg_.layers; ++l) {
        const int raw_slope = g_.param(cfg_.units);
        const int bias = g_.param(cfg_.units);
        const int raw_weight = g_.param(cfg_.units);
        // Positive slopes and convex weights keep the layer strictly
        // increasing, so the stacked map is invertible by construction.
        const int zb = g_.scale(z, ones);
        const int pre = g_.add(g_.mul(g_.softplus(raw_slope), zb), bias);
        const int sig = g_.sigmoid(pre);
        const int ew = g_.exp(raw_weight);
        const int inv_sum = g_.div(unit_one, g_.sum(ew));
        const int w = g_.scale(inv_sum, ew);
        y = g_.dot(w, sig);
        if (l + 1 < cfg_.layers) z = append_logit(g_, y);
    }
    s_out_ = g_.scale_const(T_, y);

    ws_ = Workspace(g_);
    params_ = identity_params(cfg_);
    opt_m_ = g_.make_params_zero();
    opt_v_ = g_.make_params_zero();
}

TimeProposal::TimeProposal(const TimeProposal& other)
    : cfg_(other.cfg_),
      T_(other.T_),
      g_(other.g_),
      u_in_(other.u_in_),
      s_out_(other.s_out_),
      params_(other.params_),
      ws_(g_),
      opt_m_(other.opt_m_),
      opt_v_(other.opt_v_),
      opt_steps_(other.opt_steps_) {}

TimeProposal::TimeProposal(TimeProposal&& other)
    : cfg_(std::move(other.cfg_)),
      T_(other.T_),
      g_(std::move(other.g_)),
      u_in_(other.u_in_),
      s_out_(other.s_out_),
      params_(std::move(other.params_)),
      ws_(g_),
      opt_m_(std::move(other.opt_m_)),
      opt_v_(std::move(other.opt_v_)),
      opt_steps_(other.opt_steps_) {}

TimeProposal& TimeProposal::operator=(const TimeProposal& other) {
    if (this == &other) return *this;
    cfg_ = other.cfg_;
    T_ = other.T_;
    g_ = other.g_;
    u_in_ = other.u_in_;
    s_out_ = other.s_out_;
    params_ = other.params_;
    ws_ = Workspace(g_);
    opt_m_ = other.opt_m_;
    opt_v_ = other.opt_v_;
    opt_steps_ = other.opt_steps_;
    return *this;
}

TimeProposal& TimeProposal::operator=(TimeProposal&& other) {
    if (this == &other) return *this;
    cfg_ = std::move(other.cfg_);
    T_ = other.T_;
    g_ = std::move(other.g_);
    u_in_ = other.u_in_;
    s_out_ = other.s_out_;
    params_ = std::move(other.params_);
    ws_ = Workspace(g_);
    opt_m_ = std::move(other.opt_m_);
    opt_v_ = std::move(other.opt_v_);
    opt_steps_ = other.opt_steps_;
    return *this;
}

ParamValues TimeProposal::identity_params(const ProposalConfig& cfg) {
    cfg.validate();
    // softplus(log(e - 1)) = 1 and zero weights average identical sigmoids,
    // so every layer is sigmoid(z) and the stack collapses to s = T u.
    const double unit_slope = std::log(std::exp(1.0) - 1.0);
    const auto units = std::size_t(cfg.units);
    ParamValues p;
    p.slots.reserve(std::size_t(cfg.layers) * kSlotsPerLayer);
    for (int l = 0; l < cfg.layers; ++l) {
        p.slots.emplace_back(units, unit_slope);
        p.slots.emplace_back(units, 0.0);
        p.slots.emplace_back(units, 0.0);
    }
    return p;
}

void TimeProposal::set_params(ParamValues p) {
    const auto want = std::size_t(cfg_.layers) * kSlotsPerLayer;
    if (p.slots.size() != want) throw ContractError("TimeProposal::set_params: slot count mismatch");
    for (const auto& s : p.slots)
        if (s.size() != std::size_t(cfg_.units))
            throw ContractError("TimeProposal::set_params: slot size mismatch");
    params_ = std::move(p);
    opt_m_ = g_.make_params_zero();
    opt_v_ = g_.make_params_zero();
    opt_steps_ = 0;
}

TimeProposal::Draw TimeProposal::eval(double u) {
    ws_.set_input_scalar(u_in_, u);
    ws_.forward(params_);
    const double seed = 1.0;
    ws_.forward_tangent(u_in_, std::span<const double>(&seed, 1));
    Draw d;
    d.u = u;
    d.s = ws_.value(s_out_)[0];
    const double slope = ws_.tangent(s_out_)[0];
    if (!std::isfinite(d.s) || !std::isfinite(slope) || !(slope > 0.0))
        throw NumericError("time proposal produced a non-increasing or non-finite map");
    d.density = 1.0 / slope;
    return d;
}

TimeProposal::Draw TimeProposal::transform(double u) {
    if (!(u > 0.0) || !(u < 1.0)) throw ContractError("TimeProposal::transform: u must lie in (0, 1)");
    return eval(u);
}

TimeProposal::Draw TimeProposal::sample(RngStream& rng) {
    const double u = std::clamp(rng.uniform_pos(), kBaseClamp, 1.0 - kBaseClamp);
    return eval(u);
}

ParamValues TimeProposal::surrogate_gradient(std::span<const double> us,
                                             std::span<const double> js) {
    if (us.empty() || us.size() != js.size())
        throw ContractError("surrogate_gradient: need matching, nonempty u and J batches");
    ParamValues grad = g_.make_params_zero();
    const double inv_n = 1.0 / double(us.size());
    const double seed = 1.0;
    for (std::size_t i = 0; i < us.size(); ++i) {
        const double u = us[i];
        if (!(u > 0.0) || !(u < 1.0))
            throw ContractError("surrogate_gradient: u must lie in (0, 1)");
        ws_.set_input_scalar(u_in_, u);
        ws_.forward(params_);
        ws_.forward_tangent(u_in_, std::span<const double>(&seed, 1));
        const double slope = ws_.tangent(s_out_)[0];
        // d/dtheta (J ds/du)^2 = 2 J^2 (ds/du) d(ds/du)/dtheta, delivered by
        // seeding the tangent adjoint of the output.
        ws_.clear_adjoints();
        ws_.seed_tangent_adjoint_scalar(s_out_, 2.0 * js[i] * js[i] * slope * inv_n);
        ws_.backward(&grad);
    }
    return grad;
}

void TimeProposal::reset_to_identity() {
    params_ = identity_params(cfg_);
    opt_m_ = g_.make_params_zero();
    opt_v_ = g_.make_params_zero();
    opt_steps_ = 0;
}

bool TimeProposal::variance_step(std::span<const double> us, std::span<const double> js,
                                 double learning_rate) {
    const ParamValues grad = surrogate_gradient(us, js);
    for (const auto& slot : grad.slots)
        for (double gv : slot)
            if (!std::isfinite(gv)) {
                std::cerr << "warning: time proposal gradient non-finite, reset to uniform\n";
                reset_to_identity();
                return false;
            }

    ++opt_steps_;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(b1, double(opt_steps_));
    const double bc2 = 1.0 - std::pow(b2, double(opt_steps_));
    for (std::size_t k = 0; k < grad.slots.size(); ++k) {
        auto& pk = params_.slots[k];
        auto& mk = opt_m_.slots[k];
        auto& vk = opt_v_.slots[k];
        const auto& gk = grad.slots[k];
        for (std::size_t i = 0; i < gk.size(); ++i) {
            mk[i] = b1 * mk[i] + (1.0 - b1) * gk[i];
            vk[i] = b2 * vk[i] + (1.0 - b2) * gk[i] * gk[i];
            pk[i] -= learning_rate * (mk[i] / bc1) / (std::sqrt(vk[i] / bc2) + eps);
        }
    }

    // Probe the updated flow; any non-finite value or vanishing density means
    // the importance weights 1/q can no longer be trusted.
    static constexpr double kProbes[] = {1e-6, 0.05, 0.25, 0.5, 0.75, 0.95, 1.0 - 1e-6};
    for (double u : kProbes) {
        bool ok = true;
        try {
            const Draw d = eval(u);
            ok = std::isfinite(d.density) && d.density > 1e-300;
        } catch (const NumericError&) {
            ok = false;
        }
        if (!ok) {
            std::cerr << "warning: time proposal degenerated, reset to uniform\n";
            reset_to_identity();
            return false;
        }
    }
    return true;
}

// ------------------------------------------------------------ training loss

void ObjectiveConfig::validate() const {
    if (!(terminal_time > 0.0) || !std::isfinite(terminal_time))
        throw ConfigError("objective terminal_time must be positive and finite");
    if (path_steps < 1) throw ConfigError("objective path_steps must be at least 1");
    if (hutchinson_samples < 1) throw ConfigError("objective hutchinson_samples must be at least 1");
}

CtElboLoss::CtElboLoss(const Manifold& M, const NetworkConfig& net_cfg, ObjectiveConfig cfg)
    : M_(M), net_cfg_(net_cfg), cfg_(cfg), ws_(g_) {
    cfg_.validate();
    net_cfg_.validate();
    if (net_cfg_.ambient_dim != M_.m)
        throw ContractError("CtElboLoss: network ambient_dim does not match the manifold");

    x_in_ = g_.input(M_.m);
    s_in_ = g_.input(1);
    const int a = append_score_network(g_, net_cfg_, x_in_, s_in_, cfg_.terminal_time);
    pa_ = append_projection(M_, g_, x_in_, a);
    if (has_prior_drift(M_)) {
        const int u0 = append_prior_drift(M_, g_, x_in_);
        field_ = g_.sub(pa_, u0);
    } else {
        field_ = pa_;
    }
    half_norm_ = g_.scale_const(0.5, g_.dot(pa_, pa_));
    ws_ = Workspace(g_);
}

CtElboLoss::CtElboLoss(const CtElboLoss& other)
    : M_(other.M_),
      net_cfg_(other.net_cfg_),
      cfg_(other.cfg_),
      g_(other.g_),
      x_in_(other.x_in_),
      s_in_(other.s_in_),
      pa_(other.pa_),
      field_(other.field_),
      half_norm_(other.half_norm_),
      ws_(g_) {}

CtElboLoss::CtElboLoss(CtElboLoss&& other)
    : M_(other.M_),
      net_cfg_(std::move(other.net_cfg_)),
      cfg_(other.cfg_),
      g_(std::move(other.g_)),
      x_in_(other.x_in_),
      s_in_(other.s_in_),
      pa_(other.pa_),
      field_(other.field_),
      half_norm_(other.half_norm_),
      ws_(g_) {}

CtElboLoss& CtElboLoss::operator=(const CtElboLoss& other) {
    if (this == &other) return *this;
    M_ = other.M_;
    net_cfg_ = other.net_cfg_;
    cfg_ = other.cfg_;
    g_ = other.g_;
    x_in_ = other.x_in_;
    s_in_ = other.s_in_;
    pa_ = other.pa_;
    field_ = other.field_;
    half_norm_ = other.half_norm_;
    ws_ = Workspace(g_);
    return *this;
}

CtElboLoss& CtElboLoss::operator=(CtElboLoss&& other) {
    if (this == &other) return *this;
    M_ = other.M_;
    net_cfg_ = std::move(other.net_cfg_);
    cfg_ = other.cfg_;
    g_ = std::move(other.g_);
    x_in_ = other.x_in_;
    s_in_ = other.s_in_;
    pa_ = other.pa_;
    field_ = other.field_;
    half_norm_ = other.half_norm_;
    ws_ = Workspace(g_);
    return *this;
}

IntegrandSample CtElboLoss::integrand(const ParamValues& params, TimeProposal& proposal,
                                      std::span<const double> x, RngStream& rng) {
    return integrand_impl(params, proposal, x, rng, nullptr, 0.0);
}

IntegrandSample CtElboLoss::integrand_with_gradient(const ParamValues& params,
                                                    TimeProposal& proposal,
                                                    std::span<const double> x, RngStream& rng,
                                                    ParamValues& grad, double weight) {
    return integrand_impl(params, proposal, x, rng, &grad, weight);
}

IntegrandSample CtElboLoss::integrand_impl(const ParamValues& params, TimeProposal& proposal,
                                           std::span<const double> x, RngStream& rng,
                                           ParamValues* grad, double weight) {
    if (int(x.size()) != M_.m) throw ContractError("integrand: point dimension mismatch");
    const auto m = std::size_t(M_.m);

    // Randomness order: time draw, path noise, divergence probes. Keeping it
    // fixed makes the value-only and with-gradient calls bit-identical under
    // the same stream.
    IntegrandSample out;
    const TimeProposal::Draw draw = proposal.sample(rng);
    out.s = draw.s;
    out.u = draw.u;
    out.density = draw.density;

    PathConfig pc;
    pc.terminal_time = draw.s;
    pc.n_steps = cfg_.path_steps;
    const PathRealization path = simulate_inference(M_, pc, x, rng);
    const std::vector<double>& y = path.points.back();

    ws_.set_input(x_in_, y);
    ws_.set_input_scalar(s_in_, draw.s);
    ws_.forward(params);
    out.a_norm = ws_.value(half_norm_)[0];

    // The importance weight 1/q multiplies the whole integrand, so it simply
    // scales every adjoint seed.
    const double w = grad ? weight / draw.density : 0.0;

    double div = 0.0;
    std::vector<double> probe(m), seed_vec(m);
    if (cfg_.divergence == DivergenceMethod::QrExact) {
        const Matrix Q = tangent_basis(M_, y, rng);
        for (int j = 0; j < M_.d; ++j) {
            for (std::size_t i = 0; i < m; ++i) probe[i] = Q(int(i), j);
            ws_.forward_tangent(x_in_, probe);
            const auto dv = ws_.tangent(field_);
            for (std::size_t i = 0; i < m; ++i) div += probe[i] * dv[i];
            if (grad) {
                ws_.clear_adjoints();
                if (j == 0) ws_.seed_adjoint_scalar(half_norm_, w);
                for (std::size_t i = 0; i < m; ++i) seed_vec[i] = w * probe[i];
                ws_.seed_tangent_adjoint(field_, seed_vec);
                ws_.backward(grad);
            }
        }
    } else {
        const int n = cfg_.hutchinson_samples;
        for (int k = 0; k < n; ++k) {
            const std::vector<double> z = rng.rademacher_vector(m);
            tangential_projection(M_, y, z, probe);
            ws_.forward_tangent(x_in_, probe);
            const auto dv = ws_.tangent(field_);
            double est = 0.0;
            for (std::size_t i = 0; i < m; ++i) est += probe[i] * dv[i];
            div += est / double(n);
            if (grad) {
                ws_.clear_adjoints();
                if (k == 0) ws_.seed_adjoint_scalar(half_norm_, w);
                for (std::size_t i = 0; i < m; ++i) seed_vec[i] = (w / double(n)) * probe[i];
                ws_.seed_tangent_adjoint(field_, seed_vec);
                ws_.backward(grad);
            }
        }
    }

    out.div = div;
    out.raw = out.a_norm + div;
    out.value = out.raw / draw.density;
    return out;
}

ElboEstimate CtElboLoss::estimate(const ParamValues& params, TimeProposal& proposal,
                                  const std::vector<std::vector<double>>& batch, int n_mc,
                                  RngStream& rng) {
    if (batch.empty()) throw ContractError("estimate: empty batch");
    if (n_mc < 1) throw ContractError("estimate: n_mc must be at least 1");

    std::vector<double> per_sample;
    per_sample.reserve(batch.size() * std::size_t(n_mc));
    double prior_acc = 0.0, a_norm_acc = 0.0, div_acc = 0.0;
    for (const auto& x : batch) {
        if (int(x.size()) != M_.m) throw ContractError("estimate: point dimension mismatch");
        for (int rep = 0; rep < n_mc; ++rep) {
            double lp;
            if (has_prior_drift(M_)) {
                // Non-uniform prior: the terminal point matters, so run the
                // inference path all the way to T.
                PathConfig full;
                full.terminal_time = cfg_.terminal_time;
                full.n_steps = cfg_.path_steps;
                const PathRealization path = simulate_inference(M_, full, x, rng);
                lp = prior_log_density(M_, path.points.back());
            } else {
                lp = prior_log_density(M_, x);
            }
            const IntegrandSample s = integrand(params, proposal, x, rng);
            prior_acc += lp;
            a_norm_acc += s.a_norm / s.density;
            div_acc += s.div / s.density;
            per_sample.push_back(lp - s.value);
        }
    }

    const SampleSummary sum = summarize(per_sample);
    ElboEstimate e;
    e.value = sum.mean;
    e.std_error = sum.std_error;
    e.n_samples = per_sample.size();
    const double inv_n = 1.0 / double(per_sample.size());
    e.prior_term = prior_acc * inv_n;
    e.a_norm_term = a_norm_acc * inv_n;
    e.divergence_term = div_acc * inv_n;
    return e;
}

// -------------------------------------------------------------- evaluation

double kelbo(ProjectedField& field, std::span<const double> x, int K, int n_steps,
             RngStream& rng) {
    if (K < 1) throw ContractError("kelbo: K must be at least 1");
    const Manifold& M = field.manifold();
    if (int(x.size()) != M.m) throw ContractError("kelbo: point dimension mismatch");

    PathConfig pc;
    pc.terminal_time = field.terminal_time();
    pc.n_steps = n_steps;
    std::vector<double> logs;
    logs.reserve(std::size_t(K));
    for (int i = 0; i < K; ++i) {
        const PathRealization path = simulate_inference(M, pc, x, rng, &field);
        const double lp = prior_log_density(M, path.points.back());
        logs.push_back(-path.acc.ito - path.acc.a_norm + lp - path.acc.divergence);
    }
    return log_sum_exp(logs) - std::log(double(K));
}

double ode_log_likelihood(ProjectedField& field, std::span<const double> x, double atol,
                          double rtol, double min_step) {
    const Manifold& M = field.manifold();
    if (int(x.size()) != M.m) throw ContractError("ode_log_likelihood: point dimension mismatch");

    // The basis contraction is exact for any orthonormal tangent basis, so a
    // fixed stream here costs nothing and keeps the result deterministic.
    RngStream basis_rng(7, 0);
    const OdeRhs rhs = [&](std::span<const double> xs, double s,
                           std::span<double> dx) -> double {
        return field.flow_value_and_divergence(xs, s, basis_rng, dx);
    };
    const OdeResult res =
        integrate_ode_adaptive(M, rhs, x, 0.0, field.terminal_time(), atol, rtol, min_step);
    return prior_log_density(M, res.x) + res.q;
}

}  // namespace riemdiff
