#pragma once

// Training and evaluation objectives. Three estimators of the model evidence,
// ordered by tightness:
//
//   ctelbo  - single-sample bound: E[log p0(Y_T)] minus the time integral of
//             0.5 |P a|^2 + div_g(P a - U0) along Langevin inference paths,
//             with the time integral importance-sampled from a learned
//             proposal. Differentiable in the network parameters; this is the
//             training loss.
//   kelbo   - K-path importance bound, log-mean-exp of per-path weights from
//             the change of measure between the model's inference dynamics
//             and plain Langevin. Tightens monotonically in K.
//   ode     - exact log-density of the deterministic member of the family,
//             log p0 at the flow's endpoint plus the accumulated divergence
//             of the transport drift U0 - 0.5 P a.
//
// The time proposal is a strictly increasing sigmoidal flow on (0, T) trained
// to shrink the variance of the importance-weighted integrand; at its
// initialization it is exactly the uniform density 1/T.

#include "riemdiff/graph.hpp"
#include "riemdiff/manifold.hpp"
#include "riemdiff/network.hpp"
#include "riemdiff/rng.hpp"
#include "riemdiff/sde.hpp"

#include <span>
#include <vector>

namespace riemdiff {

// ------------------------------------------------------------ time proposal

struct ProposalConfig {
    int layers = 2;
    int units = 8;

    void validate() const;
};

// Monotone map u in (0,1) -> s in (0,T): a stack of sigmoidal mixture layers
// (softmax weights, softplus slopes) glued by logits, scaled by T at the end.
// The induced density is q(s) = 1 / (ds/du), read off the flow's tangent, so
// sampling never inverts the map. Initialized to the exact identity, i.e.
// s = T u and q = 1/T.
class TimeProposal {
public:
    TimeProposal(ProposalConfig cfg, double terminal_time);
    // The workspace holds a pointer to the owned graph, so the compiler's
    // copies and moves would alias the source object; rebind it instead.
    TimeProposal(const TimeProposal& other);
    TimeProposal(TimeProposal&& other);
    TimeProposal& operator=(const TimeProposal& other);
    TimeProposal& operator=(TimeProposal&& other);

    struct Draw {
        double u = 0.0;       // base uniform variate
        double s = 0.0;       // proposed time in (0, T)
        double density = 0.0; // q(s), the density the integrand divides by
    };

    Draw sample(RngStream& rng);
    // Deterministic path through the flow, u in (0, 1).
    Draw transform(double u);

    // Mean gradient over the batch of the variance surrogate (J_i ds/du)^2,
    // treating each J_i as a constant. Used by variance_step and by tests
    // that compare against finite differences.
    ParamValues surrogate_gradient(std::span<const double> us, std::span<const double> js);

    // One Adam step on the surrogate at a fixed rate. Returns false when the
    // flow degenerated (non-finite or vanishing slope) and was reset to the
    // uniform initialization.
    bool variance_step(std::span<const double> us, std::span<const double> js,
                       double learning_rate = 0.01);

    const ProposalConfig& config() const { return cfg_; }
    double terminal_time() const { return T_; }
    const ParamValues& params() const { return params_; }
    void set_params(ParamValues p);

    static ParamValues identity_params(const ProposalConfig& cfg);

private:
    Draw eval(double u);
    void reset_to_identity();

    ProposalConfig cfg_;
    double T_;
    Graph g_;
    int u_in_, s_out_;
    ParamValues params_;
    Workspace ws_;
    // Adam moments for variance_step.
    ParamValues opt_m_, opt_v_;
    long opt_steps_ = 0;
};

// --------------------------------------------------------- training bound

enum class DivergenceMethod {
    QrExact,    // tangent-basis contraction, d tangent sweeps, zero variance
    Hutchinson, // projected Rademacher probes, cheaper on high-d manifolds
};

struct ObjectiveConfig {
    double terminal_time = 1.0;
    int path_steps = 100; // inference steps, spread over [0, s] per draw
    DivergenceMethod divergence = DivergenceMethod::QrExact;
    int hutchinson_samples = 1;

    void validate() const;
};

// One Monte Carlo draw of the time-integral term.
struct IntegrandSample {
    double value = 0.0;   // (0.5 |P a|^2 + div) / q(s)
    double raw = 0.0;     // the same before the importance weight
    double a_norm = 0.0;  // 0.5 |P a|^2 component, unweighted
    double div = 0.0;     // divergence component, unweighted
    double s = 0.0;       // sampled time
    double u = 0.0;       // base draw behind s
    double density = 0.0; // q(s) at the draw
};

struct ElboEstimate {
    double value = 0.0;     // prior_term - a_norm_term - divergence_term
    double std_error = 0.0;
    std::size_t n_samples = 0;
    double prior_term = 0.0;      // E[log p0(Y_T)]
    double a_norm_term = 0.0;     // E[0.5 |P a|^2 / q]
    double divergence_term = 0.0; // E[div_g(P a - U0) / q]
};

// Owns the differentiable loss graph (network + projection + prior drift) and
// evaluates the integrand at Langevin-path endpoints. The parameter gradient
// treats the path and the sampled time as fixed: only the field's dependence
// on its parameters is differentiated. Not thread-safe; copy per worker.
class CtElboLoss {
public:
    CtElboLoss(const Manifold& M, const NetworkConfig& net_cfg, ObjectiveConfig cfg);
    // The workspace holds a pointer to the owned graph, so the compiler's
    // copies and moves would alias the source object; rebind it instead.
    CtElboLoss(const CtElboLoss& other);
    CtElboLoss(CtElboLoss&& other);
    CtElboLoss& operator=(const CtElboLoss& other);
    CtElboLoss& operator=(CtElboLoss&& other);

    const Manifold& manifold() const { return M_; }
    const ObjectiveConfig& config() const { return cfg_; }
    const NetworkConfig& network_config() const { return net_cfg_; }
    ParamValues zero_params() const { return g_.make_params_zero(); }

    // Value only; rng drives the proposal draw, the path, and any divergence
    // probes, in that order.
    IntegrandSample integrand(const ParamValues& params, TimeProposal& proposal,
                              std::span<const double> x, RngStream& rng);

    // Value plus d(value)/d(params) scaled by weight, accumulated into grad.
    IntegrandSample integrand_with_gradient(const ParamValues& params, TimeProposal& proposal,
                                            std::span<const double> x, RngStream& rng,
                                            ParamValues& grad, double weight);

    // Full bound over a batch: prior term plus n_mc integrand draws per point.
    ElboEstimate estimate(const ParamValues& params, TimeProposal& proposal,
                          const std::vector<std::vector<double>>& batch, int n_mc,
                          RngStream& rng);

private:
    IntegrandSample integrand_impl(const ParamValues& params, TimeProposal& proposal,
                                   std::span<const double> x, RngStream& rng, ParamValues* grad,
                                   double weight);

    Manifold M_;
    NetworkConfig net_cfg_;
    ObjectiveConfig cfg_;
    Graph g_;
    int x_in_, s_in_, pa_, field_, half_norm_;
    Workspace ws_;
};

// ------------------------------------------------------------- evaluation

// K-path importance bound at one point. Each path contributes
// log L = -int a.dB - int 0.5|a|^2 ds + log p0(Y_T) - int div_g(P a - U0) ds,
// and the bound is logsumexp(log L) - log K. K = 1 matches the single-sample
// bound in expectation; K -> infinity recovers the exact log-density.
double kelbo(ProjectedField& field, std::span<const double> x, int K, int n_steps,
             RngStream& rng);

// Exact log-density under the deterministic flow: integrate the transport
// drift U0 - 0.5 P a from the data point to the prior with the divergence
// riding along, return log p0(Y_T) plus the accumulated divergence.
// Deterministic: the divergence basis stream is fixed internally.
double ode_log_likelihood(ProjectedField& field, std::span<const double> x, double atol = 1e-3,
                          double rtol = 1e-3, double min_step = 1e-5);

}  // namespace riemdiff
