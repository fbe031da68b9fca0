#pragma once

// The optimization loop: Adam over the evidence-bound integrand, an optional
// cosine learning-rate schedule, periodic variance updates of the time
// proposal from a buffer of recent draws, and JSON checkpoints whose doubles
// round-trip bit-exactly. The metrics log is a deterministic TSV so that two
// runs with the same seed and config are byte-identical.

#include "riemdiff/graph.hpp"
#include "riemdiff/manifold.hpp"
#include "riemdiff/network.hpp"
#include "riemdiff/objective.hpp"
#include "riemdiff/sde.hpp"
#include "riemdiff/targets.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace riemdiff {

enum class LrScheduler { None, Cosine };

struct TrainConfig {
    double learning_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    long steps = 5000;
    int batch_size = 256;
    LrScheduler scheduler = LrScheduler::None;
    // The proposal trains on a buffer of recent (u, integrand) pairs, every
    // `period` network steps, `inner_steps` gradient steps at a fixed rate.
    long proposal_update_period = 500;
    int proposal_inner_steps = 20;
    int path_steps = 100; // inference-path integration steps per draw
    std::uint64_t seed = 0;
    DivergenceMethod divergence = DivergenceMethod::QrExact;
    int hutchinson_samples = 1;
    double clip_norm = 100.0; // global-norm gradient clip, warns when it fires
    double terminal_time = 1.0;
    ProposalConfig proposal;

    void validate() const; // throws ConfigError

    // Published per-family optimization table: sphere 2e-4 with the cosine
    // schedule, tori 3e-4, hyperboloid 5e-4 (and horizon 2.0), orthogonal
    // group 1e-3; betas 0.9 / 0.999 everywhere.
    static TrainConfig defaults_for(const Manifold& M);
};

// Learning rate at a given step in [0, steps): the base rate, or the cosine
// ramp lr/2 (1 + cos(pi t / steps)).
double scheduled_lr(const TrainConfig& cfg, long step);

struct AdamState {
    ParamValues m, v; // first/second moments, sized on first use
    long steps_applied = 0;
    long steps_skipped = 0; // non-finite gradients seen (and skipped)
};

// Bias-corrected Adam update with eps = 1e-8. A non-finite gradient entry
// skips the whole step (parameters and moments untouched), bumps
// steps_skipped, warns on stderr, and returns false.
bool adam_step(ParamValues& params, const ParamValues& grads, AdamState& state, double lr,
               double beta1, double beta2);

// Scales the gradient to the given global norm when it exceeds it. Returns
// true when a rescale happened.
bool clip_global_norm(ParamValues& grads, double max_norm);

// Everything needed to resume or evaluate a run. Serialized as JSON with
// doubles as hex-float strings, so round-trips are bitwise.
struct Checkpoint {
    Manifold manifold = Manifold::sphere(1);
    NetworkConfig network;
    ParamValues params;
    AdamState optimizer;
    ProposalConfig proposal;
    ParamValues proposal_params;
    TrainConfig train;
    long step = 0; // completed network updates
};

std::string checkpoint_to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const std::string& text); // ConfigError on schema violations
void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Runtime objects for evaluation and sampling.
ProjectedField field_from_checkpoint(const Checkpoint& c);
TimeProposal proposal_from_checkpoint(const Checkpoint& c);

// Variance of ds/du over a midpoint grid on (0, 1); zero for the uniform
// proposal, and the shape statistic logged per step.
double proposal_slope_variance(TimeProposal& proposal, int grid = 128);

struct TrainResult {
    Checkpoint checkpoint;
    std::string metrics_tsv; // header + one row per step, %.17g columns
    long clip_events = 0;
};

// Runs the loop: per step, a fresh batch from the target, one integrand draw
// per point with its parameter gradient, global-norm clipping, one Adam
// update, and scheduled proposal refreshes. Deterministic given (config,
// seed). Optional warm starts replace the seeded initialization; a non-finite
// loss aborts with a NumericError carrying the step and parameter norm.
TrainResult train(const Manifold& M, const Target& target, const NetworkConfig& net_cfg,
                  const TrainConfig& cfg, const ParamValues* warm_params = nullptr,
                  const ParamValues* warm_proposal = nullptr);

} // namespace riemdiff
