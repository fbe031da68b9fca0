#include "riemdiff/trainer.hpp"

#include "riemdiff/common.hpp"
#include "riemdiff/stats.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

using nlohmann::json;

namespace riemdiff {

namespace {

constexpr double kAdamEps = 1e-8;
constexpr double kProposalRate = 0.01;
constexpr std::size_t kProposalBufferCap = 4096;
constexpr const char* kCheckpointFormat = "riemdiff-checkpoint-v1";

bool same_shape(const ParamValues& a, const ParamValues& b) {
    if (a.slots.size() != b.slots.size()) return false;
    for (std::size_t i = 0; i < a.slots.size(); ++i)
        if (a.slots[i].size() != b.slots[i].size()) return false;
    return true;
}

ParamValues zeros_like(const ParamValues& p) {
    ParamValues z;
    z.slots.reserve(p.slots.size());
    for (const auto& slot : p.slots) z.slots.emplace_back(slot.size(), 0.0);
    return z;
}

double global_norm(const ParamValues& p) {
    double acc = 0.0;
    for (const auto& slot : p.slots)
        for (double v : slot) acc += v * v;
    return std::sqrt(acc);
}

bool all_finite(const ParamValues& p) {
    for (const auto& slot : p.slots)
        for (double v : slot)
            if (!std::isfinite(v)) return false;
    return true;
}

bool same_manifold(const Manifold& a, const Manifold& b) {
    return a.kind == b.kind && a.d == b.d && a.m == b.m && a.curvature == b.curvature &&
           a.n == b.n;
}

std::string kind_name(ManifoldKind k) {
    switch (k) {
    case ManifoldKind::Sphere: return "sphere";
    case ManifoldKind::Torus: return "torus";
    case ManifoldKind::Hyperboloid: return "hyperboloid";
    case ManifoldKind::Orthogonal: return "orthogonal";
    }
    throw ContractError("kind_name: unreachable");
}

Manifold manifold_from_fields(const std::string& kind, int d, double curvature, int n) {
    if (kind == "sphere") return Manifold::sphere(d);
    if (kind == "torus") return Manifold::torus(d);
    if (kind == "hyperboloid") return Manifold::hyperboloid(d, curvature);
    if (kind == "orthogonal") return Manifold::orthogonal(n);
    throw ConfigError("checkpoint: unknown manifold kind '" + kind + "'");
}

std::string scheduler_name(LrScheduler s) {
    return s == LrScheduler::Cosine ? "cosine" : "none";
}

LrScheduler scheduler_from_name(const std::string& s) {
    if (s == "cosine") return LrScheduler::Cosine;
    if (s == "none") return LrScheduler::None;
    throw ConfigError("checkpoint: unknown scheduler '" + s + "'");
}

std::string divergence_name(DivergenceMethod m) {
    return m == DivergenceMethod::Hutchinson ? "hutchinson" : "qr";
}

DivergenceMethod divergence_from_name(const std::string& s) {
    if (s == "hutchinson") return DivergenceMethod::Hutchinson;
    if (s == "qr") return DivergenceMethod::QrExact;
    throw ConfigError("checkpoint: unknown divergence method '" + s + "'");
}

// Schema guard: every present key must be expected, every expected key present.
void expect_keys(const json& obj, const std::vector<std::string>& keys,
                 const std::string& where) {
    if (!obj.is_object()) throw ConfigError("checkpoint: " + where + " must be an object");
    for (const auto& item : obj.items()) {
        bool known = false;
        for (const auto& k : keys) known = known || k == item.key();
        if (!known)
            throw ConfigError("checkpoint: unknown key '" + item.key() + "' in " + where);
    }
    for (const auto& k : keys)
        if (!obj.contains(k))
            throw ConfigError("checkpoint: missing key '" + k + "' in " + where);
}

json params_as_json(const ParamValues& p) { return json::parse(params_to_json(p)); }

ParamValues params_from_json_obj(const json& j) { return params_from_json(j.dump()); }

double hex_field(const json& obj, const char* key) {
    return double_from_hex(obj.at(key).get<std::string>());
}

}  // namespace

// ----------------------------------------------------------------- configs

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        throw ConfigError("train: learning_rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("train: beta1 must be in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train: beta2 must be in [0, 1)");
    if (steps < 0) throw ConfigError("train: steps must be nonnegative");
    if (batch_size < 1) throw ConfigError("train: batch_size must be at least 1");
    if (proposal_update_period < 1)
        throw ConfigError("train: proposal_update_period must be at least 1");
    if (proposal_inner_steps < 0)
        throw ConfigError("train: proposal_inner_steps must be nonnegative");
    if (path_steps < 1) throw ConfigError("train: path_steps must be at least 1");
    if (hutchinson_samples < 1)
        throw ConfigError("train: hutchinson_samples must be at least 1");
    if (!(clip_norm > 0.0)) throw ConfigError("train: clip_norm must be positive");
    if (!(terminal_time > 0.0) || !std::isfinite(terminal_time))
        throw ConfigError("train: terminal_time must be positive");
    proposal.validate();
}

TrainConfig TrainConfig::defaults_for(const Manifold& M) {
    TrainConfig cfg;
    switch (M.kind) {
    case ManifoldKind::Sphere:
        cfg.learning_rate = 2e-4;
        cfg.scheduler = LrScheduler::Cosine;
        break;
    case ManifoldKind::Torus:
        cfg.learning_rate = 3e-4;
        break;
    case ManifoldKind::Hyperboloid:
        cfg.learning_rate = 5e-4;
        cfg.terminal_time = 2.0;
        break;
    case ManifoldKind::Orthogonal:
        cfg.learning_rate = 1e-3;
        break;
    }
    return cfg;
}

double scheduled_lr(const TrainConfig& cfg, long step) {
    if (cfg.scheduler == LrScheduler::None) return cfg.learning_rate;
    const double frac = double(step) / double(std::max<long>(1, cfg.steps));
    return cfg.learning_rate * 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac));
}

// --------------------------------------------------------------- optimizer

bool adam_step(ParamValues& params, const ParamValues& grads, AdamState& state, double lr,
               double beta1, double beta2) {
    if (!same_shape(params, grads))
        throw ContractError("adam_step: gradient shape does not match parameters");
    if (state.m.slots.empty()) {
        state.m = zeros_like(params);
        state.v = zeros_like(params);
    }
    if (!same_shape(params, state.m))
        throw ContractError("adam_step: optimizer state shape does not match parameters");
    if (!all_finite(grads)) {
        state.steps_skipped += 1;
        std::cerr << "adam_step: non-finite gradient, skipping update ("
                  << state.steps_skipped << " skipped so far)\n";
        return false;
    }
    state.steps_applied += 1;
    const double t = double(state.steps_applied);
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    for (std::size_t i = 0; i < params.slots.size(); ++i) {
        for (std::size_t j = 0; j < params.slots[i].size(); ++j) {
            const double g = grads.slots[i][j];
            double& m = state.m.slots[i][j];
            double& v = state.v.slots[i][j];
            m = beta1 * m + (1.0 - beta1) * g;
            v = beta2 * v + (1.0 - beta2) * g * g;
            params.slots[i][j] -= lr * (m / bc1) / (std::sqrt(v / bc2) + kAdamEps);
        }
    }
    return true;
}

bool clip_global_norm(ParamValues& grads, double max_norm) {
    const double norm = global_norm(grads);
    if (!(norm > max_norm)) return false;
    const double scale = max_norm / norm;
    for (auto& slot : grads.slots)
        for (double& v : slot) v *= scale;
    return true;
}

// -------------------------------------------------------------- checkpoint

std::string checkpoint_to_json(const Checkpoint& c) {
    json j;
    j["format"] = kCheckpointFormat;
    j["manifold"] = {{"kind", kind_name(c.manifold.kind)},
                     {"d", c.manifold.d},
                     {"curvature", double_to_hex(c.manifold.curvature)},
                     {"n", c.manifold.n}};
    j["network"] = json::parse(network_config_to_json(c.network));
    j["params"] = params_as_json(c.params);
    j["optimizer"] = {{"m", params_as_json(c.optimizer.m)},
                      {"v", params_as_json(c.optimizer.v)},
                      {"steps_applied", c.optimizer.steps_applied},
                      {"steps_skipped", c.optimizer.steps_skipped}};
    j["proposal"] = {{"layers", c.proposal.layers},
                     {"units", c.proposal.units},
                     {"params", params_as_json(c.proposal_params)}};
    j["train"] = {{"learning_rate", double_to_hex(c.train.learning_rate)},
                  {"beta1", double_to_hex(c.train.beta1)},
                  {"beta2", double_to_hex(c.train.beta2)},
                  {"steps", c.train.steps},
                  {"batch_size", c.train.batch_size},
                  {"scheduler", scheduler_name(c.train.scheduler)},
                  {"proposal_update_period", c.train.proposal_update_period},
                  {"proposal_inner_steps", c.train.proposal_inner_steps},
                  {"path_steps", c.train.path_steps},
                  {"seed", c.train.seed},
                  {"divergence", divergence_name(c.train.divergence)},
                  {"hutchinson_samples", c.train.hutchinson_samples},
                  {"clip_norm", double_to_hex(c.train.clip_norm)},
                  {"terminal_time", double_to_hex(c.train.terminal_time)}};
    j["step"] = c.step;
    return j.dump(2);
}

Checkpoint checkpoint_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("checkpoint: malformed JSON: ") + e.what());
    }
    try {
        expect_keys(j, {"format", "manifold", "network", "params", "optimizer", "proposal",
                        "train", "step"},
                    "the checkpoint");
        if (j.at("format").get<std::string>() != kCheckpointFormat)
            throw ConfigError("checkpoint: unsupported format '" +
                              j.at("format").get<std::string>() + "'");

        Checkpoint c;
        const json& jm = j.at("manifold");
        expect_keys(jm, {"kind", "d", "curvature", "n"}, "manifold");
        c.manifold = manifold_from_fields(jm.at("kind").get<std::string>(),
                                          jm.at("d").get<int>(), hex_field(jm, "curvature"),
                                          jm.at("n").get<int>());

        const json& jn = j.at("network");
        expect_keys(jn, {"activation", "hidden_layers", "hidden_width", "actnorm_first",
                         "ambient_dim", "time_features"},
                    "network");
        c.network = network_config_from_json(jn.dump());

        c.params = params_from_json_obj(j.at("params"));

        const json& jo = j.at("optimizer");
        expect_keys(jo, {"m", "v", "steps_applied", "steps_skipped"}, "optimizer");
        c.optimizer.m = params_from_json_obj(jo.at("m"));
        c.optimizer.v = params_from_json_obj(jo.at("v"));
        c.optimizer.steps_applied = jo.at("steps_applied").get<long>();
        c.optimizer.steps_skipped = jo.at("steps_skipped").get<long>();

        const json& jp = j.at("proposal");
        expect_keys(jp, {"layers", "units", "params"}, "proposal");
        c.proposal.layers = jp.at("layers").get<int>();
        c.proposal.units = jp.at("units").get<int>();
        c.proposal.validate();
        c.proposal_params = params_from_json_obj(jp.at("params"));

        const json& jt = j.at("train");
        expect_keys(jt, {"learning_rate", "beta1", "beta2", "steps", "batch_size",
                         "scheduler", "proposal_update_period", "proposal_inner_steps",
                         "path_steps", "seed", "divergence", "hutchinson_samples",
                         "clip_norm", "terminal_time"},
                    "train");
        c.train.learning_rate = hex_field(jt, "learning_rate");
        c.train.beta1 = hex_field(jt, "beta1");
        c.train.beta2 = hex_field(jt, "beta2");
        c.train.steps = jt.at("steps").get<long>();
        c.train.batch_size = jt.at("batch_size").get<int>();
        c.train.scheduler = scheduler_from_name(jt.at("scheduler").get<std::string>());
        c.train.proposal_update_period = jt.at("proposal_update_period").get<long>();
        c.train.proposal_inner_steps = jt.at("proposal_inner_steps").get<int>();
        c.train.path_steps = jt.at("path_steps").get<int>();
        c.train.seed = jt.at("seed").get<std::uint64_t>();
        c.train.divergence = divergence_from_name(jt.at("divergence").get<std::string>());
        c.train.hutchinson_samples = jt.at("hutchinson_samples").get<int>();
        c.train.clip_norm = hex_field(jt, "clip_norm");
        c.train.terminal_time = hex_field(jt, "terminal_time");
        c.train.proposal = c.proposal;
        c.train.validate();

        c.step = j.at("step").get<long>();
        if (c.step < 0) throw ConfigError("checkpoint: negative step counter");
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("checkpoint: ") + e.what());
    }
}

void save_checkpoint(const Checkpoint& c, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("save_checkpoint: cannot open '" + path + "' for writing");
    out << checkpoint_to_json(c) << '\n';
    if (!out) throw IoError("save_checkpoint: write to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("load_checkpoint: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return checkpoint_from_json(buf.str());
}

ProjectedField field_from_checkpoint(const Checkpoint& c) {
    return ProjectedField(c.manifold, c.network, c.train.terminal_time, c.params);
}

TimeProposal proposal_from_checkpoint(const Checkpoint& c) {
    TimeProposal p(c.proposal, c.train.terminal_time);
    p.set_params(c.proposal_params);
    return p;
}

double proposal_slope_variance(TimeProposal& proposal, int grid) {
    if (grid < 2) throw ContractError("proposal_slope_variance: grid must be at least 2");
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < grid; ++i) {
        const double u = (i + 0.5) / double(grid);
        const double slope = 1.0 / proposal.transform(u).density;
        sum += slope;
        sum2 += slope * slope;
    }
    const double mean = sum / grid;
    return std::max(0.0, sum2 / grid - mean * mean);
}

// ------------------------------------------------------------------- train

TrainResult train(const Manifold& M, const Target& target, const NetworkConfig& net_cfg,
                  const TrainConfig& cfg, const ParamValues* warm_params,
                  const ParamValues* warm_proposal) {
    cfg.validate();
    if (!same_manifold(M, target.manifold()))
        throw ConfigError("train: the target lives on " + target.manifold().name() +
                          ", not on " + M.name());
    NetworkConfig net = net_cfg;
    if (net.ambient_dim == 0) net.ambient_dim = M.m;
    if (net.ambient_dim != M.m)
        throw ConfigError("train: network ambient_dim does not match the manifold");
    net.validate();

    RngStream rng(cfg.seed, 0);
    ObjectiveConfig ocfg;
    ocfg.terminal_time = cfg.terminal_time;
    ocfg.path_steps = cfg.path_steps;
    ocfg.divergence = cfg.divergence;
    ocfg.hutchinson_samples = cfg.hutchinson_samples;
    CtElboLoss loss(M, net, ocfg);

    ParamValues params;
    if (warm_params) {
        if (!same_shape(*warm_params, loss.zero_params()))
            throw ContractError("train: warm-start parameters have the wrong shape");
        params = *warm_params;
    } else if (net.actnorm_first) {
        const auto calib_x = target.sample_n(rng, 256);
        std::vector<double> calib_s;
        calib_s.reserve(calib_x.size());
        for (std::size_t i = 0; i < calib_x.size(); ++i)
            calib_s.push_back(rng.uniform() * cfg.terminal_time);
        params = init_network_params(net, rng, cfg.terminal_time, calib_x, calib_s);
    } else {
        params = init_network_params(net, rng, cfg.terminal_time);
    }

    TimeProposal proposal(cfg.proposal, cfg.terminal_time);
    if (warm_proposal) proposal.set_params(*warm_proposal);

    AdamState opt;
    TrainResult res;
    res.metrics_tsv = "step\tloss\tloss_std\tlr\tproposal_variance\n";

    std::vector<double> buf_u, buf_j;
    std::size_t buf_pos = 0;
    std::vector<double> values(std::size_t(cfg.batch_size), 0.0);
    char row[192];

    for (long t = 0; t < cfg.steps; ++t) {
        const double lr_t = scheduled_lr(cfg, t);
        ParamValues grad = loss.zero_params();
        for (int b = 0; b < cfg.batch_size; ++b) {
            const std::vector<double> x = target.sample(rng);
            const IntegrandSample draw = loss.integrand_with_gradient(
                params, proposal, x, rng, grad, 1.0 / double(cfg.batch_size));
            values[std::size_t(b)] = draw.value;
            if (buf_u.size() < kProposalBufferCap) {
                buf_u.push_back(draw.u);
                buf_j.push_back(draw.raw);
            } else {
                buf_u[buf_pos] = draw.u;
                buf_j[buf_pos] = draw.raw;
                buf_pos = (buf_pos + 1) % kProposalBufferCap;
            }
        }
        const SampleSummary sm = summarize(values);
        if (!std::isfinite(sm.mean)) {
            char diag[160];
            std::snprintf(diag, sizeof diag,
                          "train: non-finite loss at step %ld (lr %.3g, |params| %.6g)",
                          t + 1, lr_t, global_norm(params));
            throw NumericError(diag);
        }
        if (clip_global_norm(grad, cfg.clip_norm)) {
            res.clip_events += 1;
            std::cerr << "train: gradient norm clipped to " << cfg.clip_norm << " at step "
                      << (t + 1) << "\n";
        }
        adam_step(params, grad, opt, lr_t, cfg.beta1, cfg.beta2);

        if ((t + 1) % cfg.proposal_update_period == 0 && !buf_u.empty())
            for (int k = 0; k < cfg.proposal_inner_steps; ++k)
                if (!proposal.variance_step(buf_u, buf_j, kProposalRate)) break;

        std::snprintf(row, sizeof row, "%ld\t%.17g\t%.17g\t%.17g\t%.17g\n", t + 1, sm.mean,
                      std::sqrt(sm.variance), lr_t, proposal_slope_variance(proposal));
        res.metrics_tsv += row;
    }

    res.checkpoint.manifold = M;
    res.checkpoint.network = net;
    res.checkpoint.params = std::move(params);
    if (opt.m.slots.empty()) {
        opt.m = loss.zero_params();
        opt.v = loss.zero_params();
    }
    res.checkpoint.optimizer = std::move(opt);
    res.checkpoint.proposal = cfg.proposal;
    res.checkpoint.proposal_params = proposal.params();
    res.checkpoint.train = cfg;
    res.checkpoint.step = cfg.steps;
    return res;
}

}  // namespace riemdiff
