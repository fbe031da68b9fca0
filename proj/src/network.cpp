#include "riemdiff/network.hpp"

#include "riemdiff/common.hpp"

#include <json.hpp>

#include <cmath>
#include <cstddef>

namespace riemdiff {

using nlohmann::json;

Activation activation_from_name(const std::string& name) {
    if (name == "sine") return Activation::Sine;
    if (name == "swish") return Activation::Swish;
    throw ConfigError("unknown activation '" + name + "' (expected sine or swish)");
}

std::string activation_name(Activation a) {
    return a == Activation::Sine ? "sine" : "swish";
}

void NetworkConfig::validate() const {
    if (hidden_layers < 1) throw ContractError("network: hidden_layers must be >= 1");
    if (hidden_width < 1) throw ContractError("network: hidden_width must be >= 1");
    if (ambient_dim < 1) throw ContractError("network: ambient_dim must be >= 1");
    if (time_features < 1) throw ContractError("network: time_features must be >= 1");
}

std::vector<double> time_features(const NetworkConfig& cfg, double s, double terminal_time) {
    // Powers of the normalized time: (s/T), (s/T)^2, ... Cheap, smooth, and
    // exactly reproducible inside the graph via repeated multiplication.
    std::vector<double> f(std::size_t(cfg.time_features));
    const double u = s / terminal_time;
    double p = 1.0;
    for (int j = 0; j < cfg.time_features; ++j) {
        p *= u;
        f[std::size_t(j)] = p;
    }
    return f;
}

int append_score_network(Graph& g, const NetworkConfig& cfg, int x_node, int s_node,
                         double terminal_time) {
    cfg.validate();
    if (terminal_time <= 0.0) throw ContractError("network: terminal_time must be positive");

    const int t1 = g.scale_const(1.0 / terminal_time, s_node);
    std::vector<int> feats{x_node};
    int tp = t1;
    for (int j = 0; j < cfg.time_features; ++j) {
        feats.push_back(tp);
        if (j + 1 < cfg.time_features) tp = g.mul(tp, t1);
    }
    int h = g.concat(feats);
    int width = cfg.input_dim();

    if (cfg.actnorm_first) {
        const int scale = g.param(width);
        const int shift = g.param(width);
        h = g.add(g.mul(scale, h), shift);
    }

    for (int layer = 0; layer < cfg.hidden_layers; ++layer) {
        const int W = g.param(cfg.hidden_width * width);
        const int b = g.param(cfg.hidden_width);
        h = g.add(g.matvec(W, h, cfg.hidden_width, width), b);
        h = cfg.activation == Activation::Sine ? g.sine(h) : g.swish(h);
        width = cfg.hidden_width;
    }

    const int Wout = g.param(cfg.ambient_dim * width);
    const int bout = g.param(cfg.ambient_dim);
    return g.add(g.matvec(Wout, h, cfg.ambient_dim, width), bout);
}

ParamValues init_network_params(const NetworkConfig& cfg, RngStream& rng,
                                double terminal_time,
                                const std::vector<std::vector<double>>& calib_x,
                                const std::vector<double>& calib_s) {
    cfg.validate();
    ParamValues p;
    const int nin = cfg.input_dim();

    if (cfg.actnorm_first) {
        if (calib_x.empty() || calib_x.size() != calib_s.size())
            throw ConfigError("network init: actnorm_first needs a nonempty (x, s) calibration batch");
        // Per-feature moments of the raw inputs over the batch; the affine
        // scale/shift then whitens each unit exactly (population std).
        std::vector<double> mean(std::size_t(nin), 0.0), sq(std::size_t(nin), 0.0);
        for (std::size_t i = 0; i < calib_x.size(); ++i) {
            if (int(calib_x[i].size()) != cfg.ambient_dim)
                throw ConfigError("network init: calibration point has wrong dimension");
            const auto tf = time_features(cfg, calib_s[i], terminal_time);
            for (int j = 0; j < nin; ++j) {
                const double v = j < cfg.ambient_dim ? calib_x[i][std::size_t(j)]
                                                     : tf[std::size_t(j - cfg.ambient_dim)];
                mean[std::size_t(j)] += v;
                sq[std::size_t(j)] += v * v;
            }
        }
        const double n = double(calib_x.size());
        const auto un = std::size_t(nin);
        std::vector<double> scale(un), shift(un);
        for (int j = 0; j < nin; ++j) {
            const double m = mean[std::size_t(j)] / n;
            const double var = sq[std::size_t(j)] / n - m * m;
            if (var < 1e-14)
                throw ConfigError("network init: calibration feature " + std::to_string(j) +
                                  " is constant; cannot normalize to unit std");
            const double sd = std::sqrt(var);
            scale[std::size_t(j)] = 1.0 / sd;
            shift[std::size_t(j)] = -m / sd;
        }
        p.slots.push_back(std::move(scale));
        p.slots.push_back(std::move(shift));
    }

    int width = nin;
    for (int layer = 0; layer < cfg.hidden_layers; ++layer) {
        const double sd = 1.0 / std::sqrt(double(width));
        std::vector<double> W(std::size_t(cfg.hidden_width * width));
        for (double& w : W) w = sd * rng.gaussian();
        p.slots.push_back(std::move(W));
        p.slots.emplace_back(std::size_t(cfg.hidden_width), 0.0);
        width = cfg.hidden_width;
    }
    // Zero final layer: the fresh model is exactly the prior process.
    p.slots.emplace_back(std::size_t(cfg.ambient_dim * width), 0.0);
    p.slots.emplace_back(std::size_t(cfg.ambient_dim), 0.0);
    return p;
}

ScoreNetwork::ScoreNetwork(NetworkConfig cfg, double terminal_time)
    : cfg_(cfg),
      T_(terminal_time),
      x_in_(g_.input(cfg.ambient_dim)),
      s_in_(g_.input(1)),
      out_(append_score_network(g_, cfg_, x_in_, s_in_, T_)),
      ws_(g_) {}

ScoreNetwork::ScoreNetwork(const ScoreNetwork& other)
    : cfg_(other.cfg_),
      T_(other.T_),
      g_(other.g_),
      x_in_(other.x_in_),
      s_in_(other.s_in_),
      out_(other.out_),
      ws_(g_) {}

ScoreNetwork::ScoreNetwork(ScoreNetwork&& other)
    : cfg_(std::move(other.cfg_)),
      T_(other.T_),
      g_(std::move(other.g_)),
      x_in_(other.x_in_),
      s_in_(other.s_in_),
      out_(other.out_),
      ws_(g_) {}

ScoreNetwork& ScoreNetwork::operator=(const ScoreNetwork& other) {
    if (this == &other) return *this;
    cfg_ = other.cfg_;
    T_ = other.T_;
    g_ = other.g_;
    x_in_ = other.x_in_;
    s_in_ = other.s_in_;
    out_ = other.out_;
    ws_ = Workspace(g_);
    return *this;
}

ScoreNetwork& ScoreNetwork::operator=(ScoreNetwork&& other) {
    if (this == &other) return *this;
    cfg_ = std::move(other.cfg_);
    T_ = other.T_;
    g_ = std::move(other.g_);
    x_in_ = other.x_in_;
    s_in_ = other.s_in_;
    out_ = other.out_;
    ws_ = Workspace(g_);
    return *this;
}

std::vector<double> ScoreNetwork::forward(const ParamValues& params,
                                          std::span<const double> x, double s) const {
    ws_.set_input(x_in_, x);
    ws_.set_input_scalar(s_in_, s);
    ws_.forward(params);
    auto out = ws_.value(out_);
    return {out.begin(), out.end()};
}

// -------------------------------------------------------------- persistence

std::string network_config_to_json(const NetworkConfig& cfg) {
    json j;
    j["activation"] = activation_name(cfg.activation);
    j["hidden_layers"] = cfg.hidden_layers;
    j["hidden_width"] = cfg.hidden_width;
    j["actnorm_first"] = cfg.actnorm_first;
    j["ambient_dim"] = cfg.ambient_dim;
    j["time_features"] = cfg.time_features;
    return j.dump();
}

NetworkConfig network_config_from_json(const std::string& text) {
    const json j = json::parse(text);
    NetworkConfig cfg;
    cfg.activation = activation_from_name(j.at("activation").get<std::string>());
    cfg.hidden_layers = j.at("hidden_layers").get<int>();
    cfg.hidden_width = j.at("hidden_width").get<int>();
    cfg.actnorm_first = j.at("actnorm_first").get<bool>();
    cfg.ambient_dim = j.at("ambient_dim").get<int>();
    cfg.time_features = j.at("time_features").get<int>();
    cfg.validate();
    return cfg;
}

std::string params_to_json(const ParamValues& p) {
    json slots = json::array();
    for (const auto& slot : p.slots) {
        json arr = json::array();
        for (double v : slot) arr.push_back(double_to_hex(v));
        slots.push_back(std::move(arr));
    }
    return slots.dump();
}

ParamValues params_from_json(const std::string& text) {
    const json j = json::parse(text);
    if (!j.is_array()) throw IoError("params_from_json: expected an array of slots");
    ParamValues p;
    for (const auto& slot : j) {
        std::vector<double> vals;
        vals.reserve(slot.size());
        for (const auto& v : slot) vals.push_back(double_from_hex(v.get<std::string>()));
        p.slots.push_back(std::move(vals));
    }
    return p;
}

}  // namespace riemdiff
