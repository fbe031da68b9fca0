#pragma once

// The learned ambient vector field a(x, s): an MLP over the ambient
// coordinates of x concatenated with simple time features. The network is
// expressed as Graph primitives so the same parameter slots serve the
// training loss, the sampler drift, and every divergence computation.
//
// Canonical parameter slot order (also the checkpoint flattening order):
// actnorm scale and shift first when enabled, then (W, b) per layer with the
// final layer last. Any graph embedding the network must append it before
// registering other parameters so slot indices agree across graphs.

#include "riemdiff/graph.hpp"
#include "riemdiff/rng.hpp"

#include <span>
#include <string>
#include <vector>

namespace riemdiff {

enum class Activation { Sine, Swish };

Activation activation_from_name(const std::string& name);
std::string activation_name(Activation a);

struct NetworkConfig {
    Activation activation = Activation::Sine;
    int hidden_layers = 3;
    int hidden_width = 64;
    bool actnorm_first = false;
    int ambient_dim = 0;   // m, set from the manifold
    int time_features = 1; // extra inputs (s/T)^1 .. (s/T)^k

    int input_dim() const { return ambient_dim + time_features; }
    void validate() const; // throws ContractError on bad counts
};

// Appends the network to g, reading x from x_node (ambient_dim entries) and
// the raw time from s_node (1 entry, in [0, terminal_time]); returns the
// output node (ambient_dim entries). Registers parameter slots in canonical
// order, so call it before any other g.param().
int append_score_network(Graph& g, const NetworkConfig& cfg, int x_node, int s_node,
                         double terminal_time);

// Fresh parameters: hidden weights N(0, 1/fan_in), biases zero, final layer
// all zero (so the initial field is identically zero), and, when
// actnorm_first is set, scale/shift calibrated so the normalized input
// features have per-unit mean 0 and standard deviation 1 over the
// calibration batch. Throws ConfigError if calibration is required but the
// batch is empty or a feature is constant across it.
ParamValues init_network_params(const NetworkConfig& cfg, RngStream& rng,
                                double terminal_time,
                                const std::vector<std::vector<double>>& calib_x = {},
                                const std::vector<double>& calib_s = {});

// Standalone evaluator owning one graph and one workspace. Not thread-safe;
// give each worker its own instance (parameters can be shared).
class ScoreNetwork {
public:
    ScoreNetwork(NetworkConfig cfg, double terminal_time);
    // The workspace holds a pointer to the owned graph, so the compiler's
    // copies and moves would alias the source object; rebind it instead.
    ScoreNetwork(const ScoreNetwork& other);
    ScoreNetwork(ScoreNetwork&& other);
    ScoreNetwork& operator=(const ScoreNetwork& other);
    ScoreNetwork& operator=(ScoreNetwork&& other);

    const NetworkConfig& config() const { return cfg_; }
    double terminal_time() const { return T_; }

    std::vector<double> forward(const ParamValues& params, std::span<const double> x,
                                double s) const;

private:
    NetworkConfig cfg_;
    double T_;
    Graph g_;
    int x_in_, s_in_, out_;
    mutable Workspace ws_;
};

// The (s/T)^j features used by the network and by actnorm calibration.
std::vector<double> time_features(const NetworkConfig& cfg, double s, double terminal_time);

// Hex-exact JSON serialization. Doubles travel as %a strings so round-trips
// are bitwise; see double_to_hex.
std::string network_config_to_json(const NetworkConfig& cfg);
NetworkConfig network_config_from_json(const std::string& text);
std::string params_to_json(const ParamValues& p);
ParamValues params_from_json(const std::string& text);

}  // namespace riemdiff
