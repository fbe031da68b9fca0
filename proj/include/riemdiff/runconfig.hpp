#pragma once

// One JSON document drives a whole run: which manifold, which network, how to
// train, where files go, what target (or dataset) to fit, and how to
// evaluate. Parsing is strict: unknown keys anywhere are ConfigErrors, so a
// typo cannot silently fall back to a default. Doubles here are plain JSON
// numbers (these files are written by people); bit-exactness only matters
// for checkpoints, which use hex floats instead.

#include "riemdiff/manifold.hpp"
#include "riemdiff/network.hpp"
#include "riemdiff/targets.hpp"
#include "riemdiff/trainer.hpp"

#include <cstdint>
#include <optional>
#include <string>

namespace riemdiff {

struct EvalConfig {
    int kelbo_k = 100;
    int kelbo_steps = 100; // path steps behind each kelbo draw
    bool ode = true;       // also report exact ODE log-densities
    double ode_atol = 1e-3;
    double ode_rtol = 1e-3;
};

struct PathsConfig {
    std::string checkpoint = "checkpoint.json";
    std::string metrics = "metrics.tsv";
};

struct RunConfig {
    Manifold manifold = Manifold::sphere(1);
    NetworkConfig network; // ambient_dim filled in from the manifold
    TrainConfig train;     // starts from the manifold family's defaults
    PathsConfig paths;
    EvalConfig eval;
    std::optional<Target> target;  // from the target or dataset section
    std::uint64_t config_hash = 0; // FNV-1a of the canonical document
};

// Throws ConfigError on any schema or value problem; a dataset section reads
// its CSV immediately, so file problems surface here as IoError.
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::string& path);

} // namespace riemdiff
