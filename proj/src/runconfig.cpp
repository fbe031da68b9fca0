#include "riemdiff/runconfig.hpp"

#include "riemdiff/common.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using nlohmann::json;

namespace riemdiff {

namespace {

// Presence rules: every present key must be allowed, every required key
// present. `required` is a subset of `allowed`.
void check_keys(const json& obj, const std::vector<std::string>& allowed,
                const std::vector<std::string>& required, const std::string& where) {
    if (!obj.is_object())
        throw ConfigError("run config: the " + where + " section must be an object");
    for (const auto& item : obj.items()) {
        bool known = false;
        for (const auto& k : allowed) known = known || k == item.key();
        if (!known)
            throw ConfigError("run config: unknown key '" + item.key() + "' in " + where);
    }
    for (const auto& k : required)
        if (!obj.contains(k))
            throw ConfigError("run config: missing key '" + k + "' in " + where);
}

Manifold parse_manifold(const json& jm) {
    check_keys(jm, {"kind", "d", "n", "curvature"}, {"kind"}, "manifold");
    const std::string kind = jm.at("kind").get<std::string>();
    const bool has_d = jm.contains("d"), has_n = jm.contains("n");
    const bool has_curv = jm.contains("curvature");
    if (kind == "orthogonal") {
        if (!has_n || has_d || has_curv)
            throw ConfigError("run config: the orthogonal manifold takes exactly 'n'");
        return Manifold::orthogonal(jm.at("n").get<int>());
    }
    if (!has_d || has_n)
        throw ConfigError("run config: the " + kind + " manifold takes exactly 'd'");
    if (kind == "sphere") {
        if (has_curv) throw ConfigError("run config: curvature only applies to hyperboloid");
        return Manifold::sphere(jm.at("d").get<int>());
    }
    if (kind == "torus") {
        if (has_curv) throw ConfigError("run config: curvature only applies to hyperboloid");
        return Manifold::torus(jm.at("d").get<int>());
    }
    if (kind == "hyperboloid")
        return Manifold::hyperboloid(jm.at("d").get<int>(),
                                     has_curv ? jm.at("curvature").get<double>() : -1.0);
    throw ConfigError("run config: unknown manifold kind '" + kind + "'");
}

NetworkConfig parse_network(const json& jn, const Manifold& M) {
    NetworkConfig cfg;
    cfg.ambient_dim = M.m;
    if (jn.is_null()) return cfg;
    check_keys(jn, {"activation", "hidden_layers", "hidden_width", "actnorm_first",
                    "time_features"},
               {}, "network");
    if (jn.contains("activation"))
        cfg.activation = activation_from_name(jn.at("activation").get<std::string>());
    if (jn.contains("hidden_layers")) cfg.hidden_layers = jn.at("hidden_layers").get<int>();
    if (jn.contains("hidden_width")) cfg.hidden_width = jn.at("hidden_width").get<int>();
    if (jn.contains("actnorm_first")) cfg.actnorm_first = jn.at("actnorm_first").get<bool>();
    if (jn.contains("time_features")) cfg.time_features = jn.at("time_features").get<int>();
    cfg.validate();
    return cfg;
}

TrainConfig parse_train(const json& jt, const Manifold& M) {
    TrainConfig cfg = TrainConfig::defaults_for(M);
    if (jt.is_null()) return cfg;
    check_keys(jt,
               {"learning_rate", "beta1", "beta2", "steps", "batch_size", "scheduler",
                "proposal_update_period", "proposal_inner_steps", "path_steps", "seed",
                "divergence", "hutchinson_samples", "clip_norm", "terminal_time", "proposal"},
               {}, "train");
    if (jt.contains("learning_rate")) cfg.learning_rate = jt.at("learning_rate").get<double>();
    if (jt.contains("beta1")) cfg.beta1 = jt.at("beta1").get<double>();
    if (jt.contains("beta2")) cfg.beta2 = jt.at("beta2").get<double>();
    if (jt.contains("steps")) cfg.steps = jt.at("steps").get<long>();
    if (jt.contains("batch_size")) cfg.batch_size = jt.at("batch_size").get<int>();
    if (jt.contains("scheduler")) {
        const std::string s = jt.at("scheduler").get<std::string>();
        if (s == "cosine")
            cfg.scheduler = LrScheduler::Cosine;
        else if (s == "none")
            cfg.scheduler = LrScheduler::None;
        else
            throw ConfigError("run config: unknown scheduler '" + s + "'");
    }
    if (jt.contains("proposal_update_period"))
        cfg.proposal_update_period = jt.at("proposal_update_period").get<long>();
    if (jt.contains("proposal_inner_steps"))
        cfg.proposal_inner_steps = jt.at("proposal_inner_steps").get<int>();
    if (jt.contains("path_steps")) cfg.path_steps = jt.at("path_steps").get<int>();
    if (jt.contains("seed")) cfg.seed = jt.at("seed").get<std::uint64_t>();
    if (jt.contains("divergence")) {
        const std::string s = jt.at("divergence").get<std::string>();
        if (s == "qr")
            cfg.divergence = DivergenceMethod::QrExact;
        else if (s == "hutchinson")
            cfg.divergence = DivergenceMethod::Hutchinson;
        else
            throw ConfigError("run config: unknown divergence method '" + s + "'");
    }
    if (jt.contains("hutchinson_samples"))
        cfg.hutchinson_samples = jt.at("hutchinson_samples").get<int>();
    if (jt.contains("clip_norm")) cfg.clip_norm = jt.at("clip_norm").get<double>();
    if (jt.contains("terminal_time")) cfg.terminal_time = jt.at("terminal_time").get<double>();
    if (jt.contains("proposal")) {
        const json& jp = jt.at("proposal");
        check_keys(jp, {"layers", "units"}, {}, "train.proposal");
        if (jp.contains("layers")) cfg.proposal.layers = jp.at("layers").get<int>();
        if (jp.contains("units")) cfg.proposal.units = jp.at("units").get<int>();
    }
    cfg.validate();
    return cfg;
}

PathsConfig parse_paths(const json& jp) {
    PathsConfig cfg;
    if (jp.is_null()) return cfg;
    check_keys(jp, {"checkpoint", "metrics"}, {}, "paths");
    if (jp.contains("checkpoint")) cfg.checkpoint = jp.at("checkpoint").get<std::string>();
    if (jp.contains("metrics")) cfg.metrics = jp.at("metrics").get<std::string>();
    return cfg;
}

EvalConfig parse_eval(const json& je) {
    EvalConfig cfg;
    if (je.is_null()) return cfg;
    check_keys(je, {"kelbo_k", "kelbo_steps", "ode", "ode_atol", "ode_rtol"}, {}, "eval");
    if (je.contains("kelbo_k")) cfg.kelbo_k = je.at("kelbo_k").get<int>();
    if (je.contains("kelbo_steps")) cfg.kelbo_steps = je.at("kelbo_steps").get<int>();
    if (je.contains("ode")) cfg.ode = je.at("ode").get<bool>();
    if (je.contains("ode_atol")) cfg.ode_atol = je.at("ode_atol").get<double>();
    if (je.contains("ode_rtol")) cfg.ode_rtol = je.at("ode_rtol").get<double>();
    if (cfg.kelbo_k < 1 || cfg.kelbo_steps < 1)
        throw ConfigError("run config: kelbo_k and kelbo_steps must be at least 1");
    if (!(cfg.ode_atol > 0.0) || !(cfg.ode_rtol > 0.0))
        throw ConfigError("run config: ode tolerances must be positive");
    return cfg;
}

std::vector<TargetComponent> parse_components(const json& jc, const Manifold& M) {
    if (!jc.is_array() || jc.empty())
        throw ConfigError("run config: target components must be a nonempty array");
    std::vector<TargetComponent> comps;
    for (const auto& item : jc) {
        check_keys(item, {"mean", "mean_angles", "spread", "weight"}, {}, "target component");
        TargetComponent c;
        const bool has_mean = item.contains("mean");
        const bool has_angles = item.contains("mean_angles");
        if (has_mean == has_angles)
            throw ConfigError(
                "run config: each component takes exactly one of 'mean' and 'mean_angles'");
        if (has_mean) {
            c.mean = item.at("mean").get<std::vector<double>>();
        } else {
            if (M.kind != ManifoldKind::Torus)
                throw ConfigError("run config: 'mean_angles' only applies to torus targets");
            const auto angles = item.at("mean_angles").get<std::vector<double>>();
            if (int(angles.size()) != M.d)
                throw ConfigError("run config: 'mean_angles' needs one angle per circle");
            c.mean.reserve(angles.size() * 2);
            for (double a : angles) {
                c.mean.push_back(std::cos(a));
                c.mean.push_back(std::sin(a));
            }
        }
        if (item.contains("spread")) c.spread = item.at("spread").get<double>();
        if (item.contains("weight")) c.weight = item.at("weight").get<double>();
        comps.push_back(std::move(c));
    }
    return comps;
}

Target parse_target(const json& jt, const Manifold& M) {
    check_keys(jt, {"kind", "components", "kappa"}, {"kind"}, "target");
    const std::string kind = jt.at("kind").get<std::string>();
    if (kind == "hyperbolic-checkerboard") {
        if (jt.contains("components") || jt.contains("kappa"))
            throw ConfigError("run config: the checkerboard target takes no parameters");
        return Target::hyperbolic_checkerboard(M);
    }
    if (kind == "so3-default-modes") {
        if (jt.contains("components"))
            throw ConfigError("run config: so3-default-modes takes 'kappa', not components");
        if (!jt.contains("kappa"))
            throw ConfigError("run config: so3-default-modes needs 'kappa'");
        return Target::so3_multimodal(
            Target::so3_default_modes(jt.at("kappa").get<double>()));
    }
    if (jt.contains("kappa"))
        throw ConfigError("run config: 'kappa' only applies to so3-default-modes");
    if (!jt.contains("components"))
        throw ConfigError("run config: the " + kind + " target needs components");
    const auto comps = parse_components(jt.at("components"), M);
    if (kind == "vmf-mixture") return Target::vmf_mixture(M, comps);
    if (kind == "wrapped-gaussian-mixture") return Target::wrapped_gaussian_mixture(M, comps);
    if (kind == "so3-multimodal") return Target::so3_multimodal(comps);
    throw ConfigError("run config: unknown target kind '" + kind + "'");
}

Target parse_dataset(const json& jd, const Manifold& M) {
    check_keys(jd, {"path", "mapping", "degrees"}, {"path", "mapping"}, "dataset");
    const std::string mapping = jd.at("mapping").get<std::string>();
    CsvMapping map;
    if (mapping == "latlon")
        map = CsvMapping::LatLonToSphere;
    else if (mapping == "angles")
        map = CsvMapping::AnglesToTorus;
    else if (mapping == "ambient")
        map = CsvMapping::AmbientRaw;
    else
        throw ConfigError("run config: unknown csv mapping '" + mapping + "'");
    const bool degrees = jd.contains("degrees") && jd.at("degrees").get<bool>();
    const auto points = ingest_csv(jd.at("path").get<std::string>(), map, M, degrees);
    return Target::dataset(M, points);
}

bool manifolds_agree(const Manifold& a, const Manifold& b) {
    return a.kind == b.kind && a.d == b.d && a.m == b.m && a.curvature == b.curvature &&
           a.n == b.n;
}

}  // namespace

RunConfig run_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("run config: malformed JSON: ") + e.what());
    }

    RunConfig rc;
    try {
        check_keys(j, {"manifold", "network", "train", "paths", "target", "dataset", "eval"},
                   {"manifold"}, "the run config");
        rc.manifold = parse_manifold(j.at("manifold"));
        rc.network = parse_network(j.value("network", json()), rc.manifold);
        rc.train = parse_train(j.value("train", json()), rc.manifold);
        rc.paths = parse_paths(j.value("paths", json()));
        rc.eval = parse_eval(j.value("eval", json()));
        if (j.contains("target") && j.contains("dataset"))
            throw ConfigError("run config: give either a target or a dataset, not both");
        if (j.contains("target")) rc.target = parse_target(j.at("target"), rc.manifold);
        if (j.contains("dataset")) rc.target = parse_dataset(j.at("dataset"), rc.manifold);
        if (rc.target && !manifolds_agree(rc.target->manifold(), rc.manifold))
            throw ConfigError("run config: the target lives on " +
                              rc.target->manifold().name() + ", not on " +
                              rc.manifold.name());
    } catch (const json::exception& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    }
    rc.config_hash = fnv1a(j.dump());
    return rc;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("load_run_config: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return run_config_from_json(buf.str());
}

}  // namespace riemdiff
