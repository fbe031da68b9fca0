// Command-line front end: train models from a JSON run config, then evaluate,
// sample, grid log-densities, and run the comparison tables off checkpoints.
// All outputs are plain CSV/TSV stamped with the config hash and seed;
// status chatter goes to stderr so piped output stays clean.
//
// Exit codes: 0 success, 2 config error, 3 numeric failure, 4 I/O error.

#include <CLI11.hpp>

#include "riemdiff/common.hpp"
#include "riemdiff/manifold.hpp"
#include "riemdiff/network.hpp"
#include "riemdiff/objective.hpp"
#include "riemdiff/runconfig.hpp"
#include "riemdiff/sde.hpp"
#include "riemdiff/stats.hpp"
#include "riemdiff/targets.hpp"
#include "riemdiff/trainer.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace riemdiff;

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string output_header(std::uint64_t hash, std::uint64_t seed) {
    char buf[80];
    std::snprintf(buf, sizeof buf, "# config-hash=%016llx seed=%llu\n",
                  (unsigned long long)hash, (unsigned long long)seed);
    return buf;
}

std::uint64_t checkpoint_hash(const Checkpoint& c) { return fnv1a(checkpoint_to_json(c)); }

void write_output(const std::string& path, const std::string& content) {
    if (path.empty() || path == "-") {
        std::cout << content;
        return;
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << content;
    if (!out) throw IoError("write to '" + path + "' failed");
    std::cerr << "wrote " << path << "\n";
}

CsvMapping mapping_from_name(const std::string& name) {
    if (name == "latlon") return CsvMapping::LatLonToSphere;
    if (name == "angles") return CsvMapping::AnglesToTorus;
    if (name == "ambient") return CsvMapping::AmbientRaw;
    throw ConfigError("unknown csv mapping '" + name + "'");
}

int resolve_threads(int threads) {
    if (threads < 1) throw ConfigError("--threads must be at least 1");
    if (threads > 1)
        std::cerr << "note: this build runs single-threaded; --threads " << threads
                  << " is capped to 1\n";
    return 1;
}

// ------------------------------------------------------------------ density

struct GridSpec {
    std::vector<std::vector<double>> points;
    double cell_measure = 0.0; // equal-measure grids throughout
};

std::vector<int> parse_grid_ints(const std::string& spec, std::size_t expect) {
    std::vector<int> out;
    std::string cur;
    for (char ch : spec + "x") {
        if (ch == 'x') {
            try {
                out.push_back(std::stoi(cur));
            } catch (const std::exception&) {
                throw ConfigError("bad grid spec '" + spec + "'");
            }
            cur.clear();
        } else {
            cur += ch;
        }
    }
    if (out.size() != expect || out[0] < 1 || (expect == 2 && out[1] < 1))
        throw ConfigError("grid spec '" + spec + "' does not fit the manifold");
    return out;
}

GridSpec make_grid(const Manifold& M, const std::string& spec_in) {
    constexpr double kTwoPi = 6.28318530717958647692528676655900577;
    GridSpec g;
    const std::string& spec = spec_in;
    if (spec.find('@') != std::string::npos)
        throw ConfigError("the '@radius' grid suffix only applies to the hyperboloid");

    if ((M.kind == ManifoldKind::Sphere || M.kind == ManifoldKind::Torus) && M.d == 1) {
        const auto n = parse_grid_ints(spec, 1);
        for (int i = 0; i < n[0]; ++i) {
            const double theta = kTwoPi * (i + 0.5) / n[0];
            g.points.push_back({std::cos(theta), std::sin(theta)});
        }
        g.cell_measure = kTwoPi / n[0];
        return g;
    }
    if (M.kind == ManifoldKind::Sphere && M.d == 2) {
        const auto n = parse_grid_ints(spec, 2); // cos(theta) x phi
        for (int i = 0; i < n[0]; ++i) {
            const double ct = -1.0 + 2.0 * (i + 0.5) / n[0];
            const double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
            for (int j = 0; j < n[1]; ++j) {
                const double phi = kTwoPi * (j + 0.5) / n[1];
                g.points.push_back({st * std::cos(phi), st * std::sin(phi), ct});
            }
        }
        g.cell_measure = (2.0 / n[0]) * (kTwoPi / n[1]);
        return g;
    }
    if (M.kind == ManifoldKind::Torus && M.d == 2) {
        const auto n = parse_grid_ints(spec, 2);
        for (int i = 0; i < n[0]; ++i) {
            const double a = kTwoPi * (i + 0.5) / n[0];
            for (int j = 0; j < n[1]; ++j) {
                const double b = kTwoPi * (j + 0.5) / n[1];
                g.points.push_back({std::cos(a), std::sin(a), std::cos(b), std::sin(b)});
            }
        }
        g.cell_measure = (kTwoPi / n[0]) * (kTwoPi / n[1]);
        return g;
    }
    throw ConfigError("no density grid is defined for " + M.name() + " at this dimension");
}

int cmd_density(const std::string& ckpt_path, const std::string& spec, double atol,
                double rtol, const std::string& out_path) {
    const Checkpoint ck = load_checkpoint(ckpt_path);
    ProjectedField field = field_from_checkpoint(ck);
    const Manifold& M = ck.manifold;

    std::ostringstream out;
    out << output_header(checkpoint_hash(ck), ck.train.seed);
    for (int i = 0; i < M.m; ++i) out << "x" << i << ",";
    out << "log_density,cell_measure\n";

    if (M.kind == ManifoldKind::Hyperboloid && M.d == 2) {
        // Per-row measures: chart cells are equal in coordinates, not in
        // hyperbolic area.
        constexpr double kDefaultRadius = 3.0;
        std::string spec_nm = spec;
        double radius = kDefaultRadius;
        const std::size_t at = spec.find('@');
        if (at != std::string::npos) {
            try {
                radius = std::stod(spec.substr(at + 1));
            } catch (const std::exception&) {
                throw ConfigError("bad grid radius in '" + spec + "'");
            }
            if (!(radius > 0.0)) throw ConfigError("grid radius must be positive");
            spec_nm = spec.substr(0, at);
        }
        const auto n = parse_grid_ints(spec_nm, 2);
        const double da = 2.0 * radius / n[0], db = 2.0 * radius / n[1];
        const double neg_inv_k = -1.0 / M.curvature;
        for (int i = 0; i < n[0]; ++i) {
            const double x1 = -radius + da * (i + 0.5);
            for (int j = 0; j < n[1]; ++j) {
                const double x2 = -radius + db * (j + 0.5);
                const std::vector<double> x = {std::sqrt(neg_inv_k + x1 * x1 + x2 * x2), x1,
                                               x2};
                const double ld = ode_log_likelihood(field, x, atol, rtol);
                const double measure = da * db * std::sqrt(neg_inv_k) / x[0];
                out << fmt(x[0]) << "," << fmt(x1) << "," << fmt(x2) << "," << fmt(ld) << ","
                    << fmt(measure) << "\n";
            }
        }
        write_output(out_path, out.str());
        return 0;
    }

    const GridSpec grid = make_grid(M, spec);
    for (const auto& x : grid.points) {
        const double ld = ode_log_likelihood(field, x, atol, rtol);
        for (double v : x) out << fmt(v) << ",";
        out << fmt(ld) << "," << fmt(grid.cell_measure) << "\n";
    }
    write_output(out_path, out.str());
    return 0;
}

// ------------------------------------------------------------------- train

int cmd_train(const std::string& config_path, std::uint64_t seed) {
    RunConfig rc = load_run_config(config_path);
    if (!rc.target)
        throw ConfigError("the run config must define a target or dataset to train on");
    rc.train.seed = seed;
    std::cerr << "training on " << rc.manifold.name() << " for " << rc.train.steps
              << " steps\n";
    const TrainResult res = train(rc.manifold, *rc.target, rc.network, rc.train);
    save_checkpoint(res.checkpoint, rc.paths.checkpoint);
    std::cerr << "wrote " << rc.paths.checkpoint << "\n";
    write_output(rc.paths.metrics,
                 output_header(rc.config_hash, seed) + res.metrics_tsv);
    if (res.clip_events > 0)
        std::cerr << "note: the gradient clip fired " << res.clip_events << " times\n";
    return 0;
}

// -------------------------------------------------------------------- eval

int cmd_eval(const std::string& ckpt_path, const std::string& config_path,
             const std::string& data_path, const std::string& mapping_name, bool degrees,
             int n_points, int kelbo_k, int kelbo_steps, int ode_flag, std::uint64_t seed,
             const std::string& out_path) {
    const Checkpoint ck = load_checkpoint(ckpt_path);
    const Manifold& M = ck.manifold;
    EvalConfig ev;

    std::vector<std::vector<double>> points;
    if (!config_path.empty()) {
        const RunConfig rc = load_run_config(config_path);
        if (rc.manifold.kind != M.kind || rc.manifold.d != M.d || rc.manifold.n != M.n)
            throw ConfigError("the config's manifold does not match the checkpoint");
        ev = rc.eval;
        if (data_path.empty()) {
            if (!rc.target) throw ConfigError("the config has no target to sample");
            RngStream data_rng(seed, 1);
            points = rc.target->sample_n(data_rng, n_points);
        }
    }
    if (!data_path.empty())
        points = ingest_csv(data_path, mapping_from_name(mapping_name), M, degrees);
    if (points.empty())
        throw ConfigError("eval needs data: give --data, or --config with a target");

    if (kelbo_k > 0) ev.kelbo_k = kelbo_k;
    if (kelbo_steps > 0) ev.kelbo_steps = kelbo_steps;
    if (ode_flag >= 0) ev.ode = ode_flag > 0;

    ProjectedField field = field_from_checkpoint(ck);
    RngStream rng(seed, 2);
    std::vector<double> kelbo_nll, ode_nll;
    kelbo_nll.reserve(points.size());
    for (const auto& x : points) {
        kelbo_nll.push_back(-kelbo(field, x, ev.kelbo_k, ev.kelbo_steps, rng));
        if (ev.ode) ode_nll.push_back(-ode_log_likelihood(field, x, ev.ode_atol, ev.ode_rtol));
    }

    std::ostringstream out;
    out << output_header(checkpoint_hash(ck), seed);
    out << "metric\tmean\tstd\tn\n";
    const SampleSummary ks = summarize(kelbo_nll);
    out << "kelbo_nll\t" << fmt(ks.mean) << "\t" << fmt(std::sqrt(ks.variance)) << "\t"
        << kelbo_nll.size() << "\n";
    if (ev.ode) {
        const SampleSummary os = summarize(ode_nll);
        out << "ode_nll\t" << fmt(os.mean) << "\t" << fmt(std::sqrt(os.variance)) << "\t"
            << ode_nll.size() << "\n";
    }
    write_output(out_path, out.str());
    return 0;
}

// ------------------------------------------------------------------ sample

int cmd_sample(const std::string& ckpt_path, long n, double lambda, int steps,
               std::uint64_t seed, const std::string& out_path) {
    if (n < 0) throw ConfigError("--n must be nonnegative");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("--lambda must be in [0, 1]");
    const Checkpoint ck = load_checkpoint(ckpt_path);
    ProjectedField field = field_from_checkpoint(ck);
    const Manifold& M = ck.manifold;

    PathConfig pc;
    pc.terminal_time = ck.train.terminal_time;
    pc.n_steps = steps > 0 ? steps : ck.train.path_steps;

    std::ostringstream out;
    out << output_header(checkpoint_hash(ck), seed);
    for (int i = 0; i < M.m; ++i) out << "x" << i << (i + 1 < M.m ? "," : "\n");
    RngStream rng(seed, 3);
    for (long i = 0; i < n; ++i) {
        const std::vector<double> x = simulate_generative(M, field, pc, rng, lambda);
        for (int j = 0; j < M.m; ++j)
            out << fmt(x[std::size_t(j)]) << (j + 1 < M.m ? "," : "\n");
    }
    write_output(out_path, out.str());
    return 0;
}

// ------------------------------------------------------------------ ablate

int cmd_ablate(const std::string& mode, const std::string& ckpt_path,
               const std::string& config_path, long draws, int n_points, std::uint64_t seed,
               const std::string& out_path) {
    const Checkpoint ck = load_checkpoint(ckpt_path);
    const Manifold& M = ck.manifold;
    std::ostringstream out;
    out << output_header(checkpoint_hash(ck), seed);

    auto target_from_config = [&]() {
        if (config_path.empty())
            throw ConfigError("--mode " + mode + " needs --config for the target");
        RunConfig rc = load_run_config(config_path);
        if (!rc.target) throw ConfigError("the config has no target");
        if (rc.manifold.kind != M.kind || rc.manifold.d != M.d || rc.manifold.n != M.n)
            throw ConfigError("the config's manifold does not match the checkpoint");
        return std::move(*rc.target);
    };

    if (mode == "importance") {
        // Variance of single-draw loss estimates, uniform vs trained proposal.
        const Target target = target_from_config();
        ObjectiveConfig ocfg;
        ocfg.terminal_time = ck.train.terminal_time;
        ocfg.path_steps = ck.train.path_steps;
        ocfg.divergence = ck.train.divergence;
        ocfg.hutchinson_samples = ck.train.hutchinson_samples;
        CtElboLoss loss(M, ck.network, ocfg);
        TimeProposal uniform(ck.proposal, ck.train.terminal_time);
        TimeProposal trained = proposal_from_checkpoint(ck);

        RngStream rng_x(seed, 4), rng_mc(seed, 5);
        std::vector<double> vu, vt;
        vu.reserve(std::size_t(draws));
        vt.reserve(std::size_t(draws));
        for (long i = 0; i < draws; ++i) {
            const std::vector<double> x = target.sample(rng_x);
            vu.push_back(loss.integrand(ck.params, uniform, x, rng_mc).value);
            vt.push_back(loss.integrand(ck.params, trained, x, rng_mc).value);
        }
        const SampleSummary su = summarize(vu), st = summarize(vt);
        out << "proposal\tn_draws\tloss_mean\tloss_variance\n";
        out << "uniform\t" << draws << "\t" << fmt(su.mean) << "\t" << fmt(su.variance)
            << "\n";
        out << "trained\t" << draws << "\t" << fmt(st.mean) << "\t" << fmt(st.variance)
            << "\n";
        out << "# variance_ratio=" << fmt(st.variance / su.variance) << "\n";
        write_output(out_path, out.str());
        return 0;
    }

    if (mode == "int-steps") {
        // Integration bias against the direct endpoint law; tori only, where
        // the inference path is exactly Brownian and needs no integrator.
        if (M.kind != ManifoldKind::Torus)
            throw ConfigError("--mode int-steps needs a torus checkpoint");
        const Target target = target_from_config();
        TimeProposal proposal = proposal_from_checkpoint(ck);
        ProjectedField field = field_from_checkpoint(ck);

        struct Arm {
            std::string label;
            double mean = 0.0, se = 0.0;
        };
        std::vector<Arm> arms;

        // Direct arm: Y_s sampled exactly, integrand assembled by hand.
        {
            RngStream rng_x(seed, 6), rng_mc(seed, 7);
            std::vector<double> vals(std::size_t(draws), 0.0);
            std::vector<double> value(std::size_t(M.m), 0.0);
            for (long i = 0; i < draws; ++i) {
                const std::vector<double> x = target.sample(rng_x);
                const TimeProposal::Draw d = proposal.sample(rng_mc);
                const std::vector<double> y = direct_torus_brownian(M.d, d.s, x, rng_mc);
                const double div = field.value_and_divergence(y, d.s, rng_mc, value);
                double nrm2 = 0.0;
                for (double v : value) nrm2 += v * v;
                vals[std::size_t(i)] = (0.5 * nrm2 + div) / d.density;
            }
            const SampleSummary s = summarize(vals);
            arms.push_back({"direct", s.mean, s.std_error});
        }
        for (int steps : {10, 100}) {
            ObjectiveConfig ocfg;
            ocfg.terminal_time = ck.train.terminal_time;
            ocfg.path_steps = steps;
            ocfg.divergence = ck.train.divergence;
            ocfg.hutchinson_samples = ck.train.hutchinson_samples;
            CtElboLoss loss(M, ck.network, ocfg);
            RngStream rng_x(seed, 6), rng_mc(seed, 7);
            std::vector<double> vals(std::size_t(draws), 0.0);
            for (long i = 0; i < draws; ++i) {
                const std::vector<double> x = target.sample(rng_x);
                vals[std::size_t(i)] = loss.integrand(ck.params, proposal, x, rng_mc).value;
            }
            const SampleSummary s = summarize(vals);
            arms.push_back({std::to_string(steps), s.mean, s.std_error});
        }
        out << "path_steps\tloss_mean\tstd_error\tabs_gap_to_direct\n";
        for (const Arm& a : arms)
            out << a.label << "\t" << fmt(a.mean) << "\t" << fmt(a.se) << "\t"
                << fmt(std::abs(a.mean - arms[0].mean)) << "\n";
        write_output(out_path, out.str());
        return 0;
    }

    if (mode == "hutchinson-vs-qr") {
        // Per-point divergence estimates at matched (x, s, path) draws.
        TimeProposal proposal = proposal_from_checkpoint(ck);
        const std::vector<int> probe_counts = {1, 10, 100};
        ObjectiveConfig qr_cfg;
        qr_cfg.terminal_time = ck.train.terminal_time;
        qr_cfg.path_steps = ck.train.path_steps;
        qr_cfg.divergence = DivergenceMethod::QrExact;
        CtElboLoss qr_loss(M, ck.network, qr_cfg);
        std::vector<CtElboLoss> hutch;
        for (int p : probe_counts) {
            ObjectiveConfig c = qr_cfg;
            c.divergence = DivergenceMethod::Hutchinson;
            c.hutchinson_samples = p;
            hutch.emplace_back(M, ck.network, c);
        }

        RngStream rng_x(seed, 8);
        out << "point\ts\tqr";
        for (int p : probe_counts) out << "\thutchinson_" << p;
        out << "\n";
        std::vector<double> gaps(probe_counts.size(), 0.0);
        std::vector<double> x(std::size_t(M.m), 0.0);
        for (int i = 0; i < n_points; ++i) {
            prior_sample(M, rng_x, x);
            RngStream rng_qr(seed, 100 + std::uint64_t(i));
            const IntegrandSample base = qr_loss.integrand(ck.params, proposal, x, rng_qr);
            out << i << "\t" << fmt(base.s) << "\t" << fmt(base.div);
            for (std::size_t k = 0; k < hutch.size(); ++k) {
                RngStream rng_h(seed, 100 + std::uint64_t(i));
                const IntegrandSample est =
                    hutch[k].integrand(ck.params, proposal, x, rng_h);
                out << "\t" << fmt(est.div);
                gaps[k] += std::abs(est.div - base.div) / n_points;
            }
            out << "\n";
        }
        for (std::size_t k = 0; k < probe_counts.size(); ++k)
            out << "# mean_abs_gap_" << probe_counts[k] << "=" << fmt(gaps[k]) << "\n";
        write_output(out_path, out.str());
        return 0;
    }

    throw ConfigError("unknown ablate mode '" + mode + "'");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"continuous-time diffusion models on embedded manifolds"};
    app.require_subcommand(1);
    int threads = 1;
    app.add_option("--threads", threads, "worker count cap")
        ->envname("RIEMDIFF_THREADS")
        ->check(CLI::PositiveNumber);

    std::string config_path, ckpt_path, out_path, data_path, grid_spec;
    std::string mapping_name = "ambient", mode;
    std::uint64_t seed = 0;
    long n_samples = 100;
    int n_points = 128, kelbo_k = 0, kelbo_steps = 0, sample_steps = 0, ablate_points = 20;
    long draws = 10000;
    double lambda = 0.0, atol = 1e-3, rtol = 1e-3;
    bool degrees = false, ode_on = false, ode_off = false;

    CLI::App* t = app.add_subcommand("train", "fit a model from a run config");
    t->add_option("--config", config_path, "run config JSON")->required();
    t->add_option("--seed", seed, "RNG seed")->required();

    CLI::App* e = app.add_subcommand("eval", "evidence bounds on held-out points");
    e->add_option("--checkpoint", ckpt_path, "checkpoint JSON")->required();
    e->add_option("--config", config_path, "run config (target + eval defaults)");
    e->add_option("--data", data_path, "CSV of evaluation points");
    e->add_option("--mapping", mapping_name, "CSV mapping: latlon, angles, ambient");
    e->add_flag("--degrees", degrees, "angles CSV is in degrees");
    e->add_option("--n", n_points, "points to draw from the config target");
    e->add_option("--kelbo-k", kelbo_k, "importance paths per point");
    e->add_option("--kelbo-steps", kelbo_steps, "integration steps per path");
    e->add_flag("--ode", ode_on, "report exact ODE log-densities");
    e->add_flag("--no-ode", ode_off, "skip the ODE pass");
    e->add_option("--seed", seed, "RNG seed");
    e->add_option("--out", out_path, "report path (default: stdout)");

    CLI::App* s = app.add_subcommand("sample", "draw from the generative dynamics");
    s->add_option("--checkpoint", ckpt_path, "checkpoint JSON")->required();
    s->add_option("--n", n_samples, "number of samples");
    s->add_option("--lambda", lambda, "family member: 0 SDE .. 1 deterministic flow");
    s->add_option("--steps", sample_steps, "integration steps (default: checkpoint's)");
    s->add_option("--seed", seed, "RNG seed")->required();
    s->add_option("--out", out_path, "CSV path (default: stdout)");

    CLI::App* d = app.add_subcommand("density", "exact log-density on a grid");
    d->add_option("--checkpoint", ckpt_path, "checkpoint JSON")->required();
    d->add_option("--grid", grid_spec, "N (circles), NxM (surfaces), NxM@R (hyperboloid)")
        ->required();
    d->add_option("--atol", atol, "flow absolute tolerance");
    d->add_option("--rtol", rtol, "flow relative tolerance");
    d->add_option("--out", out_path, "CSV path (default: stdout)");

    CLI::App* a = app.add_subcommand("ablate", "comparison tables off a checkpoint");
    a->add_option("--mode", mode, "int-steps, importance, or hutchinson-vs-qr")->required();
    a->add_option("--checkpoint", ckpt_path, "checkpoint JSON")->required();
    a->add_option("--config", config_path, "run config providing the target");
    a->add_option("--draws", draws, "Monte Carlo draws per arm");
    a->add_option("--points", ablate_points, "points for hutchinson-vs-qr");
    a->add_option("--seed", seed, "RNG seed");
    a->add_option("--out", out_path, "TSV path (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : 2;
    }

    try {
        resolve_threads(threads);
        if (t->parsed()) return cmd_train(config_path, seed);
        if (e->parsed()) {
            const int ode_flag = ode_off ? 0 : (ode_on ? 1 : -1);
            return cmd_eval(ckpt_path, config_path, data_path, mapping_name, degrees,
                            n_points, kelbo_k, kelbo_steps, ode_flag, seed, out_path);
        }
        if (s->parsed())
            return cmd_sample(ckpt_path, n_samples, lambda, sample_steps, seed, out_path);
        if (d->parsed()) return cmd_density(ckpt_path, grid_spec, atol, rtol, out_path);
        if (a->parsed())
            return cmd_ablate(mode, ckpt_path, config_path, draws, ablate_points, seed,
                              out_path);
        std::cerr << "error: no command\n";
        return 2;
    } catch (const ConfigError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 2;
    } catch (const IoError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 4;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 3;
    }
}
