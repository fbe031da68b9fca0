// Python surface: a thin Model wrapper over checkpoints (train, sample,
// evidence bounds, exact log-densities) plus the manifold vocabulary.
// Containers cross the boundary as plain lists; no numpy dependency.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "riemdiff/common.hpp"
#include "riemdiff/manifold.hpp"
#include "riemdiff/objective.hpp"
#include "riemdiff/rng.hpp"
#include "riemdiff/runconfig.hpp"
#include "riemdiff/sde.hpp"
#include "riemdiff/trainer.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace py = pybind11;
using namespace riemdiff;

namespace {

// Checkpoint plus a lazily built evaluator; python sees one object that can
// sample, score, and round-trip through JSON.
class Model {
public:
    explicit Model(Checkpoint ck) : ck_(std::move(ck)) {}

    static Model train_from_config(const std::string& config_json, std::uint64_t seed) {
        RunConfig rc = run_config_from_json(config_json);
        if (!rc.target)
            throw ConfigError("the run config must define a target or dataset to train on");
        rc.train.seed = seed;
        TrainResult res = train(rc.manifold, *rc.target, rc.network, rc.train);
        Model m(std::move(res.checkpoint));
        m.metrics_tsv_ = std::move(res.metrics_tsv);
        return m;
    }

    static Model load(const std::string& path) { return Model(load_checkpoint(path)); }
    void save(const std::string& path) const { save_checkpoint(ck_, path); }

    static Model from_json(const std::string& text) {
        return Model(checkpoint_from_json(text));
    }
    std::string to_json() const { return checkpoint_to_json(ck_); }

    const Manifold& manifold() const { return ck_.manifold; }
    long step() const { return ck_.step; }
    const std::string& metrics_tsv() const { return metrics_tsv_; }

    std::vector<std::vector<double>> sample(long n, std::uint64_t seed, double lambda,
                                            int steps) {
        if (n < 0) throw ConfigError("n must be nonnegative");
        if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must be in [0, 1]");
        PathConfig pc;
        pc.terminal_time = ck_.train.terminal_time;
        pc.n_steps = steps > 0 ? steps : ck_.train.path_steps;
        RngStream rng(seed, 3);
        std::vector<std::vector<double>> out;
        out.reserve(std::size_t(n));
        for (long i = 0; i < n; ++i)
            out.push_back(simulate_generative(ck_.manifold, field(), pc, rng, lambda));
        return out;
    }

    double log_density(const std::vector<double>& x, double atol, double rtol) {
        return ode_log_likelihood(field(), x, atol, rtol);
    }

    double evidence_bound(const std::vector<double>& x, int k, int steps,
                          std::uint64_t seed) {
        RngStream rng(seed, 2);
        return kelbo(field(), x, k, steps, rng);
    }

private:
    ProjectedField& field() {
        if (!field_) field_.emplace(field_from_checkpoint(ck_));
        return *field_;
    }

    Checkpoint ck_;
    std::string metrics_tsv_;
    std::optional<ProjectedField> field_;
};

std::string manifold_repr(const Manifold& M) { return "<Manifold " + M.name() + ">"; }

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "diffusion generative models on embedded manifolds";
    m.attr("__version__") = "0.1.0";

    const py::exception<Error> base(m, "Error");
    py::register_exception<ConfigError>(m, "ConfigError", base);
    py::register_exception<IoError>(m, "IoError", base);
    py::register_exception<NumericError>(m, "NumericError", base);
    py::register_exception<ContractError>(m, "ContractError", base);
    py::register_exception<RankDeficiencyError>(m, "RankDeficiencyError", base);

    py::class_<Manifold>(m, "Manifold")
        .def_static("sphere", &Manifold::sphere, py::arg("d"))
        .def_static("torus", &Manifold::torus, py::arg("d"))
        .def_static("hyperboloid", &Manifold::hyperboloid, py::arg("d"),
                    py::arg("curvature") = -1.0)
        .def_static("orthogonal", &Manifold::orthogonal, py::arg("n"))
        .def_readonly("d", &Manifold::d)
        .def_readonly("m", &Manifold::m)
        .def_readonly("n", &Manifold::n)
        .def_readonly("curvature", &Manifold::curvature)
        .def("name", &Manifold::name)
        .def("__repr__", &manifold_repr);

    m.def(
        "on_manifold",
        [](const Manifold& M, const std::vector<double>& x, double tol) {
            return on_manifold(M, x, tol);
        },
        py::arg("manifold"), py::arg("x"), py::arg("tol") = 1e-8);
    m.def(
        "prior_log_density",
        [](const Manifold& M, const std::vector<double>& x) {
            return prior_log_density(M, x);
        },
        py::arg("manifold"), py::arg("x"));
    m.def(
        "prior_sample",
        [](const Manifold& M, std::uint64_t seed) {
            RngStream rng(seed, 0);
            const auto um = std::size_t(M.m);
            std::vector<double> x(um, 0.0);
            prior_sample(M, rng, x);
            return x;
        },
        py::arg("manifold"), py::arg("seed"));
    m.def(
        "config_hash",
        [](const std::string& config_json) { return run_config_from_json(config_json).config_hash; },
        py::arg("config_json"), "Whitespace-insensitive hash of a run config document.");

    py::class_<Model>(m, "Model")
        .def_static("train", &Model::train_from_config, py::arg("config_json"),
                    py::arg("seed"), py::call_guard<py::gil_scoped_release>(),
                    "Fit a model from a run config document.")
        .def_static("load", &Model::load, py::arg("path"))
        .def_static("from_json", &Model::from_json, py::arg("text"))
        .def("save", &Model::save, py::arg("path"))
        .def("to_json", &Model::to_json)
        .def_property_readonly("manifold", &Model::manifold)
        .def_property_readonly("step", &Model::step)
        .def_property_readonly("metrics_tsv", &Model::metrics_tsv)
        .def("sample", &Model::sample, py::arg("n"), py::arg("seed"),
             py::arg("lambda_") = 0.0, py::arg("steps") = 0,
             py::call_guard<py::gil_scoped_release>(),
             "Integrate the generative dynamics; lambda_ = 0 is the SDE, 1 the flow.")
        .def("log_density", &Model::log_density, py::arg("x"), py::arg("atol") = 1e-3,
             py::arg("rtol") = 1e-3, py::call_guard<py::gil_scoped_release>(),
             "Exact log-density at x via the deterministic transport flow.")
        .def("evidence_bound", &Model::evidence_bound, py::arg("x"), py::arg("k") = 100,
             py::arg("steps") = 100, py::arg("seed") = 0,
             py::call_guard<py::gil_scoped_release>(),
             "K-path importance lower bound on log-likelihood at x.");
}
