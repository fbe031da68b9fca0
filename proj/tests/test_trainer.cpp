#include <doctest.h>

#include "riemdiff/common.hpp"
#include "riemdiff/manifold.hpp"
#include "riemdiff/network.hpp"
#include "riemdiff/objective.hpp"
#include "riemdiff/targets.hpp"
#include "riemdiff/trainer.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

using namespace riemdiff;

TEST_SUITE_BEGIN("trainer");

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;

ParamValues make_pv(std::vector<std::vector<double>> slots) {
    ParamValues p;
    p.slots = std::move(slots);
    return p;
}

bool same_bits(const ParamValues& a, const ParamValues& b) {
    if (a.slots.size() != b.slots.size()) return false;
    for (std::size_t i = 0; i < a.slots.size(); ++i) {
        if (a.slots[i].size() != b.slots[i].size()) return false;
        for (std::size_t j = 0; j < a.slots[i].size(); ++j)
            if (std::bit_cast<std::uint64_t>(a.slots[i][j]) !=
                std::bit_cast<std::uint64_t>(b.slots[i][j]))
                return false;
    }
    return true;
}

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (;;) {
        const std::size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            cells.push_back(line.substr(start));
            return cells;
        }
        cells.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
}

// A quick circle setup shared by the training-loop cases.
struct CircleRun {
    Manifold M = Manifold::sphere(1);
    Target target = Target::vmf_mixture(M, {{{1.0, 0.0}, 2.0, 1.0}});
    NetworkConfig net;

    CircleRun() {
        net.activation = Activation::Sine;
        net.hidden_layers = 1;
        net.hidden_width = 8;
        net.ambient_dim = 2;
    }
};

TrainConfig quick_config(long steps) {
    TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.steps = steps;
    cfg.batch_size = 8;
    cfg.scheduler = LrScheduler::None;
    cfg.proposal_update_period = 500;
    cfg.path_steps = 8;
    cfg.seed = 11;
    return cfg;
}

}  // namespace

TEST_CASE("adam leaves parameters untouched under a zero gradient") {
    ParamValues p = make_pv({{0.5, -1.5}, {2.0}});
    const ParamValues orig = p;
    const ParamValues g = make_pv({{0.0, 0.0}, {0.0}});
    AdamState st;
    for (int i = 0; i < 50; ++i) CHECK(adam_step(p, g, st, 1e-2, 0.9, 0.999));
    CHECK(same_bits(p, orig));
    CHECK(st.steps_applied == 50);
    CHECK(st.steps_skipped == 0);
}

TEST_CASE("adam first step from rest moves each entry by the learning rate") {
    ParamValues p = make_pv({{0.0, 0.0, 0.0}});
    const ParamValues g = make_pv({{3.0, -0.5, 1000.0}});
    AdamState st;
    const double lr = 7e-3;
    CHECK(adam_step(p, g, st, lr, 0.9, 0.999));
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(std::abs(p.slots[0][j]) == doctest::Approx(lr).epsilon(1e-6));
        CHECK(p.slots[0][j] * g.slots[0][j] < 0.0);
    }
}

TEST_CASE("adam contracts a quadratic bowl to the origin") {
    ParamValues p = make_pv({{1.3, -0.7}, {0.2, 2.0}});
    AdamState st;
    for (int i = 0; i < 1000; ++i) {
        const ParamValues g = p;  // gradient of 0.5 |theta|^2
        adam_step(p, g, st, 1e-2, 0.9, 0.999);
    }
    double norm2 = 0.0;
    for (const auto& slot : p.slots)
        for (double v : slot) norm2 += v * v;
    CHECK(std::sqrt(norm2) < 1e-3);
}

TEST_CASE("adam skips non-finite gradients and keeps correct bias correction") {
    ParamValues p = make_pv({{1.0, 2.0}});
    const ParamValues orig = p;
    ParamValues bad = make_pv({{0.3, std::nan("")}});
    AdamState st;
    CHECK(!adam_step(p, bad, st, 1e-2, 0.9, 0.999));
    CHECK(same_bits(p, orig));
    CHECK(st.steps_applied == 0);
    CHECK(st.steps_skipped == 1);

    // The skipped call must not advance the moment schedule: the next good
    // step has to match a fresh optimizer's first step exactly.
    const ParamValues good = make_pv({{0.3, -0.8}});
    CHECK(adam_step(p, good, st, 1e-2, 0.9, 0.999));
    ParamValues q = orig;
    AdamState fresh;
    CHECK(adam_step(q, good, fresh, 1e-2, 0.9, 0.999));
    CHECK(same_bits(p, q));
}

TEST_CASE("adam rejects mismatched gradient shapes") {
    ParamValues p = make_pv({{1.0, 2.0}});
    const ParamValues g = make_pv({{1.0}});
    AdamState st;
    CHECK_THROWS_AS(adam_step(p, g, st, 1e-2, 0.9, 0.999), ContractError);
}

TEST_CASE("gradient clipping rescales only oversized gradients") {
    ParamValues g = make_pv({{30.0, 40.0}});  // norm 50
    CHECK(!clip_global_norm(g, 100.0));
    CHECK(g.slots[0][0] == 30.0);

    ParamValues big = make_pv({{300.0, 400.0}});  // norm 500
    CHECK(clip_global_norm(big, 100.0));
    CHECK(big.slots[0][0] == doctest::Approx(60.0).epsilon(1e-12));
    CHECK(big.slots[0][1] == doctest::Approx(80.0).epsilon(1e-12));
}

TEST_CASE("cosine schedule starts at the base rate and decays to zero") {
    TrainConfig cfg;
    cfg.learning_rate = 4e-4;
    cfg.steps = 1000;
    cfg.scheduler = LrScheduler::Cosine;
    CHECK(scheduled_lr(cfg, 0) == doctest::Approx(4e-4).epsilon(1e-15));
    CHECK(scheduled_lr(cfg, 500) == doctest::Approx(2e-4).epsilon(1e-12));
    CHECK(scheduled_lr(cfg, 999) < 1e-8);
    for (long t = 1; t < 1000; t += 97)
        CHECK(scheduled_lr(cfg, t) < scheduled_lr(cfg, t - 1));
    cfg.scheduler = LrScheduler::None;
    CHECK(scheduled_lr(cfg, 0) == 4e-4);
    CHECK(scheduled_lr(cfg, 999) == 4e-4);
}

TEST_CASE("train config validation rejects nonsense") {
    TrainConfig ok;
    ok.validate();
    auto expect_bad = [](auto mutate) {
        TrainConfig c;
        mutate(c);
        CHECK_THROWS_AS(c.validate(), ConfigError);
    };
    expect_bad([](TrainConfig& c) { c.learning_rate = 0.0; });
    expect_bad([](TrainConfig& c) { c.learning_rate = -1e-4; });
    expect_bad([](TrainConfig& c) { c.beta1 = 1.0; });
    expect_bad([](TrainConfig& c) { c.beta2 = -0.1; });
    expect_bad([](TrainConfig& c) { c.steps = -1; });
    expect_bad([](TrainConfig& c) { c.batch_size = 0; });
    expect_bad([](TrainConfig& c) { c.proposal_update_period = 0; });
    expect_bad([](TrainConfig& c) { c.proposal_inner_steps = -1; });
    expect_bad([](TrainConfig& c) { c.path_steps = 0; });
    expect_bad([](TrainConfig& c) { c.clip_norm = 0.0; });
    expect_bad([](TrainConfig& c) { c.terminal_time = 0.0; });
    TrainConfig zero_steps;
    zero_steps.steps = 0;  // allowed: emits the initialization checkpoint
    zero_steps.validate();
}

TEST_CASE("per-family defaults match the published optimization table") {
    const TrainConfig s = TrainConfig::defaults_for(Manifold::sphere(2));
    CHECK(s.learning_rate == 2e-4);
    CHECK(s.scheduler == LrScheduler::Cosine);
    const TrainConfig t = TrainConfig::defaults_for(Manifold::torus(2));
    CHECK(t.learning_rate == 3e-4);
    CHECK(t.scheduler == LrScheduler::None);
    const TrainConfig h = TrainConfig::defaults_for(Manifold::hyperboloid(2));
    CHECK(h.learning_rate == 5e-4);
    CHECK(h.terminal_time == 2.0);
    const TrainConfig o = TrainConfig::defaults_for(Manifold::orthogonal(3));
    CHECK(o.learning_rate == 1e-3);
    for (const TrainConfig* c : {&s, &t, &h, &o}) {
        CHECK(c->beta1 == 0.9);
        CHECK(c->beta2 == 0.999);
    }
}

TEST_CASE("checkpoint json round-trips every double bit for bit") {
    Checkpoint c;
    c.manifold = Manifold::hyperboloid(2, -1.5);
    c.network.activation = Activation::Swish;
    c.network.hidden_layers = 2;
    c.network.hidden_width = 4;
    c.network.ambient_dim = 3;
    c.network.actnorm_first = true;
    c.params = make_pv({{kPi, -0.0, 5e-324}, {1e308, 1.0 / 3.0}});
    c.optimizer.m = make_pv({{0.1, -2e-9, 0.0}, {7.25, -1.0}});
    c.optimizer.v = make_pv({{1e-17, 3.0, 0.5}, {0.0, 2.0}});
    c.optimizer.steps_applied = 12345;
    c.optimizer.steps_skipped = 3;
    c.proposal.layers = 3;
    c.proposal.units = 5;
    c.proposal_params = TimeProposal::identity_params(c.proposal);
    c.train = TrainConfig::defaults_for(c.manifold);
    c.train.learning_rate = 1.0 / 3.0;
    c.train.seed = 0xDEADBEEFCAFEBABEull;
    c.train.divergence = DivergenceMethod::Hutchinson;
    c.train.hutchinson_samples = 4;
    c.step = 777;

    const std::string text = checkpoint_to_json(c);
    const Checkpoint r = checkpoint_from_json(text);
    CHECK(r.manifold.kind == c.manifold.kind);
    CHECK(r.manifold.d == c.manifold.d);
    CHECK(std::bit_cast<std::uint64_t>(r.manifold.curvature) ==
          std::bit_cast<std::uint64_t>(c.manifold.curvature));
    CHECK(r.network.activation == c.network.activation);
    CHECK(r.network.actnorm_first == c.network.actnorm_first);
    CHECK(same_bits(r.params, c.params));
    CHECK(same_bits(r.optimizer.m, c.optimizer.m));
    CHECK(same_bits(r.optimizer.v, c.optimizer.v));
    CHECK(r.optimizer.steps_applied == 12345);
    CHECK(r.optimizer.steps_skipped == 3);
    CHECK(same_bits(r.proposal_params, c.proposal_params));
    CHECK(r.proposal.layers == 3);
    CHECK(std::bit_cast<std::uint64_t>(r.train.learning_rate) ==
          std::bit_cast<std::uint64_t>(c.train.learning_rate));
    CHECK(r.train.seed == c.train.seed);
    CHECK(r.train.divergence == DivergenceMethod::Hutchinson);
    CHECK(r.train.hutchinson_samples == 4);
    CHECK(r.step == 777);
    // Serialization is canonical: a second pass is byte-identical.
    CHECK(checkpoint_to_json(r) == text);

    const std::string path = "/tmp/riemdiff_ckpt_roundtrip.json";
    save_checkpoint(c, path);
    const Checkpoint l = load_checkpoint(path);
    CHECK(checkpoint_to_json(l) == text);
    std::remove(path.c_str());
}

TEST_CASE("checkpoint parsing rejects unknown and missing keys") {
    Checkpoint c;
    c.manifold = Manifold::sphere(1);
    c.network.ambient_dim = 2;
    c.network.hidden_layers = 1;
    c.network.hidden_width = 4;
    c.params = make_pv({{1.0}});
    c.proposal_params = TimeProposal::identity_params(c.proposal);
    const std::string text = checkpoint_to_json(c);

    std::string extra = text;
    extra.insert(extra.rfind('}'), ",\"surprise\":1");
    CHECK_THROWS_AS(checkpoint_from_json(extra), ConfigError);

    // Drop the params field entirely.
    const std::size_t at = text.find("\"params\"");
    REQUIRE(at != std::string::npos);
    std::string missing = text;
    const std::size_t next = missing.find("\"proposal\"");
    missing.erase(at, next - at);
    CHECK_THROWS_AS(checkpoint_from_json(missing), ConfigError);

    CHECK_THROWS_AS(checkpoint_from_json("{\"format\":\"other\"}"), ConfigError);
    CHECK_THROWS_AS(load_checkpoint("/tmp/riemdiff_no_such_ckpt.json"), IoError);
}

TEST_CASE("zero-step training returns the warm start unchanged") {
    CircleRun run;
    TrainConfig cfg = quick_config(0);
    RngStream init_rng(3, 0);
    const ParamValues warm = init_network_params(run.net, init_rng, cfg.terminal_time);
    const ParamValues prop = TimeProposal::identity_params(cfg.proposal);
    const TrainResult res = train(run.M, run.target, run.net, cfg, &warm, &prop);
    CHECK(same_bits(res.checkpoint.params, warm));
    CHECK(res.checkpoint.step == 0);
    CHECK(res.checkpoint.optimizer.steps_applied == 0);
    const auto lines = split_lines(res.metrics_tsv);
    REQUIRE(lines.size() == 1);
    CHECK(lines[0] == "step\tloss\tloss_std\tlr\tproposal_variance");
}

TEST_CASE("seeded training runs are byte-identical") {
    CircleRun run;
    const TrainConfig cfg = quick_config(12);
    const TrainResult a = train(run.M, run.target, run.net, cfg);
    const TrainResult b = train(run.M, run.target, run.net, cfg);
    CHECK(a.metrics_tsv == b.metrics_tsv);
    CHECK(same_bits(a.checkpoint.params, b.checkpoint.params));
    CHECK(same_bits(a.checkpoint.proposal_params, b.checkpoint.proposal_params));
    CHECK(a.metrics_tsv.size() > 100);
    const auto lines = split_lines(a.metrics_tsv);
    REQUIRE(lines.size() == 13);
}

TEST_CASE("proposal updates and network updates stay in their lanes") {
    CircleRun run;
    TrainConfig with = quick_config(5);
    with.proposal_update_period = 5;
    with.proposal_inner_steps = 3;
    TrainConfig without = quick_config(5);
    without.proposal_update_period = 500;

    const TrainResult a = train(run.M, run.target, run.net, with);
    const TrainResult b = train(run.M, run.target, run.net, without);
    // The proposal update fires after the final network step, so it cannot
    // influence the network parameters; those must agree to the bit.
    CHECK(same_bits(a.checkpoint.params, b.checkpoint.params));
    const ParamValues identity = TimeProposal::identity_params(with.proposal);
    CHECK(same_bits(b.checkpoint.proposal_params, identity));
    CHECK(!same_bits(a.checkpoint.proposal_params, identity));
}

TEST_CASE("training on a concentrated circle target drives the bound below uniform") {
    CircleRun run;
    run.net.hidden_width = 16;
    TrainConfig cfg = quick_config(150);
    cfg.learning_rate = 5e-3;
    cfg.batch_size = 16;
    cfg.path_steps = 10;
    cfg.seed = 5;
    const TrainResult res = train(run.M, run.target, run.net, cfg);
    const auto lines = split_lines(res.metrics_tsv);
    REQUIRE(lines.size() == 151);
    auto mean_loss = [&](std::size_t from, std::size_t to) {
        double acc = 0.0;
        for (std::size_t i = from; i < to; ++i) acc += std::stod(split_tabs(lines[i])[1]);
        return acc / double(to - from);
    };
    const double early = mean_loss(1, 16);
    const double late = mean_loss(136, 151);
    // The loss is the time-integral term of the negative evidence bound; the
    // zero-initialized field starts it at zero, and learning pushes it down.
    CHECK(late < early);
    CHECK(late < -0.05);
}

TEST_CASE("metrics rows carry the scheduled learning rate verbatim") {
    CircleRun run;
    TrainConfig cfg = quick_config(8);
    cfg.scheduler = LrScheduler::Cosine;
    const TrainResult res = train(run.M, run.target, run.net, cfg);
    const auto lines = split_lines(res.metrics_tsv);
    REQUIRE(lines.size() == 9);
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto cells = split_tabs(lines[i]);
        REQUIRE(cells.size() == 5);
        CHECK(std::stol(cells[0]) == long(i));
        char expect[64];
        std::snprintf(expect, sizeof expect, "%.17g", scheduled_lr(cfg, long(i) - 1));
        CHECK(cells[3] == expect);
        CHECK(std::isfinite(std::stod(cells[1])));
        CHECK(std::stod(cells[4]) >= 0.0);
    }
}

TEST_CASE("training aborts on a poisoned warm start") {
    CircleRun run;
    TrainConfig cfg = quick_config(3);
    RngStream init_rng(3, 0);
    ParamValues warm = init_network_params(run.net, init_rng, cfg.terminal_time);
    warm.slots[0][0] = std::nan("");
    try {
        train(run.M, run.target, run.net, cfg, &warm);
        FAIL_CHECK("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
    }
}

TEST_CASE("training rejects a manifold that disagrees with the target") {
    CircleRun run;
    const TrainConfig cfg = quick_config(1);
    CHECK_THROWS_AS(train(Manifold::sphere(2), run.target, run.net, cfg), ConfigError);
}

TEST_CASE("checkpoint reconstruction drives the field and proposal") {
    CircleRun run;
    TrainConfig cfg = quick_config(6);
    cfg.proposal_update_period = 3;
    cfg.proposal_inner_steps = 2;
    const TrainResult res = train(run.M, run.target, run.net, cfg);

    ProjectedField field = field_from_checkpoint(res.checkpoint);
    CHECK(field.manifold().kind == ManifoldKind::Sphere);
    std::vector<double> out(2);
    const std::vector<double> probe = {1.0, 0.0};
    field.value(probe, 0.3, out);
    CHECK(std::isfinite(out[0]));

    TimeProposal prop = proposal_from_checkpoint(res.checkpoint);
    CHECK(same_bits(prop.params(), res.checkpoint.proposal_params));
    const TimeProposal::Draw d = prop.transform(0.37);
    CHECK(d.s > 0.0);
    CHECK(d.s < cfg.terminal_time);
    CHECK(proposal_slope_variance(prop) >= 0.0);
}

TEST_SUITE_END();
