#include <doctest.h>

#include "riemdiff/common.hpp"
#include "riemdiff/divergence.hpp"
#include "riemdiff/manifold.hpp"
#include "riemdiff/network.hpp"
#include "riemdiff/stats.hpp"

#include <cmath>
#include <memory>
#include <vector>

using namespace riemdiff;

TEST_SUITE_BEGIN("divergence");

namespace {

// Projected constant field P_x c. Riemannian divergence on the unit sphere
// S^(m-1) is -(m-1) x.c; on S^2 that is -2 x.c.
struct LinearField {
    Graph g;
    int x_in, out;
    FieldHandle handle;

    LinearField(const Manifold& M, std::vector<double> c) {
        x_in = g.input(M.m);
        const int cn = g.constant(std::move(c));
        out = append_projection(M, g, x_in, cn);
        handle = {&g, x_in, out, nullptr, {}};
    }
};

// Rotational (Killing) field omega x x on S^2, divergence-free.
struct KillingField {
    Graph g;
    int x_in, out;
    FieldHandle handle;

    explicit KillingField(std::vector<double> w) {
        const Manifold M = Manifold::sphere(2);
        x_in = g.input(3);
        const int wn = g.constant(std::move(w));
        auto comp = [&](int a, int b, int i, int j) {
            return g.sub(g.mul(g.slice(a, i, 1), g.slice(b, j, 1)),
                         g.mul(g.slice(a, j, 1), g.slice(b, i, 1)));
        };
        const int cross = g.concat({comp(wn, x_in, 1, 2), comp(wn, x_in, 2, 0), comp(wn, x_in, 0, 1)});
        out = append_projection(M, g, x_in, cross);
        handle = {&g, x_in, out, nullptr, {}};
    }
};

// Projected score network with randomized parameters, time bound to a fixed s.
struct NetField {
    Graph g;
    ParamValues p;
    FieldHandle handle;

    NetField(const Manifold& M, std::uint64_t seed, double s_bind, double weight_scale = 0.4) {
        NetworkConfig cfg;
        cfg.hidden_layers = 1;
        cfg.hidden_width = 8;
        cfg.ambient_dim = M.m;
        const int x_in = g.input(M.m);
        const int s_in = g.input(1);
        const int a_out = append_score_network(g, cfg, x_in, s_in, 1.0);
        const int out = append_projection(M, g, x_in, a_out);
        RngStream rng(seed, 0);
        p = init_network_params(cfg, rng, 1.0);
        for (auto& slot : p.slots)
            for (auto& v : slot) v = weight_scale * rng.gaussian();
        handle = {&g, x_in, out, &p, {{s_in, {s_bind}}}};
    }
};

std::vector<double> off_pole_point(const Manifold& M, RngStream& rng, double min_sin = 0.1) {
    std::vector<double> x(3);
    do {
        prior_sample(M, rng, x);
    } while (std::sqrt(1.0 - x[2] * x[2]) < min_sin);
    return x;
}

}  // namespace

TEST_CASE("intrinsic chart oracle reproduces symbolic divergences") {
    const auto M = Manifold::sphere(2);

    // Zero field.
    Graph gz;
    const int x_in = gz.input(3);
    const int zero = gz.scale_const(0.0, x_in);
    FieldHandle fz{&gz, x_in, zero, nullptr, {}};
    const double th = M_PI / 3.0;
    std::vector<double> x{std::sin(th) * 0.6, std::sin(th) * 0.8, std::cos(th)};
    CHECK(std::fabs(divergence_intrinsic_sphere2(fz, x)) < 1e-12);

    // P_x e_z at theta = pi/3: divergence -2 cos(theta) = -1.
    LinearField lin(M, {0.0, 0.0, 1.0});
    CHECK(divergence_intrinsic_sphere2(lin.handle, x) == doctest::Approx(-1.0).epsilon(1e-5));

    // General direction c at random off-pole points: -2 x.c.
    RngStream rng(3, 0);
    LinearField lin2(M, {0.4, -1.1, 0.7});
    for (int i = 0; i < 20; ++i) {
        const auto p = off_pole_point(M, rng);
        const double expect = -2.0 * (0.4 * p[0] - 1.1 * p[1] + 0.7 * p[2]);
        CHECK(divergence_intrinsic_sphere2(lin2.handle, p) == doctest::Approx(expect).epsilon(1e-6));
    }

    // Pole guard.
    std::vector<double> pole{0.0, 1e-4, std::sqrt(1.0 - 1e-8)};
    CHECK_THROWS_AS(divergence_intrinsic_sphere2(lin.handle, pole), ContractError);
}

TEST_CASE("qr divergence is exact on the projected linear field") {
    const auto M = Manifold::sphere(2);
    std::vector<double> c{0.9, -0.3, 0.5};
    LinearField lin(M, c);
    RngStream rng(11, 0);
    std::vector<double> x(3);
    for (int i = 0; i < 50; ++i) {
        prior_sample(M, rng, x);
        const double expect = -2.0 * (c[0] * x[0] + c[1] * x[1] + c[2] * x[2]);
        CHECK(divergence_qr(lin.handle, M, x, rng) == doctest::Approx(expect).epsilon(1e-10));
    }
}

TEST_CASE("killing field on the sphere is divergence-free") {
    const auto M = Manifold::sphere(2);
    KillingField rot({0.3, -0.8, 0.5});
    RngStream rng(13, 0);
    for (int i = 0; i < 20; ++i) {
        const auto x = off_pole_point(M, rng);
        CHECK(std::fabs(divergence_qr(rot.handle, M, x, rng)) < 1e-10);
        CHECK(std::fabs(divergence_intrinsic_sphere2(rot.handle, x)) < 1e-5);
    }
}

TEST_CASE("qr divergence agrees with the chart oracle on network fields") {
    const auto M = Manifold::sphere(2);
    RngStream rng(17, 0);
    for (std::uint64_t f = 0; f < 3; ++f) {
        NetField net(M, 100 + f, 0.3);
        for (int i = 0; i < 10; ++i) {
            const auto x = off_pole_point(M, rng);
            const double qr = divergence_qr(net.handle, M, x, rng);
            const double oracle = divergence_intrinsic_sphere2(net.handle, x);
            CHECK(qr == doctest::Approx(oracle).epsilon(1e-5));
        }
    }
}

TEST_CASE("qr value does not depend on the basis draw and is linear in the field") {
    const auto M = Manifold::sphere(2);
    NetField net(M, 7, 0.6);
    RngStream r1(19, 0), r2(20, 1);
    std::vector<double> x(3);
    prior_sample(M, r1, x);
    const double a = divergence_qr(net.handle, M, x, r1);
    const double b = divergence_qr(net.handle, M, x, r2);
    CHECK(a == doctest::Approx(b).epsilon(1e-10));

    // Linearity: build alpha*u + beta*v in one graph from two linear fields.
    std::vector<double> c1{1.0, 0.2, -0.4}, c2{-0.5, 0.9, 0.3};
    const double alpha = 1.7, beta = -0.6;
    Graph g;
    const int x_in = g.input(3);
    const int u = append_projection(M, g, x_in, g.constant(c1));
    const int v = append_projection(M, g, x_in, g.constant(c2));
    const int combo = g.add(g.scale_const(alpha, u), g.scale_const(beta, v));
    FieldHandle fc{&g, x_in, combo, nullptr, {}};
    LinearField f1(M, c1), f2(M, c2);
    for (int i = 0; i < 10; ++i) {
        prior_sample(M, r1, x);
        const double lhs = divergence_qr(fc, M, x, r1);
        const double rhs = alpha * divergence_qr(f1.handle, M, x, r1) +
                           beta * divergence_qr(f2.handle, M, x, r1);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
    }
}

TEST_CASE("hutchinson estimates cover the qr value and report honest errors") {
    const auto M = Manifold::sphere(2);
    NetField net(M, 23, 0.5);
    RngStream rng(29, 0);
    std::vector<double> x(3);
    prior_sample(M, rng, x);
    const double exact = divergence_qr(net.handle, M, x, rng);

    auto gauss = divergence_hutchinson(net.handle, M, x, 10000, ProbeDist::Gaussian, rng);
    auto rade = divergence_hutchinson(net.handle, M, x, 10000, ProbeDist::Rademacher, rng);
    CHECK(std::fabs(gauss.estimate - exact) <= 3.0 * gauss.std_error + 1e-12);
    CHECK(std::fabs(rade.estimate - exact) <= 3.0 * rade.std_error + 1e-12);
    // Rademacher probes drop the diagonal noise term, so their variance
    // cannot exceed the Gaussian one on the same field.
    CHECK(rade.std_error <= gauss.std_error);

    // Zero field: exactly zero with zero spread.
    Graph gz;
    const int x_in = gz.input(3);
    FieldHandle fz{&gz, x_in, gz.scale_const(0.0, x_in), nullptr, {}};
    auto z = divergence_hutchinson(fz, M, x, 100, ProbeDist::Rademacher, rng);
    CHECK(z.estimate == 0.0);
    CHECK(z.std_error == 0.0);

    // Single sample: deterministic under a fixed stream, no error bar.
    RngStream s1(31, 4), s2(31, 4);
    auto one_a = divergence_hutchinson(net.handle, M, x, 1, ProbeDist::Gaussian, s1);
    auto one_b = divergence_hutchinson(net.handle, M, x, 1, ProbeDist::Gaussian, s2);
    CHECK(one_a.estimate == one_b.estimate);
    CHECK(one_a.std_error == 0.0);
}

TEST_CASE("hutchinson batch means are unbiased for the qr value") {
    const auto M = Manifold::sphere(2);
    NetField net(M, 37, 0.7);
    RngStream rng(41, 0);
    std::vector<double> x(3);
    prior_sample(M, rng, x);
    const double exact = divergence_qr(net.handle, M, x, rng);

    Workspace ws(net.g);
    std::vector<double> batch_means;
    for (int b = 0; b < 50; ++b) {
        auto r = rng.fork(std::uint64_t(b));
        batch_means.push_back(
            divergence_hutchinson(net.handle, ws, M, x, 2000, ProbeDist::Rademacher, r).estimate);
    }
    auto s = summarize(batch_means);
    CHECK(std::fabs(s.mean - exact) <= 3.0 * s.std_error);
}

TEST_CASE("divergence integrates to zero over the sphere") {
    // Smooth compact field: P_x (sin 3x1, cos(2x0 + x2), x0 x2).
    const auto M = Manifold::sphere(2);
    Graph g;
    const int x_in = g.input(3);
    const int x0 = g.slice(x_in, 0, 1), x1 = g.slice(x_in, 1, 1), x2 = g.slice(x_in, 2, 1);
    const int w = g.concat({g.sine(g.scale_const(3.0, x1)),
                            g.cosine(g.add(g.scale_const(2.0, x0), x2)), g.mul(x0, x2)});
    const int out = append_projection(M, g, x_in, w);
    FieldHandle f{&g, x_in, out, nullptr, {}};

    RngStream rng(43, 0);
    Workspace ws(g);
    std::vector<double> x(3), vals;
    vals.reserve(100000);
    for (int i = 0; i < 100000; ++i) {
        prior_sample(M, rng, x);
        vals.push_back(divergence_qr(f, ws, M, x, rng));
    }
    auto s = summarize(vals);
    CHECK(std::fabs(s.mean) <= 3.0 * s.std_error);
}

TEST_CASE("projection columns have vanishing self-divergence on every manifold") {
    RngStream rng(47, 0);
    for (const auto& M : {Manifold::sphere(2), Manifold::torus(2), Manifold::hyperboloid(2),
                          Manifold::orthogonal(3)}) {
        std::vector<double> x(std::size_t(M.m));
        for (int i = 0; i < 10; ++i) {
            prior_sample(M, rng, x);
            const auto r = tangential_field_self_divergence(M, x, rng);
            double norm = 0.0;
            for (double v : r) norm += v * v;
            CHECK(std::sqrt(norm) < 1e-8);
        }
    }
}

TEST_CASE("hutchinson matches qr on a rotation-group network field") {
    const auto M = Manifold::orthogonal(3);
    NetField net(M, 53, 0.4, 0.2);
    RngStream rng(59, 0);
    std::vector<double> x(9);
    for (int i = 0; i < 3; ++i) {
        prior_sample(M, rng, x);
        const double exact = divergence_qr(net.handle, M, x, rng);
        auto est = divergence_hutchinson(net.handle, M, x, 10000, ProbeDist::Rademacher, rng);
        CHECK(std::fabs(est.estimate - exact) <= 3.0 * est.std_error + 1e-12);
    }
}

TEST_SUITE_END();
