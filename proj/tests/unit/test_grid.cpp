#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "softctl/error.hpp"
#include "softctl/grid.hpp"
#include "support.hpp"

using namespace softctl;
using test_support::constant_spec;
using test_support::kTwoPi;

namespace {
StateGrid torus(std::size_t n, double L = 1.0) { return StateGrid(1, {Axis{0.0, L, n}, Axis{}}, Topology::torus); }
}

TEST_CASE("sup norms") {
    const StateGrid g = torus(8, 4.0);
    CHECK(sup_norm(ScalarField::constant(g, 0.0)) == 0.0);
    CHECK(sup_norm(ScalarField::constant(g, -2.5)) == 2.5);
    const ScalarField s = ScalarField::sample(g, [](const State& x) { return std::sin(kTwoPi * x[0] / 4.0); });
    CHECK(sup_norm(s) == 1.0);
    CHECK_THROWS_AS(sup_norm_diff(s, ScalarField::constant(torus(9, 4.0), 0.0)), DimensionError);
}

TEST_CASE("sup_norm is a norm on random fields") {
    std::mt19937_64 rng(3);
    const StateGrid g = torus(33);
    for (int t = 0; t < 20; ++t) {
        const ScalarField f(g, test_support::random_values(rng, g.size(), -1, 1));
        const ScalarField k(g, test_support::random_values(rng, g.size(), -1, 1));
        CHECK(sup_norm(f + k) <= sup_norm(f) + sup_norm(k));
        CHECK(sup_norm(-3.0 * f) == 3.0 * sup_norm(f));
    }
}

TEST_CASE("gradient of a constant is exactly zero") {
    const GradientField gr = gradient(ScalarField::constant(torus(16), 1.7));
    CHECK(gr.sup_norm() == 0.0);
    const StateGrid g2(2, {Axis{0.0, 1.0, 8}, Axis{0.0, 2.0, 6}}, Topology::torus);
    CHECK(gradient(ScalarField::constant(g2, -4.0)).sup_norm() == 0.0);
}

TEST_CASE("central gradient is second order") {
    const double L = 3.0;
    auto err = [&](std::size_t n) {
        const StateGrid g = torus(n, L);
        const ScalarField f = ScalarField::sample(g, [&](const State& x) { return std::sin(kTwoPi * x[0] / L); });
        const GradientField gr = gradient(f);
        double e = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            e = std::max(e, std::abs(gr.components[0][i] - kTwoPi / L * std::cos(kTwoPi * g.coordinate(0, i) / L)));
        return e;
    };
    const double order = std::log2(err(64) / err(128));
    CHECK(order >= 1.9);
}

TEST_CASE("non-periodic samples are rejected on a torus") {
    CHECK_THROWS_AS(ScalarField::sample(torus(16), [](const State& x) { return x[0]; }), DomainError);
    const StateGrid window(1, {Axis{0.0, 1.0, 5}, Axis{}}, Topology::window);
    CHECK_NOTHROW(ScalarField::sample(window, [](const State& x) { return x[0]; }));
    CHECK_THROWS_AS(ScalarField(torus(4), {0.0, 1.0, std::nan(""), 2.0}), Error);
}

TEST_CASE("quadrature exactness") {
    for (std::size_t m : {2u, 3u, 17u, 64u}) {
        const ControlGrid c(-1.0, 1.0, m);
        double mass = 0.0, first = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
            CHECK(c.weight(k) > 0.0);
            mass += c.weight(k);
            first += c.weight(k) * c.node(k);
        }
        CHECK(std::abs(mass - 2.0) <= 2e-12);
        CHECK(std::abs(first) <= 1e-12);
        CHECK(c.node(m - 1) == 1.0);
    }
}

TEST_CASE("entropy of the uniform policy is -ln |U|") {
    const GridPair g{torus(8), ControlGrid(-1.0, 1.0, 17)};
    const ScalarField e = entropy(PolicyField::uniform(g));
    for (std::size_t i = 0; i < e.size(); ++i) CHECK(e[i] == doctest::Approx(-std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("entropy integral increases as a bump narrows") {
    const GridPair g{torus(2), ControlGrid(-1.0, 1.0, 2001)};
    double prev = -1e300;
    for (double w : {0.4, 0.2, 0.1, 0.05, 0.025}) {
        std::vector<double> v;
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t k = 0; k < g.control.size(); ++k) {
                const double u = g.control.node(k);
                v.push_back(std::exp(-0.5 * u * u / (w * w)) + 1e-200);
            }
        const double e = entropy(PolicyField::normalized(g, v))[0];
        CHECK(e > prev);
        prev = e;
    }
}

TEST_CASE("half-box density with a small floor") {
    const GridPair g{torus(2), ControlGrid(-1.0, 1.0, 4001)};
    std::vector<double> v;
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t k = 0; k < g.control.size(); ++k) v.push_back(g.control.node(k) < 0.0 ? 1.0 : 1e-6);
    const double e = entropy(PolicyField::normalized(g, v))[0];
    CHECK(std::abs(e - std::log(2.0 / 2.0)) <= 1e-3);
}

TEST_CASE("entropy modes") {
    const GridPair g{torus(2), ControlGrid(0.0, 1.0, 3)};
    const PolicyField p(g, {0.0, 1.0, 2.0, 0.0, 1.0, 2.0});
    CHECK_THROWS_AS(entropy(p, EntropyMode::strict), DomainError);
    const ScalarField s = entropy(p, EntropyMode::safe);
    CHECK(std::isfinite(s[0]));
}

TEST_CASE("policy invariants") {
    const GridPair g{torus(2), ControlGrid(0.0, 1.0, 3)};
    CHECK_THROWS_AS(PolicyField(g, {1.0, 1.0, 1.0, -0.1, 1.0, 2.1}), Error);
    CHECK_THROWS_AS(PolicyField(g, {1.0, 1.0, 1.0, 1.0, 1.0, 2.0}), Error);
    CHECK_NOTHROW(PolicyField(g, {1.0, 1.0, 1.0, 0.5, 1.0, 1.5}));
    std::mt19937_64 rng(1);
    const GridPair g2{torus(9), ControlGrid(-1.0, 1.0, 17)};
    const PolicyField p = test_support::random_policy(rng, g2);
    const ScalarField kl = kl_divergence(p, p);
    CHECK(sup_norm(kl) <= 1e-14);
    const ScalarField kl2 = kl_divergence(p, PolicyField::uniform(g2));
    for (std::size_t i = 0; i < kl2.size(); ++i) CHECK(kl2[i] >= 0.0);
}

TEST_CASE("policy transfer keeps normalization") {
    std::mt19937_64 rng(5);
    const GridPair coarse{torus(16, 2.0), ControlGrid(-1.0, 1.0, 9)};
    const GridPair fine{torus(37, 2.0), ControlGrid(-1.0, 1.0, 9)};
    const PolicyField p = test_support::random_policy(rng, coarse);
    const PolicyField q = transfer_policy(p, fine);
    CHECK(q.states() == 37);
    std::vector<double> row(9);
    interpolate_row(p, State{coarse.state.coordinate(0, 3), 0.0}, row);
    for (std::size_t k = 0; k < 9; ++k) CHECK(row[k] == doctest::Approx(p(3, k)).epsilon(1e-12));
}

TEST_CASE("interpolation is exact at nodes and periodic") {
    const StateGrid g = torus(10, 2.0);
    const ScalarField f = ScalarField::sample(g, [](const State& x) { return std::cos(kTwoPi * x[0] / 2.0); });
    CHECK(interpolate(f, g.point(4)) == doctest::Approx(f[4]));
    CHECK(interpolate(f, State{g.coordinate(0, 4) + 2.0, 0.0}) == doctest::Approx(f[4]));
}

TEST_CASE("shortest round-trip formatting and CSV round trip") {
    CHECK(format_double(0.1) == "0.1");
    CHECK(format_double(1.0) == "1");
    CHECK(format_double(-2.5e-300) == "-2.5e-300");
    std::mt19937_64 rng(9);
    const StateGrid g = torus(12, 3.0);
    const ScalarField f(g, test_support::random_values(rng, g.size(), -10, 10));
    std::stringstream ss;
    write_csv(ss, f);
    const ScalarField back = read_scalar_csv(ss, g);
    for (std::size_t i = 0; i < f.size(); ++i) CHECK(back[i] == f[i]);
}
