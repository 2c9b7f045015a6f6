#include <doctest.h>

#include <cmath>
#include <limits>

#include "softctl/error.hpp"
#include "softctl/grid.hpp"
#include "softctl/problem.hpp"
#include "support.hpp"

using namespace softctl;
using test_support::constant_spec;
using test_support::kTwoPi;

TEST_CASE("constant coefficients give M1 = 1, M2 = 0, lambda_min = 1, A0 = 0") {
    const ProblemSpec spec = constant_spec(1.0);
    const AssumptionReport r = validate_assumptions(spec, GridPair::for_problem(spec, 32, 9));
    CHECK(r.m1 == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(r.m2 == 0.0);
    CHECK(r.lambda_min == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(r.a0 == 0.0);
    CHECK(r.h1());
    CHECK(r.h2());
}

TEST_CASE("temperature problem is flagged as unsupported for the MDP pipeline") {
    const ProblemSpec spec = builtin_problem("temperature");
    CHECK(spec.mode == ProblemMode::classical_only);
    CHECK(spec.has_controlled_diffusion());
    CHECK(spec.control_set.lower == 0.5);
    CHECK(spec.control_set.upper == 1.0);
    const AssumptionReport r = validate_assumptions(spec, GridPair::for_problem(spec, 64, 9));
    const auto* c = r.find("diffusion control-independence");
    REQUIRE(c != nullptr);
    CHECK_FALSE(c->pass);
    CHECK(c->detail.find("unsupported for the regularized MDP pipeline") != std::string::npos);
    CHECK_FALSE(r.mdp_supported);
    // sigma = sqrt(2u), b = -grad f with f = 1 - cos x
    const State x{0.7, 0.0};
    CHECK(spec.covariance(x, 0.8)[0][0] == doctest::Approx(1.6));
    CHECK(spec.drift(x, 0.8)[0] == doctest::Approx(-std::sin(0.7)));
    CHECK(spec.reward(x, 0.8) == doctest::Approx(-(1.0 - std::cos(0.7))));
}

TEST_CASE("b = u, sigma = sqrt 2, r = cos(2 pi x / L) - u^2, beta = 3 gives lambda_min = 2, A0 = 0") {
    const ProblemSpec spec = builtin_problem("advective1d", {{"advection", 0.0}});
    const AssumptionReport r = validate_assumptions(spec, GridPair::for_problem(spec, 128, 17));
    CHECK(r.lambda_min == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(r.a0 == doctest::Approx(0.0));
    CHECK(r.beta_condition);
    const State x{0.3, 0.0};
    CHECK(spec.reward(x, 0.5) == doctest::Approx(std::cos(kTwoPi * 0.3 / 4.0) - 0.25));
}

TEST_CASE("instability reward matches the closed form") {
    const ProblemSpec spec = builtin_problem("instability");
    const double beta = 1.0, gamma = 1.0, h = 0.1;
    for (double x : {0.0, 0.013, 0.37, 0.9}) {
        for (double u : {-1.0, 0.2, 1.0}) {
            const double expect = beta * (gamma * x + h * h * std::sin(kTwoPi * x / h)) - gamma * u -
                                  kTwoPi * h * std::abs(std::cos(kTwoPi * x / h));
            CHECK(spec.reward(State{x, 0.0}, u) == doctest::Approx(expect).epsilon(1e-14));
        }
    }
    REQUIRE(spec.reference_value);
    CHECK(spec.reference_value(State{0.3, 0.0}) == doctest::Approx(0.3 + 0.01 * std::sin(kTwoPi * 3.0)));
    CHECK(spec.mode == ProblemMode::deterministic);
    CHECK(spec.topology == Topology::window);
}

TEST_CASE("lq1d defaults") {
    const ProblemSpec spec = builtin_problem("lq1d");
    CHECK(spec.domain[0].length == 8.0);
    CHECK(spec.control_set.lower == -1.0);
    CHECK(spec.control_set.upper == 1.0);
    CHECK(spec.discount_beta == 3.0);
    const State x{1.5, 0.0};
    CHECK(spec.drift(x, 0.25)[0] == 0.25);
    CHECK(spec.covariance(x)[0][0] == doctest::Approx(2.0));
    CHECK(spec.reward(x, 0.5) == doctest::Approx(-2.25 - 0.25));
}

TEST_CASE("registry errors") {
    try {
        builtin_problem("nope");
        FAIL("expected RegistryError");
    } catch (const RegistryError& e) {
        const std::string msg = e.what();
        for (const auto& n : builtin_problem_names()) CHECK(msg.find(n) != std::string::npos);
    }
    CHECK_THROWS_AS(builtin_problem("lq1d", {{"no_such_key", 1.0}}), ParameterError);
    CHECK_THROWS_AS(builtin_problem("instability", {{"n", 1.0}}), ParameterError);
}

TEST_CASE("non-finite coefficients name the node") {
    ProblemSpec spec = constant_spec();
    spec.reward = [](const State& x, double) {
        return x[0] > 0.49 && x[0] < 0.51 ? std::numeric_limits<double>::quiet_NaN() : 0.0;
    };
    try {
        validate_assumptions(spec, GridPair::for_problem(spec, 4, 3));
        FAIL("expected InvalidProblemError");
    } catch (const InvalidProblemError& e) {
        CHECK(std::string(e.what()).find("node 2") != std::string::npos);
    }
}

TEST_CASE("built-in full-mode problems pass H1 and H2; A0 is nonnegative") {
    for (const char* name : {"lq1d", "advective1d"}) {
        const ProblemSpec spec = builtin_problem(name);
        const AssumptionReport r = validate_assumptions(spec, GridPair::for_problem(spec, 128, 17), 0.0625);
        CHECK(r.h1());
        CHECK(r.h2());
        CHECK(r.a0 >= 0.0);
        CHECK(std::isfinite(r.m1));
        CHECK(std::isfinite(r.m2));
        REQUIRE(r.sigma_gradient_root_h);
        CHECK(*r.sigma_gradient_root_h == doctest::Approx(0.0));
    }
    // sigma == 0 cannot be uniformly elliptic; the deterministic example is exempt.
    const ProblemSpec inst = builtin_problem("instability");
    const AssumptionReport r = validate_assumptions(inst, GridPair::for_problem(inst, 101, 3));
    CHECK(r.h1());
    CHECK_FALSE(r.find("H2 uniform ellipticity")->pass);
}

TEST_CASE("A0 is positive for x-dependent drift") {
    const ProblemSpec spec = builtin_problem("advective1d");
    const AssumptionReport r = validate_assumptions(spec, GridPair::for_problem(spec, 256, 17));
    // 2 |grad b| with b = u + 0.5 sin(2 pi x / 4): grad b = 0.5 * 2 pi / 4
    CHECK(r.a0 == doctest::Approx(2.0 * 0.5 * kTwoPi / 4.0).epsilon(1e-3));
}

TEST_CASE("rewards are periodic on the torus") {
    for (const char* name : {"lq1d", "advective1d"}) {
        const ProblemSpec spec = builtin_problem(name);
        const StateGrid g = StateGrid::for_problem(spec, 64);
        const double L = spec.domain[0].length;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const State x = g.point(i);
            for (double u : {-1.0, 0.0, 0.5}) CHECK(spec.reward(x, u) == doctest::Approx(spec.reward(State{x[0] + L, 0.0}, u)).epsilon(1e-13));
        }
    }
}

TEST_CASE("SolveParams invariants") {
    const ProblemSpec spec = builtin_problem("lq1d");
    const SolveParams p = SolveParams::make(spec, 0.0625, 0.5, 128, 17);
    CHECK(p.discount_gamma == std::exp(-3.0 * 0.0625));
    CHECK(p.discount_gamma > 0.0);
    CHECK(p.discount_gamma < 1.0);
    CHECK(p.fixed_point_tol == doctest::Approx(1e-10 * 17.0 / 3.0));
    CHECK_NOTHROW(p.validate());
    SolveParams bad = p;
    bad.fixed_point_tol = 0.0;
    CHECK_THROWS_AS(bad.validate(), ParameterError);
    bad = p;
    bad.state_nodes = 1;
    CHECK_THROWS_AS(bad.validate(), ParameterError);
    CHECK_THROWS_AS(SolveParams::make(spec, 1.5, 0.5, 128, 17).validate(), ParameterError);
    CHECK_THROWS_AS(SolveParams::make(spec, 0.1, 0.0, 128, 17).validate(), ParameterError);
}
