#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "softctl/error.hpp"
#include "softctl/hjb.hpp"
#include "support.hpp"

using namespace softctl;
using test_support::constant_spec;
using test_support::kTwoPi;
using test_support::random_policy;

namespace {

double min_of(const ScalarField& f) {
    double m = 1e300;
    for (std::size_t i = 0; i < f.size(); ++i) m = std::min(m, f[i]);
    return m;
}

// Midpoint rule on a fine mesh.
double quad_exp(double q, double lo, double hi, bool first_moment) {
    const int n = 200000;
    const double du = (hi - lo) / n;
    double s = 0.0;
    for (int k = 0; k < n; ++k) {
        const double u = lo + (k + 0.5) * du;
        s += (first_moment ? u : 1.0) * std::exp(q * u);
    }
    return s * du;
}

}  // namespace

TEST_CASE("zero reward: constant value and uniform policy") {
    const ProblemSpec spec = constant_spec(1.0, 2.0, 1.0);
    const GridPair g = GridPair::for_problem(spec, 32, 9);
    const ExploratorySolution s = solve_exploratory_hjb(spec, 0.5, g);
    for (std::size_t i = 0; i < s.value.size(); ++i) CHECK(std::abs(s.value[i] - 0.25 * std::log(2.0)) <= 1e-10);
    for (double p : s.policy.values()) CHECK(std::abs(p - 0.5) <= 1e-10);
    CHECK(sup_norm(hjb_residual(spec, 0.5, g, s.value)) <= 1e-10);
}

TEST_CASE("exploratory value bounds on the builtins") {
    for (const char* name : {"lq1d", "advective1d"}) {
        const ProblemSpec spec = builtin_problem(name);
        const GridPair g = GridPair::for_problem(spec, 128, 17);
        const double lambda = 0.5, beta = spec.discount_beta;
        const ExploratorySolution s = solve_exploratory_hjb(spec, lambda, g);
        const double shift = lambda * std::log(spec.control_set.volume()) / beta;
        const double r_sup = reward_sup(spec, g);
        for (std::size_t i = 0; i < s.value.size(); ++i) CHECK(std::abs(s.value[i] - shift) <= r_sup / beta + 1e-9);
        CHECK(s.residual_history.back() <= 1e-8 * std::max(1.0, r_sup / beta));
        CHECK(s.iterations < 20);
    }
}

TEST_CASE("advective1d gradient envelope") {
    const ProblemSpec spec = builtin_problem("advective1d");
    const GridPair g = GridPair::for_problem(spec, 256, 17);
    const AssumptionReport rep = validate_assumptions(spec, g);
    REQUIRE(rep.beta_condition);
    for (double lambda : {1.0, 0.25, 0.0625}) {
        const ExploratorySolution s = solve_exploratory_hjb(spec, lambda, g);
        const double env = gradient(s.value).sup_norm() * std::sqrt(spec.discount_beta);
        MESSAGE("lambda " << lambda << ": |grad V| sqrt(beta) = " << env);
        CHECK(env <= 2.0 * rep.lip_reward_state * std::sqrt(spec.discount_beta) / (spec.discount_beta - rep.a0));
    }
}

TEST_CASE("instability: classical feedback is sign(cos(2 pi x / h))") {
    const ProblemSpec spec = builtin_problem("instability", {{"h", 0.1}});
    const GridPair g = GridPair::for_problem(spec, 401, 3);
    const ClassicalSolution c = solve_classical_hjb(spec, g);
    std::size_t checked = 0;
    for (std::size_t i = 0; i < g.state.size(); ++i) {
        const double x = g.state.coordinate(0, i);
        const double cs = std::cos(kTwoPi * x / 0.1);
        if (std::abs(cs) < 0.2) continue;
        CHECK(c.feedback[i] == (cs > 0 ? 1.0 : -1.0));
        CHECK(std::abs(c.value[i] - spec.reference_value({x, 0.0})) <= 1e-14);
        ++checked;
    }
    CHECK(checked > 200);
}

TEST_CASE("temperature: classical feedback follows the sign of v''") {
    const ProblemSpec spec = builtin_problem("temperature");
    const GridPair g = GridPair::for_problem(spec, 128, 9);
    const ClassicalSolution c = solve_classical_hjb(spec, g);
    const double dx = g.state.spacing(0);
    const std::size_t n = g.state.size();
    for (std::size_t i = 0; i < n; ++i) {
        CHECK(c.value[i] <= 1e-12);
        CHECK(c.value[i] >= -2.0 / spec.discount_beta - 1e-12);
        const double vxx = (c.value[(i + 1) % n] - 2.0 * c.value[i] + c.value[(i + n - 1) % n]) / (dx * dx);
        if (std::abs(vxx) < 1e-6) continue;
        CHECK(c.feedback[i] == (vxx <= 0.0 ? 0.5 : 1.0));
    }
    // central residual of the upwind solution: first order in dx
    const double coarse = sup_norm(classical_hjb_residual(spec, g, c.value));
    const GridPair fine = GridPair::for_problem(spec, 256, 9);
    const double finer = sup_norm(classical_hjb_residual(spec, fine, solve_classical_hjb(spec, fine).value));
    MESSAGE("central residual: " << coarse << " -> " << finer);
    CHECK(finer < 0.7 * coarse);
}

TEST_CASE("classical solve with zero reward") {
    const ProblemSpec spec = constant_spec(1.0, 1.0, 1.0);
    const GridPair g = GridPair::for_problem(spec, 32, 5);
    const ClassicalSolution c = solve_classical_hjb(spec, g);
    CHECK(sup_norm(c.value) <= 1e-12);
    for (std::size_t k : c.feedback_index) CHECK(k == 0);
}

TEST_CASE("continuous policy evaluation") {
    const ProblemSpec spec = builtin_problem("lq1d");
    const GridPair g = GridPair::for_problem(spec, 128, 17);
    const double lambda = 0.5;
    const ExploratorySolution s = solve_exploratory_hjb(spec, lambda, g);
    CHECK(sup_norm_diff(evaluate_policy_continuous(spec, lambda, g, s.policy, true), s.value) <= 1e-7);

    const PolicyField uni = PolicyField::uniform(g);
    const ScalarField with = evaluate_policy_continuous(spec, lambda, g, uni, true);
    const ScalarField without = evaluate_policy_continuous(spec, lambda, g, uni, false);
    const double shift = lambda * std::log(2.0) / spec.discount_beta;
    for (std::size_t i = 0; i < with.size(); ++i) CHECK(std::abs(with[i] - without[i] - shift) <= 1e-10);

    std::mt19937_64 rng(4);
    for (int t = 0; t < 5; ++t) {
        const ScalarField e = evaluate_policy_continuous(spec, lambda, g, random_policy(rng, g), true);
        CHECK(min_of(s.value - e) >= -1e-7);
    }
}

TEST_CASE("residual shifts by beta eps under a constant shift") {
    const ProblemSpec spec = builtin_problem("advective1d");
    const GridPair g = GridPair::for_problem(spec, 64, 9);
    const ScalarField W = ScalarField::sample(g.state, [](const State& x) { return 0.3 * std::sin(kTwoPi * x[0] / 4.0); });
    const ScalarField a = hjb_residual(spec, 0.5, g, W);
    const ScalarField b = hjb_residual(spec, 0.5, g, W + ScalarField::constant(g.state, 0.7));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i] - spec.discount_beta * 0.7) <= 1e-10);
}

TEST_CASE("comparison: a subsolution lies below V") {
    const ProblemSpec spec = builtin_problem("advective1d");
    const GridPair g = GridPair::for_problem(spec, 64, 9);
    const ExploratorySolution s = solve_exploratory_hjb(spec, 0.5, g);
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> amp(-0.5, 0.5);
    for (int t = 0; t < 10; ++t) {
        const double a1 = amp(rng), a2 = amp(rng);
        ScalarField W = ScalarField::sample(g.state, [&](const State& x) {
            return a1 * std::cos(kTwoPi * x[0] / 4.0) + a2 * std::sin(2.0 * kTwoPi * x[0] / 4.0);
        });
        // push down until the residual is nonnegative everywhere
        const double deficit = std::max(0.0, -min_of(hjb_residual(spec, 0.5, g, W)));
        W = W - ScalarField::constant(g.state, deficit / spec.discount_beta + 1e-9);
        REQUIRE(min_of(hjb_residual(spec, 0.5, g, W)) >= 0.0);
        CHECK(min_of(s.value - W) >= -1e-9);
    }
}

TEST_CASE("exploratory value approaches the classical one as lambda shrinks") {
    const ProblemSpec spec = builtin_problem("advective1d");
    const GridPair g = GridPair::for_problem(spec, 128, 33);
    const ClassicalSolution c = solve_classical_hjb(spec, g);
    std::vector<double> err;
    for (double lambda : {0.5, 0.125, 0.03125}) {
        err.push_back(sup_norm_diff(solve_exploratory_hjb(spec, lambda, g).value, c.value));
        MESSAGE("lambda " << lambda << ": |V - v| = " << err.back());
    }
    CHECK(err[1] < err[0]);
    CHECK(err[2] < err[1]);
}

TEST_CASE("iteration cap raises ConvergenceError") {
    const ProblemSpec spec = builtin_problem("lq1d");
    const GridPair g = GridPair::for_problem(spec, 64, 17);
    HjbOptions opts;
    opts.max_iterations = 1;
    opts.tol = 1e-30;
    try {
        (void)solve_exploratory_hjb(spec, 0.5, g, opts);
        FAIL("expected ConvergenceError");
    } catch (const ConvergenceError& e) {
        CHECK(e.last_residual() > 0.0);
        CHECK(std::isfinite(e.last_residual()));
    }
    CHECK_THROWS_AS(solve_exploratory_hjb(spec, 0.0, g), ParameterError);
}

TEST_CASE("closed-form exponential integrals") {
    for (double q : {-60.0, -3.0, -1e-9, 0.0, 1e-7, 2.5, 40.0}) {
        const double lo = 0.5, hi = 1.0;
        const double ref = quad_exp(q, lo, hi, false);
        CHECK(log_integral_exp(q, lo, hi) == doctest::Approx(std::log(ref)).epsilon(1e-8));
        CHECK(mean_exp_density(q, lo, hi) == doctest::Approx(quad_exp(q, lo, hi, true) / ref).epsilon(1e-8));
    }
    // large |q| stays finite where exp overflows
    CHECK(std::isfinite(log_integral_exp(5000.0, 0.5, 1.0)));
    CHECK(mean_exp_density(5000.0, 0.5, 1.0) == doctest::Approx(1.0 - 1.0 / 5000.0).epsilon(1e-10));
    CHECK(mean_exp_density(-5000.0, 0.5, 1.0) == doctest::Approx(0.5 + 1.0 / 5000.0).epsilon(1e-10));
}

TEST_CASE("temperature exploratory solve") {
    const ProblemSpec spec = builtin_problem("temperature");
    const StateGrid grid = GridPair::for_problem(spec, 128, 9).state;
    const TemperatureExploratory t = solve_temperature_exploratory(spec, 0.5, grid);
    CHECK(t.residual_history.back() <= 1e-8);
    for (double m : t.policy_mean) {
        CHECK(m >= 0.5);
        CHECK(m <= 1.0);
    }
    CHECK_THROWS_AS(solve_exploratory_hjb(spec, 0.5, GridPair::for_problem(spec, 32, 9)), ModeError);
}
