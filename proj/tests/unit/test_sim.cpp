#include <doctest.h>

#include <cmath>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "softctl/error.hpp"
#include "softctl/kernel.hpp"
#include "softctl/mdp.hpp"
#include "softctl/rates.hpp"
#include "softctl/sim.hpp"
#include "support.hpp"

using namespace softctl;
using test_support::constant_spec;

TEST_CASE("zero reward, uniform policy: discrete rollout is exact up to the tail") {
    const ProblemSpec spec = constant_spec(1.0, 1.0, 1.0);
    const GridPair g = GridPair::for_problem(spec, 16, 9);
    const SolveParams p = SolveParams::make(spec, 0.0625, 0.5, 16, 9);
    RolloutConfig cfg;
    cfg.paths = 64;
    const PathEstimate e = rollout_discrete(spec, p, PolicyField::uniform(g), {0.3, 0.0}, cfg);
    const double exact = 0.5 * 0.0625 * std::log(2.0) / (1.0 - p.discount_gamma);
    CHECK(e.std_error <= 1e-14);
    CHECK(e.paths_used == 64);
    CHECK(e.mean <= exact);
    CHECK(exact - e.mean <= e.tail_bound * (1.0 + 1e-9));
    CHECK(e.tail_bound <= cfg.tail_tol * 0.0625 / (1.0 - p.discount_gamma) * (1.0 + 1e-9));
}

TEST_CASE("zero reward, uniform policy: continuous rollout is exact up to the tail") {
    const ProblemSpec spec = constant_spec(1.0, 1.0, 1.0);
    const GridPair g = GridPair::for_problem(spec, 16, 9);
    RolloutConfig cfg;
    cfg.paths = 32;
    const PathEstimate e = rollout_continuous(spec, 0.5, PolicyField::uniform(g), {0.3, 0.0}, cfg);
    const double exact = 0.5 * std::log(2.0);
    CHECK(exact - e.mean >= -1e-12);
    CHECK(exact - e.mean <= e.tail_bound * (1.0 + 1e-9));
}

TEST_CASE("estimates do not depend on the worker count") {
    const ProblemSpec spec = builtin_problem("lq1d");
    const GridPair g = GridPair::for_problem(spec, 32, 9);
    const SolveParams p = SolveParams::make(spec, 0.125, 0.5, 32, 9);
    std::mt19937_64 rng(3);
    const PolicyField pi = test_support::random_policy(rng, g);
    for (bool anti : {false, true}) {
        RolloutConfig cfg;
        cfg.paths = 300;
        cfg.rng_seed = 77;
        cfg.antithetic = anti;
        cfg.workers = 1;
        const PathEstimate a = rollout_discrete(spec, p, pi, {1.0, 0.0}, cfg);
        const PathEstimate c = rollout_continuous(spec, 0.5, pi, {1.0, 0.0}, cfg);
        cfg.workers = 4;
        const PathEstimate b = rollout_discrete(spec, p, pi, {1.0, 0.0}, cfg);
        const PathEstimate d = rollout_continuous(spec, 0.5, pi, {1.0, 0.0}, cfg);
        CHECK(a.mean == b.mean);
        CHECK(a.std_error == b.std_error);
        CHECK(c.mean == d.mean);
        cfg.rng_seed = 78;
        CHECK(rollout_discrete(spec, p, pi, {1.0, 0.0}, cfg).mean != a.mean);
    }
}

TEST_CASE("antithetic and plain estimates agree") {
    const ProblemSpec spec = builtin_problem("lq1d");
    const GridPair g = GridPair::for_problem(spec, 32, 9);
    const SolveParams p = SolveParams::make(spec, 0.125, 0.5, 32, 9);
    RolloutConfig cfg;
    cfg.paths = 4000;
    cfg.rng_seed = 5;
    const PathEstimate plain = rollout_discrete(spec, p, PolicyField::uniform(g), {0.5, 0.0}, cfg);
    cfg.antithetic = true;
    const PathEstimate anti = rollout_discrete(spec, p, PolicyField::uniform(g), {0.5, 0.0}, cfg);
    CHECK(anti.paths_used == 4000);
    CHECK(std::abs(plain.mean - anti.mean) <= 4.0 * std::hypot(plain.std_error, anti.std_error));
}

TEST_CASE("sample_action follows the piecewise-linear density") {
    const ControlGrid u(-1.0, 1.0, 21);
    std::vector<double> row(u.size());
    for (std::size_t k = 0; k < u.size(); ++k) row[k] = 1.0 + u.node(k);  // density (1 + u) / 2
    std::mt19937_64 rng(123);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const int bins = 10, draws = 100000;
    std::vector<int> count(bins, 0);
    for (int i = 0; i < draws; ++i) {
        const double a = sample_action(row, u, unif(rng));
        REQUIRE(a >= -1.0);
        REQUIRE(a <= 1.0);
        ++count[std::min(bins - 1, static_cast<int>((a + 1.0) / 2.0 * bins))];
    }
    auto cdf = [](double x) { return (1.0 + x) * (1.0 + x) / 4.0; };
    double chi2 = 0.0;
    for (int b = 0; b < bins; ++b) {
        const double lo = -1.0 + 2.0 * b / bins, hi = lo + 2.0 / bins;
        const double expect = draws * (cdf(hi) - cdf(lo));
        chi2 += (count[b] - expect) * (count[b] - expect) / expect;
    }
    MESSAGE("chi-square (9 dof) = " << chi2);
    CHECK(chi2 < 27.88);  // p = 0.001

    row[3] = -0.1;
    CHECK_THROWS_AS(sample_action(row, u, 0.5), DomainError);
    std::fill(row.begin(), row.end(), 0.0);
    CHECK_THROWS_AS(sample_action(row, u, 0.5), DomainError);
}

TEST_CASE("standard error decays like paths^-1/2") {
    const ProblemSpec spec = builtin_problem("lq1d");
    const GridPair g = GridPair::for_problem(spec, 32, 9);
    const SolveParams p = SolveParams::make(spec, 0.125, 0.5, 32, 9);
    std::vector<double> n, se;
    for (std::size_t paths : {400, 1600, 6400, 25600}) {
        RolloutConfig cfg;
        cfg.paths = paths;
        cfg.rng_seed = 1;
        n.push_back(static_cast<double>(paths));
        se.push_back(rollout_discrete(spec, p, PolicyField::uniform(g), {0.0, 0.0}, cfg).std_error);
    }
    const LogLogFit fit = fit_loglog(n, se);
    MESSAGE("std_error slope = " << fit.slope);
    CHECK(std::abs(fit.slope + 0.5) <= 0.1);
}

TEST_CASE("Monte Carlo agrees with V_h on lq1d") {
    const ProblemSpec spec = builtin_problem("lq1d");
    const GridPair g = GridPair::for_problem(spec, 64, 17);
    const SolveParams p = SolveParams::make(spec, 0.125, 0.5, 64, 17);
    const TransitionKernel K = build_kernel(spec, p, g);
    const FixedPointResult v = solve_vh(spec, p, K);
    const PolicyField pi = gibbs_policy(spec, p, K, v.value).policy;
    RolloutConfig cfg;
    cfg.paths = 6000;
    cfg.rng_seed = 2;
    cfg.antithetic = true;
    const PathEstimate e = rollout_discrete(spec, p, pi, {0.0, 0.0}, cfg);
    const double vh0 = interpolate(v.value, {0.0, 0.0});
    MESSAGE("MC " << e.mean << " +- " << e.std_error << " vs V_h(0) = " << vh0);
    // the Euler state step adds an O(h / substeps) bias on top of the noise
    CHECK(std::abs(e.mean - vh0) <= 4.0 * e.std_error + e.tail_bound + 0.01);
}

TEST_CASE("path dump is capped at 100 paths") {
    const ProblemSpec spec = builtin_problem("lq1d");
    const GridPair g = GridPair::for_problem(spec, 16, 9);
    const SolveParams p = SolveParams::make(spec, 0.25, 0.5, 16, 9);
    std::ostringstream os;
    RolloutConfig cfg;
    cfg.paths = 150;
    cfg.path_dump = &os;
    (void)rollout_discrete(spec, p, PolicyField::uniform(g), {0.0, 0.0}, cfg);
    std::istringstream in(os.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "path_id,t,x,action,running_payoff");
    std::set<std::string> ids;
    while (std::getline(in, line)) ids.insert(line.substr(0, line.find(',')));
    CHECK(ids.size() == 100);
}

TEST_CASE("instability demo: Y stays on the grid, X is trapped") {
    for (double h : {0.1, 0.01}) {
        const ProblemSpec spec = builtin_problem("instability", {{"h", h}});
        const DivergenceDemo d = trajectory_divergence_demo(spec, 2.0);
        CHECK(d.record.y_grid_exact);
        CHECK(d.record.sup_abs_x == doctest::Approx(h / 4.0).epsilon(1e-12));
        CHECK(d.record.y_at_1 == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(d.record.sup_divergence_to_1 == doctest::Approx(1.0 - h / 4.0).epsilon(1e-12));
        for (const auto& pt : d.path)
            if (pt.t <= h / 4.0) CHECK(pt.x == doctest::Approx(pt.y).epsilon(1e-14));
    }
    CHECK_THROWS_AS(trajectory_divergence_demo(builtin_problem("lq1d")), ModeError);
}

TEST_CASE("rollouts reject invalid inputs") {
    const ProblemSpec spec = builtin_problem("lq1d");
    const GridPair g = GridPair::for_problem(spec, 16, 9);
    const SolveParams p = SolveParams::make(spec, 0.25, 0.5, 16, 9);
    RolloutConfig cfg;
    cfg.paths = 0;
    CHECK_THROWS_AS(rollout_discrete(spec, p, PolicyField::uniform(g), {0.0, 0.0}, cfg), ParameterError);
    cfg.paths = 10;
    cfg.horizon_T = -1.0;
    CHECK_THROWS_AS(rollout_discrete(spec, p, PolicyField::uniform(g), {0.0, 0.0}, cfg), ParameterError);
    CHECK_THROWS_AS(rollout_discrete(builtin_problem("temperature"), p, PolicyField::uniform(g), {0.0, 0.0}, RolloutConfig{}),
                    Error);
}
