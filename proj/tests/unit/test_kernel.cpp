#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "softctl/error.hpp"
#include "softctl/kernel.hpp"
#include "support.hpp"

using namespace softctl;
using test_support::constant_spec;
using test_support::kTwoPi;

namespace {

struct Moments {
    double mean = 0.0;
    double var = 0.0;
};

// Displacement moments of row i with minimal-image wrapping.
Moments row_moments(const TransitionKernel& K, std::size_t k, std::size_t i) {
    const StateGrid& g = K.grid().state;
    const double L = g.axis(0).length;
    const auto M = K.matrix(k);
    Moments m;
    for (std::size_t j = 0; j < g.size(); ++j) {
        double d = g.coordinate(0, j) - g.coordinate(0, i);
        d -= L * std::round(d / L);
        m.mean += M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * d;
        m.var += M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * d * d;
    }
    m.var -= m.mean * m.mean;
    return m;
}

TransitionKernel kernel_for(const ProblemSpec& spec, double h, std::size_t n, std::size_t m, std::size_t fp = 16) {
    const GridPair g = GridPair::for_problem(spec, n, m);
    return build_kernel(spec, SolveParams::make(spec, h, 0.5, n, m, fp), g);
}

}  // namespace

TEST_CASE("pure diffusion matches the wrapped Gaussian moments") {
    const double c = 0.8, h = 0.01;
    const ProblemSpec spec = constant_spec(c, 1.0, 4.0);
    const TransitionKernel K = kernel_for(spec, h, 400, 3);
    for (std::size_t i : {0u, 17u, 399u}) {
        const Moments m = row_moments(K, 1, i);
        CHECK(std::abs(m.mean) <= 1e-8);
        CHECK(m.var == doctest::Approx(c * c * h).epsilon(0.02));
    }
}

TEST_CASE("constant drift moves the row mean by u h") {
    ProblemSpec spec = constant_spec(1.0, 1.0, 4.0);
    spec.drift = [](const State&, double u) { return State{u, 0.0}; };
    const double h = 0.05;
    const TransitionKernel K = kernel_for(spec, h, 400, 5);
    for (std::size_t k = 0; k < K.controls(); ++k) {
        const double u = K.grid().control.node(k);
        const Moments m = row_moments(K, k, 123);
        if (u == 0.0)
            CHECK(std::abs(m.mean) <= 1e-10);
        else
            CHECK(m.mean == doctest::Approx(u * h).epsilon(0.02));
    }
}

TEST_CASE("kernels are nonnegative and row-stochastic") {
    for (const char* name : {"lq1d", "advective1d"}) {
        const ProblemSpec spec = builtin_problem(name);
        const TransitionKernel K = kernel_for(spec, 0.0625, 64, 9);
        CHECK(K.min_entry() >= 0.0);
        CHECK(K.max_row_defect() <= 1e-10);
    }
}

TEST_CASE("Chapman-Kolmogorov defect shrinks with substep refinement") {
    const ProblemSpec spec = builtin_problem("advective1d");
    const double h = 0.125;
    std::vector<double> defects;
    for (std::size_t fp : {2u, 4u, 8u, 16u}) {
        const TransitionKernel full = kernel_for(spec, h, 48, 3, fp);
        const TransitionKernel half = kernel_for(spec, h / 2, 48, 3, fp);
        const Eigen::MatrixXd composed = half.matrix(2) * half.matrix(2);
        defects.push_back((full.matrix(2) - composed).cwiseAbs().rowwise().sum().maxCoeff());
    }
    for (std::size_t i = 1; i < defects.size(); ++i) CHECK(defects[i] < defects[i - 1]);
}

TEST_CASE("expect_next: constants, maximum principle, gradient bound") {
    const ProblemSpec spec = builtin_problem("lq1d");
    const TransitionKernel K = kernel_for(spec, 0.0625, 128, 5);
    const StateGrid& g = K.grid().state;
    const ScalarField c = ScalarField::constant(g, 2.5);
    for (std::size_t k = 0; k < K.controls(); ++k) {
        const ScalarField r = expect_next(K, k, c);
        for (std::size_t i = 0; i < r.size(); ++i) CHECK(r[i] == doctest::Approx(2.5).epsilon(1e-12));
    }
    const ScalarField f = ScalarField::sample(g, [](const State& x) { return std::sin(kTwoPi * x[0] / 8.0) + 0.3 * std::cos(3.0 * kTwoPi * x[0] / 8.0); });
    // A0 = 0 for lq1d: |grad P f| <= |grad f| (5% grid slack).
    for (std::size_t k = 0; k < K.controls(); ++k) {
        const ScalarField r = expect_next(K, k, f);
        CHECK(sup_norm(r) <= sup_norm(f) + 1e-14);
        CHECK(gradient(r).sup_norm() <= 1.05 * gradient(f).sup_norm());
    }
    CHECK_THROWS_AS(expect_next(K, 0, ScalarField::constant(StateGrid(1, {Axis{-4.0, 8.0, 64}, Axis{}}, Topology::torus), 0.0)), DimensionError);
}

TEST_CASE("smoothing: |grad P_h f| h^1/2 / |f| stays bounded as h halves") {
    const ProblemSpec spec = builtin_problem("lq1d");
    std::vector<double> ratios;
    for (double h : {0.25, 0.125, 0.0625, 0.03125}) {
        const TransitionKernel K = kernel_for(spec, h, 256, 3);
        const StateGrid& g = K.grid().state;
        // square wave: gradient of the smoothed field scales like h^-1/2
        const ScalarField f(g, [&] {
            std::vector<double> v(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) v[i] = g.coordinate(0, i) < 0.0 ? -1.0 : 1.0;
            return v;
        }());
        ratios.push_back(gradient(expect_next(K, 1, f)).sup_norm() * std::sqrt(h) / sup_norm(f));
    }
    for (double r : ratios) {
        CHECK(r > 0.1);
        CHECK(r < 1.0);
    }
}

TEST_CASE("kernel preconditions") {
    const ProblemSpec temp = builtin_problem("temperature");
    const GridPair g = GridPair::for_problem(temp, 32, 5);
    CHECK_THROWS_AS(build_kernel(temp, SolveParams::make(temp, 0.1, 0.5, 32, 5), g), ModeError);
    const ProblemSpec lq = builtin_problem("lq1d");
    const GridPair g2 = GridPair::for_problem(lq, 32, 5);
    CHECK_THROWS_AS(build_kernel(lq, SolveParams::make(lq, 0.1, 0.5, 64, 5), g2), Error);
}

TEST_CASE("kernel CSV dump lists entries above 1e-14") {
    const ProblemSpec spec = constant_spec(1.0, 1.0, 1.0);
    const TransitionKernel K = kernel_for(spec, 0.01, 8, 2);
    std::ostringstream os;
    write_kernel_csv(os, K);
    const std::string text = os.str();
    CHECK(text.rfind("u_index,i,j,value", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') > 8);
}

TEST_CASE("expect_all stacks one column per control") {
    const ProblemSpec spec = builtin_problem("lq1d");
    const TransitionKernel K = kernel_for(spec, 0.0625, 32, 5);
    std::vector<double> f(32);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = std::sin(0.3 * static_cast<double>(i));
    const Eigen::MatrixXd all = expect_all(K, f);
    const ScalarField sf(K.grid().state, f);
    for (std::size_t k = 0; k < 5; ++k) {
        const ScalarField col = expect_next(K, k, sf);
        for (std::size_t i = 0; i < 32; ++i) CHECK(all(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) == doctest::Approx(col[i]).epsilon(1e-14));
    }
}
