#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "softctl/grid.hpp"
#include "softctl/problem.hpp"

namespace test_support {

inline constexpr double kTwoPi = 6.283185307179586;

/// 1-D torus problem with constant drift, constant sigma and reward r.
inline softctl::ProblemSpec constant_spec(double sigma = 1.0, double beta = 1.0, double length = 1.0,
                                          double u_lo = -1.0, double u_hi = 1.0) {
    softctl::ProblemSpec s;
    s.name = "constant";
    s.dim = 1;
    s.domain[0] = {0.0, length};
    s.topology = softctl::Topology::torus;
    s.control_set = {u_lo, u_hi};
    s.discount_beta = beta;
    s.drift = [](const softctl::State&, double) { return softctl::State{0.0, 0.0}; };
    s.diffusion = [sigma](const softctl::State&) { return softctl::Mat2{{{sigma, 0.0}, {0.0, sigma}}}; };
    s.reward = [](const softctl::State&, double) { return 0.0; };
    return s;
}

inline std::vector<double> random_values(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

inline softctl::PolicyField random_policy(std::mt19937_64& rng, const softctl::GridPair& g) {
    return softctl::PolicyField::normalized(g, random_values(rng, g.state.size() * g.control.size(), 0.1, 2.0));
}

}  // namespace test_support
