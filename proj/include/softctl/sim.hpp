#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "softctl/grid.hpp"
#include "softctl/problem.hpp"

namespace softctl {

struct RolloutConfig {
    std::size_t paths = 10'000;
    /// Truncation time; unset means ln(tail_tol^-1 |r|_inf / beta) / beta.
    std::optional<double> horizon_T;
    double tail_tol = 1e-3;
    std::size_t euler_substeps = 8;
    std::uint64_t rng_seed = 0;
    bool antithetic = false;
    std::size_t workers = 0;
    /// Decision interval of the continuous rollout (the discrete rollout
    /// uses the solver step instead).
    double step_h = 0.0625;
    /// Optional CSV dump of the first (at most 100) paths.
    std::ostream* path_dump = nullptr;
};

struct PathEstimate {
    double mean = 0.0;
    double std_error = 0.0;
    std::size_t paths_used = 0;
    double tail_bound = 0.0;
    double horizon = 0.0;  ///< truncated horizon T' actually simulated
};

/// Inverse-CDF draw from the piecewise-linear density through the values
/// `row` at the control nodes. Throws DomainError on negative entries or a
/// row without mass.
double sample_action(std::span<const double> row, const ControlGrid& controls, double uniform);

/// Estimates V_h[pi](x0): actions drawn at t_i = i h and held over
/// [t_i, t_{i+1}), state advanced by Euler-Maruyama substeps with periodic
/// wrap, payoff sum_i gamma^i h (r(Y_i, nu_i) - lambda int pi ln pi).
PathEstimate rollout_discrete(const ProblemSpec& spec, const SolveParams& params, const PolicyField& pi,
                              const State& x0, const RolloutConfig& cfg);

/// Estimates V[pi](x0) under the policy-averaged drift, with steps
/// cfg.step_h / cfg.euler_substeps. The running payoff is frozen at the
/// left end of each step and the discount is integrated exactly over it.
PathEstimate rollout_continuous(const ProblemSpec& spec, double lambda, const PolicyField& pi,
                                const State& x0, const RolloutConfig& cfg);

/// Sampled (t, Y, X) of the instability example.
struct TrajectoryPoint {
    double t = 0.0;
    double y = 0.0;
    double x = 0.0;
};

struct DivergenceRecord {
    double h = 0.0;
    bool y_grid_exact = false;        ///< Y(k h) == k h for every k <= 100
    double sup_abs_x = 0.0;           ///< sup over the run of |X(t)|
    double sup_divergence_to_1 = 0.0; ///< sup_{t <= 1} |Y - X|
    double y_at_1 = 0.0;
    double x_at_1 = 0.0;
};

struct DivergenceDemo {
    std::vector<TrajectoryPoint> path;
    DivergenceRecord record;
};

/// Y follows the sampled feedback mu*(Y(i h)) held over each step; X
/// follows mu*(X) continuously, integrated event by event at the switch
/// points of mu* (Filippov sliding where both sides point inward).
/// The step h is the problem's "h" parameter; switch points of mu* sit at
/// h/4 + j h/2. Throws ModeError unless the problem is deterministic with a
/// known feedback.
DivergenceDemo trajectory_divergence_demo(const ProblemSpec& spec, double t_end = 10.0,
                                          std::size_t samples_per_step = 4);

}  // namespace softctl
