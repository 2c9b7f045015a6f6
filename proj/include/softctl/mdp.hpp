#pragma once

#include <cstddef>

#include <Eigen/Dense>

#include "softctl/grid.hpp"
#include "softctl/kernel.hpp"
#include "softctl/problem.hpp"

namespace softctl {

/// r(x_i, u_k) on the grid, (state, control).
Eigen::MatrixXd reward_table(const ProblemSpec& spec, const GridPair& grid);

/// Q(x, u) = r(x, u) h + gamma (K_u W)(x), one column per control node.
struct SoftQ {
    Eigen::MatrixXd values;
};

SoftQ soft_q(const ProblemSpec& spec, const SolveParams& params, const TransitionKernel& kernel,
             const ScalarField& W);

/// Soft Bellman operator: lambda h ln of the trapezoidal integral over U of
/// exp(Q / (lambda h)), evaluated with max subtraction.
ScalarField soft_bellman(const ProblemSpec& spec, const SolveParams& params,
                         const TransitionKernel& kernel, const ScalarField& W);

struct FixedPointResult {
    ScalarField value;
    std::size_t iterations = 0;
    double last_increment = 0.0;  ///< |W_k - W_{k-1}|_inf at exit
    double residual = 0.0;        ///< |T W - W|_inf of the returned field
};

/// Soft value iteration from W = 0. Stops once the increment is below
/// tol (1 - gamma) / gamma, which certifies |W - V_h|_inf <= tol.
FixedPointResult solve_vh(const ProblemSpec& spec, const SolveParams& params,
                          const TransitionKernel& kernel);

struct GibbsPolicy {
    PolicyField policy;
    ScalarField log_partition;  ///< ln Z(x)
};

/// pi(x, u) = exp(Q(x, u) / (lambda h)) / Z(x).
GibbsPolicy gibbs_policy(const ProblemSpec& spec, const SolveParams& params,
                         const TransitionKernel& kernel, const ScalarField& V);

/// Fixed-policy operator: integral over U of pi (r h - lambda h ln pi + gamma K_u W).
ScalarField policy_bellman(const ProblemSpec& spec, const SolveParams& params,
                           const TransitionKernel& kernel, const PolicyField& pi,
                           const ScalarField& W);

/// V_h[pi] as the fixed point of the fixed-policy operator, same stopping
/// rule as solve_vh.
FixedPointResult evaluate_policy_discrete(const ProblemSpec& spec, const SolveParams& params,
                                          const TransitionKernel& kernel, const PolicyField& pi);

/// Max adjacent-node quotient |ln pi(x', u) - ln pi(x, u)| / dx.
double policy_log_lipschitz(const PolicyField& pi);

}  // namespace softctl
