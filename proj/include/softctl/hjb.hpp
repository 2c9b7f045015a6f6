#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <vector>

#include "softctl/grid.hpp"
#include "softctl/kernel.hpp"
#include "softctl/problem.hpp"

namespace softctl {

/// beta V - G V = source on the torus, with G a monotone grid generator
/// (possibly a policy mixture of per-control generators).
struct EllipticProblem {
    StateGrid grid;
    SparseMatrix generator;
    double beta = 1.0;
    std::vector<double> source;
};

/// Single sparse direct solve. Throws ConvergenceError if the factorization
/// fails (not expected for beta > 0 and a monotone generator).
ScalarField solve_elliptic(const EllipticProblem& problem);

struct HjbOptions {
    std::optional<double> tol;  ///< default 1e-8 max(1, |r|_inf / beta)
    std::size_t max_iterations = 200;
    double damping = 1.0;  ///< initial policy relaxation, halved when the residual grows
};

struct ExploratorySolution {
    ScalarField value;
    PolicyField policy;
    std::size_t iterations = 0;
    std::vector<double> residual_history;
};

/// Damped policy iteration on the exponential-form HJB
///   -beta V + lambda ln int_U exp((r + b . grad V) / lambda) du + 1/2 tr(Sigma D^2 V) = 0,
/// with b . grad V upwinded per control and Sigma D^2 V centred.
ExploratorySolution solve_exploratory_hjb(const ProblemSpec& spec, double lambda,
                                          const GridPair& grid, const HjbOptions& options = {});

struct ClassicalSolution {
    ScalarField value;
    std::vector<double> feedback;            ///< mu*(x_i)
    std::vector<std::size_t> feedback_index; ///< control node of mu*(x_i)
    std::size_t iterations = 0;
};

/// Howard policy iteration with a hard argmax over control nodes (ties go to
/// the smallest index). Controlled diffusion is allowed. For deterministic
/// problems carrying a closed-form value, that value is sampled on the grid
/// and the feedback is the argmax of r + u v_x with a central-difference v_x.
ClassicalSolution solve_classical_hjb(const ProblemSpec& spec, const GridPair& grid,
                                      const HjbOptions& options = {});

/// V[pi] (with entropy) or v[pi] (without) from one linear solve with the
/// pi-mixture of the per-control generators.
ScalarField evaluate_policy_continuous(const ProblemSpec& spec, double lambda, const GridPair& grid,
                                       const PolicyField& pi, bool with_entropy);

/// Pointwise residual of the exponential-form HJB in the solver's monotone
/// discretization.
ScalarField hjb_residual(const ProblemSpec& spec, double lambda, const GridPair& grid,
                         const ScalarField& V);

/// Pointwise residual of the classical HJB with central differences,
/// -beta v + max_k [r + b v_x + 1/2 Sigma v_xx]. 1-D only.
ScalarField classical_hjb_residual(const ProblemSpec& spec, const GridPair& grid, const ScalarField& v);

/// Central-difference residual of a closed-form value on two grids. The
/// residual of the instability example is bounded by |v'''| dx^2 / 6 from the
/// gradient stencil; `bound_constant` is 10 times that constant.
struct ResidualScaling {
    std::array<std::size_t, 2> nodes{};
    std::array<double, 2> dx{};
    std::array<double, 2> residual{};  ///< sup norm
    std::array<double, 2> scaled{};    ///< residual / dx^2
    double bound_constant = 0.0;
    bool pass = false;
};

/// Requires the deterministic instability problem (closed-form value with
/// parameters h and n).
ResidualScaling reference_residual_scaling(const ProblemSpec& spec, std::size_t coarse_nodes,
                                           std::size_t fine_nodes, std::size_t control_nodes = 3);

/// Exploratory HJB of the controlled-diffusion temperature problem with the
/// control integral over [a, 1] done in closed form. `policy_mean` and
/// `policy_rate` describe pi*(x, u) proportional to exp(rate(x) u).
struct TemperatureExploratory {
    ScalarField value;
    std::vector<double> policy_rate;
    std::vector<double> policy_mean;
    std::size_t iterations = 0;
    std::vector<double> residual_history;
};

TemperatureExploratory solve_temperature_exploratory(const ProblemSpec& spec, double lambda,
                                                     const StateGrid& grid,
                                                     const HjbOptions& options = {});

/// ln of the integral of exp(q u) over [lower, upper], stable for all q.
double log_integral_exp(double q, double lower, double upper);
/// Mean of the density proportional to exp(q u) on [lower, upper].
double mean_exp_density(double q, double lower, double upper);

}  // namespace softctl
