#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace softctl {

/// A point of the state space. Only the first `dim` coordinates are used.
using State = std::array<double, 2>;
/// d x d matrix stored row-major in a 2 x 2 block.
using Mat2 = std::array<std::array<double, 2>, 2>;

enum class Topology { torus, window };

/// How far a problem can travel through the solver stack.
enum class ProblemMode {
    full,            ///< kernel / MDP / HJB / simulation
    classical_only,  ///< controlled diffusion: classical + exploratory PDE only
    deterministic,   ///< sigma == 0 on a finite window; closed-form verification only
};

struct AxisDomain {
    double lower = 0.0;
    double length = 1.0;
};

/// Axis-aligned control box U = [lower, upper] (N = 1).
struct ControlBox {
    double lower = -1.0;
    double upper = 1.0;
    double volume() const { return upper - lower; }
};

/// A controlled diffusion dX = b(X, u) dt + sigma(X) dB on a torus (or a
/// finite window for the deterministic example), discounted at rate beta.
/// Immutable after construction; all members are pure functions.
struct ProblemSpec {
    std::string name;
    int dim = 1;
    std::array<AxisDomain, 2> domain{};
    Topology topology = Topology::torus;
    ControlBox control_set{};
    double discount_beta = 1.0;
    ProblemMode mode = ProblemMode::full;

    std::function<State(const State&, double)> drift;
    std::function<Mat2(const State&)> diffusion;
    /// Set only for problems whose diffusion depends on the control.
    std::function<Mat2(const State&, double)> controlled_diffusion;
    std::function<double(const State&, double)> reward;

    /// Closed-form value function, when the problem carries one.
    std::function<double(const State&)> reference_value;
    /// Closed-form optimal feedback, when known.
    std::function<double(const State&)> reference_feedback;

    /// Registry parameters after overrides, kept for manifests.
    std::map<std::string, double> parameters;

    bool has_controlled_diffusion() const { return static_cast<bool>(controlled_diffusion); }

    /// Sigma(x) Sigma(x)^T, or at a given control for controlled diffusion.
    Mat2 covariance(const State& x, double u = 0.0) const;

    /// Maps a point into the fundamental cell of the torus.
    State wrap(const State& x) const;
};

using Overrides = std::map<std::string, double>;

/// Names accepted by builtin_problem().
std::vector<std::string> builtin_problem_names();

/// Registry of built-in problems: lq1d, advective1d, temperature,
/// instability. Unknown override keys raise ParameterError.
ProblemSpec builtin_problem(const std::string& name, const Overrides& overrides = {});

struct GridPair;

struct AssumptionCheck {
    std::string name;
    bool pass = false;
    std::string detail;
};

/// Grid-measured constants of the standing assumptions.
struct AssumptionReport {
    std::vector<AssumptionCheck> checks;
    double m1 = 0.0;  ///< max of |b|, |sigma|, Lip(b), Lip(sigma)
    double m2 = 0.0;  ///< max of |r|, Lip(r)
    double sup_drift = 0.0;
    double sup_sigma = 0.0;
    double lip_drift = 0.0;
    double lip_sigma = 0.0;
    double sup_reward = 0.0;
    double lip_reward = 0.0;
    double lip_reward_state = 0.0;  ///< sup |grad_x r|
    double grad_drift = 0.0;        ///< sup |grad_x b|
    double grad_sigma = 0.0;        ///< sup |grad sigma|
    double grad_covariance = 0.0;   ///< sup |grad Sigma|
    double lambda_min = 0.0;
    double a0 = 0.0;  ///< 2|grad b| + |grad Sigma|^2 / (4 lambda_min)
    bool beta_condition = false;  ///< beta >= 1 + a0
    bool mdp_supported = true;
    std::optional<double> sigma_gradient_root_h;  ///< |grad sigma| h^{1/2}, when h is known

    bool h1() const;
    bool h2() const;
    const AssumptionCheck* find(const std::string& name) const;
};

/// Measures the constants of (H1)(H2) on the grid by sup norms and
/// adjacent-node difference quotients. Throws InvalidProblemError naming
/// the node if any coefficient is non-finite.
AssumptionReport validate_assumptions(const ProblemSpec& spec, const GridPair& grid,
                                      std::optional<double> step_h = std::nullopt);

/// Solver parameters of one (h, lambda) run.
struct SolveParams {
    double step_h = 0.0625;
    double temperature = 0.5;
    double discount_gamma = 0.0;  ///< exp(-beta h)
    std::size_t state_nodes = 128;
    std::size_t control_nodes = 17;
    std::size_t fp_substeps = 16;
    double fixed_point_tol = 1e-10;
    std::size_t max_iterations = 1'000'000;

    /// Fills gamma from the problem and defaults the tolerance to
    /// 1e-10 * max(1, |r|_inf / beta) measured on the grid.
    static SolveParams make(const ProblemSpec& spec, double h, double lambda,
                            std::size_t state_nodes, std::size_t control_nodes,
                            std::size_t fp_substeps = 16);

    /// Throws ParameterError on violated invariants.
    void validate() const;
};

/// Sup of |r| over the state and control nodes of `grid`.
double reward_sup(const ProblemSpec& spec, const GridPair& grid);

}  // namespace softctl
