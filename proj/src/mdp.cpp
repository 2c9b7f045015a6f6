#include "softctl/mdp.hpp"

#include <algorithm>
#include <cmath>

#include "softctl/error.hpp"

namespace softctl {

namespace {

void check_inputs(const SolveParams& params, const TransitionKernel& kernel) {
    if (!(params.temperature > 0.0)) throw ParameterError("temperature lambda must be positive");
    params.validate();
    if (std::abs(kernel.step_h() - params.step_h) > 1e-15 * params.step_h)
        throw ParameterError("kernel was built for a different step h");
}

// Q = r h + gamma K W, written into q (n x m).
void fill_q(const Eigen::MatrixXd& rewards, const TransitionKernel& kernel, double h, double gamma,
            std::span<const double> w, Eigen::MatrixXd& q) {
    q = expect_all(kernel, w);
    q *= gamma;
    q += h * rewards;
}

// lambda h ln sum_k w_k exp(q_k / (lambda h)) per row.
void log_sum_exp_rows(const Eigen::MatrixXd& q, std::span<const double> weights, double temp,
                      std::span<double> out) {
    const Eigen::Index m = q.cols();
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
        const double top = q.row(i).maxCoeff();
        double s = 0.0;
        for (Eigen::Index k = 0; k < m; ++k)
            s += weights[static_cast<std::size_t>(k)] * std::exp((q(i, k) - top) / temp);
        out[static_cast<std::size_t>(i)] = top + temp * std::log(s);
    }
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

void check_policy_positive(const PolicyField& pi) {
    const auto w = pi.grid().control.weights();
    for (std::size_t i = 0; i < pi.states(); ++i)
        for (std::size_t k = 0; k < pi.controls(); ++k)
            if (w[k] > 0.0 && !(pi(i, k) > 0.0))
                throw DomainError("policy must be strictly positive (node " + std::to_string(i) + ")");
}

}  // namespace

Eigen::MatrixXd reward_table(const ProblemSpec& spec, const GridPair& grid) {
    const auto n = static_cast<Eigen::Index>(grid.state.size());
    const auto m = static_cast<Eigen::Index>(grid.control.size());
    Eigen::MatrixXd r(n, m);
    for (Eigen::Index i = 0; i < n; ++i) {
        const State x = grid.state.point(static_cast<std::size_t>(i));
        for (Eigen::Index k = 0; k < m; ++k) r(i, k) = spec.reward(x, grid.control.node(static_cast<std::size_t>(k)));
    }
    return r;
}

SoftQ soft_q(const ProblemSpec& spec, const SolveParams& params, const TransitionKernel& kernel,
             const ScalarField& W) {
    check_inputs(params, kernel);
    if (!(W.grid() == kernel.grid().state)) throw DimensionError("field and kernel grids differ");
    SoftQ q;
    fill_q(reward_table(spec, kernel.grid()), kernel, params.step_h, params.discount_gamma, W.values(), q.values);
    return q;
}

ScalarField soft_bellman(const ProblemSpec& spec, const SolveParams& params,
                         const TransitionKernel& kernel, const ScalarField& W) {
    const SoftQ q = soft_q(spec, params, kernel, W);
    std::vector<double> out(W.size());
    log_sum_exp_rows(q.values, kernel.grid().control.weights(), params.temperature * params.step_h, out);
    return ScalarField(W.grid(), std::move(out));
}

FixedPointResult solve_vh(const ProblemSpec& spec, const SolveParams& params,
                          const TransitionKernel& kernel) {
    check_inputs(params, kernel);
    const double gamma = params.discount_gamma;
    const double h = params.step_h;
    const double temp = params.temperature * h;
    const double stop = params.fixed_point_tol * (1.0 - gamma) / gamma;
    const Eigen::MatrixXd rewards = reward_table(spec, kernel.grid());
    const auto weights = kernel.grid().control.weights();
    const std::size_t n = kernel.states();

    std::vector<double> w(n, 0.0);
    std::vector<double> next(n, 0.0);
    Eigen::MatrixXd q;
    double increment = 0.0;
    for (std::size_t it = 1; it <= params.max_iterations; ++it) {
        fill_q(rewards, kernel, h, gamma, w, q);
        log_sum_exp_rows(q, weights, temp, next);
        increment = max_abs_diff(next, w);
        std::swap(w, next);
        if (increment <= stop) {
            fill_q(rewards, kernel, h, gamma, w, q);
            log_sum_exp_rows(q, weights, temp, next);
            const double residual = max_abs_diff(next, w);
            return {ScalarField(kernel.grid().state, std::move(w)), it, increment, residual};
        }
    }
    throw ConvergenceError("soft value iteration hit the iteration cap", increment);
}

GibbsPolicy gibbs_policy(const ProblemSpec& spec, const SolveParams& params,
                         const TransitionKernel& kernel, const ScalarField& V) {
    const SoftQ q = soft_q(spec, params, kernel, V);
    const double temp = params.temperature * params.step_h;
    const auto weights = kernel.grid().control.weights();
    const auto n = q.values.rows();
    const auto m = q.values.cols();
    std::vector<double> density(static_cast<std::size_t>(n * m));
    std::vector<double> log_z(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const double top = q.values.row(i).maxCoeff();
        double s = 0.0;
        for (Eigen::Index k = 0; k < m; ++k) {
            const double e = std::exp((q.values(i, k) - top) / temp);
            density[static_cast<std::size_t>(i * m + k)] = e;
            s += weights[static_cast<std::size_t>(k)] * e;
        }
        for (Eigen::Index k = 0; k < m; ++k) density[static_cast<std::size_t>(i * m + k)] /= s;
        log_z[static_cast<std::size_t>(i)] = top / temp + std::log(s);
    }
    return {PolicyField(kernel.grid(), std::move(density)),
            ScalarField(kernel.grid().state, std::move(log_z))};
}

namespace {

// Per-node constant part sum_k w pi (r h - lambda h ln pi) and the
// policy-mixed kernel sum_k diag(w_k pi_k) K_k.
struct PolicyOperator {
    std::vector<double> running;
    Eigen::MatrixXd mixed;
};

PolicyOperator make_policy_operator(const ProblemSpec& spec, const SolveParams& params,
                                    const TransitionKernel& kernel, const PolicyField& pi) {
    if (!(pi.grid() == kernel.grid())) throw DimensionError("policy and kernel grids differ");
    check_policy_positive(pi);
    const Eigen::MatrixXd rewards = reward_table(spec, kernel.grid());
    const auto weights = kernel.grid().control.weights();
    const double h = params.step_h;
    const double temp = params.temperature * h;
    const std::size_t n = kernel.states();
    const std::size_t m = kernel.controls();
    PolicyOperator op;
    op.running.assign(n, 0.0);
    op.mixed = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    Eigen::VectorXd mass(static_cast<Eigen::Index>(n));
    for (std::size_t k = 0; k < m; ++k) {
        for (std::size_t i = 0; i < n; ++i) {
            const double p = pi(i, k);
            const double wp = weights[k] * p;
            mass(static_cast<Eigen::Index>(i)) = wp;
            if (wp > 0.0)
                op.running[i] += wp * (rewards(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) * h -
                                       temp * std::log(p));
        }
        op.mixed.noalias() += mass.asDiagonal() * kernel.matrix(k);
    }
    return op;
}

}  // namespace

ScalarField policy_bellman(const ProblemSpec& spec, const SolveParams& params,
                           const TransitionKernel& kernel, const PolicyField& pi, const ScalarField& W) {
    check_inputs(params, kernel);
    if (!(W.grid() == kernel.grid().state)) throw DimensionError("field and kernel grids differ");
    check_policy_positive(pi);
    const Eigen::MatrixXd rewards = reward_table(spec, kernel.grid());
    const Eigen::MatrixXd next = expect_all(kernel, W.values());
    const auto weights = kernel.grid().control.weights();
    const double h = params.step_h;
    const double temp = params.temperature * h;
    std::vector<double> out(W.size(), 0.0);
    for (std::size_t i = 0; i < W.size(); ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < pi.controls(); ++k) {
            const double p = pi(i, k);
            if (weights[k] <= 0.0 || p <= 0.0) continue;
            const auto ii = static_cast<Eigen::Index>(i);
            const auto kk = static_cast<Eigen::Index>(k);
            acc += weights[k] * p *
                   (rewards(ii, kk) * h - temp * std::log(p) + params.discount_gamma * next(ii, kk));
        }
        out[i] = acc;
    }
    return ScalarField(W.grid(), std::move(out));
}

FixedPointResult evaluate_policy_discrete(const ProblemSpec& spec, const SolveParams& params,
                                          const TransitionKernel& kernel, const PolicyField& pi) {
    check_inputs(params, kernel);
    const PolicyOperator op = make_policy_operator(spec, params, kernel, pi);
    const double gamma = params.discount_gamma;
    const double stop = params.fixed_point_tol * (1.0 - gamma) / gamma;
    const auto n = static_cast<Eigen::Index>(kernel.states());
    const Eigen::Map<const Eigen::VectorXd> running(op.running.data(), n);
    Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd next(n);
    double increment = 0.0;
    for (std::size_t it = 1; it <= params.max_iterations; ++it) {
        next.noalias() = op.mixed * w;
        next = running + gamma * next;
        increment = (next - w).cwiseAbs().maxCoeff();
        w.swap(next);
        if (increment <= stop) {
            next.noalias() = op.mixed * w;
            next = running + gamma * next;
            const double residual = (next - w).cwiseAbs().maxCoeff();
            return {ScalarField(kernel.grid().state, std::vector<double>(w.data(), w.data() + n)), it,
                    increment, residual};
        }
    }
    throw ConvergenceError("policy evaluation hit the iteration cap", increment);
}

double policy_log_lipschitz(const PolicyField& pi) {
    const StateGrid& grid = pi.grid().state;
    check_policy_positive(pi);
    double best = 0.0;
    for (std::size_t i = 0; i < pi.states(); ++i) {
        for (int a = 0; a < grid.dim(); ++a) {
            const std::size_t j = grid.neighbor(i, a, +1);
            if (j == StateGrid::npos) continue;
            const double dx = grid.spacing(a);
            for (std::size_t k = 0; k < pi.controls(); ++k)
                best = std::max(best, std::abs(std::log(pi(j, k)) - std::log(pi(i, k))) / dx);
        }
    }
    return best;
}

}  // namespace softctl
