#include "softctl/hjb.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/SparseLU>

#include "softctl/error.hpp"
#include "softctl/mdp.hpp"

namespace softctl {

namespace {

double default_tol(const ProblemSpec& spec, const GridPair& grid, const HjbOptions& options) {
    if (options.tol) return *options.tol;
    return 1e-8 * std::max(1.0, reward_sup(spec, grid) / spec.discount_beta);
}

void require_uncontrolled(const ProblemSpec& spec) {
    if (spec.has_controlled_diffusion())
        throw ModeError("this solver needs control-independent diffusion");
    if (spec.topology != Topology::torus) throw ModeError("this solver needs a periodic state domain");
}

// Per-control advection rates, the shared diffusion rates and the reward table.
struct ControlledChain {
    std::vector<JumpRates> advection;
    JumpRates diffusion;
    Eigen::MatrixXd rewards;
};

ControlledChain make_chain(const ProblemSpec& spec, const GridPair& grid) {
    ControlledChain chain{{}, jump_rates(spec, grid.state, grid.control.node(0), GeneratorPart::diffusion),
                          reward_table(spec, grid)};
    chain.advection.reserve(grid.control.size());
    for (std::size_t k = 0; k < grid.control.size(); ++k)
        chain.advection.push_back(jump_rates(spec, grid.state, grid.control.node(k), GeneratorPart::advection));
    return chain;
}

// (r_k + A_k V) for every control, n x m.
Eigen::MatrixXd drift_hamiltonian_terms(const ControlledChain& chain, std::span<const double> v) {
    const std::size_t n = v.size();
    const std::size_t m = chain.advection.size();
    Eigen::MatrixXd out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
    std::vector<double> buf(n);
    for (std::size_t k = 0; k < m; ++k) {
        chain.advection[k].apply(v, buf);
        for (std::size_t i = 0; i < n; ++i)
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
                chain.rewards(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) + buf[i];
    }
    return out;
}

std::vector<double> exploratory_residual(const ControlledChain& chain, const GridPair& grid, double beta,
                                         double lambda, std::span<const double> v) {
    const Eigen::MatrixXd terms = drift_hamiltonian_terms(chain, v);
    const auto w = grid.control.weights();
    std::vector<double> diff(v.size());
    chain.diffusion.apply(v, diff);
    std::vector<double> res(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const double top = terms.row(ii).maxCoeff();
        double s = 0.0;
        for (Eigen::Index k = 0; k < terms.cols(); ++k)
            s += w[static_cast<std::size_t>(k)] * std::exp((terms(ii, k) - top) / lambda);
        res[i] = -beta * v[i] + top + lambda * std::log(s) + diff[i];
    }
    return res;
}

std::vector<double> gibbs_rows(const Eigen::MatrixXd& terms, std::span<const double> w, double lambda) {
    const auto n = terms.rows();
    const auto m = terms.cols();
    std::vector<double> out(static_cast<std::size_t>(n * m));
    for (Eigen::Index i = 0; i < n; ++i) {
        const double top = terms.row(i).maxCoeff();
        double s = 0.0;
        for (Eigen::Index k = 0; k < m; ++k) {
            const double e = std::exp((terms(i, k) - top) / lambda);
            out[static_cast<std::size_t>(i * m + k)] = e;
            s += w[static_cast<std::size_t>(k)] * e;
        }
        for (Eigen::Index k = 0; k < m; ++k) out[static_cast<std::size_t>(i * m + k)] /= s;
    }
    return out;
}

// Generator of the relaxed chain: diffusion + sum_k w_k pi_k A_k.
JumpRates mixed_rates(const ControlledChain& chain, const PolicyField& pi) {
    JumpRates rates = chain.diffusion;
    const auto w = pi.grid().control.weights();
    std::vector<double> node_weights(pi.states());
    for (std::size_t k = 0; k < pi.controls(); ++k) {
        for (std::size_t i = 0; i < pi.states(); ++i) node_weights[i] = w[k] * pi(i, k);
        rates.accumulate(chain.advection[k], node_weights);
    }
    return rates;
}

std::vector<double> policy_source(const ControlledChain& chain, const PolicyField& pi, double lambda,
                                  bool with_entropy) {
    const auto w = pi.grid().control.weights();
    std::vector<double> src(pi.states(), 0.0);
    for (std::size_t i = 0; i < pi.states(); ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < pi.controls(); ++k) {
            const double p = pi(i, k);
            if (p <= 0.0) continue;
            acc += w[k] * p * chain.rewards(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
            if (with_entropy) acc -= lambda * w[k] * p * std::log(p);
        }
        src[i] = acc;
    }
    return src;
}

double sup_abs(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

std::string history_text(const std::vector<double>& hist) {
    // first 5 and last 5 entries of long histories
    std::ostringstream os;
    for (std::size_t i = 0; i < hist.size(); ++i) {
        if (hist.size() > 12 && i == 5) {
            os << ", ... (" << hist.size() - 10 << " more)";
            i = hist.size() - 6;
            continue;
        }
        os << (i ? ", " : "") << format_double(hist[i]);
    }
    return os.str();
}

}  // namespace

ScalarField solve_elliptic(const EllipticProblem& problem) {
    const auto n = static_cast<Eigen::Index>(problem.grid.size());
    if (problem.generator.rows() != n || static_cast<Eigen::Index>(problem.source.size()) != n)
        throw DimensionError("elliptic problem shapes disagree");
    if (!(problem.beta > 0.0)) throw ParameterError("zeroth-order coefficient beta must be positive");
    Eigen::SparseMatrix<double> system(n, n);
    system.setIdentity();
    system *= problem.beta;
    system -= Eigen::SparseMatrix<double>(problem.generator);
    system.makeCompressed();
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(system);
    if (lu.info() != Eigen::Success) throw ConvergenceError("singular elliptic system", 0.0);
    const Eigen::Map<const Eigen::VectorXd> rhs(problem.source.data(), n);
    const Eigen::VectorXd v = lu.solve(rhs);
    if (lu.info() != Eigen::Success) throw ConvergenceError("elliptic solve failed", 0.0);
    return ScalarField(problem.grid, std::vector<double>(v.data(), v.data() + n));
}

ExploratorySolution solve_exploratory_hjb(const ProblemSpec& spec, double lambda, const GridPair& grid,
                                          const HjbOptions& options) {
    if (!(lambda > 0.0)) throw ParameterError("temperature lambda must be positive");
    require_uncontrolled(spec);
    const double tol = default_tol(spec, grid, options);
    const ControlledChain chain = make_chain(spec, grid);
    const auto w = grid.control.weights();
    const double beta = spec.discount_beta;

    // Start from the Gibbs policy of V = 0.
    PolicyField pi(grid, gibbs_rows(drift_hamiltonian_terms(chain, std::vector<double>(grid.state.size(), 0.0)),
                                    w, lambda));
    double theta = std::clamp(options.damping, 1e-6, 1.0);
    std::vector<double> history;
    for (std::size_t it = 1; it <= options.max_iterations; ++it) {
        const EllipticProblem problem{grid.state, mixed_rates(chain, pi).generator(), beta,
                                      policy_source(chain, pi, lambda, true)};
        ScalarField value = solve_elliptic(problem);
        const double res = sup_abs(exploratory_residual(chain, grid, beta, lambda, value.values()));
        if (!history.empty() && res > history.back()) theta = std::max(0.5 * theta, 1e-6);
        history.push_back(res);
        if (res <= tol) return {std::move(value), std::move(pi), it, std::move(history)};

        std::vector<double> next = gibbs_rows(drift_hamiltonian_terms(chain, value.values()), w, lambda);
        if (theta < 1.0) {
            const auto cur = pi.values();
            for (std::size_t j = 0; j < next.size(); ++j) next[j] = (1.0 - theta) * cur[j] + theta * next[j];
        }
        pi = PolicyField::normalized(grid, std::move(next));
    }
    throw ConvergenceError("exploratory HJB did not reach tolerance; residual history: " + history_text(history),
                           history.empty() ? 0.0 : history.back());
}

ScalarField hjb_residual(const ProblemSpec& spec, double lambda, const GridPair& grid, const ScalarField& V) {
    if (!(lambda > 0.0)) throw ParameterError("temperature lambda must be positive");
    require_uncontrolled(spec);
    if (!(V.grid() == grid.state)) throw DimensionError("field and grid differ");
    const ControlledChain chain = make_chain(spec, grid);
    return ScalarField(grid.state, exploratory_residual(chain, grid, spec.discount_beta, lambda, V.values()));
}

ScalarField evaluate_policy_continuous(const ProblemSpec& spec, double lambda, const GridPair& grid,
                                       const PolicyField& pi, bool with_entropy) {
    if (with_entropy && !(lambda > 0.0)) throw ParameterError("temperature lambda must be positive");
    require_uncontrolled(spec);
    if (!(pi.grid() == grid)) throw DimensionError("policy and grid differ");
    if (with_entropy) {
        const auto w = grid.control.weights();
        for (std::size_t i = 0; i < pi.states(); ++i)
            for (std::size_t k = 0; k < pi.controls(); ++k)
                if (w[k] > 0.0 && !(pi(i, k) > 0.0))
                    throw DomainError("entropy of a policy with zero density at node " + std::to_string(i));
    }
    const ControlledChain chain = make_chain(spec, grid);
    const EllipticProblem problem{grid.state, mixed_rates(chain, pi).generator(), spec.discount_beta,
                                  policy_source(chain, pi, lambda, with_entropy)};
    return solve_elliptic(problem);
}

namespace {

// Full generator rates for every control node; diffusion may depend on u.
std::vector<JumpRates> full_rates(const ProblemSpec& spec, const GridPair& grid) {
    std::vector<JumpRates> out;
    out.reserve(grid.control.size());
    for (std::size_t k = 0; k < grid.control.size(); ++k)
        out.push_back(jump_rates(spec, grid.state, grid.control.node(k), GeneratorPart::full));
    return out;
}

std::vector<std::size_t> argmax_rows(const Eigen::MatrixXd& q) {
    std::vector<std::size_t> idx(static_cast<std::size_t>(q.rows()), 0);
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
        const double top = q.row(i).maxCoeff();
        const double slack = 1e-12 * (1.0 + std::abs(top));
        for (Eigen::Index k = 0; k < q.cols(); ++k) {
            if (q(i, k) >= top - slack) {
                idx[static_cast<std::size_t>(i)] = static_cast<std::size_t>(k);
                break;
            }
        }
    }
    return idx;
}

ClassicalSolution classical_from_reference(const ProblemSpec& spec, const GridPair& grid) {
    ScalarField v = ScalarField::sample(grid.state, spec.reference_value);
    const GradientField grad = gradient(v);
    const auto n = static_cast<Eigen::Index>(grid.state.size());
    const auto m = static_cast<Eigen::Index>(grid.control.size());
    Eigen::MatrixXd q(n, m);
    for (Eigen::Index i = 0; i < n; ++i) {
        const State x = grid.state.point(static_cast<std::size_t>(i));
        for (Eigen::Index k = 0; k < m; ++k) {
            const double u = grid.control.node(static_cast<std::size_t>(k));
            q(i, k) = spec.reward(x, u) + spec.drift(x, u)[0] * grad.components[0][static_cast<std::size_t>(i)];
        }
    }
    ClassicalSolution sol{std::move(v), {}, argmax_rows(q), 0};
    for (std::size_t idx : sol.feedback_index) sol.feedback.push_back(grid.control.node(idx));
    return sol;
}

}  // namespace

ClassicalSolution solve_classical_hjb(const ProblemSpec& spec, const GridPair& grid, const HjbOptions& options) {
    if (spec.mode == ProblemMode::deterministic) {
        if (!spec.reference_value)
            throw ModeError("deterministic problems are solved only through their closed form");
        return classical_from_reference(spec, grid);
    }
    if (spec.topology != Topology::torus) throw ModeError("classical solver needs a periodic state domain");
    const std::vector<JumpRates> rates = full_rates(spec, grid);
    const Eigen::MatrixXd rewards = reward_table(spec, grid);
    const std::size_t n = grid.state.size();
    const std::size_t m = grid.control.size();

    auto q_values = [&](std::span<const double> v) {
        Eigen::MatrixXd q(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
        std::vector<double> buf(n);
        for (std::size_t k = 0; k < m; ++k) {
            rates[k].apply(v, buf);
            for (std::size_t i = 0; i < n; ++i) {
                const auto ii = static_cast<Eigen::Index>(i);
                const auto kk = static_cast<Eigen::Index>(k);
                q(ii, kk) = rewards(ii, kk) + buf[i];
            }
        }
        return q;
    };

    std::vector<std::size_t> policy = argmax_rows(rewards);
    for (std::size_t it = 1; it <= options.max_iterations; ++it) {
        JumpRates mixed = JumpRates::zero(grid.state);
        std::vector<double> indicator(n);
        std::vector<double> source(n);
        for (std::size_t k = 0; k < m; ++k) {
            for (std::size_t i = 0; i < n; ++i) indicator[i] = policy[i] == k ? 1.0 : 0.0;
            mixed.accumulate(rates[k], indicator);
        }
        for (std::size_t i = 0; i < n; ++i)
            source[i] = rewards(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(policy[i]));
        ScalarField v = solve_elliptic({grid.state, mixed.generator(), spec.discount_beta, std::move(source)});
        std::vector<std::size_t> next = argmax_rows(q_values(v.values()));
        // Keep the current action unless another one is strictly better.
        const Eigen::MatrixXd q = q_values(v.values());
        for (std::size_t i = 0; i < n; ++i) {
            const auto ii = static_cast<Eigen::Index>(i);
            const double cur = q(ii, static_cast<Eigen::Index>(policy[i]));
            const double best = q(ii, static_cast<Eigen::Index>(next[i]));
            if (best <= cur + 1e-12 * (1.0 + std::abs(cur))) next[i] = policy[i];
        }
        if (next == policy) {
            ClassicalSolution sol{std::move(v), {}, argmax_rows(q), it};
            for (std::size_t idx : sol.feedback_index) sol.feedback.push_back(grid.control.node(idx));
            return sol;
        }
        policy = std::move(next);
    }
    throw ConvergenceError("classical policy iteration did not settle", 0.0);
}

ScalarField classical_hjb_residual(const ProblemSpec& spec, const GridPair& grid, const ScalarField& v) {
    if (spec.dim != 1) throw DimensionError("classical residual is implemented for d = 1");
    if (!(v.grid() == grid.state)) throw DimensionError("field and grid differ");
    const StateGrid& sg = grid.state;
    const GradientField grad = gradient(v);
    const double dx = sg.spacing(0);
    const std::size_t n = sg.size();
    std::vector<double> res(n);
    for (std::size_t i = 0; i < n; ++i) {
        const State x = sg.point(i);
        const std::size_t up = sg.neighbor(i, 0, +1);
        const std::size_t down = sg.neighbor(i, 0, -1);
        double second = 0.0;
        if (up != StateGrid::npos && down != StateGrid::npos) {
            second = (v[up] - 2.0 * v[i] + v[down]) / (dx * dx);
        } else if (down == StateGrid::npos) {
            second = (2.0 * v[i] - 5.0 * v[i + 1] + 4.0 * v[i + 2] - v[i + 3]) / (dx * dx);
        } else {
            second = (2.0 * v[i] - 5.0 * v[i - 1] + 4.0 * v[i - 2] - v[i - 3]) / (dx * dx);
        }
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < grid.control.size(); ++k) {
            const double u = grid.control.node(k);
            const double sig = spec.covariance(x, u)[0][0];
            best = std::max(best, spec.reward(x, u) + spec.drift(x, u)[0] * grad.components[0][i] +
                                      0.5 * sig * second);
        }
        res[i] = -spec.discount_beta * v[i] + best;
    }
    return ScalarField(sg, std::move(res));
}

ResidualScaling reference_residual_scaling(const ProblemSpec& spec, std::size_t coarse_nodes,
                                           std::size_t fine_nodes, std::size_t control_nodes) {
    if (spec.mode != ProblemMode::deterministic || !spec.reference_value)
        throw ModeError("residual scaling needs a deterministic problem with a closed-form value");
    const auto h_it = spec.parameters.find("h");
    const auto n_it = spec.parameters.find("n");
    if (h_it == spec.parameters.end() || n_it == spec.parameters.end())
        throw ParameterError("problem lacks the h and n parameters");
    const double h = h_it->second;
    const double n = n_it->second;
    constexpr double two_pi = 6.283185307179586;
    // |v'''| <= (2 pi / h)^3 h^n; the central first difference errs by |v'''| dx^2 / 6.
    ResidualScaling out;
    out.bound_constant = 10.0 * std::pow(two_pi, 3) * std::pow(h, n - 3.0) / 6.0;
    out.nodes = {coarse_nodes, fine_nodes};
    out.pass = true;
    for (std::size_t g = 0; g < 2; ++g) {
        const GridPair grid = GridPair::for_problem(spec, out.nodes[g], control_nodes);
        const ScalarField v = ScalarField::sample(grid.state, spec.reference_value);
        out.dx[g] = grid.state.spacing(0);
        out.residual[g] = sup_norm(classical_hjb_residual(spec, grid, v));
        out.scaled[g] = out.residual[g] / (out.dx[g] * out.dx[g]);
        out.pass = out.pass && out.scaled[g] <= out.bound_constant;
    }
    return out;
}

// ------------------------------------------------------------- temperature

double log_integral_exp(double q, double lower, double upper) {
    const double len = upper - lower;
    const double ql = q * len;
    if (std::abs(ql) < 1e-8) return std::log(len) + 0.5 * q * (lower + upper);
    if (q > 0.0) return q * upper + std::log(-std::expm1(-ql) / q);
    return q * lower + std::log(std::expm1(ql) / q);
}

double mean_exp_density(double q, double lower, double upper) {
    const double len = upper - lower;
    const double ql = q * len;
    if (std::abs(ql) < 1e-4) return 0.5 * (lower + upper) + q * len * len / 12.0;
    if (q > 0.0) {
        const double e = std::exp(-ql);
        return (upper - lower * e) / (1.0 - e) - 1.0 / q;
    }
    const double e = std::exp(ql);
    return (upper * e - lower) / (e - 1.0) - 1.0 / q;
}

TemperatureExploratory solve_temperature_exploratory(const ProblemSpec& spec, double lambda,
                                                     const StateGrid& grid, const HjbOptions& options) {
    if (!(lambda > 0.0)) throw ParameterError("temperature lambda must be positive");
    if (!spec.has_controlled_diffusion() || spec.dim != 1)
        throw ModeError("closed-form exploratory solve applies to 1-D controlled-diffusion problems");
    if (!grid.periodic()) throw ModeError("exploratory solve needs a periodic state domain");
    const double lo = spec.control_set.lower;
    const double hi = spec.control_set.upper;
    const std::size_t n = grid.size();
    const double dx = grid.spacing(0);
    // Sigma(x, u) = s(x) u is linear in u for sqrt(2u) diffusion; measure the slope at u = 1.
    std::vector<double> diff_slope(n);
    std::vector<double> reward(n);
    for (std::size_t i = 0; i < n; ++i) {
        const State x = grid.point(i);
        diff_slope[i] = 0.5 * spec.covariance(x, 1.0)[0][0];
        reward[i] = spec.reward(x, lo);
    }
    const JumpRates advection = jump_rates(spec, grid, lo, GeneratorPart::advection);
    const GridPair pair{grid, ControlGrid(lo, hi, 2)};
    const double tol = default_tol(spec, pair, options);

    auto second_difference = [&](std::span<const double> v, std::size_t i) {
        return (v[grid.neighbor(i, 0, +1)] - 2.0 * v[i] + v[grid.neighbor(i, 0, -1)]) / (dx * dx);
    };
    auto residual = [&](std::span<const double> v) {
        std::vector<double> adv(n);
        advection.apply(v, adv);
        std::vector<double> res(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double q = diff_slope[i] * second_difference(v, i) / lambda;
            res[i] = -spec.discount_beta * v[i] + reward[i] + adv[i] + lambda * log_integral_exp(q, lo, hi);
        }
        return res;
    };

    TemperatureExploratory out{ScalarField::constant(grid, 0.0), std::vector<double>(n, 0.0), {}, 0, {}};
    double theta = std::clamp(options.damping, 1e-6, 1.0);
    for (std::size_t it = 1; it <= options.max_iterations; ++it) {
        // Linear step for the current exponential policy rates.
        JumpRates rates = advection;
        std::vector<double> source(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double q = out.policy_rate[i];
            const double mean = mean_exp_density(q, lo, hi);
            const double d = diff_slope[i] * mean / (dx * dx);
            rates.up[0][i] += d;
            rates.down[0][i] += d;
            // -int pi ln pi = ln Z(q) - q E[u]
            source[i] = reward[i] + lambda * (log_integral_exp(q, lo, hi) - q * mean);
        }
        out.value = solve_elliptic({grid, rates.generator(), spec.discount_beta, std::move(source)});
        const double res = sup_abs(residual(out.value.values()));
        if (!out.residual_history.empty() && res > out.residual_history.back()) theta = std::max(0.5 * theta, 1e-6);
        out.residual_history.push_back(res);
        out.iterations = it;
        if (res <= tol) {
            out.policy_mean.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                out.policy_rate[i] = diff_slope[i] * second_difference(out.value.values(), i) / lambda;
                out.policy_mean[i] = mean_exp_density(out.policy_rate[i], lo, hi);
            }
            return out;
        }
        for (std::size_t i = 0; i < n; ++i) {
            const double target = diff_slope[i] * second_difference(out.value.values(), i) / lambda;
            out.policy_rate[i] = (1.0 - theta) * out.policy_rate[i] + theta * target;
        }
    }
    throw ConvergenceError("temperature exploratory HJB did not reach tolerance; residual history: " +
                               history_text(out.residual_history),
                           out.residual_history.empty() ? 0.0 : out.residual_history.back());
}

}  // namespace softctl
