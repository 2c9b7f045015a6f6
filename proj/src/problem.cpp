#include "softctl/problem.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "softctl/error.hpp"
#include "softctl/grid.hpp"

namespace softctl {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double wrap_coordinate(double x, double lower, double length) {
    double s = std::fmod(x - lower, length);
    if (s < 0.0) s += length;
    if (s >= length) s -= length;
    return lower + s;
}

Mat2 outer(const Mat2& s, int dim) {
    Mat2 out{};
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j)
            for (int k = 0; k < dim; ++k) out[i][j] += s[i][k] * s[j][k];
    return out;
}

double min_eigenvalue(const Mat2& m, int dim) {
    if (dim == 1) return m[0][0];
    const double mean = 0.5 * (m[0][0] + m[1][1]);
    const double half = 0.5 * (m[0][0] - m[1][1]);
    const double off = 0.5 * (m[0][1] + m[1][0]);
    return mean - std::hypot(half, off);
}

double operator_norm(const Mat2& m, int dim) {
    if (dim == 1) return std::abs(m[0][0]);
    Mat2 mtm{};
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            for (int k = 0; k < 2; ++k) mtm[i][j] += m[k][i] * m[k][j];
    const double mean = 0.5 * (mtm[0][0] + mtm[1][1]);
    const double half = 0.5 * (mtm[0][0] - mtm[1][1]);
    return std::sqrt(std::max(0.0, mean + std::hypot(half, mtm[0][1])));
}

double matrix_diff_norm(const Mat2& a, const Mat2& b, int dim) {
    Mat2 d{};
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) d[i][j] = a[i][j] - b[i][j];
    return operator_norm(d, dim);
}

double vector_norm(const State& v, int dim) {
    return dim == 1 ? std::abs(v[0]) : std::hypot(v[0], v[1]);
}

double vector_diff_norm(const State& a, const State& b, int dim) {
    return vector_norm(State{a[0] - b[0], a[1] - b[1]}, dim);
}

Mat2 scalar_matrix(double s) { return Mat2{{{s, 0.0}, {0.0, s}}}; }

double take(Overrides& params, const std::string& key, double fallback) {
    auto it = params.find(key);
    if (it == params.end()) return fallback;
    const double v = it->second;
    params.erase(it);
    return v;
}

void reject_leftovers(const std::string& name, const Overrides& leftover) {
    if (leftover.empty()) return;
    std::ostringstream os;
    os << "unknown parameter(s) for problem '" << name << "':";
    for (const auto& [k, v] : leftover) os << ' ' << k;
    throw ParameterError(os.str());
}

ProblemSpec make_lq1d(Overrides params) {
    ProblemSpec spec;
    spec.name = "lq1d";
    const double beta = take(params, "beta", 3.0);
    const double period = take(params, "period", 8.0);
    const double sigma = take(params, "sigma", std::sqrt(2.0));
    const double u_min = take(params, "u_min", -1.0);
    const double u_max = take(params, "u_max", 1.0);
    const double q = take(params, "state_weight", 1.0);
    const double c = take(params, "control_weight", 1.0);
    reject_leftovers(spec.name, params);
    if (!(period > 0.0)) throw ParameterError("lq1d: period must be positive");

    spec.dim = 1;
    spec.domain[0] = AxisDomain{-0.5 * period, period};
    spec.topology = Topology::torus;
    spec.control_set = ControlBox{u_min, u_max};
    spec.discount_beta = beta;
    spec.drift = [](const State&, double u) { return State{u, 0.0}; };
    spec.diffusion = [sigma](const State&) { return scalar_matrix(sigma); };
    const double lower = -0.5 * period;
    spec.reward = [=](const State& x, double u) {
        const double y = wrap_coordinate(x[0], lower, period);
        return -q * y * y - c * u * u;
    };
    spec.parameters = {{"beta", beta},       {"period", period},    {"sigma", sigma},
                       {"u_min", u_min},     {"u_max", u_max},      {"state_weight", q},
                       {"control_weight", c}};
    return spec;
}

ProblemSpec make_advective1d(Overrides params) {
    ProblemSpec spec;
    spec.name = "advective1d";
    const double beta = take(params, "beta", 3.0);
    const double period = take(params, "period", 4.0);
    const double sigma = take(params, "sigma", std::sqrt(2.0));
    const double advection = take(params, "advection", 0.5);
    const double u_min = take(params, "u_min", -1.0);
    const double u_max = take(params, "u_max", 1.0);
    const double c = take(params, "control_weight", 1.0);
    reject_leftovers(spec.name, params);
    if (!(period > 0.0)) throw ParameterError("advective1d: period must be positive");

    spec.dim = 1;
    spec.domain[0] = AxisDomain{0.0, period};
    spec.control_set = ControlBox{u_min, u_max};
    spec.discount_beta = beta;
    const double k = kTwoPi / period;
    spec.drift = [=](const State& x, double u) {
        return State{u + advection * std::sin(k * x[0]), 0.0};
    };
    spec.diffusion = [sigma](const State&) { return scalar_matrix(sigma); };
    spec.reward = [=](const State& x, double u) { return std::cos(k * x[0]) - c * u * u; };
    spec.parameters = {{"beta", beta},   {"period", period}, {"sigma", sigma},
                       {"advection", advection}, {"u_min", u_min}, {"u_max", u_max},
                       {"control_weight", c}};
    return spec;
}

// Temperature control: maximize -f with dX = -f'(X) dt + sqrt(2u) dB, u in [a, 1].
ProblemSpec make_temperature(Overrides params) {
    ProblemSpec spec;
    spec.name = "temperature";
    const double a = take(params, "a", 0.5);
    const double beta = take(params, "beta", 1.0);
    const double period = take(params, "period", kTwoPi);
    reject_leftovers(spec.name, params);
    if (!(a > 0.0 && a < 1.0)) throw ParameterError("temperature: a must lie in (0, 1)");

    spec.dim = 1;
    spec.domain[0] = AxisDomain{0.0, period};
    spec.control_set = ControlBox{a, 1.0};
    spec.discount_beta = beta;
    spec.mode = ProblemMode::classical_only;
    const double k = kTwoPi / period;
    // f(x) = 1 - cos(kx); b = -f'(x).
    spec.drift = [k](const State& x, double) { return State{-k * std::sin(k * x[0]), 0.0}; };
    spec.controlled_diffusion = [](const State&, double u) {
        return scalar_matrix(std::sqrt(2.0 * u));
    };
    spec.reward = [k](const State& x, double) { return -(1.0 - std::cos(k * x[0])); };
    spec.parameters = {{"a", a}, {"beta", beta}, {"period", period}};
    return spec;
}

ProblemSpec make_instability(Overrides params) {
    ProblemSpec spec;
    spec.name = "instability";
    const double beta = take(params, "beta", 1.0);
    const double gamma = take(params, "gamma", 1.0);
    const double n = take(params, "n", 2.0);
    const double h = take(params, "h", 0.1);
    const double lower = take(params, "window_lower", 0.0);
    const double length = take(params, "window_length", 1.0);
    reject_leftovers(spec.name, params);
    if (!(n >= 2.0)) throw ParameterError("instability: n must be >= 2");
    if (!(h > 0.0 && h < 1.0)) throw ParameterError("instability: h must lie in (0, 1)");

    spec.dim = 1;
    spec.domain[0] = AxisDomain{lower, length};
    spec.topology = Topology::window;
    spec.control_set = ControlBox{-1.0, 1.0};
    spec.discount_beta = beta;
    spec.mode = ProblemMode::deterministic;
    const double hn = std::pow(h, n);
    const double hn1 = std::pow(h, n - 1.0);
    spec.drift = [](const State&, double u) { return State{u, 0.0}; };
    spec.diffusion = [](const State&) { return Mat2{}; };
    spec.reward = [=](const State& x, double u) {
        const double phase = kTwoPi * x[0] / h;
        return beta * (gamma * x[0] + hn * std::sin(phase)) - gamma * u -
               kTwoPi * hn1 * std::abs(std::cos(phase));
    };
    spec.reference_value = [=](const State& x) {
        return gamma * x[0] + hn * std::sin(kTwoPi * x[0] / h);
    };
    spec.reference_feedback = [h](const State& x) {
        const double c = std::cos(kTwoPi * x[0] / h);
        return c > 0.0 ? 1.0 : (c < 0.0 ? -1.0 : 0.0);
    };
    spec.parameters = {{"beta", beta}, {"gamma", gamma}, {"n", n}, {"h", h},
                       {"window_lower", lower}, {"window_length", length}};
    return spec;
}

}  // namespace

Mat2 ProblemSpec::covariance(const State& x, double u) const {
    const Mat2 s = controlled_diffusion ? controlled_diffusion(x, u) : diffusion(x);
    return outer(s, dim);
}

State ProblemSpec::wrap(const State& x) const {
    if (topology != Topology::torus) return x;
    State out = x;
    for (int a = 0; a < dim; ++a) {
        const auto& d = domain[static_cast<std::size_t>(a)];
        out[static_cast<std::size_t>(a)] = wrap_coordinate(x[static_cast<std::size_t>(a)], d.lower, d.length);
    }
    return out;
}

std::vector<std::string> builtin_problem_names() {
    return {"lq1d", "advective1d", "temperature", "instability"};
}

ProblemSpec builtin_problem(const std::string& name, const Overrides& overrides) {
    if (name == "lq1d") return make_lq1d(overrides);
    if (name == "advective1d") return make_advective1d(overrides);
    if (name == "temperature") return make_temperature(overrides);
    if (name == "instability") return make_instability(overrides);
    std::ostringstream os;
    os << "unknown problem '" << name << "'; valid names:";
    for (const auto& n : builtin_problem_names()) os << ' ' << n;
    throw RegistryError(os.str());
}

// -------------------------------------------------------- AssumptionReport

bool AssumptionReport::h1() const {
    const auto* c = find("H1 compact control set");
    return c && c->pass;
}

bool AssumptionReport::h2() const {
    const auto* bounded = find("H2 bounded Lipschitz coefficients");
    const auto* elliptic = find("H2 uniform ellipticity");
    return bounded && bounded->pass && elliptic && elliptic->pass;
}

const AssumptionCheck* AssumptionReport::find(const std::string& name) const {
    for (const auto& c : checks)
        if (c.name == name) return &c;
    return nullptr;
}

AssumptionReport validate_assumptions(const ProblemSpec& spec, const GridPair& grid,
                                      std::optional<double> step_h) {
    const StateGrid& sg = grid.state;
    const ControlGrid& cg = grid.control;
    const int dim = spec.dim;
    for (int a = 0; a < sg.dim(); ++a) {
        if (!(sg.spacing(a) > 0.0)) throw ParameterError("grid spacing must be positive");
    }
    if (sg.dim() != dim) throw DimensionError("grid dimension differs from problem dimension");

    const std::size_t n = sg.size();
    const std::size_t m = cg.size();
    std::vector<State> drift(n * m);
    std::vector<Mat2> sigma(n * m);
    std::vector<Mat2> cov(n * m);
    std::vector<double> reward(n * m);

    auto where = [&](std::size_t i, std::size_t k) {
        const State x = sg.point(i);
        std::ostringstream os;
        os << "node " << i << " (x=" << format_double(x[0]);
        if (dim == 2) os << ", y=" << format_double(x[1]);
        os << ", u=" << format_double(cg.node(k)) << ")";
        return os.str();
    };

    for (std::size_t i = 0; i < n; ++i) {
        const State x = sg.point(i);
        for (std::size_t k = 0; k < m; ++k) {
            const double u = cg.node(k);
            const std::size_t idx = i * m + k;
            drift[idx] = spec.drift(x, u);
            sigma[idx] = spec.controlled_diffusion ? spec.controlled_diffusion(x, u) : spec.diffusion(x);
            cov[idx] = outer(sigma[idx], dim);
            reward[idx] = spec.reward(x, u);
            bool finite = std::isfinite(reward[idx]);
            for (int a = 0; a < dim; ++a) {
                finite = finite && std::isfinite(drift[idx][a]);
                for (int b = 0; b < dim; ++b) finite = finite && std::isfinite(sigma[idx][a][b]);
            }
            if (!finite)
                throw InvalidProblemError("non-finite coefficient at " + where(i, k));
        }
    }

    AssumptionReport rep;
    rep.lambda_min = std::numeric_limits<double>::infinity();
    for (std::size_t idx = 0; idx < n * m; ++idx) {
        rep.sup_drift = std::max(rep.sup_drift, vector_norm(drift[idx], dim));
        rep.sup_sigma = std::max(rep.sup_sigma, operator_norm(sigma[idx], dim));
        rep.sup_reward = std::max(rep.sup_reward, std::abs(reward[idx]));
        rep.lambda_min = std::min(rep.lambda_min, min_eigenvalue(cov[idx], dim));
    }

    // Difference quotients along each state axis (wrapped on the torus).
    for (std::size_t i = 0; i < n; ++i) {
        for (int a = 0; a < dim; ++a) {
            const std::size_t j = sg.neighbor(i, a, +1);
            if (j == StateGrid::npos) continue;
            const double dx = sg.spacing(a);
            for (std::size_t k = 0; k < m; ++k) {
                const std::size_t p = i * m + k;
                const std::size_t q = j * m + k;
                rep.grad_drift = std::max(rep.grad_drift, vector_diff_norm(drift[p], drift[q], dim) / dx);
                rep.grad_sigma = std::max(rep.grad_sigma, matrix_diff_norm(sigma[p], sigma[q], dim) / dx);
                rep.grad_covariance = std::max(rep.grad_covariance, matrix_diff_norm(cov[p], cov[q], dim) / dx);
                rep.lip_reward_state = std::max(rep.lip_reward_state, std::abs(reward[p] - reward[q]) / dx);
            }
        }
    }
    // Difference quotients along the control axis.
    double lip_drift_u = 0.0;
    double lip_sigma_u = 0.0;
    double lip_reward_u = 0.0;
    const double du = cg.spacing();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k + 1 < m; ++k) {
            const std::size_t p = i * m + k;
            lip_drift_u = std::max(lip_drift_u, vector_diff_norm(drift[p], drift[p + 1], dim) / du);
            lip_sigma_u = std::max(lip_sigma_u, matrix_diff_norm(sigma[p], sigma[p + 1], dim) / du);
            lip_reward_u = std::max(lip_reward_u, std::abs(reward[p] - reward[p + 1]) / du);
        }
    }
    rep.lip_drift = std::max(rep.grad_drift, lip_drift_u);
    rep.lip_sigma = std::max(rep.grad_sigma, lip_sigma_u);
    rep.lip_reward = std::max(rep.lip_reward_state, lip_reward_u);
    rep.m1 = std::max({rep.sup_drift, rep.sup_sigma, rep.lip_drift, rep.lip_sigma});
    rep.m2 = std::max(rep.sup_reward, rep.lip_reward);

    rep.a0 = rep.lambda_min > 0.0
                 ? 2.0 * rep.grad_drift + rep.grad_covariance * rep.grad_covariance / (4.0 * rep.lambda_min)
                 : std::numeric_limits<double>::infinity();
    rep.beta_condition = spec.discount_beta >= 1.0 + rep.a0;
    rep.mdp_supported = spec.mode == ProblemMode::full;
    if (step_h) rep.sigma_gradient_root_h = rep.grad_sigma * std::sqrt(*step_h);

    const double vol = spec.control_set.volume();
    rep.checks.push_back({"H1 compact control set", std::isfinite(vol) && vol > 0.0,
                          "|U| = " + format_double(vol)});
    rep.checks.push_back({"H2 bounded Lipschitz coefficients",
                          std::isfinite(rep.m1) && std::isfinite(rep.m2),
                          "M1 = " + format_double(rep.m1) + ", M2 = " + format_double(rep.m2)});
    rep.checks.push_back({"H2 uniform ellipticity", rep.lambda_min > 0.0,
                          "lambda_min = " + format_double(rep.lambda_min)});
    rep.checks.push_back({"diffusion control-independence", !spec.has_controlled_diffusion(),
                          spec.has_controlled_diffusion()
                              ? "diffusion control-dependence: unsupported for the regularized MDP pipeline"
                              : "sigma does not depend on u"});
    if (dim == 2) {
        double off = 0.0;
        for (const auto& c : cov) off = std::max(off, std::abs(c[0][1]));
        rep.checks.push_back({"diagonal covariance (d = 2)", off == 0.0,
                              "max |Sigma_12| = " + format_double(off)});
    }
    rep.checks.push_back({"beta >= 1 + A0", rep.beta_condition,
                          "beta = " + format_double(spec.discount_beta) + ", A0 = " + format_double(rep.a0)});
    if (rep.sigma_gradient_root_h) {
        rep.checks.push_back({"|grad sigma| h^1/2 (informational)", true,
                              format_double(*rep.sigma_gradient_root_h)});
    }
    // torus wrap of the kernel is accurate while L^2 / h stays large
    if (step_h && spec.topology == Topology::torus) {
        double ratio = std::numeric_limits<double>::infinity();
        for (int a = 0; a < spec.dim; ++a) {
            const double L = spec.domain[static_cast<std::size_t>(a)].length;
            ratio = std::min(ratio, L * L / *step_h);
        }
        rep.checks.push_back({"periodization L^2/h >= 50", ratio >= 50.0, "L^2/h = " + format_double(ratio)});
    }
    return rep;
}

// -------------------------------------------------------------- SolveParams

double reward_sup(const ProblemSpec& spec, const GridPair& grid) {
    double m = 0.0;
    for (std::size_t i = 0; i < grid.state.size(); ++i) {
        const State x = grid.state.point(i);
        for (std::size_t k = 0; k < grid.control.size(); ++k)
            m = std::max(m, std::abs(spec.reward(x, grid.control.node(k))));
    }
    return m;
}

SolveParams SolveParams::make(const ProblemSpec& spec, double h, double lambda,
                              std::size_t state_nodes, std::size_t control_nodes,
                              std::size_t fp_substeps) {
    SolveParams p;
    p.step_h = h;
    p.temperature = lambda;
    p.discount_gamma = std::exp(-spec.discount_beta * h);
    p.state_nodes = state_nodes;
    p.control_nodes = control_nodes;
    p.fp_substeps = fp_substeps;
    const GridPair grid = GridPair::for_problem(spec, state_nodes, control_nodes);
    p.fixed_point_tol = 1e-10 * std::max(1.0, reward_sup(spec, grid) / spec.discount_beta);
    p.validate();
    return p;
}

void SolveParams::validate() const {
    if (!(step_h > 0.0 && step_h < 1.0)) throw ParameterError("step h must lie in (0, 1)");
    if (!(temperature > 0.0)) throw ParameterError("temperature lambda must be positive");
    if (!(discount_gamma > 0.0 && discount_gamma < 1.0))
        throw ParameterError("discount gamma must lie in (0, 1)");
    if (state_nodes < 2 || control_nodes < 2) throw ParameterError("node counts must be >= 2");
    if (fp_substeps < 1) throw ParameterError("fp_substeps must be positive");
    if (!(fixed_point_tol > 0.0)) throw ParameterError("fixed_point_tol must be positive");
}

}  // namespace softctl
