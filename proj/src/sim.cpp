#include "softctl/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

#include "softctl/error.hpp"
#include "softctl/parallel.hpp"

namespace softctl {

namespace {

constexpr std::size_t kMaxDumpedPaths = 100;

std::mt19937_64 path_engine(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return std::mt19937_64(seq);
}

double pairwise_sum(std::span<const double> v) {
    if (v.size() <= 8) {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
    const std::size_t half = v.size() / 2;
    return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

// Trapezoidal integral of p ln p (0 ln 0 = 0).
double row_entropy(std::span<const double> row, std::span<const double> w) {
    double s = 0.0;
    for (std::size_t k = 0; k < row.size(); ++k)
        if (row[k] > 0.0) s += w[k] * row[k] * std::log(row[k]);
    return s;
}

void check_policy(const PolicyField& pi) {
    for (double p : pi.values())
        if (!(p >= 0.0)) throw DomainError("policy has a negative density; its CDF is not monotone");
}

double entropy_bound(const PolicyField& pi) {
    const auto w = pi.grid().control.weights();
    double m = 0.0;
    for (std::size_t i = 0; i < pi.states(); ++i) m = std::max(m, std::abs(row_entropy(pi.row(i), w)));
    return m;
}

double default_horizon(double scale, double beta, double tol, double step) {
    const double arg = scale / (beta * tol);
    if (!(arg > 1.0)) return step;
    return std::log(arg) / beta;
}

struct StochasticStep {
    const ProblemSpec& spec;
    int dim;

    // One Euler-Maruyama step with a given drift; z holds `dim` standard normals.
    State advance(const State& x, const State& drift, double dt, const State& z) const {
        const Mat2 s = spec.diffusion(x);
        const double root = std::sqrt(dt);
        State out = x;
        for (int a = 0; a < dim; ++a) {
            const auto aa = static_cast<std::size_t>(a);
            double noise = 0.0;
            for (int b = 0; b < dim; ++b) noise += s[aa][static_cast<std::size_t>(b)] * z[static_cast<std::size_t>(b)];
            out[aa] += drift[aa] * dt + noise * root;
        }
        return spec.wrap(out);
    }
};

struct Draws {
    std::mt19937_64 engine;
    std::normal_distribution<double> normal{0.0, 1.0};

    double uniform() { return std::generate_canonical<double, 53>(engine); }
    State normals(int dim) {
        State z{0.0, 0.0};
        for (int a = 0; a < dim; ++a) z[static_cast<std::size_t>(a)] = normal(engine);
        return z;
    }
};

State negate(State z) {
    z[0] = -z[0];
    z[1] = -z[1];
    return z;
}

void dump_header(std::ostream& os, int dim) {
    os << (dim == 2 ? "path_id,t,x,y,action,running_payoff\n" : "path_id,t,x,action,running_payoff\n");
}

void dump_row(std::ostream& os, std::size_t path, double t, const State& x, int dim, double action, double payoff) {
    os << path << ',' << format_double(t) << ',' << format_double(x[0]);
    if (dim == 2) os << ',' << format_double(x[1]);
    os << ',' << format_double(action) << ',' << format_double(payoff) << '\n';
}

// Runs `samples` independent work items (single paths or antithetic pairs)
// and reduces them deterministically.
template <typename Sample>
PathEstimate reduce_samples(const RolloutConfig& cfg, int dim, Sample&& sample) {
    if (cfg.paths == 0) throw ParameterError("rollout needs at least one path");
    const std::size_t per = cfg.antithetic ? 2 : 1;
    const std::size_t samples = (cfg.paths + per - 1) / per;
    std::vector<double> values(samples);
    const std::size_t dumped = cfg.path_dump ? std::min(kMaxDumpedPaths, samples * per) : 0;
    std::vector<std::string> dumps((dumped + per - 1) / per);
    parallel_for(samples, cfg.workers, [&](std::size_t s) {
        std::ostringstream os;
        const bool dump = s < dumps.size();
        values[s] = sample(s, dump ? &os : nullptr);
        if (dump) dumps[s] = os.str();
    });
    if (cfg.path_dump) {
        dump_header(*cfg.path_dump, dim);
        for (const auto& d : dumps) *cfg.path_dump << d;
    }
    PathEstimate est;
    est.paths_used = samples * per;
    est.mean = pairwise_sum(values) / static_cast<double>(samples);
    if (samples > 1) {
        std::vector<double> sq(samples);
        for (std::size_t s = 0; s < samples; ++s) sq[s] = (values[s] - est.mean) * (values[s] - est.mean);
        const double var = pairwise_sum(sq) / static_cast<double>(samples - 1);
        est.std_error = std::sqrt(var / static_cast<double>(samples));
    }
    return est;
}

}  // namespace

double sample_action(std::span<const double> row, const ControlGrid& controls, double uniform) {
    if (row.size() != controls.size()) throw DimensionError("density row and control grid differ");
    const double du = controls.spacing();
    double total = 0.0;
    for (std::size_t k = 0; k < row.size(); ++k) {
        if (!(row[k] >= 0.0)) throw DomainError("negative density; the CDF is not monotone");
        if (k + 1 < row.size()) total += 0.5 * du * (row[k] + row[k + 1]);
    }
    if (!(total > 0.0)) throw DomainError("density row has no mass");
    double remaining = std::clamp(uniform, 0.0, 1.0) * total;
    for (std::size_t k = 0; k + 1 < row.size(); ++k) {
        const double a = row[k];
        const double b = row[k + 1];
        const double mass = 0.5 * du * (a + b);
        if (remaining > mass && k + 2 < row.size()) {
            remaining -= mass;
            continue;
        }
        remaining = std::min(remaining, mass);
        // Solve a s + (b - a) s^2 / (2 du) = remaining for s in [0, du].
        const double slope = (b - a) / du;
        const double disc = std::max(0.0, a * a + 2.0 * slope * remaining);
        const double denom = a + std::sqrt(disc);
        const double s = denom > 0.0 ? 2.0 * remaining / denom : 0.0;
        return std::min(controls.node(k) + std::clamp(s, 0.0, du), controls.upper());
    }
    return controls.upper();
}

PathEstimate rollout_discrete(const ProblemSpec& spec, const SolveParams& params, const PolicyField& pi,
                              const State& x0, const RolloutConfig& cfg) {
    params.validate();
    if (spec.mode != ProblemMode::full) throw ModeError("rollouts need a full-mode problem");
    if (cfg.euler_substeps < 1) throw ParameterError("euler_substeps must be >= 1");
    check_policy(pi);
    const double h = params.step_h;
    const double lambda = params.temperature;
    const double beta = spec.discount_beta;
    const double gamma = std::exp(-beta * h);
    const double r_sup = reward_sup(spec, pi.grid());
    const double ent_sup = entropy_bound(pi);
    const double T = cfg.horizon_T ? *cfg.horizon_T : default_horizon(r_sup + lambda * ent_sup, beta, cfg.tail_tol, h);
    if (!(T > 0.0)) throw ParameterError("horizon must be positive");
    const auto steps = static_cast<std::size_t>(std::ceil(T / h - 1e-12));
    const double dt = h / static_cast<double>(cfg.euler_substeps);
    const auto& controls = pi.grid().control;
    const auto w = controls.weights();
    const int dim = spec.dim;
    const StochasticStep stepper{spec, dim};
    const State start = spec.wrap(x0);

    auto sample = [&](std::size_t s, std::ostream* dump) {
        Draws draws{path_engine(cfg.rng_seed, s)};
        const std::size_t copies = cfg.antithetic ? 2 : 1;
        std::array<State, 2> y{start, start};
        std::array<double, 2> payoff{0.0, 0.0};
        std::vector<double> row(controls.size());
        double disc = 1.0;
        for (std::size_t i = 0; i < steps; ++i) {
            const double u01 = draws.uniform();
            std::array<double, 2> nu{};
            for (std::size_t c = 0; c < copies; ++c) {
                interpolate_row(pi, y[c], row);
                nu[c] = sample_action(row, controls, c == 0 ? u01 : 1.0 - u01);
                payoff[c] += disc * h * (spec.reward(y[c], nu[c]) - lambda * row_entropy(row, w));
                if (dump) dump_row(*dump, s * copies + c, static_cast<double>(i) * h, y[c], dim, nu[c], payoff[c]);
            }
            for (std::size_t j = 0; j < cfg.euler_substeps; ++j) {
                const State z = draws.normals(dim);
                for (std::size_t c = 0; c < copies; ++c)
                    y[c] = stepper.advance(y[c], spec.drift(y[c], nu[c]), dt, c == 0 ? z : negate(z));
            }
            disc *= gamma;
        }
        return cfg.antithetic ? 0.5 * (payoff[0] + payoff[1]) : payoff[0];
    };
    PathEstimate est = reduce_samples(cfg, dim, sample);
    est.horizon = static_cast<double>(steps) * h;
    // Tail of the discounted sum beyond the last step.
    est.tail_bound = std::pow(gamma, static_cast<double>(steps)) * h / (1.0 - gamma) * (r_sup + lambda * ent_sup);
    return est;
}

PathEstimate rollout_continuous(const ProblemSpec& spec, double lambda, const PolicyField& pi, const State& x0,
                                const RolloutConfig& cfg) {
    if (spec.mode != ProblemMode::full) throw ModeError("rollouts need a full-mode problem");
    if (cfg.euler_substeps < 1) throw ParameterError("euler_substeps must be >= 1");
    if (!(cfg.step_h > 0.0)) throw ParameterError("step_h must be positive");
    if (!(lambda >= 0.0)) throw ParameterError("temperature must be nonnegative");
    check_policy(pi);
    const double beta = spec.discount_beta;
    const double r_sup = reward_sup(spec, pi.grid());
    const double ent_sup = entropy_bound(pi);
    const double T = cfg.horizon_T ? *cfg.horizon_T
                                   : default_horizon(r_sup + lambda * ent_sup, beta, cfg.tail_tol, cfg.step_h);
    if (!(T > 0.0)) throw ParameterError("horizon must be positive");
    const double dt = cfg.step_h / static_cast<double>(cfg.euler_substeps);
    const auto steps = static_cast<std::size_t>(std::ceil(T / dt - 1e-12));
    const auto& controls = pi.grid().control;
    const auto w = controls.weights();
    const std::size_t m = controls.size();
    const int dim = spec.dim;
    const StochasticStep stepper{spec, dim};
    const State start = spec.wrap(x0);
    const double step_weight = -std::expm1(-beta * dt) / beta;
    const double step_decay = std::exp(-beta * dt);

    auto sample = [&](std::size_t s, std::ostream* dump) {
        Draws draws{path_engine(cfg.rng_seed, s)};
        const std::size_t copies = cfg.antithetic ? 2 : 1;
        std::array<State, 2> x{start, start};
        std::array<double, 2> payoff{0.0, 0.0};
        std::vector<double> row(m);
        double disc = 1.0;
        std::array<State, 2> drift{};
        for (std::size_t j = 0; j < steps; ++j) {
            for (std::size_t c = 0; c < copies; ++c) {
                interpolate_row(pi, x[c], row);
                State b{0.0, 0.0};
                double r = 0.0;
                double mean_u = 0.0;
                for (std::size_t k = 0; k < m; ++k) {
                    const double wp = w[k] * row[k];
                    if (wp == 0.0) continue;
                    const double u = controls.node(k);
                    const State bk = spec.drift(x[c], u);
                    b[0] += wp * bk[0];
                    b[1] += wp * bk[1];
                    r += wp * spec.reward(x[c], u);
                    mean_u += wp * u;
                }
                drift[c] = b;
                payoff[c] += disc * step_weight * (r - lambda * row_entropy(row, w));
                if (dump && j % cfg.euler_substeps == 0)
                    dump_row(*dump, s * copies + c, static_cast<double>(j) * dt, x[c], dim, mean_u, payoff[c]);
            }
            const State z = draws.normals(dim);
            for (std::size_t c = 0; c < copies; ++c)
                x[c] = stepper.advance(x[c], drift[c], dt, c == 0 ? z : negate(z));
            disc *= step_decay;
        }
        return cfg.antithetic ? 0.5 * (payoff[0] + payoff[1]) : payoff[0];
    };
    PathEstimate est = reduce_samples(cfg, dim, sample);
    est.horizon = static_cast<double>(steps) * dt;
    est.tail_bound = std::exp(-beta * est.horizon) * (r_sup + lambda * ent_sup) / beta;
    return est;
}

// ------------------------------------------------------------ Appendix demo

DivergenceDemo trajectory_divergence_demo(const ProblemSpec& spec, double t_end, std::size_t samples_per_step) {
    if (spec.mode != ProblemMode::deterministic || !spec.reference_feedback)
        throw ModeError("trajectory demo needs the deterministic instability problem");
    const auto hit = spec.parameters.find("h");
    if (hit == spec.parameters.end()) throw ParameterError("problem carries no step parameter h");
    const double h = hit->second;
    if (!(t_end > 0.0) || samples_per_step < 1) throw ParameterError("invalid demo horizon or sampling");
    const auto& mu = spec.reference_feedback;
    auto feedback = [&](double x) { return mu(State{x, 0.0}); };

    // Y: sampled feedback, exact piecewise-linear; Y(i h) = n_i h with n_i an
    // exact running sum of the (integer) feedback values.
    const auto steps = static_cast<std::size_t>(std::ceil(t_end / h - 1e-9));
    std::vector<double> count(steps + 1, 0.0);
    std::vector<double> action(steps, 0.0);
    for (std::size_t i = 0; i < steps; ++i) {
        action[i] = feedback(count[i] * h);
        count[i + 1] = count[i] + action[i];
    }
    auto y_at = [&](double t) {
        auto i = static_cast<std::size_t>(std::floor(t / h));
        if (static_cast<double>(i + 1) * h <= t) ++i;
        i = std::min(i, steps);
        const double base = count[i] * h;
        if (i == steps) return base;
        return base + action[i] * (t - static_cast<double>(i) * h);
    };

    // X: continuous feedback, integrated between switch points h/4 + j h/2.
    struct Event {
        double t;
        double x;
        double v;
    };
    const double half = 0.5 * h;
    const double quarter = 0.25 * h;
    auto switch_index = [&](double x) { return (x - quarter) / half; };
    auto on_switch = [&](double x) {
        const double j = std::round(switch_index(x));
        return std::abs(x - (quarter + j * half)) <= 1e-14 * std::max(1.0, std::abs(x));
    };
    std::vector<Event> events;
    double t = 0.0;
    double x = 0.0;
    while (t < t_end) {
        double v = 0.0;
        if (on_switch(x)) {
            const double eps = 1e-6 * h;
            const double left = feedback(x - eps);
            const double right = feedback(x + eps);
            if (left > 0.0 && right < 0.0) v = 0.0;  // attracting: slide
            else if (left < 0.0 && right > 0.0) v = 0.0;  // repelling with zero-measure tie: stay
            else v = left > 0.0 ? left : right;
        } else {
            v = feedback(x);
        }
        events.push_back({t, x, v});
        if (v == 0.0) break;
        const double j = v > 0.0 ? std::floor(switch_index(x)) + 1.0 : std::ceil(switch_index(x)) - 1.0;
        const double target = quarter + j * half;
        const double dt = (target - x) / v;
        if (t + dt >= t_end) break;
        t += dt;
        x = target;
    }
    auto x_at = [&](double s) {
        std::size_t e = 0;
        while (e + 1 < events.size() && events[e + 1].t <= s) ++e;
        return events[e].x + events[e].v * (s - events[e].t);
    };

    DivergenceDemo demo;
    const std::size_t total = steps * samples_per_step;
    demo.path.reserve(total + 1);
    for (std::size_t k = 0; k <= total; ++k) {
        const std::size_t i = k / samples_per_step;
        const double frac = static_cast<double>(k % samples_per_step) * h / static_cast<double>(samples_per_step);
        const double tk = static_cast<double>(i) * h + frac;
        const double yk = i < steps ? count[i] * h + action[i] * frac : count[steps] * h;
        demo.path.push_back({tk, yk, x_at(tk)});
    }

    DivergenceRecord& rec = demo.record;
    rec.h = h;
    rec.y_grid_exact = true;
    for (std::size_t k = 0; k <= std::min<std::size_t>(100, steps); ++k)
        rec.y_grid_exact = rec.y_grid_exact && count[k] * h == static_cast<double>(k) * h;
    // Both paths are piecewise linear: extrema sit at breakpoints.
    std::vector<double> breaks;
    for (std::size_t i = 0; i <= steps; ++i) breaks.push_back(static_cast<double>(i) * h);
    for (const auto& ev : events) breaks.push_back(ev.t);
    breaks.push_back(std::min(1.0, t_end));
    breaks.push_back(t_end);
    for (double s : breaks) {
        if (s > t_end) continue;
        rec.sup_abs_x = std::max(rec.sup_abs_x, std::abs(x_at(s)));
        if (s <= 1.0) rec.sup_divergence_to_1 = std::max(rec.sup_divergence_to_1, std::abs(y_at(s) - x_at(s)));
    }
    rec.y_at_1 = y_at(std::min(1.0, t_end));
    rec.x_at_1 = x_at(std::min(1.0, t_end));
    return demo;
}

}  // namespace softctl
