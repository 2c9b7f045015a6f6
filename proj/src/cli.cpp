#include "softctl/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "softctl/error.hpp"
#include "softctl/grid.hpp"
#include "softctl/hjb.hpp"
#include "softctl/kernel.hpp"
#include "softctl/mdp.hpp"
#include "softctl/parallel.hpp"
#include "softctl/problem.hpp"
#include "softctl/rates.hpp"
#include "softctl/sim.hpp"

namespace softctl::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "0.1.0";

/// Problems with the command line or configuration (exit 1).
class UsageError : public Error {
public:
    using Error::Error;
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

bool valid_key(const std::string& key) {
    if (key.empty()) return false;
    return std::all_of(key.begin(), key.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '.';
    });
}

}  // namespace

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = {
        "problem", "h",      "lambda",    "nodes",   "controls", "fp_substeps", "tol",        "seed",
        "paths",   "substeps", "antithetic", "horizon", "x0",     "policy",      "layer",      "dump_paths",
        "refine",  "t_end",  "temperature_nodes", "out", "workers",
    };
    return keys;
}

ConfigMap parse_config(std::istream& is, const std::string& source) {
    ConfigMap cfg;
    std::string line;
    std::size_t number = 0;
    const auto& keys = config_keys();
    while (std::getline(is, line)) {
        ++number;
        const std::string text = trim(line);
        if (text.empty() || text.front() == '#') continue;
        const auto where = source + ":" + std::to_string(number) + ": ";
        const auto eq = text.find('=');
        if (eq == std::string::npos) throw UsageError(where + "expected key = value");
        const std::string key = trim(text.substr(0, eq));
        const std::string value = trim(text.substr(eq + 1));
        if (!valid_key(key)) throw UsageError(where + "malformed key '" + key + "'");
        const bool param = key.rfind("param.", 0) == 0 && key.size() > 6;
        if (!param && std::find(keys.begin(), keys.end(), key) == keys.end())
            throw UsageError(where + "unknown key '" + key + "'");
        if (value.empty()) throw UsageError(where + "empty value for '" + key + "'");
        if (!cfg.emplace(key, value).second) throw UsageError(where + "duplicate key '" + key + "'");
    }
    return cfg;
}

namespace {

// Resolved settings: config entries overlaid with flags; every value read is
// recorded (defaults included) for the manifest.
class Settings {
public:
    explicit Settings(ConfigMap values) : values_(std::move(values)) {}

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string text(const std::string& key, const std::string& fallback) {
        const auto it = values_.find(key);
        const std::string v = it == values_.end() ? fallback : it->second;
        record(key, v);
        return v;
    }

    double number(const std::string& key, double fallback) {
        const auto it = values_.find(key);
        if (it == values_.end()) {
            record(key, format_double(fallback));
            return fallback;
        }
        record(key, it->second);
        return parse_number(key, it->second);
    }

    std::optional<double> optional_number(const std::string& key) {
        const auto it = values_.find(key);
        if (it == values_.end()) return std::nullopt;
        record(key, it->second);
        return parse_number(key, it->second);
    }

    std::size_t count(const std::string& key, std::size_t fallback, std::size_t minimum = 1) {
        const double v = number(key, static_cast<double>(fallback));
        if (!(v >= static_cast<double>(minimum)) || v != std::floor(v) || v > 1e12)
            throw UsageError("field '" + key + "': expected an integer >= " + std::to_string(minimum));
        return static_cast<std::size_t>(v);
    }

    std::uint64_t seed(const std::string& key) {
        const std::string v = text(key, "0");
        std::uint64_t out = 0;
        const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc() || ptr != v.data() + v.size())
            throw UsageError("field '" + key + "': expected an unsigned 64-bit integer, got '" + v + "'");
        return out;
    }

    bool flag(const std::string& key, bool fallback) {
        const std::string v = text(key, fallback ? "true" : "false");
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw UsageError("field '" + key + "': expected true or false, got '" + v + "'");
    }

    std::vector<double> list(const std::string& key, const std::string& fallback) {
        const std::string v = text(key, fallback);
        try {
            return parse_sweep_list(v);
        } catch (const Error& e) {
            throw UsageError("field '" + key + "': " + e.what());
        }
    }

    Overrides overrides() {
        Overrides out;
        for (const auto& [k, v] : values_) {
            if (k.rfind("param.", 0) != 0) continue;
            record(k, v);
            out[k.substr(6)] = parse_number(k, v);
        }
        return out;
    }

    /// Values that determine outputs (output location and worker count excluded).
    const std::map<std::string, std::string>& used() const { return used_; }

private:
    void record(const std::string& key, const std::string& v) {
        if (key == "out" || key == "workers" || key == "force") return;
        used_[key] = v;
    }

    static double parse_number(const std::string& key, const std::string& v) {
        std::vector<double> xs;
        try {
            xs = parse_sweep_list(v);
        } catch (const Error&) {
            throw UsageError("field '" + key + "': expected a number, got '" + v + "'");
        }
        if (xs.size() != 1) throw UsageError("field '" + key + "': expected a single number, got '" + v + "'");
        return xs.front();
    }

    ConfigMap values_;
    std::map<std::string, std::string> used_;
};

class OutputDir {
public:
    OutputDir(const std::string& path, bool force) : dir_(path) {
        if (fs::exists(dir_) && !force)
            throw UsageError("output directory '" + path + "' already exists; pass --force to overwrite");
        std::error_code ec;
        fs::create_directories(dir_, ec);
        if (ec) throw UsageError("cannot create output directory '" + path + "': " + ec.message());
    }

    void write(const std::string& name, const std::function<void(std::ostream&)>& fn) {
        std::ofstream f(dir_ / name, std::ios::binary | std::ios::trunc);
        if (!f) throw UsageError("cannot open '" + (dir_ / name).string() + "' for writing");
        fn(f);
        f.flush();
        if (!f) throw UsageError("failed writing '" + (dir_ / name).string() + "'");
        if (std::find(files_.begin(), files_.end(), name) == files_.end()) files_.push_back(name);
    }

    const std::vector<std::string>& files() const { return files_; }
    std::string path() const { return dir_.string(); }

private:
    fs::path dir_;
    std::vector<std::string> files_;
};

Json number_map(const std::map<std::string, double>& m) {
    Json j = Json::object();
    for (const auto& [k, v] : m) j[k] = v;
    return j;
}

Json report_json(const AssumptionReport& r) {
    Json j;
    j["m1"] = r.m1;
    j["m2"] = r.m2;
    j["sup_drift"] = r.sup_drift;
    j["sup_sigma"] = r.sup_sigma;
    j["lip_drift"] = r.lip_drift;
    j["lip_sigma"] = r.lip_sigma;
    j["sup_reward"] = r.sup_reward;
    j["lip_reward"] = r.lip_reward;
    j["grad_drift"] = r.grad_drift;
    j["grad_sigma"] = r.grad_sigma;
    j["grad_covariance"] = r.grad_covariance;
    j["lambda_min"] = r.lambda_min;
    j["a0"] = r.a0;
    j["beta_condition"] = r.beta_condition;
    j["mdp_supported"] = r.mdp_supported;
    if (r.sigma_gradient_root_h) j["sigma_gradient_root_h"] = *r.sigma_gradient_root_h;
    Json checks = Json::array();
    for (const auto& c : r.checks) checks.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
    j["checks"] = std::move(checks);
    return j;
}

std::string eigen_version() {
    return std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
           std::to_string(EIGEN_MINOR_VERSION);
}

struct Run {
    std::string subcommand;
    Settings settings;
    std::ostream& out;
    std::size_t workers = 0;
    Json results = Json::object();
    std::optional<ProblemSpec> spec;
    std::optional<AssumptionReport> constants;
};

void write_manifest(OutputDir& dir, const Run& run) {
    Json m;
    m["tool"] = "softctl";
    m["version"] = kVersion;
    m["subcommand"] = run.subcommand;
    Json cfg = Json::object();
    for (const auto& [k, v] : run.settings.used()) cfg[k] = v;
    m["config"] = std::move(cfg);
    if (run.spec) {
        m["problem"] = {{"name", run.spec->name}, {"parameters", number_map(run.spec->parameters)}};
    }
    if (run.constants) m["constants"] = report_json(*run.constants);
    m["results"] = run.results;
    Json files = Json::array();
    for (const auto& f : dir.files()) files.push_back(f);
    m["outputs"] = std::move(files);
    m["build"] = {{"eigen", eigen_version()}, {"json", "3.11.3"}, {"cli11", CLI11_VERSION},
#ifdef __VERSION__
                  {"compiler", __VERSION__}
#else
                  {"compiler", "unknown"}
#endif
    };
    dir.write("manifest.json", [&](std::ostream& os) { os << m.dump(2) << '\n'; });
}

ProblemSpec load_problem(Run& run, const std::string& fallback = "lq1d") {
    const std::string name = run.settings.text("problem", fallback);
    Overrides ov = run.settings.overrides();
    run.spec = builtin_problem(name, ov);
    return *run.spec;
}

GridPair load_grid(Run& run, const ProblemSpec& spec, std::size_t nodes_default = 128) {
    const std::size_t nodes = run.settings.count("nodes", nodes_default, 3);
    const std::size_t controls = run.settings.count("controls", 17, 2);
    return GridPair::for_problem(spec, nodes, controls);
}

void measure_constants(Run& run, const ProblemSpec& spec, const GridPair& grid, std::optional<double> h) {
    run.constants = validate_assumptions(spec, grid, h);
}

SolveParams load_params(Run& run, const ProblemSpec& spec, const GridPair& grid) {
    const double h = run.settings.number("h", 0.0625);
    const double lambda = run.settings.number("lambda", 0.5);
    const std::size_t fp = run.settings.count("fp_substeps", 16, 1);
    SolveParams p = SolveParams::make(spec, h, lambda, grid.state.nodes(0), grid.control.size(), fp);
    if (auto tol = run.settings.optional_number("tol")) p.fixed_point_tol = *tol;
    p.validate();
    return p;
}

std::string out_path(Run& run) { return run.settings.text("out", "softctl-" + run.subcommand); }

void print_kv(std::ostream& os, const std::string& k, const std::string& v) {
    os << "  " << k;
    for (std::size_t i = k.size(); i < 30; ++i) os << ' ';
    os << v << '\n';
}
void print_kv(std::ostream& os, const std::string& k, double v) { print_kv(os, k, format_double(v)); }

void write_coords(std::ostream& os, const StateGrid& g, std::size_t i) {
    const State x = g.point(i);
    os << format_double(x[0]);
    if (g.dim() == 2) os << ',' << format_double(x[1]);
}

std::string coord_header(const StateGrid& g) { return g.dim() == 2 ? "x,y" : "x"; }

// ----------------------------------------------------------- subcommands

int cmd_solve_mdp(Run& run) {
    const ProblemSpec spec = load_problem(run);
    const GridPair grid = load_grid(run, spec);
    const SolveParams params = load_params(run, spec, grid);
    const bool force = run.settings.flag("force", false);
    measure_constants(run, spec, grid, params.step_h);
    OutputDir dir(out_path(run), force);
    const TransitionKernel kernel = build_kernel(spec, params, grid, run.workers);
    const FixedPointResult vh = solve_vh(spec, params, kernel);
    const GibbsPolicy pi = gibbs_policy(spec, params, kernel, vh.value);
    dir.write("value.csv", [&](std::ostream& os) { write_csv(os, vh.value, "V_h"); });
    dir.write("policy.csv", [&](std::ostream& os) { write_csv(os, pi.policy); });
    run.results["iterations"] = vh.iterations;
    run.results["last_increment"] = vh.last_increment;
    run.results["residual"] = vh.residual;
    run.results["tolerance"] = params.fixed_point_tol;
    run.results["gamma"] = params.discount_gamma;
    run.results["value_sup"] = sup_norm(vh.value);
    run.results["policy_sup"] = pi.policy.sup();
    run.results["policy_log_lipschitz"] = policy_log_lipschitz(pi.policy);
    run.results["kernel_row_defect"] = kernel.max_row_defect();
    run.results["kernel_min_entry"] = kernel.min_entry();
    write_manifest(dir, run);
    run.out << "solve-mdp " << spec.name << '\n';
    print_kv(run.out, "iterations", std::to_string(vh.iterations));
    print_kv(run.out, "residual |TW - W|", vh.residual);
    print_kv(run.out, "|V_h|_inf", sup_norm(vh.value));
    print_kv(run.out, "|pi*_h|_inf", pi.policy.sup());
    print_kv(run.out, "output", dir.path());
    return kExitOk;
}

int cmd_solve_hjb(Run& run) {
    const ProblemSpec spec = load_problem(run);
    const GridPair grid = load_grid(run, spec);
    const double lambda = run.settings.number("lambda", 0.5);
    HjbOptions opts;
    opts.tol = run.settings.optional_number("tol");
    const bool force = run.settings.flag("force", false);
    measure_constants(run, spec, grid, std::nullopt);
    OutputDir dir(out_path(run), force);
    Json history = Json::array();
    if (spec.has_controlled_diffusion()) {
        const TemperatureExploratory sol = solve_temperature_exploratory(spec, lambda, grid.state, opts);
        dir.write("value.csv", [&](std::ostream& os) { write_csv(os, sol.value, "V"); });
        dir.write("policy.csv", [&](std::ostream& os) {
            os << coord_header(grid.state) << ",rate,mean\n";
            for (std::size_t i = 0; i < grid.state.size(); ++i) {
                write_coords(os, grid.state, i);
                os << ',' << format_double(sol.policy_rate[i]) << ',' << format_double(sol.policy_mean[i]) << '\n';
            }
        });
        for (double r : sol.residual_history) history.push_back(r);
        run.results["iterations"] = sol.iterations;
        run.results["value_sup"] = sup_norm(sol.value);
    } else {
        const ExploratorySolution sol = solve_exploratory_hjb(spec, lambda, grid, opts);
        dir.write("value.csv", [&](std::ostream& os) { write_csv(os, sol.value, "V"); });
        dir.write("policy.csv", [&](std::ostream& os) { write_csv(os, sol.policy); });
        for (double r : sol.residual_history) history.push_back(r);
        run.results["iterations"] = sol.iterations;
        run.results["value_sup"] = sup_norm(sol.value);
        run.results["policy_sup"] = sol.policy.sup();
        run.results["gradient_sup"] = gradient(sol.value).sup_norm();
    }
    run.results["residual_history"] = history;
    write_manifest(dir, run);
    run.out << "solve-hjb " << spec.name << '\n';
    print_kv(run.out, "iterations", std::to_string(run.results["iterations"].get<std::size_t>()));
    print_kv(run.out, "final residual", history.back().get<double>());
    print_kv(run.out, "|V|_inf", run.results["value_sup"].get<double>());
    print_kv(run.out, "output", dir.path());
    return kExitOk;
}

int cmd_solve_classical(Run& run) {
    const ProblemSpec spec = load_problem(run);
    const GridPair grid = load_grid(run, spec);
    const bool force = run.settings.flag("force", false);
    measure_constants(run, spec, grid, std::nullopt);
    OutputDir dir(out_path(run), force);
    const ClassicalSolution sol = solve_classical_hjb(spec, grid);
    dir.write("value.csv", [&](std::ostream& os) { write_csv(os, sol.value, "v"); });
    dir.write("feedback.csv", [&](std::ostream& os) {
        os << coord_header(grid.state) << ",mu,index\n";
        for (std::size_t i = 0; i < grid.state.size(); ++i) {
            write_coords(os, grid.state, i);
            os << ',' << format_double(sol.feedback[i]) << ',' << sol.feedback_index[i] << '\n';
        }
    });
    run.results["iterations"] = sol.iterations;
    run.results["value_sup"] = sup_norm(sol.value);
    if (spec.dim == 1) run.results["residual_sup"] = sup_norm(classical_hjb_residual(spec, grid, sol.value));
    write_manifest(dir, run);
    run.out << "solve-classical " << spec.name << '\n';
    print_kv(run.out, "iterations", std::to_string(sol.iterations));
    print_kv(run.out, "|v|_inf", sup_norm(sol.value));
    if (spec.dim == 1) print_kv(run.out, "central residual", run.results["residual_sup"].get<double>());
    print_kv(run.out, "output", dir.path());
    return kExitOk;
}

PolicyField policy_from(const std::string& source, const ProblemSpec& spec, const SolveParams& params,
                        const GridPair& grid, const std::optional<TransitionKernel>& kernel) {
    if (source == "uniform") return PolicyField::uniform(grid);
    if (source == "hjb") return solve_exploratory_hjb(spec, params.temperature, grid).policy;
    if (source == "mdp") {
        const FixedPointResult vh = solve_vh(spec, params, *kernel);
        return gibbs_policy(spec, params, *kernel, vh.value).policy;
    }
    throw UsageError("field 'policy': expected mdp, hjb or uniform, got '" + source + "'");
}

int cmd_eval_policy(Run& run) {
    const ProblemSpec spec = load_problem(run);
    const GridPair grid = load_grid(run, spec);
    const SolveParams params = load_params(run, spec, grid);
    const std::string source = run.settings.text("policy", "mdp");
    const bool force = run.settings.flag("force", false);
    measure_constants(run, spec, grid, params.step_h);
    OutputDir dir(out_path(run), force);
    const std::optional<TransitionKernel> kernel = build_kernel(spec, params, grid, run.workers);
    const PolicyField pi = policy_from(source, spec, params, grid, kernel);
    const ScalarField V_cont = evaluate_policy_continuous(spec, params.temperature, grid, pi, true);
    const ScalarField v_cont = evaluate_policy_continuous(spec, params.temperature, grid, pi, false);
    const FixedPointResult V_disc = evaluate_policy_discrete(spec, params, *kernel, pi);
    dir.write("eval.csv", [&](std::ostream& os) {
        os << coord_header(grid.state) << ",V_cont,v_cont,V_disc\n";
        for (std::size_t i = 0; i < grid.state.size(); ++i) {
            write_coords(os, grid.state, i);
            os << ',' << format_double(V_cont[i]) << ',' << format_double(v_cont[i]) << ','
               << format_double(V_disc.value[i]) << '\n';
        }
    });
    run.results["V_cont_sup"] = sup_norm(V_cont);
    run.results["v_cont_sup"] = sup_norm(v_cont);
    run.results["V_disc_sup"] = sup_norm(V_disc.value);
    run.results["disc_iterations"] = V_disc.iterations;
    run.results["disc_residual"] = V_disc.residual;
    run.results["cont_vs_disc"] = sup_norm_diff(V_cont, V_disc.value);
    write_manifest(dir, run);
    run.out << "eval-policy " << spec.name << " (policy " << source << ")\n";
    print_kv(run.out, "|V[pi]|_inf", sup_norm(V_cont));
    print_kv(run.out, "|v[pi]|_inf", sup_norm(v_cont));
    print_kv(run.out, "|V_h[pi]|_inf", sup_norm(V_disc.value));
    print_kv(run.out, "|V[pi] - V_h[pi]|_inf", sup_norm_diff(V_cont, V_disc.value));
    print_kv(run.out, "output", dir.path());
    return kExitOk;
}

State parse_point(const std::string& text, int dim) {
    std::vector<double> xs;
    try {
        xs = parse_sweep_list(text);
    } catch (const Error&) {
        throw UsageError("field 'x0': expected one number per dimension, got '" + text + "'");
    }
    if (xs.size() != static_cast<std::size_t>(dim))
        throw UsageError("field 'x0': expected " + std::to_string(dim) + " coordinate(s), got '" + text + "'");
    State x{0.0, 0.0};
    for (std::size_t a = 0; a < xs.size(); ++a) x[a] = xs[a];
    return x;
}

int cmd_simulate(Run& run) {
    const ProblemSpec spec = load_problem(run);
    const GridPair grid = load_grid(run, spec);
    const SolveParams params = load_params(run, spec, grid);
    const std::string layer = run.settings.text("layer", "discrete");
    if (layer != "discrete" && layer != "continuous")
        throw UsageError("field 'layer': expected discrete or continuous, got '" + layer + "'");
    const std::string source = run.settings.text("policy", layer == "discrete" ? "mdp" : "hjb");
    RolloutConfig cfg;
    cfg.paths = run.settings.count("paths", 10000, 1);
    cfg.euler_substeps = run.settings.count("substeps", 8, 1);
    cfg.rng_seed = run.settings.seed("seed");
    cfg.antithetic = run.settings.flag("antithetic", false);
    cfg.horizon_T = run.settings.optional_number("horizon");
    cfg.workers = run.workers;
    cfg.step_h = params.step_h;
    const State x0 = parse_point(run.settings.text("x0", spec.dim == 2 ? "0,0" : "0"), spec.dim);
    const bool dump = run.settings.flag("dump_paths", false);
    const bool force = run.settings.flag("force", false);
    measure_constants(run, spec, grid, params.step_h);
    OutputDir dir(out_path(run), force);

    std::optional<TransitionKernel> kernel;
    if (layer == "discrete" || source == "mdp") kernel = build_kernel(spec, params, grid, run.workers);
    const PolicyField pi = policy_from(source, spec, params, grid, kernel);
    std::ostringstream paths;
    if (dump) cfg.path_dump = &paths;
    PathEstimate est;
    double reference = 0.0;
    if (layer == "discrete") {
        est = rollout_discrete(spec, params, pi, x0, cfg);
        reference = interpolate(evaluate_policy_discrete(spec, params, *kernel, pi).value, x0);
    } else {
        est = rollout_continuous(spec, params.temperature, pi, x0, cfg);
        reference = interpolate(evaluate_policy_continuous(spec, params.temperature, grid, pi, true), x0);
    }
    if (dump) dir.write("paths.csv", [&](std::ostream& os) { os << paths.str(); });
    Json e;
    e["layer"] = layer;
    e["policy"] = source;
    e["mean"] = est.mean;
    e["std_error"] = est.std_error;
    e["paths_used"] = est.paths_used;
    e["tail_bound"] = est.tail_bound;
    e["horizon"] = est.horizon;
    e["reference"] = reference;
    e["abs_difference"] = std::abs(est.mean - reference);
    e["statistical_allowance"] = 3.0 * est.std_error + est.tail_bound;
    dir.write("estimate.json", [&](std::ostream& os) { os << e.dump(2) << '\n'; });
    run.results = e;
    write_manifest(dir, run);
    run.out << "simulate " << spec.name << " (" << layer << ", policy " << source << ")\n";
    print_kv(run.out, "estimate", est.mean);
    print_kv(run.out, "std_error", est.std_error);
    print_kv(run.out, "tail_bound", est.tail_bound);
    print_kv(run.out, "reference (PDE/fixed point)", reference);
    print_kv(run.out, "output", dir.path());
    return kExitOk;
}

SweepOptions load_sweep(Run& run, const std::string& h_default, const std::string& lambda_default) {
    SweepOptions o;
    o.h_list = run.settings.list("h", h_default);
    if (!lambda_default.empty()) o.lambda_list = run.settings.list("lambda", lambda_default);
    o.state_nodes = run.settings.count("nodes", 256, 3);
    o.control_nodes = run.settings.count("controls", 17, 2);
    o.fp_substeps = run.settings.count("fp_substeps", 16, 1);
    o.workers = run.workers;
    return o;
}

void print_records(std::ostream& os, const std::vector<ErrorRecord>& records) {
    os << "  h            lambda       |V-V_h|      |V[pi_h]-V|  |V_h[pi]-V_h| |v-V[pi_h]|  status\n";
    for (const auto& r : records) {
        auto cell = [&](const std::string& s) {
            os << s;
            for (std::size_t i = s.size(); i < 13; ++i) os << ' ';
        };
        os << "  ";
        cell(format_double(r.h));
        cell(format_double(r.lambda));
        if (r.ok) {
            char buf[4][32];
            std::snprintf(buf[0], sizeof buf[0], "%.4e", r.err_V_vs_Vh);
            std::snprintf(buf[1], sizeof buf[1], "%.4e", r.err_plugin_cont);
            std::snprintf(buf[2], sizeof buf[2], "%.4e", r.err_plugin_disc);
            std::snprintf(buf[3], sizeof buf[3], "%.4e", r.err_to_classical.value_or(0.0));
            for (auto& b : buf) cell(b);
            os << (r.signs_ok ? "ok" : "sign-violation") << '\n';
        } else {
            os << "failed: " << r.cause << '\n';
        }
    }
}

int cmd_sweep(Run& run) {
    const ProblemSpec spec = load_problem(run);
    SweepOptions o = load_sweep(run, "2^-3..2^-6", "0.5");
    o.refinement_check = run.settings.flag("refine", false);
    const bool force = run.settings.flag("force", false);
    measure_constants(run, spec, GridPair::for_problem(spec, o.state_nodes, o.control_nodes), std::nullopt);
    OutputDir dir(out_path(run), force);
    const RateReport report = run_sweep(spec, o);
    dir.write("rates.csv", [&](std::ostream& os) { write_rates_csv(os, report.records); });
    dir.write("fits.json", [&](std::ostream& os) { write_fits_json(os, report); });
    for (const auto& f : report.fits)
        dir.write(fit_file_stem(f) + ".dat", [&](std::ostream& os) { write_fit_dat(os, f); });
    std::size_t failed = 0;
    for (const auto& r : report.records) failed += r.ok ? 0 : 1;
    run.results["records"] = report.records.size();
    run.results["failed"] = failed;
    run.results["fits_absent"] = report.fits_absent();
    write_manifest(dir, run);
    run.out << "sweep " << spec.name << " (" << o.state_nodes << " state nodes)\n";
    print_records(run.out, report.records);
    for (const auto& f : report.fits) {
        if (f.against != "h|ln h|" && f.against != "lambda|ln lambda|") continue;
        run.out << "  fit " << f.metric << " vs " << f.against << " at " << f.fixed_name << " = "
                << format_double(f.fixed_value) << ": slope " << format_double(f.fit.slope) << ", R^2 "
                << format_double(f.fit.r2) << '\n';
    }
    if (report.fits_absent()) run.out << "  fits absent (fewer than 4 points per line)\n";
    print_kv(run.out, "output", dir.path());
    return failed == report.records.size() && failed > 0 ? kExitSolverFailure : kExitOk;
}

int cmd_schedule(Run& run) {
    const ProblemSpec spec = load_problem(run);
    const SweepOptions o = load_sweep(run, "2^-4,2^-6,2^-8", "");
    const bool force = run.settings.flag("force", false);
    measure_constants(run, spec, GridPair::for_problem(spec, o.state_nodes, o.control_nodes), std::nullopt);
    OutputDir dir(out_path(run), force);
    const ScheduleTable table = schedule_eval(spec, o.h_list, o);
    dir.write("schedule.csv", [&](std::ostream& os) { write_schedule_csv(os, table); });
    Json j;
    j["decreasing"] = table.decreasing;
    if (table.fit) {
        j["fit"] = {{"against", "h^(1/2)|ln h|"}, {"slope", table.fit->slope}, {"intercept", table.fit->intercept},
                    {"r2", table.fit->r2}, {"points", table.fit->points}};
    } else {
        j["fit"] = nullptr;
    }
    dir.write("schedule.json", [&](std::ostream& os) { os << j.dump(2) << '\n'; });
    run.results = j;
    write_manifest(dir, run);
    run.out << "schedule " << spec.name << " (lambda = h^(1/2))\n";
    std::vector<ErrorRecord> recs;
    for (const auto& r : table.rows) recs.push_back(r.record);
    print_records(run.out, recs);
    print_kv(run.out, "strictly decreasing", table.decreasing ? "yes" : "no");
    if (table.fit) print_kv(run.out, "slope vs h^(1/2)|ln h|", table.fit->slope);
    print_kv(run.out, "output", dir.path());
    bool any_ok = false;
    for (const auto& r : table.rows) any_ok = any_ok || r.record.ok;
    return table.rows.empty() || any_ok ? kExitOk : kExitSolverFailure;
}

int cmd_appendix(Run& run) {
    const double h = run.settings.number("h", 0.1);
    Overrides ov = run.settings.overrides();
    ov["h"] = h;
    run.spec = builtin_problem("instability", ov);
    const ProblemSpec& inst = *run.spec;
    const double t_end = run.settings.number("t_end", 10.0);
    const std::size_t nodes = run.settings.count("nodes", 201, 5);
    const std::size_t temp_nodes = run.settings.count("temperature_nodes", 128, 3);
    const std::size_t controls = run.settings.count("controls", 17, 2);
    const double lambda = run.settings.number("lambda", 0.5);
    const bool force = run.settings.flag("force", false);
    OutputDir dir(out_path(run), force);

    const DivergenceDemo demo = trajectory_divergence_demo(inst, t_end);
    dir.write("trajectories.dat", [&](std::ostream& os) {
        os << "# t Y X\n";
        for (const auto& p : demo.path)
            os << format_double(p.t) << ' ' << format_double(p.y) << ' ' << format_double(p.x) << '\n';
    });
    const ResidualScaling scaling = reference_residual_scaling(inst, nodes, 2 * nodes - 1);
    Json inst_json;
    inst_json["h"] = h;
    inst_json["y_grid_exact"] = demo.record.y_grid_exact;
    inst_json["sup_abs_x"] = demo.record.sup_abs_x;
    inst_json["sup_divergence_to_1"] = demo.record.sup_divergence_to_1;
    inst_json["y_at_1"] = demo.record.y_at_1;
    inst_json["x_at_1"] = demo.record.x_at_1;
    inst_json["residual_nodes"] = scaling.nodes;
    inst_json["residual_dx"] = scaling.dx;
    inst_json["residual_sup"] = scaling.residual;
    inst_json["residual_over_dx2"] = scaling.scaled;
    inst_json["residual_bound_constant"] = scaling.bound_constant;
    inst_json["residual_pass"] = scaling.pass;
    dir.write("instability.json", [&](std::ostream& os) { os << inst_json.dump(2) << '\n'; });

    const ProblemSpec temp = builtin_problem("temperature");
    const GridPair tgrid = GridPair::for_problem(temp, temp_nodes, controls);
    const ClassicalSolution classical = solve_classical_hjb(temp, tgrid);
    const TemperatureExploratory explo = solve_temperature_exploratory(temp, lambda, tgrid.state);
    const double dx = tgrid.state.spacing(0);
    dir.write("temperature_classical.csv", [&](std::ostream& os) {
        os << "x,v,v_xx,mu\n";
        for (std::size_t i = 0; i < tgrid.state.size(); ++i) {
            const double vxx = (classical.value[tgrid.state.neighbor(i, 0, 1)] - 2.0 * classical.value[i] +
                                classical.value[tgrid.state.neighbor(i, 0, -1)]) /
                               (dx * dx);
            os << format_double(tgrid.state.coordinate(0, i)) << ',' << format_double(classical.value[i]) << ','
               << format_double(vxx) << ',' << format_double(classical.feedback[i]) << '\n';
        }
    });
    dir.write("temperature_exploratory.csv", [&](std::ostream& os) {
        os << "x,V,rate,mean_control\n";
        for (std::size_t i = 0; i < tgrid.state.size(); ++i)
            os << format_double(tgrid.state.coordinate(0, i)) << ',' << format_double(explo.value[i]) << ','
               << format_double(explo.policy_rate[i]) << ',' << format_double(explo.policy_mean[i]) << '\n';
    });
    run.results["instability"] = inst_json;
    run.results["temperature"] = {{"classical_iterations", classical.iterations},
                                  {"exploratory_iterations", explo.iterations},
                                  {"exploratory_residual", explo.residual_history.back()},
                                  {"classical_vs_exploratory", sup_norm_diff(classical.value, explo.value)}};
    write_manifest(dir, run);

    run.out << "appendix (h = " << format_double(h) << ")\n";
    print_kv(run.out, "Y(kh) = kh", demo.record.y_grid_exact ? "exact" : "VIOLATED");
    print_kv(run.out, "sup |X|", demo.record.sup_abs_x);
    print_kv(run.out, "sup_{t<=1} |Y - X|", demo.record.sup_divergence_to_1);
    print_kv(run.out, "residual / dx^2", format_double(scaling.scaled[0]) + ", " + format_double(scaling.scaled[1]));
    print_kv(run.out, "temperature |v - V|", sup_norm_diff(classical.value, explo.value));
    print_kv(run.out, "output", dir.path());
    if (!demo.record.y_grid_exact) {
        run.out << "assertion failed: Y(kh) != kh\n";
        return kExitSolverFailure;
    }
    return kExitOk;
}

int cmd_validate(Run& run) {
    const ProblemSpec spec = load_problem(run);
    const GridPair grid = load_grid(run, spec);
    const std::optional<double> h = run.settings.optional_number("h");
    const AssumptionReport report = validate_assumptions(spec, grid, h);
    run.constants = report;
    run.out << "validate " << spec.name << '\n';
    for (const auto& c : report.checks)
        run.out << "  [" << (c.pass ? "pass" : "FAIL") << "] " << c.name << ": " << c.detail << '\n';
    print_kv(run.out, "M1", report.m1);
    print_kv(run.out, "M2", report.m2);
    print_kv(run.out, "lambda_min", report.lambda_min);
    print_kv(run.out, "A0", report.a0);
    print_kv(run.out, "H1", report.h1() ? "holds" : "fails");
    print_kv(run.out, "H2", report.h2() ? "holds" : "fails");
    if (run.settings.has("out")) {
        const bool force = run.settings.flag("force", false);
        OutputDir dir(out_path(run), force);
        dir.write("validate.json", [&](std::ostream& os) { os << report_json(report).dump(2) << '\n'; });
        write_manifest(dir, run);
    }
    return kExitOk;
}

// ------------------------------------------------------------- dispatch

struct Subcommand {
    const char* name;
    const char* help;
    std::vector<std::string> flags;
    int (*run)(Run&);
};

const std::vector<Subcommand>& subcommands() {
    static const std::vector<Subcommand> list = {
        {"solve-mdp", "Soft value iteration for the discrete-time problem",
         {"h", "lambda", "fp-substeps", "tol"}, cmd_solve_mdp},
        {"solve-hjb", "Exploratory HJB by damped policy iteration", {"lambda", "tol"}, cmd_solve_hjb},
        {"solve-classical", "Classical HJB by policy iteration", {}, cmd_solve_classical},
        {"eval-policy", "Evaluate an mdp/hjb/uniform policy on both layers",
         {"h", "lambda", "fp-substeps", "tol", "policy"}, cmd_eval_policy},
        {"simulate", "Monte Carlo rollout of a policy",
         {"h", "lambda", "fp-substeps", "tol", "policy", "layer", "paths", "substeps", "antithetic", "horizon", "x0",
          "seed", "dump-paths"},
         cmd_simulate},
        {"sweep", "(h, lambda) error sweep with rate fits", {"h", "lambda", "fp-substeps", "refine"}, cmd_sweep},
        {"schedule", "Errors along lambda = h^(1/2)", {"h", "fp-substeps"}, cmd_schedule},
        {"appendix", "Instability trajectories and temperature-control fields",
         {"h", "lambda", "t-end", "temperature-nodes"}, cmd_appendix},
        {"validate", "Measure the standing assumptions on the grid", {"h"}, cmd_validate},
    };
    return list;
}

const std::map<std::string, std::string>& flag_help() {
    static const std::map<std::string, std::string> help = {
        {"h", "time step h (sweeps: list or range like 2^-3..2^-8)"},
        {"lambda", "temperature lambda (sweeps: list or range)"},
        {"fp-substeps", "implicit Fokker-Planck substeps per h"},
        {"tol", "fixed-point / HJB tolerance"},
        {"policy", "policy source: mdp, hjb or uniform"},
        {"layer", "discrete or continuous"},
        {"paths", "number of Monte Carlo paths"},
        {"substeps", "Euler-Maruyama substeps per h"},
        {"horizon", "truncation time T"},
        {"x0", "start point (comma-separated for d = 2)"},
        {"seed", "64-bit RNG seed"},
        {"t-end", "trajectory horizon"},
        {"temperature-nodes", "state nodes for the temperature problem"},
        {"antithetic", "pair every path with its mirrored draws"},
        {"dump-paths", "write the first 100 paths to paths.csv"},
        {"refine", "repeat every cell on twice the state nodes"},
    };
    return help;
}

bool is_bool_flag(const std::string& f) { return f == "antithetic" || f == "dump-paths" || f == "refine"; }

std::string key_of(std::string flag) {
    std::replace(flag.begin(), flag.end(), '-', '_');
    return flag;
}

ConfigMap load_manifest_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw UsageError("cannot open manifest '" + path + "'");
    Json m;
    try {
        m = Json::parse(f);
    } catch (const std::exception& e) {
        throw UsageError("manifest '" + path + "': " + e.what());
    }
    if (!m.contains("config") || !m["config"].is_object()) throw UsageError("manifest '" + path + "' has no config object");
    ConfigMap cfg;
    for (const auto& [k, v] : m["config"].items()) {
        if (!v.is_string()) throw UsageError("manifest '" + path + "': config value of '" + k + "' must be a string");
        cfg[k] = v.get<std::string>();
    }
    return cfg;
}

int exit_for(const std::exception& e) {
    if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ParameterError*>(&e) ||
        dynamic_cast<const RegistryError*>(&e) || dynamic_cast<const DimensionError*>(&e) ||
        dynamic_cast<const DomainError*>(&e) || dynamic_cast<const InvalidProblemError*>(&e) ||
        dynamic_cast<const ModeError*>(&e))
        return kExitUserError;
    return kExitSolverFailure;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"softctl: entropy-regularized control solvers, simulation and rate studies", "softctl"};
    app.require_subcommand(1);
    app.set_help_flag("--help", "print this help and exit");
    app.set_help_all_flag("--help-all", "show help for every subcommand");
    ConfigMap flags;
    std::string config_path;
    std::string manifest_path;
    std::vector<std::string> sets;
    std::map<std::string, const Subcommand*> by_app;
    for (const auto& sc : subcommands()) {
        CLI::App* sub = app.add_subcommand(sc.name, sc.help);
        by_app[sc.name] = &sc;
        sub->add_option("--config", config_path, "flat key = value config file (flags win)");
        sub->add_option("--manifest", manifest_path, "reuse the config recorded in a manifest.json");
        sub->add_option("--set", sets, "problem parameter override NAME=VALUE (repeatable)");
        const bool appendix = std::string(sc.name) == "appendix";
        if (!appendix)
            sub->add_option_function<std::string>("--problem", [&](const std::string& v) { flags["problem"] = v; },
                                                  "built-in problem (lq1d, advective1d, temperature, instability)");
        sub->add_option_function<std::string>("--nodes", [&](const std::string& v) { flags["nodes"] = v; },
                                              "state nodes per axis");
        sub->add_option_function<std::string>("--controls", [&](const std::string& v) { flags["controls"] = v; },
                                              "control quadrature nodes");
        sub->add_option_function<std::string>("--out", [&](const std::string& v) { flags["out"] = v; },
                                              "output directory");
        sub->add_flag_function("--force", [&](std::int64_t) { flags["force"] = "true"; },
                               "allow writing into an existing output directory");
        sub->add_option_function<std::string>("--workers", [&](const std::string& v) { flags["workers"] = v; },
                                              "worker threads (default: available cores)");
        for (const auto& f : sc.flags) {
            const std::string key = key_of(f);
            const auto help_it = flag_help().find(f);
            const std::string help = help_it == flag_help().end() ? f : help_it->second;
            if (is_bool_flag(f))
                sub->add_flag_function("--" + f, [&flags, key](std::int64_t) { flags[key] = "true"; }, help);
            else
                sub->add_option_function<std::string>("--" + f, [&flags, key](const std::string& v) { flags[key] = v; },
                                                      help);
        }
    }
    auto usage = [&]() {
        std::ostringstream os;
        os << "usage: softctl <subcommand> [options]\nsubcommands:\n";
        for (const auto& sc : subcommands()) {
            os << "  " << sc.name;
            for (std::size_t i = std::string(sc.name).size(); i < 18; ++i) os << ' ';
            os << sc.help << '\n';
        }
        os << "run 'softctl <subcommand> --help' for options\n";
        return os.str();
    };
    if (args.empty()) {
        err << usage();
        return kExitUserError;
    }
    if (args.size() == 1 && (args[0] == "--help" || args[0] == "-h" || args[0] == "help")) {
        out << usage();
        return kExitOk;
    }
    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        const auto subs = app.get_subcommands();
        out << (subs.empty() ? usage() : subs.front()->help());
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "softctl: " << e.what() << '\n' << usage();
        return kExitUserError;
    }
    const CLI::App* chosen = app.get_subcommands().front();
    const Subcommand& sc = *by_app.at(chosen->get_name());
    try {
        ConfigMap cfg;
        if (!manifest_path.empty()) cfg = load_manifest_config(manifest_path);
        if (!config_path.empty()) {
            std::ifstream f(config_path);
            if (!f) throw UsageError("cannot open config file '" + config_path + "'");
            for (auto& [k, v] : parse_config(f, config_path)) cfg[k] = v;
        }
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos || eq == 0) throw UsageError("--set expects NAME=VALUE, got '" + s + "'");
            cfg["param." + trim(s.substr(0, eq))] = trim(s.substr(eq + 1));
        }
        for (const auto& [k, v] : flags) cfg[k] = v;
        Run run{sc.name, Settings(std::move(cfg)), out, 0, Json::object(), std::nullopt, std::nullopt};
        const std::size_t workers = run.settings.count("workers", default_workers(), 1);
        set_default_workers(workers);
        run.workers = workers;
        return sc.run(run);
    } catch (const std::exception& e) {
        err << "softctl " << sc.name << ": " << e.what() << '\n';
        return exit_for(e);
    }
}

}  // namespace softctl::cli
