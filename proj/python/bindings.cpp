#include <pybind11/pybind11.h>
#include <pybind11/numpy.h>
#include <pybind11/stl.h>

#include <sstream>

#include "softctl/cli.hpp"
#include "softctl/error.hpp"
#include "softctl/grid.hpp"
#include "softctl/hjb.hpp"
#include "softctl/kernel.hpp"
#include "softctl/mdp.hpp"
#include "softctl/problem.hpp"
#include "softctl/rates.hpp"
#include "softctl/sim.hpp"

namespace py = pybind11;
using namespace softctl;

namespace {

using Array = py::array_t<double>;

Array to_array(std::span<const double> v) {
    Array a(static_cast<py::ssize_t>(v.size()));
    std::copy(v.begin(), v.end(), a.mutable_data());
    return a;
}

Array to_array(const ScalarField& f) { return to_array(f.values()); }

Array to_array(const PolicyField& pi) {
    Array a({static_cast<py::ssize_t>(pi.states()), static_cast<py::ssize_t>(pi.controls())});
    std::copy(pi.values().begin(), pi.values().end(), a.mutable_data());
    return a;
}

PolicyField to_policy(const GridPair& g, const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2 || static_cast<std::size_t>(a.shape(0)) != g.state.size() ||
        static_cast<std::size_t>(a.shape(1)) != g.control.size())
        throw DimensionError("policy must have shape (state nodes, control nodes)");
    return PolicyField(g, std::vector<double>(a.data(), a.data() + a.size()));
}

State to_state(const std::vector<double>& x) {
    if (x.empty() || x.size() > 2) throw DimensionError("x0 needs 1 or 2 coordinates");
    return State{x[0], x.size() > 1 ? x[1] : 0.0};
}

py::dict fit_dict(const LogLogFit& f) {
    py::dict d;
    d["slope"] = f.slope;
    d["intercept"] = f.intercept;
    d["r2"] = f.r2;
    d["points"] = f.points;
    return d;
}

py::dict record_dict(const ErrorRecord& r) {
    py::dict d;
    d["h"] = r.h;
    d["lambda"] = r.lambda;
    d["state_nodes"] = r.state_nodes;
    d["control_nodes"] = r.control_nodes;
    d["ok"] = r.ok;
    d["cause"] = r.cause;
    d["err_V_vs_Vh"] = r.err_V_vs_Vh;
    d["err_plugin_cont"] = r.err_plugin_cont;
    d["err_plugin_disc"] = r.err_plugin_disc;
    d["err_to_classical"] = r.err_to_classical;
    d["err_classical_vs_cont"] = r.err_classical_vs_cont;
    d["pi_h_sup"] = r.pi_h_sup;
    d["pi_sup"] = r.pi_sup;
    d["pi_h_sup_lambda"] = r.pi_h_sup_lambda;
    d["sign_violation_cont"] = r.sign_violation_cont;
    d["sign_violation_disc"] = r.sign_violation_disc;
    d["signs_ok"] = r.signs_ok;
    d["triangle_ok"] = r.triangle_ok;
    return d;
}

}  // namespace

PYBIND11_MODULE(_softctl, m) {
    m.doc() = "Entropy-regularized control: soft MDP, exploratory HJB, simulation and rate studies";

    auto base = py::register_exception<Error>(m, "SoftctlError");
    py::register_exception<ParameterError>(m, "ParameterError", base.ptr());
    py::register_exception<InvalidProblemError>(m, "InvalidProblemError", base.ptr());
    py::register_exception<RegistryError>(m, "RegistryError", base.ptr());
    py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
    py::register_exception<DomainError>(m, "DomainError", base.ptr());
    py::register_exception<ConvergenceError>(m, "ConvergenceError", base.ptr());
    py::register_exception<KernelBuildError>(m, "KernelBuildError", base.ptr());
    py::register_exception<ModeError>(m, "ModeError", base.ptr());

    py::class_<ProblemSpec>(m, "Problem")
        .def(py::init([](const std::string& name, const Overrides& params) { return builtin_problem(name, params); }),
             py::arg("name"), py::arg("params") = Overrides{})
        .def_readonly("name", &ProblemSpec::name)
        .def_readonly("dim", &ProblemSpec::dim)
        .def_readonly("beta", &ProblemSpec::discount_beta)
        .def_readonly("parameters", &ProblemSpec::parameters)
        .def_property_readonly("control_bounds",
                               [](const ProblemSpec& s) { return std::make_pair(s.control_set.lower, s.control_set.upper); })
        .def("reward", [](const ProblemSpec& s, const std::vector<double>& x, double u) { return s.reward(to_state(x), u); })
        .def("__repr__", [](const ProblemSpec& s) { return "<Problem " + s.name + ">"; });
    m.def("problem_names", &builtin_problem_names);

    py::class_<GridPair>(m, "Grid")
        .def(py::init([](const ProblemSpec& s, std::size_t n, std::size_t m_) { return GridPair::for_problem(s, n, m_); }),
             py::arg("problem"), py::arg("state_nodes"), py::arg("control_nodes"))
        .def_property_readonly("state_nodes", [](const GridPair& g) { return g.state.size(); })
        .def_property_readonly("control_nodes", [](const GridPair& g) { return g.control.size(); })
        .def_property_readonly("states", [](const GridPair& g) {
            std::vector<double> x(g.state.size());
            for (std::size_t i = 0; i < x.size(); ++i) x[i] = g.state.point(i)[0];
            return to_array(x);
        })
        .def_property_readonly("controls", [](const GridPair& g) {
            std::vector<double> u(g.control.size());
            for (std::size_t k = 0; k < u.size(); ++k) u[k] = g.control.node(k);
            return to_array(u);
        });

    m.def(
        "validate",
        [](const ProblemSpec& s, const GridPair& g, std::optional<double> h) {
            const AssumptionReport r = validate_assumptions(s, g, h);
            py::list checks;
            for (const auto& c : r.checks) checks.append(py::make_tuple(c.name, c.pass, c.detail));
            py::dict d;
            d["checks"] = checks;
            d["h1"] = r.h1();
            d["h2"] = r.h2();
            d["a0"] = r.a0;
            d["beta_condition"] = r.beta_condition;
            return d;
        },
        py::arg("problem"), py::arg("grid"), py::arg("h") = py::none());

    m.def(
        "solve_mdp",
        [](const ProblemSpec& s, const GridPair& g, double h, double lambda, std::size_t fp_substeps,
           std::optional<double> tol) {
            SolveParams p = SolveParams::make(s, h, lambda, g.state.size(), g.control.size(), fp_substeps);
            if (tol) p.fixed_point_tol = *tol;
            FixedPointResult v;
            GibbsPolicy pi;
            {
                py::gil_scoped_release release;
                const TransitionKernel K = build_kernel(s, p, g);
                v = solve_vh(s, p, K);
                pi = gibbs_policy(s, p, K, v.value);
            }
            py::dict d;
            d["value"] = to_array(v.value);
            d["policy"] = to_array(pi.policy);
            d["iterations"] = v.iterations;
            d["residual"] = v.residual;
            return d;
        },
        py::arg("problem"), py::arg("grid"), py::arg("h"), py::arg("lam"), py::arg("fp_substeps") = 16,
        py::arg("tol") = py::none());

    m.def(
        "solve_hjb",
        [](const ProblemSpec& s, const GridPair& g, double lambda, std::optional<double> tol) {
            HjbOptions o;
            o.tol = tol;
            const ExploratorySolution r = solve_exploratory_hjb(s, lambda, g, o);
            py::dict d;
            d["value"] = to_array(r.value);
            d["policy"] = to_array(r.policy);
            d["iterations"] = r.iterations;
            d["residual_history"] = r.residual_history;
            return d;
        },
        py::arg("problem"), py::arg("grid"), py::arg("lam"), py::arg("tol") = py::none());

    m.def(
        "solve_classical",
        [](const ProblemSpec& s, const GridPair& g) {
            const ClassicalSolution r = solve_classical_hjb(s, g);
            py::dict d;
            d["value"] = to_array(r.value);
            d["feedback"] = to_array(r.feedback);
            d["iterations"] = r.iterations;
            return d;
        },
        py::arg("problem"), py::arg("grid"));

    m.def(
        "evaluate_policy",
        [](const ProblemSpec& s, const GridPair& g, double lambda, const py::array_t<double, py::array::c_style | py::array::forcecast>& pi,
           bool with_entropy) { return to_array(evaluate_policy_continuous(s, lambda, g, to_policy(g, pi), with_entropy)); },
        py::arg("problem"), py::arg("grid"), py::arg("lam"), py::arg("policy"), py::arg("with_entropy") = true);

    m.def(
        "simulate",
        [](const ProblemSpec& s, const GridPair& g, double h, double lambda,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& pi, const std::vector<double>& x0,
           std::size_t paths, std::uint64_t seed, bool antithetic, const std::string& layer) {
            const PolicyField policy = to_policy(g, pi);
            RolloutConfig cfg;
            cfg.paths = paths;
            cfg.rng_seed = seed;
            cfg.antithetic = antithetic;
            cfg.step_h = h;
            PathEstimate e;
            if (layer == "discrete")
                e = rollout_discrete(s, SolveParams::make(s, h, lambda, g.state.size(), g.control.size()), policy, to_state(x0), cfg);
            else if (layer == "continuous")
                e = rollout_continuous(s, lambda, policy, to_state(x0), cfg);
            else
                throw ParameterError("layer must be 'discrete' or 'continuous'");
            py::dict d;
            d["mean"] = e.mean;
            d["std_error"] = e.std_error;
            d["paths_used"] = e.paths_used;
            d["tail_bound"] = e.tail_bound;
            d["horizon"] = e.horizon;
            return d;
        },
        py::arg("problem"), py::arg("grid"), py::arg("h"), py::arg("lam"), py::arg("policy"), py::arg("x0"),
        py::arg("paths") = 10000, py::arg("seed") = 0, py::arg("antithetic") = false, py::arg("layer") = "discrete");

    m.def(
        "sweep",
        [](const ProblemSpec& s, const std::vector<double>& hs, const std::vector<double>& lambdas, std::size_t state_nodes,
           std::size_t control_nodes, std::size_t workers, bool classical) {
            SweepOptions o;
            o.h_list = hs;
            o.lambda_list = lambdas;
            o.state_nodes = state_nodes;
            o.control_nodes = control_nodes;
            o.workers = workers;
            o.classical = classical;
            RateReport rep;
            {
                py::gil_scoped_release release;
                rep = run_sweep(s, o);
            }
            py::list records, fits;
            for (const auto& r : rep.records) records.append(record_dict(r));
            for (const auto& f : rep.fits) {
                py::dict d = fit_dict(f.fit);
                d["metric"] = f.metric;
                d["against"] = f.against;
                d["fixed_name"] = f.fixed_name;
                d["fixed_value"] = f.fixed_value;
                fits.append(d);
            }
            py::dict d;
            d["records"] = records;
            d["fits"] = fits;
            return d;
        },
        py::arg("problem"), py::arg("h"), py::arg("lam"), py::arg("state_nodes") = 256, py::arg("control_nodes") = 17,
        py::arg("workers") = 0, py::arg("classical") = true);

    m.def("fit_loglog", [](const std::vector<double>& x, const std::vector<double>& y) { return fit_dict(fit_loglog(x, y)); },
          py::arg("x"), py::arg("y"));
    m.def("parse_sweep_list", &parse_sweep_list, py::arg("text"));

    m.def(
        "cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = cli::dispatch(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Run a softctl subcommand; returns (exit code, stdout, stderr).");
}
