#include "softctl/rates.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <ostream>

#include <json.hpp>

#include "softctl/error.hpp"
#include "softctl/grid.hpp"
#include "softctl/hjb.hpp"
#include "softctl/kernel.hpp"
#include "softctl/mdp.hpp"
#include "softctl/parallel.hpp"

namespace softctl {

LogLogFit fit_loglog(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw DimensionError("fit needs as many ordinates as abscissae");
    if (xs.size() < 2) throw ParameterError("fit needs at least 2 points");
    const auto n = static_cast<double>(xs.size());
    std::vector<double> lx(xs.size());
    std::vector<double> ly(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (!(xs[i] > 0.0) || !(ys[i] > 0.0)) throw DomainError("log-log fit needs positive data");
        lx[i] = std::log(xs[i]);
        ly[i] = std::log(ys[i]);
    }
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        mx += lx[i];
        my += ly[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0;
    double sxy = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
        syy += (ly[i] - my) * (ly[i] - my);
    }
    if (!(sxx > 0.0)) throw ParameterError("fit abscissae must not all coincide");
    LogLogFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        const double e = ly[i] - (fit.intercept + fit.slope * lx[i]);
        ss_res += e * e;
    }
    fit.r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
    fit.points = xs.size();
    return fit;
}

namespace {

struct ContinuousLayer {
    bool ok = true;
    std::string cause;
    ExploratorySolution solution;
    std::optional<ScalarField> unregularized;  // v[pi*]
};

double max_diff(const ScalarField& a, const ScalarField& b) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, a[i] - b[i]);
    return m;
}

using Getter = std::function<std::optional<double>(const ErrorRecord&)>;

const std::vector<std::pair<std::string, Getter>>& metrics() {
    static const std::vector<std::pair<std::string, Getter>> list = {
        {"err_V_vs_Vh", [](const ErrorRecord& r) -> std::optional<double> { return r.err_V_vs_Vh; }},
        {"err_plugin_cont", [](const ErrorRecord& r) -> std::optional<double> { return r.err_plugin_cont; }},
        {"err_plugin_disc", [](const ErrorRecord& r) -> std::optional<double> { return r.err_plugin_disc; }},
        {"err_to_classical", [](const ErrorRecord& r) { return r.err_to_classical; }},
        {"err_classical_vs_cont", [](const ErrorRecord& r) { return r.err_classical_vs_cont; }},
    };
    return list;
}

double h_log(double h) { return h * std::abs(std::log(h)); }

void add_fit(std::vector<FitEntry>& out, const std::string& metric, const std::string& against,
             const std::string& fixed_name, double fixed_value, std::vector<double> xs, std::vector<double> ys) {
    try {
        FitEntry e{metric, against, fixed_name, fixed_value, fit_loglog(xs, ys), std::move(xs), std::move(ys)};
        out.push_back(std::move(e));
    } catch (const Error&) {
        // Zero errors or a degenerate abscissa: no fit for this line.
    }
}

std::vector<FitEntry> fit_lines(const std::vector<ErrorRecord>& records) {
    constexpr std::size_t kMinPoints = 4;
    std::vector<double> hs;
    std::vector<double> lambdas;
    for (const auto& r : records) {
        if (std::find(hs.begin(), hs.end(), r.h) == hs.end()) hs.push_back(r.h);
        if (std::find(lambdas.begin(), lambdas.end(), r.lambda) == lambdas.end()) lambdas.push_back(r.lambda);
    }
    std::vector<FitEntry> fits;
    for (const auto& [name, get] : metrics()) {
        // Fixed lambda, varying h. The continuous-only metric does not depend on h.
        if (name != "err_classical_vs_cont") {
            for (double lam : lambdas) {
                std::vector<double> x_log, x_raw, ys;
                for (const auto& r : records) {
                    if (!r.ok || r.lambda != lam) continue;
                    const auto v = get(r);
                    if (!v) continue;
                    x_log.push_back(h_log(r.h));
                    x_raw.push_back(r.h);
                    ys.push_back(*v);
                }
                if (ys.size() < kMinPoints) continue;
                add_fit(fits, name, "h|ln h|", "lambda", lam, x_log, ys);
                add_fit(fits, name, "h", "lambda", lam, x_raw, ys);
            }
        }
        for (double h : hs) {
            std::vector<double> x_log, x_raw, ys;
            for (const auto& r : records) {
                if (!r.ok || r.h != h) continue;
                const auto v = get(r);
                if (!v) continue;
                x_log.push_back(h_log(r.lambda));
                x_raw.push_back(r.lambda);
                ys.push_back(*v);
            }
            if (ys.size() < kMinPoints) continue;
            add_fit(fits, name, "lambda|ln lambda|", "h", h, x_log, ys);
            add_fit(fits, name, "lambda", "h", h, x_raw, ys);
        }
    }
    return fits;
}

std::vector<ErrorRecord> sweep_records(const ProblemSpec& spec, const SweepOptions& options) {
    if (spec.mode != ProblemMode::full) throw ModeError("rate sweeps need a full-mode problem");
    for (double h : options.h_list)
        if (!(h > 0.0)) throw ParameterError("step sizes must be positive");
    for (double lam : options.lambda_list)
        if (!(lam > 0.0)) throw ParameterError("temperatures must be positive");
    const GridPair grid = GridPair::for_problem(spec, options.state_nodes, options.control_nodes);
    const std::size_t nh = options.h_list.size();
    const std::size_t nl = options.lambda_list.size();
    const double hjb_tol = 1e-8 * std::max(1.0, reward_sup(spec, grid) / spec.discount_beta);

    std::optional<ScalarField> classical;
    std::string classical_cause;
    if (options.classical) {
        try {
            classical = solve_classical_hjb(spec, grid).value;
        } catch (const Error& e) {
            classical_cause = e.what();
        }
    }

    std::vector<ContinuousLayer> layers(nl);
    parallel_for(nl, options.workers, [&](std::size_t j) {
        const double lam = options.lambda_list[j];
        try {
            layers[j].solution = solve_exploratory_hjb(spec, lam, grid);
            if (classical) layers[j].unregularized = evaluate_policy_continuous(spec, lam, grid, layers[j].solution.policy, false);
        } catch (const Error& e) {
            layers[j].ok = false;
            layers[j].cause = e.what();
        }
    });

    std::vector<ErrorRecord> records(nh * nl);
    parallel_for(nh, options.workers, [&](std::size_t i) {
        const double h = options.h_list[i];
        std::optional<TransitionKernel> kernel;
        std::string kernel_cause;
        for (std::size_t j = 0; j < nl; ++j) {
            const double lam = options.lambda_list[j];
            ErrorRecord& rec = records[i * nl + j];
            rec.h = h;
            rec.lambda = lam;
            rec.state_nodes = options.state_nodes;
            rec.control_nodes = options.control_nodes;
            try {
                const SolveParams params =
                    SolveParams::make(spec, h, lam, options.state_nodes, options.control_nodes, options.fp_substeps);
                params.validate();
                if (!kernel && kernel_cause.empty()) {
                    try {
                        kernel = build_kernel(spec, params, grid, 1);
                    } catch (const Error& e) {
                        kernel_cause = e.what();
                    }
                }
                if (!kernel) throw KernelBuildError(kernel_cause);
                const ContinuousLayer& layer = layers[j];
                if (!layer.ok) throw ConvergenceError(layer.cause, 0.0);
                const ScalarField& V = layer.solution.value;

                const FixedPointResult vh = solve_vh(spec, params, *kernel);
                const GibbsPolicy pih = gibbs_policy(spec, params, *kernel, vh.value);
                const ScalarField V_pih = evaluate_policy_continuous(spec, lam, grid, pih.policy, true);
                const FixedPointResult vh_pi = evaluate_policy_discrete(spec, params, *kernel, layer.solution.policy);

                rec.err_V_vs_Vh = sup_norm_diff(V, vh.value);
                rec.err_plugin_cont = sup_norm_diff(V_pih, V);
                rec.err_plugin_disc = sup_norm_diff(vh_pi.value, vh.value);
                if (classical) {
                    rec.err_to_classical = sup_norm_diff(*classical, V_pih);
                    rec.err_classical_vs_cont = sup_norm_diff(*classical, *layer.unregularized);
                }
                rec.pi_h_sup = pih.policy.sup();
                rec.pi_sup = layer.solution.policy.sup();
                rec.pi_h_sup_lambda = rec.pi_h_sup * lam;  // N = 1
                rec.vh_residual = vh.residual;
                rec.hjb_residual = layer.solution.residual_history.back();
                rec.vh_iterations = vh.iterations;
                rec.hjb_iterations = layer.solution.iterations;
                rec.sign_violation_cont = max_diff(V_pih, V);
                rec.sign_violation_disc = max_diff(vh_pi.value, vh.value);
                rec.signs_ok = rec.sign_violation_cont <= 2.0 * hjb_tol &&
                               rec.sign_violation_disc <= 2.0 * params.fixed_point_tol;
                rec.triangle_ok = rec.err_V_vs_Vh <= rec.err_plugin_cont + sup_norm_diff(V_pih, vh.value);
            } catch (const Error& e) {
                rec.ok = false;
                rec.cause = e.what();
            }
        }
    });
    if (options.classical && !classical) {
        for (auto& rec : records)
            if (rec.ok) rec.cause = "classical solve failed: " + classical_cause;
    }
    return records;
}

}  // namespace

RateReport run_sweep(const ProblemSpec& spec, const SweepOptions& options) {
    RateReport report;
    report.records = sweep_records(spec, options);
    if (options.refinement_check) {
        SweepOptions fine = options;
        fine.state_nodes *= 2;
        fine.refinement_check = false;
        const auto refined = sweep_records(spec, fine);
        for (std::size_t c = 0; c < report.records.size(); ++c) {
            ErrorRecord& rec = report.records[c];
            const ErrorRecord& ref = refined[c];
            if (!rec.ok || !ref.ok) continue;
            double change = 0.0;
            for (const auto& [name, get] : metrics()) {
                const auto a = get(rec);
                const auto b = get(ref);
                if (!a || !b) continue;
                const double scale = std::max(std::abs(*a), 1e-300);
                change = std::max(change, std::abs(*b - *a) / scale);
            }
            rec.refinement_change = change;
            rec.refinement_ok = change <= 0.2;
        }
    }
    report.fits = fit_lines(report.records);
    return report;
}

ScheduleTable schedule_eval(const ProblemSpec& spec, const std::vector<double>& h_list, const SweepOptions& options) {
    ScheduleTable table;
    if (h_list.empty()) return table;
    std::vector<double> hs = h_list;
    std::sort(hs.begin(), hs.end(), std::greater<>());
    hs.erase(std::unique(hs.begin(), hs.end()), hs.end());
    // lambda differs per row, so each row is its own one-cell sweep.
    for (double h : hs) {
        SweepOptions cell = options;
        cell.h_list = {h};
        cell.lambda_list = {std::sqrt(h)};
        cell.classical = true;
        RateReport rep = run_sweep(spec, cell);
        table.rows.push_back({h, std::sqrt(h), rep.records.front()});
    }
    std::vector<double> xs;
    std::vector<double> ys;
    for (std::size_t k = 0; k < table.rows.size(); ++k) {
        const ErrorRecord& rec = table.rows[k].record;
        if (!rec.ok || !rec.err_to_classical) {
            table.decreasing = false;
            continue;
        }
        if (k > 0) {
            const ErrorRecord& prev = table.rows[k - 1].record;
            if (prev.err_to_classical && !(*rec.err_to_classical < *prev.err_to_classical)) table.decreasing = false;
        }
        xs.push_back(std::sqrt(table.rows[k].h) * std::abs(std::log(table.rows[k].h)));
        ys.push_back(*rec.err_to_classical);
    }
    if (xs.size() >= 2) {
        try {
            table.fit = fit_loglog(xs, ys);
        } catch (const Error&) {
        }
    }
    return table;
}

// ------------------------------------------------------------------ output

namespace {

std::string opt_text(const std::optional<double>& v) { return v ? format_double(*v) : ""; }
std::string opt_text(const std::optional<bool>& v) { return v ? (*v ? "1" : "0") : ""; }

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c == '\n' ? ' ' : c;
    }
    return out + "\"";
}

void write_record_fields(std::ostream& os, const ErrorRecord& r) {
    os << format_double(r.h) << ',' << format_double(r.lambda) << ',' << r.state_nodes << ',' << r.control_nodes << ','
       << format_double(r.err_V_vs_Vh) << ',' << format_double(r.err_plugin_cont) << ','
       << format_double(r.err_plugin_disc) << ',' << opt_text(r.err_to_classical) << ','
       << opt_text(r.err_classical_vs_cont) << ',' << format_double(r.pi_h_sup) << ',' << format_double(r.pi_sup)
       << ',' << format_double(r.pi_h_sup_lambda) << ',' << format_double(r.vh_residual) << ','
       << format_double(r.hjb_residual) << ',' << r.vh_iterations << ',' << r.hjb_iterations << ','
       << format_double(r.sign_violation_cont) << ',' << format_double(r.sign_violation_disc) << ','
       << (r.signs_ok ? 1 : 0) << ',' << (r.triangle_ok ? 1 : 0) << ',' << opt_text(r.refinement_change) << ','
       << opt_text(r.refinement_ok) << ',' << (r.ok ? "ok" : "failed") << ',' << csv_escape(r.cause);
}

}  // namespace

const std::vector<std::string>& rates_csv_columns() {
    static const std::vector<std::string> cols = {
        "h",
        "lambda",
        "state_nodes",
        "control_nodes",
        "err_V_vs_Vh",
        "err_plugin_cont",
        "err_plugin_disc",
        "err_to_classical",
        "err_classical_vs_cont",
        "pi_h_sup",
        "pi_sup",
        "pi_h_sup_lambda",
        "vh_residual",
        "hjb_residual",
        "vh_iterations",
        "hjb_iterations",
        "sign_violation_cont",
        "sign_violation_disc",
        "signs_ok",
        "triangle_ok",
        "refinement_change",
        "refinement_ok",
        "status",
        "cause",
    };
    return cols;
}

void write_rates_csv(std::ostream& os, const std::vector<ErrorRecord>& records) {
    const auto& cols = rates_csv_columns();
    for (std::size_t c = 0; c < cols.size(); ++c) os << (c ? "," : "") << cols[c];
    os << '\n';
    for (const auto& r : records) {
        write_record_fields(os, r);
        os << '\n';
    }
}

std::string fit_file_stem(const FitEntry& fit) {
    std::string against = fit.against == "h|ln h|" ? "hlogh"
                          : fit.against == "lambda|ln lambda|" ? "lamloglam"
                          : fit.against == "lambda" ? "lam"
                                                    : "h";
    std::string fixed = format_double(fit.fixed_value);
    return fit.metric + "_vs_" + against + "_" + (fit.fixed_name == "lambda" ? "lam" : "h") + fixed;
}

void write_fits_json(std::ostream& os, const RateReport& report) {
    nlohmann::ordered_json fits = nlohmann::ordered_json::array();
    for (const auto& f : report.fits) {
        nlohmann::ordered_json e;
        e["metric"] = f.metric;
        e["against"] = f.against;
        e["fixed"] = {{f.fixed_name, f.fixed_value}};
        e["slope"] = f.fit.slope;
        e["intercept"] = f.fit.intercept;
        e["r2"] = f.fit.r2;
        e["points"] = f.fit.points;
        e["data"] = fit_file_stem(f) + ".dat";
        fits.push_back(std::move(e));
    }
    nlohmann::ordered_json doc;
    doc["fits_absent"] = report.fits_absent();
    doc["fits"] = std::move(fits);
    os << doc.dump(2) << '\n';
}

void write_fit_dat(std::ostream& os, const FitEntry& fit) {
    os << "# " << fit.against << ' ' << fit.metric << " (" << fit.fixed_name << " = " << format_double(fit.fixed_value)
       << ")\n";
    for (std::size_t i = 0; i < fit.xs.size(); ++i) os << format_double(fit.xs[i]) << ' ' << format_double(fit.ys[i]) << '\n';
}

void write_schedule_csv(std::ostream& os, const ScheduleTable& table) {
    os << "h,lambda,err_to_classical,err_V_vs_Vh,err_plugin_cont,err_plugin_disc,status\n";
    for (const auto& row : table.rows) {
        const auto& r = row.record;
        os << format_double(row.h) << ',' << format_double(row.lambda) << ',' << opt_text(r.err_to_classical) << ','
           << format_double(r.err_V_vs_Vh) << ',' << format_double(r.err_plugin_cont) << ','
           << format_double(r.err_plugin_disc) << ',' << (r.ok ? "ok" : "failed") << '\n';
    }
}

// ------------------------------------------------------------- sweep lists

namespace {

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

double parse_number(const std::string& raw) {
    const std::string s = trim(raw);
    if (s.empty()) throw ParameterError("empty number in sweep list");
    const auto caret = s.find('^');
    if (caret != std::string::npos) {
        const double base = parse_number(s.substr(0, caret));
        const double expo = parse_number(s.substr(caret + 1));
        return std::pow(base, expo);
    }
    double v = 0.0;
    const char* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || ptr != end || !std::isfinite(v)) throw ParameterError("malformed number '" + s + "'");
    return v;
}

}  // namespace

std::vector<double> parse_sweep_list(const std::string& text) {
    std::vector<double> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto comma = text.find(',', start);
        const std::string item = trim(text.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
        const auto dots = item.find("..");
        if (dots == std::string::npos) {
            out.push_back(parse_number(item));
        } else {
            const double a = parse_number(item.substr(0, dots));
            const double b = parse_number(item.substr(dots + 2));
            if (!(a > 0.0) || !(b > 0.0)) throw ParameterError("range '" + item + "' needs positive ends");
            const double steps = std::log2(a / b);
            const double rounded = std::round(steps);
            if (std::abs(steps - rounded) > 1e-9)
                throw ParameterError("range '" + item + "' is not a whole number of halvings");
            const auto count = static_cast<long>(std::abs(rounded));
            const double factor = rounded >= 0 ? 0.5 : 2.0;
            double v = a;
            for (long k = 0; k <= count; ++k) {
                out.push_back(v);
                v *= factor;
            }
        }
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

}  // namespace softctl
