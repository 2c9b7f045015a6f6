#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "softctl/problem.hpp"

namespace softctl {

struct LogLogFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    std::size_t points = 0;
};

/// Ordinary least squares of ln y on ln x. Needs >= 2 points with distinct
/// x; nonpositive inputs raise DomainError.
LogLogFit fit_loglog(const std::vector<double>& xs, const std::vector<double>& ys);

struct SweepOptions {
    std::vector<double> h_list;
    std::vector<double> lambda_list;
    std::size_t state_nodes = 256;
    std::size_t control_nodes = 17;
    std::size_t fp_substeps = 16;
    std::size_t workers = 0;
    /// Repeat every cell on twice the state nodes and flag changes above 20%.
    bool refinement_check = false;
    /// Skip the classical solve (err_to_classical and err_classical_vs_cont stay unset).
    bool classical = true;
};

/// One (h, lambda) cell. Errors are sup norms over the state nodes.
struct ErrorRecord {
    double h = 0.0;
    double lambda = 0.0;
    std::size_t state_nodes = 0;
    std::size_t control_nodes = 0;
    bool ok = true;
    std::string cause;  ///< failure message when !ok

    double err_V_vs_Vh = 0.0;      ///< |V - V_h|
    double err_plugin_cont = 0.0;  ///< |V[pi*_h] - V|
    double err_plugin_disc = 0.0;  ///< |V_h[pi*] - V_h|
    std::optional<double> err_to_classical;       ///< |v - V[pi*_h]|
    std::optional<double> err_classical_vs_cont;  ///< |v - v[pi*]| (no entropy)

    double pi_h_sup = 0.0;
    double pi_sup = 0.0;
    double pi_h_sup_lambda = 0.0;  ///< |pi*_h|_inf lambda^N
    double vh_residual = 0.0;
    double hjb_residual = 0.0;
    std::size_t vh_iterations = 0;
    std::size_t hjb_iterations = 0;

    double sign_violation_cont = 0.0;  ///< max over nodes of V[pi*_h] - V
    double sign_violation_disc = 0.0;  ///< max over nodes of V_h[pi*] - V_h
    bool signs_ok = true;              ///< both violations <= 2 tol
    bool triangle_ok = true;
    std::optional<double> refinement_change;  ///< max relative change on 2x nodes
    std::optional<bool> refinement_ok;
};

struct FitEntry {
    std::string metric;
    std::string against;  ///< "h|ln h|", "h", "lambda|ln lambda|" or "lambda"
    std::string fixed_name;
    double fixed_value = 0.0;
    LogLogFit fit;
    std::vector<double> xs;
    std::vector<double> ys;
};

struct RateReport {
    std::vector<ErrorRecord> records;
    std::vector<FitEntry> fits;
    bool fits_absent() const { return fits.empty(); }
};

/// Solves every (h, lambda) cell of the sweep, computes the cross-layer
/// errors and fits their rates along every line of >= 4 surviving points.
RateReport run_sweep(const ProblemSpec& spec, const SweepOptions& options);

struct ScheduleRow {
    double h = 0.0;
    double lambda = 0.0;
    ErrorRecord record;
};

struct ScheduleTable {
    std::vector<ScheduleRow> rows;
    bool decreasing = true;           ///< err_to_classical strictly decreasing in h order
    std::optional<LogLogFit> fit;     ///< vs h^{1/2} |ln h|, when >= 2 points
};

/// Errors along lambda = h^{1/(N+1)} with N = 1 (rows sorted by decreasing h).
ScheduleTable schedule_eval(const ProblemSpec& spec, const std::vector<double>& h_list,
                            const SweepOptions& options);

/// Column order of rates.csv.
const std::vector<std::string>& rates_csv_columns();
void write_rates_csv(std::ostream& os, const std::vector<ErrorRecord>& records);
void write_fits_json(std::ostream& os, const RateReport& report);
/// Two columns (abscissa, error), one line per point.
void write_fit_dat(std::ostream& os, const FitEntry& fit);
/// File stem for a fit's .dat file.
std::string fit_file_stem(const FitEntry& fit);
void write_schedule_csv(std::ostream& os, const ScheduleTable& table);

/// Expands "2^-3..2^-8" (geometric halving, inclusive), "a,b,c" or a single
/// number. Throws ParameterError on malformed text.
std::vector<double> parse_sweep_list(const std::string& text);

}  // namespace softctl
