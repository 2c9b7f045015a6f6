#include "softctl/grid.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "softctl/error.hpp"

namespace softctl {

// ---------------------------------------------------------------- StateGrid

StateGrid::StateGrid(int dim, std::array<Axis, 2> axes, Topology topology)
    : dim_(dim), axes_(axes), topology_(topology) {
    if (dim != 1 && dim != 2) throw ParameterError("state dimension must be 1 or 2");
    for (int a = 0; a < dim; ++a) {
        const Axis& ax = axes_[static_cast<std::size_t>(a)];
        if (ax.nodes < 2) throw ParameterError("state grid needs at least 2 nodes per axis");
        if (!(ax.length > 0.0) || !std::isfinite(ax.length))
            throw ParameterError("state axis length must be positive");
    }
    if (dim == 1) axes_[1] = Axis{0.0, 1.0, 1};
}

StateGrid StateGrid::for_problem(const ProblemSpec& spec, std::size_t nodes) {
    std::array<Axis, 2> axes{};
    for (int a = 0; a < spec.dim; ++a) {
        const auto& dom = spec.domain[static_cast<std::size_t>(a)];
        axes[static_cast<std::size_t>(a)] = Axis{dom.lower, dom.length, nodes};
    }
    return StateGrid(spec.dim, axes, spec.topology);
}

std::size_t StateGrid::size() const {
    return dim_ == 1 ? axes_[0].nodes : axes_[0].nodes * axes_[1].nodes;
}

double StateGrid::spacing(int a) const {
    const Axis& ax = axis(a);
    const auto n = static_cast<double>(ax.nodes);
    return periodic() ? ax.length / n : ax.length / (n - 1.0);
}

double StateGrid::coordinate(int a, std::size_t k) const {
    return axis(a).lower + static_cast<double>(k) * spacing(a);
}

std::array<std::size_t, 2> StateGrid::multi_index(std::size_t flat) const {
    const std::size_t n0 = axes_[0].nodes;
    return {flat % n0, flat / n0};
}

std::size_t StateGrid::flat_index(std::size_t i0, std::size_t i1) const {
    return i0 + axes_[0].nodes * i1;
}

State StateGrid::point(std::size_t flat) const {
    const auto idx = multi_index(flat);
    State x{coordinate(0, idx[0]), 0.0};
    if (dim_ == 2) x[1] = coordinate(1, idx[1]);
    return x;
}

std::size_t StateGrid::neighbor(std::size_t flat, int a, int offset) const {
    auto idx = multi_index(flat);
    const auto n = static_cast<long long>(axis(a).nodes);
    long long k = static_cast<long long>(idx[static_cast<std::size_t>(a)]) + offset;
    if (periodic()) {
        k = ((k % n) + n) % n;
    } else if (k < 0 || k >= n) {
        return npos;
    }
    idx[static_cast<std::size_t>(a)] = static_cast<std::size_t>(k);
    return flat_index(idx[0], idx[1]);
}

// -------------------------------------------------------------- ControlGrid

ControlGrid::ControlGrid(double lower, double upper, std::size_t nodes)
    : lower_(lower), upper_(upper), nodes_(nodes) {
    if (nodes < 2) throw ParameterError("control grid needs at least 2 nodes");
    if (!(upper > lower)) throw ParameterError("control box must have positive volume");
    const double du = spacing();
    weights_.assign(nodes, du);
    weights_.front() = 0.5 * du;
    weights_.back() = 0.5 * du;
}

double ControlGrid::node(std::size_t k) const {
    if (k + 1 == nodes_) return upper_;
    return lower_ + static_cast<double>(k) * spacing();
}

double ControlGrid::weight(std::size_t k) const { return weights_[k]; }

GridPair GridPair::for_problem(const ProblemSpec& spec, std::size_t state_nodes,
                               std::size_t control_nodes) {
    return GridPair{StateGrid::for_problem(spec, state_nodes),
                    ControlGrid(spec.control_set.lower, spec.control_set.upper, control_nodes)};
}

// -------------------------------------------------------------- ScalarField

ScalarField::ScalarField(StateGrid grid, std::vector<double> values)
    : grid_(std::move(grid)), values_(std::move(values)) {
    if (values_.size() != grid_.size())
        throw DimensionError("scalar field size does not match its grid");
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (!std::isfinite(values_[i]))
            throw DomainError("non-finite scalar field value at node " + std::to_string(i));
    }
}

ScalarField ScalarField::constant(const StateGrid& grid, double value) {
    return ScalarField(grid, std::vector<double>(grid.size(), value));
}

ScalarField ScalarField::sample(const StateGrid& grid,
                                const std::function<double(const State&)>& fn) {
    std::vector<double> values(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) values[i] = fn(grid.point(i));
    if (grid.periodic()) {
        double scale = 1.0;
        for (double v : values) scale = std::max(scale, std::abs(v));
        for (std::size_t i = 0; i < grid.size(); ++i) {
            for (int a = 0; a < grid.dim(); ++a) {
                State shifted = grid.point(i);
                shifted[static_cast<std::size_t>(a)] += grid.axis(a).length;
                if (std::abs(fn(shifted) - values[i]) > 1e-9 * scale)
                    throw DomainError("field is not periodic on the torus (node " +
                                      std::to_string(i) + ")");
            }
        }
    }
    return ScalarField(grid, std::move(values));
}

namespace {

void require_same_grid(const ScalarField& f, const ScalarField& g) {
    if (!(f.grid() == g.grid())) throw DimensionError("fields live on different grids");
}

}  // namespace

double sup_norm(const ScalarField& f) {
    double m = 0.0;
    for (double v : f.values()) m = std::max(m, std::abs(v));
    return m;
}

double sup_norm_diff(const ScalarField& f, const ScalarField& g) {
    require_same_grid(f, g);
    double m = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) m = std::max(m, std::abs(f[i] - g[i]));
    return m;
}

ScalarField operator-(const ScalarField& f, const ScalarField& g) {
    require_same_grid(f, g);
    std::vector<double> out(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) out[i] = f[i] - g[i];
    return ScalarField(f.grid(), std::move(out));
}

ScalarField operator+(const ScalarField& f, const ScalarField& g) {
    require_same_grid(f, g);
    std::vector<double> out(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) out[i] = f[i] + g[i];
    return ScalarField(f.grid(), std::move(out));
}

ScalarField operator*(double a, const ScalarField& f) {
    std::vector<double> out(f.values().begin(), f.values().end());
    for (double& v : out) v *= a;
    return ScalarField(f.grid(), std::move(out));
}

double GradientField::sup_norm() const {
    double m = 0.0;
    const std::size_t n = components[0].size();
    for (std::size_t i = 0; i < n; ++i) {
        double s = components[0][i] * components[0][i];
        if (grid.dim() == 2) s += components[1][i] * components[1][i];
        m = std::max(m, std::sqrt(s));
    }
    return m;
}

GradientField gradient(const ScalarField& f) {
    const StateGrid& grid = f.grid();
    GradientField g{grid, {}};
    for (int a = 0; a < grid.dim(); ++a) {
        if (grid.nodes(a) < 3) throw DimensionError("gradient needs at least 3 nodes per axis");
        auto& comp = g.components[static_cast<std::size_t>(a)];
        comp.assign(f.size(), 0.0);
        const double dx = grid.spacing(a);
        for (std::size_t i = 0; i < f.size(); ++i) {
            const std::size_t up = grid.neighbor(i, a, +1);
            const std::size_t down = grid.neighbor(i, a, -1);
            if (up != StateGrid::npos && down != StateGrid::npos) {
                comp[i] = (f[up] - f[down]) / (2.0 * dx);
            } else if (down == StateGrid::npos) {
                const std::size_t up2 = grid.neighbor(up, a, +1);
                comp[i] = (-3.0 * f[i] + 4.0 * f[up] - f[up2]) / (2.0 * dx);
            } else {
                const std::size_t down2 = grid.neighbor(down, a, -1);
                comp[i] = (3.0 * f[i] - 4.0 * f[down] + f[down2]) / (2.0 * dx);
            }
        }
    }
    if (grid.dim() == 1) g.components[1].assign(f.size(), 0.0);
    return g;
}

// -------------------------------------------------------------- PolicyField

PolicyField::PolicyField(GridPair grid, std::vector<double> values)
    : grid_(std::move(grid)), values_(std::move(values)) {
    const std::size_t m = grid_.control.size();
    if (values_.size() != grid_.state.size() * m)
        throw DimensionError("policy field size does not match its grid");
    const auto w = grid_.control.weights();
    for (std::size_t i = 0; i < grid_.state.size(); ++i) {
        double mass = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
            const double p = values_[i * m + k];
            if (!std::isfinite(p) || p < 0.0)
                throw DomainError("policy density negative or non-finite at node " +
                                  std::to_string(i));
            mass += w[k] * p;
        }
        if (std::abs(mass - 1.0) > 1e-10)
            throw DomainError("policy not normalized at node " + std::to_string(i));
    }
}

PolicyField PolicyField::uniform(const GridPair& grid) {
    return PolicyField(grid, std::vector<double>(grid.state.size() * grid.control.size(),
                                                 1.0 / grid.control.volume()));
}

PolicyField PolicyField::normalized(GridPair grid, std::vector<double> values) {
    const std::size_t m = grid.control.size();
    if (values.size() != grid.state.size() * m)
        throw DimensionError("policy field size does not match its grid");
    const auto w = grid.control.weights();
    for (std::size_t i = 0; i < grid.state.size(); ++i) {
        double mass = 0.0;
        for (std::size_t k = 0; k < m; ++k) mass += w[k] * values[i * m + k];
        if (!(mass > 0.0) || !std::isfinite(mass))
            throw DomainError("policy row without positive mass at node " + std::to_string(i));
        for (std::size_t k = 0; k < m; ++k) values[i * m + k] /= mass;
    }
    return PolicyField(std::move(grid), std::move(values));
}

double PolicyField::sup() const {
    double m = 0.0;
    for (double v : values_) m = std::max(m, v);
    return m;
}

ScalarField entropy(const PolicyField& pi, EntropyMode mode) {
    const auto w = pi.grid().control.weights();
    std::vector<double> out(pi.states());
    for (std::size_t i = 0; i < pi.states(); ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < pi.controls(); ++k) {
            double p = pi(i, k);
            if (w[k] <= 0.0) continue;
            if (p <= 0.0) {
                if (mode == EntropyMode::strict)
                    throw DomainError("log of nonpositive density at node " + std::to_string(i));
                p = 1e-300;
            }
            s += w[k] * p * std::log(p);
        }
        out[i] = s;
    }
    return ScalarField(pi.grid().state, std::move(out));
}

ScalarField kl_divergence(const PolicyField& p, const PolicyField& q) {
    if (!(p.grid() == q.grid())) throw DimensionError("policies live on different grids");
    const auto w = p.grid().control.weights();
    std::vector<double> out(p.states());
    for (std::size_t i = 0; i < p.states(); ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < p.controls(); ++k) {
            if (p(i, k) <= 0.0 || q(i, k) <= 0.0)
                throw DomainError("KL divergence needs positive densities");
            s += w[k] * p(i, k) * std::log(p(i, k) / q(i, k));
        }
        out[i] = s;
    }
    return ScalarField(p.grid().state, std::move(out));
}

// ------------------------------------------------------------ interpolation

namespace {

struct Bracket {
    std::size_t lo;
    std::size_t hi;
    double t;
};

Bracket bracket(const StateGrid& grid, int a, double x) {
    const Axis& ax = grid.axis(a);
    const double dx = grid.spacing(a);
    double s = (x - ax.lower) / dx;
    if (grid.periodic()) {
        const auto n = static_cast<double>(ax.nodes);
        s = std::fmod(s, n);
        if (s < 0.0) s += n;
        auto lo = static_cast<std::size_t>(std::floor(s));
        if (lo >= ax.nodes) lo = ax.nodes - 1;
        return {lo, (lo + 1) % ax.nodes, s - static_cast<double>(lo)};
    }
    s = std::clamp(s, 0.0, static_cast<double>(ax.nodes - 1));
    auto lo = static_cast<std::size_t>(std::floor(s));
    if (lo >= ax.nodes - 1) lo = ax.nodes - 2;
    return {lo, lo + 1, s - static_cast<double>(lo)};
}

}  // namespace

double interpolate(const ScalarField& f, const State& x) {
    const StateGrid& grid = f.grid();
    const Bracket b0 = bracket(grid, 0, x[0]);
    if (grid.dim() == 1) return (1.0 - b0.t) * f[b0.lo] + b0.t * f[b0.hi];
    const Bracket b1 = bracket(grid, 1, x[1]);
    const double f00 = f[grid.flat_index(b0.lo, b1.lo)];
    const double f10 = f[grid.flat_index(b0.hi, b1.lo)];
    const double f01 = f[grid.flat_index(b0.lo, b1.hi)];
    const double f11 = f[grid.flat_index(b0.hi, b1.hi)];
    return (1.0 - b1.t) * ((1.0 - b0.t) * f00 + b0.t * f10) +
           b1.t * ((1.0 - b0.t) * f01 + b0.t * f11);
}

void interpolate_row(const PolicyField& pi, const State& x, std::span<double> out) {
    const StateGrid& grid = pi.grid().state;
    const std::size_t m = pi.controls();
    if (out.size() != m) throw DimensionError("interpolation buffer has wrong size");
    const Bracket b0 = bracket(grid, 0, x[0]);
    if (grid.dim() == 1) {
        for (std::size_t k = 0; k < m; ++k)
            out[k] = (1.0 - b0.t) * pi(b0.lo, k) + b0.t * pi(b0.hi, k);
        return;
    }
    const Bracket b1 = bracket(grid, 1, x[1]);
    const std::size_t i00 = grid.flat_index(b0.lo, b1.lo);
    const std::size_t i10 = grid.flat_index(b0.hi, b1.lo);
    const std::size_t i01 = grid.flat_index(b0.lo, b1.hi);
    const std::size_t i11 = grid.flat_index(b0.hi, b1.hi);
    for (std::size_t k = 0; k < m; ++k) {
        out[k] = (1.0 - b1.t) * ((1.0 - b0.t) * pi(i00, k) + b0.t * pi(i10, k)) +
                 b1.t * ((1.0 - b0.t) * pi(i01, k) + b0.t * pi(i11, k));
    }
}

PolicyField transfer_policy(const PolicyField& pi, const GridPair& target) {
    if (!(pi.grid().control == target.control))
        throw DimensionError("policy transfer requires identical control grids");
    if (pi.grid() == target) return pi;
    const std::size_t m = pi.controls();
    std::vector<double> values(target.state.size() * m);
    for (std::size_t i = 0; i < target.state.size(); ++i) {
        interpolate_row(pi, target.state.point(i), std::span<double>(values).subspan(i * m, m));
    }
    return PolicyField::normalized(target, std::move(values));
}

// ---------------------------------------------------------------------- CSV

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

namespace {

void write_coordinates(std::ostream& os, const StateGrid& grid, std::size_t i) {
    const State x = grid.point(i);
    os << format_double(x[0]);
    if (grid.dim() == 2) os << ',' << format_double(x[1]);
}

void write_coordinate_header(std::ostream& os, const StateGrid& grid) {
    os << "x";
    if (grid.dim() == 2) os << ",y";
}

}  // namespace

void write_csv(std::ostream& os, const ScalarField& f, const std::string& value_name) {
    write_coordinate_header(os, f.grid());
    os << ',' << value_name << '\n';
    for (std::size_t i = 0; i < f.size(); ++i) {
        write_coordinates(os, f.grid(), i);
        os << ',' << format_double(f[i]) << '\n';
    }
}

void write_csv(std::ostream& os, const PolicyField& pi) {
    const auto& grid = pi.grid();
    write_coordinate_header(os, grid.state);
    for (std::size_t k = 0; k < pi.controls(); ++k)
        os << ",u=" << format_double(grid.control.node(k));
    os << '\n';
    for (std::size_t i = 0; i < pi.states(); ++i) {
        write_coordinates(os, grid.state, i);
        for (std::size_t k = 0; k < pi.controls(); ++k) os << ',' << format_double(pi(i, k));
        os << '\n';
    }
}

ScalarField read_scalar_csv(std::istream& is, const StateGrid& grid) {
    std::string line;
    if (!std::getline(is, line)) throw DimensionError("empty CSV");
    std::vector<double> values;
    values.reserve(grid.size());
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto pos = line.rfind(',');
        const std::string_view last = std::string_view(line).substr(pos + 1);
        double v = 0.0;
        auto res = std::from_chars(last.data(), last.data() + last.size(), v);
        if (res.ec != std::errc()) throw DimensionError("malformed CSV value: " + line);
        values.push_back(v);
    }
    return ScalarField(grid, std::move(values));
}

}  // namespace softctl
