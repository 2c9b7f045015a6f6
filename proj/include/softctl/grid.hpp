#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "softctl/problem.hpp"

namespace softctl {

struct Axis {
    double lower = 0.0;
    double length = 1.0;
    std::size_t nodes = 2;

    bool operator==(const Axis&) const = default;
};

/// Uniform lattice on a torus (no duplicated endpoint) or on a closed
/// window (both endpoints present). Flat index = i0 + n0 * i1.
class StateGrid {
public:
    StateGrid() = default;
    StateGrid(int dim, std::array<Axis, 2> axes, Topology topology);

    /// Lattice matching the problem's domain with `nodes` per axis.
    static StateGrid for_problem(const ProblemSpec& spec, std::size_t nodes);

    int dim() const { return dim_; }
    Topology topology() const { return topology_; }
    bool periodic() const { return topology_ == Topology::torus; }
    std::size_t size() const;
    const Axis& axis(int a) const { return axes_[static_cast<std::size_t>(a)]; }
    std::size_t nodes(int a) const { return axis(a).nodes; }
    double spacing(int a) const;
    double coordinate(int a, std::size_t k) const;
    State point(std::size_t flat) const;
    std::array<std::size_t, 2> multi_index(std::size_t flat) const;
    std::size_t flat_index(std::size_t i0, std::size_t i1 = 0) const;

    /// Index of the node offset by +-1 along `axis`, wrapping on the torus.
    /// On a window, returns npos when stepping outside.
    std::size_t neighbor(std::size_t flat, int axis, int offset) const;

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    bool operator==(const StateGrid&) const = default;

private:
    int dim_ = 1;
    std::array<Axis, 2> axes_{};
    Topology topology_ = Topology::torus;
};

/// Uniform nodes on the control box with trapezoidal weights.
class ControlGrid {
public:
    ControlGrid() = default;
    ControlGrid(double lower, double upper, std::size_t nodes);

    std::size_t size() const { return nodes_; }
    double lower() const { return lower_; }
    double upper() const { return upper_; }
    double volume() const { return upper_ - lower_; }
    double spacing() const { return (upper_ - lower_) / static_cast<double>(nodes_ - 1); }
    double node(std::size_t k) const;
    double weight(std::size_t k) const;
    std::span<const double> weights() const { return weights_; }

    bool operator==(const ControlGrid& other) const {
        return lower_ == other.lower_ && upper_ == other.upper_ && nodes_ == other.nodes_;
    }

private:
    double lower_ = -1.0;
    double upper_ = 1.0;
    std::size_t nodes_ = 2;
    std::vector<double> weights_;
};

struct GridPair {
    StateGrid state;
    ControlGrid control;

    static GridPair for_problem(const ProblemSpec& spec, std::size_t state_nodes,
                                std::size_t control_nodes);

    bool operator==(const GridPair&) const = default;
};

/// One finite value per state node.
class ScalarField {
public:
    ScalarField() = default;
    ScalarField(StateGrid grid, std::vector<double> values);

    static ScalarField constant(const StateGrid& grid, double value);

    /// Samples fn at the nodes. On a torus, fn must be periodic: a mismatch
    /// between fn(x) and fn(x + L) along any axis raises DomainError.
    static ScalarField sample(const StateGrid& grid, const std::function<double(const State&)>& fn);

    const StateGrid& grid() const { return grid_; }
    std::size_t size() const { return values_.size(); }
    std::span<const double> values() const { return values_; }
    double operator[](std::size_t i) const { return values_[i]; }

private:
    StateGrid grid_;
    std::vector<double> values_;
};

/// Nonnegative density over the control nodes at each state node,
/// normalized by the trapezoidal quadrature. Row-major (state, control).
class PolicyField {
public:
    PolicyField() = default;
    /// Validates nonnegativity and normalization to 1e-10.
    PolicyField(GridPair grid, std::vector<double> values);

    static PolicyField uniform(const GridPair& grid);
    /// Normalizes each row by its quadrature mass (rows must have positive mass).
    static PolicyField normalized(GridPair grid, std::vector<double> values);

    const GridPair& grid() const { return grid_; }
    std::size_t states() const { return grid_.state.size(); }
    std::size_t controls() const { return grid_.control.size(); }
    double operator()(std::size_t i, std::size_t k) const { return values_[i * controls() + k]; }
    std::span<const double> row(std::size_t i) const {
        return std::span<const double>(values_).subspan(i * controls(), controls());
    }
    std::span<const double> values() const { return values_; }

    double sup() const;

private:
    GridPair grid_;
    std::vector<double> values_;
};

/// Central-difference gradient; one component per axis.
struct GradientField {
    StateGrid grid;
    std::array<std::vector<double>, 2> components;

    /// max over nodes of the Euclidean norm.
    double sup_norm() const;
};

double sup_norm(const ScalarField& f);
double sup_norm_diff(const ScalarField& f, const ScalarField& g);

ScalarField operator-(const ScalarField& f, const ScalarField& g);
ScalarField operator+(const ScalarField& f, const ScalarField& g);
ScalarField operator*(double a, const ScalarField& f);

/// Second-order central differences with periodic wrap. On a window the
/// end nodes use second-order one-sided stencils. Needs >= 3 nodes per axis.
GradientField gradient(const ScalarField& f);

enum class EntropyMode { strict, safe };

/// x -> integral over U of pi ln pi by the trapezoid rule. Strict mode
/// raises DomainError on any nonpositive value with positive weight; safe
/// mode floors values at 1e-300.
ScalarField entropy(const PolicyField& pi, EntropyMode mode = EntropyMode::strict);

/// x -> KL(p(x,.) || q(x,.)) by the trapezoid rule.
ScalarField kl_divergence(const PolicyField& p, const PolicyField& q);

/// Linear interpolation of a field to an arbitrary point (periodic on a torus).
double interpolate(const ScalarField& f, const State& x);

/// Linear-in-x interpolation of a policy to `target` (1-D only), per
/// control node, followed by renormalization.
PolicyField transfer_policy(const PolicyField& pi, const GridPair& target);

/// Interpolated density row at an arbitrary state (1-D or 2-D bilinear).
void interpolate_row(const PolicyField& pi, const State& x, std::span<double> out);

/// Shortest round-trip decimal representation.
std::string format_double(double v);

/// CSV: one row per node, coordinates then value(s).
void write_csv(std::ostream& os, const ScalarField& f, const std::string& value_name = "value");
void write_csv(std::ostream& os, const PolicyField& pi);
ScalarField read_scalar_csv(std::istream& is, const StateGrid& grid);

}  // namespace softctl
