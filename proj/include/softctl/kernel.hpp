#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "softctl/grid.hpp"
#include "softctl/problem.hpp"

namespace softctl {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

enum class GeneratorPart { full, advection, diffusion };

/// Nearest-neighbour jump intensities of the grid Markov chain that
/// approximates dX = b dt + sigma dB on a torus. The forward (Fokker-Planck)
/// operator is the transpose of the generator built from these rates:
/// advection is upwinded through face drifts b((x_i + x_j) / 2, u), so the
/// flux form conserves mass, and diffusion contributes Sigma_aa(x_i) / (2 dx^2)
/// to both neighbours. All rates are nonnegative, hence the scheme is monotone.
struct JumpRates {
    StateGrid grid;
    std::array<std::vector<double>, 2> up;    ///< rate i -> i + e_a
    std::array<std::vector<double>, 2> down;  ///< rate i -> i - e_a

    /// out = G f, i.e. sum_j rate(i -> j) (f_j - f_i).
    void apply(std::span<const double> f, std::span<double> out) const;
    /// Row-major sparse backward generator (rows sum to zero).
    SparseMatrix generator() const;
    /// this += weight * other, node by node (weights may vary per node).
    void accumulate(const JumpRates& other, std::span<const double> node_weights);
    static JumpRates zero(const StateGrid& grid);
};

/// Rates for a constant control u. Controlled diffusion is honoured when
/// the problem has one. Requires a torus.
JumpRates jump_rates(const ProblemSpec& spec, const StateGrid& grid, double u,
                     GeneratorPart part = GeneratorPart::full);

/// One-step transition kernel K_u(i, j) = probability of moving from node i
/// to node j over time h, for every control node. Entries are nonnegative
/// and rows sum to one.
class TransitionKernel {
public:
    TransitionKernel(GridPair grid, double step_h, std::size_t substeps, Eigen::MatrixXd stacked);

    const GridPair& grid() const { return grid_; }
    double step_h() const { return step_h_; }
    std::size_t substeps() const { return substeps_; }
    std::size_t states() const { return grid_.state.size(); }
    std::size_t controls() const { return grid_.control.size(); }

    /// K_u for control node k.
    auto matrix(std::size_t k) const {
        return stacked_.middleRows(static_cast<Eigen::Index>(k * states()),
                                   static_cast<Eigen::Index>(states()));
    }
    /// All K_u stacked vertically: rows [k n, (k + 1) n) hold K_{u_k}.
    const Eigen::MatrixXd& stacked() const { return stacked_; }

    /// Max |row sum - 1| and min entry, for invariant checks.
    double max_row_defect() const;
    double min_entry() const;

private:
    GridPair grid_;
    double step_h_;
    std::size_t substeps_;
    Eigen::MatrixXd stacked_;
};

/// Solves the Fokker-Planck equation over [0, h] from a point mass at every
/// node, for every control node, with fp_substeps implicit Euler steps.
/// Throws ModeError for controlled diffusion or a non-torus domain, and
/// KernelBuildError on an entry below -1e-12 (entries in [-1e-12, 0) are
/// clamped and the row renormalized).
TransitionKernel build_kernel(const ProblemSpec& spec, const SolveParams& params,
                              const GridPair& grid, std::size_t workers = 0);

/// (P_h^u f)(x_i) = sum_j K_u(i, j) f_j.
ScalarField expect_next(const TransitionKernel& kernel, std::size_t control_index,
                        const ScalarField& f);

/// Column k holds K_{u_k} f.
Eigen::MatrixXd expect_all(const TransitionKernel& kernel, std::span<const double> f);

/// Debug dump: u-index,i,j,value for entries above 1e-14.
void write_kernel_csv(std::ostream& os, const TransitionKernel& kernel);

}  // namespace softctl
