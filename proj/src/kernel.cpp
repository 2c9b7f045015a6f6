#include "softctl/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include <Eigen/SparseLU>

#include "softctl/error.hpp"
#include "softctl/parallel.hpp"

namespace softctl {

JumpRates JumpRates::zero(const StateGrid& grid) {
    JumpRates r{grid, {}, {}};
    for (int a = 0; a < 2; ++a) {
        const std::size_t n = a < grid.dim() ? grid.size() : 0;
        r.up[static_cast<std::size_t>(a)].assign(n, 0.0);
        r.down[static_cast<std::size_t>(a)].assign(n, 0.0);
    }
    return r;
}

void JumpRates::apply(std::span<const double> f, std::span<double> out) const {
    const std::size_t n = grid.size();
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int a = 0; a < grid.dim(); ++a) {
            const auto ua = static_cast<std::size_t>(a);
            acc += up[ua][i] * (f[grid.neighbor(i, a, +1)] - f[i]);
            acc += down[ua][i] * (f[grid.neighbor(i, a, -1)] - f[i]);
        }
        out[i] = acc;
    }
}

SparseMatrix JumpRates::generator() const {
    const std::size_t n = grid.size();
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(n * (1 + 2 * static_cast<std::size_t>(grid.dim())));
    for (std::size_t i = 0; i < n; ++i) {
        double diag = 0.0;
        for (int a = 0; a < grid.dim(); ++a) {
            const auto ua = static_cast<std::size_t>(a);
            const auto ii = static_cast<Eigen::Index>(i);
            triplets.emplace_back(ii, static_cast<Eigen::Index>(grid.neighbor(i, a, +1)), up[ua][i]);
            triplets.emplace_back(ii, static_cast<Eigen::Index>(grid.neighbor(i, a, -1)), down[ua][i]);
            diag -= up[ua][i] + down[ua][i];
        }
        triplets.emplace_back(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i), diag);
    }
    SparseMatrix g(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    g.setFromTriplets(triplets.begin(), triplets.end());
    return g;
}

void JumpRates::accumulate(const JumpRates& other, std::span<const double> node_weights) {
    for (int a = 0; a < grid.dim(); ++a) {
        const auto ua = static_cast<std::size_t>(a);
        for (std::size_t i = 0; i < grid.size(); ++i) {
            up[ua][i] += node_weights[i] * other.up[ua][i];
            down[ua][i] += node_weights[i] * other.down[ua][i];
        }
    }
}

JumpRates jump_rates(const ProblemSpec& spec, const StateGrid& grid, double u, GeneratorPart part) {
    if (!grid.periodic()) throw ModeError("grid chain generators need a periodic state domain");
    JumpRates rates = JumpRates::zero(grid);
    const bool advect = part != GeneratorPart::diffusion;
    const bool diffuse = part != GeneratorPart::advection;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const State x = grid.point(i);
        const Mat2 cov = diffuse ? spec.covariance(x, u) : Mat2{};
        for (int a = 0; a < grid.dim(); ++a) {
            const auto ua = static_cast<std::size_t>(a);
            const double dx = grid.spacing(a);
            double up = 0.0;
            double down = 0.0;
            if (advect) {
                State face_up = x;
                State face_down = x;
                face_up[ua] += 0.5 * dx;
                face_down[ua] -= 0.5 * dx;
                up += std::max(spec.drift(face_up, u)[ua], 0.0) / dx;
                down += std::max(-spec.drift(face_down, u)[ua], 0.0) / dx;
            }
            if (diffuse) {
                const double d = 0.5 * cov[ua][ua] / (dx * dx);
                up += d;
                down += d;
            }
            rates.up[ua][i] = up;
            rates.down[ua][i] = down;
        }
    }
    return rates;
}

// ---------------------------------------------------------- TransitionKernel

TransitionKernel::TransitionKernel(GridPair grid, double step_h, std::size_t substeps,
                                   Eigen::MatrixXd stacked)
    : grid_(std::move(grid)), step_h_(step_h), substeps_(substeps), stacked_(std::move(stacked)) {
    const auto n = static_cast<Eigen::Index>(grid_.state.size());
    if (stacked_.cols() != n || stacked_.rows() != n * static_cast<Eigen::Index>(grid_.control.size()))
        throw DimensionError("kernel matrix shape does not match its grid");
}

double TransitionKernel::max_row_defect() const {
    return (stacked_.rowwise().sum().array() - 1.0).abs().maxCoeff();
}

double TransitionKernel::min_entry() const { return stacked_.minCoeff(); }

namespace {

std::string kernel_location(const GridPair& grid, std::size_t i, std::size_t k) {
    std::ostringstream os;
    os << "x=" << format_double(grid.state.point(i)[0]) << ", u=" << format_double(grid.control.node(k));
    return os.str();
}

}  // namespace

TransitionKernel build_kernel(const ProblemSpec& spec, const SolveParams& params,
                              const GridPair& grid, std::size_t workers) {
    params.validate();
    if (spec.has_controlled_diffusion())
        throw ModeError("transition kernels need control-independent diffusion");
    if (spec.mode != ProblemMode::full)
        throw ModeError("problem '" + spec.name + "' does not support the kernel pipeline");
    if (grid.state.nodes(0) != params.state_nodes)
        throw DimensionError("grid and solve parameters disagree on the state node count");

    const std::size_t n = grid.state.size();
    const std::size_t m = grid.control.size();
    const double tau = params.step_h / static_cast<double>(params.fp_substeps);
    Eigen::MatrixXd stacked(static_cast<Eigen::Index>(n * m), static_cast<Eigen::Index>(n));

    parallel_for(m, workers, [&](std::size_t k) {
        const double u = grid.control.node(k);
        // Forward operator A = G^T has zero column sums; the implicit Euler
        // step (I - tau A) rho^{+} = rho is an M-matrix solve. Propagating
        // point masses from every node gives K^T = (I - tau A)^{-m}, i.e.
        // K = (I - tau G)^{-m}.
        const SparseMatrix g = jump_rates(spec, grid.state, u).generator();
        Eigen::SparseMatrix<double> system(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        system.setIdentity();
        system -= tau * Eigen::SparseMatrix<double>(g);
        system.makeCompressed();
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
        lu.compute(system);
        if (lu.info() != Eigen::Success)
            throw KernelBuildError("Fokker-Planck factorization failed at u=" + format_double(u));
        Eigen::MatrixXd block = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n),
                                                          static_cast<Eigen::Index>(n));
        for (std::size_t s = 0; s < params.fp_substeps; ++s) {
            block = lu.solve(block);
            if (lu.info() != Eigen::Success)
                throw KernelBuildError("Fokker-Planck solve failed at u=" + format_double(u));
        }
        for (Eigen::Index i = 0; i < block.rows(); ++i) {
            bool clamped = false;
            for (Eigen::Index j = 0; j < block.cols(); ++j) {
                double& v = block(i, j);
                if (v < 0.0) {
                    if (v < -1e-12)
                        throw KernelBuildError("negative transition mass " + format_double(v) + " at " +
                                               kernel_location(grid, static_cast<std::size_t>(i), k));
                    v = 0.0;
                    clamped = true;
                }
            }
            if (clamped) block.row(i) /= block.row(i).sum();
            if (std::abs(block.row(i).sum() - 1.0) > 1e-10)
                throw KernelBuildError("transition row does not conserve mass at " +
                                       kernel_location(grid, static_cast<std::size_t>(i), k));
        }
        stacked.middleRows(static_cast<Eigen::Index>(k * n), static_cast<Eigen::Index>(n)) = block;
    });
    return TransitionKernel(grid, params.step_h, params.fp_substeps, std::move(stacked));
}

ScalarField expect_next(const TransitionKernel& kernel, std::size_t control_index, const ScalarField& f) {
    if (!(f.grid() == kernel.grid().state)) throw DimensionError("field and kernel grids differ");
    if (control_index >= kernel.controls()) throw DimensionError("control index out of range");
    const Eigen::Map<const Eigen::VectorXd> fv(f.values().data(), static_cast<Eigen::Index>(f.size()));
    const Eigen::VectorXd out = kernel.matrix(control_index) * fv;
    return ScalarField(f.grid(), std::vector<double>(out.data(), out.data() + out.size()));
}

Eigen::MatrixXd expect_all(const TransitionKernel& kernel, std::span<const double> f) {
    const auto n = static_cast<Eigen::Index>(kernel.states());
    if (static_cast<Eigen::Index>(f.size()) != n) throw DimensionError("field and kernel sizes differ");
    const Eigen::Map<const Eigen::VectorXd> fv(f.data(), n);
    const Eigen::VectorXd all = kernel.stacked() * fv;
    return Eigen::Map<const Eigen::MatrixXd>(all.data(), n, static_cast<Eigen::Index>(kernel.controls()));
}

void write_kernel_csv(std::ostream& os, const TransitionKernel& kernel) {
    os << "u_index,i,j,value\n";
    const std::size_t n = kernel.states();
    for (std::size_t k = 0; k < kernel.controls(); ++k) {
        const auto block = kernel.matrix(k);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const double v = block(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
                if (v > 1e-14) os << k << ',' << i << ',' << j << ',' << format_double(v) << '\n';
            }
    }
}

}  // namespace softctl
