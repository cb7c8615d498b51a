#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cdsim/detail/binary.hpp"
#include "cdsim/error.hpp"
#include "cdsim/geometry.hpp"
#include "cdsim/kernel.hpp"
#include "cdsim/lapack.hpp"
#include "cdsim/units.hpp"

namespace cdsim {

enum class KernelVariant { Polar, Exact };

/// Non-Hermitian single-excitation Hamiltonian of the cloud, 3N x 3N in
/// units of gamma. Index 3a + mu addresses Cartesian component mu of atom a.
struct EffectiveHamiltonian {
    Eigen::MatrixXcd matrix;
    KernelVariant variant = KernelVariant::Polar;
    /// omega / omega_a at which an Exact kernel was evaluated.
    double omega_ratio = 1.0;

    Eigen::Index dimension() const noexcept { return matrix.rows(); }
    std::size_t atom_count() const noexcept { return static_cast<std::size_t>(matrix.rows() / 3); }
};

/// Assembles the Hamiltonian: -i/2 on every diagonal 3x3 block, pair kernels
/// off the diagonal. Throws SingularGeometry for coincident atoms.
inline EffectiveHamiltonian build_hamiltonian(const AtomConfiguration& config,
                                              KernelVariant variant = KernelVariant::Polar,
                                              double omega_ratio = 1.0)
{
    const std::size_t n = config.size();
    EffectiveHamiltonian h;
    h.variant = variant;
    h.omega_ratio = omega_ratio;
    h.matrix.setZero(3 * n, 3 * n);
    for (std::size_t a = 0; a < n; ++a) {
        h.matrix.block<3, 3>(3 * a, 3 * a) = units::self_energy * Tensor3::Identity();
        for (std::size_t b = a + 1; b < n; ++b) {
            const Vec3 r = config.positions[a] - config.positions[b];
            if (!(r.norm() > 0.0)) {
                throw SingularGeometry("build_hamiltonian: atoms " + std::to_string(a) + " and "
                                       + std::to_string(b) + " coincide");
            }
            const Tensor3 block = variant == KernelVariant::Polar ? green_tensor_polar(r)
                                                                   : kernel_exact(r, omega_ratio);
            h.matrix.block<3, 3>(3 * a, 3 * b) = block;
            h.matrix.block<3, 3>(3 * b, 3 * a) = block.transpose();
        }
    }
    return h;
}

// ---------------------------------------------------------------------------
// Resolvent
// ---------------------------------------------------------------------------

/// Solution u of (Delta - Sigma) u = s.
struct SteadyStateAmplitudes {
    Eigen::VectorXcd u;
    double detuning = 0.0;
    /// ||(Delta - Sigma) u - s|| / ||s||.
    double residual = 0.0;
    /// Estimated 1-norm condition number of Delta - Sigma (NaN if unknown).
    double condition = std::nan("");
    bool ill_conditioned = false;
};

inline constexpr double ill_conditioned_threshold = 1e12;

inline double relative_residual(const Eigen::MatrixXcd& sigma, double detuning,
                                const Eigen::VectorXcd& u, const Eigen::VectorXcd& rhs)
{
    const double rhs_norm = rhs.norm();
    if (rhs_norm == 0.0) {
        return u.norm();
    }
    const Eigen::VectorXcd r = detuning * u - sigma * u - rhs;
    return r.norm() / rhs_norm;
}

/// LU factorization of Delta - Sigma, reusable for any number of
/// right-hand sides. Read-only after construction; the Hamiltonian must
/// outlive it.
class ResolventFactorization {
public:
    ResolventFactorization(const EffectiveHamiltonian& h, double detuning)
        : sigma_(&h.matrix), detuning_(detuning)
    {
        const Eigen::Index n = h.dimension();
        Eigen::MatrixXcd shifted = -h.matrix;
        shifted.diagonal().array() += detuning;
        lu_.compute(shifted);
        rcond_ = n > 0 ? lu_.rcond() : 1.0;
        if (!(rcond_ > 0.0) || !std::isfinite(rcond_)) {
            throw SingularSystem("resolvent matrix is singular at detuning "
                                     + std::to_string(detuning),
                                 std::numeric_limits<double>::infinity());
        }
    }

    double detuning() const noexcept { return detuning_; }
    double condition_estimate() const noexcept { return 1.0 / rcond_; }

    SteadyStateAmplitudes solve(const Eigen::VectorXcd& rhs) const
    {
        if (rhs.size() != sigma_->rows()) {
            throw InvalidArgument("solve_resolvent: right-hand side has wrong dimension");
        }
        SteadyStateAmplitudes out;
        out.detuning = detuning_;
        out.u = sigma_->rows() > 0 ? Eigen::VectorXcd(lu_.solve(rhs)) : Eigen::VectorXcd();
        out.condition = condition_estimate();
        out.ill_conditioned = out.condition > ill_conditioned_threshold;
        if (!out.u.allFinite()) {
            throw SingularSystem("resolvent solve produced non-finite amplitudes", out.condition);
        }
        out.residual = relative_residual(*sigma_, detuning_, out.u, rhs);
        return out;
    }

    /// Solves for every column of `rhs`.
    Eigen::MatrixXcd solve_many(const Eigen::MatrixXcd& rhs) const
    {
        if (sigma_->rows() == 0) {
            return rhs;
        }
        return lu_.solve(rhs);
    }

private:
    const Eigen::MatrixXcd* sigma_;
    double detuning_;
    Eigen::PartialPivLU<Eigen::MatrixXcd> lu_;
    double rcond_ = 1.0;
};

inline SteadyStateAmplitudes solve_resolvent(const EffectiveHamiltonian& h, double detuning,
                                             const Eigen::VectorXcd& rhs)
{
    return ResolventFactorization(h, detuning).solve(rhs);
}

// ---------------------------------------------------------------------------
// Collective modes
// ---------------------------------------------------------------------------

/// Eigenvalues lambda_j of Sigma: collective shift Re(lambda), width
/// -2 Im(lambda).
struct ModeSpectrum {
    Eigen::VectorXcd eigenvalues;
    std::optional<Eigen::MatrixXcd> eigenvectors;

    Eigen::VectorXd shifts() const { return eigenvalues.real(); }
    Eigen::VectorXd widths() const { return -2.0 * eigenvalues.imag(); }

    /// u = V (Delta - Lambda)^{-1} V^{-1} s. Requires eigenvectors.
    Eigen::VectorXcd apply_resolvent(double detuning, const Eigen::VectorXcd& rhs) const
    {
        return eigenvectors_times(coefficients(rhs), detuning);
    }

    /// V^{-1} s, the modal expansion coefficients of s.
    Eigen::VectorXcd coefficients(const Eigen::VectorXcd& rhs) const
    {
        if (!eigenvectors || !inverse_) {
            throw InvalidArgument("ModeSpectrum: eigenvectors were not computed");
        }
        return inverse_->solve(rhs);
    }

    Eigen::VectorXcd eigenvectors_times(const Eigen::VectorXcd& coeff, double detuning) const
    {
        const Eigen::VectorXcd scaled =
            coeff.array() / (complex(detuning, 0.0) - eigenvalues.array());
        return *eigenvectors * scaled;
    }

    std::shared_ptr<const Eigen::PartialPivLU<Eigen::MatrixXcd>> inverse_;
};

inline ModeSpectrum mode_spectrum(const EffectiveHamiltonian& h, bool with_vectors = false)
{
    ModeSpectrum spec;
    if (with_vectors) {
        Eigen::MatrixXcd vectors;
        lapack::eigen_decomposition(h.matrix, spec.eigenvalues, &vectors);
        spec.inverse_ = std::make_shared<const Eigen::PartialPivLU<Eigen::MatrixXcd>>(vectors);
        spec.eigenvectors = std::move(vectors);
    } else {
        lapack::eigen_decomposition(h.matrix, spec.eigenvalues, nullptr);
    }
    return spec;
}

// ---------------------------------------------------------------------------
// Detuning sweeps
// ---------------------------------------------------------------------------

enum class SweepStrategy {
    Auto,
    /// One LU factorization per detuning.
    PerPointLU,
    /// One eigen-decomposition, then O(n^2) per detuning.
    Spectral,
    /// One unitary Hessenberg reduction, then O(n^2) per detuning.
    Hessenberg,
};

struct SweepOptions {
    SweepStrategy strategy = SweepStrategy::Auto;
    /// Auto uses per-point LU up to this many detunings.
    std::size_t max_lu_points = 2;
};

inline SweepStrategy resolve_strategy(std::size_t n_detunings, const SweepOptions& options)
{
    if (options.strategy != SweepStrategy::Auto) {
        return options.strategy;
    }
    return n_detunings <= options.max_lu_points ? SweepStrategy::PerPointLU
                                                : SweepStrategy::Hessenberg;
}

namespace detail {

/// Solves (shift - H) y = z for upper Hessenberg H by Gaussian elimination
/// with adjacent-row pivoting. `work` is scratch space.
inline Eigen::MatrixXcd solve_shifted_hessenberg(
    const Eigen::MatrixXcd& hess, double shift, const Eigen::MatrixXcd& rhs,
    Eigen::Matrix<complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& work)
{
    const Eigen::Index n = hess.rows();
    work = -hess;
    work.diagonal().array() += shift;
    Eigen::Matrix<complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> y = rhs;
    for (Eigen::Index k = 0; k + 1 < n; ++k) {
        if (std::abs(work(k + 1, k)) > std::abs(work(k, k))) {
            work.row(k).tail(n - k).swap(work.row(k + 1).tail(n - k));
            y.row(k).swap(y.row(k + 1));
        }
        const complex pivot = work(k, k);
        if (pivot == complex(0.0, 0.0)) {
            throw SingularSystem("shifted Hessenberg matrix is singular at detuning "
                                     + std::to_string(shift),
                                 std::numeric_limits<double>::infinity());
        }
        const complex factor = work(k + 1, k) / pivot;
        if (factor != complex(0.0, 0.0)) {
            work.row(k + 1).tail(n - k - 1) -= factor * work.row(k).tail(n - k - 1);
            y.row(k + 1) -= factor * y.row(k);
        }
        work(k + 1, k) = 0.0;
    }
    for (Eigen::Index k = n - 1; k >= 0; --k) {
        if (work(k, k) == complex(0.0, 0.0)) {
            throw SingularSystem("shifted Hessenberg matrix is singular at detuning "
                                     + std::to_string(shift),
                                 std::numeric_limits<double>::infinity());
        }
        if (k + 1 < n) {
            y.row(k) -= work.row(k).tail(n - k - 1) * y.bottomRows(n - k - 1);
        }
        y.row(k) /= work(k, k);
    }
    return y;
}

} // namespace detail

/// Projected sweep result: values[i](p, r) = probes.col(p)^T u_r(Delta_i),
/// with u_r the amplitudes driven by column r of the right-hand side.
struct SweepProjection {
    std::vector<Eigen::MatrixXcd> values;
    /// Largest relative residual over the right-hand sides, per detuning.
    std::vector<double> residuals;
    SweepStrategy strategy = SweepStrategy::Auto;
};

namespace detail {

inline double max_column_residual(const Eigen::MatrixXcd& r, const Eigen::MatrixXcd& rhs)
{
    double worst = 0.0;
    for (Eigen::Index c = 0; c < rhs.cols(); ++c) {
        const double norm = rhs.col(c).norm();
        const double rn = r.col(c).norm();
        worst = std::max(worst, norm > 0.0 ? rn / norm : rn);
    }
    return worst;
}

} // namespace detail

/// Evaluates linear functionals of u(Delta) over a detuning grid without
/// forming u when the chosen strategy allows it.
inline SweepProjection sweep_projections(const EffectiveHamiltonian& h,
                                         std::span<const double> detunings,
                                         const Eigen::MatrixXcd& rhs,
                                         const Eigen::MatrixXcd& probes,
                                         const SweepOptions& options = {})
{
    if (h.variant != KernelVariant::Polar) {
        throw InvalidArgument("detuning sweeps require the frequency-independent polar kernel");
    }
    if (rhs.rows() != h.dimension() || probes.rows() != h.dimension()) {
        throw InvalidArgument("sweep_projections: dimension mismatch");
    }
    SweepProjection out;
    out.strategy = resolve_strategy(detunings.size(), options);
    out.values.resize(detunings.size());
    out.residuals.resize(detunings.size());

    switch (out.strategy) {
    case SweepStrategy::Auto:
    case SweepStrategy::PerPointLU:
        for (std::size_t i = 0; i < detunings.size(); ++i) {
            const ResolventFactorization lu(h, detunings[i]);
            const Eigen::MatrixXcd u = lu.solve_many(rhs);
            out.values[i] = probes.transpose() * u;
            const Eigen::MatrixXcd r = detunings[i] * u - h.matrix * u - rhs;
            out.residuals[i] = detail::max_column_residual(r, rhs);
        }
        break;
    case SweepStrategy::Spectral: {
        const ModeSpectrum modes = mode_spectrum(h, true);
        const Eigen::MatrixXcd coeff = modes.inverse_->solve(rhs);
        const Eigen::MatrixXcd probe_modes = modes.eigenvectors->transpose() * probes;
        for (std::size_t i = 0; i < detunings.size(); ++i) {
            const Eigen::VectorXcd scale =
                (complex(detunings[i], 0.0) - modes.eigenvalues.array()).inverse();
            const Eigen::MatrixXcd scaled = scale.asDiagonal() * coeff;
            out.values[i] = probe_modes.transpose() * scaled;
            const Eigen::MatrixXcd u = *modes.eigenvectors * scaled;
            const Eigen::MatrixXcd r = detunings[i] * u - h.matrix * u - rhs;
            out.residuals[i] = detail::max_column_residual(r, rhs);
        }
        break;
    }
    case SweepStrategy::Hessenberg: {
        const lapack::HessenbergReduction reduction(h.matrix);
        const Eigen::MatrixXcd z = reduction.apply_adjoint(rhs);
        // probes^T Q y = (Q^T probes)^T y, and Q^T p = conj(Q^H conj(p)).
        const Eigen::MatrixXcd probe_frame =
            reduction.apply_adjoint(probes.conjugate()).conjugate();
        Eigen::Matrix<complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> work;
        for (std::size_t i = 0; i < detunings.size(); ++i) {
            const Eigen::MatrixXcd y =
                detail::solve_shifted_hessenberg(reduction.hessenberg(), detunings[i], z, work);
            out.values[i] = probe_frame.transpose() * y;
            const Eigen::MatrixXcd r = detunings[i] * y - reduction.hessenberg() * y - z;
            out.residuals[i] = detail::max_column_residual(r, z);
        }
        break;
    }
    }
    return out;
}

/// Steady-state amplitudes at every detuning of the grid. Results agree with
/// per-point solve_resolvent to ~1e-8 relative whichever strategy is used.
inline std::vector<SteadyStateAmplitudes> sweep_detunings(const EffectiveHamiltonian& h,
                                                          std::span<const double> detunings,
                                                          const Eigen::VectorXcd& rhs,
                                                          const SweepOptions& options = {})
{
    if (h.variant != KernelVariant::Polar) {
        throw InvalidArgument("detuning sweeps require the frequency-independent polar kernel");
    }
    std::vector<SteadyStateAmplitudes> out;
    out.reserve(detunings.size());
    switch (resolve_strategy(detunings.size(), options)) {
    case SweepStrategy::Auto:
    case SweepStrategy::PerPointLU:
        for (const double delta : detunings) {
            out.push_back(solve_resolvent(h, delta, rhs));
        }
        break;
    case SweepStrategy::Spectral: {
        const ModeSpectrum modes = mode_spectrum(h, true);
        const Eigen::VectorXcd coeff = modes.coefficients(rhs);
        for (const double delta : detunings) {
            SteadyStateAmplitudes amp;
            amp.detuning = delta;
            amp.u = modes.eigenvectors_times(coeff, delta);
            amp.residual = relative_residual(h.matrix, delta, amp.u, rhs);
            out.push_back(std::move(amp));
        }
        break;
    }
    case SweepStrategy::Hessenberg: {
        const lapack::HessenbergReduction reduction(h.matrix);
        const Eigen::VectorXcd z = reduction.apply_adjoint(rhs);
        Eigen::Matrix<complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> work;
        for (const double delta : detunings) {
            const Eigen::VectorXcd y =
                detail::solve_shifted_hessenberg(reduction.hessenberg(), delta, z, work);
            SteadyStateAmplitudes amp;
            amp.detuning = delta;
            amp.u = reduction.apply_q(y);
            amp.residual = relative_residual(h.matrix, delta, amp.u, rhs);
            out.push_back(std::move(amp));
        }
        break;
    }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Binary dump
// ---------------------------------------------------------------------------
//
// Layout (all little-endian):
//   char[4]  magic "CDSM"
//   uint32   format version (1)
//   uint64   rows
//   uint64   cols
//   rows*cols pairs of float64 (real, imag), row-major
//
// A Hamiltonian dump is one such block for Sigma followed, optionally, by a
// block of eigenvalues with cols = 1.

inline void write_matrix_binary(std::ostream& out, const Eigen::MatrixXcd& m)
{
    out.write("CDSM", 4);
    const std::uint32_t version = 1;
    for (int i = 0; i < 4; ++i) {
        out.put(static_cast<char>((version >> (8 * i)) & 0xffU));
    }
    detail::write_le64(out, static_cast<std::uint64_t>(m.rows()));
    detail::write_le64(out, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            detail::write_le64(out, std::bit_cast<std::uint64_t>(m(i, j).real()));
            detail::write_le64(out, std::bit_cast<std::uint64_t>(m(i, j).imag()));
        }
    }
}

inline Eigen::MatrixXcd read_matrix_binary(std::istream& in)
{
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "CDSM") {
        throw InvalidArgument("binary matrix: bad magic");
    }
    unsigned char ver[4];
    in.read(reinterpret_cast<char*>(ver), 4);
    if (!in || ver[0] != 1 || ver[1] != 0 || ver[2] != 0 || ver[3] != 0) {
        throw InvalidArgument("binary matrix: unsupported version");
    }
    const auto rows = static_cast<Eigen::Index>(detail::read_le64(in));
    const auto cols = static_cast<Eigen::Index>(detail::read_le64(in));
    Eigen::MatrixXcd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
            const double re = std::bit_cast<double>(detail::read_le64(in));
            const double im = std::bit_cast<double>(detail::read_le64(in));
            m(i, j) = complex(re, im);
        }
    }
    return m;
}

inline void dump_hamiltonian(std::ostream& out, const EffectiveHamiltonian& h,
                             const ModeSpectrum* modes = nullptr)
{
    write_matrix_binary(out, h.matrix);
    if (modes) {
        write_matrix_binary(out, modes->eigenvalues);
    }
}

} // namespace cdsim
