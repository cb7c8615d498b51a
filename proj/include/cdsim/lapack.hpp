#pragma once

// Thin wrappers over the LAPACK routines used for non-Hermitian spectra and
// Hessenberg reduction. Eigen matrices are column-major, as LAPACK expects.

#include <complex>
#include <string>
#include <utility>

#ifndef lapack_complex_float
#define lapack_complex_float std::complex<float>
#endif
#ifndef lapack_complex_double
#define lapack_complex_double std::complex<double>
#endif
#include <lapacke.h>

#include <Eigen/Core>

#include "cdsim/error.hpp"

namespace cdsim::lapack {

inline void check(lapack_int info, const char* routine)
{
    if (info < 0) {
        throw LapackError(std::string(routine) + ": illegal value in argument "
                          + std::to_string(-info));
    }
    if (info > 0) {
        throw LapackError(std::string(routine) + ": failed to converge (info = "
                          + std::to_string(info) + ")");
    }
}

/// Eigenvalues and, optionally, right eigenvectors of a general complex matrix.
inline void eigen_decomposition(Eigen::MatrixXcd a, Eigen::VectorXcd& eigenvalues,
                                Eigen::MatrixXcd* eigenvectors)
{
    const lapack_int n = static_cast<lapack_int>(a.rows());
    eigenvalues.resize(n);
    if (n == 0) {
        if (eigenvectors) {
            eigenvectors->resize(0, 0);
        }
        return;
    }
    std::complex<double> dummy{};
    if (eigenvectors) {
        eigenvectors->resize(n, n);
    }
    const lapack_int info = LAPACKE_zgeev(
        LAPACK_COL_MAJOR, 'N', eigenvectors ? 'V' : 'N', n, a.data(), n, eigenvalues.data(),
        &dummy, 1, eigenvectors ? eigenvectors->data() : &dummy, eigenvectors ? n : 1);
    check(info, "zgeev");
}

/// Unitary reduction A = Q H Q^H with H upper Hessenberg.
class HessenbergReduction {
public:
    explicit HessenbergReduction(Eigen::MatrixXcd a) : packed_(std::move(a))
    {
        const lapack_int n = static_cast<lapack_int>(packed_.rows());
        tau_.resize(n > 1 ? n - 1 : 1);
        if (n > 1) {
            check(LAPACKE_zgehrd(LAPACK_COL_MAJOR, n, 1, n, packed_.data(), n, tau_.data()),
                  "zgehrd");
        }
        hessenberg_ = packed_;
        for (lapack_int j = 0; j < n; ++j) {
            for (lapack_int i = j + 2; i < n; ++i) {
                hessenberg_(i, j) = 0.0;
            }
        }
    }

    const Eigen::MatrixXcd& hessenberg() const noexcept { return hessenberg_; }

    /// Q^H x for each column of x.
    Eigen::MatrixXcd apply_adjoint(Eigen::MatrixXcd x) const { return apply(std::move(x), 'C'); }

    /// Q x for each column of x.
    Eigen::MatrixXcd apply_q(Eigen::MatrixXcd x) const { return apply(std::move(x), 'N'); }

private:
    Eigen::MatrixXcd apply(Eigen::MatrixXcd x, char trans) const
    {
        const lapack_int n = static_cast<lapack_int>(packed_.rows());
        if (n <= 1 || x.cols() == 0) {
            return x;
        }
        const lapack_int m = static_cast<lapack_int>(x.cols());
        check(LAPACKE_zunmhr(LAPACK_COL_MAJOR, 'L', trans, n, m, 1, n, packed_.data(), n,
                             tau_.data(), x.data(), n),
              "zunmhr");
        return x;
    }

    Eigen::MatrixXcd packed_;
    Eigen::VectorXcd tau_;
    Eigen::MatrixXcd hessenberg_;
};

} // namespace cdsim::lapack
