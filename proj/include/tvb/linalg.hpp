#pragma once

#include <lapacke.h>

#include <Eigen/Dense>
#include <cstdlib>
#include <cstring>
#include <string>

#include "tvb/errors.hpp"
#include "tvb/tensor.hpp"

#if defined(__linux__) && defined(__x86_64__)
#include <unistd.h>
extern "C" char* openblas_get_corename(void);
#endif

namespace tvb::linalg {

/// OpenBLAS picks its kernel set from CPUID at load time. Hypervisors that
/// mask the model string strand it on the pre-AVX fallback, roughly 4x slower
/// than the wide-vector kernels the hardware supports. Detect that case and
/// restart the process once with the dispatch pinned. Call first in main().
inline void ensure_fast_blas(char** argv) {
#if defined(__linux__) && defined(__x86_64__) && defined(__GNUC__)
    if (std::getenv("OPENBLAS_CORETYPE") != nullptr) return;
    if (!__builtin_cpu_supports("avx512f")) return;
    const char* core = openblas_get_corename();
    if (core == nullptr) return;
    if (std::strcmp(core, "Prescott") != 0 && std::strcmp(core, "generic") != 0) return;
    ::setenv("OPENBLAS_CORETYPE", "SKYLAKEX", 1);
    ::execv("/proc/self/exe", argv); // on failure fall through and run slow
#endif
    (void)argv;
}

struct Svd {
    Matrix u; // m x k
    Vector s; // descending
    Matrix v; // n x k
};

/// Thin SVD via LAPACK with deterministic column signs (largest-magnitude
/// entry of each left singular vector made positive).
inline Svd svd_econ(const Matrix& a) {
    const Index m = a.rows(), n = a.cols(), k = std::min(m, n);
    Matrix work = a;
    Svd out{Matrix(m, k), Vector(k), Matrix(n, k)};
    Matrix vt(k, n);
    lapack_int info = LAPACKE_dgesdd(LAPACK_COL_MAJOR, 'S', static_cast<lapack_int>(m),
                                     static_cast<lapack_int>(n), work.data(),
                                     static_cast<lapack_int>(m), out.s.data(), out.u.data(),
                                     static_cast<lapack_int>(m), vt.data(),
                                     static_cast<lapack_int>(k));
    if (info != 0)
        throw NumericalError("SVD failed to converge (dgesdd info=" + std::to_string(info) + ")");
    out.v = vt.transpose();
    for (Index j = 0; j < k; ++j) {
        Index imax;
        out.u.col(j).cwiseAbs().maxCoeff(&imax);
        if (out.u(imax, j) < 0.0) {
            out.u.col(j) = -out.u.col(j);
            out.v.col(j) = -out.v.col(j);
        }
    }
    return out;
}

struct Eigh {
    Vector values;  // ascending
    Matrix vectors; // columns
};

/// Eigendecomposition of a symmetric matrix.
inline Eigh eigh(const Matrix& a) {
    const Index n = a.rows();
    Eigh out{Vector(n), a};
    lapack_int info = LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'V', 'L', static_cast<lapack_int>(n),
                                     out.vectors.data(), static_cast<lapack_int>(n),
                                     out.values.data());
    if (info != 0)
        throw NumericalError("symmetric eigendecomposition failed (dsyevd info=" +
                             std::to_string(info) + ")");
    return out;
}

/// Cholesky factorization in place, lower triangle: A -> L with A = L L'.
/// The upper triangle is left untouched. Returns the LAPACK info code;
/// info > 0 means the leading minor of that order is not positive definite.
inline lapack_int cholesky_inplace(Matrix& a) {
    return LAPACKE_dpotrf(LAPACK_COL_MAJOR, 'L', static_cast<lapack_int>(a.rows()), a.data(),
                          static_cast<lapack_int>(a.rows()));
}

/// Solves (L L') x = b given a factor from cholesky_inplace.
inline Vector cholesky_solve(const Matrix& l, Vector b) {
    lapack_int info = LAPACKE_dpotrs(LAPACK_COL_MAJOR, 'L', static_cast<lapack_int>(l.rows()), 1,
                                     l.data(), static_cast<lapack_int>(l.rows()), b.data(),
                                     static_cast<lapack_int>(b.size()));
    if (info != 0)
        throw NumericalError("cholesky solve failed (dpotrs info=" + std::to_string(info) + ")");
    return b;
}

/// Inverts a lower-triangular Cholesky factor in place: L -> inv(L).
inline void invert_cholesky_factor(Matrix& l) {
    lapack_int info = LAPACKE_dtrtri(LAPACK_COL_MAJOR, 'L', 'N',
                                     static_cast<lapack_int>(l.rows()), l.data(),
                                     static_cast<lapack_int>(l.rows()));
    if (info != 0)
        throw NumericalError("triangular inversion failed (dtrtri info=" + std::to_string(info) +
                             ")");
}

/// Given inv(L) in the lower triangle, forms the full symmetric inverse
/// inv(L)' * inv(L) = inv(L L').
inline Matrix symmetric_inverse_from_inverted_factor(Matrix linv) {
    const Index n = linv.rows();
    lapack_int info = LAPACKE_dlauum(LAPACK_COL_MAJOR, 'L', static_cast<lapack_int>(n),
                                     linv.data(), static_cast<lapack_int>(n));
    if (info != 0)
        throw NumericalError("triangular product failed (dlauum info=" + std::to_string(info) +
                             ")");
    linv.triangularView<Eigen::StrictlyUpper>() = linv.transpose();
    return linv;
}

/// Squared column norms of a lower-triangular matrix; with inv(L) as input
/// these are the diagonal entries of inv(L L').
inline Vector lower_triangular_column_norms2(const Matrix& l) {
    const Index n = l.rows();
    Vector d(n);
    for (Index j = 0; j < n; ++j)
        d[j] = l.col(j).tail(n - j).squaredNorm();
    return d;
}

} // namespace tvb::linalg
