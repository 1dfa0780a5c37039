#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tvb/tensor.hpp"

namespace tvb {

/// Thin SVD of a design matrix together with the projected observation.
/// Singular values are strictly positive (components below
/// max(s) * 1e-14 are truncated) and sorted in descending order.
struct SvdSystem {
    Matrix u;   // m x r
    Vector s;   // r, descending
    Matrix v;   // n x r
    Vector uty; // u' y
    double y_norm2 = 0.0;

    Index m() const { return u.rows(); }
    Index n() const { return v.rows(); }
    Index rank() const { return s.size(); }
};

SvdSystem svd_system_from_dense(const Matrix& a, const Vector& y);

/// SVD of A = F_d (x) ... (x) F_1 assembled from the factor SVDs; never forms
/// A itself. factors[k-1] acts along mode k.
SvdSystem svd_system_from_kron(const std::vector<Matrix>& factors, const Vector& y);

/// x(lambda) = sum_i s_i / (s_i^2 + lambda) (u_i' y) v_i. lambda >= 0.
Vector tikhonov_solve(const SvdSystem& sys, double lambda);

/// Log-spaced grid covering [min(s)^2 * 1e-4, max(s)^2 * 1e4].
Vector default_lambda_grid(const SvdSystem& sys, Index points = 200);

struct SelectionResult {
    double lambda = 0.0;
    /// (lambda, criterion value) at every grid point, grid order.
    std::vector<std::pair<double, double>> criterion_curve;
    std::string method;
    /// Discrepancy principle only: the target residual was not bracketed by
    /// the grid and the nearest endpoint was returned.
    bool at_boundary = false;
};

/// Maximizes the curvature of (log ||r||^2, log ||x||^2); the curve stores
/// the signed curvature. Throws SelectionError when the curve is degenerate.
SelectionResult lcurve_select(const SvdSystem& sys, const Vector& grid);

/// Minimizes m ||r||^2 / (m - sum_i s_i^2/(s_i^2+lambda))^2. Throws
/// SelectionError when the criterion is flat across the grid.
SelectionResult gcv_select(const SvdSystem& sys, const Vector& grid);

/// Minimizes ||r||^2/m + (2 sigma2/m) sum_i s_i^2/(s_i^2+lambda) - sigma2.
SelectionResult upre_select(const SvdSystem& sys, double sigma2, const Vector& grid);

/// Root of ||r(lambda)||^2 = tau m sigma2 by bisection in log lambda; returns
/// the nearest grid endpoint flagged at_boundary when there is no sign
/// change. The curve stores the discrepancy ||r||^2 - tau m sigma2.
SelectionResult dp_select(const SvdSystem& sys, double sigma2, const Vector& grid,
                          double tau = 1.0);

} // namespace tvb
