#pragma once

#include <variant>
#include <vector>

#include "tvb/tensor.hpp"

namespace tvb {

/// Explicit dense forward map y = A x.
struct DenseOp {
    Matrix a;
};

/// A = A_d (x) ... (x) A_1 with factors[k-1] acting along mode k. Factors may
/// be rectangular; mode k of the input has factors[k-1].cols() entries.
struct SeparableOp {
    std::vector<Matrix> factors;
};

/// A = B diag(multipliers) B' where B is the Kronecker product (reversed
/// order) of the per-mode orthonormal bases. mode_keys[k][c] is a scalar decay
/// key for column c of bases[k] (larger key = faster-decaying component);
/// multipliers holds one value per flat multi-index, first mode fastest.
struct SpectralDiagonalOp {
    std::vector<Matrix> bases;
    std::vector<Vector> mode_keys;
    Vector multipliers;
};

using ForwardOperator = std::variant<DenseOp, SeparableOp, SpectralDiagonalOp>;

Index op_rows(const ForwardOperator& op);
Index op_cols(const ForwardOperator& op);
Shape op_input_shape(const ForwardOperator& op);

/// y = A x without materializing A for the structured representations.
Vector op_apply(const ForwardOperator& op, const Vector& x);

/// Dense realization of the operator; intended for small sizes and oracles.
Matrix materialize(const ForwardOperator& op);

/// Orthonormal per-mode factors U_k (I_k x R_k) spanning a reduced
/// coefficient space of dimension n_g = prod R_k.
struct TuckerSubspace {
    std::vector<Matrix> factors;
    std::vector<Index> ranks;

    Index order() const { return static_cast<Index>(factors.size()); }
    Index n_g() const;
    Shape input_shape() const;

    /// x = (U_d (x) ... (x) U_1) g via mode products.
    Vector expand(const Vector& g) const;
    /// g = (U_d (x) ... (x) U_1)' x, the coefficients of the best
    /// subspace approximation of x.
    Vector project(const Vector& x) const;
    /// Materialized U_d (x) ... (x) U_1; small cases only.
    Matrix kron_full() const;
    /// Throws NumericalError unless every factor is orthonormal to tol.
    void validate(double tol = 1e-10) const;
};

/// Per-mode leading right singular vectors of the separable factors.
TuckerSubspace build_subspace_from_separable(const SeparableOp& op,
                                             const std::vector<Index>& ranks);

/// Per-mode basis columns with the smallest decay keys (slowest-decaying
/// components), in ascending key order, ties kept in original column order.
TuckerSubspace build_subspace_from_spectral(const SpectralDiagonalOp& op,
                                            const std::vector<Index>& ranks);

/// The projected least-squares system in reduced coordinates.
struct ReducedSystem {
    Matrix a_tilde; // m x n_g
    Matrix gram;    // a_tilde' a_tilde, exactly symmetric
    Vector aty;     // a_tilde' y
    Vector y;

    Index m() const { return y.size(); }
    Index n_g() const { return gram.rows(); }
};

/// Builds the reduced system; separable operators are projected per mode
/// without materializing A.
ReducedSystem reduce(const ForwardOperator& op, const TuckerSubspace& sub, const Vector& y);

/// Reduced system directly from an explicit design matrix.
ReducedSystem make_reduced_system(const Matrix& a_tilde, const Vector& y);

/// Identity subspace (single mode, full rank) so full-space problems can run
/// through the reduced-system machinery unchanged.
TuckerSubspace identity_subspace(Index n);

} // namespace tvb
