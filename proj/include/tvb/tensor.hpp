#pragma once

#include <Eigen/Dense>
#include <vector>

#include "tvb/errors.hpp"

namespace tvb {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;
using Shape = std::vector<Index>;

/// Dense d-way tensor. Entries are stored flat with the first index fastest,
/// so vec(X) obeys the standard identity vec(G x1 U1 ... xd Ud) =
/// (Ud kron ... kron U1) vec(G).
class DenseTensor {
  public:
    DenseTensor() = default;
    DenseTensor(Shape shape, Vector data);
    /// Zero tensor of the given shape.
    explicit DenseTensor(Shape shape);

    const Shape& shape() const { return shape_; }
    Index order() const { return static_cast<Index>(shape_.size()); }
    Index size() const { return data_.size(); }
    const Vector& data() const { return data_; }
    Vector& data() { return data_; }

    /// Element access by zero-based multi-index.
    double& at(const std::vector<Index>& idx);
    double at(const std::vector<Index>& idx) const;

    double frobenius_norm() const { return data_.norm(); }

    bool same_shape(const DenseTensor& other) const { return shape_ == other.shape_; }

  private:
    Shape shape_;
    Vector data_;
};

Index shape_product(const Shape& shape);

/// Flatten with the first index fastest. The inverse of unvectorize.
Vector vectorize(const DenseTensor& t);

/// Wrap a flat vector as a tensor of the given shape.
DenseTensor unvectorize(const Vector& v, const Shape& shape);

/// Mode-k unfolding (k is 1-based): row i_k collects all entries whose k-th
/// index equals i_k; columns run over the remaining indices in increasing
/// mode order with the earliest remaining mode fastest.
Matrix mode_unfold(const DenseTensor& t, Index k);

/// Inverse of mode_unfold for a tensor of the given shape.
DenseTensor mode_refold(const Matrix& m, Index k, const Shape& shape);

/// Mode-k product: contracts the k-th index against the columns of M.
DenseTensor mode_product(const DenseTensor& t, const Matrix& m, Index k);

Matrix kronecker(const Matrix& a, const Matrix& b);

/// Kronecker product U_d kron ... kron U_1 of a factor list.
Matrix kronecker_chain_reversed(const std::vector<Matrix>& factors);

/// G x1 U1 x2 ... xd Ud.
DenseTensor tucker_reconstruct(const DenseTensor& core, const std::vector<Matrix>& factors);

} // namespace tvb
