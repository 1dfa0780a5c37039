#include "tvb/tensor.hpp"

#include <string>

namespace tvb {

namespace {

void check_shape(const Shape& shape) {
    if (shape.empty())
        throw DimensionError("tensor order must be at least 1");
    for (Index s : shape)
        if (s < 1)
            throw DimensionError("tensor extents must be positive");
}

Index linear_index(const Shape& shape, const std::vector<Index>& idx) {
    if (idx.size() != shape.size())
        throw DimensionError("multi-index order does not match tensor order");
    Index lin = 0;
    Index stride = 1;
    for (size_t k = 0; k < shape.size(); ++k) {
        if (idx[k] < 0 || idx[k] >= shape[k])
            throw DimensionError("multi-index out of bounds in mode " + std::to_string(k + 1));
        lin += idx[k] * stride;
        stride *= shape[k];
    }
    return lin;
}

} // namespace

DenseTensor::DenseTensor(Shape shape, Vector data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (data_.size() != shape_product(shape_))
        throw DimensionError("data length does not match shape product");
}

DenseTensor::DenseTensor(Shape shape) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_ = Vector::Zero(shape_product(shape_));
}

double& DenseTensor::at(const std::vector<Index>& idx) {
    return data_[linear_index(shape_, idx)];
}

double DenseTensor::at(const std::vector<Index>& idx) const {
    return data_[linear_index(shape_, idx)];
}

Index shape_product(const Shape& shape) {
    Index p = 1;
    for (Index s : shape)
        p *= s;
    return p;
}

Vector vectorize(const DenseTensor& t) {
    return t.data();
}

DenseTensor unvectorize(const Vector& v, const Shape& shape) {
    check_shape(shape);
    if (v.size() != shape_product(shape))
        throw DimensionError("vector length does not match shape product");
    return DenseTensor(shape, v);
}

Matrix mode_unfold(const DenseTensor& t, Index k) {
    const Shape& shape = t.shape();
    const Index d = t.order();
    if (k < 1 || k > d)
        throw ModeError("mode index " + std::to_string(k) + " outside 1.." + std::to_string(d));
    const Index rows = shape[k - 1];
    const Index cols = t.size() / rows;
    Matrix out(rows, cols);

    // Stride of mode k in the flat layout, and the flat layout split into the
    // block below mode k (inner, contiguous) and above it (outer).
    Index inner = 1;
    for (Index j = 0; j < k - 1; ++j)
        inner *= shape[j];
    const Index outer = t.size() / (inner * rows);

    const Vector& v = t.data();
    for (Index o = 0; o < outer; ++o)
        for (Index r = 0; r < rows; ++r)
            for (Index i = 0; i < inner; ++i)
                out(r, o * inner + i) = v[(o * rows + r) * inner + i];
    return out;
}

DenseTensor mode_refold(const Matrix& m, Index k, const Shape& shape) {
    check_shape(shape);
    const Index d = static_cast<Index>(shape.size());
    if (k < 1 || k > d)
        throw ModeError("mode index " + std::to_string(k) + " outside 1.." + std::to_string(d));
    const Index rows = shape[k - 1];
    const Index total = shape_product(shape);
    if (m.rows() != rows || m.cols() != total / rows)
        throw DimensionError("unfolded matrix does not match target shape");

    Index inner = 1;
    for (Index j = 0; j < k - 1; ++j)
        inner *= shape[j];
    const Index outer = total / (inner * rows);

    Vector v(total);
    for (Index o = 0; o < outer; ++o)
        for (Index r = 0; r < rows; ++r)
            for (Index i = 0; i < inner; ++i)
                v[(o * rows + r) * inner + i] = m(r, o * inner + i);
    return DenseTensor(shape, std::move(v));
}

DenseTensor mode_product(const DenseTensor& t, const Matrix& m, Index k) {
    const Index d = t.order();
    if (k < 1 || k > d)
        throw ModeError("mode index " + std::to_string(k) + " outside 1.." + std::to_string(d));
    if (m.cols() != t.shape()[k - 1])
        throw DimensionError("matrix columns do not match mode-" + std::to_string(k) + " extent");
    Matrix unfolded = mode_unfold(t, k);
    Shape new_shape = t.shape();
    new_shape[k - 1] = m.rows();
    return mode_refold(m * unfolded, k, new_shape);
}

Matrix kronecker(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

Matrix kronecker_chain_reversed(const std::vector<Matrix>& factors) {
    if (factors.empty())
        throw DimensionError("factor list must not be empty");
    Matrix acc = factors.back();
    for (auto it = factors.rbegin() + 1; it != factors.rend(); ++it)
        acc = kronecker(acc, *it);
    return acc;
}

DenseTensor tucker_reconstruct(const DenseTensor& core, const std::vector<Matrix>& factors) {
    if (static_cast<Index>(factors.size()) != core.order())
        throw DimensionError("factor count does not match core order");
    DenseTensor acc = core;
    for (Index k = 1; k <= core.order(); ++k)
        acc = mode_product(acc, factors[k - 1], k);
    return acc;
}

} // namespace tvb
