#include "tvb/operators.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "tvb/errors.hpp"
#include "tvb/linalg.hpp"

namespace tvb {

namespace {

Shape separable_input_shape(const SeparableOp& op) {
    if (op.factors.empty()) throw DimensionError("separable operator needs at least one factor");
    Shape s(op.factors.size());
    for (size_t k = 0; k < op.factors.size(); ++k) s[k] = op.factors[k].cols();
    return s;
}

Shape separable_output_shape(const SeparableOp& op) {
    Shape s(op.factors.size());
    for (size_t k = 0; k < op.factors.size(); ++k) s[k] = op.factors[k].rows();
    return s;
}

Shape spectral_shape(const SpectralDiagonalOp& op) {
    if (op.bases.empty()) throw DimensionError("spectral operator needs at least one basis");
    if (op.mode_keys.size() != op.bases.size())
        throw DimensionError("spectral operator: one key vector per mode required");
    Shape s(op.bases.size());
    for (size_t k = 0; k < op.bases.size(); ++k) {
        if (op.bases[k].rows() != op.bases[k].cols())
            throw DimensionError("spectral basis for mode " + std::to_string(k + 1) +
                                 " must be square");
        if (op.mode_keys[k].size() != op.bases[k].cols())
            throw DimensionError("spectral keys for mode " + std::to_string(k + 1) +
                                 " must match basis column count");
        s[k] = op.bases[k].rows();
    }
    if (op.multipliers.size() != shape_product(s))
        throw DimensionError("spectral multiplier count must equal total grid size");
    return s;
}

} // namespace

Index op_rows(const ForwardOperator& op) {
    return std::visit(
        [](const auto& o) -> Index {
            using T = std::decay_t<decltype(o)>;
            if constexpr (std::is_same_v<T, DenseOp>) return o.a.rows();
            else if constexpr (std::is_same_v<T, SeparableOp>)
                return shape_product(separable_output_shape(o));
            else return shape_product(spectral_shape(o));
        },
        op);
}

Index op_cols(const ForwardOperator& op) { return shape_product(op_input_shape(op)); }

Shape op_input_shape(const ForwardOperator& op) {
    return std::visit(
        [](const auto& o) -> Shape {
            using T = std::decay_t<decltype(o)>;
            if constexpr (std::is_same_v<T, DenseOp>) return Shape{o.a.cols()};
            else if constexpr (std::is_same_v<T, SeparableOp>) return separable_input_shape(o);
            else return spectral_shape(o);
        },
        op);
}

Vector op_apply(const ForwardOperator& op, const Vector& x) {
    if (x.size() != op_cols(op))
        throw DimensionError("apply: input has length " + std::to_string(x.size()) +
                             ", operator expects " + std::to_string(op_cols(op)));
    if (const auto* d = std::get_if<DenseOp>(&op)) return d->a * x;
    if (const auto* s = std::get_if<SeparableOp>(&op)) {
        DenseTensor t = unvectorize(x, separable_input_shape(*s));
        for (size_t k = 0; k < s->factors.size(); ++k)
            t = mode_product(t, s->factors[k], static_cast<Index>(k + 1));
        return vectorize(t);
    }
    const auto& sp = std::get<SpectralDiagonalOp>(op);
    Shape shape = spectral_shape(sp);
    DenseTensor t = unvectorize(x, shape);
    for (size_t k = 0; k < sp.bases.size(); ++k)
        t = mode_product(t, sp.bases[k].transpose(), static_cast<Index>(k + 1));
    t.data().array() *= sp.multipliers.array();
    for (size_t k = 0; k < sp.bases.size(); ++k)
        t = mode_product(t, sp.bases[k], static_cast<Index>(k + 1));
    return vectorize(t);
}

Matrix materialize(const ForwardOperator& op) {
    if (const auto* d = std::get_if<DenseOp>(&op)) return d->a;
    if (const auto* s = std::get_if<SeparableOp>(&op))
        return kronecker_chain_reversed(s->factors);
    const auto& sp = std::get<SpectralDiagonalOp>(op);
    spectral_shape(sp);
    Matrix b = kronecker_chain_reversed(sp.bases);
    return b * sp.multipliers.asDiagonal() * b.transpose();
}

Index TuckerSubspace::n_g() const {
    Index p = 1;
    for (Index r : ranks) p *= r;
    return p;
}

Shape TuckerSubspace::input_shape() const {
    Shape s(factors.size());
    for (size_t k = 0; k < factors.size(); ++k) s[k] = factors[k].rows();
    return s;
}

Vector TuckerSubspace::expand(const Vector& g) const {
    if (g.size() != n_g())
        throw DimensionError("expand: coefficient vector has length " + std::to_string(g.size()) +
                             ", subspace dimension is " + std::to_string(n_g()));
    DenseTensor core = unvectorize(g, ranks);
    return vectorize(tucker_reconstruct(core, factors));
}

Vector TuckerSubspace::project(const Vector& x) const {
    if (x.size() != shape_product(input_shape()))
        throw DimensionError("project: vector length does not match subspace input shape");
    DenseTensor t = unvectorize(x, input_shape());
    for (size_t k = 0; k < factors.size(); ++k)
        t = mode_product(t, factors[k].transpose(), static_cast<Index>(k + 1));
    return vectorize(t);
}

Matrix TuckerSubspace::kron_full() const { return kronecker_chain_reversed(factors); }

void TuckerSubspace::validate(double tol) const {
    if (factors.empty()) throw DimensionError("subspace needs at least one factor");
    if (ranks.size() != factors.size())
        throw DimensionError("subspace rank list must match factor count");
    for (size_t k = 0; k < factors.size(); ++k) {
        const Matrix& u = factors[k];
        if (u.cols() != ranks[k])
            throw DimensionError("subspace factor " + std::to_string(k + 1) +
                                 " column count disagrees with rank list");
        if (u.cols() > u.rows())
            throw RankError("subspace factor " + std::to_string(k + 1) +
                            " has more columns than rows");
        Matrix gram = u.transpose() * u;
        double err = (gram - Matrix::Identity(u.cols(), u.cols())).cwiseAbs().maxCoeff();
        if (err > tol)
            throw NumericalError("subspace factor " + std::to_string(k + 1) +
                                 " is not orthonormal (deviation " + std::to_string(err) + ")");
    }
}

TuckerSubspace build_subspace_from_separable(const SeparableOp& op,
                                             const std::vector<Index>& ranks) {
    if (ranks.size() != op.factors.size())
        throw DimensionError("rank list must have one entry per operator mode");
    TuckerSubspace sub;
    sub.ranks = ranks;
    sub.factors.reserve(ranks.size());
    for (size_t k = 0; k < op.factors.size(); ++k) {
        const Matrix& a = op.factors[k];
        Index rmax = std::min(a.rows(), a.cols());
        if (ranks[k] < 1 || ranks[k] > rmax)
            throw RankError("mode " + std::to_string(k + 1) + " rank " +
                            std::to_string(ranks[k]) + " outside [1, " + std::to_string(rmax) +
                            "]");
        linalg::Svd svd = linalg::svd_econ(a);
        sub.factors.push_back(svd.v.leftCols(ranks[k]));
    }
    sub.validate();
    return sub;
}

TuckerSubspace build_subspace_from_spectral(const SpectralDiagonalOp& op,
                                            const std::vector<Index>& ranks) {
    Shape shape = spectral_shape(op);
    if (ranks.size() != op.bases.size())
        throw DimensionError("rank list must have one entry per operator mode");
    TuckerSubspace sub;
    sub.ranks = ranks;
    sub.factors.reserve(ranks.size());
    for (size_t k = 0; k < op.bases.size(); ++k) {
        if (ranks[k] < 1 || ranks[k] > shape[k])
            throw RankError("mode " + std::to_string(k + 1) + " rank " +
                            std::to_string(ranks[k]) + " outside [1, " +
                            std::to_string(shape[k]) + "]");
        std::vector<Index> order(static_cast<size_t>(shape[k]));
        std::iota(order.begin(), order.end(), Index{0});
        const Vector& keys = op.mode_keys[k];
        std::stable_sort(order.begin(), order.end(),
                         [&keys](Index a, Index b) { return keys[a] < keys[b]; });
        Matrix u(shape[k], ranks[k]);
        for (Index j = 0; j < ranks[k]; ++j) u.col(j) = op.bases[k].col(order[static_cast<size_t>(j)]);
        sub.factors.push_back(std::move(u));
    }
    sub.validate();
    return sub;
}

namespace {

Matrix symmetrized_gram(const Matrix& a) {
    Matrix g = a.transpose() * a;
    g = 0.5 * (g + g.transpose()).eval();
    return g;
}

} // namespace

ReducedSystem reduce(const ForwardOperator& op, const TuckerSubspace& sub, const Vector& y) {
    if (y.size() != op_rows(op))
        throw DimensionError("reduce: observation length " + std::to_string(y.size()) +
                             " does not match operator output size " +
                             std::to_string(op_rows(op)));
    Shape in = op_input_shape(op);
    Shape sin = sub.input_shape();
    if (std::holds_alternative<DenseOp>(op)) {
        if (shape_product(sin) != shape_product(in))
            throw DimensionError("reduce: subspace does not match operator input size");
    } else if (in != sin) {
        throw DimensionError("reduce: subspace shape does not match operator input shape");
    }

    ReducedSystem sys;
    sys.y = y;
    if (const auto* s = std::get_if<SeparableOp>(&op)) {
        // Project each mode separately: A_tilde = (A_d U_d) (x) ... (x) (A_1 U_1).
        std::vector<Matrix> reduced(s->factors.size());
        std::vector<Matrix> grams(s->factors.size());
        for (size_t k = 0; k < s->factors.size(); ++k) {
            if (s->factors[k].cols() != sub.factors[k].rows())
                throw DimensionError("reduce: factor/subspace mismatch on mode " +
                                     std::to_string(k + 1));
            reduced[k] = s->factors[k] * sub.factors[k];
            grams[k] = symmetrized_gram(reduced[k]);
        }
        sys.a_tilde = kronecker_chain_reversed(reduced);
        sys.gram = kronecker_chain_reversed(grams);
    } else {
        Matrix u = sub.kron_full();
        sys.a_tilde.resize(op_rows(op), sub.n_g());
        for (Index j = 0; j < u.cols(); ++j) sys.a_tilde.col(j) = op_apply(op, Vector(u.col(j)));
        sys.gram = symmetrized_gram(sys.a_tilde);
    }
    sys.aty = sys.a_tilde.transpose() * y;
    return sys;
}

ReducedSystem make_reduced_system(const Matrix& a_tilde, const Vector& y) {
    if (y.size() != a_tilde.rows())
        throw DimensionError("observation length does not match design matrix rows");
    ReducedSystem sys;
    sys.a_tilde = a_tilde;
    sys.gram = symmetrized_gram(a_tilde);
    sys.aty = a_tilde.transpose() * y;
    sys.y = y;
    return sys;
}

TuckerSubspace identity_subspace(Index n) {
    TuckerSubspace sub;
    sub.factors = {Matrix::Identity(n, n)};
    sub.ranks = {n};
    return sub;
}

} // namespace tvb
