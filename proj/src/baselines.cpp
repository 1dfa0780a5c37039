#include "tvb/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "tvb/errors.hpp"
#include "tvb/linalg.hpp"

namespace tvb {

namespace {

constexpr double kTruncationRatio = 1e-14;

SvdSystem finalize_system(Matrix u, Vector s, Matrix v, const Vector& y) {
    if (y.size() != u.rows())
        throw DimensionError("observation length does not match design matrix rows");
    if (s.size() == 0 || s.maxCoeff() <= 0.0)
        throw NumericalError("design matrix is numerically zero");
    const double cutoff = s.maxCoeff() * kTruncationRatio;
    Index r = 0;
    while (r < s.size() && s[r] > cutoff) ++r;
    SvdSystem sys;
    sys.u = u.leftCols(r);
    sys.s = s.head(r);
    sys.v = v.leftCols(r);
    sys.uty = sys.u.transpose() * y;
    sys.y_norm2 = y.squaredNorm();
    return sys;
}

struct FilterSums {
    double rho2;  // squared residual norm, including the unreachable part of y
    double eta2;  // squared solution norm
    double trace; // effective number of parameters
    double dof;   // m - trace, accumulated without cancellation
};

// Energy of y outside the range of A. The subtraction is pure cancellation
// when y lies in the range, so values at roundoff scale are clamped to zero
// rather than polluting otherwise flat criteria.
double perp_residual2(const SvdSystem& sys) {
    const double r = sys.y_norm2 - sys.uty.squaredNorm();
    if (r <= 64.0 * std::numeric_limits<double>::epsilon() * sys.y_norm2) return 0.0;
    return r;
}

FilterSums filter_sums(const SvdSystem& sys, double lambda) {
    FilterSums f{0.0, 0.0, 0.0, double(sys.m() - sys.rank())};
    for (Index i = 0; i < sys.rank(); ++i) {
        const double s2 = sys.s[i] * sys.s[i];
        const double c2 = sys.uty[i] * sys.uty[i];
        const double den = s2 + lambda;
        f.rho2 += (lambda / den) * (lambda / den) * c2;
        f.eta2 += s2 / (den * den) * c2;
        f.trace += s2 / den;
        f.dof += lambda / den;
    }
    f.rho2 += perp_residual2(sys);
    return f;
}

void check_grid(const Vector& grid) {
    if (grid.size() < 5) throw DomainError("lambda grid needs at least 5 points");
    for (Index i = 0; i < grid.size(); ++i) {
        if (!(grid[i] > 0.0)) throw DomainError("lambda grid entries must be positive");
        if (i > 0 && grid[i] <= grid[i - 1])
            throw DomainError("lambda grid must be strictly increasing");
    }
}

/// Grid argmin (ties toward larger lambda) followed by golden-section
/// refinement of log lambda inside the neighboring bracket.
double refine_minimum(const Vector& grid, const std::function<double(double)>& f,
                      Index* grid_argmin = nullptr) {
    Index best = 0;
    double best_val = f(grid[0]);
    for (Index i = 1; i < grid.size(); ++i) {
        double val = f(grid[i]);
        if (val <= best_val) {
            best_val = val;
            best = i;
        }
    }
    if (grid_argmin) *grid_argmin = best;

    double lo = std::log(grid[std::max<Index>(best - 1, 0)]);
    double hi = std::log(grid[std::min<Index>(best + 1, grid.size() - 1)]);
    const double inv_phi = 0.6180339887498949;
    double x1 = hi - inv_phi * (hi - lo);
    double x2 = lo + inv_phi * (hi - lo);
    double f1 = f(std::exp(x1)), f2 = f(std::exp(x2));
    while (hi - lo > 1e-8) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(std::exp(x1));
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(std::exp(x2));
        }
    }
    double mid = std::exp(0.5 * (lo + hi));
    // Keep the grid point when refinement does not improve on it.
    return (f(mid) <= best_val) ? mid : grid[best];
}

void check_not_flat(const std::vector<std::pair<double, double>>& curve,
                    const std::string& method) {
    double lo = curve.front().second, hi = lo;
    for (const auto& [lambda, value] : curve) {
        lo = std::min(lo, value);
        hi = std::max(hi, value);
    }
    double scale = std::max({std::abs(lo), std::abs(hi), 1e-300});
    if (hi - lo <= 1e-14 * scale)
        throw SelectionError(method + " criterion is flat across the search grid");
}

} // namespace

SvdSystem svd_system_from_dense(const Matrix& a, const Vector& y) {
    linalg::Svd svd = linalg::svd_econ(a);
    return finalize_system(std::move(svd.u), std::move(svd.s), std::move(svd.v), y);
}

SvdSystem svd_system_from_kron(const std::vector<Matrix>& factors, const Vector& y) {
    if (factors.empty()) throw DimensionError("Kronecker SVD needs at least one factor");
    std::vector<linalg::Svd> svds;
    svds.reserve(factors.size());
    std::vector<Matrix> us, vs;
    Index total = 1;
    for (const Matrix& f : factors) {
        svds.push_back(linalg::svd_econ(f));
        us.push_back(svds.back().u);
        vs.push_back(svds.back().v);
        total *= svds.back().s.size();
    }
    // Combined singular values: products over one choice per factor, indexed
    // with the first factor fastest, matching the Kronecker column order.
    Vector s(total);
    for (Index j = 0; j < total; ++j) {
        Index rem = j;
        double prod = 1.0;
        for (const auto& svd : svds) {
            prod *= svd.s[rem % svd.s.size()];
            rem /= svd.s.size();
        }
        s[j] = prod;
    }
    std::vector<Index> order(static_cast<size_t>(total));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&s](Index a, Index b) { return s[a] > s[b]; });

    Matrix u_kron = kronecker_chain_reversed(us);
    Matrix v_kron = kronecker_chain_reversed(vs);
    Matrix u(u_kron.rows(), total), v(v_kron.rows(), total);
    Vector s_sorted(total);
    for (Index j = 0; j < total; ++j) {
        u.col(j) = u_kron.col(order[static_cast<size_t>(j)]);
        v.col(j) = v_kron.col(order[static_cast<size_t>(j)]);
        s_sorted[j] = s[order[static_cast<size_t>(j)]];
    }
    return finalize_system(std::move(u), std::move(s_sorted), std::move(v), y);
}

Vector tikhonov_solve(const SvdSystem& sys, double lambda) {
    if (lambda < 0.0) throw DomainError("lambda must be non-negative");
    Vector filt(sys.rank());
    for (Index i = 0; i < sys.rank(); ++i)
        filt[i] = sys.s[i] / (sys.s[i] * sys.s[i] + lambda) * sys.uty[i];
    return sys.v * filt;
}

Vector default_lambda_grid(const SvdSystem& sys, Index points) {
    if (points < 5) throw DomainError("lambda grid needs at least 5 points");
    const double lo = std::log(sys.s.minCoeff() * sys.s.minCoeff() * 1e-4);
    const double hi = std::log(sys.s.maxCoeff() * sys.s.maxCoeff() * 1e4);
    Vector grid(points);
    for (Index i = 0; i < points; ++i)
        grid[i] = std::exp(lo + (hi - lo) * double(i) / double(points - 1));
    return grid;
}

namespace {

/// Signed curvature of lambda -> (log rho2, log eta2). The corner of the
/// characteristic L shape is the curvature maximum with this orientation.
double lcurve_curvature(const SvdSystem& sys, double lambda, double rho_perp2) {
    double eta2 = 0.0, deta2 = 0.0, d2eta2 = 0.0, rho2 = rho_perp2;
    for (Index i = 0; i < sys.rank(); ++i) {
        const double s2 = sys.s[i] * sys.s[i];
        const double c2 = sys.uty[i] * sys.uty[i];
        const double den = s2 + lambda;
        eta2 += s2 * c2 / (den * den);
        deta2 += -2.0 * s2 * c2 / (den * den * den);
        d2eta2 += 6.0 * s2 * c2 / (den * den * den * den);
        rho2 += (lambda / den) * (lambda / den) * c2;
    }
    const double drho2 = -lambda * deta2;
    const double d2rho2 = -deta2 - lambda * d2eta2;
    if (rho2 <= 0.0 || eta2 <= 0.0) throw SelectionError("degenerate L-curve");
    const double up = drho2 / rho2;
    const double vp = deta2 / eta2;
    const double upp = (d2rho2 * rho2 - drho2 * drho2) / (rho2 * rho2);
    const double vpp = (d2eta2 * eta2 - deta2 * deta2) / (eta2 * eta2);
    const double speed2 = up * up + vp * vp;
    if (speed2 <= 0.0) throw SelectionError("degenerate L-curve");
    return (up * vpp - vp * upp) / std::pow(speed2, 1.5);
}

} // namespace

SelectionResult lcurve_select(const SvdSystem& sys, const Vector& grid) {
    check_grid(grid);
    if (sys.y_norm2 <= 0.0 || sys.uty.cwiseAbs().maxCoeff() <= 0.0)
        throw SelectionError("L-curve is undefined for a zero observation");
    const double rho_perp2 = perp_residual2(sys);
    auto negative_curvature = [&](double lambda) {
        return -lcurve_curvature(sys, lambda, rho_perp2);
    };
    SelectionResult out;
    out.method = "lcurve";
    out.criterion_curve.reserve(static_cast<size_t>(grid.size()));
    for (Index i = 0; i < grid.size(); ++i)
        out.criterion_curve.emplace_back(grid[i], lcurve_curvature(sys, grid[i], rho_perp2));
    check_not_flat(out.criterion_curve, "L-curve");
    out.lambda = refine_minimum(grid, negative_curvature);
    return out;
}

SelectionResult gcv_select(const SvdSystem& sys, const Vector& grid) {
    check_grid(grid);
    const double m = double(sys.m());
    auto criterion = [&](double lambda) {
        FilterSums f = filter_sums(sys, lambda);
        return m * f.rho2 / (f.dof * f.dof);
    };
    SelectionResult out;
    out.method = "gcv";
    for (Index i = 0; i < grid.size(); ++i)
        out.criterion_curve.emplace_back(grid[i], criterion(grid[i]));
    check_not_flat(out.criterion_curve, "GCV");
    out.lambda = refine_minimum(grid, criterion);
    return out;
}

SelectionResult upre_select(const SvdSystem& sys, double sigma2, const Vector& grid) {
    check_grid(grid);
    if (!(sigma2 > 0.0)) throw DomainError("noise variance must be positive");
    const double m = double(sys.m());
    auto criterion = [&](double lambda) {
        FilterSums f = filter_sums(sys, lambda);
        return f.rho2 / m + 2.0 * sigma2 / m * f.trace - sigma2;
    };
    SelectionResult out;
    out.method = "upre";
    for (Index i = 0; i < grid.size(); ++i)
        out.criterion_curve.emplace_back(grid[i], criterion(grid[i]));
    check_not_flat(out.criterion_curve, "UPRE");
    out.lambda = refine_minimum(grid, criterion);
    return out;
}

SelectionResult dp_select(const SvdSystem& sys, double sigma2, const Vector& grid, double tau) {
    check_grid(grid);
    if (!(sigma2 > 0.0)) throw DomainError("noise variance must be positive");
    if (!(tau > 0.0)) throw DomainError("tau must be positive");
    const double target = tau * double(sys.m()) * sigma2;
    auto discrepancy = [&](double lambda) { return filter_sums(sys, lambda).rho2 - target; };

    SelectionResult out;
    out.method = "dp";
    for (Index i = 0; i < grid.size(); ++i)
        out.criterion_curve.emplace_back(grid[i], discrepancy(grid[i]));

    double f_lo = out.criterion_curve.front().second;
    double f_hi = out.criterion_curve.back().second;
    if (f_lo > 0.0) {
        // Residual exceeds the target even with the least smoothing.
        out.lambda = grid[0];
        out.at_boundary = true;
        return out;
    }
    if (f_hi < 0.0) {
        out.lambda = grid[grid.size() - 1];
        out.at_boundary = true;
        return out;
    }
    double lo = std::log(grid[0]), hi = std::log(grid[grid.size() - 1]);
    // The residual is non-decreasing in lambda, so bisection converges.
    for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
        double mid = 0.5 * (lo + hi);
        (discrepancy(std::exp(mid)) < 0.0 ? lo : hi) = mid;
    }
    out.lambda = std::exp(0.5 * (lo + hi));
    return out;
}

} // namespace tvb
