#include "tvb/metrics.hpp"

#include <cmath>
#include <limits>

#include "tvb/errors.hpp"

namespace tvb {

namespace {

void check_same_size(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) throw DimensionError("metric inputs differ in length");
    if (a.size() == 0) throw DimensionError("metric inputs are empty");
}

} // namespace

double rel_error(const Vector& estimate, const Vector& truth) {
    check_same_size(estimate, truth);
    const double denom = truth.norm();
    if (denom == 0.0) throw DomainError("relative error is undefined for a zero truth");
    return (estimate - truth).norm() / denom;
}

double psnr(const Vector& estimate, const Vector& truth, double max_val) {
    check_same_size(estimate, truth);
    if (!(max_val > 0.0)) throw DomainError("max_val must be positive");
    const double mse = (estimate - truth).squaredNorm() / double(truth.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(max_val * max_val / mse);
}

double ssim_global(const Vector& estimate, const Vector& truth, double max_val) {
    check_same_size(estimate, truth);
    if (truth.size() < 2) throw DomainError("SSIM needs at least 2 elements");
    if (!(max_val > 0.0)) throw DomainError("max_val must be positive");
    const double n = double(truth.size());
    const double mu_a = estimate.mean();
    const double mu_b = truth.mean();
    const Vector da = estimate.array() - mu_a;
    const Vector db = truth.array() - mu_b;
    const double var_a = da.squaredNorm() / n;
    const double var_b = db.squaredNorm() / n;
    const double cov = da.dot(db) / n;
    const double c1 = (0.01 * max_val) * (0.01 * max_val);
    const double c2 = (0.03 * max_val) * (0.03 * max_val);
    return ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
           ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
}

} // namespace tvb
