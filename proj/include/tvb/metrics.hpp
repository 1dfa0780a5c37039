#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tvb/tensor.hpp"

namespace tvb {

/// One detail-CSV record of an experiment run. Metric fields are empty when
/// the method failed (see status) or does not produce them.
struct MetricRow {
    std::string method;
    double noise_level = 0.0;
    int trial = 0;
    uint64_t seed = 0;
    std::optional<double> rel_error;
    std::optional<double> psnr_db;
    std::optional<double> ssim;
    std::optional<double> sigma_hat;            // noise sd estimate, VB only
    std::vector<double> lambda_report;          // semicolon-joined in the CSV
    double runtime_ms = 0.0;
    int iterations = 0; // 0 for non-iterative methods
    std::string status = "ok";
};

/// ||estimate - truth||_F / ||truth||_F. Throws DomainError when the truth
/// has zero norm.
double rel_error(const Vector& estimate, const Vector& truth);

/// 10 log10(max_val^2 / MSE) with MSE averaged over all elements; +infinity
/// when the inputs are identical.
double psnr(const Vector& estimate, const Vector& truth, double max_val = 1.0);

/// Structural similarity evaluated once over the whole signal (a single
/// global window) with population variances and the standard constants
/// C1 = (0.01 max)^2, C2 = (0.03 max)^2.
double ssim_global(const Vector& estimate, const Vector& truth, double max_val = 1.0);

} // namespace tvb
