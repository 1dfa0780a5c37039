#pragma once

#include <optional>
#include <vector>

#include "tvb/operators.hpp"
#include "tvb/tensor.hpp"

namespace tvb {

enum class VBVariant {
    Single,   // one precision for all reduced coefficients
    PerMode,  // one precision per tensor mode
    PerSlice, // one precision per core slice (mode, slice index)
};

struct GaussianPosterior {
    Vector mean;
    Matrix covariance;
};

struct GammaParams {
    double shape = 0.0;
    double rate = 0.0;
    double mean() const { return shape / rate; }
};

struct HyperPrior {
    double a0 = 1e-6;
    double b0 = 1e-6;
};

struct VBConfig {
    HyperPrior prior{};
    int max_iters = 200;
    double tol = 1e-8;
    VBVariant variant = VBVariant::Single;
    /// Freeze E[alpha] (all components) / E[beta] at the given values; the
    /// corresponding updates are skipped. Mainly for oracle comparisons.
    std::optional<double> fixed_alpha{};
    std::optional<double> fixed_beta{};
    /// solve_direct refuses problems with more unknowns than this.
    Index direct_max_n = 6400;
};

struct VBResult {
    GaussianPosterior posterior; // over reduced coefficients
    std::vector<GammaParams> alpha; // 1 (Single), d (PerMode) or sum R_k (PerSlice) entries
    GammaParams beta;
    std::vector<double> lambda; // implied regularization weight(s), same layout as alpha
    double sigma2_hat = 0.0;    // E[rate]/E[shape] of the noise precision
    Vector x_hat;               // expanded posterior mean in the full space
    int iterations = 0;
    std::vector<double> elbo_trace; // one entry per completed sweep
    VBVariant variant = VBVariant::Single;
    std::vector<Index> ranks; // core shape the alpha layout refers to
};

/// Gaussian coordinate update: Sigma = (e_beta G + diag(prior_precision))^-1,
/// mu = e_beta Sigma aty. Solved via Cholesky, never by explicit inversion
/// followed by a multiply.
GaussianPosterior posterior_update(const ReducedSystem& sys, double e_beta,
                                   const Vector& prior_precision_diag);

GammaParams update_alpha_single(const GaussianPosterior& post, const HyperPrior& prior);
std::vector<GammaParams> update_alpha_per_mode(const GaussianPosterior& post,
                                               const HyperPrior& prior,
                                               const std::vector<Index>& ranks);
/// Slice order: mode 1 slices 0..R_1-1, then mode 2, and so on. Each
/// coefficient's prior precision sums over its slices, so the update
/// apportions coefficients among modes by the softmax of E[ln alpha];
/// `current` supplies that state (pass the previous sweep's values, or a
/// symmetric list for an even 1/d split).
std::vector<GammaParams> update_alpha_per_slice(const GaussianPosterior& post,
                                                const HyperPrior& prior,
                                                const std::vector<Index>& ranks,
                                                const std::vector<GammaParams>& current);
GammaParams update_beta(const ReducedSystem& sys, const GaussianPosterior& post,
                        const HyperPrior& prior);

/// Evidence lower bound of the factorized posterior for the given precision
/// layout. Throws NumericalError if the value is not finite.
double elbo(const ReducedSystem& sys, const GaussianPosterior& post,
            const std::vector<GammaParams>& alphas, const GammaParams& beta,
            const HyperPrior& prior, VBVariant variant, const std::vector<Index>& ranks);

/// Coordinate-ascent solver on a reduced system. `sub` supplies the core
/// shape for the precision layout and the map back to the full space.
VBResult solve(const ReducedSystem& sys, const VBConfig& cfg, const TuckerSubspace& sub);

/// Same inference on the full-space normal equations, no subspace. Throws
/// CapacityError when the unknown count exceeds cfg.direct_max_n.
VBResult solve_direct(const ForwardOperator& op, const Vector& y, const VBConfig& cfg);

/// Per-coefficient slice membership: entry j of mode k is the slice index of
/// coefficient j along mode k of the core (first mode fastest).
std::vector<std::vector<Index>> slice_index_map(const std::vector<Index>& ranks);

} // namespace tvb
