#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "tvb/operators.hpp"
#include "tvb/tensor.hpp"

namespace tvb {

struct GaussianPeak {
    double amplitude;
    std::vector<double> center; // one coordinate per mode, in [0,1]
    double width;
};

/// Five-peak test field used by the integral-equation generator.
std::vector<GaussianPeak> default_fredholm_peaks();
/// Three-source initial condition used by the diffusion generator.
std::vector<GaussianPeak> default_heat_sources();

struct FredholmSpec {
    Index n = 32;         // grid points per axis
    double alpha = 0.15;  // spectral decay rate of the kernel
    std::vector<GaussianPeak> peaks = default_fredholm_peaks();
};

struct DeblurSpec {
    DenseTensor image;       // 2-D, values in [0,1], shape {rows, cols}
    double sigma_row = 1.3;  // blur width along the row index (mode 1)
    double sigma_col = 0.7;  // blur width along the column index (mode 2)
    std::vector<Index> ranks = {48, 48};
};

struct HeatSpec {
    Shape grid = {16, 16, 16};
    std::array<double, 3> kappa = {0.01, 0.005, 0.02}; // per-axis diffusivity
    double t_final = 0.1;
    std::vector<GaussianPeak> sources = default_heat_sources();
};

struct ProblemInstance {
    ForwardOperator op;
    Vector x_true;
    Vector y_clean; // op_apply(op, x_true)
    Vector y;       // y_clean + noise
    double sigma_true = 0.0;
    uint64_t seed = 0;
    Shape shape; // of the unknown field
};

struct GeneratedProblem {
    ProblemInstance instance;
    TuckerSubspace subspace;
};

/// Symmetric kernel matrix with eigenvalues exp(-alpha k), k = 1..n, in the
/// orthonormal discrete sine basis on the interior grid x_i = i/(n+1).
Matrix fredholm_kernel_matrix(Index n, double alpha);

/// Row-normalized Gaussian convolution matrix, taps truncated at 4 sigma.
Matrix gaussian_blur_matrix(Index n, double sigma);

/// Orthonormal real trigonometric basis on n periodic grid points
/// (constant, cosine/sine pairs, Nyquist column for even n) plus the
/// frequency index of each column.
std::pair<Matrix, std::vector<Index>> periodic_trig_basis(Index n);

/// Deterministic 2-D test image: gradient background, flat dark silhouette,
/// bright rectangle, thin legs and a textured strip. Values in [0, 1].
DenseTensor synthetic_test_image(Index n = 64);

Vector add_noise(const Vector& y_clean, double sigma, uint64_t seed);

GeneratedProblem gen_fredholm(const FredholmSpec& spec, const std::vector<Index>& ranks,
                              double noise_sigma, uint64_t seed);
GeneratedProblem gen_deblur(const DeblurSpec& spec, double noise_sigma, uint64_t seed);
GeneratedProblem gen_heat(const HeatSpec& spec, const std::vector<Index>& ranks,
                          double noise_sigma, uint64_t seed);

} // namespace tvb
