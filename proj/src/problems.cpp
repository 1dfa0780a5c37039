#include "tvb/problems.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "tvb/errors.hpp"

namespace tvb {

namespace {

constexpr double kPi = std::numbers::pi;

double peak_value(const GaussianPeak& p, const std::vector<double>& x) {
    if (p.center.size() != x.size())
        throw DimensionError("peak center dimension does not match the field");
    double q = 0.0;
    for (size_t k = 0; k < x.size(); ++k) {
        double d = x[k] - p.center[k];
        q += d * d;
    }
    return p.amplitude * std::exp(-q / (2.0 * p.width * p.width));
}

ProblemInstance finish_instance(ForwardOperator op, Vector x_true, double noise_sigma,
                                uint64_t seed, Shape shape) {
    if (noise_sigma < 0.0) throw DomainError("noise level must be non-negative");
    ProblemInstance inst;
    inst.y_clean = op_apply(op, x_true);
    inst.y = add_noise(inst.y_clean, noise_sigma, seed);
    inst.op = std::move(op);
    inst.x_true = std::move(x_true);
    inst.sigma_true = noise_sigma;
    inst.seed = seed;
    inst.shape = std::move(shape);
    return inst;
}

} // namespace

std::vector<GaussianPeak> default_fredholm_peaks() {
    return {
        {1.0, {0.3, 0.3}, 0.12}, {0.8, {0.7, 0.3}, 0.09}, {0.6, {0.5, 0.55}, 0.14},
        {0.9, {0.3, 0.75}, 0.07}, {0.7, {0.75, 0.7}, 0.10},
    };
}

std::vector<GaussianPeak> default_heat_sources() {
    return {
        {1.0, {0.35, 0.4, 0.3}, 0.08},
        {0.7, {0.7, 0.65, 0.6}, 0.12},
        {0.85, {0.45, 0.3, 0.75}, 0.10},
    };
}

Matrix fredholm_kernel_matrix(Index n, double alpha) {
    if (n < 2) throw DomainError("kernel grid needs at least 2 points");
    if (!(alpha > 0.0)) throw DomainError("kernel decay rate must be positive");
    const double h = 1.0 / double(n + 1);
    Matrix phi(n, n);
    for (Index i = 0; i < n; ++i) {
        const double x = double(i + 1) * h;
        for (Index k = 0; k < n; ++k)
            phi(i, k) = std::sqrt(2.0 * h) * std::sin(double(k + 1) * kPi * x);
    }
    Vector d(n);
    for (Index k = 0; k < n; ++k) d[k] = std::exp(-alpha * double(k + 1));
    return phi * d.asDiagonal() * phi.transpose();
}

Matrix gaussian_blur_matrix(Index n, double sigma) {
    if (n < 1) throw DomainError("blur matrix needs at least 1 point");
    if (!(sigma > 0.0)) throw DomainError("blur width must be positive");
    const Index radius = static_cast<Index>(std::ceil(4.0 * sigma));
    Matrix a = Matrix::Zero(n, n);
    for (Index i = 0; i < n; ++i) {
        double row_sum = 0.0;
        for (Index j = std::max<Index>(0, i - radius); j <= std::min<Index>(n - 1, i + radius);
             ++j) {
            double d = double(i - j);
            double w = std::exp(-d * d / (2.0 * sigma * sigma));
            a(i, j) = w;
            row_sum += w;
        }
        a.row(i) /= row_sum;
    }
    return a;
}

std::pair<Matrix, std::vector<Index>> periodic_trig_basis(Index n) {
    if (n < 2) throw DomainError("trigonometric basis needs at least 2 points");
    Matrix b(n, n);
    std::vector<Index> freq(static_cast<size_t>(n));
    const double inv_sqrt_n = 1.0 / std::sqrt(double(n));
    for (Index j = 0; j < n; ++j) b(j, 0) = inv_sqrt_n;
    freq[0] = 0;
    const double scale = std::sqrt(2.0 / double(n));
    Index col = 1;
    for (Index l = 1; 2 * l < n; ++l) {
        for (Index j = 0; j < n; ++j) {
            const double t = 2.0 * kPi * double(l) * double(j) / double(n);
            b(j, col) = scale * std::cos(t);
            b(j, col + 1) = scale * std::sin(t);
        }
        freq[static_cast<size_t>(col)] = l;
        freq[static_cast<size_t>(col + 1)] = l;
        col += 2;
    }
    if (n % 2 == 0) {
        for (Index j = 0; j < n; ++j) b(j, col) = (j % 2 == 0 ? 1.0 : -1.0) * inv_sqrt_n;
        freq[static_cast<size_t>(col)] = n / 2;
        ++col;
    }
    if (col != n) throw NumericalError("trigonometric basis construction is inconsistent");
    return {b, freq};
}

DenseTensor synthetic_test_image(Index n) {
    if (n < 16) throw DomainError("synthetic image needs at least 16 pixels per side");
    DenseTensor img(Shape{n, n});
    const double nf = double(n);
    for (Index r = 0; r < n; ++r) {
        for (Index c = 0; c < n; ++c) {
            double v = 0.25 + 0.5 * double(r) / (nf - 1.0); // vertical gradient
            const double rr = double(r) / nf, cc = double(c) / nf;
            // Dark silhouette: ellipse body plus round head.
            double body = std::pow((rr - 0.42) / 0.22, 2) + std::pow((cc - 0.47) / 0.16, 2);
            double head = std::pow((rr - 0.20) / 0.10, 2) + std::pow((cc - 0.47) / 0.10, 2);
            if (body <= 1.0 || head <= 1.0) v = 0.08;
            // Bright rectangle in the upper right.
            if (rr >= 0.06 && rr <= 0.16 && cc >= 0.68 && cc <= 0.92) v = 0.9;
            // Thin tripod legs under the silhouette.
            if (rr > 0.62 && rr < 0.92) {
                double spread = (rr - 0.62) * 0.45;
                for (double leg : {0.47 - spread, 0.47, 0.47 + spread}) {
                    if (std::abs(cc - leg) < 0.5 / nf) v = 0.12;
                }
            }
            // Textured strip near the bottom.
            if (rr >= 0.93)
                v = std::min(1.0, std::max(0.0, v + 0.10 * std::sin(2.0 * kPi * cc * nf / 4.0)));
            img.at({r, c}) = std::min(1.0, std::max(0.0, v));
        }
    }
    return img;
}

Vector add_noise(const Vector& y_clean, double sigma, uint64_t seed) {
    if (sigma < 0.0) throw DomainError("noise level must be non-negative");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vector y = y_clean;
    for (Index i = 0; i < y.size(); ++i) y[i] += sigma * gauss(rng);
    return y;
}

GeneratedProblem gen_fredholm(const FredholmSpec& spec, const std::vector<Index>& ranks,
                              double noise_sigma, uint64_t seed) {
    Matrix k = fredholm_kernel_matrix(spec.n, spec.alpha);
    SeparableOp sep{{k, k}};
    const double h = 1.0 / double(spec.n + 1);
    Vector x(spec.n * spec.n);
    for (Index j = 0; j < spec.n; ++j) {
        for (Index i = 0; i < spec.n; ++i) {
            std::vector<double> pos{double(i + 1) * h, double(j + 1) * h};
            double v = 0.0;
            for (const GaussianPeak& p : spec.peaks) v += peak_value(p, pos);
            x[j * spec.n + i] = v;
        }
    }
    GeneratedProblem gp;
    gp.subspace = build_subspace_from_separable(sep, ranks);
    gp.instance = finish_instance(std::move(sep), std::move(x), noise_sigma, seed,
                                  Shape{spec.n, spec.n});
    return gp;
}

GeneratedProblem gen_deblur(const DeblurSpec& spec, double noise_sigma, uint64_t seed) {
    if (spec.image.order() != 2) throw DimensionError("deblur input must be a 2-D image");
    const Index rows = spec.image.shape()[0], cols = spec.image.shape()[1];
    SeparableOp sep{{gaussian_blur_matrix(rows, spec.sigma_row),
                     gaussian_blur_matrix(cols, spec.sigma_col)}};
    GeneratedProblem gp;
    gp.subspace = build_subspace_from_separable(sep, spec.ranks);
    gp.instance = finish_instance(std::move(sep), vectorize(spec.image), noise_sigma, seed,
                                  Shape{rows, cols});
    return gp;
}

GeneratedProblem gen_heat(const HeatSpec& spec, const std::vector<Index>& ranks,
                          double noise_sigma, uint64_t seed) {
    if (spec.grid.size() != 3) throw DimensionError("diffusion grid must be 3-D");
    if (!(spec.t_final > 0.0)) throw DomainError("final time must be positive");
    SpectralDiagonalOp op;
    for (size_t k = 0; k < 3; ++k) {
        if (!(spec.kappa[k] > 0.0)) throw DomainError("diffusivities must be positive");
        auto [basis, freq] = periodic_trig_basis(spec.grid[k]);
        Vector keys(spec.grid[k]);
        for (Index c = 0; c < spec.grid[k]; ++c) {
            const double w = 2.0 * kPi * double(freq[static_cast<size_t>(c)]);
            keys[c] = spec.kappa[k] * w * w;
        }
        op.bases.push_back(std::move(basis));
        op.mode_keys.push_back(std::move(keys));
    }
    const Index total = shape_product(spec.grid);
    op.multipliers.resize(total);
    for (Index j = 0; j < total; ++j) {
        Index rem = j;
        double rate = 0.0;
        for (size_t k = 0; k < 3; ++k) {
            rate += op.mode_keys[k][rem % spec.grid[k]];
            rem /= spec.grid[k];
        }
        op.multipliers[j] = std::exp(-spec.t_final * rate);
    }

    Vector x(total);
    for (Index j = 0; j < total; ++j) {
        Index rem = j;
        std::vector<double> pos(3);
        for (size_t k = 0; k < 3; ++k) {
            pos[k] = double(rem % spec.grid[k]) / double(spec.grid[k]);
            rem /= spec.grid[k];
        }
        double v = 0.0;
        for (const GaussianPeak& p : spec.sources) v += peak_value(p, pos);
        x[j] = v;
    }

    GeneratedProblem gp;
    gp.subspace = build_subspace_from_spectral(op, ranks);
    gp.instance = finish_instance(std::move(op), std::move(x), noise_sigma, seed, spec.grid);
    return gp;
}

} // namespace tvb
