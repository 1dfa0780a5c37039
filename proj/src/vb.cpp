#include "tvb/vb.hpp"

#include <boost/math/special_functions/digamma.hpp>

#include <Eigen/Cholesky>
#include <cmath>
#include <string>

#include "tvb/errors.hpp"
#include "tvb/linalg.hpp"

namespace tvb {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kRateFloor = 1e-300;

double digamma(double x) { return boost::math::digamma(x); }

double rel_change(double now, double before) {
    return std::abs(now - before) / std::max(std::abs(now), kRateFloor);
}

double rel_change(const Vector& now, const Vector& before) {
    return (now - before).norm() / std::max(now.norm(), kRateFloor);
}

/// Componentwise worst-case relative change, for parameter blocks whose
/// entries settle on very different scales (a norm ratio would let small
/// entries drift forever under the shadow of large ones).
double rel_change_each(const Vector& now, const Vector& before) {
    double worst = 0.0;
    for (Index i = 0; i < now.size(); ++i)
        worst = std::max(worst, std::abs(now[i] - before[i]) /
                                    std::max(std::abs(now[i]), kRateFloor));
    return worst;
}

void validate_config(const VBConfig& cfg) {
    if (cfg.max_iters < 1) throw DomainError("max_iters must be at least 1");
    if (!(cfg.tol > 0.0)) throw DomainError("tol must be positive");
    if (!(cfg.prior.a0 > 0.0) || !(cfg.prior.b0 > 0.0))
        throw DomainError("hyperprior parameters must be positive");
    if (cfg.fixed_alpha && !(*cfg.fixed_alpha > 0.0))
        throw DomainError("fixed_alpha must be positive");
    if (cfg.fixed_beta && !(*cfg.fixed_beta > 0.0))
        throw DomainError("fixed_beta must be positive");
}

double gamma_entropy(const GammaParams& g) {
    return g.shape - std::log(g.rate) + std::lgamma(g.shape) +
           (1.0 - g.shape) * digamma(g.shape);
}

double gamma_prior_cross(const HyperPrior& p, double e, double elog) {
    return p.a0 * std::log(p.b0) - std::lgamma(p.a0) + (p.a0 - 1.0) * elog - p.b0 * e;
}

struct GammaMoments {
    double e;
    double elog;
};

/// Frozen components are treated as point masses: E known, E[log] = log E,
/// and their prior/entropy terms drop from the objective.
GammaMoments moments(const GammaParams& g, bool frozen) {
    if (frozen) {
        double e = g.mean();
        return {e, std::log(e)};
    }
    return {g.mean(), digamma(g.shape) - std::log(g.rate)};
}

/// ELBO from scalar sweep summaries, shared by both solver engines and the
/// public matrix-based entry point so the two can never drift apart.
double elbo_core(Index m, Index n_g, double residual2, double tr_g_sigma, double logdet_sigma,
                 double e_g2_total, const std::vector<Vector>& slice_moments,
                 const std::vector<GammaParams>& alphas, const GammaParams& beta,
                 const HyperPrior& prior, VBVariant variant, const std::vector<Index>& ranks,
                 bool alpha_frozen, bool beta_frozen) {
    GammaMoments mb = moments(beta, beta_frozen);
    double s_total = residual2 + tr_g_sigma;
    double value = 0.5 * double(m) * (mb.elog - kLog2Pi) - 0.5 * mb.e * s_total;

    if (variant == VBVariant::PerSlice) {
        // Each coefficient's prior precision is a sum over its d slices, so
        // the prior carries E[ln sum_k alpha_k] per coefficient, which has no
        // closed form under a factorized q. Lower-bound it by Jensen with
        // per-coefficient mixture weights; the optimal weights are the
        // softmax of E[ln alpha], turning the bound into a log-sum-exp.
        std::vector<Vector> ea(ranks.size()), elna(ranks.size());
        size_t c = 0;
        for (size_t k = 0; k < ranks.size(); ++k) {
            ea[k].resize(ranks[k]);
            elna[k].resize(ranks[k]);
            for (Index i = 0; i < ranks[k]; ++i, ++c) {
                GammaMoments ma = moments(alphas[c], alpha_frozen);
                ea[k][i] = ma.e;
                elna[k][i] = ma.elog;
            }
        }
        const auto smap = slice_index_map(ranks);
        double lse_total = 0.0;
        for (Index j = 0; j < n_g; ++j) {
            double mx = elna[0][smap[0][static_cast<size_t>(j)]];
            for (size_t k = 1; k < ranks.size(); ++k)
                mx = std::max(mx, elna[k][smap[k][static_cast<size_t>(j)]]);
            double se = 0.0;
            for (size_t k = 0; k < ranks.size(); ++k)
                se += std::exp(elna[k][smap[k][static_cast<size_t>(j)]] - mx);
            lse_total += mx + std::log(se);
        }
        double e_d_m2 = 0.0;
        for (size_t k = 0; k < ranks.size(); ++k) e_d_m2 += ea[k].dot(slice_moments[k]);
        value += 0.5 * lse_total - 0.5 * e_d_m2 - 0.5 * double(n_g) * kLog2Pi;
    } else {
        for (const GammaParams& a : alphas) {
            GammaMoments ma = moments(a, alpha_frozen);
            value += 0.5 * double(n_g) * (ma.elog - kLog2Pi) - 0.5 * ma.e * e_g2_total;
        }
    }

    if (!alpha_frozen) {
        for (const GammaParams& a : alphas) {
            GammaMoments ma = moments(a, false);
            value += gamma_prior_cross(prior, ma.e, ma.elog) + gamma_entropy(a);
        }
    }
    if (!beta_frozen) value += gamma_prior_cross(prior, mb.e, mb.elog) + gamma_entropy(beta);

    value += 0.5 * logdet_sigma + 0.5 * double(n_g) * (1.0 + kLog2Pi);
    if (!std::isfinite(value)) throw NumericalError("evidence bound is not finite");
    return value;
}

std::vector<Vector> slice_moments_from(const Vector& mu, const Vector& diag_sigma,
                                       const std::vector<Index>& ranks,
                                       const std::vector<std::vector<Index>>& smap) {
    std::vector<Vector> sm(ranks.size());
    for (size_t k = 0; k < ranks.size(); ++k) sm[k] = Vector::Zero(ranks[k]);
    for (Index j = 0; j < mu.size(); ++j) {
        double c = mu[j] * mu[j] + diag_sigma[j];
        for (size_t k = 0; k < ranks.size(); ++k) sm[k][smap[k][static_cast<size_t>(j)]] += c;
    }
    return sm;
}

size_t expected_alpha_count(VBVariant variant, const std::vector<Index>& ranks) {
    switch (variant) {
    case VBVariant::Single: return 1;
    case VBVariant::PerMode: return ranks.size();
    case VBVariant::PerSlice: {
        size_t c = 0;
        for (Index r : ranks) c += static_cast<size_t>(r);
        return c;
    }
    }
    return 0;
}

GammaParams make_gamma(double shape, double rate) {
    return GammaParams{shape, std::max(rate, kRateFloor)};
}

/// Shared loop for the Single and PerMode variants. The prior precision is
/// isotropic (all per-mode precisions act on every coefficient), so one
/// eigendecomposition of the gram matrix turns every sweep into O(n_g) work.
VBResult isotropic_engine(const ReducedSystem& sys, const VBConfig& cfg,
                          const std::vector<Index>& ranks) {
    const Index n = sys.n_g(), m = sys.m();
    const size_t c = expected_alpha_count(cfg.variant, ranks);
    linalg::Eigh eig = linalg::eigh(sys.gram);
    Vector vals = eig.values.cwiseMax(0.0);
    Vector z = eig.vectors.transpose() * sys.aty;
    const double y2 = sys.y.squaredNorm();

    Vector e_alpha = Vector::Constant(static_cast<Index>(c),
                                      cfg.fixed_alpha ? *cfg.fixed_alpha : 1.0);
    double e_beta = cfg.fixed_beta ? *cfg.fixed_beta : 1.0;
    std::vector<GammaParams> alphas(c, GammaParams{cfg.fixed_alpha ? *cfg.fixed_alpha : 1.0, 1.0});
    GammaParams beta{cfg.fixed_beta ? *cfg.fixed_beta : 1.0, 1.0};

    VBResult out;
    Vector w = Vector::Zero(n), denom = Vector::Ones(n);
    Vector prev_w = w, prev_alpha = e_alpha;
    double prev_beta = e_beta;

    for (int t = 1; t <= cfg.max_iters; ++t) {
        const double abar = e_alpha.sum();
        denom = (e_beta * vals).array() + abar;
        w = e_beta * z.cwiseQuotient(denom);
        const double tr_sigma = denom.cwiseInverse().sum();
        const double tr_g_sigma = vals.cwiseQuotient(denom).sum();
        const double e_g2 = w.squaredNorm() + tr_sigma;

        if (!cfg.fixed_alpha) {
            for (size_t i = 0; i < c; ++i) {
                alphas[i] = make_gamma(cfg.prior.a0 + 0.5 * double(n), cfg.prior.b0 + 0.5 * e_g2);
                e_alpha[static_cast<Index>(i)] = alphas[i].mean();
            }
        }

        double residual2 = y2 - 2.0 * w.dot(z) + vals.dot(w.cwiseAbs2());
        residual2 = std::max(residual2, 0.0);
        if (!cfg.fixed_beta) {
            beta = make_gamma(cfg.prior.a0 + 0.5 * double(m),
                              cfg.prior.b0 + 0.5 * (residual2 + tr_g_sigma));
            e_beta = beta.mean();
        }

        const double logdet_sigma = -denom.array().log().sum();
        out.elbo_trace.push_back(elbo_core(m, n, residual2, tr_g_sigma, logdet_sigma, e_g2, {},
                                           alphas, beta, cfg.prior, cfg.variant, ranks,
                                           cfg.fixed_alpha.has_value(),
                                           cfg.fixed_beta.has_value()));
        out.iterations = t;
        if (t >= 2) {
            double delta = std::max({rel_change(w, prev_w), rel_change(e_beta, prev_beta),
                                     rel_change_each(e_alpha, prev_alpha)});
            if (delta < cfg.tol) break;
        }
        prev_w = w;
        prev_alpha = e_alpha;
        prev_beta = e_beta;
    }

    out.posterior.mean = eig.vectors * w;
    out.posterior.covariance =
        eig.vectors * denom.cwiseInverse().asDiagonal() * eig.vectors.transpose();
    out.alpha = alphas;
    out.beta = beta;
    return out;
}

/// PerSlice variant: the prior precision is a genuine diagonal, so each sweep
/// refactorizes. Only the covariance diagonal is needed inside the loop; the
/// full covariance is assembled once after convergence.
VBResult per_slice_engine(const ReducedSystem& sys, const VBConfig& cfg,
                          const std::vector<Index>& ranks) {
    const Index n = sys.n_g(), m = sys.m();
    const auto smap = slice_index_map(ranks);
    const double y2 = sys.y.squaredNorm();

    std::vector<Vector> e_alpha(ranks.size()), e_ln_alpha(ranks.size());
    for (size_t k = 0; k < ranks.size(); ++k) {
        double a = cfg.fixed_alpha ? *cfg.fixed_alpha : 1.0;
        e_alpha[k] = Vector::Constant(ranks[k], a);
        // Init matches moments() of the Gamma(a, 1) start below.
        e_ln_alpha[k] = Vector::Constant(ranks[k], cfg.fixed_alpha ? std::log(a) : digamma(a));
    }
    double e_beta = cfg.fixed_beta ? *cfg.fixed_beta : 1.0;
    std::vector<GammaParams> alphas(expected_alpha_count(VBVariant::PerSlice, ranks),
                                    GammaParams{cfg.fixed_alpha ? *cfg.fixed_alpha : 1.0, 1.0});
    GammaParams beta{cfg.fixed_beta ? *cfg.fixed_beta : 1.0, 1.0};

    VBResult out;
    Vector mu = Vector::Zero(n), prev_mu = mu, prev_alpha_flat, e_alpha_flat;
    double prev_beta = e_beta;
    // One n x n buffer per sweep: assembled precision, then its factor, then
    // the inverted factor. Only the lower triangle is ever referenced.
    Matrix mat(n, n);
    Vector d(n);
    double logdet_sigma = 0.0;

    for (int t = 1; t <= cfg.max_iters; ++t) {
        for (Index j = 0; j < n; ++j) {
            double acc = 0.0;
            for (size_t k = 0; k < ranks.size(); ++k)
                acc += e_alpha[k][smap[k][static_cast<size_t>(j)]];
            d[j] = acc;
        }
        mat.triangularView<Eigen::Lower>() = e_beta * sys.gram;
        mat.diagonal() += d;
        if (linalg::cholesky_inplace(mat) != 0)
            throw NumericalError(
                "posterior precision is not positive definite (diagonal spread " +
                std::to_string(d.maxCoeff() / d.minCoeff()) + ")");
        logdet_sigma = -2.0 * mat.diagonal().array().log().sum();
        mu = linalg::cholesky_solve(mat, e_beta * sys.aty);
        linalg::invert_cholesky_factor(mat);
        Vector diag_sigma = linalg::lower_triangular_column_norms2(mat);

        auto sm = slice_moments_from(mu, diag_sigma, ranks, smap);
        const double tr_d_sigma = d.dot(diag_sigma);
        const double tr_g_sigma = std::max((double(n) - tr_d_sigma) / e_beta, 0.0);
        const double e_g2 = mu.squaredNorm() + diag_sigma.sum();

        if (!cfg.fixed_alpha) {
            // Apportion each coefficient among its d slices with the softmax
            // weights of E[ln alpha] (optimal for the log-sum-exp bound in
            // elbo_core); each slice's shape collects its share of the mass.
            // A symmetric state splits evenly; a slice whose precision has
            // run away sheds its coefficients to the other modes.
            std::vector<Vector> phisum(ranks.size());
            for (size_t k = 0; k < ranks.size(); ++k) phisum[k] = Vector::Zero(ranks[k]);
            std::vector<double> w(ranks.size());
            for (Index j = 0; j < n; ++j) {
                double mx = e_ln_alpha[0][smap[0][static_cast<size_t>(j)]];
                for (size_t k = 1; k < ranks.size(); ++k)
                    mx = std::max(mx, e_ln_alpha[k][smap[k][static_cast<size_t>(j)]]);
                double se = 0.0;
                for (size_t k = 0; k < ranks.size(); ++k) {
                    w[k] = std::exp(e_ln_alpha[k][smap[k][static_cast<size_t>(j)]] - mx);
                    se += w[k];
                }
                for (size_t k = 0; k < ranks.size(); ++k)
                    phisum[k][smap[k][static_cast<size_t>(j)]] += w[k] / se;
            }
            size_t c = 0;
            for (size_t k = 0; k < ranks.size(); ++k) {
                for (Index i = 0; i < ranks[k]; ++i, ++c) {
                    alphas[c] = make_gamma(cfg.prior.a0 + 0.5 * phisum[k][i],
                                           cfg.prior.b0 + 0.5 * sm[k][i]);
                    e_alpha[k][i] = alphas[c].mean();
                    e_ln_alpha[k][i] = digamma(alphas[c].shape) - std::log(alphas[c].rate);
                }
            }
        }

        // mu solves (beta G + D) mu = beta aty, so mu'G mu = mu'aty - mu'D mu
        // / beta and the residual needs no n^2 matvec.
        const double mu_aty = mu.dot(sys.aty);
        const double mu_d_mu = (mu.array().square() * d.array()).sum();
        double residual2 = y2 - 2.0 * mu_aty + (mu_aty - mu_d_mu / e_beta);
        residual2 = std::max(residual2, 0.0);
        if (!cfg.fixed_beta) {
            beta = make_gamma(cfg.prior.a0 + 0.5 * double(m),
                              cfg.prior.b0 + 0.5 * (residual2 + tr_g_sigma));
            e_beta = beta.mean();
        }

        out.elbo_trace.push_back(elbo_core(m, n, residual2, tr_g_sigma, logdet_sigma, e_g2, sm,
                                           alphas, beta, cfg.prior, VBVariant::PerSlice, ranks,
                                           cfg.fixed_alpha.has_value(),
                                           cfg.fixed_beta.has_value()));
        out.iterations = t;

        e_alpha_flat.resize(static_cast<Index>(alphas.size()));
        Index c = 0;
        for (size_t k = 0; k < ranks.size(); ++k)
            for (Index i = 0; i < ranks[k]; ++i) e_alpha_flat[c++] = e_alpha[k][i];
        if (t >= 2) {
            double delta = std::max({rel_change(mu, prev_mu), rel_change(e_beta, prev_beta),
                                     rel_change_each(e_alpha_flat, prev_alpha_flat)});
            if (delta < cfg.tol) break;
        }
        prev_mu = mu;
        prev_alpha_flat = e_alpha_flat;
        prev_beta = e_beta;
    }

    out.posterior.mean = mu;
    out.posterior.covariance = linalg::symmetric_inverse_from_inverted_factor(std::move(mat));
    out.alpha = alphas;
    out.beta = beta;
    return out;
}

} // namespace

std::vector<std::vector<Index>> slice_index_map(const std::vector<Index>& ranks) {
    Index n = 1;
    for (Index r : ranks) {
        if (r < 1) throw DimensionError("core ranks must be positive");
        n *= r;
    }
    std::vector<std::vector<Index>> smap(ranks.size(), std::vector<Index>(static_cast<size_t>(n)));
    Index stride = 1;
    for (size_t k = 0; k < ranks.size(); ++k) {
        for (Index j = 0; j < n; ++j) smap[k][static_cast<size_t>(j)] = (j / stride) % ranks[k];
        stride *= ranks[k];
    }
    return smap;
}

GaussianPosterior posterior_update(const ReducedSystem& sys, double e_beta,
                                   const Vector& prior_precision_diag) {
    const Index n = sys.n_g();
    if (prior_precision_diag.size() != n)
        throw DimensionError("prior precision diagonal has wrong length");
    if (!(e_beta > 0.0)) throw DomainError("noise precision must be positive");
    if (prior_precision_diag.minCoeff() <= 0.0)
        throw DomainError("prior precisions must be positive");

    Matrix mat = e_beta * sys.gram;
    mat.diagonal() += prior_precision_diag;
    Eigen::LLT<Matrix> llt(mat);
    if (llt.info() != Eigen::Success)
        throw NumericalError("posterior precision is not positive definite (diagonal spread " +
                             std::to_string(mat.diagonal().maxCoeff() /
                                            mat.diagonal().minCoeff()) +
                             ")");
    GaussianPosterior post;
    post.mean = llt.solve(e_beta * sys.aty);
    Matrix linv = llt.matrixL();
    linalg::invert_cholesky_factor(linv);
    post.covariance = linalg::symmetric_inverse_from_inverted_factor(std::move(linv));
    return post;
}

GammaParams update_alpha_single(const GaussianPosterior& post, const HyperPrior& prior) {
    const Index n = post.mean.size();
    double e_g2 = post.mean.squaredNorm() + post.covariance.trace();
    return make_gamma(prior.a0 + 0.5 * double(n), prior.b0 + 0.5 * e_g2);
}

std::vector<GammaParams> update_alpha_per_mode(const GaussianPosterior& post,
                                               const HyperPrior& prior,
                                               const std::vector<Index>& ranks) {
    if (shape_product(ranks) != post.mean.size())
        throw DimensionError("rank product does not match posterior dimension");
    GammaParams g = update_alpha_single(post, prior);
    return std::vector<GammaParams>(ranks.size(), g);
}

std::vector<GammaParams> update_alpha_per_slice(const GaussianPosterior& post,
                                                const HyperPrior& prior,
                                                const std::vector<Index>& ranks,
                                                const std::vector<GammaParams>& current) {
    const Index n = post.mean.size();
    if (shape_product(ranks) != n)
        throw DimensionError("rank product does not match posterior dimension");
    if (current.size() != expected_alpha_count(VBVariant::PerSlice, ranks))
        throw DimensionError("current alpha count does not match the slice layout");
    auto smap = slice_index_map(ranks);
    auto sm = slice_moments_from(post.mean, post.covariance.diagonal(), ranks, smap);

    std::vector<Vector> elna(ranks.size()), phisum(ranks.size());
    size_t c = 0;
    for (size_t k = 0; k < ranks.size(); ++k) {
        elna[k].resize(ranks[k]);
        phisum[k] = Vector::Zero(ranks[k]);
        for (Index i = 0; i < ranks[k]; ++i, ++c)
            elna[k][i] = digamma(current[c].shape) - std::log(current[c].rate);
    }
    std::vector<double> w(ranks.size());
    for (Index j = 0; j < n; ++j) {
        double mx = elna[0][smap[0][static_cast<size_t>(j)]];
        for (size_t k = 1; k < ranks.size(); ++k)
            mx = std::max(mx, elna[k][smap[k][static_cast<size_t>(j)]]);
        double se = 0.0;
        for (size_t k = 0; k < ranks.size(); ++k) {
            w[k] = std::exp(elna[k][smap[k][static_cast<size_t>(j)]] - mx);
            se += w[k];
        }
        for (size_t k = 0; k < ranks.size(); ++k)
            phisum[k][smap[k][static_cast<size_t>(j)]] += w[k] / se;
    }

    std::vector<GammaParams> out;
    out.reserve(current.size());
    for (size_t k = 0; k < ranks.size(); ++k)
        for (Index i = 0; i < ranks[k]; ++i)
            out.push_back(make_gamma(prior.a0 + 0.5 * phisum[k][i], prior.b0 + 0.5 * sm[k][i]));
    return out;
}

GammaParams update_beta(const ReducedSystem& sys, const GaussianPosterior& post,
                        const HyperPrior& prior) {
    if (post.mean.size() != sys.n_g())
        throw DimensionError("posterior dimension does not match system");
    double residual2 = (sys.y - sys.a_tilde * post.mean).squaredNorm();
    double tr_g_sigma = sys.gram.cwiseProduct(post.covariance).sum();
    return make_gamma(prior.a0 + 0.5 * double(sys.m()),
                      prior.b0 + 0.5 * (residual2 + tr_g_sigma));
}

double elbo(const ReducedSystem& sys, const GaussianPosterior& post,
            const std::vector<GammaParams>& alphas, const GammaParams& beta,
            const HyperPrior& prior, VBVariant variant, const std::vector<Index>& ranks) {
    if (shape_product(ranks) != sys.n_g())
        throw DimensionError("rank product does not match system dimension");
    if (alphas.size() != expected_alpha_count(variant, ranks))
        throw DimensionError("alpha component count does not match the precision layout");

    double residual2 = (sys.y - sys.a_tilde * post.mean).squaredNorm();
    double tr_g_sigma = sys.gram.cwiseProduct(post.covariance).sum();
    Eigen::LLT<Matrix> llt(post.covariance);
    if (llt.info() != Eigen::Success)
        throw NumericalError("posterior covariance is not positive definite");
    double logdet_sigma = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    double e_g2 = post.mean.squaredNorm() + post.covariance.trace();
    std::vector<Vector> sm;
    if (variant == VBVariant::PerSlice)
        sm = slice_moments_from(post.mean, post.covariance.diagonal(), ranks,
                                slice_index_map(ranks));
    return elbo_core(sys.m(), sys.n_g(), residual2, tr_g_sigma, logdet_sigma, e_g2, sm, alphas,
                     beta, prior, variant, ranks, false, false);
}

VBResult solve(const ReducedSystem& sys, const VBConfig& cfg, const TuckerSubspace& sub) {
    validate_config(cfg);
    if (sub.n_g() != sys.n_g())
        throw DimensionError("subspace dimension does not match reduced system");

    VBResult out = (cfg.variant == VBVariant::PerSlice) ? per_slice_engine(sys, cfg, sub.ranks)
                                                        : isotropic_engine(sys, cfg, sub.ranks);
    out.variant = cfg.variant;
    out.ranks = sub.ranks;
    out.sigma2_hat = out.beta.rate / out.beta.shape;
    out.lambda.resize(out.alpha.size());
    for (size_t i = 0; i < out.alpha.size(); ++i)
        out.lambda[i] = out.sigma2_hat * out.alpha[i].mean();
    out.x_hat = sub.expand(out.posterior.mean);
    return out;
}

VBResult solve_direct(const ForwardOperator& op, const Vector& y, const VBConfig& cfg) {
    validate_config(cfg);
    const Index n = op_cols(op);
    if (n > cfg.direct_max_n)
        throw CapacityError("direct solve needs " + std::to_string(n) +
                            " unknowns, limit is " + std::to_string(cfg.direct_max_n));
    if (y.size() != op_rows(op))
        throw DimensionError("observation length does not match operator output size");
    ReducedSystem sys = make_reduced_system(materialize(op), y);
    return solve(sys, cfg, identity_subspace(n));
}

} // namespace tvb
