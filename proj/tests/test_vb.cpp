#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "tvb/errors.hpp"
#include "tvb/operators.hpp"
#include "tvb/vb.hpp"
#include "test_helpers.hpp"

using namespace tvb;
using testutil::random_matrix;
using testutil::random_vector;

namespace {

ReducedSystem random_system(Index m, Index n, uint64_t seed) {
    return make_reduced_system(random_matrix(m, n, seed), random_vector(m, seed + 7));
}

TuckerSubspace core_shape(std::vector<Index> ranks) {
    // Identity factors: the system itself is the reduced system, the ranks
    // only define the slice layout.
    TuckerSubspace sub;
    for (Index r : ranks) sub.factors.push_back(Matrix::Identity(r, r));
    sub.ranks = std::move(ranks);
    return sub;
}

} // namespace

TEST_CASE("slice_index_map enumerates core coordinates, first mode fastest") {
    auto smap = slice_index_map({2, 3});
    REQUIRE(smap.size() == 2);
    REQUIRE(smap[0].size() == 6);
    CHECK(smap[0] == std::vector<Index>{0, 1, 0, 1, 0, 1});
    CHECK(smap[1] == std::vector<Index>{0, 0, 1, 1, 2, 2});
}

TEST_CASE("posterior_update matches the closed-form inverse") {
    ReducedSystem sys = random_system(12, 5, 301);
    Vector d = random_vector(5, 302).cwiseAbs() + Vector::Constant(5, 0.5);
    const double e_beta = 2.3;
    GaussianPosterior post = posterior_update(sys, e_beta, d);

    Matrix prec = e_beta * sys.gram + Matrix(d.asDiagonal());
    Matrix sigma = prec.inverse();
    CHECK(testutil::rel_diff(post.covariance, sigma) < 1e-10);
    CHECK(testutil::rel_diff(post.mean, Vector(e_beta * sigma * sys.aty)) < 1e-10);
    CHECK((post.covariance - post.covariance.transpose()).cwiseAbs().maxCoeff() <
          1e-10 * post.covariance.cwiseAbs().maxCoeff());
    CHECK_THROWS_AS((void)posterior_update(sys, -1.0, d), DomainError);
    Vector bad = d;
    bad[2] = 0.0;
    CHECK_THROWS_AS((void)posterior_update(sys, 1.0, bad), DomainError);
}

TEST_CASE("hyperparameter updates match their closed forms") {
    ReducedSystem sys = random_system(10, 4, 311);
    GaussianPosterior post = posterior_update(sys, 1.0, Vector::Constant(4, 1.0));
    HyperPrior prior{1e-3, 1e-2};

    GammaParams a = update_alpha_single(post, prior);
    double e_g2 = post.mean.squaredNorm() + post.covariance.trace();
    CHECK(a.shape == doctest::Approx(1e-3 + 2.0).epsilon(1e-14));
    CHECK(a.rate == doctest::Approx(1e-2 + 0.5 * e_g2).epsilon(1e-14));

    auto per_mode = update_alpha_per_mode(post, prior, {2, 2});
    REQUIRE(per_mode.size() == 2);
    CHECK(per_mode[0].shape == a.shape);
    CHECK(per_mode[0].rate == a.rate);
    CHECK(per_mode[1].rate == a.rate);

    std::vector<GammaParams> symmetric(4, GammaParams{1.0, 1.0});
    auto per_slice = update_alpha_per_slice(post, prior, {2, 2}, symmetric);
    REQUIRE(per_slice.size() == 4);
    // Mode-1 slice 0 holds coefficients {0, 2}; at a symmetric state each
    // coefficient splits evenly across its 2 modes, so the slice's shape
    // collects 2 * 1/2 = 1 half-count.
    double s00 = post.mean[0] * post.mean[0] + post.covariance(0, 0) +
                 post.mean[2] * post.mean[2] + post.covariance(2, 2);
    CHECK(per_slice[0].shape == doctest::Approx(1e-3 + 0.5).epsilon(1e-14));
    CHECK(per_slice[0].rate == doctest::Approx(1e-2 + 0.5 * s00).epsilon(1e-12));

    // A mode whose log-precision dominates absorbs the shared mass: inflate
    // mode 2's state and mode 1's shapes fall back toward a0.
    std::vector<GammaParams> skewed{GammaParams{1.0, 1.0}, GammaParams{1.0, 1.0},
                                    GammaParams{1e30, 1.0}, GammaParams{1e30, 1.0}};
    auto dominated = update_alpha_per_slice(post, prior, {2, 2}, skewed);
    CHECK(dominated[0].shape == doctest::Approx(1e-3).epsilon(1e-6));
    CHECK(dominated[2].shape == doctest::Approx(1e-3 + 1.0).epsilon(1e-10));

    GammaParams b = update_beta(sys, post, prior);
    double resid = (sys.y - sys.a_tilde * post.mean).squaredNorm();
    double trgs = sys.gram.cwiseProduct(post.covariance).sum();
    CHECK(b.shape == doctest::Approx(1e-3 + 5.0).epsilon(1e-14));
    CHECK(b.rate == doctest::Approx(1e-2 + 0.5 * (resid + trgs)).epsilon(1e-12));
}

TEST_CASE("stronger prior precision shrinks the posterior mean") {
    ReducedSystem sys = random_system(14, 6, 321);
    double prev = std::numeric_limits<double>::infinity();
    for (double c : {0.01, 0.1, 1.0, 10.0, 100.0}) {
        GaussianPosterior post = posterior_update(sys, 1.0, Vector::Constant(6, c));
        double norm = post.mean.norm();
        CHECK(norm < prev);
        prev = norm;
    }
}

TEST_CASE("frozen hyperparameters reproduce the Tikhonov solution") {
    for (uint64_t seed : {401u, 402u, 403u}) {
        ReducedSystem sys = random_system(24, 8, seed);
        VBConfig cfg;
        cfg.fixed_alpha = 3.5;
        cfg.fixed_beta = 0.8;
        VBResult res = solve(sys, cfg, identity_subspace(8));

        const double lambda = 3.5 / 0.8;
        Vector tik = (sys.gram + lambda * Matrix::Identity(8, 8)).ldlt().solve(sys.aty);
        CHECK(testutil::rel_diff(res.posterior.mean, tik) < 1e-10);
        REQUIRE(res.lambda.size() == 1);
        CHECK(res.lambda[0] == doctest::Approx(lambda).epsilon(1e-12));
    }
}

TEST_CASE("evidence bound is non-decreasing for every variant") {
    for (VBVariant variant : {VBVariant::Single, VBVariant::PerMode, VBVariant::PerSlice}) {
        for (uint64_t seed = 0; seed < 6; ++seed) {
            TuckerSubspace sub = core_shape({3, 4});
            ReducedSystem sys = random_system(40, 12, 500 + seed);
            VBConfig cfg;
            cfg.variant = variant;
            cfg.max_iters = 60;
            VBResult res = solve(sys, cfg, sub);
            REQUIRE(res.elbo_trace.size() >= 2);
            for (size_t t = 1; t < res.elbo_trace.size(); ++t) {
                double slack = 1e-8 * (1.0 + std::abs(res.elbo_trace[t - 1]));
                CHECK(res.elbo_trace[t] >= res.elbo_trace[t - 1] - slack);
            }
        }
    }
}

TEST_CASE("solver trace endpoint agrees with the standalone bound") {
    TuckerSubspace sub = core_shape({2, 3});
    ReducedSystem sys = random_system(30, 6, 601);
    for (VBVariant variant : {VBVariant::Single, VBVariant::PerMode, VBVariant::PerSlice}) {
        VBConfig cfg;
        cfg.variant = variant;
        VBResult res = solve(sys, cfg, sub);
        double recomputed =
            elbo(sys, res.posterior, res.alpha, res.beta, cfg.prior, variant, sub.ranks);
        CHECK(std::abs(recomputed - res.elbo_trace.back()) <=
              1e-8 * (1.0 + std::abs(recomputed)));
    }
}

TEST_CASE("single-mode PerMode run is bitwise identical to Single") {
    ReducedSystem sys = random_system(20, 7, 611);
    TuckerSubspace sub = identity_subspace(7);
    VBConfig cfg_s, cfg_m;
    cfg_s.variant = VBVariant::Single;
    cfg_m.variant = VBVariant::PerMode;
    VBResult rs = solve(sys, cfg_s, sub);
    VBResult rm = solve(sys, cfg_m, sub);
    REQUIRE(rm.alpha.size() == 1);
    CHECK(rs.iterations == rm.iterations);
    CHECK((rs.posterior.mean.array() == rm.posterior.mean.array()).all());
    CHECK(rs.alpha[0].shape == rm.alpha[0].shape);
    CHECK(rs.alpha[0].rate == rm.alpha[0].rate);
    CHECK(rs.beta.rate == rm.beta.rate);
    REQUIRE(rs.elbo_trace.size() == rm.elbo_trace.size());
    for (size_t t = 0; t < rs.elbo_trace.size(); ++t)
        CHECK(rs.elbo_trace[t] == rm.elbo_trace[t]);
}

TEST_CASE("noise level is recovered on well-posed synthetic systems") {
    const double sigma = 0.1;
    for (Index m : {Index{256}, Index{1024}, Index{4096}}) {
        double acc = 0.0;
        const int reps = 5;
        for (int r = 0; r < reps; ++r) {
            Matrix a = random_matrix(m, 8, 700 + static_cast<uint64_t>(r) + uint64_t(m));
            Vector g = random_vector(8, 900 + static_cast<uint64_t>(r));
            Vector noise = testutil::random_gaussian(m, 1000 + static_cast<uint64_t>(r));
            Vector y = a * g + sigma * noise;
            VBResult res = solve(make_reduced_system(a, y), VBConfig{}, identity_subspace(8));
            acc += std::sqrt(res.sigma2_hat);
        }
        CHECK(std::abs(acc / reps - sigma) < 0.1 * sigma);
    }
}

TEST_CASE("per-slice precisions adapt to anisotropic coefficients") {
    // Mode-1 slice 1 carries much smaller coefficients than slice 0, so its
    // precision estimate must come out much larger.
    TuckerSubspace sub = core_shape({2, 4});
    Matrix a = random_matrix(64, 8, 801);
    Vector g(8);
    for (Index j = 0; j < 8; ++j) g[j] = (j % 2 == 0) ? 2.0 : 1e-3;
    Vector y = a * g + 0.01 * testutil::random_gaussian(64, 802);
    VBConfig cfg;
    cfg.variant = VBVariant::PerSlice;
    VBResult res = solve(make_reduced_system(a, y), cfg, sub);
    REQUIRE(res.alpha.size() == 6);
    CHECK(res.alpha[1].mean() > 100.0 * res.alpha[0].mean());
    REQUIRE(res.lambda.size() == 6);
    CHECK(res.lambda[1] > res.lambda[0]);
}

TEST_CASE("solve_direct equals solve through a full-rank subspace") {
    SeparableOp sep{{random_matrix(6, 4, 811), random_matrix(7, 5, 812)}};
    TuckerSubspace sub = build_subspace_from_separable(sep, {4, 5});
    Vector y = random_vector(42, 813);
    VBConfig cfg;
    VBResult reduced = solve(reduce(sep, sub, y), cfg, sub);
    VBResult direct = solve_direct(sep, y, cfg);
    CHECK(testutil::rel_diff(direct.x_hat, reduced.x_hat) < 1e-8);
    CHECK(std::abs(direct.sigma2_hat - reduced.sigma2_hat) <
          1e-6 * std::abs(direct.sigma2_hat));
}

TEST_CASE("solve_direct enforces the capacity limit") {
    DenseOp dense{random_matrix(10, 9, 821)};
    VBConfig cfg;
    cfg.direct_max_n = 8;
    CHECK_THROWS_AS((void)solve_direct(dense, random_vector(10, 822), cfg), CapacityError);
}

TEST_CASE("solver output bundles a consistent summary") {
    TuckerSubspace sub = core_shape({2, 2});
    ReducedSystem sys = random_system(25, 4, 831);
    VBConfig cfg;
    cfg.variant = VBVariant::PerMode;
    VBResult res = solve(sys, cfg, sub);
    CHECK(res.variant == VBVariant::PerMode);
    CHECK(res.ranks == std::vector<Index>{2, 2});
    REQUIRE(res.alpha.size() == 2);
    REQUIRE(res.lambda.size() == 2);
    CHECK(res.sigma2_hat == doctest::Approx(res.beta.rate / res.beta.shape));
    CHECK(res.lambda[0] ==
          doctest::Approx(res.sigma2_hat * res.alpha[0].mean()).epsilon(1e-12));
    CHECK(res.x_hat.size() == 4);
    CHECK(res.iterations >= 1);
    CHECK(int(res.elbo_trace.size()) == res.iterations);
    CHECK(std::isfinite(res.elbo_trace.back()));
}

TEST_CASE("degenerate observations stay finite") {
    Matrix a = random_matrix(12, 4, 841);
    VBResult res = solve(make_reduced_system(a, Vector::Zero(12)), VBConfig{},
                         identity_subspace(4));
    CHECK(res.posterior.mean.norm() == 0.0);
    CHECK(std::isfinite(res.elbo_trace.back()));
    CHECK(res.beta.rate > 0.0);
}

TEST_CASE("configuration validation") {
    ReducedSystem sys = random_system(8, 3, 851);
    VBConfig cfg;
    cfg.max_iters = 0;
    CHECK_THROWS_AS((void)solve(sys, cfg, identity_subspace(3)), DomainError);
    cfg = VBConfig{};
    cfg.tol = 0.0;
    CHECK_THROWS_AS((void)solve(sys, cfg, identity_subspace(3)), DomainError);
    cfg = VBConfig{};
    cfg.prior.a0 = -1.0;
    CHECK_THROWS_AS((void)solve(sys, cfg, identity_subspace(3)), DomainError);
    CHECK_THROWS_AS((void)solve(sys, VBConfig{}, identity_subspace(4)), DimensionError);
}
