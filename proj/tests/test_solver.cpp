#include "fixtures.hpp"
#include "npmle/kernels.hpp"
#include "npmle/solver.hpp"
#include "npmle/support.hpp"

#include <gtest/gtest.h>

using namespace npmle;
using namespace npmle::testing;

namespace {

/// Triangle grid: the four tied modes plus a few other lattice points.
Matrix triangle_grid() {
    const Matrix modes = triangle_modes();
    Matrix extra(2, 4);
    extra << 0.4, -0.4, 0.0, 0.2,
             0.0, 0.0, -0.6, 0.3;
    Matrix grid(2, 8);
    grid << modes, extra;
    return grid;
}

SolverConfig config_for(Algorithm a, double tol = 1e-9, int iters = 200000) {
    SolverConfig c;
    c.algorithm = a;
    c.dual_gap_tol = tol;
    c.max_iters = iters;
    return c;
}

} // namespace

TEST(EmStep, SingleObservationFixedPoint) {
    const Dataset data({{Vector::Ones(2), Covariance::isotropic(2, 1.0)}});
    Matrix atoms(2, 2);
    atoms << 1.0, 0.0, 1.0, 0.0;
    const auto k = kernel_matrix(data, atoms);
    Vector w(2);
    w << 1.0, 0.0;
    EXPECT_EQ(em_step(k, w), w);
}

TEST(EmStep, SymmetricPairFixedPoint) {
    const Dataset data({{Vector::Zero(1), Covariance::isotropic(1, 1.0)}});
    Matrix atoms(1, 2);
    atoms << -1.0, 1.0;
    const auto k = kernel_matrix(data, atoms);
    const Vector w = Vector::Constant(2, 0.5);
    EXPECT_TRUE(em_step(k, w).isApprox(w, 1e-15));
}

TEST(EmStep, NeverDecreasesLoglik) {
    std::mt19937_64 rng(21);
    for (int t = 0; t < 100; ++t) {
        const auto data = random_dataset(rng, 5 + t % 40, 1 + t % 3, CovKind::Mixed);
        const auto k = kernel_matrix(data, random_grid(rng, data, 5 + t % 20));
        const Vector w = random_simplex(rng, k.cols());
        const Vector next = em_step(k, w);
        EXPECT_NEAR(next.sum(), 1.0, 1e-12);
        EXPECT_GE(mixture_loglik(k, next), mixture_loglik(k, w) - 1e-13);
    }
}

TEST(DualValues, ZeroAtSingleAtom) {
    const Dataset data({{Vector::Ones(2), Covariance::isotropic(2, 1.0)}});
    const auto k = kernel_matrix(data, Matrix(Vector::Ones(2)));
    EXPECT_NEAR(dual_values(k, Vector::Ones(1))[0], 0.0, 1e-15);
}

TEST(DualValues, TriangleOptimumIsZeroOnAllModes) {
    const auto k = kernel_matrix(triangle_dataset(), triangle_modes());
    Vector w(4);
    w << 0.0, 0.0, 0.0, 1.0;
    const Vector d = dual_values(k, w);
    for (Eigen::Index j = 0; j < 4; ++j)
        EXPECT_NEAR(d[j], 0.0, 1e-13);
}

TEST(DualValues, WeightedSumIsZero) {
    std::mt19937_64 rng(22);
    for (int t = 0; t < 50; ++t) {
        const auto data = random_dataset(rng, 20, 2, CovKind::Mixed);
        const auto k = kernel_matrix(data, random_grid(rng, data, 30));
        const Vector w = random_simplex(rng, k.cols());
        EXPECT_NEAR(w.dot(dual_values(k, w)), 0.0, 1e-12);
    }
}

TEST(DualDensity, TriangleHasFourEqualGlobalModes) {
    const auto data = triangle_dataset();
    const Vector fitted = Vector::Constant(3, triangle_fitted_likelihood());
    const Matrix modes = triangle_modes();
    const double peak = dual_density(modes.col(3), data, fitted);
    for (Eigen::Index j = 0; j < 3; ++j)
        EXPECT_NEAR(dual_density(modes.col(j), data, fitted), peak, 1e-13);
    EXPECT_NEAR(peak, triangle_fitted_likelihood(), 1e-13);
    double best = 0.0;
    for (double x = -1.5; x <= 1.5; x += 0.01)
        for (double y = -1.5; y <= 1.5; y += 0.01)
            best = std::max(best, dual_density(Vector{{x, y}}, data, fitted));
    EXPECT_LE(best, peak + 1e-12);
}

TEST(DualDensity, SingleObservation) {
    const Dataset data({{Vector::Ones(2), Covariance::isotropic(2, 0.7)}});
    const Vector fitted = Vector::Constant(1, 0.2);
    const double at_x = dual_density(Vector::Ones(2), data, fitted);
    EXPECT_NEAR(at_x, std::exp(log_gauss(Vector::Ones(2), Vector::Ones(2), data[0].sigma)), 1e-15);
    EXPECT_LT(dual_density(Vector::Zero(2), data, fitted), at_x);
}

TEST(DualDensity, UniformFittedIsEqualMixture) {
    std::mt19937_64 rng(23);
    const auto data = random_dataset(rng, 8, 2, CovKind::Mixed);
    const Vector theta = random_vector(rng, 2);
    double expected = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i)
        expected += std::exp(log_gauss(data[i].x, theta, data[i].sigma)) / 8.0;
    EXPECT_NEAR(dual_density(theta, data, Vector::Constant(8, 0.3)), expected, 1e-15);
}

TEST(SolveWeights, SingleObservation) {
    for (auto algo : {Algorithm::EM, Algorithm::FrankWolfe, Algorithm::ProjNewton}) {
        const Dataset data({{Vector::Zero(2), Covariance::isotropic(2, 0.5)}});
        Matrix grid(2, 3);
        grid << 0.0, 1.0, -1.0, 0.0, 0.0, 0.5;
        const auto res = solve_weights(kernel_matrix(data, grid), config_for(algo, 1e-8));
        EXPECT_NEAR(res.weights[0], 1.0, 1e-7) << to_string(algo);
        EXPECT_NEAR(res.certificate.loglik, -std::log(2.0 * M_PI * 0.5), 1e-7);
    }
}

TEST(SolveWeights, TriangleFittedLikelihoods) {
    const auto k = kernel_matrix(triangle_dataset(), triangle_grid());
    for (auto algo : {Algorithm::EM, Algorithm::FrankWolfe, Algorithm::ProjNewton}) {
        const auto res = solve_weights(k, config_for(algo, 1e-7));
        EXPECT_LE(res.certificate.dual_gap, 1e-7);
        for (Eigen::Index i = 0; i < 3; ++i)
            EXPECT_NEAR(res.certificate.fitted_L[i], triangle_fitted_likelihood(), 1e-5) << to_string(algo);
        // all mass sits on the four tied modes
        EXPECT_NEAR(res.weights.head(4).sum(), 1.0, 1e-4) << to_string(algo);
    }
}

TEST(SolveWeights, CrossMassLeavesTheHull) {
    const auto data = cross_dataset();
    const auto region = support_region(data);
    ASSERT_EQ(region.kind, Region::Kind::BBox);
    const auto grid = build_grid(region, 0.05);
    const auto res = solve_weights(kernel_matrix(data, grid.atoms), SolverConfig{});
    // hull of the data is the diamond |x| + |y| <= 1
    double outside = 0.0;
    for (Eigen::Index j = 0; j < grid.size(); ++j)
        if (grid.atoms.col(j).lpNorm<1>() > 1.0 + 1e-9)
            outside += res.weights[j];
    EXPECT_GE(outside, 0.9);
}

TEST(SolveWeights, SuboptimalityBoundCoversLongRunEm) {
    std::mt19937_64 rng(24);
    for (int t = 0; t < 5; ++t) {
        const auto data = random_dataset(rng, 5, 2, CovKind::Mixed);
        const auto k = kernel_matrix(data, random_grid(rng, data, 0));
        // oracle: a million plain EM steps from uniform
        Vector w = Vector::Constant(5, 0.2);
        for (int it = 0; it < 1000000; ++it)
            w = em_step(k, w);
        const double optimum = mixture_loglik(k, w);
        for (double tol : {1e-2, 1e-4}) {
            auto cfg = config_for(Algorithm::FrankWolfe, tol);
            const auto res = solve_weights(k, cfg);
            EXPECT_GE(loglik_suboptimality_bound(res.certificate) + 1e-12, optimum - res.certificate.loglik);
        }
    }
}

TEST(SolveWeights, SuboptimalityBoundValues) {
    FitCertificate c;
    c.dual_gap = 0.0;
    EXPECT_EQ(loglik_suboptimality_bound(c), 0.0);
    c.dual_gap = 1e-6;
    EXPECT_NEAR(loglik_suboptimality_bound(c), 1e-6, 1e-12);
}

TEST(SolveWeights, EmTraceMonotoneAndIdentityEveryIterate) {
    std::mt19937_64 rng(25);
    for (int t = 0; t < 100; ++t) {
        const auto data = random_dataset(rng, 5 + t % 46, 1 + t % 3, CovKind::Mixed);
        const auto k = kernel_matrix(data, random_grid(rng, data, t % 50));
        double worst_identity = 0.0;
        auto cfg = config_for(Algorithm::EM, 1e-6, 300);
        auto observe = [&](int, const Vector& w, double) {
            worst_identity = std::max(worst_identity, std::abs(w.dot(dual_values(k, w))));
        };
        FitCertificate cert;
        try {
            cert = solve_weights(k, cfg, observe).certificate;
        } catch (const NonConvergenceError& e) {
            cert = e.partial().certificate;
        }
        EXPECT_LE(worst_identity, 1e-10);
        for (std::size_t s = 1; s < cert.trace.size(); ++s)
            EXPECT_GE(cert.trace[s], cert.trace[s - 1] - 1e-13) << "instance " << t << " step " << s;
    }
}

TEST(SolveWeights, EmAndFrankWolfeAgreeOnFittedLikelihoods) {
    std::mt19937_64 rng(26);
    for (int t = 0; t < 5; ++t) {
        const auto data = random_dataset(rng, 30, 2, CovKind::Mixed);
        const auto k = kernel_matrix(data, random_grid(rng, data, 40));
        const auto em = solve_weights(k, config_for(Algorithm::EM, 1e-8, 2000000));
        const auto fw = solve_weights(k, config_for(Algorithm::FrankWolfe, 1e-8, 2000000));
        const auto nt = solve_weights(k, config_for(Algorithm::ProjNewton, 1e-8));
        EXPECT_LE((em.certificate.fitted_L - fw.certificate.fitted_L).lpNorm<Eigen::Infinity>(), 1e-5);
        EXPECT_LE((nt.certificate.fitted_L - fw.certificate.fitted_L).lpNorm<Eigen::Infinity>(), 1e-5);
    }
}

TEST(SolveWeights, LikelihoodFloorHolds) {
    std::mt19937_64 rng(27);
    for (int t = 0; t < 20; ++t) {
        const auto data = random_dataset(rng, 10 + t, 2, CovKind::Mixed, 3.0);
        const auto k = kernel_matrix(data, random_grid(rng, data, 20));
        const auto res = solve_weights(k, SolverConfig{});
        const double q = loglik_suboptimality_bound(res.certificate);
        for (std::size_t i = 0; i < data.size(); ++i)
            EXPECT_GE(res.certificate.log_fitted_L[static_cast<Eigen::Index>(i)],
                      log_likelihood_floor(data.size(), q, data[i].sigma));
    }
}

TEST(SolveWeights, NonConvergenceCarriesPartialCertificate) {
    std::mt19937_64 rng(28);
    const auto data = random_dataset(rng, 30, 2, CovKind::Mixed);
    const auto k = kernel_matrix(data, random_grid(rng, data, 30));
    try {
        (void)solve_weights(k, config_for(Algorithm::EM, 1e-12, 3));
        FAIL() << "expected NonConvergenceError";
    } catch (const NonConvergenceError& e) {
        EXPECT_EQ(e.code(), ErrorCode::NonConvergence);
        EXPECT_EQ(e.partial().certificate.iters, 3);
        EXPECT_FALSE(e.partial().certificate.converged);
        EXPECT_EQ(e.partial().certificate.trace.size(), 4u);
    }
}

TEST(ProjectToSimplex, KnownCases) {
    Vector v(3);
    v << 0.5, 0.5, 0.5;
    EXPECT_TRUE(project_to_simplex(v).isApprox(Vector::Constant(3, 1.0 / 3)));
    v << 2.0, 0.0, -1.0;
    Vector e(3);
    e << 1.0, 0.0, 0.0;
    EXPECT_TRUE(project_to_simplex(v).isApprox(e));
}

TEST(SolveWeights, AffineEquivariance) {
    std::mt19937_64 rng(29);
    for (int t = 0; t < 10; ++t) {
        const Eigen::Index p = 1 + t % 3;
        const auto data = random_dataset(rng, 25, p, CovKind::Mixed);
        const Matrix grid = random_grid(rng, data, 30);
        const AffineMap map(random_rotation(rng, p), random_vector(rng, p, 5.0));
        auto cfg = config_for(Algorithm::ProjNewton, 1e-10);
        const auto a = solve_weights(kernel_matrix(data, grid), cfg);
        const auto b = solve_weights(kernel_matrix(transform_dataset(data, map), map.apply_columns(grid)), cfg);
        EXPECT_NEAR(a.certificate.loglik, b.certificate.loglik, 1e-9);
        EXPECT_LE((a.certificate.fitted_L - b.certificate.fitted_L).lpNorm<Eigen::Infinity>(), 1e-9);
    }
}
