#include "npmle/sim.hpp"

#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace npmle;

namespace {

ExperimentConfig circle_config(std::uint64_t seed) {
    ExperimentConfig c;
    c.seed = seed;
    c.fit.delta = 0.1;
    return c;
}

PriorSpec three_atom_prior() {
    // pairwise separation ≥ 10 √k̄ with k̄ = 3/4
    const double s = 10.0 * std::sqrt(0.75);
    Matrix atoms(2, 3);
    atoms << 0.0, s, 0.0, 0.0, 0.0, s;
    return DiscretePrior{MixingMeasure(atoms, Vector::Constant(3, 1.0 / 3.0))};
}

} // namespace

TEST(Generate, SameSeedIsBitIdentical) {
    const auto a = generate(CirclePrior{}, NoiseSpec{}, 200, 11);
    const auto b = generate(CirclePrior{}, NoiseSpec{}, 200, 11);
    const auto c = generate(CirclePrior{}, NoiseSpec{}, 200, 12);
    bool differs = false;
    for (std::size_t i = 0; i < 200; ++i) {
        EXPECT_TRUE((a.data[i].x.array() == b.data[i].x.array()).all());
        EXPECT_TRUE((a.truth[i].array() == b.truth[i].array()).all());
        EXPECT_TRUE((a.data[i].sigma.dense().array() == b.data[i].sigma.dense().array()).all());
        differs = differs || (a.data[i].x - c.data[i].x).norm() > 0.0;
    }
    EXPECT_TRUE(differs);
}

TEST(Generate, PrefixDoesNotDependOnSampleSize) {
    const auto small = generate(CirclePrior{}, NoiseSpec{}, 10, 3);
    const auto large = generate(CirclePrior{}, NoiseSpec{}, 100, 3);
    for (std::size_t i = 0; i < 10; ++i)
        EXPECT_TRUE((small.data[i].x.array() == large.data[i].x.array()).all());
}

TEST(Generate, CircleMeansLieOnTheCircle) {
    const auto s = generate(CirclePrior{}, NoiseSpec{}, 500, 1);
    for (const auto& t : s.truth)
        EXPECT_NEAR(t.norm(), 2.0, 1e-12);
}

TEST(Generate, DiagonalVariancesInRange) {
    const auto s = generate(CirclePrior{}, NoiseSpec{}, 500, 2);
    for (std::size_t i = 0; i < s.data.size(); ++i) {
        const Matrix d = s.data[i].sigma.dense();
        EXPECT_EQ(d(0, 1), 0.0);
        for (int k = 0; k < 2; ++k) {
            EXPECT_GE(d(k, k), 0.5);
            EXPECT_LE(d(k, k), 0.75);
        }
    }
}

TEST(Generate, PointMassSampleMeanEnvelope) {
    for (Eigen::Index p = 1; p <= 3; ++p) {
        const auto noise = NoiseSpec::fixed_list({Covariance::isotropic(p, 1.0)});
        const std::size_t n = 4000;
        int inside = 0;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const auto s = generate(PointMassPrior{Vector::Zero(p)}, noise, n, seed);
            Vector mean = Vector::Zero(p);
            for (std::size_t i = 0; i < n; ++i)
                mean += s.data[i].x;
            mean /= static_cast<double>(n);
            inside += mean.norm() <= 4.0 * std::sqrt(static_cast<double>(p) / n) ? 1 : 0;
        }
        EXPECT_GE(inside, 19) << "p=" << p;
    }
}

TEST(Generate, RejectsInvalidSpecs) {
    EXPECT_THROW(generate(CirclePrior{0.0, 2048}, NoiseSpec{}, 10, 0), Error);
    EXPECT_THROW(generate(CirclePrior{2.0, 32}, NoiseSpec{}, 10, 0), Error);
    EXPECT_THROW(generate(CirclePrior{}, NoiseSpec{}, 0, 0), Error);
    EXPECT_THROW(NoiseSpec::diagonal_range(0.8, 0.5), Error);
    EXPECT_THROW(NoiseSpec::diagonal_range(0.0, 0.5), Error);
    EXPECT_THROW(generate(CirclePrior{}, NoiseSpec::fixed_list({Covariance::isotropic(3, 1.0)}), 10, 0), Error);
}

TEST(Generate, RawMseNearMeanTrace) {
    const auto s = generate(CirclePrior{}, NoiseSpec{}, 1000, 5);
    double trace = 0.0, mse = 0.0;
    for (std::size_t i = 0; i < s.data.size(); ++i) {
        trace += s.data[i].sigma.dense().trace();
        mse += (s.data[i].x - s.truth[i]).squaredNorm();
    }
    EXPECT_NEAR(mse / trace, 1.0, 0.1);
}

TEST(Oracle, PointMassPriorReturnsTheAtom) {
    Vector mu(2);
    mu << 1.5, -0.5;
    const auto s = generate(PointMassPrior{mu}, NoiseSpec{}, 50, 4);
    for (const auto& m : oracle_posterior_means(s.data, PointMassPrior{mu}))
        EXPECT_LE((m - mu).norm(), 1e-12);
}

TEST(Oracle, CircleCenterMapsToCenter) {
    std::vector<Observation> obs{{Vector::Zero(2), Covariance::isotropic(2, 0.6)}};
    const auto m = oracle_posterior_means(Dataset(obs), CirclePrior{});
    EXPECT_LE(m[0].norm(), 1e-12);
}

TEST(Oracle, CircleRefinementIsBelowTolerance) {
    const auto s = generate(CirclePrior{}, NoiseSpec{}, 300, 9);
    const auto coarse = oracle_posterior_means(s.data, CirclePrior{2.0, 1024});
    const auto fine = oracle_posterior_means(s.data, CirclePrior{2.0, 2048});
    double worst = 0.0;
    for (std::size_t i = 0; i < coarse.size(); ++i)
        worst = std::max(worst, (coarse[i] - fine[i]).lpNorm<Eigen::Infinity>());
    EXPECT_LT(worst, 1e-8);
}

TEST(Experiment, CircleDesignRanges) {
    const auto r = run_regret_experiment(circle_config(0));
    EXPECT_TRUE(r.converged);
    EXPECT_LE(r.regret, 0.1);
    EXPECT_LE(r.mse_eb, 1.15 * r.mse_oracle);
    EXPECT_GE(r.mse_raw, 1.0);
    EXPECT_LE(r.mse_raw, 1.6);
    EXPECT_LT(r.mse_eb, r.mse_raw);
    EXPECT_EQ(r.eb_means.size(), 1000u);
}

TEST(Experiment, ReportIsByteIdenticalAcrossRuns) {
    auto c = circle_config(3);
    c.n = 300;
    const auto a = run_regret_experiment(c).to_json(false).dump();
    const auto b = run_regret_experiment(c).to_json(false).dump();
    EXPECT_EQ(a, b);
    const auto full = run_regret_experiment(c).to_json();
    for (const char* key : {"config", "seed", "n", "p", "mse_raw", "mse_eb", "mse_oracle", "regret", "loglik",
                            "dual_gap", "atoms_kept", "wall_ms"})
        EXPECT_TRUE(full.contains(key)) << key;
}

TEST(Experiment, PointMassPriorShrinksFiveFold) {
    ExperimentConfig c;
    c.name = "pointmass";
    c.prior = PointMassPrior{Vector::Zero(2)};
    c.fit.delta = 0.1;
    c.seed = 1;
    const auto r = run_regret_experiment(c);
    EXPECT_LE(5.0 * r.mse_eb, r.mse_raw);
    EXPECT_LE(r.mse_oracle, 1e-20);
}

TEST(Experiment, DiscretePriorRecoversFewAtoms) {
    ExperimentConfig c;
    c.name = "discrete";
    c.prior = three_atom_prior();
    c.fit.delta = 0.1;
    c.seed = 2;
    const auto r = run_regret_experiment(c);
    ASSERT_TRUE(r.fitted.has_value());
    // one continuous atom quantizes onto a few neighbouring lattice corners
    const MixingMeasure merged = r.fitted->pruned(0.0, (1.0 + 1e-9) * r.delta * std::sqrt(2.0));
    std::vector<double> w(merged.weights().data(), merged.weights().data() + merged.size());
    std::sort(w.begin(), w.end(), std::greater<>());
    double mass = 0.0;
    int count = 0;
    while (mass < 0.99)
        mass += w[static_cast<std::size_t>(count++)];
    EXPECT_GE(count, 3);
    EXPECT_LE(count, 10);
}

TEST(Experiment, OracleDominatesOnAverage) {
    auto base = circle_config(100);
    const auto summary = run_replications(base, 20);
    const auto eb = summary.field(&ExperimentReport::mse_eb);
    const auto oracle = summary.field(&ExperimentReport::mse_oracle);
    std::vector<double> diff;
    for (std::size_t k = 0; k < eb.size(); ++k)
        diff.push_back(oracle[k] - eb[k]);
    const double mean = std::accumulate(diff.begin(), diff.end(), 0.0) / diff.size();
    EXPECT_LE(mean, 2.0 * std_error_of_mean(diff));
    for (std::size_t k = 0; k < summary.runs.size(); ++k)
        EXPECT_EQ(summary.runs[k].seed, 100 + k);
}

TEST(Aggregation, MedianAndStandardError) {
    EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
    EXPECT_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
    EXPECT_NEAR(std_error_of_mean({1.0, 2.0, 3.0, 4.0}), std::sqrt(5.0 / 3.0 / 4.0), 1e-15);
    EXPECT_THROW(median({}), Error);
}

TEST(Aggregation, ReplicationJson) {
    auto base = circle_config(0);
    base.n = 100;
    const auto summary = run_replications(base, 3);
    const auto j = summary.to_json(false);
    ASSERT_EQ(j["replications"].size(), 3u);
    const auto v = summary.field(&ExperimentReport::regret);
    EXPECT_EQ(j["aggregate"]["regret"]["median"].get<double>(), median(v));
    EXPECT_EQ(j["aggregate"]["regret"]["std_error"].get<double>(), std_error_of_mean(v));
}

TEST(W2Trend, DecreasesWithSampleSize) {
    FitOptions fit;
    fit.region = RegionMode::Ball;
    fit.delta = 0.1;
    const auto r = run_w2_trend(PointMassPrior{Vector::Zero(2)}, {100, 400, 1600}, {0, 1, 2, 3, 4}, {}, fit);
    ASSERT_EQ(r.points.size(), 3u);
    for (std::size_t k = 1; k < r.points.size(); ++k)
        EXPECT_LE(r.points[k].median_w2, r.points[k - 1].median_w2);
    for (const auto& p : r.points)
        EXPECT_TRUE(p.support_in_region);
    EXPECT_GE(r.slope, -0.6);
    EXPECT_LE(r.slope, -0.05);
}

TEST(W2Trend, RejectsUnorderedSizes) {
    EXPECT_THROW(run_w2_trend(PointMassPrior{Vector::Zero(1)}, {400, 100}, {0}), Error);
}
