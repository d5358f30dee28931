#include "fixtures.hpp"
#include "oracles.hpp"
#include "npmle/metrics.hpp"

#include <numeric>

#include <gtest/gtest.h>

using namespace npmle;
using namespace npmle::testing;

namespace {

void expect_marginals(const TransportPlan& plan, const MixingMeasure& g, const MixingMeasure& h) {
    Vector rows = Vector::Zero(g.size()), cols = Vector::Zero(h.size());
    for (const auto& f : plan.flows) {
        EXPECT_GE(f.mass, 0.0);
        rows[f.source] += f.mass;
        cols[f.target] += f.mass;
    }
    EXPECT_LE((rows - g.weights()).lpNorm<Eigen::Infinity>(), 1e-9);
    EXPECT_LE((cols - h.weights()).lpNorm<Eigen::Infinity>(), 1e-9);
}

Dataset one_dim_data(std::mt19937_64& rng, std::size_t n) {
    std::vector<Observation> obs;
    std::uniform_real_distribution<double> v(0.3, 1.5);
    for (std::size_t i = 0; i < n; ++i)
        obs.push_back({random_vector(rng, 1), Covariance::isotropic(1, i % 3 == 0 ? 0.5 : v(rng))});
    return Dataset(std::move(obs));
}

} // namespace

TEST(Hellinger, IdenticalMeasuresAreZero) {
    std::mt19937_64 rng(51);
    const auto g = random_measure(rng, 4, 2);
    const auto data = random_dataset(rng, 5, 2, CovKind::Mixed);
    const auto mc = avg_hellinger_sq(g, g, data, 500, 1);
    EXPECT_EQ(mc.value, 0.0);
    EXPECT_EQ(mc.std_error, 0.0);
    const auto data1 = one_dim_data(rng, 4);
    const auto g1 = random_measure(rng, 3, 1);
    EXPECT_NEAR(avg_hellinger_sq(g1, g1, data1, 1, 1, HellingerMethod::Quadrature).value, 0.0, 1e-12);
}

TEST(Hellinger, ShiftedGaussianClosedForm) {
    const Dataset data({{Vector::Zero(1), Covariance::isotropic(1, 1.0)}});
    const auto zero = MixingMeasure::point_mass(Vector::Zero(1));
    for (double mu : {0.5, 1.0, 2.0, 3.0}) {
        const auto q = avg_hellinger_sq(zero, MixingMeasure::point_mass(Vector::Constant(1, mu)), data, 1, 0,
                                        HellingerMethod::Quadrature);
        EXPECT_NEAR(q.value, 1.0 - std::exp(-mu * mu / 8.0), 1e-4);
        EXPECT_EQ(q.std_error, 0.0);
        EXPECT_EQ(q.samples, kQuadratureNodes);
    }
    const auto at2 = avg_hellinger_sq(zero, MixingMeasure::point_mass(Vector::Constant(1, 2.0)), data, 1, 0,
                                      HellingerMethod::Quadrature);
    EXPECT_NEAR(at2.value, 0.3934693402873666, 1e-4);
}

TEST(Hellinger, MonteCarloAgreesWithQuadrature) {
    std::mt19937_64 rng(52);
    for (int t = 0; t < 10; ++t) {
        const auto data = one_dim_data(rng, 6);
        const auto g = random_measure(rng, 3, 1), h = random_measure(rng, 4, 1);
        const auto q = avg_hellinger_sq(g, h, data, 1, 0, HellingerMethod::Quadrature);
        const auto mc = avg_hellinger_sq(g, h, data, 20000, 100 + t);
        EXPECT_GT(mc.std_error, 0.0);
        EXPECT_LE(std::abs(q.value - mc.value), 3.0 * mc.std_error) << "instance " << t;
    }
}

TEST(Hellinger, SymmetricAndDeterministic) {
    std::mt19937_64 rng(53);
    const auto data = random_dataset(rng, 8, 2, CovKind::Mixed);
    const auto g = random_measure(rng, 3, 2), h = random_measure(rng, 5, 2);
    const auto a = avg_hellinger_sq(g, h, data, 4000, 9);
    const auto b = avg_hellinger_sq(g, h, data, 4000, 9);
    const auto c = avg_hellinger_sq(h, g, data, 4000, 9);
    EXPECT_EQ(a.value, b.value);
    EXPECT_LE(std::abs(a.value - c.value), 4.0 * (a.std_error + c.std_error));
    EXPECT_GE(a.value, 0.0);
    EXPECT_LE(a.value, 1.0);
}

TEST(Hellinger, QuadratureSymmetric) {
    std::mt19937_64 rng(54);
    const auto data = one_dim_data(rng, 5);
    const auto g = random_measure(rng, 3, 1), h = random_measure(rng, 2, 1);
    EXPECT_NEAR(avg_hellinger_sq(g, h, data, 1, 0, HellingerMethod::Quadrature).value,
                avg_hellinger_sq(h, g, data, 1, 0, HellingerMethod::Quadrature).value, 1e-14);
}

TEST(Hellinger, InvalidArguments) {
    const Dataset data({{Vector::Zero(2), Covariance::isotropic(2, 1.0)}});
    const auto g = MixingMeasure::point_mass(Vector::Zero(2));
    EXPECT_THROW((void)avg_hellinger_sq(g, g, data, 0, 0), Error);
    EXPECT_THROW((void)avg_hellinger_sq(g, g, data, 10, 0, HellingerMethod::Quadrature), Error);
}

TEST(Wasserstein, PointMasses) {
    Vector a(2), b(2);
    a << 1.0, 2.0;
    b << -1.0, 0.5;
    const auto plan = wasserstein2(MixingMeasure::point_mass(a), MixingMeasure::point_mass(b));
    EXPECT_NEAR(plan.cost, (a - b).squaredNorm(), 1e-15);
    ASSERT_EQ(plan.flows.size(), 1u);
}

TEST(Wasserstein, SplitToOrigin) {
    Matrix a(2, 2);
    a << 1.0, 0.0, 0.0, 1.0;
    const MixingMeasure g(a, Vector::Constant(2, 0.5));
    const auto origin = MixingMeasure::point_mass(Vector::Zero(2));
    EXPECT_NEAR(wasserstein2(g, origin).cost, 1.0, 1e-15);
    EXPECT_NEAR(w2_to_point_mass(g, Vector::Zero(2)), 1.0, 1e-15);
    EXPECT_EQ(w2_to_point_mass(origin, Vector::Zero(2)), 0.0);
}

TEST(Wasserstein, MatchesBruteForceEnumeration) {
    std::mt19937_64 rng(55);
    std::uniform_int_distribution<int> size(1, 4);
    for (int t = 0; t < 30; ++t) {
        const auto g = random_measure(rng, size(rng), 2), h = random_measure(rng, size(rng), 2);
        const auto plan = wasserstein2(g, h);
        EXPECT_NEAR(plan.cost, brute_force_w2sq(g, h), 1e-9) << "instance " << t;
        expect_marginals(plan, g, h);
    }
}

TEST(Wasserstein, FiveAtomPairsMatchBruteForce) {
    std::mt19937_64 rng(56);
    for (int t = 0; t < 2; ++t) {
        const auto g = random_measure(rng, 5, 2), h = random_measure(rng, 5, 2);
        EXPECT_NEAR(wasserstein2(g, h).cost, brute_force_w2sq(g, h), 1e-9);
    }
}

TEST(Wasserstein, DegenerateEqualWeights) {
    // equal uniform weights make every least-cost step close a row and a column together
    std::mt19937_64 rng(57);
    for (int t = 0; t < 10; ++t) {
        Matrix a(1, 4), b(1, 4);
        for (int j = 0; j < 4; ++j) {
            a(0, j) = j;
            b(0, j) = std::normal_distribution<double>(0.0, 2.0)(rng);
        }
        const MixingMeasure g(a, Vector::Constant(4, 0.25)), h(b, Vector::Constant(4, 0.25));
        // in one dimension the monotone (sorted) coupling is optimal
        std::vector<double> sb(b.data(), b.data() + 4);
        std::sort(sb.begin(), sb.end());
        double expected = 0.0;
        for (int j = 0; j < 4; ++j)
            expected += 0.25 * (j - sb[static_cast<std::size_t>(j)]) * (j - sb[static_cast<std::size_t>(j)]);
        const auto plan = wasserstein2(g, h);
        EXPECT_NEAR(plan.cost, expected, 1e-12);
        expect_marginals(plan, g, h);
    }
}

TEST(Wasserstein, PointMassIdentity) {
    std::mt19937_64 rng(58);
    for (int t = 0; t < 20; ++t) {
        const auto g = random_measure(rng, 12, 3);
        const Vector mu = random_vector(rng, 3);
        EXPECT_NEAR(wasserstein2(g, MixingMeasure::point_mass(mu)).distance(), w2_to_point_mass(g, mu), 1e-10);
    }
}

TEST(Wasserstein, TriangleInequality) {
    std::mt19937_64 rng(59);
    for (int t = 0; t < 30; ++t) {
        const auto a = random_measure(rng, 4, 2), b = random_measure(rng, 5, 2), c = random_measure(rng, 3, 2);
        EXPECT_LE(wasserstein2(a, c).distance(),
                  wasserstein2(a, b).distance() + wasserstein2(b, c).distance() + 1e-9);
    }
}

TEST(Wasserstein, LargerInstanceMarginalsAndOneDimensionalOptimum) {
    std::mt19937_64 rng(60);
    const auto g = random_measure(rng, 60, 1), h = random_measure(rng, 80, 1);
    const auto plan = wasserstein2(g, h);
    expect_marginals(plan, g, h);
    // one-dimensional oracle: integrate squared quantile differences
    auto quantiles = [](const MixingMeasure& m) {
        std::vector<std::pair<double, double>> v;
        for (Eigen::Index j = 0; j < m.size(); ++j)
            v.emplace_back(m.atoms()(0, j), m.weight(j));
        std::sort(v.begin(), v.end());
        return v;
    };
    const auto qa = quantiles(g), qb = quantiles(h);
    double expected = 0.0, ra = qa[0].second, rb = qb[0].second;
    std::size_t ia = 0, ib = 0;
    while (ia < qa.size() && ib < qb.size()) {
        const double mass = std::min(ra, rb);
        expected += mass * (qa[ia].first - qb[ib].first) * (qa[ia].first - qb[ib].first);
        ra -= mass;
        rb -= mass;
        if (ra <= 1e-15 && ++ia < qa.size())
            ra = qa[ia].second;
        if (rb <= 1e-15 && ++ib < qb.size())
            rb = qb[ib].second;
    }
    EXPECT_NEAR(plan.cost, expected, 1e-9);
}

TEST(Wasserstein, SizeLimit) {
    std::mt19937_64 rng(61);
    const auto g = random_measure(rng, 20, 1), h = random_measure(rng, 20, 1);
    try {
        (void)wasserstein2(g, h, 100);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::SizeLimit);
    }
}

TEST(Regret, Values) {
    std::vector<Vector> a{Vector::Zero(2), Vector::Ones(2)};
    EXPECT_EQ(regret(a, a), 0.0);
    EXPECT_EQ(regret({Vector::Unit(2, 0)}, {Vector::Zero(2)}), 1.0);
    try {
        (void)regret(a, {Vector::Zero(2)});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::LengthMismatch);
    }
}

TEST(LoglikGap, SignAndZero) {
    std::mt19937_64 rng(62);
    const auto data = random_dataset(rng, 10, 2, CovKind::Mixed);
    const auto g = random_measure(rng, 4, 2);
    EXPECT_EQ(loglik_gap(data, g, g), 0.0);
}
