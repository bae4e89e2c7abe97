#include "kcheck/diagnostics.hpp"
#include "kcheck/simulation.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <numeric>
#include <random>

using namespace kcheck;

namespace {

std::vector<double> linspace(int n) {
    std::vector<double> x(n);
    for (int i = 0; i < n; ++i) {
        x[i] = static_cast<double>(i) / (n - 1);
    }
    return x;
}

/// A model whose residuals are exactly `r`, for exercising the checks directly.
FittedModel model_with_residuals(const std::vector<double>& x, const std::vector<double>& r, int k,
                                 Criterion kind = Criterion::gcv) {
    FittedModel m;
    m.spec = ModelSpec{{BasisSpec::univariate("x", k)}, "y", kind};
    m.blocks.resize(1);
    m.residuals = Eigen::Map<const Vector>(r.data(), static_cast<Eigen::Index>(r.size()));
    m.mu = Vector::Zero(m.residuals.size());
    m.phi_hat = m.residuals.squaredNorm() / static_cast<double>(r.size());
    m.data.add("y", r);
    m.data.add("x", x);
    return m;
}

} // namespace

TEST(PhiDelta, HandComputedSequence) {
    std::vector<double> r{0, 1, 0, 1};
    std::vector<double> x{0.1, 0.2, 0.3, 0.4};
    EXPECT_EQ(phi_delta_univariate(r, x), 0.5);
    // same values presented out of order are sorted by the covariate first
    std::vector<double> r2{1, 0, 1, 0};
    std::vector<double> x2{0.4, 0.3, 0.2, 0.1};
    EXPECT_EQ(phi_delta_univariate(r2, x2), 0.5);
}

TEST(PhiDelta, ConstantResiduals) {
    std::vector<double> r(20, 3.5);
    EXPECT_EQ(phi_delta_univariate(r, linspace(20)), 0.0);
}

TEST(PhiDelta, TooShort) {
    std::vector<double> r{1, 2};
    EXPECT_THROW(phi_delta_univariate(r, r), Error);
}

TEST(PhiDelta, IndependentNoiseEstimatesVariance) {
    std::mt19937_64 g(1);
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<double> r(10000);
    for (auto& v : r) {
        v = z(g);
    }
    double p = phi_delta_univariate(r, linspace(10000));
    EXPECT_GE(p, 0.95);
    EXPECT_LE(p, 1.05);
}

TEST(Knn, HandComputedLine) {
    std::vector<double> x{0, 1, 2, 10};
    NeighbourTable nn = knn_indices({x}, 1);
    ASSERT_EQ(nn.size(), 4u);
    EXPECT_EQ(nn[0], std::vector<std::size_t>{1});
    EXPECT_EQ(nn[1], std::vector<std::size_t>{0});
    EXPECT_EQ(nn[2], std::vector<std::size_t>{1});
    EXPECT_EQ(nn[3], std::vector<std::size_t>{2});
}

TEST(Knn, AllOthersWhenMIsNMinusOne) {
    std::mt19937_64 g(2);
    std::uniform_real_distribution<double> u;
    std::vector<double> a(12), b(12);
    for (int i = 0; i < 12; ++i) {
        a[i] = u(g);
        b[i] = u(g);
    }
    NeighbourTable nn = knn_indices({a, b}, 11);
    for (std::size_t i = 0; i < 12; ++i) {
        std::vector<std::size_t> row = nn[i];
        std::sort(row.begin(), row.end());
        std::vector<std::size_t> expect;
        for (std::size_t j = 0; j < 12; ++j) {
            if (j != i) {
                expect.push_back(j);
            }
        }
        EXPECT_EQ(row, expect);
    }
}

TEST(Knn, MatchesExhaustiveScan) {
    std::mt19937_64 g(3);
    std::uniform_real_distribution<double> u(-1, 3);
    std::vector<double> a(200), b(200);
    for (int i = 0; i < 200; ++i) {
        a[i] = u(g);
        b[i] = 0.25 * u(g);
    }
    EXPECT_EQ(knn_indices({a, b}, 3), oracle::knn({a, b}, 3));
    // a lattice has many exact ties
    std::vector<double> p, q;
    for (int i = 0; i < 10; ++i) {
        for (int j = 0; j < 10; ++j) {
            p.push_back(i);
            q.push_back(j);
        }
    }
    EXPECT_EQ(knn_indices({p, q}, 4), oracle::knn({p, q}, 4));
}

TEST(Knn, Errors) {
    std::vector<double> a{1, 2, 3, 4};
    std::vector<double> flat{1, 1, 1, 1};
    EXPECT_THROW(knn_indices({a, flat}, 1), Error);
    EXPECT_THROW(knn_indices({a}, 4), Error);
    EXPECT_THROW(knn_indices({a}, 0), Error);
}

TEST(PhiDeltaMultivariate, HandComputedPair) {
    std::vector<double> r{1, 3};
    NeighbourTable nn{{1}, {0}};
    EXPECT_EQ(phi_delta_multivariate(r, nn), 2.0);
    std::vector<double> c{2, 2};
    EXPECT_EQ(phi_delta_multivariate(c, nn), 0.0);
    NeighbourTable bad{{1}, {5}};
    EXPECT_THROW(phi_delta_multivariate(r, bad), Error);
}

TEST(PhiDeltaMultivariate, IndependentNoiseEstimatesVariance) {
    std::mt19937_64 g(4);
    std::uniform_real_distribution<double> u;
    std::normal_distribution<double> z(0.0, std::sqrt(2.0));
    const int n = 10000;
    std::vector<double> a(n), b(n), r(n);
    for (int i = 0; i < n; ++i) {
        a[i] = u(g);
        b[i] = u(g);
        r[i] = z(g);
    }
    double p = phi_delta_multivariate(r, knn_indices({a, b}, 3));
    EXPECT_NEAR(p, 2.0, 0.1);
}

TEST(Kappa, StatisticIsRatio) {
    std::mt19937_64 g(5);
    std::normal_distribution<double> z;
    std::vector<double> r(100);
    for (auto& v : r) {
        v = z(g);
    }
    auto x = linspace(100);
    KappaResult k = kappa_test(r, {x}, 0.8, {199, 3, 9});
    EXPECT_EQ(k.kappa, k.phi_delta / 0.8);
    EXPECT_EQ(k.phi_delta, phi_delta_univariate(r, x));
    EXPECT_EQ(k.n_perm, 199);
    EXPECT_EQ(k.M, 0u);
    EXPECT_EQ(k.seed, 9u);
    EXPECT_GT(k.p_value, 0.0);
    EXPECT_LE(k.p_value, 1.0);
}

TEST(Kappa, SmallestAttainablePValue) {
    // a smooth residual trend beats every shuffle
    std::vector<double> r(60);
    for (int i = 0; i < 60; ++i) {
        r[i] = i;
    }
    KappaResult k = kappa_test(r, {linspace(60)}, 1.0, {99, 3, 1});
    EXPECT_EQ(k.p_value, 0.01);
}

TEST(Kappa, LeftoverSineIsDetected) {
    std::mt19937_64 g(6);
    std::normal_distribution<double> z(0.0, 0.01);
    auto x = linspace(200);
    std::vector<double> r(200);
    for (int i = 0; i < 200; ++i) {
        r[i] = testfn::f3(x[i]) + z(g);
    }
    double phi = std::inner_product(r.begin(), r.end(), r.begin(), 0.0) / 200;
    KappaResult k = kappa_test(r, {x}, phi, {199, 3, 1});
    EXPECT_LT(k.kappa, 0.1);
    EXPECT_EQ(k.p_value, 1.0 / 200);
}

TEST(Kappa, MultivariateUsesNeighbours) {
    std::mt19937_64 g(7);
    std::uniform_real_distribution<double> u;
    std::vector<double> a(150), b(150), r(150);
    for (int i = 0; i < 150; ++i) {
        a[i] = u(g);
        b[i] = u(g);
        r[i] = std::sin(6 * a[i]) * std::cos(5 * b[i]);
    }
    KappaResult k = kappa_test(r, {a, b}, 0.3, {199, 3, 1});
    EXPECT_EQ(k.M, 3u);
    EXPECT_EQ(k.phi_delta, phi_delta_multivariate(r, knn_indices({a, b}, 3)));
    EXPECT_EQ(k.p_value, 1.0 / 200);
}

TEST(Kappa, DeterministicAndScaleInvariant) {
    std::mt19937_64 g(8);
    std::normal_distribution<double> z;
    std::vector<double> r(120);
    for (auto& v : r) {
        v = z(g);
    }
    auto x = linspace(120);
    KappaResult a = kappa_test(r, {x}, 1.1, {199, 3, 42});
    KappaResult b = kappa_test(r, {x}, 1.1, {199, 3, 42});
    EXPECT_EQ(a.p_value, b.p_value);
    EXPECT_EQ(a.kappa, b.kappa);

    std::vector<double> scaled = r;
    for (auto& v : scaled) {
        v *= 4.0;
    }
    KappaResult c = kappa_test(scaled, {x}, 1.1 * 16.0, {199, 3, 42});
    EXPECT_EQ(c.kappa, a.kappa);
    EXPECT_EQ(c.p_value, a.p_value);
}

TEST(Kappa, Preconditions) {
    std::vector<double> r(20, 1.0);
    auto x = linspace(20);
    EXPECT_THROW(kappa_test(r, {x}, 1.0, {98, 3, 1}), Error);
    EXPECT_THROW(kappa_test(r, {x}, 0.0, {199, 3, 1}), Error);
}

TEST(Kappa, FittedModelFlagsSmallBasis) {
    Scenario s = Scenario::make(ScenarioId::uni_f3, 100, 1, 3);
    SimData d = gen_data(s, 0);
    FittedModel small = fit(scenario_model(s.id, {10}), d.table);
    FittedModel large = fit(scenario_model(s.id, {40}), d.table);
    EXPECT_LT(kappa_test(small, 0).p_value, 0.05);
    EXPECT_LT(kappa_test(small, 0).kappa, kappa_test(large, 0).kappa);
    EXPECT_THROW(kappa_test(small, 1), Error);
}

TEST(Resmooth, ZeroResidualsAreNotFlagged) {
    auto x = linspace(100);
    std::vector<double> r(100, 0.0);
    for (auto kind : {Criterion::gcv, Criterion::reml}) {
        ResmoothResult rr = resmooth_check(model_with_residuals(x, r, 10, kind), 0);
        EXPECT_EQ(rr.k_star, 20);
        EXPECT_EQ(rr.edf_min, 1.0);
        EXPECT_NEAR(rr.edf_star, rr.edf_min, 1e-3);
        EXPECT_FALSE(rr.flagged);
    }
}

TEST(Resmooth, LeftoverSineIsFlagged) {
    auto x = linspace(100);
    std::vector<double> r(100);
    for (int i = 0; i < 100; ++i) {
        r[i] = testfn::f3(x[i]);
    }
    ResmoothResult rr = resmooth_check(model_with_residuals(x, r, 10), 0);
    EXPECT_GT(rr.edf_star, 10.0);
    EXPECT_TRUE(rr.flagged);
}

TEST(Resmooth, NoiseIsRarelyFlagged) {
    auto x = linspace(100);
    int flagged = 0;
    for (int rep = 0; rep < 200; ++rep) {
        std::mt19937_64 g(100 + rep);
        std::normal_distribution<double> z(0.0, 0.2);
        std::vector<double> r(100);
        for (auto& v : r) {
            v = z(g);
        }
        flagged += resmooth_check(model_with_residuals(x, r, 10), 0).flagged;
    }
    EXPECT_LE(flagged, 20);
}

TEST(Resmooth, TensorTerm) {
    Scenario s = Scenario::make(ScenarioId::bivariate, 400, 1, 5);
    SimData d = gen_data(s, 0);
    FittedModel m = fit(scenario_model(s.id, {15}), d.table);
    ResmoothResult rr = resmooth_check(m, 0);
    EXPECT_EQ(rr.k_star, 30);
    EXPECT_EQ(rr.edf_min, 3.0);
    EXPECT_EQ(rr.criterion_before, m.criterion_value);
    EXPECT_FALSE(rr.criterion_after.has_value());
}
