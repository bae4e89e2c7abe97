#include "kcheck/simulation.hpp"

#include <gtest/gtest.h>

#include <numbers>
#include <random>

using namespace kcheck;

TEST(TestFunctions, KnownValues) {
    EXPECT_NEAR(testfn::f3(0.25), 0.0, 1e-14);
    EXPECT_EQ(testfn::f1(0.5), 0.5);
    EXPECT_EQ(testfn::f2(0.5), 2.5);
    EXPECT_NEAR(testfn::single_cycle(0.25), 1.0, 1e-15);
    EXPECT_EQ(testfn::bivariate(1.0, 0.5), 0.5 + 1.0);
    EXPECT_EQ(test_function(ScenarioId::uni_f1, 0.5), 0.5);
    EXPECT_EQ(test_function(ScenarioId::additive, 0.5, 0.0), 0.5);
}

TEST(TestFunctions, Domain) {
    EXPECT_THROW(test_function(ScenarioId::uni_f3, 1.1), Error);
    EXPECT_THROW(test_function(ScenarioId::bivariate, -1.5, 0.5), Error);
    EXPECT_THROW(test_function(ScenarioId::additive, 0.5, 2.0), Error);
    EXPECT_THROW(test_function(ScenarioId::bivariate, 0.5), Error);
}

TEST(Scenarios, NamesRoundTrip) {
    for (auto id : {ScenarioId::uni_f1, ScenarioId::uni_f2, ScenarioId::uni_f3, ScenarioId::bivariate,
                    ScenarioId::additive}) {
        EXPECT_EQ(parse_scenario(to_string(id)), id);
    }
    EXPECT_FALSE(parse_scenario("uni-f4").has_value());
}

TEST(Scenarios, Defaults) {
    Scenario s = Scenario::make(ScenarioId::bivariate, 400);
    EXPECT_EQ(s.sigma, 0.2);
    EXPECT_EQ(s.policy.grid, (std::vector<int>{15, 30, 60, 120}));
    EXPECT_EQ(s.policy.initial_k, 15);
    Scenario u = Scenario::make(ScenarioId::uni_f2, 100);
    EXPECT_EQ(u.policy.grid, (std::vector<int>{10, 20, 40, 80}));
    EXPECT_EQ(u.policy.initial_k, 10);
    EXPECT_EQ(u.methods.size(), 4u);
    EXPECT_THROW(Scenario::make(ScenarioId::bivariate, 401).validate(), Error);
}

TEST(GenData, NoiseFreeResponseIsTheTruth) {
    for (auto id : {ScenarioId::uni_f2, ScenarioId::bivariate, ScenarioId::additive}) {
        Scenario s = Scenario::make(id, 100, 1, 3);
        s.sigma = 0.0;
        SimData d = gen_data(s, 0);
        auto y = d.table.column("y");
        for (std::size_t i = 0; i < y.size(); ++i) {
            EXPECT_EQ(y[i], d.truth[i]);
        }
    }
}

TEST(GenData, Deterministic) {
    Scenario s = Scenario::make(ScenarioId::additive, 200, 5, 11);
    EXPECT_EQ(gen_data(s, 3).table, gen_data(s, 3).table);
    EXPECT_FALSE(gen_data(s, 3).table == gen_data(s, 4).table);
    Scenario other = Scenario::make(ScenarioId::additive, 200, 5, 12);
    EXPECT_FALSE(gen_data(s, 3).table == gen_data(other, 3).table);
}

TEST(GenData, Layouts) {
    SimData u = gen_data(Scenario::make(ScenarioId::uni_f1, 101), 0);
    EXPECT_EQ(u.table.column("x")[0], 0.0);
    EXPECT_NEAR(u.table.column("x")[50], 0.5, 1e-15);
    EXPECT_EQ(u.table.column("x")[100], 1.0);

    SimData b = gen_data(Scenario::make(ScenarioId::bivariate, 400), 0);
    auto x1 = b.table.column("x1");
    auto x2 = b.table.column("x2");
    EXPECT_EQ(*std::min_element(x1.begin(), x1.end()), -1.0);
    EXPECT_EQ(*std::max_element(x1.begin(), x1.end()), 3.0);
    EXPECT_EQ(*std::min_element(x2.begin(), x2.end()), 0.0);
    EXPECT_EQ(*std::max_element(x2.begin(), x2.end()), 1.0);
    std::vector<double> distinct(x1.begin(), x1.end());
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    EXPECT_EQ(distinct.size(), 20u);

    SimData a = gen_data(Scenario::make(ScenarioId::additive, 200), 0);
    for (const char* c : {"x1", "x2"}) {
        for (double v : a.table.column(c)) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

TEST(GenData, NoiseVariance) {
    Scenario s = Scenario::make(ScenarioId::uni_f3, 1000, 100, 21);
    double ss = 0.0;
    double sum = 0.0;
    std::size_t count = 0;
    for (int rep = 0; rep < 100; ++rep) {
        SimData d = gen_data(s, rep);
        auto y = d.table.column("y");
        for (std::size_t i = 0; i < y.size(); ++i) {
            double e = y[i] - d.truth[i];
            ss += e * e;
            sum += e;
            ++count;
        }
    }
    const double mean = sum / count;
    const double var = (ss - count * mean * mean) / (count - 1);
    EXPECT_NEAR(var, 0.04, 0.02 * 0.04);
}

TEST(Mse, Examples) {
    std::vector<double> truth{0.1, -0.4, 2.0, 0.7};
    EXPECT_EQ(mse(truth, truth, false), 0.0);
    std::vector<double> shifted = truth;
    for (auto& v : shifted) {
        v += 0.1;
    }
    EXPECT_NEAR(mse(shifted, truth, true), 0.0, 1e-30);
    EXPECT_NEAR(mse(shifted, truth, false), 0.01, 1e-15);

    std::mt19937_64 g(5);
    std::normal_distribution<double> z;
    std::vector<double> a(17), b(17);
    for (int i = 0; i < 17; ++i) {
        a[i] = z(g);
        b[i] = z(g);
    }
    double direct = 0.0;
    for (int i = 0; i < 17; ++i) {
        direct += (a[i] - b[i]) * (a[i] - b[i]);
    }
    EXPECT_NEAR(mse(a, b, false), direct / 17, 1e-14);
    EXPECT_THROW(mse(a, std::vector<double>(3), false), Error);
}

TEST(RunExperiment, OneRowPerReplicateAndMethod) {
    Scenario s = Scenario::make(ScenarioId::uni_f3, 100, 50, 7);
    ScenarioResult r = run_experiment(s);
    ASSERT_EQ(r.rows.size(), 200u);
    EXPECT_EQ(r.failures, 0u);
    for (std::size_t i = 0; i < r.rows.size(); ++i) {
        const auto& row = r.rows[i];
        EXPECT_EQ(row.replicate, static_cast<int>(i / 4));
        EXPECT_EQ(row.method, s.methods[i % 4]);
        ASSERT_TRUE(row.mse.has_value());
        EXPECT_GE(*row.mse, 0.0);
        EXPECT_EQ(row.k_selected.size(), 1u);
        if (row.method == KMethod::gcv_grid || row.method == KMethod::reml_grid) {
            EXPECT_EQ(row.refits, 4);
        }
        if (row.method == KMethod::kappa) {
            EXPECT_TRUE(row.p_value[0].has_value());
        }
        if (row.method == KMethod::resmooth) {
            EXPECT_TRUE(row.edf_star[0].has_value());
        }
    }
}

TEST(RunExperiment, KappaNeedsFewerFitsThanTheGrid) {
    Scenario s = Scenario::make(ScenarioId::uni_f1, 100, 30, 8);
    s.methods = {KMethod::kappa, KMethod::gcv_grid};
    ScenarioResult r = run_experiment(s);
    for (std::size_t i = 0; i < r.rows.size(); i += 2) {
        EXPECT_LT(r.rows[i].refits, r.rows[i + 1].refits) << "replicate " << r.rows[i].replicate;
    }
}

TEST(RunExperiment, ThreadCountDoesNotChangeResults) {
    Scenario s = Scenario::make(ScenarioId::additive, 200, 3, 9);
    s.methods = {KMethod::kappa, KMethod::resmooth};
    ScenarioResult a = run_experiment(s, 1);
    ScenarioResult b = run_experiment(s, 3);
    ASSERT_EQ(a.rows.size(), b.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        EXPECT_EQ(a.rows[i].k_selected, b.rows[i].k_selected);
        EXPECT_EQ(a.rows[i].mse, b.rows[i].mse);
        EXPECT_EQ(a.rows[i].p_value, b.rows[i].p_value);
        EXPECT_EQ(a.rows[i].seed, b.rows[i].seed);
    }
}
