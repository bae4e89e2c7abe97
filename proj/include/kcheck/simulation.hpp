#pragma once

#include "error.hpp"
#include "fit.hpp"
#include "kselect.hpp"
#include "random.hpp"
#include "table.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

/**
 * @file simulation.hpp
 *
 * @brief Simulated Gaussian test problems and the replicate loop that runs
 * each k-selection method on them.
 */

namespace kcheck {

enum class ScenarioId { uni_f1, uni_f2, uni_f3, bivariate, additive };

inline const char* to_string(ScenarioId id) {
    switch (id) {
    case ScenarioId::uni_f1: return "uni-f1";
    case ScenarioId::uni_f2: return "uni-f2";
    case ScenarioId::uni_f3: return "uni-f3";
    case ScenarioId::bivariate: return "bivariate";
    case ScenarioId::additive: return "additive";
    }
    return "?";
}

inline std::optional<ScenarioId> parse_scenario(const std::string& s) {
    for (auto id : {ScenarioId::uni_f1, ScenarioId::uni_f2, ScenarioId::uni_f3, ScenarioId::bivariate,
                    ScenarioId::additive}) {
        if (s == to_string(id)) {
            return id;
        }
    }
    return std::nullopt;
}

inline bool is_univariate(ScenarioId id) {
    return id == ScenarioId::uni_f1 || id == ScenarioId::uni_f2 || id == ScenarioId::uni_f3;
}

/// How k is chosen by each method.
struct KPolicy {
    std::vector<int> grid;          // per-term trial values for the grid searches
    int initial_k = 0;              // start of the doubling loops
    Criterion criterion = Criterion::gcv;   // λ criterion inside the doubling loops
    DoublingOptions doubling;
};

struct Scenario {
    ScenarioId id = ScenarioId::uni_f1;
    int n = 100;
    double sigma = 0.2;
    int replicates = 50;
    std::vector<KMethod> methods{KMethod::kappa, KMethod::resmooth, KMethod::gcv_grid, KMethod::reml_grid};
    KPolicy policy;
    std::uint64_t base_seed = 1;

    /// Scenario with the standard k grid: {10,20,40,80}, or {15,30,60,120} for the tensor smooth.
    static Scenario make(ScenarioId id, int n, int replicates = 50, std::uint64_t seed = 1) {
        Scenario s;
        s.id = id;
        s.n = n;
        s.replicates = replicates;
        s.base_seed = seed;
        s.policy.grid = id == ScenarioId::bivariate ? std::vector<int>{15, 30, 60, 120} : std::vector<int>{10, 20, 40, 80};
        s.policy.initial_k = s.policy.grid.front();
        return s;
    }

    void validate() const {
        if (n < 10) {
            throw Error("scenario needs n >= 10");
        }
        if (id == ScenarioId::bivariate) {
            const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
            if (side * side != n) {
                throw Error("bivariate scenario needs a square sample size");
            }
        }
        if (!(sigma >= 0.0)) {
            throw Error("noise level must be non-negative");
        }
        if (replicates < 1) {
            throw Error("at least one replicate is required");
        }
        if (policy.grid.empty() || policy.initial_k < 1) {
            throw Error("k policy needs a grid and an initial k");
        }
    }
};

namespace testfn {

inline double f1(double x) { return 1.0 / (1.0 + std::exp(-20.0 * (x - 0.5))); }
inline double f2(double x) { return x + 2.0 * std::exp(-128.0 * (x - 0.5) * (x - 0.5)); }
inline double f3(double x) { return std::sin(12.0 * std::numbers::pi * x); }
inline double bivariate(double x1, double x2) {
    return 0.5 * x1 + std::sin(std::numbers::pi * x2) * std::exp(-(x1 - 1.0) * (x1 - 1.0));
}
inline double single_cycle(double x) { return std::sin(2.0 * std::numbers::pi * x); }

} // namespace testfn

/// True mean function of a univariate scenario on [0, 1].
inline double test_function(ScenarioId id, double x) {
    if (!(x >= 0.0 && x <= 1.0)) {
        throw Error("test function argument outside [0, 1]");
    }
    switch (id) {
    case ScenarioId::uni_f1: return testfn::f1(x);
    case ScenarioId::uni_f2: return testfn::f2(x);
    case ScenarioId::uni_f3: return testfn::f3(x);
    default: throw Error("scenario needs two covariates");
    }
}

/// True mean function of the bivariate ([−1,3]×[0,1]) or additive ([0,1]²) scenario.
inline double test_function(ScenarioId id, double x1, double x2) {
    if (id == ScenarioId::bivariate) {
        if (!(x1 >= -1.0 && x1 <= 3.0 && x2 >= 0.0 && x2 <= 1.0)) {
            throw Error("test function argument outside [-1, 3] x [0, 1]");
        }
        return testfn::bivariate(x1, x2);
    }
    if (id == ScenarioId::additive) {
        if (!(x1 >= 0.0 && x1 <= 1.0 && x2 >= 0.0 && x2 <= 1.0)) {
            throw Error("test function argument outside [0, 1]^2");
        }
        return testfn::f1(x1) + testfn::single_cycle(x2);
    }
    throw Error("scenario has a single covariate");
}

/// One simulated data set with its noise-free mean.
struct SimData {
    Table table;
    std::vector<double> truth;
    std::uint64_t seed = 0;
};

inline std::uint64_t replicate_seed(const Scenario& s, int replicate) {
    return derive_seed(s.base_seed, {static_cast<std::uint64_t>(s.id), static_cast<std::uint64_t>(s.n),
                                     static_cast<std::uint64_t>(replicate)});
}

/**
 * Covariates and response y = f + σz for one replicate. Univariate x is an
 * equally spaced grid on [0,1]; bivariate covariates form a √n×√n grid over
 * [−1,3]×[0,1]; additive covariates are i.i.d. U(0,1).
 */
inline SimData gen_data(const Scenario& s, int replicate) {
    s.validate();
    SimData out;
    out.seed = replicate_seed(s, replicate);
    Engine engine(out.seed);
    const auto n = static_cast<std::size_t>(s.n);
    std::vector<double> x1(n), x2(n);
    out.truth.resize(n);

    if (is_univariate(s.id)) {
        for (std::size_t i = 0; i < n; ++i) {
            x1[i] = static_cast<double>(i) / static_cast<double>(n - 1);
            out.truth[i] = test_function(s.id, x1[i]);
        }
    } else if (s.id == ScenarioId::bivariate) {
        const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(n))));
        for (std::size_t a = 0; a < side; ++a) {
            for (std::size_t b = 0; b < side; ++b) {
                const std::size_t i = a * side + b;
                x1[i] = -1.0 + 4.0 * static_cast<double>(a) / static_cast<double>(side - 1);
                x2[i] = static_cast<double>(b) / static_cast<double>(side - 1);
                out.truth[i] = test_function(s.id, x1[i], x2[i]);
            }
        }
    } else {
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        for (std::size_t i = 0; i < n; ++i) {
            x1[i] = unif(engine);
            x2[i] = unif(engine);
            out.truth[i] = test_function(s.id, x1[i], x2[i]);
        }
    }

    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = out.truth[i] + s.sigma * noise(engine);
    }
    if (is_univariate(s.id)) {
        out.table.add("x", std::move(x1));
    } else {
        out.table.add("x1", std::move(x1));
        out.table.add("x2", std::move(x2));
    }
    out.table.add("y", std::move(y));
    return out;
}

/// Model of a scenario with the given per-term k.
inline ModelSpec scenario_model(ScenarioId id, const std::vector<int>& k, Criterion criterion = Criterion::gcv) {
    ModelSpec spec;
    spec.criterion = criterion;
    if (is_univariate(id)) {
        spec.terms.push_back(BasisSpec::univariate("x", k.at(0)));
    } else if (id == ScenarioId::bivariate) {
        spec.terms.push_back(BasisSpec::tensor("x1", "x2", k.at(0)));
    } else {
        spec.terms.push_back(BasisSpec::univariate("x1", k.at(0)));
        spec.terms.push_back(BasisSpec::univariate("x2", k.at(1)));
    }
    return spec;
}

inline std::size_t scenario_terms(ScenarioId id) { return id == ScenarioId::additive ? 2 : 1; }

/**
 * Mean squared difference between fitted and true values. For the additive
 * scenario the difference is centered first, so a constant offset between the
 * summed predictors does not count.
 */
inline double mse(std::span<const double> fitted, std::span<const double> truth, bool center) {
    if (fitted.size() != truth.size() || fitted.empty()) {
        throw Error("fitted and true values must have equal, non-zero length");
    }
    const double n = static_cast<double>(fitted.size());
    double offset = 0.0;
    if (center) {
        for (std::size_t i = 0; i < fitted.size(); ++i) {
            offset += fitted[i] - truth[i];
        }
        offset /= n;
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < fitted.size(); ++i) {
        const double d = fitted[i] - truth[i] - offset;
        sum += d * d;
    }
    return sum / n;
}

inline double mse(const FittedModel& model, const Scenario& s, const SimData& data) {
    std::span<const double> fitted(model.mu.data(), static_cast<std::size_t>(model.mu.size()));
    return mse(fitted, data.truth, s.id == ScenarioId::additive);
}

/// One (replicate, method) outcome.
struct ScenarioRow {
    std::string scenario;
    int n = 0;
    int replicate = 0;
    KMethod method = KMethod::kappa;
    std::vector<int> k_selected;
    std::optional<double> mse;
    std::vector<std::optional<double>> p_value;
    std::vector<std::optional<double>> edf_star;
    int refits = 0;
    std::uint64_t seed = 0;
    double ms_elapsed = 0.0;
    std::optional<std::string> error;
};

struct ScenarioResult {
    std::vector<ScenarioRow> rows;
    std::size_t failures = 0;
};

/// Runs one k-selection method on one simulated data set.
inline KSearchTrace run_method(const Scenario& s, const SimData& data, KMethod method) {
    const std::size_t nterms = scenario_terms(s.id);
    if (method == KMethod::gcv_grid || method == KMethod::reml_grid) {
        const Criterion kind = method == KMethod::gcv_grid ? Criterion::gcv : Criterion::reml;
        ModelSpec spec = scenario_model(s.id, std::vector<int>(nterms, s.policy.grid.front()), kind);
        return grid_search(spec, data.table, std::vector<std::vector<int>>(nterms, s.policy.grid), kind);
    }
    ModelSpec spec = scenario_model(s.id, std::vector<int>(nterms, s.policy.initial_k), s.policy.criterion);
    DoublingOptions opt = s.policy.doubling;
    opt.seed = derive_seed(data.seed, {static_cast<std::uint64_t>(method)});
    return doubling_driver(spec, data.table, method, opt);
}

inline ScenarioRow run_replicate(const Scenario& s, int replicate, KMethod method) {
    ScenarioRow row;
    row.scenario = to_string(s.id);
    row.n = s.n;
    row.replicate = replicate;
    row.method = method;
    const auto start = std::chrono::steady_clock::now();
    try {
        SimData data = gen_data(s, replicate);
        row.seed = data.seed;
        KSearchTrace trace = run_method(s, data, method);
        row.k_selected = trace.final_k;
        row.mse = mse(trace.final_model, s, data);
        row.refits = trace.refit_count;
        for (std::size_t j = 0; j < trace.final_k.size(); ++j) {
            row.p_value.push_back(trace.last_p_value(j));
            row.edf_star.push_back(trace.last_edf_star(j));
        }
    } catch (const Error& e) {
        row.error = e.what();
        row.seed = replicate_seed(s, replicate);
    }
    row.ms_elapsed = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return row;
}

/**
 * Every (replicate, method) pair of the scenario. Rows come out in replicate
 * then method order regardless of `threads`. More than 5% failed rows abort.
 */
inline ScenarioResult run_experiment(const Scenario& s, unsigned threads = 1) {
    s.validate();
    const std::size_t nm = s.methods.size();
    const std::size_t total = static_cast<std::size_t>(s.replicates) * nm;
    ScenarioResult out;
    out.rows.resize(total);
    auto work = [&](std::size_t task) {
        out.rows[task] = run_replicate(s, static_cast<int>(task / nm), s.methods[task % nm]);
    };
    if (threads <= 1) {
        for (std::size_t t = 0; t < total; ++t) {
            work(t);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < threads; ++w) {
            pool.emplace_back([&] {
                for (std::size_t t = next++; t < total; t = next++) {
                    work(t);
                }
            });
        }
    }
    for (const auto& r : out.rows) {
        out.failures += r.error ? 1 : 0;
    }
    if (static_cast<double>(out.failures) > 0.05 * static_cast<double>(total)) {
        throw Error("more than 5% of replicate fits failed");
    }
    return out;
}

} // namespace kcheck
