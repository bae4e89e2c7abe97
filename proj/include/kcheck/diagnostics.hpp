#pragma once

#include "basis.hpp"
#include "error.hpp"
#include "fit.hpp"
#include "random.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <utility>
#include <vector>

/**
 * @file diagnostics.hpp
 *
 * @brief Basis-dimension checks on a fitted model: the κ statistic from
 * differenced neighbouring residuals with a permutation p-value, and the
 * re-smoothing of residuals at doubled basis dimension.
 */

namespace kcheck {

/// Row i lists the M nearest neighbours of observation i, nearest first.
using NeighbourTable = std::vector<std::vector<std::size_t>>;

/// Index order of `x` ascending; equal values keep their original order.
inline std::vector<std::size_t> sort_order(std::span<const double> x) {
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    return order;
}

namespace detail {

inline double phi_delta_ordered(std::span<const double> r, std::span<const std::size_t> order) {
    double sum = 0.0;
    for (std::size_t i = 1; i < order.size(); ++i) {
        const double d = r[order[i]] - r[order[i - 1]];
        sum += d * d;
    }
    return sum / (2.0 * static_cast<double>(order.size()) - 2.0);
}

} // namespace detail

/// Σ(r̃_{i+1} − r̃_i)² / (2n − 2) with residuals ordered by the covariate.
inline double phi_delta_univariate(std::span<const double> r, std::span<const double> x) {
    if (r.size() != x.size()) {
        throw Error("residual and covariate lengths differ");
    }
    if (r.size() < 3) {
        throw Error("at least 3 residuals are required");
    }
    auto order = sort_order(x);
    return detail::phi_delta_ordered(r, order);
}

/**
 * Exhaustive M-nearest-neighbour search on covariates standardized to unit
 * sample standard deviation. Self is excluded and equal distances go to the
 * lower index.
 */
inline NeighbourTable knn_indices(const Columns& cov, std::size_t M) {
    if (cov.empty()) {
        throw Error("at least one covariate is required");
    }
    const std::size_t n = cov[0].size();
    if (M < 1 || M >= n) {
        throw Error("neighbour count must satisfy 1 <= M < n");
    }
    const std::size_t d = cov.size();
    std::vector<double> z(n * d);
    for (std::size_t c = 0; c < d; ++c) {
        if (cov[c].size() != n) {
            throw Error("covariate columns have different lengths");
        }
        const double mean = std::accumulate(cov[c].begin(), cov[c].end(), 0.0) / n;
        double ss = 0.0;
        for (double v : cov[c]) {
            ss += (v - mean) * (v - mean);
        }
        const double sd = std::sqrt(ss / (n - 1));
        if (!(sd > 0.0)) {
            throw Error("zero-variance covariate cannot be standardized");
        }
        for (std::size_t i = 0; i < n; ++i) {
            z[i * d + c] = cov[c][i] / sd;
        }
    }

    NeighbourTable out(n);
    std::vector<std::pair<double, std::size_t>> cand(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t at = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) {
                continue;
            }
            double dist = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = z[i * d + c] - z[j * d + c];
                dist += diff * diff;
            }
            cand[at++] = {dist, j};
        }
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(M), cand.end());
        out[i].reserve(M);
        for (std::size_t m = 0; m < M; ++m) {
            out[i].push_back(cand[m].second);
        }
    }
    return out;
}

/// ΣΣ(r_i − r_{m_ij})² / (2Mn).
inline double phi_delta_multivariate(std::span<const double> r, const NeighbourTable& nn) {
    if (nn.size() != r.size() || nn.empty()) {
        throw Error("neighbour table does not match residuals");
    }
    const std::size_t M = nn[0].size();
    double sum = 0.0;
    for (std::size_t i = 0; i < nn.size(); ++i) {
        if (nn[i].size() != M) {
            throw Error("neighbour table rows have different lengths");
        }
        for (std::size_t j : nn[i]) {
            if (j >= r.size()) {
                throw Error("neighbour index out of range");
            }
            const double d = r[i] - r[j];
            sum += d * d;
        }
    }
    return sum / (2.0 * static_cast<double>(M) * static_cast<double>(r.size()));
}

struct KappaOptions {
    int permutations = 199;
    std::size_t neighbours = 3;
    std::uint64_t seed = 1;
};

struct KappaResult {
    double kappa = 0.0;
    double phi_delta = 0.0;
    double phi_hat = 0.0;
    double p_value = 1.0;
    int n_perm = 0;
    std::size_t M = 0;   // 0 when residuals are ordered along a single covariate
    std::uint64_t seed = 0;
};

/**
 * @brief κ = φ_Δ/φ̂ and its permutation p-value.
 *
 * The null sample re-shuffles the residuals B times; permutation b uses its own
 * engine seeded from (seed, b) so the result does not depend on evaluation
 * order. φ̂ stays fixed, so comparing κ values reduces to comparing φ_Δ.
 * p = (1 + #{κ* ≤ κ}) / (B + 1).
 */
inline KappaResult kappa_test(std::span<const double> residuals, const Columns& cov, double phi_hat,
                              const KappaOptions& opt = {}) {
    if (opt.permutations < 99) {
        throw Error("at least 99 permutations are required");
    }
    if (!(phi_hat > 0.0)) {
        throw Error("scale estimate must be positive");
    }
    if (cov.empty()) {
        throw Error("at least one covariate is required");
    }
    for (const auto& c : cov) {
        if (c.size() != residuals.size()) {
            throw Error("residual and covariate lengths differ");
        }
    }

    KappaResult out;
    out.phi_hat = phi_hat;
    out.n_perm = opt.permutations;
    out.seed = opt.seed;

    std::vector<std::size_t> order;
    NeighbourTable nn;
    if (cov.size() == 1) {
        if (residuals.size() < 3) {
            throw Error("at least 3 residuals are required");
        }
        order = sort_order(cov[0]);
    } else {
        nn = knn_indices(cov, opt.neighbours);
        out.M = opt.neighbours;
    }
    auto phi_delta = [&](std::span<const double> r) {
        return cov.size() == 1 ? detail::phi_delta_ordered(r, order) : phi_delta_multivariate(r, nn);
    };

    out.phi_delta = phi_delta(residuals);
    out.kappa = out.phi_delta / phi_hat;

    std::vector<double> shuffled(residuals.size());
    int at_or_below = 0;
    for (int b = 0; b < opt.permutations; ++b) {
        std::copy(residuals.begin(), residuals.end(), shuffled.begin());
        Engine engine = make_engine(opt.seed, {static_cast<std::uint64_t>(b)});
        std::shuffle(shuffled.begin(), shuffled.end(), engine);
        if (phi_delta(shuffled) <= out.phi_delta) {
            ++at_or_below;
        }
    }
    out.p_value = (1.0 + at_or_below) / (opt.permutations + 1.0);
    return out;
}

/// κ test for one term of a fitted model, using the model's residuals and φ̂.
inline KappaResult kappa_test(const FittedModel& model, std::size_t term, const KappaOptions& opt = {}) {
    if (term >= model.terms()) {
        throw Error("term index out of range");
    }
    std::span<const double> r(model.residuals.data(), static_cast<std::size_t>(model.residuals.size()));
    return kappa_test(r, model.term_covariates(term), model.phi_hat, opt);
}

struct ResmoothResult {
    int k_star = 0;
    double edf_star = 0.0;
    double edf_min = 0.0;
    double threshold = 0.5;
    bool flagged = false;
    double criterion_before = 0.0;
    std::optional<double> criterion_after;
    std::optional<double> criterion_drop_fraction;
};

/**
 * Smooths the residuals on the covariates of `term` with twice its basis
 * dimension, selecting λ by the model's criterion. The term is flagged when the
 * EDF of that smooth exceeds its penalty null-space dimension by more than
 * `threshold`.
 */
inline ResmoothResult resmooth_check(const FittedModel& model, std::size_t term, double threshold = 0.5) {
    if (term >= model.terms()) {
        throw Error("term index out of range");
    }
    const BasisSpec& original = model.spec.terms[term];
    const std::string response = "__residual";

    Table data;
    data.add(response, std::vector<double>(model.residuals.data(), model.residuals.data() + model.residuals.size()));
    for (const auto& c : original.covariates) {
        auto col = model.data.column(c);
        data.add(c, std::vector<double>(col.begin(), col.end()));
    }
    ModelSpec spec;
    spec.response = response;
    spec.criterion = model.spec.criterion;
    spec.terms.push_back(original.resized(2 * original.realized_k()));

    FittedModel star = fit(spec, data);
    ResmoothResult out;
    out.k_star = spec.terms[0].realized_k();
    out.edf_star = star.edf_per_term[0];
    out.edf_min = star.blocks[0].null_dim;
    out.threshold = threshold;
    out.flagged = out.edf_star > out.edf_min + threshold;
    out.criterion_before = model.criterion_value;
    return out;
}

} // namespace kcheck
