#pragma once

#include "basis.hpp"
#include "diagnostics.hpp"
#include "error.hpp"
#include "fit.hpp"
#include "random.hpp"

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

/**
 * @file kselect.hpp
 *
 * @brief Basis-dimension selection: doubling loops driven by the κ test or by
 * residual re-smoothing, and exhaustive GCV/REML search over a grid of k.
 */

namespace kcheck {

enum class KMethod { kappa, resmooth, gcv_grid, reml_grid };

inline const char* to_string(KMethod m) {
    switch (m) {
    case KMethod::kappa: return "kappa";
    case KMethod::resmooth: return "resmooth";
    case KMethod::gcv_grid: return "gcv-grid";
    case KMethod::reml_grid: return "reml-grid";
    }
    return "?";
}

/// Why a term stopped changing k.
enum class StopRule { active, check_passed, criterion_stalled, max_doublings, infeasible, grid_argmin };

inline const char* to_string(StopRule r) {
    switch (r) {
    case StopRule::active: return "active";
    case StopRule::check_passed: return "check-passed";
    case StopRule::criterion_stalled: return "criterion-stalled";
    case StopRule::max_doublings: return "max-doublings";
    case StopRule::infeasible: return "infeasible";
    case StopRule::grid_argmin: return "grid-argmin";
    }
    return "?";
}

struct DoublingOptions {
    double alpha = 0.05;
    int max_doublings = 3;
    std::uint64_t seed = 1;
    int permutations = 199;
    std::size_t neighbours = 3;
    double resmooth_threshold = 0.5;
    double min_relative_drop = 0.02;
};

/// One fit (doubling round or grid point) and what was decided from it.
struct KStep {
    std::vector<int> k;
    std::optional<double> criterion;           // empty when the fit failed
    std::vector<std::optional<double>> p_value;
    std::vector<std::optional<double>> edf_star;
    std::vector<std::string> decision;
    std::optional<double> criterion_drop_fraction;   // relative change produced by the next refit
};

struct KSearchTrace {
    KMethod method = KMethod::kappa;
    std::vector<KStep> steps;
    std::vector<int> final_k;
    std::vector<StopRule> stop_rule;
    FittedModel final_model;
    int refit_count = 0;

    /// Last p-value / EDF computed for term j, if any.
    std::optional<double> last_p_value(std::size_t j) const {
        for (auto it = steps.rbegin(); it != steps.rend(); ++it) {
            if (j < it->p_value.size() && it->p_value[j]) {
                return it->p_value[j];
            }
        }
        return std::nullopt;
    }

    std::optional<double> last_edf_star(std::size_t j) const {
        for (auto it = steps.rbegin(); it != steps.rend(); ++it) {
            if (j < it->edf_star.size() && it->edf_star[j]) {
                return it->edf_star[j];
            }
        }
        return std::nullopt;
    }
};

/// True when the knots of `spec` can be placed on the covariates in `data`.
inline bool basis_feasible(const BasisSpec& spec, const Table& data) {
    try {
        spec.validate();
        if (spec.kind == BasisKind::univariate) {
            place_knots(data.column(spec.covariates[0]), spec.k, spec.degree);
        } else {
            auto [k1, k2] = spec.marginals();
            place_knots(data.column(spec.covariates[0]), k1, detail::marginal_degree(spec.degree, k1));
            place_knots(data.column(spec.covariates[1]), k2, detail::marginal_degree(spec.degree, k2));
        }
        return true;
    } catch (const Error&) {
        return false;
    }
}

namespace detail {

inline std::vector<int> realized_ks(const ModelSpec& spec) {
    std::vector<int> out;
    for (const auto& t : spec.terms) {
        out.push_back(t.realized_k());
    }
    return out;
}

} // namespace detail

/**
 * @brief Doubles the k of every term whose check fails, one full refit per round.
 *
 * A term stops when its check passes, when the refit fails to lower the
 * smoothing criterion by more than `min_relative_drop` of its previous value
 * (the doubling is then undone), when it has been doubled `max_doublings`
 * times, or when the doubled basis cannot be built on the data.
 */
inline KSearchTrace doubling_driver(const ModelSpec& spec, const Table& data, KMethod method,
                                    const DoublingOptions& opt = {}) {
    if (method != KMethod::kappa && method != KMethod::resmooth) {
        throw Error("doubling driver runs the kappa or resmooth check only");
    }
    if (!(opt.alpha > 0.0 && opt.alpha < 1.0)) {
        throw Error("alpha must lie in (0, 1)");
    }
    if (opt.max_doublings < 0) {
        throw Error("max_doublings must be non-negative");
    }
    const std::size_t nterms = spec.terms.size();
    KSearchTrace trace;
    trace.method = method;
    trace.stop_rule.assign(nterms, StopRule::active);

    ModelSpec current = spec;
    FittedModel model = fit(current, data);
    trace.refit_count = 1;
    std::vector<int> doublings(nterms, 0);

    for (std::uint64_t round = 0;; ++round) {
        KStep step;
        step.k = detail::realized_ks(current);
        step.criterion = model.criterion_value;
        step.p_value.assign(nterms, std::nullopt);
        step.edf_star.assign(nterms, std::nullopt);
        step.decision.assign(nterms, "");

        std::vector<std::size_t> grow;
        for (std::size_t j = 0; j < nterms; ++j) {
            if (trace.stop_rule[j] != StopRule::active) {
                step.decision[j] = std::string("stopped:") + to_string(trace.stop_rule[j]);
                continue;
            }
            bool flagged = false;
            if (method == KMethod::kappa) {
                KappaOptions ko{opt.permutations, opt.neighbours, derive_seed(opt.seed, {round, j})};
                KappaResult kr = kappa_test(model, j, ko);
                step.p_value[j] = kr.p_value;
                flagged = kr.p_value < opt.alpha;
            } else {
                const BasisSpec doubled = current.terms[j].resized(2 * current.terms[j].realized_k());
                if (!basis_feasible(doubled, data)) {
                    trace.stop_rule[j] = StopRule::infeasible;
                    step.decision[j] = "check-basis-infeasible";
                    continue;
                }
                ResmoothResult rr = resmooth_check(model, j, opt.resmooth_threshold);
                step.edf_star[j] = rr.edf_star;
                flagged = rr.flagged;
            }

            if (!flagged) {
                trace.stop_rule[j] = StopRule::check_passed;
                step.decision[j] = "pass";
            } else if (doublings[j] >= opt.max_doublings) {
                trace.stop_rule[j] = StopRule::max_doublings;
                step.decision[j] = "flagged:max-doublings";
            } else if (!basis_feasible(current.terms[j].resized(2 * current.terms[j].realized_k()), data)) {
                trace.stop_rule[j] = StopRule::infeasible;
                step.decision[j] = "flagged:infeasible";
            } else {
                grow.push_back(j);
                step.decision[j] = "double";
            }
        }

        if (grow.empty()) {
            trace.steps.push_back(std::move(step));
            break;
        }

        ModelSpec candidate = current;
        for (std::size_t j : grow) {
            candidate.terms[j] = current.terms[j].resized(2 * current.terms[j].realized_k());
        }
        std::optional<FittedModel> refit;
        try {
            refit = fit(candidate, data);
        } catch (const Error&) {
            refit.reset();
        }
        ++trace.refit_count;
        if (!refit) {
            for (std::size_t j : grow) {
                trace.stop_rule[j] = StopRule::infeasible;
            }
            trace.steps.push_back(std::move(step));
            break;
        }

        const double before = model.criterion_value;
        const double drop = (before - refit->criterion_value) / std::abs(before);
        step.criterion_drop_fraction = drop;
        trace.steps.push_back(std::move(step));
        if (!(drop > opt.min_relative_drop)) {
            for (std::size_t j : grow) {
                trace.stop_rule[j] = StopRule::criterion_stalled;
            }
            KStep rejected;
            rejected.k = detail::realized_ks(candidate);
            rejected.criterion = refit->criterion_value;
            rejected.p_value.assign(nterms, std::nullopt);
            rejected.edf_star.assign(nterms, std::nullopt);
            rejected.decision.assign(nterms, "");
            for (std::size_t j : grow) {
                rejected.decision[j] = "revert:criterion-stalled";
            }
            trace.steps.push_back(std::move(rejected));
            bool any_active = false;
            for (auto r : trace.stop_rule) {
                any_active = any_active || r == StopRule::active;
            }
            if (!any_active) {
                break;
            }
            continue;
        }
        for (std::size_t j : grow) {
            ++doublings[j];
        }
        current = std::move(candidate);
        model = std::move(*refit);
    }

    trace.final_k = detail::realized_ks(current);
    trace.final_model = std::move(model);
    return trace;
}

/**
 * Fits the model at every combination of the per-term grids and keeps the
 * combination with the lowest criterion, preferring the smaller total k on
 * ties. Failed fits are recorded and skipped.
 */
inline KSearchTrace grid_search(const ModelSpec& spec, const Table& data, const std::vector<std::vector<int>>& grids,
                                Criterion kind) {
    const std::size_t nterms = spec.terms.size();
    if (grids.size() != nterms) {
        throw Error("one k grid per term is required");
    }
    for (const auto& g : grids) {
        if (g.empty()) {
            throw Error("k grids must be non-empty");
        }
    }
    KSearchTrace trace;
    trace.method = kind == Criterion::gcv ? KMethod::gcv_grid : KMethod::reml_grid;
    trace.stop_rule.assign(nterms, StopRule::grid_argmin);

    std::optional<double> best;
    int best_total = 0;
    std::vector<std::size_t> idx(nterms, 0);
    for (;;) {
        ModelSpec candidate = spec;
        candidate.criterion = kind;
        for (std::size_t j = 0; j < nterms; ++j) {
            candidate.terms[j] = spec.terms[j].resized(grids[j][idx[j]]);
        }
        KStep step;
        step.k = detail::realized_ks(candidate);
        step.p_value.assign(nterms, std::nullopt);
        step.edf_star.assign(nterms, std::nullopt);
        ++trace.refit_count;
        try {
            FittedModel m = fit(candidate, data);
            step.criterion = m.criterion_value;
            step.decision.assign(nterms, "fit");
            const int total = std::accumulate(step.k.begin(), step.k.end(), 0);
            const double c = m.criterion_value;
            const double tol = 1e-12 * (1.0 + (best ? std::abs(*best) : 0.0));
            if (!best || c < *best - tol || (std::abs(c - *best) <= tol && total < best_total)) {
                best = c;
                best_total = total;
                trace.final_k = step.k;
                trace.final_model = std::move(m);
            }
        } catch (const Error& e) {
            step.decision.assign(nterms, std::string("infeasible:") + e.what());
        }
        trace.steps.push_back(std::move(step));

        std::size_t j = 0;
        while (j < nterms && ++idx[j] == grids[j].size()) {
            idx[j] = 0;
            ++j;
        }
        if (j == nterms) {
            break;
        }
    }
    if (!best) {
        throw Error("every grid point failed to fit");
    }
    return trace;
}

} // namespace kcheck
