#pragma once

#include "basis.hpp"
#include "error.hpp"
#include "table.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

/**
 * @file fit.hpp
 *
 * @brief Gaussian additive model with an intercept and centered smooth terms,
 * fitted by penalized least squares with GCV or REML smoothing-parameter
 * selection.
 */

namespace kcheck {

enum class Criterion { gcv, reml };

inline const char* to_string(Criterion c) { return c == Criterion::gcv ? "GCV" : "REML"; }

struct ModelSpec {
    std::vector<BasisSpec> terms;
    std::string response = "y";
    Criterion criterion = Criterion::gcv;

    void validate() const {
        if (terms.empty()) {
            throw Error("model needs at least one smooth term");
        }
        std::vector<std::string> seen;
        for (const auto& t : terms) {
            t.validate();
            for (const auto& c : t.covariates) {
                if (std::find(seen.begin(), seen.end(), c) != seen.end()) {
                    throw Error("covariate '" + c + "' appears in more than one term");
                }
                if (c == response) {
                    throw Error("response '" + c + "' used as a covariate");
                }
                seen.push_back(c);
            }
        }
    }
};

/// Penalty of one term embedded at a column offset of the full design.
struct PenaltyBlock {
    Eigen::Index start = 0;
    Matrix S;
    Matrix root;
    int rank = 0;
    double log_pdet = 0.0;

    Eigen::Index size() const { return S.rows(); }

    static PenaltyBlock from(const Matrix& s, Eigen::Index start) {
        DesignBlock tmp;
        tmp.S = 0.5 * (s + s.transpose());
        detail::factor_penalty(tmp);
        return PenaltyBlock{start, tmp.S, tmp.penalty_root, tmp.penalty_rank, tmp.log_pdet};
    }
};

/// Full design: intercept column followed by one constrained block per term.
struct Design {
    Matrix X;
    std::vector<DesignBlock> blocks;
    std::vector<PenaltyBlock> penalties;

    /// Column range of term j as (start, count).
    std::pair<Eigen::Index, Eigen::Index> range(std::size_t j) const {
        return {penalties[j].start, penalties[j].size()};
    }
};

namespace detail {

inline Columns term_columns(const BasisSpec& spec, const Table& data) {
    Columns cov;
    for (const auto& name : spec.covariates) {
        cov.push_back(data.column(name));
    }
    return cov;
}

inline void require_finite(std::span<const double> v, const std::string& name) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw Error("non-finite value in column '" + name + "'");
        }
    }
}

} // namespace detail

inline Design assemble_design(const ModelSpec& spec, const Table& data) {
    spec.validate();
    const auto n = static_cast<Eigen::Index>(data.rows());
    if (n < 10) {
        throw Error("at least 10 observations are required");
    }
    Design d;
    Eigen::Index cols = 1;
    for (const auto& term : spec.terms) {
        for (const auto& c : term.covariates) {
            detail::require_finite(data.column(c), c);
        }
        d.blocks.push_back(build_block(term, detail::term_columns(term, data)));
        cols += d.blocks.back().cols();
    }
    d.X.resize(n, cols);
    d.X.col(0).setOnes();
    Eigen::Index at = 1;
    for (const auto& b : d.blocks) {
        d.X.middleCols(at, b.cols()) = b.X;
        d.penalties.push_back(PenaltyBlock{at, b.S, b.penalty_root, b.penalty_rank, b.log_pdet});
        at += b.cols();
    }
    return d;
}

/// Everything the criteria need at one set of smoothing parameters.
struct PenalizedSolution {
    Vector beta;
    double rss = 0.0;
    double penalty = 0.0;          // Σ λ_j βᵀS_jβ
    double trace = 0.0;            // tr of the influence matrix
    double log_det = 0.0;          // log|XᵀX + Sλ|
    double log_pdet_penalty = 0.0; // log|Sλ|₊
    int penalty_rank = 0;
    Vector edf_diag;               // diag((XᵀX+Sλ)⁻¹XᵀX), filled on request
};

/**
 * @brief Penalized least squares for a fixed design.
 *
 * The design is reduced once by a QR decomposition, X = QR, so each trial of
 * smoothing parameters only factorizes the small augmented matrix
 * [R; √λ_j E_j] (E_jᵀE_j = S_j) with a column-pivoted QR.
 */
class PenalizedLS {
public:
    PenalizedLS(const Matrix& X, std::vector<PenaltyBlock> penalties, const Vector& y)
        : penalties_(std::move(penalties)), n_(X.rows()), p_(X.cols()) {
        if (y.size() != n_) {
            throw Error("response length does not match design rows");
        }
        for (const auto& pb : penalties_) {
            if (pb.start < 0 || pb.start + pb.size() > p_) {
                throw Error("penalty block outside design columns");
            }
        }
        Eigen::HouseholderQR<Matrix> qr(X);
        const Eigen::Index m = std::min(n_, p_);
        r_ = qr.matrixQR().topRows(m).triangularView<Eigen::Upper>();
        Vector qty = qr.householderQ().adjoint() * y;
        f_ = qty.head(m);
        rss_offset_ = qty.tail(n_ - m).squaredNorm();
        const double ms = y.squaredNorm() / static_cast<double>(n_);
        scale_floor_ = std::max(1e-300, 1e-20 * ms);
    }

    Eigen::Index rows() const { return n_; }
    Eigen::Index cols() const { return p_; }
    std::size_t terms() const { return penalties_.size(); }
    const std::vector<PenaltyBlock>& penalties() const { return penalties_; }

    PenalizedSolution solve(std::span<const double> lambdas, bool with_edf = false) const {
        if (lambdas.size() != penalties_.size()) {
            throw Error("one smoothing parameter per penalty is required");
        }
        Eigen::Index extra = 0;
        for (std::size_t j = 0; j < penalties_.size(); ++j) {
            if (!(lambdas[j] >= 0.0) || !std::isfinite(lambdas[j])) {
                throw Error("smoothing parameters must be finite and non-negative");
            }
            if (lambdas[j] > 0.0) {
                extra += penalties_[j].rank;
            }
        }
        Matrix aug = Matrix::Zero(r_.rows() + extra, p_);
        aug.topRows(r_.rows()) = r_;
        Eigen::Index row = r_.rows();
        for (std::size_t j = 0; j < penalties_.size(); ++j) {
            const auto& pb = penalties_[j];
            if (lambdas[j] > 0.0 && pb.rank > 0) {
                aug.block(row, pb.start, pb.rank, pb.size()) = std::sqrt(lambdas[j]) * pb.root;
                row += pb.rank;
            }
        }
        if (aug.rows() < p_) {
            throw Error("unidentifiable model");
        }
        Eigen::ColPivHouseholderQR<Matrix> qr(aug);
        const Vector diag = qr.matrixQR().diagonal().cwiseAbs();
        if (diag.size() < p_ || diag.minCoeff() <= 1e-10 * diag.maxCoeff()) {
            throw Error("unidentifiable model");
        }
        Vector rhs = Vector::Zero(aug.rows());
        rhs.head(f_.size()) = f_;

        PenalizedSolution out;
        out.beta = qr.solve(rhs);
        out.rss = rss_offset_ + (f_ - r_ * out.beta).squaredNorm();
        for (std::size_t j = 0; j < penalties_.size(); ++j) {
            const auto& pb = penalties_[j];
            auto b = out.beta.segment(pb.start, pb.size());
            out.penalty += lambdas[j] * b.dot(pb.S * b);
            if (lambdas[j] > 0.0 && pb.rank > 0) {
                out.log_pdet_penalty += pb.rank * std::log(lambdas[j]) + pb.log_pdet;
                out.penalty_rank += pb.rank;
            }
        }
        out.log_det = 2.0 * diag.array().log().sum();

        // T = R P R̃⁻¹, so tr(A) = ‖T‖²_F; solved as R̃ᵀ Tᵀ = (R P)ᵀ
        const auto rt = qr.matrixQR().topRows(p_).triangularView<Eigen::Upper>();
        Matrix rp = r_ * qr.colsPermutation();
        Matrix tt = rt.transpose().solve(rp.transpose());
        out.trace = tt.squaredNorm();
        if (with_edf) {
            // diag of P R̃⁻¹ Tᵀ R
            Matrix h = rt.solve(tt);
            Matrix ph = qr.colsPermutation() * h;
            out.edf_diag = (ph.array() * r_.transpose().array()).rowwise().sum();
        }
        return out;
    }

    double gcv(const PenalizedSolution& s) const {
        const double n = static_cast<double>(n_);
        if (n - s.trace <= 1e-6 * n) {
            throw Error("effective degrees of freedom exhausts data");
        }
        return n * s.rss / ((n - s.trace) * (n - s.trace));
    }

    /**
     * Restricted negative log likelihood with the scale profiled out:
     * ½[(n−M)log(2πφ) + (n−M) + log|XᵀX+Sλ| − log|Sλ|₊], φ = (RSS + βᵀSλβ)/(n−M),
     * where M is the dimension of the penalty null space.
     */
    double reml(const PenalizedSolution& s) const {
        const double m = static_cast<double>(p_ - s.penalty_rank);
        const double dof = static_cast<double>(n_) - m;
        if (dof <= 0.0) {
            throw Error("effective degrees of freedom exhausts data");
        }
        const double phi = std::max((s.rss + s.penalty) / dof, scale_floor_);
        return 0.5 * (dof * (std::log(2.0 * std::numbers::pi * phi) + 1.0) + s.log_det - s.log_pdet_penalty);
    }

    double score(Criterion kind, const PenalizedSolution& s) const {
        return kind == Criterion::gcv ? gcv(s) : reml(s);
    }

    double score(Criterion kind, std::span<const double> lambdas) const {
        return score(kind, solve(lambdas));
    }

private:
    std::vector<PenaltyBlock> penalties_;
    Eigen::Index n_;
    Eigen::Index p_;
    Matrix r_;
    Vector f_;
    double rss_offset_ = 0.0;
    double scale_floor_ = 0.0;
};

inline Vector to_vector(std::span<const double> v) {
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

/// Coefficients minimizing ‖y − Xβ‖² + Σ λ_j βᵀS_jβ.
inline Vector penalized_solve(const Matrix& X, const std::vector<PenaltyBlock>& penalties,
                              std::span<const double> lambdas, const Vector& y) {
    return PenalizedLS(X, penalties, y).solve(lambdas).beta;
}

struct EdfResult {
    std::vector<double> per_term;
    double trace = 0.0;
};

/// Per-penalty EDF (sum of the block of diag((XᵀX+Sλ)⁻¹XᵀX)) and the influence trace.
inline EdfResult edf_per_term(const Matrix& X, const std::vector<PenaltyBlock>& penalties,
                              std::span<const double> lambdas) {
    PenalizedLS ls(X, penalties, Vector::Zero(X.rows()));
    auto s = ls.solve(lambdas, true);
    EdfResult out;
    out.trace = s.trace;
    for (const auto& pb : penalties) {
        out.per_term.push_back(s.edf_diag.segment(pb.start, pb.size()).sum());
    }
    return out;
}

/// n·RSS/(n − tr A)², the plug-in form of the GCV score.
inline double gcv_score(double n, double rss, double trace) {
    if (n - trace <= 1e-6 * n) {
        throw Error("effective degrees of freedom exhausts data");
    }
    return n * rss / ((n - trace) * (n - trace));
}

inline double criterion_score(Criterion kind, const Matrix& X, const std::vector<PenaltyBlock>& penalties,
                              std::span<const double> lambdas, const Vector& y) {
    PenalizedLS ls(X, penalties, y);
    return ls.score(kind, lambdas);
}

/// Settings of the smoothing-parameter search, all on the log10 λ scale.
struct LambdaSearchOptions {
    double log10_min = -6.0;
    double log10_max = 8.0;
    int grid_points = 31;
    int max_sweeps = 10;
    double sweep_tol = 1e-7;
    double refine_width = 1e-3;
};

struct LambdaSearch {
    std::vector<double> lambdas;
    double criterion = 0.0;
    int sweeps = 0;
    bool converged = false;
};

namespace detail {

// Criterion values within this band count as ties; ties go to the smoother model.
inline bool no_worse(double candidate, double best) {
    return candidate <= best + 1e-10 * (1.0 + std::abs(best));
}

inline double safe_score(const PenalizedLS& ls, Criterion kind, std::span<const double> lambdas) {
    try {
        double v = ls.score(kind, lambdas);
        return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    } catch (const Error&) {
        return std::numeric_limits<double>::infinity();
    }
}

} // namespace detail

/**
 * Coordinate descent over per-term log10 λ grids followed by golden-section
 * refinement of each coordinate inside its bracketing grid cells. Ties in the
 * criterion are resolved toward larger λ.
 */
inline LambdaSearch optimize_lambdas(const PenalizedLS& ls, Criterion kind, const LambdaSearchOptions& opt = {}) {
    const std::size_t nterms = ls.terms();
    const double step = (opt.log10_max - opt.log10_min) / (opt.grid_points - 1);
    auto grid_value = [&](int i) { return opt.log10_min + step * i; };

    std::vector<double> rho(nterms, grid_value(opt.grid_points / 2));
    std::vector<double> lambdas(nterms);
    auto eval = [&](const std::vector<double>& r) {
        for (std::size_t j = 0; j < nterms; ++j) {
            lambdas[j] = std::pow(10.0, r[j]);
        }
        return detail::safe_score(ls, kind, lambdas);
    };

    LambdaSearch out;
    double current = eval(rho);
    bool any_finite = std::isfinite(current);
    for (int sweep = 1; sweep <= opt.max_sweeps; ++sweep) {
        const double before = current;
        for (std::size_t j = 0; j < nterms; ++j) {
            double best = std::numeric_limits<double>::infinity();
            double best_rho = rho[j];
            for (int i = 0; i < opt.grid_points; ++i) {
                rho[j] = grid_value(i);
                double v = eval(rho);
                if (std::isfinite(v)) {
                    any_finite = true;
                    if (!std::isfinite(best) || detail::no_worse(v, best)) {
                        best = v;
                        best_rho = rho[j];
                    }
                }
            }
            rho[j] = best_rho;
            current = best;
        }
        out.sweeps = sweep;
        if (!any_finite) {
            throw Error("criterion is non-finite at every grid point");
        }
        if (nterms == 1 || std::abs(before - current) <= opt.sweep_tol * std::max(std::abs(before), 1e-300)) {
            out.converged = true;
            break;
        }
    }

    constexpr double inv_phi = 0.6180339887498949;
    for (std::size_t j = 0; j < nterms; ++j) {
        double a = std::max(opt.log10_min, rho[j] - step);
        double b = std::min(opt.log10_max, rho[j] + step);
        const double stop = opt.refine_width * (b - a);
        const double anchor = rho[j];
        auto at = [&](double v) {
            rho[j] = v;
            return eval(rho);
        };
        double c = b - inv_phi * (b - a);
        double d = a + inv_phi * (b - a);
        double fc = at(c);
        double fd = at(d);
        while (b - a > stop) {
            if (fc < fd) {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = at(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = at(d);
            }
        }
        const double cand = fc < fd ? c : d;
        const double fcand = std::min(fc, fd);
        // keep the grid point unless refinement is a strict improvement
        if (fcand < current - 1e-10 * (1.0 + std::abs(current))) {
            rho[j] = cand;
            current = fcand;
        } else {
            rho[j] = anchor;
        }
    }

    for (std::size_t j = 0; j < nterms; ++j) {
        out.lambdas.push_back(std::pow(10.0, rho[j]));
    }
    out.criterion = current;
    return out;
}

/**
 * @brief Fitted Gaussian additive model.
 *
 * Holds its own copy of the covariates and response so diagnostics can run on
 * it after the input table is gone.
 */
struct FittedModel {
    ModelSpec spec;
    std::vector<DesignBlock> blocks;
    std::vector<std::pair<Eigen::Index, Eigen::Index>> ranges;
    Vector beta;
    std::vector<double> lambda;
    std::vector<double> edf_per_term;
    double trace_A = 0.0;
    Vector mu;
    Vector residuals;
    double phi_hat = 0.0;
    double criterion_value = 0.0;
    int lambda_sweeps = 0;
    bool lambda_converged = false;
    Table data;   // the response and every term covariate

    std::size_t n() const { return static_cast<std::size_t>(mu.size()); }
    std::size_t terms() const { return blocks.size(); }

    Columns term_covariates(std::size_t j) const { return detail::term_columns(spec.terms.at(j), data); }

    Vector term_coefficients(std::size_t j) const {
        auto [start, count] = ranges.at(j);
        return beta.segment(start, count);
    }
};

namespace detail {

inline Table model_data(const ModelSpec& spec, const Table& data) {
    Table kept;
    kept.add(spec.response, std::vector<double>(data.column(spec.response).begin(), data.column(spec.response).end()));
    for (const auto& t : spec.terms) {
        for (const auto& c : t.covariates) {
            auto col = data.column(c);
            kept.add(c, std::vector<double>(col.begin(), col.end()));
        }
    }
    return kept;
}

inline FittedModel finish_fit(const ModelSpec& spec, const Table& data, Design design, const PenalizedLS& ls,
                              std::vector<double> lambdas) {
    const Vector y = to_vector(data.column(spec.response));
    auto sol = ls.solve(lambdas, true);
    FittedModel m;
    m.spec = spec;
    m.beta = sol.beta;
    m.lambda = std::move(lambdas);
    m.trace_A = sol.trace;
    for (std::size_t j = 0; j < design.blocks.size(); ++j) {
        auto [start, count] = design.range(j);
        m.ranges.emplace_back(start, count);
        m.edf_per_term.push_back(sol.edf_diag.segment(start, count).sum());
    }
    m.mu = design.X * sol.beta;
    m.residuals = y - m.mu;
    const double n = static_cast<double>(y.size());
    if (n - sol.trace <= 1e-6 * n) {
        throw Error("effective degrees of freedom exhausts data");
    }
    m.phi_hat = m.residuals.squaredNorm() / (n - sol.trace);
    m.criterion_value = ls.score(spec.criterion, sol);
    m.blocks = std::move(design.blocks);
    m.data = model_data(spec, data);
    return m;
}

} // namespace detail

/// λ search on the assembled design of `spec`.
inline LambdaSearch optimize_lambdas(const ModelSpec& spec, const Table& data, Criterion kind,
                                     const LambdaSearchOptions& opt = {}) {
    Design d = assemble_design(spec, data);
    detail::require_finite(data.column(spec.response), spec.response);
    PenalizedLS ls(d.X, d.penalties, to_vector(data.column(spec.response)));
    return optimize_lambdas(ls, kind, opt);
}

/// Fit at fixed smoothing parameters.
inline FittedModel fit_with_lambdas(const ModelSpec& spec, const Table& data, std::vector<double> lambdas) {
    Design d = assemble_design(spec, data);
    detail::require_finite(data.column(spec.response), spec.response);
    PenalizedLS ls(d.X, d.penalties, to_vector(data.column(spec.response)));
    return detail::finish_fit(spec, data, std::move(d), ls, std::move(lambdas));
}

/// Assembles the design, selects λ by the spec's criterion and returns the fit.
inline FittedModel fit(const ModelSpec& spec, const Table& data, const LambdaSearchOptions& opt = {}) {
    Design d = assemble_design(spec, data);
    detail::require_finite(data.column(spec.response), spec.response);
    PenalizedLS ls(d.X, d.penalties, to_vector(data.column(spec.response)));
    LambdaSearch search = optimize_lambdas(ls, spec.criterion, opt);
    FittedModel m = detail::finish_fit(spec, data, std::move(d), ls, search.lambdas);
    m.lambda_sweeps = search.sweeps;
    m.lambda_converged = search.converged;
    return m;
}

/**
 * f̂_j at new covariate values. For a single-term model the intercept is
 * included so the result is on the scale of the response.
 */
inline std::vector<double> evaluate_term(const FittedModel& model, std::size_t term, const Columns& x) {
    const DesignBlock& block = model.blocks.at(term);
    Vector values = block.predict_matrix(x) * model.term_coefficients(term);
    if (model.terms() == 1) {
        values.array() += model.beta(0);
    }
    return {values.data(), values.data() + values.size()};
}

} // namespace kcheck
