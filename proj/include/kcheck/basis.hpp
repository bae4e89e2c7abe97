#pragma once

#include "error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

/**
 * @file basis.hpp
 *
 * @brief B-spline bases, difference penalties, tensor products and the
 * sum-to-zero constraint used by every smooth term.
 */

namespace kcheck {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Covariate columns of a smooth, one span per covariate, all of equal length.
using Columns = std::vector<std::span<const double>>;

enum class BasisKind { univariate, tensor };

/**
 * @brief Definition of one smooth term.
 *
 * `k` is the total basis dimension before the identifiability constraint is
 * absorbed. For tensor terms the marginal split is either given explicitly in
 * `marginal_k` or derived from `k` (see `tensor_split()`), in which case the
 * realized dimension may differ from the requested one.
 */
struct BasisSpec {
    BasisKind kind = BasisKind::univariate;
    int k = 10;
    int degree = 3;
    int penalty_order = 2;
    std::vector<std::string> covariates;
    std::optional<std::pair<int, int>> marginal_k;

    static BasisSpec univariate(std::string name, int k, int degree = 3, int order = 2) {
        return BasisSpec{BasisKind::univariate, k, degree, order, {std::move(name)}, std::nullopt};
    }

    static BasisSpec tensor(std::string first, std::string second, int k, int degree = 3, int order = 2) {
        return BasisSpec{BasisKind::tensor, k, degree, order, {std::move(first), std::move(second)}, std::nullopt};
    }

    std::string label() const {
        if (covariates.size() == 1) {
            return covariates[0];
        }
        std::string out;
        for (std::size_t i = 0; i < covariates.size(); ++i) {
            out += (i ? "*" : "") + covariates[i];
        }
        return out;
    }

    std::pair<int, int> marginals() const;

    /// Total dimension actually built, k₁·k₂ for tensor terms.
    int realized_k() const {
        if (kind == BasisKind::univariate) {
            return k;
        }
        auto [a, b] = marginals();
        return a * b;
    }

    /// Same smooth at a new total dimension; explicit marginals are dropped.
    BasisSpec resized(int new_k) const {
        BasisSpec out = *this;
        out.k = new_k;
        out.marginal_k.reset();
        return out;
    }

    void validate() const {
        if (kind == BasisKind::univariate && covariates.size() != 1) {
            throw Error("univariate smooth needs exactly one covariate");
        }
        if (kind == BasisKind::tensor && covariates.size() != 2) {
            throw Error("tensor smooth needs exactly two covariates");
        }
        if (degree < 0) {
            throw Error("spline degree must be non-negative");
        }
        if (penalty_order < 1) {
            throw Error("penalty order must be positive");
        }
        if (k < degree + 2) {
            throw Error("basis dimension k must be at least degree + 2");
        }
        if (penalty_order >= k) {
            throw Error("penalty order must be smaller than k");
        }
        if (kind == BasisKind::tensor) {
            auto [a, b] = marginals();
            if (a <= penalty_order || b <= penalty_order) {
                throw Error("tensor marginal dimension must exceed the penalty order");
            }
        }
    }
};

/**
 * Marginal split of a tensor dimension: the factor pair (k₁ ≤ k₂) whose product
 * is closest to `k`, preferring the most balanced pair. Each marginal must be
 * able to carry a penalty of order `min_marginal - 1`.
 */
inline std::pair<int, int> tensor_split(int k, int min_marginal = 3) {
    if (k < min_marginal * min_marginal) {
        return {min_marginal, min_marginal};
    }
    std::pair<int, int> best{min_marginal, min_marginal};
    long best_gap = -1;
    int best_spread = 0;
    for (int a = min_marginal; a * a <= k + 2 * a; ++a) {
        for (int b : {k / a, k / a + 1}) {
            if (b < a) {
                continue;
            }
            long gap = std::labs(static_cast<long>(a) * b - k);
            int spread = b - a;
            if (best_gap < 0 || gap < best_gap || (gap == best_gap && spread < best_spread)) {
                best = {a, b};
                best_gap = gap;
                best_spread = spread;
            }
        }
    }
    return best;
}

inline std::pair<int, int> BasisSpec::marginals() const {
    if (marginal_k) {
        return *marginal_k;
    }
    return tensor_split(k, penalty_order + 1);
}

/// Clamped knot vector of a B-spline basis of dimension `knots.size() - degree - 1`.
struct KnotVector {
    std::vector<double> knots;
    int degree = 3;
    double lo = 0.0;
    double hi = 1.0;

    int dimension() const { return static_cast<int>(knots.size()) - degree - 1; }
};

/**
 * Clamped knots with interior knots at evenly spaced quantiles of the distinct
 * values of `x`. The boundary knots are the exact covariate range.
 */
inline KnotVector place_knots(std::span<const double> x, int k, int degree) {
    if (degree < 0 || k < degree + 2) {
        throw Error("basis dimension k must be at least degree + 2");
    }
    if (x.empty()) {
        throw Error("insufficient unique covariate values for requested k");
    }
    std::vector<double> u(x.begin(), x.end());
    for (double v : u) {
        if (!std::isfinite(v)) {
            throw Error("non-finite covariate value");
        }
    }
    std::sort(u.begin(), u.end());
    u.erase(std::unique(u.begin(), u.end()), u.end());
    if (static_cast<int>(u.size()) < k) {
        throw Error("insufficient unique covariate values for requested k");
    }

    KnotVector out;
    out.degree = degree;
    out.lo = u.front();
    out.hi = u.back();
    const int interior = k - degree - 1;
    out.knots.reserve(k + degree + 1);
    out.knots.insert(out.knots.end(), degree + 1, out.lo);
    const double last = static_cast<double>(u.size() - 1);
    for (int j = 1; j <= interior; ++j) {
        double pos = last * j / (interior + 1);
        auto below = static_cast<std::size_t>(std::floor(pos));
        double frac = pos - below;
        double q = below + 1 < u.size() ? u[below] + frac * (u[below + 1] - u[below]) : u[below];
        out.knots.push_back(q);
    }
    out.knots.insert(out.knots.end(), degree + 1, out.hi);
    return out;
}

/**
 * Evaluates all basis functions at `x` with the Cox-de Boor triangular scheme.
 * Rows hold at most degree+1 non-zeros and sum to one. Points outside the knot
 * domain are rejected rather than extrapolated.
 */
inline Matrix eval_bspline_basis(std::span<const double> x, const KnotVector& kv) {
    const int k = kv.dimension();
    const int p = kv.degree;
    const auto& t = kv.knots;
    if (k < 1) {
        throw Error("knot vector defines an empty basis");
    }
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(x.size()), k);
    std::vector<double> left(p + 1), right(p + 1), values(p + 1);

    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        if (!(xi >= kv.lo && xi <= kv.hi)) {
            throw Error("covariate outside basis domain");
        }
        // span s with t[s] <= x < t[s+1]; the right end belongs to the last span
        int s;
        if (xi >= t[k]) {
            s = k - 1;
        } else {
            s = static_cast<int>(std::upper_bound(t.begin() + p, t.begin() + k + 1, xi) - t.begin()) - 1;
        }

        values[0] = 1.0;
        for (int j = 1; j <= p; ++j) {
            left[j] = xi - t[s + 1 - j];
            right[j] = t[s + j] - xi;
            double saved = 0.0;
            for (int r = 0; r < j; ++r) {
                double denom = right[r + 1] + left[j - r];
                double temp = denom != 0.0 ? values[r] / denom : 0.0;
                values[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            values[j] = saved;
        }
        for (int r = 0; r <= p; ++r) {
            out(static_cast<Eigen::Index>(i), s - p + r) = values[r];
        }
    }
    return out;
}

/// DᵀD for the order-th difference operator D on k coefficients.
inline Matrix difference_penalty(int k, int order) {
    if (order <= 0 || order >= k) {
        throw Error("difference order must satisfy 0 < order < k");
    }
    Matrix d = Matrix::Identity(k, k);
    for (int o = 0; o < order; ++o) {
        d = (d.bottomRows(d.rows() - 1) - d.topRows(d.rows() - 1)).eval();
    }
    return d.transpose() * d;
}

/// Greville abscissae, the knot averages at which a coefficient "sits".
inline std::vector<double> greville(const KnotVector& kv) {
    const int k = kv.dimension();
    const int p = kv.degree;
    std::vector<double> g(k);
    for (int i = 0; i < k; ++i) {
        if (p == 0) {
            g[i] = 0.5 * (kv.knots[i] + kv.knots[i + 1]);
            continue;
        }
        double s = 0.0;
        for (int j = 1; j <= p; ++j) {
            s += kv.knots[i + j];
        }
        g[i] = s / p;
    }
    return g;
}

/**
 * Difference penalty adapted to uneven knots: divided differences over the
 * Greville abscissae, rescaled by the mean abscissa spacing. With evenly
 * spaced knots this is `difference_penalty(k, order)`; with uneven knots the
 * order-2 null space is still exactly the straight lines in x.
 */
inline Matrix difference_penalty(const KnotVector& kv, int order) {
    const int k = kv.dimension();
    if (order <= 0 || order >= k) {
        throw Error("difference order must satisfy 0 < order < k");
    }
    const std::vector<double> g = greville(kv);
    const double mean_gap = (g.back() - g.front()) / (k - 1);
    Matrix d = Matrix::Identity(k, k);
    for (int o = 1; o <= order; ++o) {
        Matrix next(d.rows() - 1, k);
        for (Eigen::Index i = 0; i < next.rows(); ++i) {
            double gap = (g[i + o] - g[i]) / o;
            double w = gap > 1e-12 * mean_gap ? mean_gap / gap : 1.0;
            next.row(i) = w * (d.row(i + 1) - d.row(i));
        }
        d = std::move(next);
    }
    return d.transpose() * d;
}

/// Row-wise Kronecker product; column a·k₂ + b holds B1(:,a)·B2(:,b).
inline Matrix tensor_basis(const Matrix& b1, const Matrix& b2) {
    if (b1.rows() != b2.rows()) {
        throw Error("tensor marginals have different row counts");
    }
    const auto k2 = b2.cols();
    Matrix out(b1.rows(), b1.cols() * k2);
    for (Eigen::Index a = 0; a < b1.cols(); ++a) {
        out.middleCols(a * k2, k2) = b2.array().colwise() * b1.col(a).array();
    }
    return out;
}

/// Isotropic tensor penalty S1⊗I + I⊗S2, ordered to match `tensor_basis`.
inline Matrix tensor_penalty(const Matrix& s1, const Matrix& s2) {
    if (s1.rows() != s1.cols() || s2.rows() != s2.cols()) {
        throw Error("penalty matrices must be square");
    }
    const auto k1 = s1.rows();
    const auto k2 = s2.rows();
    Matrix out = Matrix::Zero(k1 * k2, k1 * k2);
    for (Eigen::Index a = 0; a < k1; ++a) {
        for (Eigen::Index b = 0; b < k1; ++b) {
            out.block(a * k2, b * k2, k2, k2).diagonal().array() += s1(a, b);
        }
        out.block(a * k2, a * k2, k2, k2) += s2;
    }
    return out;
}

/// Realized design and penalty of one smooth term after the sum-to-zero constraint.
struct DesignBlock {
    BasisSpec spec;
    std::vector<KnotVector> knots;   // one per covariate
    Matrix X;                        // n × (k-1)
    Matrix S;                        // (k-1) × (k-1)
    Matrix Z;                        // k × (k-1), maps constrained to raw coefficients
    int null_dim = 0;
    int penalty_rank = 0;
    double log_pdet = 0.0;           // log of the product of non-zero eigenvalues of S
    Matrix penalty_root;             // rank × (k-1), rootᵀ·root = S
    std::string constraint = "sum-to-zero over observed covariates";

    Eigen::Index cols() const { return X.cols(); }

    /// Unconstrained basis at new covariate values, before the constraint.
    Matrix raw_basis(const Columns& cov) const;

    /// Constrained design rows at new covariate values.
    Matrix predict_matrix(const Columns& cov) const { return raw_basis(cov) * Z; }
};

namespace detail {

inline void factor_penalty(DesignBlock& block) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(block.S);
    const Vector& ev = eig.eigenvalues();
    const double top = ev.size() ? std::max(ev.maxCoeff(), 0.0) : 0.0;
    const double tol = 1e-8 * top;
    std::vector<Eigen::Index> keep;
    block.log_pdet = 0.0;
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev(i) > tol && top > 0.0) {
            keep.push_back(i);
            block.log_pdet += std::log(ev(i));
        }
    }
    block.penalty_rank = static_cast<int>(keep.size());
    block.null_dim = static_cast<int>(ev.size()) - block.penalty_rank;
    block.penalty_root.resize(block.penalty_rank, block.S.cols());
    for (std::size_t r = 0; r < keep.size(); ++r) {
        block.penalty_root.row(static_cast<Eigen::Index>(r)) =
            std::sqrt(ev(keep[r])) * eig.eigenvectors().col(keep[r]).transpose();
    }
}

inline int marginal_degree(int degree, int k) { return std::max(0, std::min(degree, k - 2)); }

} // namespace detail

/**
 * Absorbs the constraint 1ᵀXβ = 0 by reparameterizing β = Zγ, where Z spans the
 * orthogonal complement of Xᵀ1 (from a Householder QR of that vector). The
 * penalty is transformed congruently, ZᵀSZ.
 */
inline DesignBlock apply_centering_constraint(const Matrix& X, const Matrix& S) {
    if (X.cols() != S.rows() || S.rows() != S.cols()) {
        throw Error("design and penalty dimensions disagree");
    }
    if (X.cols() < 2) {
        throw Error("centering constraint needs at least two basis functions");
    }
    Vector c = X.colwise().sum().transpose();
    Eigen::HouseholderQR<Matrix> qr(c);
    Matrix q = qr.householderQ();
    DesignBlock block;
    block.Z = q.rightCols(X.cols() - 1);
    block.X = X * block.Z;
    Matrix s = block.Z.transpose() * S * block.Z;
    block.S = 0.5 * (s + s.transpose());
    detail::factor_penalty(block);
    return block;
}

inline Matrix DesignBlock::raw_basis(const Columns& cov) const {
    if (cov.size() != knots.size()) {
        throw Error("wrong number of covariates for smooth " + spec.label());
    }
    Matrix raw = eval_bspline_basis(cov[0], knots[0]);
    if (spec.kind == BasisKind::tensor) {
        if (cov[1].size() != cov[0].size()) {
            throw Error("tensor covariates have different lengths");
        }
        raw = tensor_basis(raw, eval_bspline_basis(cov[1], knots[1]));
    }
    return raw;
}

/// Builds the constrained design block of `spec` over the observed covariates.
inline DesignBlock build_block(const BasisSpec& spec, const Columns& cov) {
    spec.validate();
    if (cov.size() != spec.covariates.size()) {
        throw Error("wrong number of covariates for smooth " + spec.label());
    }
    std::vector<KnotVector> knots;
    Matrix raw;
    Matrix pen;
    if (spec.kind == BasisKind::univariate) {
        knots.push_back(place_knots(cov[0], spec.k, spec.degree));
        raw = eval_bspline_basis(cov[0], knots[0]);
        pen = difference_penalty(knots[0], spec.penalty_order);
    } else {
        auto [k1, k2] = spec.marginals();
        knots.push_back(place_knots(cov[0], k1, detail::marginal_degree(spec.degree, k1)));
        knots.push_back(place_knots(cov[1], k2, detail::marginal_degree(spec.degree, k2)));
        if (cov[1].size() != cov[0].size()) {
            throw Error("tensor covariates have different lengths");
        }
        raw = tensor_basis(eval_bspline_basis(cov[0], knots[0]), eval_bspline_basis(cov[1], knots[1]));
        pen = tensor_penalty(difference_penalty(knots[0], spec.penalty_order),
                             difference_penalty(knots[1], spec.penalty_order));
    }
    DesignBlock block = apply_centering_constraint(raw, pen);
    block.spec = spec;
    block.knots = std::move(knots);
    return block;
}

} // namespace kcheck
