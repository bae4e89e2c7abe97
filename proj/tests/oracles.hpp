#pragma once

// Independent reference computations used only by the tests. Nothing here
// calls into the library's numerical paths.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <utility>
#include <vector>

namespace oracle {

using LMatrix = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
using LVector = Eigen::Matrix<long double, Eigen::Dynamic, 1>;

/// Cox-de Boor recursion written literally, with 0/0 = 0 and half-open spans.
inline double bspline(const std::vector<double>& t, int i, int p, double x) {
    if (p == 0) {
        return (t[i] <= x && x < t[i + 1]) ? 1.0 : 0.0;
    }
    double left = 0.0;
    double right = 0.0;
    if (t[i + p] != t[i]) {
        left = (x - t[i]) / (t[i + p] - t[i]) * bspline(t, i, p - 1, x);
    }
    if (t[i + p + 1] != t[i + 1]) {
        right = (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]) * bspline(t, i + 1, p - 1, x);
    }
    return left + right;
}

/// Gaussian elimination with partial pivoting in extended precision.
inline LMatrix solve(LMatrix a, LMatrix b) {
    const auto n = a.rows();
    for (Eigen::Index c = 0; c < n; ++c) {
        Eigen::Index piv = c;
        for (Eigen::Index r = c + 1; r < n; ++r) {
            if (std::abs(a(r, c)) > std::abs(a(piv, c))) {
                piv = r;
            }
        }
        a.row(c).swap(a.row(piv));
        b.row(c).swap(b.row(piv));
        for (Eigen::Index r = c + 1; r < n; ++r) {
            long double f = a(r, c) / a(c, c);
            a.row(r) -= f * a.row(c);
            b.row(r) -= f * b.row(c);
        }
    }
    LMatrix x(n, b.cols());
    for (Eigen::Index r = n - 1; r >= 0; --r) {
        LVector acc = b.row(r).transpose();
        for (Eigen::Index c = r + 1; c < n; ++c) {
            acc -= a(r, c) * x.row(c).transpose();
        }
        x.row(r) = (acc / a(r, r)).transpose();
    }
    return x;
}

inline LMatrix ext(const Eigen::MatrixXd& m) { return m.cast<long double>(); }

/// β from the normal equations (XᵀX + Sλ)β = Xᵀy, Sλ given already embedded.
inline Eigen::VectorXd normal_equations(const Eigen::MatrixXd& X, const Eigen::MatrixXd& s_lambda,
                                        const Eigen::VectorXd& y) {
    LMatrix x = ext(X);
    LMatrix lhs = x.transpose() * x + ext(s_lambda);
    LMatrix rhs = x.transpose() * ext(y);
    return solve(lhs, rhs).col(0).cast<double>();
}

/// Explicit influence matrix X(XᵀX + Sλ)⁻¹Xᵀ.
inline Eigen::MatrixXd influence(const Eigen::MatrixXd& X, const Eigen::MatrixXd& s_lambda) {
    LMatrix x = ext(X);
    LMatrix lhs = x.transpose() * x + ext(s_lambda);
    LMatrix inv_xt = solve(lhs, x.transpose());
    return (x * inv_xt).cast<double>();
}

/// diag((XᵀX + Sλ)⁻¹XᵀX).
inline Eigen::VectorXd edf_diagonal(const Eigen::MatrixXd& X, const Eigen::MatrixXd& s_lambda) {
    LMatrix x = ext(X);
    LMatrix xtx = x.transpose() * x;
    LMatrix f = solve(xtx + ext(s_lambda), xtx);
    return f.diagonal().cast<double>();
}

/// Neighbour lists by full sort of every distance, lower index first on ties.
inline std::vector<std::vector<std::size_t>> knn(const std::vector<std::vector<double>>& cols, std::size_t M) {
    const std::size_t n = cols[0].size();
    std::vector<std::vector<double>> z = cols;
    for (auto& c : z) {
        double mean = 0.0;
        for (double v : c) {
            mean += v;
        }
        mean /= n;
        double ss = 0.0;
        for (double v : c) {
            ss += (v - mean) * (v - mean);
        }
        const double sd = std::sqrt(ss / (n - 1));
        for (double& v : c) {
            v /= sd;
        }
    }
    std::vector<std::vector<std::size_t>> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::pair<double, std::size_t>> all;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) {
                continue;
            }
            double d = 0.0;
            for (const auto& c : z) {
                d += (c[i] - c[j]) * (c[i] - c[j]);
            }
            all.emplace_back(d, j);
        }
        std::sort(all.begin(), all.end());
        for (std::size_t m = 0; m < M; ++m) {
            out[i].push_back(all[m].second);
        }
    }
    return out;
}

/// Asymptotic Kolmogorov-Smirnov p-value of a sample against U(0,1).
inline double ks_uniform_pvalue(std::vector<double> u) {
    std::sort(u.begin(), u.end());
    const double n = static_cast<double>(u.size());
    double d = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        d = std::max({d, (i + 1) / n - u[i], u[i] - i / n});
    }
    const double lam = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
    double q = 0.0;
    for (int k = 1; k <= 100; ++k) {
        q += 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lam * lam);
    }
    return std::clamp(q, 0.0, 1.0);
}

/**
 * Restricted negative log likelihood of y ~ N(Xβ, φI) with the improper prior
 * exp(−βᵀSλβ/2φ) (normalized on the range of Sλ), for a two-coefficient model,
 * by trapezoidal quadrature over β with φ set to its restricted estimate.
 */
inline double reml_by_quadrature(const Eigen::MatrixXd& X, const Eigen::Matrix2d& s_lambda, const Eigen::VectorXd& y,
                                 int half_points = 300) {
    const double n = static_cast<double>(X.rows());
    // eigenvalues of the symmetric 2x2 penalty in closed form
    const double a = s_lambda(0, 0), b = s_lambda(0, 1), d = s_lambda(1, 1);
    const double mid = 0.5 * (a + d);
    const double rad = std::sqrt(0.25 * (a - d) * (a - d) + b * b);
    double pdet = 1.0;
    int rank = 0;
    for (double ev : {mid + rad, mid - rad}) {
        if (ev > 1e-10 * (mid + rad)) {
            pdet *= ev;
            ++rank;
        }
    }
    const Eigen::Vector2d beta_hat = normal_equations(X, s_lambda, y);
    auto objective = [&](const Eigen::Vector2d& beta) {
        return (y - X * beta).squaredNorm() + beta.dot(s_lambda * beta);
    };
    const double q_min = objective(beta_hat);
    const double phi = q_min / (n - (2 - rank));

    Eigen::Matrix2d cov = phi * (X.transpose() * X + s_lambda).inverse();
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
    const Eigen::Matrix2d axes = eig.eigenvectors();
    const Eigen::Vector2d sd = eig.eigenvalues().cwiseSqrt();
    const double span = 12.0;
    const double h0 = span * sd(0) / half_points;
    const double h1 = span * sd(1) / half_points;
    double integral = 0.0;
    for (int i = -half_points; i <= half_points; ++i) {
        for (int j = -half_points; j <= half_points; ++j) {
            Eigen::Vector2d u(i * h0, j * h1);
            double w = (std::abs(i) == half_points ? 0.5 : 1.0) * (std::abs(j) == half_points ? 0.5 : 1.0);
            integral += w * std::exp(-(objective(beta_hat + axes * u) - q_min) / (2.0 * phi));
        }
    }
    integral *= h0 * h1;   // rotation has unit Jacobian
    const double two_pi_phi = 2.0 * std::numbers::pi * phi;
    return 0.5 * (n + rank) * std::log(two_pi_phi) - 0.5 * std::log(pdet) + q_min / (2.0 * phi) - std::log(integral);
}

} // namespace oracle
