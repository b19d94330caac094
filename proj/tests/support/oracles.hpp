#pragma once

// Independent reference implementations used to freeze expected values.
// Everything here recomputes results through a different route than the
// library (scalar loops, finite differences, exhaustive enumeration) and
// must stay decoupled from the code paths it checks.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "ivm/klr.hpp"

namespace oracles {

using ivm::Matrix;
using ivm::Vector;

// Scalar-loop RBF kernel.
inline double rbf_scalar(const Vector& x, const Vector& y, double gamma) {
    double d2 = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        d2 += d * d;
    }
    return std::exp(-gamma * d2);
}

inline Matrix kernel_matrix_scalar(const Matrix& a, const Matrix& b, double gamma) {
    Matrix k(a.rows(), b.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < b.rows(); ++j) {
            k(i, j) = rbf_scalar(a.row(i).transpose(), b.row(j).transpose(), gamma);
        }
    }
    return k;
}

// Objective of the regularized kernel logistic regression evaluated from
// scratch (scalar softmax / sigmoid), for finite differences.
inline double objective_scalar(const Matrix& k_v, const Matrix& k_r, const Matrix& targets,
                               const Matrix& alpha, double lambda) {
    const Eigen::Index n = k_v.rows();
    const Eigen::Index c = alpha.cols();
    double nll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (c == 1) {
            double s = 0.0;
            for (Eigen::Index v = 0; v < k_v.cols(); ++v) s += k_v(i, v) * alpha(v, 0);
            const double p = 1.0 / (1.0 + std::exp(-s));
            const double pc = std::min(std::max(p, 1e-12), 1.0 - 1e-12);
            nll -= targets(i, 0) * std::log(pc) + (1.0 - targets(i, 0)) * std::log(1.0 - pc);
        } else {
            std::vector<double> scores(static_cast<size_t>(c), 0.0);
            double smax = -std::numeric_limits<double>::infinity();
            for (Eigen::Index k = 0; k < c; ++k) {
                double s = 0.0;
                for (Eigen::Index v = 0; v < k_v.cols(); ++v) s += k_v(i, v) * alpha(v, k);
                scores[static_cast<size_t>(k)] = s;
                smax = std::max(smax, s);
            }
            double denom = 0.0;
            for (double s : scores) denom += std::exp(s - smax);
            for (Eigen::Index k = 0; k < c; ++k) {
                if (targets(i, k) > 0.5) {
                    const double p = std::exp(scores[static_cast<size_t>(k)] - smax) / denom;
                    const double pc = std::min(std::max(p, 1e-12), 1.0 - 1e-12);
                    nll -= std::log(pc);
                }
            }
        }
    }
    double penalty = 0.0;
    for (Eigen::Index k = 0; k < c; ++k) {
        penalty += alpha.col(k).dot(k_r * alpha.col(k));
    }
    return nll / static_cast<double>(n) + 0.5 * lambda * penalty;
}

// Central finite-difference gradient of the objective in alpha.
inline Matrix fd_gradient(const Matrix& k_v, const Matrix& k_r, const Matrix& targets,
                          const Matrix& alpha, double lambda, double h = 1e-6) {
    Matrix g(alpha.rows(), alpha.cols());
    Matrix a = alpha;
    for (Eigen::Index i = 0; i < alpha.rows(); ++i) {
        for (Eigen::Index j = 0; j < alpha.cols(); ++j) {
            a(i, j) = alpha(i, j) + h;
            const double qp = objective_scalar(k_v, k_r, targets, a, lambda);
            a(i, j) = alpha(i, j) - h;
            const double qm = objective_scalar(k_v, k_r, targets, a, lambda);
            a(i, j) = alpha(i, j);
            g(i, j) = (qp - qm) / (2.0 * h);
        }
    }
    return g;
}

// First-order reference minimizer: gradient descent with backtracking line
// search on the same objective. Independent of the IRLS path.
inline Matrix descend(const Matrix& k_v, const Matrix& k_r, const Matrix& targets,
                      double lambda, int max_iter = 20000, double grad_tol = 1e-9) {
    Matrix alpha = Matrix::Zero(k_v.cols(), targets.cols());
    const double n = static_cast<double>(k_v.rows());
    double q = objective_scalar(k_v, k_r, targets, alpha, lambda);
    for (int it = 0; it < max_iter; ++it) {
        // Analytic gradient recomputed locally (matches fd_gradient).
        Matrix scores = k_v * alpha;
        Matrix p;
        if (targets.cols() == 1) {
            p = (1.0 / (1.0 + (-scores.array()).exp())).matrix();
        } else {
            Vector rmax = scores.rowwise().maxCoeff();
            scores.colwise() -= rmax;
            p = scores.array().exp().matrix();
            Vector denom = p.rowwise().sum();
            p.array().colwise() /= denom.array();
        }
        Matrix grad = (k_v.transpose() * (p - targets)) / n + lambda * (k_r * alpha);
        if (grad.cwiseAbs().maxCoeff() < grad_tol) break;
        double step = 1.0;
        for (int ls = 0; ls < 60; ++ls) {
            Matrix trial = alpha - step * grad;
            const double qt = objective_scalar(k_v, k_r, targets, trial, lambda);
            if (qt < q) {
                alpha = std::move(trial);
                q = qt;
                break;
            }
            step *= 0.5;
        }
    }
    return alpha;
}

}  // namespace oracles
