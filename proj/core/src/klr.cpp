#include "ivm/klr.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "ivm/errors.hpp"

namespace ivm {

namespace {

Matrix clamp_probs(Matrix p) {
    return p.cwiseMax(kProbClamp).cwiseMin(1.0 - kProbClamp);
}

double jitter_for(const Eigen::Ref<const Matrix>& K_R) {
    const Eigen::Index v = K_R.rows();
    if (v == 0) return 0.0;
    return kJitterScale * K_R.trace() / static_cast<double>(v);
}

}  // namespace

Matrix one_hot(const Eigen::Ref<const Eigen::VectorXi>& labels, int num_classes) {
    if (num_classes < 1) throw std::invalid_argument("one_hot: need at least one class");
    const Eigen::Index n = labels.size();
    const bool binary = num_classes == 2;
    Matrix t = Matrix::Zero(n, binary ? 1 : num_classes);
    for (Eigen::Index i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 1 || y > num_classes) {
            throw std::invalid_argument("one_hot: label out of range [1..K]");
        }
        if (binary) {
            t(i, 0) = y == 2 ? 1.0 : 0.0;
        } else {
            t(i, y - 1) = 1.0;
        }
    }
    return t;
}

Matrix probabilities(const Eigen::Ref<const Matrix>& K_V,
                     const Eigen::Ref<const Matrix>& alpha) {
    if (K_V.cols() != alpha.rows()) {
        throw std::invalid_argument("probabilities: K_V cols must match alpha rows");
    }
    Matrix scores = K_V * alpha;
    if (alpha.cols() == 1) {
        // Binary mode: p = sigmoid(score), evaluated in the stable branch form.
        Matrix p(scores.rows(), 1);
        for (Eigen::Index i = 0; i < scores.rows(); ++i) {
            const double s = scores(i, 0);
            p(i, 0) = s >= 0.0 ? 1.0 / (1.0 + std::exp(-s))
                               : std::exp(s) / (1.0 + std::exp(s));
        }
        return p;
    }
    const Vector row_max = scores.rowwise().maxCoeff();
    scores.colwise() -= row_max;
    Matrix e = scores.array().exp();
    const Vector denom = e.rowwise().sum();
    e.array().colwise() /= denom.array();
    return e;
}

double objective(const Eigen::Ref<const Matrix>& probs,
                 const Eigen::Ref<const Matrix>& targets,
                 const Eigen::Ref<const Matrix>& alpha,
                 const Eigen::Ref<const Matrix>& K_R, double lambda,
                 Eigen::Index num_samples) {
    if (probs.rows() != targets.rows() || probs.cols() != targets.cols()) {
        throw std::invalid_argument("objective: probs/targets shape mismatch");
    }
    if (alpha.rows() != K_R.rows() || K_R.rows() != K_R.cols()) {
        throw std::invalid_argument("objective: alpha/K_R shape mismatch");
    }
    if (num_samples < 1) throw std::invalid_argument("objective: N must be >= 1");

    const Matrix p = clamp_probs(probs);
    double nll = 0.0;
    if (p.cols() == 1) {
        nll = -(targets.col(0).array() * p.col(0).array().log() +
                (1.0 - targets.col(0).array()) * (1.0 - p.col(0).array()).log())
                   .sum();
    } else {
        nll = -(targets.array() * p.array().log()).sum();
    }
    double penalty = 0.0;
    for (Eigen::Index k = 0; k < alpha.cols(); ++k) {
        penalty += alpha.col(k).dot(K_R * alpha.col(k));
    }
    return nll / static_cast<double>(num_samples) + 0.5 * lambda * penalty;
}

Matrix objective_gradient(const Eigen::Ref<const Matrix>& K_V,
                          const Eigen::Ref<const Matrix>& K_R,
                          const Eigen::Ref<const Matrix>& targets,
                          const Eigen::Ref<const Matrix>& alpha, double lambda) {
    const Matrix p = clamp_probs(probabilities(K_V, alpha));
    const double n = static_cast<double>(K_V.rows());
    return (K_V.transpose() * (p - targets)) / n + lambda * (K_R * alpha);
}

IrlsState::IrlsState(Matrix K_V, Matrix K_R, Matrix targets, double lambda)
    : K_V_(std::move(K_V)),
      K_R_(std::move(K_R)),
      targets_(std::move(targets)),
      lambda_(lambda) {
    if (K_V_.rows() != targets_.rows()) {
        throw std::invalid_argument("IrlsState: K_V rows must match targets rows");
    }
    if (K_R_.rows() != K_R_.cols() || K_R_.rows() != K_V_.cols()) {
        throw std::invalid_argument("IrlsState: K_R must be square, dims matching K_V cols");
    }
    if (lambda_ < 0.0) throw std::invalid_argument("IrlsState: lambda must be >= 0");
    set_alpha(Matrix::Zero(K_V_.cols(), targets_.cols()));
}

void IrlsState::set_alpha(Matrix alpha) {
    if (alpha.rows() != K_V_.cols() || alpha.cols() != targets_.cols()) {
        throw std::invalid_argument("IrlsState::set_alpha: shape mismatch");
    }
    alpha_ = std::move(alpha);
    probs_ = clamp_probs(probabilities(K_V_, alpha_));
    weights_ = (probs_.array() * (1.0 - probs_.array())).cwiseMax(kProbClamp);
    q_ = objective(probs_, targets_, alpha_, K_R_, lambda_, num_samples());
    q_history_.push_back(q_);
}

Vector IrlsState::working_response(Eigen::Index k) const {
    return K_V_ * alpha_.col(k) +
           (targets_.col(k) - probs_.col(k)).cwiseQuotient(weights_.col(k));
}

Matrix IrlsState::gradient() const {
    const double n = static_cast<double>(num_samples());
    return (K_V_.transpose() * (probs_ - targets_)) / n + lambda_ * (K_R_ * alpha_);
}

Matrix irls_step(const IrlsState& state) {
    const Eigen::Index v = state.num_import_vectors();
    const Eigen::Index k_classes = state.alpha().cols();
    const double n = static_cast<double>(state.num_samples());
    const double jitter = jitter_for(state.regularizer_block());

    Matrix next(v, k_classes);
    for (Eigen::Index k = 0; k < k_classes; ++k) {
        const Vector r = state.weights().col(k);
        const Vector z = state.working_response(k);
        const Matrix weighted = state.kernel_block().array().colwise() * r.array();
        Matrix normal = (state.kernel_block().transpose() * weighted) / n +
                        state.lambda() * state.regularizer_block();
        normal.diagonal().array() += jitter;
        const Vector rhs = (state.kernel_block().transpose() * (r.asDiagonal() * z)) / n;

        Eigen::LLT<Matrix> llt(normal);
        if (llt.info() != Eigen::Success) {
            // One retry with a much larger jitter before giving up.
            normal.diagonal().array() += 1e6 * jitter + 1e-12;
            llt.compute(normal);
            if (llt.info() != Eigen::Success) {
                throw NumericalError(
                    "irls_step: singular normal matrix for class " + std::to_string(k) +
                    " (diagonal scale " + std::to_string(normal.diagonal().mean()) + ")");
            }
        }
        next.col(k) = llt.solve(rhs);
    }
    return next;
}

FitResult fit(IrlsState& state, const FitOptions& options) {
    FitResult result;
    int strikes = 0;
    for (int iter = 0; iter < options.max_iter; ++iter) {
        const double q_old = state.objective_value();
        const Matrix alpha_old = state.alpha();
        const Matrix alpha_full = irls_step(state);

        // Damped Newton: halve the step while it increases the objective.
        double step = 1.0;
        double q_new = q_old;
        double q_best = std::numeric_limits<double>::infinity();
        Matrix alpha_new = alpha_old;
        bool improved = false;
        for (int halving = 0; halving <= 10; ++halving) {
            Matrix candidate = alpha_old + step * (alpha_full - alpha_old);
            Matrix p = probabilities(state.kernel_block(), candidate);
            const double q = objective(p, state.targets(), candidate,
                                       state.regularizer_block(), state.lambda(),
                                       state.num_samples());
            q_best = std::min(q_best, q);
            if (q <= q_old) {
                alpha_new = std::move(candidate);
                q_new = q;
                improved = true;
                break;
            }
            step *= 0.5;
        }

        if (!improved) {
            // A stalled step whose best candidate is within tolerance of the
            // current objective is numerical convergence, not divergence.
            const double rel_stall =
                std::abs(q_best - q_old) / std::max(std::abs(q_old), 1e-300);
            if (rel_stall < std::max(options.tol, 1e-14)) {
                result.converged = true;
                break;
            }
            if (++strikes >= 3) {
                throw NumericalError("fit: objective increased for 3 consecutive safeguarded steps");
            }
            continue;
        }
        strikes = 0;
        state.set_alpha(std::move(alpha_new));
        ++result.iterations;

        const double rel = std::abs(q_new - q_old) / std::max(std::abs(q_new), 1e-300);
        if (rel < options.tol) {
            if (options.grad_tol <= 0.0 ||
                state.gradient().cwiseAbs().maxCoeff() <= options.grad_tol) {
                result.converged = true;
                break;
            }
        }
    }
    result.alpha = state.alpha();
    result.q_history = state.q_history();
    return result;
}

FitResult fit(const Eigen::Ref<const Matrix>& K_V,
              const Eigen::Ref<const Matrix>& K_R,
              const Eigen::Ref<const Matrix>& targets, double lambda,
              const FitOptions& options) {
    IrlsState state(Matrix(K_V), Matrix(K_R), Matrix(targets), lambda);
    return fit(state, options);
}

}  // namespace ivm
