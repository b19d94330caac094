#pragma once

#include <vector>

#include "ivm/kernel.hpp"

namespace ivm {

// Probabilities are clamped into [kProbClamp, 1 - kProbClamp] before logs and
// before forming R^{-1}; r_nn -> 0 at saturated samples otherwise.
inline constexpr double kProbClamp = 1e-12;

// Diagonal jitter added to the IRLS normal matrix before factorization,
// scaled as kJitterScale * trace(K_R) / V. K_R can be near-singular for
// close import vectors.
inline constexpr double kJitterScale = 1e-10;

/// 1-of-K target encoding. labels are in [1..K]; binary mode (K per column
/// semantics compressed to a single column) encodes class 2 as 1.
Matrix one_hot(const Eigen::Ref<const Eigen::VectorXi>& labels, int num_classes);

/// Class-membership probabilities for scores K_V * alpha.
/// Multi-column alpha: row-wise softmax, stabilized by max-subtraction.
/// Single-column alpha: logistic sigmoid (binary mode).
Matrix probabilities(const Eigen::Ref<const Matrix>& K_V,
                     const Eigen::Ref<const Matrix>& alpha);

/// Regularized negative log-likelihood
///   Q = -1/N sum_n t_n . log p_n + lambda/2 sum_k alpha_k' K_R alpha_k
/// In binary mode (single column) the first term is the Bernoulli
/// cross-entropy -1/N sum [t log p + (1-t) log(1-p)].
double objective(const Eigen::Ref<const Matrix>& probs,
                 const Eigen::Ref<const Matrix>& targets,
                 const Eigen::Ref<const Matrix>& alpha,
                 const Eigen::Ref<const Matrix>& K_R, double lambda,
                 Eigen::Index num_samples);

/// Analytic gradient of the objective with respect to alpha:
///   grad_k = 1/N K_V' (p_k - t_k) + lambda K_R alpha_k.
Matrix objective_gradient(const Eigen::Ref<const Matrix>& K_V,
                          const Eigen::Ref<const Matrix>& K_R,
                          const Eigen::Ref<const Matrix>& targets,
                          const Eigen::Ref<const Matrix>& alpha, double lambda);

/// Mutable training workspace for (sparse) kernel logistic regression over a
/// fixed import-vector subset. Owns K_V (N x V), K_R (V x V), targets
/// (N x K), coefficients alpha (V x K), the derived probabilities and
/// per-class weights r_nk = p_nk (1 - p_nk), and the objective history.
class IrlsState {
public:
    IrlsState(Matrix K_V, Matrix K_R, Matrix targets, double lambda);

    /// Replaces alpha and recomputes probs, weights and the objective.
    /// Appends the new objective value to the history.
    void set_alpha(Matrix alpha);

    const Matrix& kernel_block() const { return K_V_; }
    const Matrix& regularizer_block() const { return K_R_; }
    const Matrix& targets() const { return targets_; }
    const Matrix& alpha() const { return alpha_; }
    const Matrix& probs() const { return probs_; }
    /// Per-class IRLS weights r_nk = p_nk (1 - p_nk), clamped into (0, 0.25].
    const Matrix& weights() const { return weights_; }
    double lambda() const { return lambda_; }
    double objective_value() const { return q_; }
    const std::vector<double>& q_history() const { return q_history_; }

    Eigen::Index num_samples() const { return K_V_.rows(); }
    Eigen::Index num_import_vectors() const { return K_V_.cols(); }
    Eigen::Index num_classes() const { return targets_.cols(); }

    /// Working response of the exact Newton step for class k:
    ///   z_k = K_V alpha_k + (t_k - p_k) / r_k.
    Vector working_response(Eigen::Index k) const;

    Matrix gradient() const;

private:
    Matrix K_V_;
    Matrix K_R_;
    Matrix targets_;
    Matrix alpha_;
    Matrix probs_;
    Matrix weights_;
    double lambda_ = 0.0;
    double q_ = 0.0;
    std::vector<double> q_history_;
};

/// One IRLS/Newton update of alpha. Each class k is solved against its own
/// weights R_k and working response z_k:
///   alpha_k = (1/N K_V' R_k K_V + lambda K_R)^{-1} 1/N K_V' R_k z_k.
/// The state is not mutated; the caller commits via set_alpha. Throws
/// NumericalError if the normal matrix stays singular after jitter.
Matrix irls_step(const IrlsState& state);

struct FitOptions {
    double tol = 1e-6;     // stop when |dQ| / |Q| < tol
    int max_iter = 100;
    double grad_tol = 0.0; // optional: additionally require ||grad||_inf <= grad_tol
};

struct FitResult {
    Matrix alpha;
    std::vector<double> q_history;
    int iterations = 0;
    bool converged = false;
};

/// Damped-Newton IRLS loop. A full step that increases Q is halved up to 10
/// times; three consecutive failed steps raise NumericalError.
FitResult fit(const Eigen::Ref<const Matrix>& K_V,
              const Eigen::Ref<const Matrix>& K_R,
              const Eigen::Ref<const Matrix>& targets, double lambda,
              const FitOptions& options = {});

/// Same loop operating on an existing state (warm start); the state holds the
/// converged alpha afterwards.
FitResult fit(IrlsState& state, const FitOptions& options = {});

}  // namespace ivm
