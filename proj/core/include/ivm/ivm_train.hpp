#pragma once

#include <Eigen/Cholesky>
#include <optional>
#include <random>
#include <vector>

#include "ivm/data.hpp"
#include "ivm/ivm_model.hpp"
#include "ivm/klr.hpp"

namespace ivm {

/// Convergence test over the committed objective history:
/// epsilon = |Q_i - Q_{i - delta_i}| / |Q_i| below `epsilon` stops selection.
struct ConvergenceProbe {
    double epsilon = 1e-3;
    int delta_i = 1;
};

struct TrainConfig {
    KernelParams kernel;
    double lambda = 1e-3;
    ConvergenceProbe probe;
    int max_iv = 0;               // 0 -> min(N, 500) safety cap
    int candidate_subsample = 0;  // 0 -> try every candidate per iteration
    bool refit_after_commit = true;
    bool backward_steps = true;
    FitOptions fit;
    uint64_t seed = 0;  // drives candidate subsampling only
};

struct TrainReport {
    std::vector<double> committed_q;  // objective after each selection iteration
    int forward_steps = 0;
    int backward_drops = 0;
};

/// Greedy forward (plus optional backward) import-vector selection over a
/// fixed training block. Each forward iteration scores every candidate by
/// one IRLS step on the enlarged set and commits the argmin; a backward pass
/// then drops any import vector whose removal does not worsen the objective.
class IvmTrainer {
public:
    IvmTrainer(Matrix features, Matrix targets, TrainConfig config);

    /// Seeds the selection with an existing import set (rows of the training
    /// block) and coefficients, then refits to convergence.
    void warm_start(std::vector<int> import_indices, Matrix alpha);

    /// One-step objective with `candidate` appended to the import set.
    /// Pure: the trainer is not mutated. Returns +inf when the bordered
    /// normal system is numerically singular (candidate is skipped).
    double trial_objective(int candidate) const;

    /// Scores candidates (all remaining, or a seeded subsample), commits the
    /// argmin and refits. Throws NumericalError when no candidate is
    /// admissible. Ties break toward the lowest training index.
    std::pair<int, double> forward_step();

    /// Tentatively removes each import vector with a one-step refit; commits
    /// the best removal when it does not increase the objective beyond a
    /// 1e-6 relative slack. Returns the removed index, if any.
    std::optional<int> backward_step();

    /// Full selection loop: forward (+ backward) until the probe fires, the
    /// cap is reached, candidates run out, or greedy stops improving.
    TrainReport run();

    const std::vector<int>& import_indices() const { return iv_; }
    const IrlsState& state() const { return *state_; }
    double objective_value() const { return state_->objective_value(); }
    Eigen::Index num_samples() const { return features_.rows(); }
    int effective_max_iv() const { return max_iv_; }

    /// Snapshot of the current classifier (feature rows copied out).
    IvmModel to_model(const std::vector<std::string>& class_names, int num_classes,
                      const std::optional<NormalizationStats>& stats) const;

private:
    // Per-class factorization of the current normal matrix plus the vectors
    // a bordered one-step trial solve needs; rebuilt when the state moves.
    struct TrialCache {
        Eigen::LLT<Matrix> llt;  // H_k = 1/N K_V' R_k K_V + lambda K_R (+ jitter)
        Vector w;                // H_k^{-1} u_k with u_k = 1/N K_V' R_k z_k
        Vector r;                // weights
        Vector rz;               // r .* z
    };

    void refresh_trial_cache() const;
    Vector kernel_column(int candidate) const;
    std::vector<int> candidate_pool();

    Matrix features_;  // N x M
    Matrix targets_;   // N x C
    TrainConfig cfg_;
    int max_iv_ = 0;
    std::vector<int> iv_;
    std::vector<char> in_set_;
    std::optional<IrlsState> state_;
    std::mt19937_64 rng_;
    mutable std::vector<TrialCache> trial_cache_;
    mutable bool trial_cache_valid_ = false;
};

/// Trains an IVM classifier on a labeled dataset (Algorithm-1 style greedy
/// selection). The dataset must hold at least one sample of every class.
IvmModel train(const LabeledDataset& dataset, const TrainConfig& config,
               TrainReport* report = nullptr);

}  // namespace ivm
