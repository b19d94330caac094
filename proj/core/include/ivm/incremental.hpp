#pragma once

#include <string>
#include <vector>

#include "ivm/ivm_train.hpp"

namespace ivm {

/// Sherman-Morrison-Woodbury update of a cached inverse:
/// returns (A + scale * U' diag(w) U)^{-1} given A^{-1}, with U (r x n) and
/// w (r); the only new inverse taken is the r x r inner system
/// diag(1/(scale*w)) + U A^{-1} U'. Negative scale*w entries downdate.
/// Throws NumericalError when the inner system is singular.
Matrix smw_updated_inverse(const Eigen::Ref<const Matrix>& A_inv,
                           const Eigen::Ref<const Matrix>& U,
                           const Eigen::Ref<const Vector>& w_diag, double scale);

/// Weighted hat-matrix diagonal l = diag(K (K' R K)^{-1} K' R) for rows K
/// (J x V) with per-row weights r (the diagonal of R). Values in [0, 1];
/// entries numerically >= 1 are clamped to 1 - 1e-9 and reported through
/// `dominant`. Throws NumericalError when the weighted Gram matrix stays
/// singular after jitter.
Vector weighted_leverage(const Eigen::Ref<const Matrix>& k_rows,
                         const Eigen::Ref<const Vector>& row_weights,
                         std::vector<int>* dominant = nullptr);

enum class RowOrigin { Initial, Acquired };

struct RowProvenance {
    RowOrigin origin = RowOrigin::Initial;
    int iteration = 0;  // self-training iteration for acquired rows
};

/// Cook's-distance report over the current training rows.
struct CooksReport {
    Vector distance;   // d_n >= 0
    Vector leverage;   // l_n in [0, 1)
    int parameter_count = 0;  // a: total coefficient count
    double mse = 0.0;
    std::vector<int> dominant;  // rows whose leverage hit the 1 - 1e-9 clamp
};

/// Trained IVM plus the training block it was fitted on, supporting
/// rank-dN coefficient updates without retraining from scratch. The
/// per-class inverse of the normal matrix A = 1/N K_V' R_k K_V + lambda K_R
/// is cached and kept coherent after every committed operation.
class IncrementalState {
public:
    /// The model's import vectors must be rows of `initial` (matched
    /// exactly); `config` supplies kernel, lambda, refit and refresh knobs.
    IncrementalState(const LabeledDataset& initial, const IvmModel& model,
                     TrainConfig config);

    /// Adds labeled rows: one Newton step at the enlarged problem via the
    /// SMW identity (dN x dN inner solve against the cached inverses), then
    /// IRLS refinement to convergence. Appending rows never alters K_R.
    /// `source_pixels`, when given, records the raster origin of each row.
    void add_samples(const Eigen::Ref<const Matrix>& X_new,
                     const Eigen::Ref<const Eigen::VectorXi>& y_new,
                     int iteration = 0, const std::vector<int>& source_pixels = {});

    /// Removes training rows via the sign-flipped SMW downdate, then
    /// refines. Rows must not be import vectors, and at least one sample of
    /// every class must remain.
    void remove_samples(std::vector<int> rows);

    CooksReport cooks_distances() const;

    /// Greedy backward deletion of the lowest-distance rows until the next
    /// removal would push Q above 1.05 * Q at entry (that removal is rolled
    /// back). Import vectors and last-of-class rows are never candidates.
    /// Returns the number of rows removed.
    int prune();

    /// Forward/backward stepwise selection over the current rows starting
    /// from the existing import set (terminates on the epsilon probe).
    void refresh_import_vectors();

    IvmModel to_model() const;

    const Matrix& features() const { return features_; }
    const Eigen::VectorXi& labels() const { return labels_; }
    const std::vector<RowProvenance>& provenance() const { return provenance_; }
    const std::vector<int>& pixel_ids() const { return pixel_ids_; }
    const std::vector<int>& import_indices() const { return import_indices_; }
    const Matrix& import_features() const { return x_v_; }
    const IrlsState& irls() const { return *state_; }
    double objective_value() const { return state_->objective_value(); }
    int num_training() const { return static_cast<int>(features_.rows()); }
    int num_classes() const { return num_classes_; }
    const TrainConfig& config() const { return cfg_; }
    const std::optional<NormalizationStats>& stats() const { return stats_; }

    int initial_count() const { return initial_count_; }
    int acquired_count() const { return acquired_count_; }
    int removed_count() const { return removed_count_; }

    /// Frobenius-relative deviation of A * A_inv from identity (max over
    /// classes) against the normal matrix of the current state.
    double cache_deviation() const;

    /// Warnings emitted by fallback paths (e.g. singular SMW inner system).
    const std::vector<std::string>& warnings() const { return warnings_; }

private:
    void rebuild_inverse_cache();
    std::vector<Matrix> normal_matrices() const;  // per class, with jitter
    Matrix expanded_probs() const;    // binary column expanded to two classes
    Matrix expanded_targets() const;

    Matrix features_;
    Eigen::VectorXi labels_;
    Matrix targets_;
    std::vector<RowProvenance> provenance_;
    std::vector<int> pixel_ids_;
    std::vector<int> import_indices_;  // rows of features_ serving as basis
    Matrix x_v_;                       // import-vector feature rows
    std::optional<IrlsState> state_;
    std::vector<Matrix> a_inv_;  // per-class cached inverse of the normal matrix
    TrainConfig cfg_;
    int num_classes_ = 0;
    std::vector<std::string> class_names_;
    std::optional<NormalizationStats> stats_;
    int initial_count_ = 0;
    int acquired_count_ = 0;
    int removed_count_ = 0;
    std::vector<std::string> warnings_;

    friend class IncrementalSnapshot;
};

}  // namespace ivm
