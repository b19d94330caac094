#pragma once

#include <functional>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "ivm/drf.hpp"
#include "ivm/incremental.hpp"
#include "ivm/metrics.hpp"

namespace ivm {

/// Knobs of the acquisition step. Disagreement candidates must satisfy
/// floor <= max(p) < ceiling; shortfalls per class are filled first by
/// high-confidence agreement pixels, then by noisy duplicates of existing
/// training rows.
struct AcquisitionConfig {
    double uncertainty_ceiling = 0.5;
    double probability_floor = 0.1;
    int per_class_quota = 20;
    double noise_sigma_fraction = 0.01;
    int max_iterations = 20;
    uint64_t seed = 0;

    void validate() const;
};

enum class CandidateOrigin { Disagreement, AgreementBalance, Oversampled };

struct Candidate {
    int pixel = -1;
    int drf_label = 0;  // the training label a committed candidate receives
    Vector probs;
    double leverage = 0.0;
    CandidateOrigin origin = CandidateOrigin::Disagreement;
};
using CandidatePool = std::vector<Candidate>;

/// Pixels where the classifier and the lattice labeling disagree, the top
/// probability stays below the ceiling and at or above the floor. Pixels in
/// `excluded` (already training rows) never enter the pool.
CandidatePool acquire(const Eigen::Ref<const Matrix>& probs,
                      const Eigen::Ref<const Eigen::VectorXi>& ivm_labels,
                      const Eigen::Ref<const Eigen::VectorXi>& drf_labels,
                      const AcquisitionConfig& config,
                      const std::set<int>& excluded = {});

/// Fills each candidate's leverage against the current import vectors
/// (weights from the candidate's own DRF class) and sorts the pool
/// descending, highest influence first. Falls back to max(p)-ascending
/// order with a warning when the weighted Gram matrix is singular.
void leverage_rank(CandidatePool& pool, const Eigen::Ref<const Matrix>& pixel_features,
                   const IncrementalState& state,
                   std::vector<std::string>* warnings = nullptr);

struct ClassBatch {
    int label = 0;
    Matrix features;
    std::vector<CandidateOrigin> origins;
    std::vector<int> pixels;  // -1 for oversampled rows
};

/// Exactly per_class_quota rows per class: ranked disagreement candidates
/// first, then agreement pixels by max(p) descending, then seeded noisy
/// duplicates of existing class rows. Throws when a class has no training
/// rows to duplicate.
std::vector<ClassBatch> balance(const CandidatePool& pool,
                                const Eigen::Ref<const Matrix>& probs,
                                const Eigen::Ref<const Eigen::VectorXi>& ivm_labels,
                                const Eigen::Ref<const Eigen::VectorXi>& drf_labels,
                                const Eigen::Ref<const Matrix>& pixel_features,
                                const IncrementalState& state,
                                const AcquisitionConfig& config, std::mt19937_64& rng,
                                const std::set<int>& excluded);

struct SelfTrainConfig {
    AcquisitionConfig acquisition;
    double beta = 1.0;
    drf::Neighborhood neighborhood = drf::Neighborhood::FourConnected;
    bool prune_each_iteration = true;
};

struct IterationRecord {
    int iteration = 0;
    int added = 0;
    int pruned = 0;
    int n_train = 0;
    int n_iv = 0;
    double q = 0.0;
    std::optional<AccuracySummary> accuracy;  // when a truth raster is given
    bool all_oversampled = false;
};

struct SelfTrainReport {
    std::vector<IterationRecord> rows;
    std::vector<std::string> warnings;
};

/// The self-training loop: predict, smooth on the lattice, acquire, rank,
/// balance, update incrementally, prune, refresh the import set; repeat
/// until the pool empties, max_iterations is hit, or two consecutive
/// batches carried no information (oversampled rows only). Labels attached
/// to acquired samples always come from the lattice labeling, never from
/// `truth` (reporting only). `on_iteration` fires after every committed
/// iteration.
SelfTrainReport self_train(
    IncrementalState& state, const HyperCube& cube, const SelfTrainConfig& config,
    const LabelRaster* truth = nullptr,
    const std::function<void(const IterationRecord&)>& on_iteration = {});

}  // namespace ivm
