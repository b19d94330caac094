#pragma once

#include <optional>
#include <vector>

#include "ivm/kernel.hpp"

namespace ivm {

/// K x K tally; rows index ground truth, columns the predictions.
struct ConfusionMatrix {
    Eigen::MatrixXi counts;

    int num_classes() const { return static_cast<int>(counts.rows()); }
    long total() const { return counts.sum(); }
};

/// Tallies truth/prediction label pairs (labels in [1..K]). num_classes = 0
/// infers K from the data.
ConfusionMatrix confusion(const Eigen::Ref<const Eigen::VectorXi>& truth,
                          const Eigen::Ref<const Eigen::VectorXi>& predicted,
                          int num_classes = 0);

struct AccuracySummary {
    double oa = 0.0;     // trace / total
    double aa = 0.0;     // mean per-class recall
    double kappa = 0.0;  // Cohen's chance-corrected agreement
    bool kappa_degenerate = false;  // p_e = 1 (single occupied cell)
};

AccuracySummary oa_aa_kappa(const ConfusionMatrix& cm);

/// OA on the samples whose max probability reaches `threshold`; nullopt when
/// every sample is rejected. rejection_rate is the rejected fraction.
struct RejectionPoint {
    double threshold = 0.0;
    double rejection_rate = 0.0;
    double oa = 0.0;
    long retained = 0;
};
std::optional<RejectionPoint> rejection_point(const Eigen::Ref<const Matrix>& probs,
                                              const Eigen::Ref<const Eigen::VectorXi>& truth,
                                              double threshold);

/// Accuracy as a function of the rejection rate. Points with 100% rejection
/// are omitted and duplicate rejection rates collapse to the first
/// occurrence, so rates are strictly increasing.
struct RejectionCurve {
    std::vector<RejectionPoint> points;
};
RejectionCurve rejection_curve(const Eigen::Ref<const Matrix>& probs,
                               const Eigen::Ref<const Eigen::VectorXi>& truth,
                               const std::vector<double>& thresholds);

/// The default threshold grid 0.0, 0.1, .., 0.9.
std::vector<double> default_rejection_grid();

}  // namespace ivm
