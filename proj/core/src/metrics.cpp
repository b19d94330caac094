#include "ivm/metrics.hpp"

#include <stdexcept>

namespace ivm {

ConfusionMatrix confusion(const Eigen::Ref<const Eigen::VectorXi>& truth,
                          const Eigen::Ref<const Eigen::VectorXi>& predicted,
                          int num_classes) {
    if (truth.size() != predicted.size()) {
        throw std::invalid_argument("confusion: length mismatch");
    }
    if (truth.size() == 0) throw std::invalid_argument("confusion: empty inputs");
    int k = num_classes;
    if (k == 0) k = std::max(truth.maxCoeff(), predicted.maxCoeff());
    ConfusionMatrix cm;
    cm.counts = Eigen::MatrixXi::Zero(k, k);
    for (Eigen::Index i = 0; i < truth.size(); ++i) {
        const int t = truth[i];
        const int p = predicted[i];
        if (t < 1 || t > k || p < 1 || p > k) {
            throw std::invalid_argument("confusion: label out of range at index " +
                                        std::to_string(i));
        }
        ++cm.counts(t - 1, p - 1);
    }
    return cm;
}

AccuracySummary oa_aa_kappa(const ConfusionMatrix& cm) {
    const long total = cm.total();
    if (total <= 0) throw std::invalid_argument("oa_aa_kappa: empty confusion matrix");
    const int k = cm.num_classes();

    AccuracySummary s;
    long diag = 0;
    for (int i = 0; i < k; ++i) diag += cm.counts(i, i);
    s.oa = static_cast<double>(diag) / static_cast<double>(total);

    double recall_sum = 0.0;
    for (int i = 0; i < k; ++i) {
        const long row = cm.counts.row(i).sum();
        if (row == 0) {
            throw std::invalid_argument("oa_aa_kappa: class " + std::to_string(i + 1) +
                                        " has no truth samples (AA undefined)");
        }
        recall_sum += static_cast<double>(cm.counts(i, i)) / static_cast<double>(row);
    }
    s.aa = recall_sum / k;

    double p_e = 0.0;
    for (int i = 0; i < k; ++i) {
        const double row = static_cast<double>(cm.counts.row(i).sum());
        const double col = static_cast<double>(cm.counts.col(i).sum());
        p_e += row * col;
    }
    p_e /= static_cast<double>(total) * static_cast<double>(total);
    if (p_e >= 1.0) {
        s.kappa = 0.0;  // agreement cannot exceed chance in a single-cell table
        s.kappa_degenerate = true;
    } else {
        s.kappa = (s.oa - p_e) / (1.0 - p_e);
    }
    return s;
}

std::optional<RejectionPoint> rejection_point(const Eigen::Ref<const Matrix>& probs,
                                              const Eigen::Ref<const Eigen::VectorXi>& truth,
                                              double threshold) {
    if (probs.rows() != truth.size()) {
        throw std::invalid_argument("rejection_point: probs/truth length mismatch");
    }
    long retained = 0;
    long correct = 0;
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        Eigen::Index arg = 0;
        const double top = probs.row(i).maxCoeff(&arg);
        if (top < threshold) continue;
        ++retained;
        if (static_cast<int>(arg) + 1 == truth[i]) ++correct;
    }
    if (retained == 0) return std::nullopt;
    RejectionPoint pt;
    pt.threshold = threshold;
    pt.retained = retained;
    pt.rejection_rate =
        1.0 - static_cast<double>(retained) / static_cast<double>(probs.rows());
    pt.oa = static_cast<double>(correct) / static_cast<double>(retained);
    return pt;
}

RejectionCurve rejection_curve(const Eigen::Ref<const Matrix>& probs,
                               const Eigen::Ref<const Eigen::VectorXi>& truth,
                               const std::vector<double>& thresholds) {
    for (size_t i = 1; i < thresholds.size(); ++i) {
        if (!(thresholds[i] > thresholds[i - 1])) {
            throw std::invalid_argument("rejection_curve: thresholds must be ascending");
        }
    }
    RejectionCurve curve;
    for (double tau : thresholds) {
        const auto pt = rejection_point(probs, truth, tau);
        if (!pt) continue;
        if (!curve.points.empty() &&
            !(pt->rejection_rate > curve.points.back().rejection_rate)) {
            continue;  // collapse duplicates; rates stay strictly increasing
        }
        curve.points.push_back(*pt);
    }
    return curve;
}

std::vector<double> default_rejection_grid() {
    std::vector<double> grid;
    for (int i = 0; i < 10; ++i) grid.push_back(0.1 * i);
    return grid;
}

}  // namespace ivm
