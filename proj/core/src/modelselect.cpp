#include "ivm/modelselect.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "ivm/errors.hpp"
#include "ivm/metrics.hpp"

namespace ivm {

CvPlan default_cv_plan() {
    CvPlan plan;
    for (int e = -8; e <= 2; ++e) plan.gamma_grid.push_back(std::pow(2.0, e));
    plan.lambda_grid = {1e-5, 1e-4, 1e-3, 1e-2, 1e-1};
    plan.beta_grid = {0.0, 0.25, 0.5, 1.0, 2.0, 4.0};
    return plan;
}

std::vector<int> kfold_split(int n, int k, const Eigen::Ref<const Eigen::VectorXi>& labels,
                             uint64_t seed) {
    if (k < 2) throw std::invalid_argument("kfold_split: need k >= 2");
    if (labels.size() != n) throw std::invalid_argument("kfold_split: label count mismatch");
    std::vector<std::vector<int>> by_class;
    for (int i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 1) throw std::invalid_argument("kfold_split: labels must be >= 1");
        if (y > static_cast<int>(by_class.size())) by_class.resize(static_cast<size_t>(y));
        by_class[static_cast<size_t>(y) - 1].push_back(i);
    }
    std::mt19937_64 rng(seed);
    std::vector<int> fold(static_cast<size_t>(n), 0);
    for (auto& rows : by_class) {
        std::shuffle(rows.begin(), rows.end(), rng);
        for (size_t j = 0; j < rows.size(); ++j) {
            fold[static_cast<size_t>(rows[j])] = static_cast<int>(j % static_cast<size_t>(k));
        }
    }
    return fold;
}

namespace {

LabeledDataset subset(const LabeledDataset& dataset, const std::vector<int>& rows) {
    LabeledDataset out;
    out.features.resize(static_cast<Eigen::Index>(rows.size()), dataset.features.cols());
    out.labels.resize(static_cast<Eigen::Index>(rows.size()));
    for (size_t i = 0; i < rows.size(); ++i) {
        out.features.row(static_cast<Eigen::Index>(i)) = dataset.features.row(rows[i]);
        out.labels[static_cast<Eigen::Index>(i)] = dataset.labels[rows[i]];
    }
    out.num_classes = dataset.num_classes;
    out.class_names = dataset.class_names;
    out.stats = dataset.stats;
    out.pixel_ids.assign(rows.size(), -1);
    return out;
}

bool has_all_classes(const LabeledDataset& dataset) {
    const auto counts = dataset.class_counts();
    return std::all_of(counts.begin(), counts.end(), [](int c) { return c > 0; });
}

}  // namespace

GridSearchResult grid_search(const LabeledDataset& dataset, const CvPlan& plan,
                             const TrainConfig& base_config) {
    dataset.validate();
    if (plan.gamma_grid.empty() || plan.lambda_grid.empty()) {
        throw std::invalid_argument("grid_search: empty grid");
    }
    const int n = static_cast<int>(dataset.size());
    const std::vector<int> fold = kfold_split(n, plan.k, dataset.labels, plan.seed);

    // Materialize fold splits once.
    std::vector<std::vector<int>> train_rows(static_cast<size_t>(plan.k));
    std::vector<std::vector<int>> val_rows(static_cast<size_t>(plan.k));
    for (int i = 0; i < n; ++i) {
        for (int f = 0; f < plan.k; ++f) {
            (fold[i] == f ? val_rows[f] : train_rows[f]).push_back(i);
        }
    }

    GridSearchResult result;
    double best_score = -std::numeric_limits<double>::infinity();
    for (double gamma : plan.gamma_grid) {
        for (double lambda : plan.lambda_grid) {
            CvCell cell;
            cell.gamma = gamma;
            cell.lambda = lambda;
            double acc = 0.0;
            int used = 0;
            for (int f = 0; f < plan.k; ++f) {
                LabeledDataset train_split = subset(dataset, train_rows[static_cast<size_t>(f)]);
                LabeledDataset val_split = subset(dataset, val_rows[static_cast<size_t>(f)]);
                if (!has_all_classes(train_split) || val_split.size() == 0) {
                    result.warnings.push_back(
                        "grid_search: fold " + std::to_string(f) +
                        " skipped (missing class in training split)");
                    cell.fold_oa.push_back(std::numeric_limits<double>::quiet_NaN());
                    continue;
                }
                TrainConfig config = base_config;
                config.kernel.gamma = gamma;
                config.lambda = lambda;
                config.seed = plan.seed + static_cast<uint64_t>(f);
                const IvmModel model = train(train_split, config);
                const Prediction pred = predict(model, val_split.features);
                const auto summary =
                    oa_aa_kappa(confusion(val_split.labels, pred.labels, dataset.num_classes));
                cell.fold_oa.push_back(summary.oa);
                acc += summary.oa;
                ++used;
            }
            if (used == 0) {
                throw NumericalError("grid_search: every fold skipped for gamma=" +
                                     std::to_string(gamma) +
                                     ", lambda=" + std::to_string(lambda));
            }
            cell.mean_oa = acc / used;
            result.table.push_back(cell);

            // Argmax with ties toward the smoother model: larger lambda,
            // then larger gamma.
            const bool better =
                cell.mean_oa > best_score ||
                (cell.mean_oa == best_score &&
                 (lambda > result.best_lambda ||
                  (lambda == result.best_lambda && gamma > result.best_gamma)));
            if (better) {
                best_score = cell.mean_oa;
                result.best_gamma = gamma;
                result.best_lambda = lambda;
            }
        }
    }
    return result;
}

BetaSearchResult select_beta(const HyperCube& cube, const LabelRaster& labeled,
                             const IvmModel& model, const std::vector<double>& beta_grid,
                             int k, drf::Neighborhood neighborhood) {
    if (beta_grid.empty()) throw std::invalid_argument("select_beta: empty beta grid");
    if (k < 2) throw std::invalid_argument("select_beta: need k >= 2");
    if (labeled.height != cube.height || labeled.width != cube.width) {
        throw DataError("select_beta: raster dimensions do not match cube");
    }

    Matrix pixels = cube.pixel_matrix();
    if (model.stats) pixels = model.stats->apply(pixels);
    const Prediction pred = predict(model, pixels);

    // Checkerboard tiles assigned round-robin to folds; pixel-wise folds
    // would leak neighborhood information.
    const int tile = std::max(2, std::min(cube.height, cube.width) / (2 * k));
    auto fold_of = [&](int r, int c) {
        const int tr = r / tile;
        const int tc = c / tile;
        return (tr * 7919 + tc) % k;  // spread tiles across folds
    };

    BetaSearchResult result;
    double best_score = -std::numeric_limits<double>::infinity();
    for (double beta : beta_grid) {
        const drf::LatticeProblem problem =
            drf::lattice_from_probs(pred.probs, cube.height, cube.width, beta, neighborhood);
        const drf::Labeling labeling = drf::infer(problem);

        BetaCell cell;
        cell.beta = beta;
        double acc = 0.0;
        int used = 0;
        for (int f = 0; f < k; ++f) {
            long correct = 0;
            long total = 0;
            for (int r = 0; r < cube.height; ++r) {
                for (int c = 0; c < cube.width; ++c) {
                    const int truth = labeled.at(r, c);
                    if (truth == 0 || fold_of(r, c) != f) continue;
                    ++total;
                    if (labeling.labels[r * cube.width + c] == truth) ++correct;
                }
            }
            if (total == 0) {
                cell.fold_oa.push_back(std::numeric_limits<double>::quiet_NaN());
                continue;
            }
            const double oa = static_cast<double>(correct) / static_cast<double>(total);
            cell.fold_oa.push_back(oa);
            acc += oa;
            ++used;
        }
        if (used == 0) throw DataError("select_beta: no labeled pixels in any fold");
        cell.mean_oa = acc / used;
        result.table.push_back(cell);
        if (cell.mean_oa > best_score) {  // ties keep the smaller (earlier) beta
            best_score = cell.mean_oa;
            result.best_beta = beta;
        }
    }
    return result;
}

}  // namespace ivm
