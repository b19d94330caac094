#pragma once

#include <string>
#include <vector>

#include "ivm/drf.hpp"
#include "ivm/ivm_train.hpp"

namespace ivm {

/// k-fold grid-search plan over (gamma, lambda), plus the beta grid for the
/// lattice weight. Scoring is held-out overall accuracy.
struct CvPlan {
    int k = 5;
    std::vector<double> gamma_grid;
    std::vector<double> lambda_grid;
    std::vector<double> beta_grid;
    uint64_t seed = 0;
};

/// Default grids on z-scored features: gamma 2^-8 .. 2^2 (11 log-spaced
/// values), lambda 1e-5 .. 1e-1 decades, beta {0, 0.25, 0.5, 1, 2, 4}.
CvPlan default_cv_plan();

/// Stratified fold assignment: per class, seeded shuffle then round-robin.
/// Per-class fold sizes differ by at most one. Returns the fold id of every
/// sample.
std::vector<int> kfold_split(int n, int k, const Eigen::Ref<const Eigen::VectorXi>& labels,
                             uint64_t seed);

struct CvCell {
    double gamma = 0.0;
    double lambda = 0.0;
    double mean_oa = 0.0;
    std::vector<double> fold_oa;   // NaN for skipped folds
};

struct GridSearchResult {
    double best_gamma = 0.0;
    double best_lambda = 0.0;
    std::vector<CvCell> table;  // |gamma grid| * |lambda grid| rows
    std::vector<std::string> warnings;
};

/// Trains one IVM per (gamma, lambda, fold) and returns the argmax of the
/// mean held-out OA; ties break toward larger lambda, then larger gamma.
/// Folds whose training split lacks a class are skipped with a warning; a
/// cell with every fold skipped is an error.
GridSearchResult grid_search(const LabeledDataset& dataset, const CvPlan& plan,
                             const TrainConfig& base_config);

struct BetaCell {
    double beta = 0.0;
    double mean_oa = 0.0;
    std::vector<double> fold_oa;
};

struct BetaSearchResult {
    double best_beta = 0.0;
    std::vector<BetaCell> table;
};

/// Cross-validates the lattice smoothing weight on spatially blocked folds
/// (checkerboard tiles) of the labeled pixels: for each beta the DRF runs on
/// the model's probability field and is scored per fold; the argmax of the
/// mean OA wins, ties toward smaller beta.
BetaSearchResult select_beta(const HyperCube& cube, const LabelRaster& labeled,
                             const IvmModel& model, const std::vector<double>& beta_grid,
                             int k, drf::Neighborhood neighborhood =
                                        drf::Neighborhood::FourConnected);

}  // namespace ivm
