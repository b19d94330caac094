#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ivm/data.hpp"
#include "ivm/kernel.hpp"

namespace ivm {

/// Ordered subset of training samples serving as the sparse kernel basis.
/// X_V keeps its own copy of the feature rows, so a model stays valid when
/// training rows are later dropped.
struct ImportVectorSet {
    std::vector<int> indices;  // positions in the training set at selection time
    Matrix X_V;                // V x M feature rows

    Eigen::Index size() const { return X_V.rows(); }
};

/// The deployable sparse kernel logistic regression classifier.
struct IvmModel {
    ImportVectorSet import_vectors;
    Matrix alpha;  // V x C; C = 1 in binary (K = 2) mode, else C = K
    KernelParams kernel_params;
    double lambda = 0.0;
    int num_classes = 0;
    std::vector<std::string> class_names;
    std::optional<NormalizationStats> stats;  // z-score params for raw inputs

    // training meta
    int num_training_samples = 0;
    double final_objective = 0.0;

    Eigen::Index num_import_vectors() const { return import_vectors.size(); }
    Eigen::Index feature_dim() const { return import_vectors.X_V.cols(); }
};

struct Prediction {
    Matrix probs;           // N x K (binary mode expanded to two columns)
    Eigen::VectorXi labels; // N, in [1..K]
};

/// Probabilities and argmax labels for pre-normalized feature rows.
Prediction predict(const IvmModel& model, const Eigen::Ref<const Matrix>& X);

// Binary model file, little-endian. Layout (see README for the field-level
// description): magic "IVMM", u32 version, u32 K, u32 M, u32 V, f64 gamma,
// f64 lambda, K class names as (u32 length, bytes), u8 has_stats followed by
// M+M f64 mean/std when set, X_V as V*M f64 row-major, u32 alpha_cols,
// alpha as V*alpha_cols f64 column-major, u32 n_train, f64 q_final.
// Round-trips are lossless at float64.
void save_model(const IvmModel& model, const std::filesystem::path& path);
IvmModel load_model(const std::filesystem::path& path);

}  // namespace ivm
