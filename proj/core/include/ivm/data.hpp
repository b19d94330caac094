#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ivm/kernel.hpp"

namespace ivm {

/// H x W image cube with B spectral bands, stored band-sequential
/// (band b is an H x W row-major plane).
struct HyperCube {
    int height = 0;
    int width = 0;
    int bands = 0;
    std::vector<float> values;  // size height * width * bands

    float at(int row, int col, int band) const {
        return values[static_cast<size_t>(band) * height * width +
                      static_cast<size_t>(row) * width + col];
    }
    float& at(int row, int col, int band) {
        return values[static_cast<size_t>(band) * height * width +
                      static_cast<size_t>(row) * width + col];
    }
    int num_pixels() const { return height * width; }

    /// Pixels as rows of an (H*W) x B matrix, row-major pixel order.
    Matrix pixel_matrix() const;
};

/// H x W label image; 0 = unlabeled, 1..K = class.
struct LabelRaster {
    int height = 0;
    int width = 0;
    std::vector<int> labels;  // row-major

    int at(int row, int col) const { return labels[static_cast<size_t>(row) * width + col]; }
    int& at(int row, int col) { return labels[static_cast<size_t>(row) * width + col]; }
    int max_label() const;
};

/// Per-band z-score statistics, computed on training pixels only.
struct NormalizationStats {
    Vector mean;
    Vector stddev;  // floored at 1e-12 for constant bands

    Matrix apply(const Eigen::Ref<const Matrix>& raw) const;
    Matrix invert(const Eigen::Ref<const Matrix>& normalized) const;
};

/// Flat training set: features (rows) with labels in [1..K].
struct LabeledDataset {
    Matrix features;        // N x M, normalized when stats is set
    Eigen::VectorXi labels; // N, in [1..K]
    int num_classes = 0;
    std::vector<std::string> class_names;
    std::optional<NormalizationStats> stats;
    /// Row-major pixel index of each sample in the source raster, or -1
    /// for samples without a spatial origin (e.g. CSV input).
    std::vector<int> pixel_ids;

    Eigen::Index size() const { return features.rows(); }
    std::vector<int> class_counts() const;
    void validate() const;  // every class in [1..K] must have >= 1 sample
};

// ---------------------------------------------------------------------------
// File formats.
//
// Cube: magic "HCUB", then version, H, W, B as unsigned 32-bit little-endian,
// then float32 samples band-sequential. A sidecar "<stem>.classes.txt" with
// one class name per line is read when present.
// Labels: PGM (P5, maxval <= 255) or CSV; 0 is reserved for unlabeled.
// CSV dataset: header "label,band_1,..,band_B", one row per labeled pixel.
// ---------------------------------------------------------------------------

HyperCube load_cube(const std::filesystem::path& path);
void save_cube(const HyperCube& cube, const std::filesystem::path& path);

LabelRaster load_labels(const std::filesystem::path& path);  // .pgm or .csv
void save_labels_pgm(const LabelRaster& raster, const std::filesystem::path& path);

/// Loads a cube and a label raster together, cross-checking dimensions.
std::pair<HyperCube, LabelRaster> load(const std::filesystem::path& cube_path,
                                       const std::filesystem::path& labels_path);

std::vector<std::string> load_class_names_sidecar(const std::filesystem::path& cube_path);
void save_class_names_sidecar(const std::vector<std::string>& names,
                              const std::filesystem::path& cube_path);

LabeledDataset load_dataset_csv(const std::filesystem::path& path);
void save_dataset_csv(const LabeledDataset& dataset, const std::filesystem::path& path);

/// Collects the labeled pixels of the raster into a dataset, z-scoring each
/// band with statistics from those pixels when `normalize` is on.
LabeledDataset extract_training(const HyperCube& cube, const LabelRaster& labels,
                                bool normalize = true);

/// Per class, keeps ceil(fraction * n_k) samples floored at
/// min(min_per_class, n_k), sampled without replacement. Order-preserving.
LabeledDataset stratified_subsample(const LabeledDataset& dataset, double fraction,
                                    int min_per_class, uint64_t seed);

/// Synthetic raster generator: classes are spatially contiguous Voronoi
/// blobs; features are isotropic Gaussian clusters with pairwise mean
/// distance `separation`. Used as the desk-scale experiment stand-in.
struct SynthSpec {
    int classes = 3;
    int height = 64;
    int width = 64;
    int bands = 4;
    double separation = 3.0;   // distance between any two class means
    double noise_sigma = 1.0;  // per-band feature noise
    int labeled_per_class = 10;
    uint64_t seed = 0;
    std::optional<Matrix> means;  // K x B override; auto-placed when absent
};

struct SynthResult {
    HyperCube cube;
    LabelRaster training_labels;  // sparse: labeled_per_class per class
    LabelRaster truth;            // dense ground truth
};

SynthResult synthesize(const SynthSpec& spec);

/// Closed-form Bayes overall accuracy for two isotropic Gaussian classes
/// with equal priors: Phi(separation / (2 sigma)).
double two_class_bayes_oa(double separation, double noise_sigma);

}  // namespace ivm
