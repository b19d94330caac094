#pragma once

#include <vector>

#include "ivm/kernel.hpp"

namespace ivm::drf {

enum class Neighborhood { FourConnected, EightConnected };

/// Potts random field over the image lattice. `unary` holds -log p(y_j|x_j)
/// per pixel and class (pixel-major, K entries per pixel, probabilities
/// clamped upstream so every entry is finite and >= 0).
struct LatticeProblem {
    int height = 0;
    int width = 0;
    int num_classes = 0;
    std::vector<double> unary;  // size H*W*K, index pixel * K + (class-1)
    double beta = 0.0;
    Neighborhood neighborhood = Neighborhood::FourConnected;

    double unary_at(int pixel, int label) const {
        return unary[static_cast<size_t>(pixel) * num_classes + (label - 1)];
    }
    int num_pixels() const { return height * width; }
    void validate() const;
};

struct Labeling {
    int height = 0;
    int width = 0;
    std::vector<int> labels;  // row-major, in [1..K]
};

/// Builds the lattice problem from per-pixel class probabilities
/// (H*W x K, row-major pixel order).
LatticeProblem lattice_from_probs(const Eigen::Ref<const Matrix>& probs, int height,
                                  int width, double beta,
                                  Neighborhood neighborhood = Neighborhood::FourConnected);

/// Energy in the model's convention:
///   E(y) = sum_j unary_j(y_j) - beta * #(neighbor pairs with equal labels),
/// each unordered pair counted once.
double energy(const LatticeProblem& problem, const Labeling& labeling);

/// Per-pixel argmin of the unaries (equivalently argmax of probabilities).
Labeling argmin_unary_labeling(const LatticeProblem& problem);

/// MAP inference. K = 2 is solved as a single binary min-cut (global
/// optimum, the binary Potts energy is submodular); K >= 3 runs
/// alpha-expansion sweeps from the unary argmin until a full sweep changes
/// nothing (at most 20 sweeps). The result never has higher energy than the
/// unary argmin labeling.
Labeling infer(const LatticeProblem& problem);

}  // namespace ivm::drf
