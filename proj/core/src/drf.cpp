#include "ivm/drf.hpp"

#include <cmath>
#include <stdexcept>

#include "ivm/klr.hpp"
#include "ivm/maxflow.hpp"

namespace ivm::drf {

namespace {

// Pairwise energies enter the cut graph as fixed-point integers so the
// residual-flow arithmetic stays exact.
constexpr double kCapacityScale = 1e6;

int64_t to_capacity(double v) { return std::llround(v * kCapacityScale); }

// Unordered neighbor pairs of the lattice, each emitted once.
template <typename Fn>
void for_each_pair(const LatticeProblem& problem, Fn&& fn) {
    const int h = problem.height;
    const int w = problem.width;
    const bool eight = problem.neighborhood == Neighborhood::EightConnected;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const int p = r * w + c;
            if (c + 1 < w) fn(p, p + 1);
            if (r + 1 < h) fn(p, p + w);
            if (eight && r + 1 < h && c + 1 < w) fn(p, p + w + 1);
            if (eight && r + 1 < h && c > 0) fn(p, p + w - 1);
        }
    }
}

}  // namespace

void LatticeProblem::validate() const {
    if (height < 1 || width < 1) throw std::invalid_argument("lattice: empty grid");
    if (num_classes < 2) throw std::invalid_argument("lattice: need K >= 2");
    if (beta < 0.0) throw std::invalid_argument("lattice: beta must be >= 0");
    if (unary.size() != static_cast<size_t>(num_pixels()) * num_classes) {
        throw std::invalid_argument("lattice: unary field size mismatch");
    }
    for (double u : unary) {
        if (!(u >= 0.0) || !std::isfinite(u)) {
            throw std::invalid_argument("lattice: unaries must be finite and >= 0");
        }
    }
}

LatticeProblem lattice_from_probs(const Eigen::Ref<const Matrix>& probs, int height,
                                  int width, double beta, Neighborhood neighborhood) {
    if (probs.rows() != static_cast<Eigen::Index>(height) * width) {
        throw std::invalid_argument("lattice_from_probs: probs rows must equal H*W");
    }
    LatticeProblem problem;
    problem.height = height;
    problem.width = width;
    problem.num_classes = static_cast<int>(probs.cols());
    problem.beta = beta;
    problem.neighborhood = neighborhood;
    problem.unary.resize(static_cast<size_t>(probs.size()));
    for (Eigen::Index p = 0; p < probs.rows(); ++p) {
        for (Eigen::Index k = 0; k < probs.cols(); ++k) {
            const double pr = std::min(std::max(probs(p, k), kProbClamp), 1.0 - kProbClamp);
            problem.unary[static_cast<size_t>(p) * probs.cols() + k] = -std::log(pr);
        }
    }
    problem.validate();
    return problem;
}

double energy(const LatticeProblem& problem, const Labeling& labeling) {
    problem.validate();
    if (labeling.height != problem.height || labeling.width != problem.width ||
        static_cast<int>(labeling.labels.size()) != problem.num_pixels()) {
        throw std::invalid_argument("energy: labeling dimensions mismatch");
    }
    double total = 0.0;
    for (int p = 0; p < problem.num_pixels(); ++p) {
        const int y = labeling.labels[p];
        if (y < 1 || y > problem.num_classes) {
            throw std::invalid_argument("energy: label out of range at pixel " +
                                        std::to_string(p));
        }
        total += problem.unary_at(p, y);
    }
    long equal_pairs = 0;
    for_each_pair(problem, [&](int p, int q) {
        if (labeling.labels[p] == labeling.labels[q]) ++equal_pairs;
    });
    return total - problem.beta * static_cast<double>(equal_pairs);
}

Labeling argmin_unary_labeling(const LatticeProblem& problem) {
    problem.validate();
    Labeling out;
    out.height = problem.height;
    out.width = problem.width;
    out.labels.resize(static_cast<size_t>(problem.num_pixels()));
    for (int p = 0; p < problem.num_pixels(); ++p) {
        int best = 1;
        double best_u = problem.unary_at(p, 1);
        for (int k = 2; k <= problem.num_classes; ++k) {
            const double u = problem.unary_at(p, k);
            if (u < best_u) {
                best_u = u;
                best = k;
            }
        }
        out.labels[p] = best;
    }
    return out;
}

namespace {

// One alpha-expansion move: every pixel either keeps its current label or
// takes `alpha`; the optimal such configuration is a binary min-cut. Binary
// variable x_p = 0 keeps, x_p = 1 takes alpha; cut edges pay
// theta_p(0) on p->t, theta_p(1) on s->p, and the submodular pairwise
// remainder B + C - A - D on p->q (A = E(0,0), B = E(0,1), C = E(1,0),
// D = E(1,1), here the Potts costs of the resulting label pairs).
Labeling expansion_move(const LatticeProblem& problem, const Labeling& current,
                        int alpha) {
    const int n = problem.num_pixels();
    std::vector<double> theta0(static_cast<size_t>(n), 0.0);
    std::vector<double> theta1(static_cast<size_t>(n), 0.0);
    for (int p = 0; p < n; ++p) {
        theta0[p] = problem.unary_at(p, current.labels[p]);
        theta1[p] = problem.unary_at(p, alpha);
    }

    struct PairTerm {
        int p, q;
        double cap;  // B + C - A - D
    };
    std::vector<PairTerm> pair_terms;
    pair_terms.reserve(static_cast<size_t>(n) * 2);
    const double beta = problem.beta;
    for_each_pair(problem, [&](int p, int q) {
        const int yp = current.labels[p];
        const int yq = current.labels[q];
        const double a = yp != yq ? beta : 0.0;
        const double b = yp != alpha ? beta : 0.0;
        const double c = yq != alpha ? beta : 0.0;
        // D = 0 (both at alpha). Reparametrize: theta_p(0/1) += A/C,
        // theta_q(1) += D - C, edge cap = B + C - A - D >= 0 by the
        // Potts triangle inequality.
        theta0[p] += a;
        theta1[p] += c;
        theta1[q] += -c;
        const double cap = b + c - a;
        if (cap > 0.0) pair_terms.push_back({p, q, cap});
    });

    // Shift node costs to be non-negative before scaling to integers.
    FlowNetwork net(n + 2);
    const int source = n;
    const int sink = n + 1;
    for (int p = 0; p < n; ++p) {
        const double shift = std::min(theta0[p], theta1[p]);
        const int64_t c0 = to_capacity(theta0[p] - shift);
        const int64_t c1 = to_capacity(theta1[p] - shift);
        if (c1 > 0) net.add_edge(source, p, c1);
        if (c0 > 0) net.add_edge(p, sink, c0);
    }
    for (const PairTerm& t : pair_terms) {
        net.add_edge(t.p, t.q, to_capacity(t.cap));
    }
    net.max_flow(source, sink);

    Labeling next = current;
    for (int p = 0; p < n; ++p) {
        if (!net.on_source_side(p)) next.labels[p] = alpha;
    }
    return next;
}

}  // namespace

Labeling infer(const LatticeProblem& problem) {
    problem.validate();
    Labeling current = argmin_unary_labeling(problem);
    if (problem.beta == 0.0) return current;  // pixels decouple

    if (problem.num_classes == 2) {
        // Single cut from the all-ones labeling covers every binary
        // labeling, so the move optimum is the global optimum.
        Labeling ones = current;
        std::fill(ones.labels.begin(), ones.labels.end(), 1);
        Labeling cut = expansion_move(problem, ones, 2);
        // Integer-capacity rounding cannot make this worse than the unary
        // argmin in exact arithmetic; keep the better of the two in doubles.
        return energy(problem, cut) <= energy(problem, current) ? cut : current;
    }

    double current_energy = energy(problem, current);
    constexpr int kMaxSweeps = 20;
    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        bool changed = false;
        for (int alpha = 1; alpha <= problem.num_classes; ++alpha) {
            Labeling moved = expansion_move(problem, current, alpha);
            const double moved_energy = energy(problem, moved);
            if (moved_energy < current_energy && moved.labels != current.labels) {
                current = std::move(moved);
                current_energy = moved_energy;
                changed = true;
            }
        }
        if (!changed) break;
    }
    return current;
}

}  // namespace ivm::drf
