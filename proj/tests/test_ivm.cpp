#include <doctest.h>

#include <filesystem>
#include <random>
#include <set>

#include "ivm/errors.hpp"
#include "ivm/ivm_train.hpp"
#include "support/oracles.hpp"

using ivm::IvmModel;
using ivm::IvmTrainer;
using ivm::Matrix;
using ivm::TrainConfig;
using ivm::Vector;

namespace {

// Two Gaussian blobs in 2-D, labels 1/2.
ivm::LabeledDataset gaussian_pair(int per_class, double separation, uint64_t seed) {
    ivm::LabeledDataset ds;
    const int n = 2 * per_class;
    ds.features.resize(n, 2);
    ds.labels.resize(n);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    for (int i = 0; i < n; ++i) {
        const int cls = i % 2;
        ds.features(i, 0) = g(rng) + (cls == 0 ? -separation / 2 : separation / 2);
        ds.features(i, 1) = g(rng);
        ds.labels[i] = cls + 1;
    }
    ds.num_classes = 2;
    ds.class_names = {"left", "right"};
    ds.pixel_ids.assign(static_cast<size_t>(n), -1);
    return ds;
}

ivm::LabeledDataset gaussian_triple(int per_class, double separation, uint64_t seed) {
    ivm::LabeledDataset ds;
    const int n = 3 * per_class;
    ds.features.resize(n, 2);
    ds.labels.resize(n);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    const double centers[3][2] = {{-separation, 0.0}, {separation, 0.0}, {0.0, separation}};
    for (int i = 0; i < n; ++i) {
        const int cls = i % 3;
        ds.features(i, 0) = g(rng) + centers[cls][0];
        ds.features(i, 1) = g(rng) + centers[cls][1];
        ds.labels[i] = cls + 1;
    }
    ds.num_classes = 3;
    ds.class_names = {"a", "b", "c"};
    ds.pixel_ids.assign(static_cast<size_t>(n), -1);
    return ds;
}

TrainConfig small_config(double gamma = 0.5, double lambda = 1e-3) {
    TrainConfig config;
    config.kernel.gamma = gamma;
    config.lambda = lambda;
    return config;
}

// Independent re-implementation of the one-step trial: dense solve against
// the scalar-kernel blocks, no Schur shortcut.
double naive_trial(const Matrix& features, const Matrix& targets, double gamma,
                   double lambda, const std::vector<int>& iv, const Matrix& alpha,
                   int candidate) {
    std::vector<int> enlarged = iv;
    enlarged.push_back(candidate);
    const auto v1 = static_cast<Eigen::Index>(enlarged.size());
    Matrix x_v(v1, features.cols());
    for (Eigen::Index i = 0; i < v1; ++i) x_v.row(i) = features.row(enlarged[i]);
    const Matrix k_v = oracles::kernel_matrix_scalar(features, x_v, gamma);
    const Matrix k_r = oracles::kernel_matrix_scalar(x_v, x_v, gamma);
    Matrix alpha_ext = Matrix::Zero(v1, alpha.cols());
    alpha_ext.topRows(alpha.rows()) = alpha;

    const double n = static_cast<double>(features.rows());
    const double jitter = 1e-10 * k_r.trace() / static_cast<double>(v1);
    Matrix scores = k_v * alpha_ext;
    Matrix p;
    if (alpha.cols() == 1) {
        p = (1.0 / (1.0 + (-scores.array()).exp())).matrix();
    } else {
        Vector rmax = scores.rowwise().maxCoeff();
        Matrix shifted = scores;
        shifted.colwise() -= rmax;
        p = shifted.array().exp().matrix();
        Vector denom = p.rowwise().sum();
        p.array().colwise() /= denom.array();
    }
    p = p.cwiseMax(1e-12).cwiseMin(1.0 - 1e-12);
    Matrix alpha_new(v1, alpha.cols());
    for (Eigen::Index k = 0; k < alpha.cols(); ++k) {
        const Vector r = (p.col(k).array() * (1.0 - p.col(k).array())).cwiseMax(1e-12).matrix();
        const Vector z = k_v * alpha_ext.col(k) +
                         ((targets.col(k) - p.col(k)).array() / r.array()).matrix();
        Matrix h = (k_v.transpose() * (k_v.array().colwise() * r.array()).matrix()) / n +
                   lambda * k_r;
        h.diagonal().array() += jitter;
        const Vector rhs = (k_v.transpose() * (r.array() * z.array()).matrix()) / n;
        alpha_new.col(k) = h.ldlt().solve(rhs);
    }
    return oracles::objective_scalar(k_v, k_r, targets, alpha_new, lambda);
}

}  // namespace

TEST_SUITE_BEGIN("ivm");

TEST_CASE("a single candidate is chosen") {
    Matrix features(3, 1);
    features << -1.0, 0.0, 1.0;
    Eigen::VectorXi labels(3);
    labels << 1, 1, 2;
    IvmTrainer trainer(features, ivm::one_hot(labels, 2), small_config());
    trainer.warm_start({0, 1}, Matrix::Zero(2, 1));
    const auto [chosen, q] = trainer.forward_step();
    CHECK(chosen == 2);
    CHECK(q <= trainer.state().q_history().front() + 1e-9);
}

TEST_CASE("ties break toward the lower training index") {
    Matrix features(4, 1);
    features << 0.0, 2.0, 2.0, -2.0;  // rows 1 and 2 identical
    Eigen::VectorXi labels(4);
    labels << 1, 2, 2, 1;
    IvmTrainer trainer(features, ivm::one_hot(labels, 2), small_config());
    const auto [chosen, q] = trainer.forward_step();
    (void)q;
    CHECK(chosen != 2);  // its duplicate at index 1 must win any tie
}

TEST_CASE("trial_objective does not mutate the trainer") {
    const auto ds = gaussian_pair(10, 3.0, 3);
    IvmTrainer trainer(ds.features, ivm::one_hot(ds.labels, 2), small_config());
    trainer.forward_step();
    const Matrix alpha_before = trainer.state().alpha();
    const Matrix kv_before = trainer.state().kernel_block();
    const double q_before = trainer.objective_value();
    const std::vector<int> iv_before = trainer.import_indices();

    trainer.trial_objective(5);
    trainer.trial_objective(7);

    CHECK(trainer.state().alpha() == alpha_before);
    CHECK(trainer.state().kernel_block() == kv_before);
    CHECK(trainer.objective_value() == q_before);
    CHECK(trainer.import_indices() == iv_before);
}

TEST_CASE("appending a duplicate import vector changes nothing") {
    Matrix features(6, 1);
    features << -2.0, -1.5, -1.0, 1.0, 1.5, -2.0;  // row 5 duplicates row 0
    Eigen::VectorXi labels(6);
    labels << 1, 1, 1, 2, 2, 1;
    IvmTrainer trainer(features, ivm::one_hot(labels, 2), small_config());
    trainer.warm_start({0, 3}, Matrix::Zero(2, 1));
    const double q_current = trainer.objective_value();
    const double q_dup = trainer.trial_objective(5);
    CHECK(std::abs(q_dup - q_current) < 1e-9);
}

TEST_CASE("the base-case trial equals a one-import-vector one-step fit") {
    const auto ds = gaussian_pair(8, 2.5, 7);
    const Matrix targets = ivm::one_hot(ds.labels, 2);
    IvmTrainer trainer(ds.features, targets, small_config());
    for (int c : {0, 3, 11}) {
        const double mine = trainer.trial_objective(c);
        const double ref = naive_trial(ds.features, targets, 0.5, 1e-3, {}, Matrix(0, 1), c);
        CHECK(mine == doctest::Approx(ref).epsilon(1e-10));
    }
}

TEST_CASE("first forward choice matches the exhaustive trial oracle") {
    for (uint64_t seed : {11u, 12u, 13u}) {
        const auto ds = gaussian_triple(9, 2.0, seed);  // N = 27
        const Matrix targets = ivm::one_hot(ds.labels, 3);
        IvmTrainer trainer(ds.features, targets, small_config(0.4, 1e-3));

        int best = -1;
        double best_q = std::numeric_limits<double>::infinity();
        for (int c = 0; c < 27; ++c) {
            const double q = naive_trial(ds.features, targets, 0.4, 1e-3, {}, Matrix(0, 3), c);
            if (q < best_q) {
                best_q = q;
                best = c;
            }
        }
        const auto [chosen, q] = trainer.forward_step();
        (void)q;
        CHECK(chosen == best);
    }
}

TEST_CASE("backward_step drops a duplicated import vector") {
    Matrix features(8, 1);
    features << -2.0, -1.0, -0.5, 0.5, 1.0, 2.0, -2.0, 2.0;  // 6,7 duplicate 0,5
    Eigen::VectorXi labels(8);
    labels << 1, 1, 1, 2, 2, 2, 1, 2;
    IvmTrainer trainer(features, ivm::one_hot(labels, 2), small_config(1.0, 1e-3));
    trainer.warm_start({0, 5, 6}, Matrix::Zero(3, 1));  // 6 duplicates 0
    const auto removed = trainer.backward_step();
    REQUIRE(removed.has_value());
    CHECK((*removed == 0 || *removed == 6));
}

TEST_CASE("backward_step keeps informative orthogonal vectors") {
    // Four well-separated clusters, one import vector in each; all needed.
    Matrix features(8, 2);
    features << -4, -4, -4.2, -4.1, 4, 4, 4.1, 4.2, -4, 4, -4.1, 4.2, 4, -4, 4.2, -4.1;
    Eigen::VectorXi labels(8);
    labels << 1, 1, 2, 2, 1, 1, 2, 2;
    IvmTrainer trainer(features, ivm::one_hot(labels, 2), small_config(0.8, 1e-4));
    trainer.warm_start({0, 2, 4, 6}, Matrix::Zero(4, 1));
    const double q_before = trainer.objective_value();
    const auto removed = trainer.backward_step();
    if (removed.has_value()) {
        // Only acceptable when the drop did not worsen the objective.
        CHECK(trainer.objective_value() <= q_before * (1 + 1e-6));
    } else {
        CHECK(trainer.objective_value() == q_before);
    }
}

TEST_CASE("training respects max_iv = 1") {
    const auto ds = gaussian_pair(20, 2.0, 17);
    TrainConfig config = small_config();
    config.max_iv = 1;
    const IvmModel model = ivm::train(ds, config);
    CHECK(model.num_import_vectors() == 1);
}

TEST_CASE("training on separable blobs is sparse and accurate") {
    const auto ds = gaussian_pair(250, 4.0, 19);  // N = 500
    ivm::TrainReport report;
    const IvmModel model = ivm::train(ds, small_config(0.5, 1e-3), &report);
    CHECK(model.num_import_vectors() <= 50);  // <= 10% of N

    const ivm::Prediction pred = ivm::predict(model, ds.features);
    int correct = 0;
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
        if (pred.labels[i] == ds.labels[i]) ++correct;
    }
    CHECK(static_cast<double>(correct) / ds.size() > 0.95);

    // Committed objective is monotone non-increasing across iterations.
    for (size_t i = 1; i < report.committed_q.size(); ++i) {
        CHECK(report.committed_q[i] <= report.committed_q[i - 1] + 1e-9);
    }
}

TEST_CASE("three-class model predicts every class somewhere on a grid") {
    const auto ds = gaussian_triple(25, 3.0, 23);
    const IvmModel model = ivm::train(ds, small_config(0.5, 1e-3));
    Matrix grid(441, 2);
    int at = 0;
    for (int i = -10; i <= 10; ++i) {
        for (int j = -10; j <= 10; ++j) grid.row(at++) << 0.6 * i, 0.6 * j;
    }
    const ivm::Prediction pred = ivm::predict(model, grid);
    std::set<int> seen(pred.labels.data(), pred.labels.data() + pred.labels.size());
    CHECK(seen == std::set<int>({1, 2, 3}));
}

TEST_CASE("prediction is deterministic and dimension-checked") {
    const auto ds = gaussian_pair(15, 6.0, 29);  // cleanly separable
    const IvmModel model = ivm::train(ds, small_config());
    Matrix x(4, 2);
    x << 0.1, 0.2, 0.1, 0.2, -1.0, 0.5, -1.0, 0.5;  // duplicated rows
    const auto pred = ivm::predict(model, x);
    CHECK(pred.labels[0] == pred.labels[1]);
    CHECK(pred.labels[2] == pred.labels[3]);
    CHECK(pred.probs.row(0) == pred.probs.row(1));

    Matrix bad(1, 3);
    bad.setZero();
    CHECK_THROWS_AS(ivm::predict(model, bad), std::invalid_argument);

    // Import vectors of a separable model recover the training labels.
    const auto on_iv = ivm::predict(model, model.import_vectors.X_V);
    for (size_t i = 0; i < model.import_vectors.indices.size(); ++i) {
        CHECK(on_iv.labels[static_cast<Eigen::Index>(i)] ==
              ds.labels[model.import_vectors.indices[i]]);
    }
}

TEST_CASE("model files round-trip probabilities bit-for-bit") {
    const auto ds = gaussian_triple(12, 2.5, 31);
    const IvmModel model = ivm::train(ds, small_config(0.7, 1e-2));
    const auto path = std::filesystem::temp_directory_path() / "ivm_model_roundtrip.ivm";
    ivm::save_model(model, path);
    const IvmModel back = ivm::load_model(path);

    CHECK(back.num_classes == model.num_classes);
    CHECK(back.class_names == model.class_names);
    CHECK(back.lambda == model.lambda);
    CHECK(back.kernel_params.gamma == model.kernel_params.gamma);
    CHECK(back.alpha == model.alpha);
    CHECK(back.import_vectors.X_V == model.import_vectors.X_V);

    Matrix probe = Matrix::Random(13, 2);
    const auto p1 = ivm::predict(model, probe);
    const auto p2 = ivm::predict(back, probe);
    CHECK(p1.probs == p2.probs);
    CHECK(p1.labels == p2.labels);
}

TEST_CASE("sparsity cap holds throughout training") {
    const auto ds = gaussian_pair(30, 1.0, 37);  // heavily overlapping
    TrainConfig config = small_config(0.5, 1e-4);
    config.max_iv = 7;
    const IvmModel model = ivm::train(ds, config);
    CHECK(model.num_import_vectors() <= 7);
    CHECK(model.num_import_vectors() >= 1);
}

TEST_CASE("candidate subsampling stays deterministic under a fixed seed") {
    const auto ds = gaussian_pair(40, 2.5, 41);
    TrainConfig config = small_config();
    config.candidate_subsample = 12;
    config.seed = 77;
    const IvmModel a = ivm::train(ds, config);
    const IvmModel b = ivm::train(ds, config);
    CHECK(a.import_vectors.indices == b.import_vectors.indices);
    CHECK(a.alpha == b.alpha);
}

TEST_SUITE_END();
