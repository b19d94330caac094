#include <doctest.h>

#include <random>

#include "ivm/metrics.hpp"

using ivm::ConfusionMatrix;
using ivm::Matrix;

namespace {

Eigen::VectorXi vec(std::initializer_list<int> values) {
    Eigen::VectorXi v(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (int x : values) v[i++] = x;
    return v;
}

ConfusionMatrix cm_from(std::initializer_list<std::initializer_list<int>> rows) {
    ConfusionMatrix cm;
    const auto k = static_cast<Eigen::Index>(rows.size());
    cm.counts.resize(k, k);
    Eigen::Index i = 0;
    for (const auto& row : rows) {
        Eigen::Index j = 0;
        for (int x : row) cm.counts(i, j++) = x;
        ++i;
    }
    return cm;
}

}  // namespace

TEST_SUITE_BEGIN("metrics");

TEST_CASE("identical label vectors tally on the diagonal") {
    const auto truth = vec({1, 2, 3, 2, 1});
    const ConfusionMatrix cm = ivm::confusion(truth, truth);
    CHECK(cm.counts.sum() == 5);
    CHECK(cm.counts(0, 0) == 2);
    CHECK(cm.counts(1, 1) == 2);
    CHECK(cm.counts(2, 2) == 1);
    CHECK(cm.counts.diagonal().sum() == 5);
}

TEST_CASE("empty inputs are rejected") {
    Eigen::VectorXi empty(0);
    CHECK_THROWS_AS(ivm::confusion(empty, empty), std::invalid_argument);
    CHECK_THROWS_AS(ivm::confusion(vec({1, 2}), vec({1})), std::invalid_argument);
    CHECK_THROWS_AS(ivm::confusion(vec({1, 2}), vec({1, 5}), 2), std::invalid_argument);
}

TEST_CASE("hand tally") {
    const ConfusionMatrix cm = ivm::confusion(vec({1, 1, 2, 2}), vec({1, 2, 2, 2}));
    CHECK(cm.counts(0, 0) == 1);
    CHECK(cm.counts(0, 1) == 1);
    CHECK(cm.counts(1, 0) == 0);
    CHECK(cm.counts(1, 1) == 2);
}

TEST_CASE("perfect diagonal gives OA = AA = kappa = 1") {
    const auto s = ivm::oa_aa_kappa(cm_from({{4, 0, 0}, {0, 7, 0}, {0, 0, 2}}));
    CHECK(s.oa == doctest::Approx(1.0));
    CHECK(s.aa == doctest::Approx(1.0));
    CHECK(s.kappa == doctest::Approx(1.0));
}

TEST_CASE("chance-level agreement has kappa 0") {
    const auto s = ivm::oa_aa_kappa(cm_from({{1, 1}, {1, 1}}));
    CHECK(s.oa == doctest::Approx(0.5));
    CHECK(s.kappa == doctest::Approx(0.0));
}

TEST_CASE("hand-computed kappa on a 2x2 table") {
    // p_o = 6/8, marginals (4,4)x(4,4) -> p_e = 0.5, kappa = 0.5.
    const auto s = ivm::oa_aa_kappa(cm_from({{3, 1}, {1, 3}}));
    CHECK(s.oa == doctest::Approx(0.75));
    CHECK(s.aa == doctest::Approx(0.75));
    CHECK(s.kappa == doctest::Approx(0.5));
}

TEST_CASE("single-cell table degenerates to kappa 0 with a warning flag") {
    const auto s = ivm::oa_aa_kappa(ivm::confusion(vec({1, 1, 1}), vec({1, 1, 1}), 1));
    CHECK(s.oa == doctest::Approx(1.0));
    CHECK(s.kappa == 0.0);
    CHECK(s.kappa_degenerate);
}

TEST_CASE("metric ranges and permutation invariance") {
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<int> lab(1, 4);
    Eigen::VectorXi truth(200), pred(200);
    for (int i = 0; i < 200; ++i) {
        truth[i] = lab(rng);
        pred[i] = lab(rng);
    }
    const auto s = ivm::oa_aa_kappa(ivm::confusion(truth, pred, 4));
    CHECK(s.oa >= 0.0);
    CHECK(s.oa <= 1.0);
    CHECK(s.aa >= 0.0);
    CHECK(s.aa <= 1.0);
    CHECK(s.kappa >= -1.0);
    CHECK(s.kappa <= 1.0);

    // Consistent class relabeling leaves all three unchanged.
    const int perm[5] = {0, 3, 1, 4, 2};
    Eigen::VectorXi truth_p(200), pred_p(200);
    for (int i = 0; i < 200; ++i) {
        truth_p[i] = perm[truth[i]];
        pred_p[i] = perm[pred[i]];
    }
    const auto sp = ivm::oa_aa_kappa(ivm::confusion(truth_p, pred_p, 4));
    CHECK(sp.oa == doctest::Approx(s.oa).epsilon(1e-12));
    CHECK(sp.aa == doctest::Approx(s.aa).epsilon(1e-12));
    CHECK(sp.kappa == doctest::Approx(s.kappa).epsilon(1e-12));
}

TEST_CASE("kappa = 1 iff the off-diagonal is empty") {
    const auto off = ivm::oa_aa_kappa(cm_from({{9, 1}, {0, 9}}));
    CHECK(off.kappa < 1.0);
}

TEST_CASE("rejection at threshold 0 keeps everything") {
    Matrix probs(4, 2);
    probs << 0.9, 0.1, 0.6, 0.4, 0.2, 0.8, 0.55, 0.45;
    const auto truth = vec({1, 2, 2, 1});
    const auto pt = ivm::rejection_point(probs, truth, 0.0);
    REQUIRE(pt.has_value());
    CHECK(pt->rejection_rate == 0.0);
    CHECK(pt->oa == doctest::Approx(0.75));  // row 1 predicted 1, truth 2
}

TEST_CASE("one-hot correct probabilities give OA 1 at every threshold") {
    Matrix probs = Matrix::Zero(5, 3);
    const auto truth = vec({1, 2, 3, 1, 2});
    for (int i = 0; i < 5; ++i) probs(i, truth[i] - 1) = 1.0;
    const auto curve = ivm::rejection_curve(probs, truth, ivm::default_rejection_grid());
    REQUIRE(!curve.points.empty());
    for (const auto& pt : curve.points) CHECK(pt.oa == doctest::Approx(1.0));
}

TEST_CASE("rejection curve matches a per-sample filter-then-score loop") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int n = 120;
    Matrix probs(n, 3);
    Eigen::VectorXi truth(n);
    for (int i = 0; i < n; ++i) {
        double a = u(rng), b = u(rng), c = u(rng);
        const double s = a + b + c;
        probs(i, 0) = a / s;
        probs(i, 1) = b / s;
        probs(i, 2) = c / s;
        truth[i] = 1 + static_cast<int>(u(rng) * 3.0);
    }
    const std::vector<double> grid = {0.0, 0.35, 0.45, 0.6, 0.8};
    long last_retained = n + 1;
    for (double tau : grid) {
        // Independent loop.
        long kept = 0, correct = 0;
        for (int i = 0; i < n; ++i) {
            Eigen::Index arg;
            const double top = probs.row(i).maxCoeff(&arg);
            if (top < tau) continue;
            ++kept;
            if (static_cast<int>(arg) + 1 == truth[i]) ++correct;
        }
        const auto pt = ivm::rejection_point(probs, truth, tau);
        if (kept == 0) {
            CHECK(!pt.has_value());
            continue;
        }
        REQUIRE(pt.has_value());
        CHECK(pt->retained == kept);
        CHECK(pt->oa == doctest::Approx(static_cast<double>(correct) / kept));
        CHECK(pt->retained <= last_retained);  // monotone non-increasing
        last_retained = pt->retained;
    }
    const auto curve = ivm::rejection_curve(probs, truth, grid);
    for (size_t i = 1; i < curve.points.size(); ++i) {
        CHECK(curve.points[i].rejection_rate > curve.points[i - 1].rejection_rate);
    }
}

TEST_SUITE_END();
