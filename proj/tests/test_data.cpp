#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "ivm/data.hpp"
#include "ivm/errors.hpp"

using ivm::HyperCube;
using ivm::LabelRaster;
using ivm::Matrix;

namespace {

std::filesystem::path temp_dir() {
    auto dir = std::filesystem::temp_directory_path() / "ivm_data_tests";
    std::filesystem::create_directories(dir);
    return dir;
}

HyperCube random_cube(int h, int w, int b, uint64_t seed) {
    HyperCube cube;
    cube.height = h;
    cube.width = w;
    cube.bands = b;
    cube.values.resize(static_cast<size_t>(h) * w * b);
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> g;
    for (auto& v : cube.values) v = g(rng);
    return cube;
}

}  // namespace

TEST_SUITE_BEGIN("data");

TEST_CASE("cube round-trips bit-identically") {
    const HyperCube cube = random_cube(4, 4, 3, 5);
    const auto path = temp_dir() / "roundtrip.cube";
    ivm::save_cube(cube, path);
    const HyperCube back = ivm::load_cube(path);
    CHECK(back.height == 4);
    CHECK(back.width == 4);
    CHECK(back.bands == 3);
    CHECK(back.values == cube.values);
}

TEST_CASE("mismatched label raster dimensions are rejected") {
    const HyperCube cube = random_cube(4, 5, 2, 6);
    LabelRaster labels;
    labels.height = 4;
    labels.width = 4;
    labels.labels.assign(16, 1);
    const auto cpath = temp_dir() / "dims.cube";
    const auto lpath = temp_dir() / "dims.pgm";
    ivm::save_cube(cube, cpath);
    ivm::save_labels_pgm(labels, lpath);
    CHECK_THROWS_AS(ivm::load(cpath, lpath), ivm::DataError);
}

TEST_CASE("corrupt cube files produce located errors") {
    const auto path = temp_dir() / "corrupt.cube";
    std::ofstream out(path, std::ios::binary);
    out << "HCUBxxxx";
    out.close();
    CHECK_THROWS_AS(ivm::load_cube(path), ivm::DataError);
}

TEST_CASE("PGM label round-trip") {
    LabelRaster labels;
    labels.height = 3;
    labels.width = 4;
    labels.labels = {0, 1, 2, 3, 0, 0, 1, 1, 2, 2, 3, 3};
    const auto path = temp_dir() / "labels.pgm";
    ivm::save_labels_pgm(labels, path);
    const LabelRaster back = ivm::load_labels(path);
    CHECK(back.height == 3);
    CHECK(back.width == 4);
    CHECK(back.labels == labels.labels);
}

TEST_CASE("CSV dataset equals the raster extraction") {
    const HyperCube cube = random_cube(5, 5, 3, 9);
    LabelRaster labels;
    labels.height = 5;
    labels.width = 5;
    labels.labels.assign(25, 0);
    std::mt19937_64 rng(10);
    std::uniform_int_distribution<int> lab(0, 2);
    for (auto& l : labels.labels) l = lab(rng);
    labels.labels[0] = 1;  // both classes present
    labels.labels[1] = 2;

    const ivm::LabeledDataset from_raster = ivm::extract_training(cube, labels, false);
    const auto csv = temp_dir() / "dataset.csv";
    ivm::save_dataset_csv(from_raster, csv);
    const ivm::LabeledDataset from_csv = ivm::load_dataset_csv(csv);

    REQUIRE(from_csv.size() == from_raster.size());
    CHECK(from_csv.labels == from_raster.labels);
    CHECK((from_csv.features - from_raster.features).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("non-finite values are rejected with location") {
    const auto path = temp_dir() / "nan.csv";
    std::ofstream out(path);
    out << "label,band_1\n1,0.5\n2,nan\n";
    out.close();
    CHECK_THROWS_WITH_AS(ivm::load_dataset_csv(path),
                         doctest::Contains(":3"), ivm::DataError);
}

TEST_CASE("constant bands normalize to zeros") {
    HyperCube cube = random_cube(3, 3, 2, 11);
    for (int p = 0; p < 9; ++p) cube.values[static_cast<size_t>(p)] = 7.5f;  // band 0 constant
    LabelRaster labels;
    labels.height = 3;
    labels.width = 3;
    labels.labels = {1, 1, 2, 2, 1, 2, 1, 2, 1};
    const auto ds = ivm::extract_training(cube, labels, true);
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
        CHECK(std::abs(ds.features(i, 0)) < 1e-6);
    }
}

TEST_CASE("normalized features have zero mean and unit std") {
    const HyperCube cube = random_cube(8, 8, 4, 13);
    LabelRaster labels;
    labels.height = 8;
    labels.width = 8;
    labels.labels.assign(64, 0);
    for (int p = 0; p < 64; ++p) labels.labels[static_cast<size_t>(p)] = 1 + p % 3;
    const auto ds = ivm::extract_training(cube, labels, true);
    const auto mean = ds.features.colwise().mean();
    for (Eigen::Index b = 0; b < 4; ++b) {
        CHECK(std::abs(mean[b]) < 1e-10);
        const double var =
            (ds.features.col(b).array() - mean[b]).square().sum() / ds.size();
        CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-10);
    }
}

TEST_CASE("stored stats round-trip the full cube") {
    const HyperCube cube = random_cube(6, 6, 3, 17);
    LabelRaster labels;
    labels.height = 6;
    labels.width = 6;
    labels.labels.assign(36, 0);
    for (int p = 0; p < 36; p += 2) labels.labels[static_cast<size_t>(p)] = 1 + (p / 2) % 2;
    const auto ds = ivm::extract_training(cube, labels, true);
    REQUIRE(ds.stats.has_value());
    const Matrix raw = cube.pixel_matrix();
    const Matrix recovered = ds.stats->invert(ds.stats->apply(raw));
    CHECK((recovered - raw).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("stratified subsample keeps fractions, floors and order") {
    ivm::LabeledDataset ds;
    ds.num_classes = 2;
    ds.features.resize(112, 2);
    ds.labels.resize(112);
    std::mt19937_64 rng(23);
    std::normal_distribution<double> g;
    for (int i = 0; i < 112; ++i) {
        ds.features(i, 0) = g(rng);
        ds.features(i, 1) = g(rng);
        ds.labels[i] = i < 100 ? 1 : 2;  // class 2 has 12 samples
    }
    ds.class_names = {"a", "b"};
    ds.pixel_ids.assign(112, -1);

    SUBCASE("fraction 1.0 is the identity") {
        const auto all = ivm::stratified_subsample(ds, 1.0, 1, 7);
        REQUIRE(all.size() == 112);
        CHECK(all.labels == ds.labels);
        CHECK((all.features - ds.features).cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("10% with a floor of 10 keeps 10 of 12") {
        const auto sub = ivm::stratified_subsample(ds, 0.1, 10, 7);
        int c1 = 0, c2 = 0;
        for (Eigen::Index i = 0; i < sub.size(); ++i) (sub.labels[i] == 1 ? c1 : c2)++;
        CHECK(c1 == 10);  // ceil(0.1 * 100)
        CHECK(c2 == 10);  // floored at min(10, 12)
    }

    SUBCASE("same seed gives identical index sets") {
        const auto a = ivm::stratified_subsample(ds, 0.3, 5, 99);
        const auto b = ivm::stratified_subsample(ds, 0.3, 5, 99);
        REQUIRE(a.size() == b.size());
        CHECK(a.labels == b.labels);
        CHECK((a.features - b.features).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("synthesis is seed-deterministic with contiguous class blobs") {
    ivm::SynthSpec spec;
    spec.classes = 3;
    spec.height = 24;
    spec.width = 24;
    spec.bands = 4;
    spec.labeled_per_class = 8;
    spec.seed = 31;
    const auto a = ivm::synthesize(spec);
    const auto b = ivm::synthesize(spec);
    CHECK(a.cube.values == b.cube.values);
    CHECK(a.truth.labels == b.truth.labels);
    CHECK(a.training_labels.labels == b.training_labels.labels);

    // Every class is a single 4-connected component of the truth raster.
    for (int cls = 1; cls <= 3; ++cls) {
        std::vector<char> seen(a.truth.labels.size(), 0);
        int first = -1;
        int member_count = 0;
        for (size_t p = 0; p < a.truth.labels.size(); ++p) {
            if (a.truth.labels[p] == cls) {
                ++member_count;
                if (first < 0) first = static_cast<int>(p);
            }
        }
        REQUIRE(member_count > 0);
        std::vector<int> stack = {first};
        seen[static_cast<size_t>(first)] = 1;
        int reached = 0;
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            ++reached;
            const int r = p / 24, c = p % 24;
            const int nbr[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
            for (const auto& rc : nbr) {
                if (rc[0] < 0 || rc[0] >= 24 || rc[1] < 0 || rc[1] >= 24) continue;
                const int q = rc[0] * 24 + rc[1];
                if (!seen[static_cast<size_t>(q)] && a.truth.labels[static_cast<size_t>(q)] == cls) {
                    seen[static_cast<size_t>(q)] = 1;
                    stack.push_back(q);
                }
            }
        }
        CHECK(reached == member_count);
    }

    // Training labels agree with the truth raster wherever set.
    int labeled = 0;
    for (size_t p = 0; p < a.training_labels.labels.size(); ++p) {
        if (a.training_labels.labels[p] > 0) {
            ++labeled;
            CHECK(a.training_labels.labels[p] == a.truth.labels[p]);
        }
    }
    CHECK(labeled == 24);
}

TEST_CASE("two-class Bayes OA closed form") {
    // separation 2 sigma: OA = Phi(1) ~ 0.8413.
    CHECK(ivm::two_class_bayes_oa(2.0, 1.0) == doctest::Approx(0.841345).epsilon(1e-5));
    CHECK(ivm::two_class_bayes_oa(0.0, 1.0) == doctest::Approx(0.5));
}

TEST_SUITE_END();
