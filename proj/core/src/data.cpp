#include "ivm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "ivm/errors.hpp"

namespace ivm {

namespace {

constexpr char kCubeMagic[4] = {'H', 'C', 'U', 'B'};
constexpr uint32_t kCubeVersion = 1;
constexpr double kStdFloor = 1e-12;

void write_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& in, const std::filesystem::path& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
        throw DataError(path.string() + ": truncated header at offset " +
                        std::to_string(in.tellg()));
    }
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

Matrix HyperCube::pixel_matrix() const {
    const int n = num_pixels();
    Matrix x(n, bands);
    for (int b = 0; b < bands; ++b) {
        const size_t base = static_cast<size_t>(b) * n;
        for (int p = 0; p < n; ++p) x(p, b) = values[base + p];
    }
    return x;
}

int LabelRaster::max_label() const {
    int m = 0;
    for (int v : labels) m = std::max(m, v);
    return m;
}

Matrix NormalizationStats::apply(const Eigen::Ref<const Matrix>& raw) const {
    if (raw.cols() != mean.size()) {
        throw DataError("normalization: feature dimension mismatch");
    }
    Matrix out = raw;
    out.rowwise() -= mean.transpose();
    out.array().rowwise() /= stddev.transpose().array();
    return out;
}

Matrix NormalizationStats::invert(const Eigen::Ref<const Matrix>& normalized) const {
    Matrix out = normalized;
    out.array().rowwise() *= stddev.transpose().array();
    out.rowwise() += mean.transpose();
    return out;
}

std::vector<int> LabeledDataset::class_counts() const {
    std::vector<int> counts(num_classes, 0);
    for (Eigen::Index i = 0; i < labels.size(); ++i) {
        const int y = labels[i];
        if (y >= 1 && y <= num_classes) ++counts[y - 1];
    }
    return counts;
}

void LabeledDataset::validate() const {
    if (features.rows() != labels.size()) {
        throw DataError("dataset: feature/label count mismatch");
    }
    if (!features.allFinite()) throw DataError("dataset: non-finite feature values");
    for (Eigen::Index i = 0; i < labels.size(); ++i) {
        if (labels[i] < 1 || labels[i] > num_classes) {
            throw DataError("dataset: label out of range at row " + std::to_string(i));
        }
    }
    for (int k = 0; k < num_classes; ++k) {
        if (class_counts()[k] == 0) {
            throw DataError("dataset: class " + std::to_string(k + 1) + " has no samples");
        }
    }
}

HyperCube load_cube(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path.string() + ": cannot open");
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kCubeMagic, 4) != 0) {
        throw DataError(path.string() + ": bad magic at offset 0");
    }
    const uint32_t version = read_u32(in, path);
    if (version != kCubeVersion) {
        throw DataError(path.string() + ": unsupported cube version " + std::to_string(version));
    }
    HyperCube cube;
    cube.height = static_cast<int>(read_u32(in, path));
    cube.width = static_cast<int>(read_u32(in, path));
    cube.bands = static_cast<int>(read_u32(in, path));
    if (cube.height < 1 || cube.width < 1 || cube.bands < 1) {
        throw DataError(path.string() + ": degenerate dimensions");
    }
    const size_t n = static_cast<size_t>(cube.height) * cube.width * cube.bands;
    cube.values.resize(n);
    if (!in.read(reinterpret_cast<char*>(cube.values.data()),
                 static_cast<std::streamsize>(n * sizeof(float)))) {
        throw DataError(path.string() + ": truncated sample data at offset " +
                        std::to_string(in.tellg()));
    }
    for (size_t i = 0; i < n; ++i) {
        if (!std::isfinite(cube.values[i])) {
            throw DataError(path.string() + ": non-finite sample at index " + std::to_string(i));
        }
    }
    return cube;
}

void save_cube(const HyperCube& cube, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(path.string() + ": cannot write");
    out.write(kCubeMagic, 4);
    write_u32(out, kCubeVersion);
    write_u32(out, static_cast<uint32_t>(cube.height));
    write_u32(out, static_cast<uint32_t>(cube.width));
    write_u32(out, static_cast<uint32_t>(cube.bands));
    out.write(reinterpret_cast<const char*>(cube.values.data()),
              static_cast<std::streamsize>(cube.values.size() * sizeof(float)));
    if (!out) throw DataError(path.string() + ": write failed");
}

namespace {

LabelRaster load_labels_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path.string() + ": cannot open");
    std::string magic;
    in >> magic;
    if (magic != "P5") throw DataError(path.string() + ": expected binary PGM (P5)");
    auto next_int = [&](const char* what) {
        // Skip whitespace and '#' comment lines.
        int c = in.get();
        while (c != EOF && (std::isspace(c) || c == '#')) {
            if (c == '#') {
                while (c != EOF && c != '\n') c = in.get();
            }
            c = in.get();
        }
        std::string tok;
        while (c != EOF && !std::isspace(c)) {
            tok.push_back(static_cast<char>(c));
            c = in.get();
        }
        try {
            return std::stoi(tok);
        } catch (const std::exception&) {
            throw DataError(path.string() + ": bad " + what + " field");
        }
    };
    LabelRaster raster;
    raster.width = next_int("width");
    raster.height = next_int("height");
    const int maxval = next_int("maxval");
    if (maxval < 1 || maxval > 255) {
        throw DataError(path.string() + ": maxval must be in [1,255]");
    }
    const size_t n = static_cast<size_t>(raster.width) * raster.height;
    std::vector<unsigned char> bytes(n);
    if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n))) {
        throw DataError(path.string() + ": truncated pixel data");
    }
    raster.labels.assign(bytes.begin(), bytes.end());
    return raster;
}

LabelRaster load_labels_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(path.string() + ": cannot open");
    LabelRaster raster;
    std::string line;
    std::vector<std::vector<int>> rows;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<int> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                row.push_back(std::stoi(cell));
            } catch (const std::exception&) {
                throw DataError(path.string() + ":" + std::to_string(lineno) + ": bad label cell");
            }
        }
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": ragged row");
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw DataError(path.string() + ": empty label raster");
    raster.height = static_cast<int>(rows.size());
    raster.width = static_cast<int>(rows.front().size());
    raster.labels.reserve(static_cast<size_t>(raster.height) * raster.width);
    for (const auto& r : rows) raster.labels.insert(raster.labels.end(), r.begin(), r.end());
    return raster;
}

}  // namespace

LabelRaster load_labels(const std::filesystem::path& path) {
    LabelRaster raster = path.extension() == ".csv" ? load_labels_csv(path)
                                                    : load_labels_pgm(path);
    for (int v : raster.labels) {
        if (v < 0) throw DataError(path.string() + ": negative label");
    }
    return raster;
}

void save_labels_pgm(const LabelRaster& raster, const std::filesystem::path& path) {
    if (raster.max_label() > 255) {
        throw DataError(path.string() + ": labels exceed PGM byte range");
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(path.string() + ": cannot write");
    out << "P5\n" << raster.width << " " << raster.height << "\n255\n";
    std::vector<unsigned char> bytes(raster.labels.begin(), raster.labels.end());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError(path.string() + ": write failed");
}

std::pair<HyperCube, LabelRaster> load(const std::filesystem::path& cube_path,
                                       const std::filesystem::path& labels_path) {
    HyperCube cube = load_cube(cube_path);
    LabelRaster labels = load_labels(labels_path);
    if (labels.height != cube.height || labels.width != cube.width) {
        throw DataError("label raster " + labels_path.string() + " is " +
                        std::to_string(labels.height) + "x" + std::to_string(labels.width) +
                        " but cube is " + std::to_string(cube.height) + "x" +
                        std::to_string(cube.width));
    }
    return {std::move(cube), std::move(labels)};
}

std::vector<std::string> load_class_names_sidecar(const std::filesystem::path& cube_path) {
    std::filesystem::path sidecar = cube_path;
    sidecar.replace_extension(".classes.txt");
    std::ifstream in(sidecar);
    std::vector<std::string> names;
    std::string line;
    while (in && std::getline(in, line)) {
        if (!line.empty()) names.push_back(line);
    }
    return names;
}

void save_class_names_sidecar(const std::vector<std::string>& names,
                              const std::filesystem::path& cube_path) {
    std::filesystem::path sidecar = cube_path;
    sidecar.replace_extension(".classes.txt");
    std::ofstream out(sidecar, std::ios::trunc);
    for (const auto& n : names) out << n << "\n";
}

LabeledDataset load_dataset_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(path.string() + ": cannot open");
    std::string header;
    if (!std::getline(in, header) || header.rfind("label", 0) != 0) {
        throw DataError(path.string() + ": expected header starting with 'label'");
    }
    std::vector<double> flat;
    std::vector<int> labels;
    Eigen::Index bands = -1;
    std::string line;
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> row;
        while (std::getline(ss, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw DataError(path.string() + ":" + std::to_string(lineno) + ": bad cell");
            }
        }
        if (row.size() < 2) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": need label + bands");
        }
        if (bands < 0) {
            bands = static_cast<Eigen::Index>(row.size()) - 1;
        } else if (static_cast<Eigen::Index>(row.size()) - 1 != bands) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": ragged row");
        }
        labels.push_back(static_cast<int>(row[0]));
        for (size_t j = 1; j < row.size(); ++j) {
            if (!std::isfinite(row[j])) {
                throw DataError(path.string() + ":" + std::to_string(lineno) +
                                ": non-finite feature");
            }
            flat.push_back(row[j]);
        }
    }
    if (labels.empty()) throw DataError(path.string() + ": no data rows");

    LabeledDataset ds;
    ds.features = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                           Eigen::RowMajor>>(
        flat.data(), static_cast<Eigen::Index>(labels.size()), bands);
    ds.labels = Eigen::Map<Eigen::VectorXi>(labels.data(),
                                            static_cast<Eigen::Index>(labels.size()));
    ds.num_classes = ds.labels.maxCoeff();
    ds.pixel_ids.assign(labels.size(), -1);
    for (int k = 1; k <= ds.num_classes; ++k) {
        ds.class_names.push_back("class_" + std::to_string(k));
    }
    ds.validate();
    return ds;
}

void save_dataset_csv(const LabeledDataset& dataset, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError(path.string() + ": cannot write");
    out << "label";
    for (Eigen::Index b = 0; b < dataset.features.cols(); ++b) out << ",band_" << (b + 1);
    out << "\n";
    out.precision(17);
    for (Eigen::Index i = 0; i < dataset.size(); ++i) {
        out << dataset.labels[i];
        for (Eigen::Index b = 0; b < dataset.features.cols(); ++b) {
            out << "," << dataset.features(i, b);
        }
        out << "\n";
    }
}

LabeledDataset extract_training(const HyperCube& cube, const LabelRaster& labels,
                                bool normalize) {
    if (labels.height != cube.height || labels.width != cube.width) {
        throw DataError("extract_training: raster dimensions do not match cube");
    }
    std::vector<int> keep;
    for (int p = 0; p < cube.num_pixels(); ++p) {
        if (labels.labels[p] > 0) keep.push_back(p);
    }
    if (keep.empty()) throw DataError("extract_training: no labeled pixels");

    LabeledDataset ds;
    ds.features.resize(static_cast<Eigen::Index>(keep.size()), cube.bands);
    ds.labels.resize(static_cast<Eigen::Index>(keep.size()));
    ds.pixel_ids.reserve(keep.size());
    for (size_t i = 0; i < keep.size(); ++i) {
        const int p = keep[i];
        for (int b = 0; b < cube.bands; ++b) {
            ds.features(static_cast<Eigen::Index>(i), b) =
                cube.values[static_cast<size_t>(b) * cube.num_pixels() + p];
        }
        ds.labels[static_cast<Eigen::Index>(i)] = labels.labels[p];
        ds.pixel_ids.push_back(p);
    }
    ds.num_classes = ds.labels.maxCoeff();
    for (int k = 1; k <= ds.num_classes; ++k) {
        ds.class_names.push_back("class_" + std::to_string(k));
    }

    if (normalize) {
        NormalizationStats stats;
        stats.mean = ds.features.colwise().mean();
        Matrix centered = ds.features.rowwise() - stats.mean.transpose();
        stats.stddev = (centered.array().square().colwise().sum() /
                        static_cast<double>(ds.size()))
                           .sqrt()
                           .max(kStdFloor);
        ds.features = stats.apply(ds.features);
        ds.stats = std::move(stats);
    }
    ds.validate();
    return ds;
}

LabeledDataset stratified_subsample(const LabeledDataset& dataset, double fraction,
                                    int min_per_class, uint64_t seed) {
    if (!(fraction > 0.0) || fraction > 1.0) {
        throw std::invalid_argument("stratified_subsample: fraction must be in (0, 1]");
    }
    std::vector<std::vector<int>> by_class(dataset.num_classes);
    for (Eigen::Index i = 0; i < dataset.size(); ++i) {
        by_class[dataset.labels[i] - 1].push_back(static_cast<int>(i));
    }
    std::mt19937_64 rng(seed);
    std::vector<int> selected;
    for (auto& rows : by_class) {
        const int n_k = static_cast<int>(rows.size());
        int take = static_cast<int>(std::ceil(fraction * n_k));
        take = std::max(take, std::min(min_per_class, n_k));
        take = std::min(take, n_k);
        std::shuffle(rows.begin(), rows.end(), rng);
        selected.insert(selected.end(), rows.begin(), rows.begin() + take);
    }
    std::sort(selected.begin(), selected.end());

    LabeledDataset out;
    out.features.resize(static_cast<Eigen::Index>(selected.size()), dataset.features.cols());
    out.labels.resize(static_cast<Eigen::Index>(selected.size()));
    out.pixel_ids.reserve(selected.size());
    for (size_t i = 0; i < selected.size(); ++i) {
        out.features.row(static_cast<Eigen::Index>(i)) = dataset.features.row(selected[i]);
        out.labels[static_cast<Eigen::Index>(i)] = dataset.labels[selected[i]];
        out.pixel_ids.push_back(selected[i] < static_cast<int>(dataset.pixel_ids.size())
                                    ? dataset.pixel_ids[selected[i]]
                                    : -1);
    }
    out.num_classes = dataset.num_classes;
    out.class_names = dataset.class_names;
    out.stats = dataset.stats;
    out.validate();
    return out;
}

SynthResult synthesize(const SynthSpec& spec) {
    if (spec.classes < 2) throw std::invalid_argument("synthesize: need >= 2 classes");
    if (spec.bands < 1) throw std::invalid_argument("synthesize: need >= 1 band");
    if (!spec.means && spec.bands < spec.classes) {
        throw std::invalid_argument("synthesize: auto means need bands >= classes");
    }

    // Class means: scaled standard basis vectors give every pair the same
    // Euclidean distance `separation`.
    Matrix means;
    if (spec.means) {
        means = *spec.means;
        if (means.rows() != spec.classes || means.cols() != spec.bands) {
            throw std::invalid_argument("synthesize: means must be K x B");
        }
    } else {
        means = Matrix::Zero(spec.classes, spec.bands);
        const double scale = spec.separation / std::sqrt(2.0);
        for (int k = 0; k < spec.classes; ++k) means(k, k) = scale;
    }

    std::mt19937_64 rng(spec.seed);

    // Spatial layout: Voronoi cells of K seed points; cells are convex,
    // hence each class is one connected blob.
    std::uniform_real_distribution<double> ur(0.0, 1.0);
    std::vector<std::pair<double, double>> seeds(spec.classes);
    for (auto& s : seeds) s = {ur(rng) * spec.height, ur(rng) * spec.width};
    // Re-draw seed sets that put two seeds too close together.
    auto min_seed_gap = [&]() {
        double gap = std::numeric_limits<double>::infinity();
        for (size_t a = 0; a < seeds.size(); ++a) {
            for (size_t b = a + 1; b < seeds.size(); ++b) {
                const double dr = seeds[a].first - seeds[b].first;
                const double dc = seeds[a].second - seeds[b].second;
                gap = std::min(gap, std::hypot(dr, dc));
            }
        }
        return gap;
    };
    double min_gap = 0.7 * std::min(spec.height, spec.width) / std::sqrt(spec.classes);
    for (int attempt = 0; attempt < 256 && min_seed_gap() < min_gap; ++attempt) {
        for (auto& s : seeds) s = {ur(rng) * spec.height, ur(rng) * spec.width};
        if (attempt % 32 == 31) min_gap *= 0.75;  // relax rather than spin forever
    }

    SynthResult result;
    result.truth.height = spec.height;
    result.truth.width = spec.width;
    result.truth.labels.resize(static_cast<size_t>(spec.height) * spec.width);
    for (int r = 0; r < spec.height; ++r) {
        for (int c = 0; c < spec.width; ++c) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int k = 0; k < spec.classes; ++k) {
                const double dr = r + 0.5 - seeds[k].first;
                const double dc = c + 0.5 - seeds[k].second;
                const double d = dr * dr + dc * dc;
                if (d < best_d) {
                    best_d = d;
                    best = k;
                }
            }
            result.truth.at(r, c) = best + 1;
        }
    }

    // Features: class mean + isotropic Gaussian noise.
    result.cube.height = spec.height;
    result.cube.width = spec.width;
    result.cube.bands = spec.bands;
    result.cube.values.resize(static_cast<size_t>(spec.height) * spec.width * spec.bands);
    std::normal_distribution<double> gauss(0.0, spec.noise_sigma);
    for (int p = 0; p < result.cube.num_pixels(); ++p) {
        const int k = result.truth.labels[p] - 1;
        for (int b = 0; b < spec.bands; ++b) {
            result.cube.values[static_cast<size_t>(b) * result.cube.num_pixels() + p] =
                static_cast<float>(means(k, b) + gauss(rng));
        }
    }

    // Sparse training labels: labeled_per_class pixels drawn per class.
    result.training_labels.height = spec.height;
    result.training_labels.width = spec.width;
    result.training_labels.labels.assign(result.truth.labels.size(), 0);
    for (int k = 1; k <= spec.classes; ++k) {
        std::vector<int> pool;
        for (int p = 0; p < result.cube.num_pixels(); ++p) {
            if (result.truth.labels[p] == k) pool.push_back(p);
        }
        if (static_cast<int>(pool.size()) < spec.labeled_per_class) {
            throw DataError("synthesize: class " + std::to_string(k) +
                            " region smaller than labeled_per_class");
        }
        std::shuffle(pool.begin(), pool.end(), rng);
        for (int i = 0; i < spec.labeled_per_class; ++i) {
            result.training_labels.labels[pool[i]] = k;
        }
    }
    return result;
}

double two_class_bayes_oa(double separation, double noise_sigma) {
    const double x = separation / (2.0 * noise_sigma);
    return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

}  // namespace ivm
