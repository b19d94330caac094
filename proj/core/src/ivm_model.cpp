#include "ivm/ivm_model.hpp"

#include <cstring>
#include <fstream>

#include "ivm/errors.hpp"
#include "ivm/klr.hpp"

namespace ivm {

namespace {

constexpr char kModelMagic[4] = {'I', 'V', 'M', 'M'};
constexpr uint32_t kModelVersion = 1;

void put_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& in, const std::filesystem::path& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
        throw DataError(path.string() + ": truncated model file");
    }
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void put_f64(std::ostream& out, double v) {
    static_assert(sizeof(double) == 8);
    out.write(reinterpret_cast<const char*>(&v), 8);
}

double get_f64(std::istream& in, const std::filesystem::path& path) {
    double v;
    if (!in.read(reinterpret_cast<char*>(&v), 8)) {
        throw DataError(path.string() + ": truncated model file");
    }
    return v;
}

}  // namespace

Prediction predict(const IvmModel& model, const Eigen::Ref<const Matrix>& X) {
    if (X.cols() != model.feature_dim()) {
        throw std::invalid_argument("predict: feature dimension mismatch (got " +
                                    std::to_string(X.cols()) + ", model expects " +
                                    std::to_string(model.feature_dim()) + ")");
    }
    const Matrix k = kernel_matrix(X, model.import_vectors.X_V, model.kernel_params);
    Matrix p = probabilities(k, model.alpha);

    Prediction pred;
    if (model.alpha.cols() == 1) {
        pred.probs.resize(p.rows(), 2);
        pred.probs.col(0) = 1.0 - p.col(0).array();
        pred.probs.col(1) = p.col(0);
        pred.labels.resize(p.rows());
        for (Eigen::Index i = 0; i < p.rows(); ++i) {
            pred.labels[i] = p(i, 0) > 0.5 ? 2 : 1;
        }
    } else {
        pred.probs = std::move(p);
        pred.labels.resize(pred.probs.rows());
        for (Eigen::Index i = 0; i < pred.probs.rows(); ++i) {
            Eigen::Index k_best = 0;
            pred.probs.row(i).maxCoeff(&k_best);
            pred.labels[i] = static_cast<int>(k_best) + 1;
        }
    }
    return pred;
}

void save_model(const IvmModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(path.string() + ": cannot write model");
    out.write(kModelMagic, 4);
    put_u32(out, kModelVersion);
    put_u32(out, static_cast<uint32_t>(model.num_classes));
    put_u32(out, static_cast<uint32_t>(model.feature_dim()));
    put_u32(out, static_cast<uint32_t>(model.num_import_vectors()));
    put_f64(out, model.kernel_params.gamma);
    put_f64(out, model.lambda);
    for (int k = 0; k < model.num_classes; ++k) {
        const std::string name = k < static_cast<int>(model.class_names.size())
                                     ? model.class_names[k]
                                     : "class_" + std::to_string(k + 1);
        put_u32(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
    }
    out.put(model.stats ? 1 : 0);
    if (model.stats) {
        for (Eigen::Index i = 0; i < model.stats->mean.size(); ++i) put_f64(out, model.stats->mean[i]);
        for (Eigen::Index i = 0; i < model.stats->stddev.size(); ++i) put_f64(out, model.stats->stddev[i]);
    }
    // X_V row-major
    for (Eigen::Index i = 0; i < model.import_vectors.X_V.rows(); ++i) {
        for (Eigen::Index j = 0; j < model.import_vectors.X_V.cols(); ++j) {
            put_f64(out, model.import_vectors.X_V(i, j));
        }
    }
    put_u32(out, static_cast<uint32_t>(model.alpha.cols()));
    // alpha column-major
    for (Eigen::Index j = 0; j < model.alpha.cols(); ++j) {
        for (Eigen::Index i = 0; i < model.alpha.rows(); ++i) put_f64(out, model.alpha(i, j));
    }
    put_u32(out, static_cast<uint32_t>(model.num_training_samples));
    put_f64(out, model.final_objective);
    if (!out) throw DataError(path.string() + ": model write failed");
}

IvmModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path.string() + ": cannot open model");
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kModelMagic, 4) != 0) {
        throw DataError(path.string() + ": not an IVM model file");
    }
    const uint32_t version = get_u32(in, path);
    if (version != kModelVersion) {
        throw DataError(path.string() + ": unsupported model version " + std::to_string(version));
    }
    IvmModel model;
    model.num_classes = static_cast<int>(get_u32(in, path));
    const auto m = static_cast<Eigen::Index>(get_u32(in, path));
    const auto v = static_cast<Eigen::Index>(get_u32(in, path));
    model.kernel_params.gamma = get_f64(in, path);
    model.lambda = get_f64(in, path);
    for (int k = 0; k < model.num_classes; ++k) {
        const uint32_t len = get_u32(in, path);
        std::string name(len, '\0');
        if (!in.read(name.data(), len)) throw DataError(path.string() + ": truncated class name");
        model.class_names.push_back(std::move(name));
    }
    const int has_stats = in.get();
    if (has_stats == 1) {
        NormalizationStats stats;
        stats.mean.resize(m);
        stats.stddev.resize(m);
        for (Eigen::Index i = 0; i < m; ++i) stats.mean[i] = get_f64(in, path);
        for (Eigen::Index i = 0; i < m; ++i) stats.stddev[i] = get_f64(in, path);
        model.stats = std::move(stats);
    } else if (has_stats != 0) {
        throw DataError(path.string() + ": corrupt stats flag");
    }
    model.import_vectors.X_V.resize(v, m);
    for (Eigen::Index i = 0; i < v; ++i) {
        for (Eigen::Index j = 0; j < m; ++j) model.import_vectors.X_V(i, j) = get_f64(in, path);
    }
    const auto alpha_cols = static_cast<Eigen::Index>(get_u32(in, path));
    model.alpha.resize(v, alpha_cols);
    for (Eigen::Index j = 0; j < alpha_cols; ++j) {
        for (Eigen::Index i = 0; i < v; ++i) model.alpha(i, j) = get_f64(in, path);
    }
    model.num_training_samples = static_cast<int>(get_u32(in, path));
    model.final_objective = get_f64(in, path);

    if (model.num_classes < 2 || v < 1) {
        throw DataError(path.string() + ": degenerate model");
    }
    return model;
}

}  // namespace ivm
