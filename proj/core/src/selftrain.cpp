#include "ivm/selftrain.hpp"

#include <algorithm>
#include <cmath>

#include "ivm/errors.hpp"

namespace ivm {

void AcquisitionConfig::validate() const {
    if (!(probability_floor > 0.0) || !(probability_floor < uncertainty_ceiling) ||
        !(uncertainty_ceiling <= 1.0)) {
        throw ConfigError("acquisition: need 0 < floor < ceiling <= 1");
    }
    if (per_class_quota < 1) throw ConfigError("acquisition: per_class_quota must be >= 1");
    if (noise_sigma_fraction < 0.0) {
        throw ConfigError("acquisition: noise_sigma_fraction must be >= 0");
    }
    if (max_iterations < 0) throw ConfigError("acquisition: max_iterations must be >= 0");
}

CandidatePool acquire(const Eigen::Ref<const Matrix>& probs,
                      const Eigen::Ref<const Eigen::VectorXi>& ivm_labels,
                      const Eigen::Ref<const Eigen::VectorXi>& drf_labels,
                      const AcquisitionConfig& config, const std::set<int>& excluded) {
    config.validate();
    if (probs.rows() != ivm_labels.size() || probs.rows() != drf_labels.size()) {
        throw std::invalid_argument("acquire: pixel field size mismatch");
    }
    CandidatePool pool;
    for (Eigen::Index p = 0; p < probs.rows(); ++p) {
        if (ivm_labels[p] == drf_labels[p]) continue;
        if (excluded.count(static_cast<int>(p))) continue;
        const double top = probs.row(p).maxCoeff();
        if (top >= config.uncertainty_ceiling) continue;  // confident enough already
        if (top < config.probability_floor) continue;     // too unstable to trust
        Candidate c;
        c.pixel = static_cast<int>(p);
        c.drf_label = drf_labels[p];
        c.probs = probs.row(p).transpose();
        c.origin = CandidateOrigin::Disagreement;
        pool.push_back(std::move(c));
    }
    return pool;
}

void leverage_rank(CandidatePool& pool, const Eigen::Ref<const Matrix>& pixel_features,
                   const IncrementalState& state, std::vector<std::string>* warnings) {
    if (pool.empty()) return;
    Matrix x_pot(static_cast<Eigen::Index>(pool.size()), pixel_features.cols());
    Vector weights(static_cast<Eigen::Index>(pool.size()));
    for (size_t j = 0; j < pool.size(); ++j) {
        x_pot.row(static_cast<Eigen::Index>(j)) = pixel_features.row(pool[j].pixel);
        // Weight of the class the sample would join: r = p_c (1 - p_c) of
        // the DRF-assigned class.
        const double p_c = std::min(std::max(pool[j].probs[pool[j].drf_label - 1],
                                             kProbClamp),
                                    1.0 - kProbClamp);
        weights[static_cast<Eigen::Index>(j)] = std::max(p_c * (1.0 - p_c), kProbClamp);
    }
    const Matrix k_pot =
        kernel_matrix(x_pot, state.import_features(), state.config().kernel);
    try {
        const Vector l = weighted_leverage(k_pot, weights, nullptr);
        for (size_t j = 0; j < pool.size(); ++j) {
            pool[j].leverage = l[static_cast<Eigen::Index>(j)];
        }
        std::stable_sort(pool.begin(), pool.end(), [](const Candidate& a, const Candidate& b) {
            return a.leverage > b.leverage;
        });
    } catch (const NumericalError& err) {
        if (warnings) {
            warnings->push_back(std::string("leverage_rank: ") + err.what() +
                                "; falling back to max(p)-ascending order");
        }
        for (auto& c : pool) c.leverage = 0.0;
        std::stable_sort(pool.begin(), pool.end(), [](const Candidate& a, const Candidate& b) {
            return a.probs.maxCoeff() < b.probs.maxCoeff();
        });
    }
}

std::vector<ClassBatch> balance(const CandidatePool& pool,
                                const Eigen::Ref<const Matrix>& probs,
                                const Eigen::Ref<const Eigen::VectorXi>& ivm_labels,
                                const Eigen::Ref<const Eigen::VectorXi>& drf_labels,
                                const Eigen::Ref<const Matrix>& pixel_features,
                                const IncrementalState& state,
                                const AcquisitionConfig& config, std::mt19937_64& rng,
                                const std::set<int>& excluded) {
    config.validate();
    const int num_classes = state.num_classes();
    const int quota = config.per_class_quota;

    // Agreement pixels per class, high probability first.
    std::vector<std::vector<std::pair<double, int>>> agreement(
        static_cast<size_t>(num_classes));
    for (Eigen::Index p = 0; p < probs.rows(); ++p) {
        if (ivm_labels[p] != drf_labels[p]) continue;
        if (excluded.count(static_cast<int>(p))) continue;
        agreement[static_cast<size_t>(ivm_labels[p]) - 1].push_back(
            {probs.row(p).maxCoeff(), static_cast<int>(p)});
    }
    for (auto& v : agreement) {
        std::stable_sort(v.begin(), v.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
    }

    // Per-feature std of the current training rows drives the duplication noise.
    const Matrix& train = state.features();
    const Vector mean = train.colwise().mean();
    const Vector stddev =
        ((train.rowwise() - mean.transpose()).array().square().colwise().sum() /
         static_cast<double>(train.rows()))
            .sqrt()
            .matrix()
            .transpose();

    std::vector<ClassBatch> batches;
    for (int cls = 1; cls <= num_classes; ++cls) {
        ClassBatch batch;
        batch.label = cls;
        batch.features.resize(quota, pixel_features.cols());
        int filled = 0;

        for (const Candidate& c : pool) {  // pool is leverage-ranked
            if (filled >= quota) break;
            if (c.drf_label != cls) continue;
            batch.features.row(filled) = pixel_features.row(c.pixel);
            batch.origins.push_back(CandidateOrigin::Disagreement);
            batch.pixels.push_back(c.pixel);
            ++filled;
        }
        for (const auto& [top, pixel] : agreement[static_cast<size_t>(cls) - 1]) {
            if (filled >= quota) break;
            batch.features.row(filled) = pixel_features.row(pixel);
            batch.origins.push_back(CandidateOrigin::AgreementBalance);
            batch.pixels.push_back(pixel);
            ++filled;
        }
        if (filled < quota) {
            std::vector<int> class_rows;
            for (Eigen::Index i = 0; i < state.labels().size(); ++i) {
                if (state.labels()[i] == cls) class_rows.push_back(static_cast<int>(i));
            }
            if (class_rows.empty()) {
                throw DataError("balance: class " + std::to_string(cls) +
                                " has no training rows to oversample");
            }
            std::uniform_int_distribution<size_t> pick(0, class_rows.size() - 1);
            std::normal_distribution<double> gauss(0.0, 1.0);
            while (filled < quota) {
                const int row = class_rows[pick(rng)];
                Vector f = train.row(row).transpose();
                for (Eigen::Index b = 0; b < f.size(); ++b) {
                    f[b] += config.noise_sigma_fraction * stddev[b] * gauss(rng);
                }
                batch.features.row(filled) = f.transpose();
                batch.origins.push_back(CandidateOrigin::Oversampled);
                batch.pixels.push_back(-1);
                ++filled;
            }
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

SelfTrainReport self_train(IncrementalState& state, const HyperCube& cube,
                           const SelfTrainConfig& config, const LabelRaster* truth,
                           const std::function<void(const IterationRecord&)>& on_iteration) {
    config.acquisition.validate();
    if (truth && (truth->height != cube.height || truth->width != cube.width)) {
        throw DataError("self_train: truth raster dimensions do not match cube");
    }

    SelfTrainReport report;
    Matrix pixel_features = cube.pixel_matrix();
    if (state.stats()) pixel_features = state.stats()->apply(pixel_features);

    std::mt19937_64 rng(config.acquisition.seed);
    int barren_streak = 0;  // consecutive iterations with oversampled-only batches

    auto score = [&](const Prediction& pred) -> std::optional<AccuracySummary> {
        if (!truth) return std::nullopt;
        std::vector<int> t, p;
        for (int i = 0; i < cube.num_pixels(); ++i) {
            if (truth->labels[i] > 0) {
                t.push_back(truth->labels[i]);
                p.push_back(pred.labels[i]);
            }
        }
        if (t.empty()) return std::nullopt;
        const Eigen::Map<const Eigen::VectorXi> tv(t.data(), static_cast<Eigen::Index>(t.size()));
        const Eigen::Map<const Eigen::VectorXi> pv(p.data(), static_cast<Eigen::Index>(p.size()));
        return oa_aa_kappa(confusion(tv, pv, state.num_classes()));
    };

    for (int iteration = 1; iteration <= config.acquisition.max_iterations; ++iteration) {
        const Prediction pred = predict(state.to_model(), pixel_features);
        const drf::LatticeProblem problem = drf::lattice_from_probs(
            pred.probs, cube.height, cube.width, config.beta, config.neighborhood);
        const drf::Labeling smoothed = drf::infer(problem);
        const Eigen::Map<const Eigen::VectorXi> drf_labels(
            smoothed.labels.data(), static_cast<Eigen::Index>(smoothed.labels.size()));

        std::set<int> excluded;
        for (int pid : state.pixel_ids()) {
            if (pid >= 0) excluded.insert(pid);
        }

        CandidatePool pool =
            acquire(pred.probs, pred.labels, drf_labels, config.acquisition, excluded);
        if (pool.empty()) break;  // nothing left to select
        leverage_rank(pool, pixel_features, state, &report.warnings);

        const std::vector<ClassBatch> batches =
            balance(pool, pred.probs, pred.labels, drf_labels, pixel_features, state,
                    config.acquisition, rng, excluded);

        Eigen::Index total = 0;
        for (const auto& b : batches) total += b.features.rows();
        Matrix x_new(total, pixel_features.cols());
        Eigen::VectorXi y_new(total);
        std::vector<int> source_pixels;
        bool any_informative = false;
        Eigen::Index at = 0;
        for (const auto& b : batches) {
            for (Eigen::Index i = 0; i < b.features.rows(); ++i, ++at) {
                x_new.row(at) = b.features.row(i);
                y_new[at] = b.label;
                source_pixels.push_back(b.pixels[static_cast<size_t>(i)]);
                if (b.origins[static_cast<size_t>(i)] != CandidateOrigin::Oversampled) {
                    any_informative = true;
                }
            }
        }

        state.add_samples(x_new, y_new, iteration, source_pixels);
        const int pruned = config.prune_each_iteration ? state.prune() : 0;
        state.refresh_import_vectors();

        IterationRecord row;
        row.iteration = iteration;
        row.added = static_cast<int>(total);
        row.pruned = pruned;
        row.n_train = state.num_training();
        row.n_iv = static_cast<int>(state.import_indices().size());
        row.q = state.objective_value();
        row.all_oversampled = !any_informative;
        if (truth) {
            row.accuracy = score(predict(state.to_model(), pixel_features));
        }
        report.rows.push_back(row);
        if (on_iteration) on_iteration(row);

        barren_streak = any_informative ? 0 : barren_streak + 1;
        if (barren_streak >= 2) break;  // no information inflow
    }
    return report;
}

}  // namespace ivm
