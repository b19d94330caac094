#include "ivm/incremental.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "ivm/errors.hpp"

namespace ivm {

namespace {

double jitter_for_trace(double trace, Eigen::Index v) {
    if (v == 0) return 0.0;
    return 1e-10 * trace / static_cast<double>(v);
}

}  // namespace

Matrix smw_updated_inverse(const Eigen::Ref<const Matrix>& A_inv,
                           const Eigen::Ref<const Matrix>& U,
                           const Eigen::Ref<const Vector>& w_diag, double scale) {
    if (A_inv.rows() != A_inv.cols() || U.cols() != A_inv.rows() ||
        w_diag.size() != U.rows()) {
        throw std::invalid_argument("smw_updated_inverse: shape mismatch");
    }
    const Eigen::Index r = U.rows();
    if (r == 0) return A_inv;
    for (Eigen::Index i = 0; i < r; ++i) {
        if (w_diag[i] * scale == 0.0) {
            throw NumericalError("smw_updated_inverse: zero weight in the update");
        }
    }
    const Matrix UAinv = U * A_inv;                    // r x n
    Matrix inner = UAinv * U.transpose();              // r x r
    for (Eigen::Index i = 0; i < r; ++i) inner(i, i) += 1.0 / (scale * w_diag[i]);

    Eigen::FullPivLU<Matrix> lu(inner);
    if (!lu.isInvertible()) {
        throw NumericalError("smw_updated_inverse: singular inner system");
    }
    Matrix result = A_inv - UAinv.transpose() * lu.solve(UAinv);
    if (!result.allFinite()) {
        throw NumericalError("smw_updated_inverse: non-finite result");
    }
    return result;
}

IncrementalState::IncrementalState(const LabeledDataset& initial, const IvmModel& model,
                                   TrainConfig config)
    : features_(initial.features),
      labels_(initial.labels),
      cfg_(std::move(config)),
      num_classes_(initial.num_classes),
      class_names_(initial.class_names),
      stats_(initial.stats) {
    initial.validate();
    if (model.feature_dim() != features_.cols()) {
        throw DataError("IncrementalState: model/dataset feature dimension mismatch");
    }
    if (model.num_classes != num_classes_) {
        throw DataError("IncrementalState: model/dataset class count mismatch");
    }
    cfg_.kernel = model.kernel_params;
    cfg_.lambda = model.lambda;

    targets_ = one_hot(labels_, num_classes_);
    provenance_.assign(static_cast<size_t>(features_.rows()), RowProvenance{});
    pixel_ids_ = initial.pixel_ids;
    pixel_ids_.resize(static_cast<size_t>(features_.rows()), -1);
    initial_count_ = static_cast<int>(features_.rows());

    // Resolve the model's import vectors against the dataset rows.
    x_v_ = model.import_vectors.X_V;
    for (Eigen::Index i = 0; i < x_v_.rows(); ++i) {
        int found = -1;
        for (Eigen::Index n = 0; n < features_.rows(); ++n) {
            if (features_.row(n) == x_v_.row(i)) {
                found = static_cast<int>(n);
                break;
            }
        }
        if (found < 0) {
            throw DataError("IncrementalState: import vector " + std::to_string(i) +
                            " is not a row of the training set");
        }
        import_indices_.push_back(found);
    }

    Matrix k_v = kernel_matrix(features_, x_v_, cfg_.kernel);
    Matrix k_r = kernel_matrix(x_v_, x_v_, cfg_.kernel);
    state_.emplace(std::move(k_v), std::move(k_r), targets_, cfg_.lambda);
    state_->set_alpha(model.alpha);
    rebuild_inverse_cache();
}

std::vector<Matrix> IncrementalState::normal_matrices() const {
    const double n = static_cast<double>(state_->num_samples());
    const Eigen::Index v = state_->num_import_vectors();
    const double jitter = jitter_for_trace(state_->regularizer_block().trace(), v);
    std::vector<Matrix> out;
    for (Eigen::Index k = 0; k < state_->alpha().cols(); ++k) {
        const Vector r = state_->weights().col(k);
        const Matrix weighted = (state_->kernel_block().array().colwise() * r.array()).matrix();
        Matrix a = (state_->kernel_block().transpose() * weighted) / n +
                   cfg_.lambda * state_->regularizer_block();
        a.diagonal().array() += jitter;
        out.push_back(std::move(a));
    }
    return out;
}

void IncrementalState::rebuild_inverse_cache() {
    a_inv_.clear();
    for (Matrix& a : normal_matrices()) {
        Eigen::LLT<Matrix> llt(a);
        if (llt.info() != Eigen::Success) {
            a.diagonal().array() += 1e-10 * a.trace() / a.rows() + 1e-12;
            llt.compute(a);
            if (llt.info() != Eigen::Success) {
                throw NumericalError("IncrementalState: singular normal matrix");
            }
        }
        a_inv_.push_back(llt.solve(Matrix::Identity(a.rows(), a.cols())));
    }
}

double IncrementalState::cache_deviation() const {
    const std::vector<Matrix> normals = normal_matrices();
    double worst = 0.0;
    for (size_t k = 0; k < normals.size(); ++k) {
        const Eigen::Index v = normals[k].rows();
        if (v == 0) continue;
        const double dev = (normals[k] * a_inv_[k] - Matrix::Identity(v, v)).norm() /
                           std::sqrt(static_cast<double>(v));
        worst = std::max(worst, dev);
    }
    return worst;
}

void IncrementalState::add_samples(const Eigen::Ref<const Matrix>& X_new,
                                   const Eigen::Ref<const Eigen::VectorXi>& y_new,
                                   int iteration, const std::vector<int>& source_pixels) {
    if (X_new.rows() == 0) return;  // dN = 0: state unchanged
    if (X_new.rows() != y_new.size()) {
        throw std::invalid_argument("add_samples: feature/label count mismatch");
    }
    if (!source_pixels.empty() &&
        source_pixels.size() != static_cast<size_t>(X_new.rows())) {
        throw std::invalid_argument("add_samples: source pixel count mismatch");
    }
    if (X_new.cols() != features_.cols()) {
        throw std::invalid_argument("add_samples: feature dimension mismatch");
    }
    if (!X_new.allFinite()) throw DataError("add_samples: non-finite features");

    const Eigen::Index dn = X_new.rows();
    const double n_old = static_cast<double>(state_->num_samples());
    const double n_new = n_old + static_cast<double>(dn);
    const Eigen::Index v = state_->num_import_vectors();
    const Eigen::Index classes = state_->alpha().cols();

    const Matrix t_new = one_hot(y_new, num_classes_);
    const Matrix k_new = kernel_matrix(X_new, x_v_, cfg_.kernel);
    const Matrix p_new_raw = probabilities(k_new, state_->alpha());
    const Matrix p_new = p_new_raw.cwiseMax(kProbClamp).cwiseMin(1.0 - kProbClamp);
    const Matrix r_new = (p_new.array() * (1.0 - p_new.array())).cwiseMax(kProbClamp).matrix();

    // One Newton step at the enlarged problem through the cached inverses.
    // The 1/N weight of the data term changes from 1/N_old to 1/N_new, so the
    // cached inverse is first rescale-corrected in V x V algebra; the dN x dN
    // inner solve then absorbs the new rows.
    const double c = n_old / n_new;
    const double jitter = jitter_for_trace(state_->regularizer_block().trace(), v);
    Matrix alpha_next(v, classes);
    bool smw_ok = true;
    for (Eigen::Index k = 0; k < classes && smw_ok; ++k) {
        // A' = c * A_old + (1 - c) * (lambda K_R + jitter I)
        Matrix a_prime = Matrix(cfg_.lambda * state_->regularizer_block());
        a_prime.diagonal().array() += jitter;
        a_prime = c * (normal_matrices()[static_cast<size_t>(k)]) + (1.0 - c) * a_prime;
        Eigen::LLT<Matrix> llt(a_prime);
        if (llt.info() != Eigen::Success) {
            smw_ok = false;
            break;
        }
        const Matrix a_prime_inv = llt.solve(Matrix::Identity(v, v));

        try {
            const Matrix h_inv =
                smw_updated_inverse(a_prime_inv, k_new, r_new.col(k), 1.0 / n_new);
            // RHS = 1/N_new (K_old' R_old z_old + K_new' R_new z_new), with
            // z = K alpha + (t - p) / r so R z = R K alpha + (t - p).
            const Vector rz_old = state_->weights().col(k).cwiseProduct(
                state_->working_response(k));
            const Vector rz_new =
                r_new.col(k).cwiseProduct(k_new * state_->alpha().col(k)) +
                (t_new.col(k) - p_new.col(k));
            const Vector rhs = (state_->kernel_block().transpose() * rz_old +
                                k_new.transpose() * rz_new) /
                               n_new;
            alpha_next.col(k) = h_inv * rhs;
            if (!alpha_next.col(k).allFinite()) smw_ok = false;
        } catch (const NumericalError&) {
            smw_ok = false;
        }
    }

    // Commit the enlarged blocks. K_R is untouched by training-row updates.
    Matrix k_v_next(state_->num_samples() + dn, v);
    k_v_next.topRows(state_->num_samples()) = state_->kernel_block();
    k_v_next.bottomRows(dn) = k_new;
    Matrix targets_next(targets_.rows() + dn, targets_.cols());
    targets_next.topRows(targets_.rows()) = targets_;
    targets_next.bottomRows(dn) = t_new;

    Matrix features_next(features_.rows() + dn, features_.cols());
    features_next.topRows(features_.rows()) = features_;
    features_next.bottomRows(dn) = X_new;
    Eigen::VectorXi labels_next(labels_.size() + dn);
    labels_next.head(labels_.size()) = labels_;
    labels_next.tail(dn) = y_new;

    features_ = std::move(features_next);
    labels_ = std::move(labels_next);
    targets_ = std::move(targets_next);
    for (Eigen::Index i = 0; i < dn; ++i) {
        provenance_.push_back({RowOrigin::Acquired, iteration});
        pixel_ids_.push_back(source_pixels.empty() ? -1
                                                   : source_pixels[static_cast<size_t>(i)]);
    }
    acquired_count_ += static_cast<int>(dn);

    const Matrix warm = smw_ok ? alpha_next : state_->alpha();
    if (!smw_ok) {
        warnings_.push_back("add_samples: SMW inner system singular; full refit fallback");
    }
    state_.emplace(std::move(k_v_next), Matrix(state_->regularizer_block()), targets_,
                   cfg_.lambda);
    state_->set_alpha(warm);
    fit(*state_, cfg_.fit);
    rebuild_inverse_cache();
}

void IncrementalState::remove_samples(std::vector<int> rows) {
    if (rows.empty()) return;
    std::sort(rows.begin(), rows.end());
    rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
    for (int r : rows) {
        if (r < 0 || r >= num_training()) {
            throw std::invalid_argument("remove_samples: row out of range");
        }
        if (std::find(import_indices_.begin(), import_indices_.end(), r) !=
            import_indices_.end()) {
            throw std::invalid_argument("remove_samples: row " + std::to_string(r) +
                                        " is an import vector; refresh the import set first");
        }
    }
    // Keep at least one sample of every class.
    std::vector<int> remaining = [&] {
        std::vector<int> counts(static_cast<size_t>(num_classes_), 0);
        for (Eigen::Index i = 0; i < labels_.size(); ++i) ++counts[labels_[i] - 1];
        for (int r : rows) --counts[labels_[r] - 1];
        return counts;
    }();
    for (int k = 0; k < num_classes_; ++k) {
        if (remaining[k] < 1) {
            throw std::invalid_argument("remove_samples: would drop the last sample of class " +
                                        std::to_string(k + 1));
        }
    }

    const Eigen::Index dn = static_cast<Eigen::Index>(rows.size());
    const double n_old = static_cast<double>(state_->num_samples());
    const double n_new = n_old - static_cast<double>(dn);
    const Eigen::Index v = state_->num_import_vectors();
    const Eigen::Index classes = state_->alpha().cols();

    std::vector<char> removed_mask(static_cast<size_t>(num_training()), 0);
    for (int r : rows) removed_mask[r] = 1;

    Matrix k_rem(dn, v);
    for (Eigen::Index i = 0; i < dn; ++i) k_rem.row(i) = state_->kernel_block().row(rows[i]);

    // Sign-flipped SMW downdate of the cached inverse, then the same Newton
    // right-hand side evaluated over the kept rows only.
    const double c = n_old / n_new;
    const double jitter = jitter_for_trace(state_->regularizer_block().trace(), v);
    Matrix alpha_next(v, classes);
    bool smw_ok = true;
    const std::vector<Matrix> normals = normal_matrices();
    for (Eigen::Index k = 0; k < classes && smw_ok; ++k) {
        Matrix a_prime = Matrix(cfg_.lambda * state_->regularizer_block());
        a_prime.diagonal().array() += jitter;
        a_prime = c * normals[static_cast<size_t>(k)] + (1.0 - c) * a_prime;
        Eigen::LLT<Matrix> llt(a_prime);
        if (llt.info() != Eigen::Success) {
            smw_ok = false;
            break;
        }
        const Matrix a_prime_inv = llt.solve(Matrix::Identity(v, v));
        Vector r_rem(dn);
        for (Eigen::Index i = 0; i < dn; ++i) r_rem[i] = state_->weights()(rows[i], k);
        try {
            const Matrix h_inv =
                smw_updated_inverse(a_prime_inv, k_rem, r_rem, -1.0 / n_new);
            const Vector rz_all = state_->weights().col(k).cwiseProduct(
                state_->working_response(k));
            Vector rhs_acc = Vector::Zero(v);
            for (Eigen::Index i = 0; i < state_->num_samples(); ++i) {
                if (!removed_mask[i]) {
                    rhs_acc += state_->kernel_block().row(i).transpose() * rz_all[i];
                }
            }
            alpha_next.col(k) = h_inv * (rhs_acc / n_new);
            if (!alpha_next.col(k).allFinite()) smw_ok = false;
        } catch (const NumericalError&) {
            smw_ok = false;
        }
    }

    // Shrink all stacked blocks.
    const Eigen::Index n_keep = static_cast<Eigen::Index>(n_new);
    Matrix features_next(n_keep, features_.cols());
    Eigen::VectorXi labels_next(n_keep);
    Matrix targets_next(n_keep, targets_.cols());
    Matrix k_v_next(n_keep, v);
    std::vector<RowProvenance> provenance_next;
    std::vector<int> pixel_ids_next;
    std::vector<int> index_map(static_cast<size_t>(num_training()), -1);
    Eigen::Index w = 0;
    for (Eigen::Index i = 0; i < features_.rows(); ++i) {
        if (removed_mask[i]) continue;
        features_next.row(w) = features_.row(i);
        labels_next[w] = labels_[i];
        targets_next.row(w) = targets_.row(i);
        k_v_next.row(w) = state_->kernel_block().row(i);
        provenance_next.push_back(provenance_[static_cast<size_t>(i)]);
        pixel_ids_next.push_back(pixel_ids_[static_cast<size_t>(i)]);
        index_map[static_cast<size_t>(i)] = static_cast<int>(w);
        ++w;
    }
    for (int& idx : import_indices_) idx = index_map[static_cast<size_t>(idx)];

    features_ = std::move(features_next);
    labels_ = std::move(labels_next);
    targets_ = std::move(targets_next);
    provenance_ = std::move(provenance_next);
    pixel_ids_ = std::move(pixel_ids_next);
    removed_count_ += static_cast<int>(dn);

    const Matrix warm = smw_ok ? alpha_next : state_->alpha();
    if (!smw_ok) {
        warnings_.push_back("remove_samples: SMW downdate indefinite; full refit fallback");
    }
    state_.emplace(std::move(k_v_next), Matrix(state_->regularizer_block()), targets_,
                   cfg_.lambda);
    state_->set_alpha(warm);
    fit(*state_, cfg_.fit);
    rebuild_inverse_cache();
}

Matrix IncrementalState::expanded_probs() const {
    const Matrix& p = state_->probs();
    if (p.cols() > 1) return p;
    Matrix out(p.rows(), 2);
    out.col(0) = (1.0 - p.col(0).array()).matrix();
    out.col(1) = p.col(0);
    return out;
}

Matrix IncrementalState::expanded_targets() const {
    const Matrix& t = targets_;
    if (t.cols() > 1) return t;
    Matrix out(t.rows(), 2);
    out.col(0) = (1.0 - t.col(0).array()).matrix();
    out.col(1) = t.col(0);
    return out;
}

Vector weighted_leverage(const Eigen::Ref<const Matrix>& k_rows,
                         const Eigen::Ref<const Vector>& row_weights,
                         std::vector<int>* dominant) {
    if (k_rows.rows() != row_weights.size()) {
        throw std::invalid_argument("weighted_leverage: row/weight count mismatch");
    }
    const Eigen::Index v = k_rows.cols();
    if (v == 0) throw std::invalid_argument("weighted_leverage: empty basis");

    // l = diag(K (K' R K)^{-1} K' R); the diagonal equals that of the
    // orthogonal projection onto col(sqrt(R) K), hence lies in [0, 1] and
    // sums to the column rank.
    Matrix m = k_rows.transpose() *
               (k_rows.array().colwise() * row_weights.array()).matrix();
    m.diagonal().array() += jitter_for_trace(m.trace(), v);
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() != Eigen::Success) {
        m.diagonal().array() += 1e-8 * m.trace() / static_cast<double>(v) + 1e-12;
        llt.compute(m);
        if (llt.info() != Eigen::Success) {
            throw NumericalError("weighted_leverage: singular weighted Gram matrix");
        }
    }

    Vector l(k_rows.rows());
    for (Eigen::Index i = 0; i < k_rows.rows(); ++i) {
        const Vector kn = k_rows.row(i).transpose();
        double val = row_weights[i] * kn.dot(llt.solve(kn));
        if (val >= 1.0) {
            if (dominant) dominant->push_back(static_cast<int>(i));
            val = 1.0 - 1e-9;
        }
        l[i] = std::max(val, 0.0);
    }
    return l;
}

CooksReport IncrementalState::cooks_distances() const {
    CooksReport report;
    const Matrix p = expanded_probs();
    const Matrix t = expanded_targets();
    const Eigen::Index n = p.rows();

    report.parameter_count = static_cast<int>(state_->alpha().size());
    // Each training row weighted by its own class's r_nn (binary mode keeps
    // one shared weight column).
    Vector row_weights(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index col = state_->weights().cols() == 1 ? 0 : labels_[i] - 1;
        row_weights[i] = state_->weights()(i, col);
    }
    report.leverage =
        weighted_leverage(state_->kernel_block(), row_weights, &report.dominant);

    // MSE per class: 1 - mean probability of the class's own training
    // samples, summed over classes; floored against perfect fits.
    double mse = 0.0;
    for (int k = 1; k <= num_classes_; ++k) {
        double acc = 0.0;
        int count = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (labels_[i] == k) {
                acc += p(i, k - 1);
                ++count;
            }
        }
        if (count > 0) mse += 1.0 - acc / count;
    }
    mse = std::max(mse, 1e-12);
    report.mse = mse;

    report.distance.resize(n);
    const double a = static_cast<double>(report.parameter_count);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double resid = (p.row(i) - t.row(i)).squaredNorm();
        const double l = report.leverage[i];
        report.distance[i] = resid / (a * mse) * l / ((1.0 - l) * (1.0 - l));
    }
    return report;
}

namespace {

// Full value snapshot for prune rollback.
struct StateSnapshot {
    Matrix features;
    Eigen::VectorXi labels;
    Matrix targets;
    std::vector<RowProvenance> provenance;
    std::vector<int> pixel_ids;
    std::vector<int> import_indices;
    Matrix k_v, k_r, alpha;
    int removed_count;
};

}  // namespace

int IncrementalState::prune() {
    const double q_base = objective_value();
    int pruned = 0;
    while (true) {
        std::vector<int> counts(static_cast<size_t>(num_classes_), 0);
        for (Eigen::Index i = 0; i < labels_.size(); ++i) ++counts[labels_[i] - 1];

        const CooksReport report = cooks_distances();
        int candidate = -1;
        double best_d = std::numeric_limits<double>::infinity();
        for (int i = 0; i < num_training(); ++i) {
            if (counts[labels_[i] - 1] <= 1) continue;
            if (std::find(import_indices_.begin(), import_indices_.end(), i) !=
                import_indices_.end()) {
                continue;
            }
            if (report.distance[i] < best_d) {
                best_d = report.distance[i];
                candidate = i;
            }
        }
        if (candidate < 0) break;

        StateSnapshot snap{features_, labels_, targets_, provenance_, pixel_ids_,
                           import_indices_, state_->kernel_block(),
                           Matrix(state_->regularizer_block()), state_->alpha(),
                           removed_count_};
        remove_samples({candidate});
        if (objective_value() > 1.05 * q_base) {
            features_ = std::move(snap.features);
            labels_ = std::move(snap.labels);
            targets_ = std::move(snap.targets);
            provenance_ = std::move(snap.provenance);
            pixel_ids_ = std::move(snap.pixel_ids);
            import_indices_ = std::move(snap.import_indices);
            removed_count_ = snap.removed_count;
            state_.emplace(std::move(snap.k_v), std::move(snap.k_r), targets_, cfg_.lambda);
            state_->set_alpha(std::move(snap.alpha));
            rebuild_inverse_cache();
            break;
        }
        ++pruned;
    }
    return pruned;
}

void IncrementalState::refresh_import_vectors() {
    IvmTrainer trainer(features_, targets_, cfg_);
    trainer.warm_start(import_indices_, state_->alpha());
    trainer.run();

    import_indices_ = trainer.import_indices();
    x_v_.resize(static_cast<Eigen::Index>(import_indices_.size()), features_.cols());
    for (size_t i = 0; i < import_indices_.size(); ++i) {
        x_v_.row(static_cast<Eigen::Index>(i)) = features_.row(import_indices_[i]);
    }
    state_.emplace(Matrix(trainer.state().kernel_block()),
                   Matrix(trainer.state().regularizer_block()), targets_, cfg_.lambda);
    state_->set_alpha(trainer.state().alpha());
    rebuild_inverse_cache();
}

IvmModel IncrementalState::to_model() const {
    IvmModel model;
    model.import_vectors.indices = import_indices_;
    model.import_vectors.X_V = x_v_;
    model.alpha = state_->alpha();
    model.kernel_params = cfg_.kernel;
    model.lambda = cfg_.lambda;
    model.num_classes = num_classes_;
    model.class_names = class_names_;
    model.stats = stats_;
    model.num_training_samples = num_training();
    model.final_objective = objective_value();
    return model;
}

}  // namespace ivm
