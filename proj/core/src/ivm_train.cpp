#include "ivm/ivm_train.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>

#include "ivm/errors.hpp"

namespace ivm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
// Relative slack on the backward-drop acceptance rule.
constexpr double kDropSlack = 1e-6;
// Forward commits may not worsen the objective beyond this absolute slack.
constexpr double kMonotoneSlack = 1e-9;

double jitter_for_trace(double trace, Eigen::Index v) {
    if (v == 0) return 0.0;
    return 1e-10 * trace / static_cast<double>(v);
}

Eigen::LLT<Matrix> factor_normal(Matrix normal) {
    Eigen::LLT<Matrix> llt(normal);
    if (llt.info() != Eigen::Success) {
        normal.diagonal().array() += 1e-10 * (normal.trace() / normal.rows()) + 1e-12;
        llt.compute(normal);
        if (llt.info() != Eigen::Success) {
            throw NumericalError("ivm: singular normal matrix during selection");
        }
    }
    return llt;
}

}  // namespace

IvmTrainer::IvmTrainer(Matrix features, Matrix targets, TrainConfig config)
    : features_(std::move(features)),
      targets_(std::move(targets)),
      cfg_(std::move(config)),
      rng_(cfg_.seed) {
    if (features_.rows() != targets_.rows()) {
        throw std::invalid_argument("IvmTrainer: feature/target row mismatch");
    }
    if (features_.rows() < 1) throw std::invalid_argument("IvmTrainer: empty training block");
    const int n = static_cast<int>(features_.rows());
    max_iv_ = cfg_.max_iv > 0 ? std::min(cfg_.max_iv, n) : std::min(n, 500);
    in_set_.assign(n, 0);
    state_.emplace(Matrix(features_.rows(), 0), Matrix(0, 0), targets_, cfg_.lambda);
}

void IvmTrainer::warm_start(std::vector<int> import_indices, Matrix alpha) {
    for (int idx : import_indices) {
        if (idx < 0 || idx >= features_.rows()) {
            throw std::invalid_argument("warm_start: import index out of range");
        }
    }
    iv_ = std::move(import_indices);
    std::fill(in_set_.begin(), in_set_.end(), 0);
    for (int idx : iv_) in_set_[idx] = 1;

    Matrix x_v(iv_.size(), features_.cols());
    for (size_t i = 0; i < iv_.size(); ++i) x_v.row(i) = features_.row(iv_[i]);
    Matrix k_v = kernel_matrix(features_, x_v, cfg_.kernel);
    Matrix k_r = kernel_matrix(x_v, x_v, cfg_.kernel);
    state_.emplace(std::move(k_v), std::move(k_r), targets_, cfg_.lambda);
    state_->set_alpha(std::move(alpha));
    fit(*state_, cfg_.fit);
    trial_cache_valid_ = false;
}

Vector IvmTrainer::kernel_column(int candidate) const {
    return kernel_matrix(features_, features_.row(candidate), cfg_.kernel).col(0);
}

void IvmTrainer::refresh_trial_cache() const {
    const Eigen::Index v = state_->num_import_vectors();
    const Eigen::Index classes = state_->alpha().cols();
    const double n = static_cast<double>(features_.rows());
    const double jitter = jitter_for_trace(state_->regularizer_block().trace(), v);

    trial_cache_.clear();
    trial_cache_.resize(static_cast<size_t>(classes));
    for (Eigen::Index k = 0; k < classes; ++k) {
        TrialCache& cache = trial_cache_[static_cast<size_t>(k)];
        cache.r = state_->weights().col(k);
        const Vector z = state_->working_response(k);
        cache.rz = cache.r.cwiseProduct(z);
        if (v > 0) {
            const Matrix weighted =
                state_->kernel_block().array().colwise() * cache.r.array();
            Matrix normal = (state_->kernel_block().transpose() * weighted) / n +
                            cfg_.lambda * state_->regularizer_block();
            normal.diagonal().array() += jitter;
            cache.llt = factor_normal(std::move(normal));
            const Vector u = (state_->kernel_block().transpose() * cache.rz) / n;
            cache.w = cache.llt.solve(u);
        } else {
            cache.w = Vector(0);
        }
    }
    trial_cache_valid_ = true;
}

namespace {

struct TrialSolution {
    bool ok = false;
    double q = kInf;
    Matrix alpha;  // (V+1) x C, last row is the candidate coefficient
};

}  // namespace

// Bordered (Schur-complement) one-step solve with the candidate column
// appended, per class. Exact linear algebra against the enlarged normal
// matrix; only the factorization of the V x V block is reused.
double IvmTrainer::trial_objective(int candidate) const {
    if (candidate < 0 || candidate >= features_.rows() || in_set_[candidate]) {
        throw std::invalid_argument("trial_objective: invalid candidate");
    }
    if (!trial_cache_valid_) refresh_trial_cache();

    const Eigen::Index v = state_->num_import_vectors();
    const Eigen::Index classes = state_->alpha().cols();
    const double n = static_cast<double>(features_.rows());
    const Vector col = kernel_column(candidate);
    Vector k_rv(v);
    for (Eigen::Index i = 0; i < v; ++i) k_rv[i] = col[iv_[static_cast<size_t>(i)]];
    const double jitter =
        jitter_for_trace(state_->regularizer_block().trace() + 1.0, v + 1);

    Matrix scores(features_.rows(), classes);
    double penalty = 0.0;
    for (Eigen::Index k = 0; k < classes; ++k) {
        const TrialCache& cache = trial_cache_[static_cast<size_t>(k)];
        const Vector rc = cache.r.cwiseProduct(col);
        const Vector b = v > 0 ? Vector((state_->kernel_block().transpose() * rc) / n +
                                        cfg_.lambda * k_rv)
                               : Vector(0);
        const double d = col.dot(rc) / n + cfg_.lambda + jitter;
        const double rhs_last = cache.rz.dot(col) / n;

        Vector h_inv_b = v > 0 ? Vector(cache.llt.solve(b)) : Vector(0);
        const double schur = d - (v > 0 ? b.dot(h_inv_b) : 0.0);
        if (!(schur > 1e-14 * std::max(1.0, d))) return kInf;
        const double a_last = (rhs_last - (v > 0 ? b.dot(cache.w) : 0.0)) / schur;
        if (!std::isfinite(a_last)) return kInf;
        const Vector a_head = v > 0 ? Vector(cache.w - h_inv_b * a_last) : Vector(0);

        scores.col(k) = (v > 0 ? Vector(state_->kernel_block() * a_head) :
                                 Vector(Vector::Zero(features_.rows()))) +
                        col * a_last;
        penalty += (v > 0 ? a_head.dot(state_->regularizer_block() * a_head) +
                                2.0 * a_last * k_rv.dot(a_head)
                          : 0.0) +
                   a_last * a_last;
    }

    // Objective at the one-step coefficients.
    Matrix p;
    if (classes == 1) {
        p.resize(scores.rows(), 1);
        for (Eigen::Index i = 0; i < scores.rows(); ++i) {
            const double s = scores(i, 0);
            p(i, 0) = s >= 0.0 ? 1.0 / (1.0 + std::exp(-s))
                               : std::exp(s) / (1.0 + std::exp(s));
        }
    } else {
        const Vector row_max = scores.rowwise().maxCoeff();
        scores.colwise() -= row_max;
        p = scores.array().exp();
        const Vector denom = p.rowwise().sum();
        p.array().colwise() /= denom.array();
    }
    p = p.cwiseMax(kProbClamp).cwiseMin(1.0 - kProbClamp);
    double nll = 0.0;
    if (classes == 1) {
        nll = -(targets_.col(0).array() * p.col(0).array().log() +
                (1.0 - targets_.col(0).array()) * (1.0 - p.col(0).array()).log())
                   .sum();
    } else {
        nll = -(targets_.array() * p.array().log()).sum();
    }
    const double q = nll / n + 0.5 * cfg_.lambda * penalty;
    return std::isfinite(q) ? q : kInf;
}

std::vector<int> IvmTrainer::candidate_pool() {
    std::vector<int> pool;
    for (int i = 0; i < static_cast<int>(in_set_.size()); ++i) {
        if (!in_set_[i]) pool.push_back(i);
    }
    if (cfg_.candidate_subsample > 0 &&
        static_cast<int>(pool.size()) > cfg_.candidate_subsample) {
        std::shuffle(pool.begin(), pool.end(), rng_);
        pool.resize(static_cast<size_t>(cfg_.candidate_subsample));
        std::sort(pool.begin(), pool.end());
    }
    return pool;
}

std::pair<int, double> IvmTrainer::forward_step() {
    const std::vector<int> pool = candidate_pool();
    if (pool.empty()) throw std::logic_error("forward_step: no candidates left");

    int best = -1;
    double best_q = kInf;
    for (int c : pool) {  // ascending order; strict < breaks ties toward low index
        const double q = trial_objective(c);
        if (q < best_q) {
            best_q = q;
            best = c;
        }
    }
    if (best < 0) throw NumericalError("forward_step: no admissible candidate");

    // Recompute the winning one-step coefficients for the warm start.
    const Eigen::Index v = state_->num_import_vectors();
    const Eigen::Index classes = state_->alpha().cols();
    const double n = static_cast<double>(features_.rows());
    const Vector col = kernel_column(best);
    Vector k_rv(v);
    for (Eigen::Index i = 0; i < v; ++i) k_rv[i] = col[iv_[static_cast<size_t>(i)]];
    const double jitter =
        jitter_for_trace(state_->regularizer_block().trace() + 1.0, v + 1);
    Matrix warm(v + 1, classes);
    for (Eigen::Index k = 0; k < classes; ++k) {
        const TrialCache& cache = trial_cache_[static_cast<size_t>(k)];
        const Vector rc = cache.r.cwiseProduct(col);
        const Vector b = v > 0 ? Vector((state_->kernel_block().transpose() * rc) / n +
                                        cfg_.lambda * k_rv)
                               : Vector(0);
        const double d = col.dot(rc) / n + cfg_.lambda + jitter;
        const double rhs_last = cache.rz.dot(col) / n;
        Vector h_inv_b = v > 0 ? Vector(cache.llt.solve(b)) : Vector(0);
        const double schur = d - (v > 0 ? b.dot(h_inv_b) : 0.0);
        const double a_last = (rhs_last - (v > 0 ? b.dot(cache.w) : 0.0)) / schur;
        if (v > 0) warm.col(k).head(v) = cache.w - h_inv_b * a_last;
        warm(v, k) = a_last;
    }

    // Commit: append the column to K_V and the row/column to K_R.
    Matrix k_v_next(features_.rows(), v + 1);
    k_v_next.leftCols(v) = state_->kernel_block();
    k_v_next.col(v) = col;
    Matrix k_r_next(v + 1, v + 1);
    k_r_next.topLeftCorner(v, v) = state_->regularizer_block();
    k_r_next.block(0, v, v, 1) = k_rv;
    k_r_next.block(v, 0, 1, v) = k_rv.transpose();
    k_r_next(v, v) = 1.0;

    iv_.push_back(best);
    in_set_[best] = 1;
    state_.emplace(std::move(k_v_next), std::move(k_r_next), targets_, cfg_.lambda);
    state_->set_alpha(std::move(warm));
    if (cfg_.refit_after_commit) fit(*state_, cfg_.fit);
    trial_cache_valid_ = false;
    return {best, state_->objective_value()};
}

std::optional<int> IvmTrainer::backward_step() {
    const Eigen::Index v = state_->num_import_vectors();
    if (v < 2) return std::nullopt;
    const double q_current = state_->objective_value();
    const Eigen::Index classes = state_->alpha().cols();
    const double n = static_cast<double>(features_.rows());

    // One IRLS step in each restricted basis, with R and z taken from the
    // current converged model (the same convention as the forward trials);
    // a redundant column's weight then transfers to its duplicates exactly.
    std::vector<Vector> r(static_cast<size_t>(classes));
    std::vector<Vector> rz(static_cast<size_t>(classes));
    for (Eigen::Index k = 0; k < classes; ++k) {
        r[static_cast<size_t>(k)] = state_->weights().col(k);
        rz[static_cast<size_t>(k)] =
            r[static_cast<size_t>(k)].cwiseProduct(state_->working_response(k));
    }

    auto dropped_blocks = [&](Eigen::Index m) {
        Matrix k_v(features_.rows(), v - 1);
        Matrix k_r(v - 1, v - 1);
        Eigen::Index ci = 0;
        for (Eigen::Index i = 0; i < v; ++i) {
            if (i == m) continue;
            k_v.col(ci) = state_->kernel_block().col(i);
            Eigen::Index cj = 0;
            for (Eigen::Index j = 0; j < v; ++j) {
                if (j == m) continue;
                k_r(ci, cj) = state_->regularizer_block()(i, j);
                ++cj;
            }
            ++ci;
        }
        return std::pair<Matrix, Matrix>(std::move(k_v), std::move(k_r));
    };

    Eigen::Index best_m = -1;
    double best_q = kInf;
    Matrix best_alpha;
    for (Eigen::Index m = 0; m < v; ++m) {
        auto [k_v, k_r] = dropped_blocks(m);
        const double jitter = jitter_for_trace(k_r.trace(), v - 1);
        Matrix alpha_trial(v - 1, classes);
        bool ok = true;
        for (Eigen::Index k = 0; k < classes && ok; ++k) {
            const Vector& rk = r[static_cast<size_t>(k)];
            Matrix normal =
                (k_v.transpose() * (k_v.array().colwise() * rk.array()).matrix()) / n +
                cfg_.lambda * k_r;
            normal.diagonal().array() += jitter;
            Eigen::LLT<Matrix> llt(normal);
            if (llt.info() != Eigen::Success) {
                ok = false;
                break;
            }
            alpha_trial.col(k) = llt.solve((k_v.transpose() * rz[static_cast<size_t>(k)]) / n);
        }
        if (!ok) continue;  // removal candidate skipped
        const Matrix p = probabilities(k_v, alpha_trial);
        const double q = objective(p, targets_, alpha_trial, k_r, cfg_.lambda,
                                   state_->num_samples());
        if (q < best_q) {
            best_q = q;
            best_m = m;
            best_alpha = std::move(alpha_trial);
        }
    }
    if (best_m < 0 || best_q > q_current * (1.0 + kDropSlack)) return std::nullopt;

    auto [k_v, k_r] = dropped_blocks(best_m);
    const int removed = iv_[static_cast<size_t>(best_m)];
    iv_.erase(iv_.begin() + best_m);
    in_set_[removed] = 0;
    state_.emplace(std::move(k_v), std::move(k_r), targets_, cfg_.lambda);
    state_->set_alpha(std::move(best_alpha));
    if (cfg_.refit_after_commit) fit(*state_, cfg_.fit);
    trial_cache_valid_ = false;
    return removed;
}

TrainReport IvmTrainer::run() {
    TrainReport report;
    std::vector<double> committed = {state_->objective_value()};

    while (static_cast<int>(iv_.size()) < max_iv_) {
        bool has_candidate = false;
        for (int i = 0; i < static_cast<int>(in_set_.size()) && !has_candidate; ++i) {
            has_candidate = !in_set_[i];
        }
        if (!has_candidate) break;

        // Snapshot for rollback when greedy stops improving.
        struct Snapshot {
            std::vector<int> iv;
            std::vector<char> in_set;
            Matrix k_v, k_r, alpha;
        } snap{iv_, in_set_, state_->kernel_block(), state_->regularizer_block(),
               state_->alpha()};

        const double q_prev = committed.back();
        forward_step();
        ++report.forward_steps;
        if (cfg_.backward_steps && iv_.size() >= 2 && backward_step()) {
            ++report.backward_drops;
        }
        const double q_now = state_->objective_value();

        const double eps =
            std::abs(q_now - q_prev) / std::max(std::abs(q_now), 1e-300);
        const bool worsened = q_now > q_prev + kMonotoneSlack;
        const bool stalled = eps < cfg_.probe.epsilon;
        if (iv_.size() > 1 && (worsened || stalled)) {
            // Convergence has fired; roll the marginal iteration back so a
            // re-run on a converged state leaves the import set unchanged.
            iv_ = std::move(snap.iv);
            in_set_ = std::move(snap.in_set);
            state_.emplace(std::move(snap.k_v), std::move(snap.k_r), targets_,
                           cfg_.lambda);
            state_->set_alpha(std::move(snap.alpha));
            trial_cache_valid_ = false;
            --report.forward_steps;
            break;
        }
        committed.push_back(q_now);

        // Lagged ratio probe over the committed objective history.
        const int i = static_cast<int>(committed.size()) - 1;
        if (i >= cfg_.probe.delta_i) {
            const double lag_eps =
                std::abs(committed[i] - committed[i - cfg_.probe.delta_i]) /
                std::max(std::abs(committed[i]), 1e-300);
            if (lag_eps < cfg_.probe.epsilon) break;
        }
    }
    report.committed_q = std::move(committed);
    return report;
}

IvmModel IvmTrainer::to_model(const std::vector<std::string>& class_names,
                              int num_classes,
                              const std::optional<NormalizationStats>& stats) const {
    IvmModel model;
    model.import_vectors.indices = iv_;
    model.import_vectors.X_V.resize(static_cast<Eigen::Index>(iv_.size()), features_.cols());
    for (size_t i = 0; i < iv_.size(); ++i) {
        model.import_vectors.X_V.row(static_cast<Eigen::Index>(i)) = features_.row(iv_[i]);
    }
    model.alpha = state_->alpha();
    model.kernel_params = cfg_.kernel;
    model.lambda = cfg_.lambda;
    model.num_classes = num_classes;
    model.class_names = class_names;
    model.stats = stats;
    model.num_training_samples = static_cast<int>(features_.rows());
    model.final_objective = state_->objective_value();
    return model;
}

IvmModel train(const LabeledDataset& dataset, const TrainConfig& config,
               TrainReport* report) {
    dataset.validate();
    const Matrix targets = one_hot(dataset.labels, dataset.num_classes);
    IvmTrainer trainer(dataset.features, targets, config);
    TrainReport r = trainer.run();
    if (report) *report = std::move(r);
    if (trainer.import_indices().empty()) {
        throw NumericalError("train: selection produced an empty import set");
    }
    return trainer.to_model(dataset.class_names, dataset.num_classes, dataset.stats);
}

}  // namespace ivm
