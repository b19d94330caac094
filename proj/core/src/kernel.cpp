#include "ivm/kernel.hpp"

#include <cmath>
#include <stdexcept>

namespace ivm {

namespace {

void check_finite(const Eigen::Ref<const Matrix>& m, const char* what) {
    if (!m.allFinite()) {
        throw std::invalid_argument(std::string(what) + ": non-finite entries");
    }
}

void check_gamma(const KernelParams& params) {
    if (!(params.gamma > 0.0) || !std::isfinite(params.gamma)) {
        throw std::invalid_argument("kernel: gamma must be positive and finite");
    }
}

}  // namespace

double rbf(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y,
           const KernelParams& params) {
    check_gamma(params);
    if (x.size() != y.size()) {
        throw std::invalid_argument("rbf: dimension mismatch");
    }
    if (!x.allFinite() || !y.allFinite()) {
        throw std::invalid_argument("rbf: non-finite input");
    }
    const double d2 = (x - y).squaredNorm();
    return std::exp(-params.gamma * d2);
}

namespace {

bool same_block(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    if (a.data() == b.data()) return true;
    return a == b;
}

}  // namespace

Matrix kernel_matrix(const Eigen::Ref<const Matrix>& rowsX,
                     const Eigen::Ref<const Matrix>& colsX,
                     const KernelParams& params) {
    check_gamma(params);
    if (rowsX.cols() != colsX.cols()) {
        throw std::invalid_argument("kernel_matrix: feature dimension mismatch");
    }
    check_finite(rowsX, "kernel_matrix rows block");
    check_finite(colsX, "kernel_matrix cols block");

    // ||x - y||^2 = ||x||^2 + ||y||^2 - 2 x.y, clamped at 0 against round-off.
    const Vector rn = rowsX.rowwise().squaredNorm();
    const Vector cn = colsX.rowwise().squaredNorm();
    Matrix d2 = (-2.0 * rowsX * colsX.transpose());
    d2.colwise() += rn;
    d2.rowwise() += cn.transpose();
    d2 = d2.cwiseMax(0.0);
    Matrix k = (-params.gamma * d2).array().exp();

    // Self-kernel: mirror the upper triangle so the result is exactly
    // symmetric with a unit diagonal.
    if (same_block(rowsX, colsX)) {
        for (Eigen::Index i = 0; i < k.rows(); ++i) {
            k(i, i) = 1.0;
            for (Eigen::Index j = i + 1; j < k.cols(); ++j) k(j, i) = k(i, j);
        }
    }
    return k;
}

Vector kernel_row(const Eigen::Ref<const Vector>& x,
                  const Eigen::Ref<const Matrix>& colsX,
                  const KernelParams& params) {
    Matrix row = kernel_matrix(x.transpose(), colsX, params);
    return row.row(0).transpose();
}

}  // namespace ivm
