#pragma once

#include <Eigen/Dense>

namespace ivm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class KernelKind { Rbf };

/// Parameters of the kernel function. Only the RBF kernel
/// k(x, y) = exp(-gamma * ||x - y||^2) is implemented; `kind` is the
/// extension point for other kernels.
struct KernelParams {
    KernelKind kind = KernelKind::Rbf;
    double gamma = 1.0;
};

/// Single kernel evaluation. Throws std::invalid_argument on dimension
/// mismatch or non-finite input. Result lies in (0, 1].
double rbf(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y,
           const KernelParams& params);

/// Kernel matrix between two feature blocks (rows are samples):
/// entry (i, j) = k(rowsX.row(i), colsX.row(j)). Inputs are assumed
/// pre-normalized; normalization lives in the data layer.
Matrix kernel_matrix(const Eigen::Ref<const Matrix>& rowsX,
                     const Eigen::Ref<const Matrix>& colsX,
                     const KernelParams& params);

/// One row of the kernel matrix: k(x, colsX.row(j)) for all j.
Vector kernel_row(const Eigen::Ref<const Vector>& x,
                  const Eigen::Ref<const Matrix>& colsX,
                  const KernelParams& params);

}  // namespace ivm
