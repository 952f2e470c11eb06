#pragma once

#include <Eigen/Dense>

namespace lrbb {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline Matrix symmetrized(const Matrix& M) { return 0.5 * (M + M.transpose()); }

// Smallest eigenvalue of a symmetric matrix.
inline double min_eigenvalue(const Matrix& S) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(S),
                                           Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

// Best rank-k approximation via SVD.
inline Matrix truncate_rank(const Matrix& A, int k) {
  Eigen::BDCSVD<Matrix> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const int r = std::min<int>(k, static_cast<int>(svd.singularValues().size()));
  return svd.matrixU().leftCols(r) * svd.singularValues().head(r).asDiagonal() *
         svd.matrixV().leftCols(r).transpose();
}

}  // namespace lrbb
