#include "zipfa/linalg.hpp"

#include "zipfa/error.hpp"

#include <cmath>
#include <string>

namespace zipfa {

SvdTriplet truncated_svd(const Eigen::MatrixXd& m, Eigen::Index rank) {
  if (rank < 1 || rank > std::min(m.rows(), m.cols()))
    fail(ErrorKind::Argument, "rank " + std::to_string(rank) +
                                  " outside [1, min(n, m)] for a " +
                                  std::to_string(m.rows()) + "x" +
                                  std::to_string(m.cols()) + " matrix");
  if (!m.allFinite()) fail(ErrorKind::Numeric, "SVD input contains non-finite values");

  Eigen::BDCSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  SvdTriplet out{svd.matrixU().leftCols(rank), svd.singularValues().head(rank),
                 svd.matrixV().leftCols(rank)};

  for (Eigen::Index k = 0; k < rank; ++k) {
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index j = 0; j < out.right.rows(); ++j) {
      const double a = std::abs(out.right(j, k));
      if (a > best) {
        best = a;
        arg = j;
      }
    }
    if (out.right(arg, k) < 0) {
      out.right.col(k) *= -1.0;
      out.left.col(k) *= -1.0;
    }
  }
  return out;
}

FactorPair absorb_scale(const SvdTriplet& svd) {
  return {svd.left * svd.singular.asDiagonal(), svd.right};
}

FactorPair reorthogonalize(const Eigen::MatrixXd& scores,
                           const Eigen::MatrixXd& loadings) {
  return absorb_scale(truncated_svd(scores * loadings.transpose(), scores.cols()));
}

}  // namespace zipfa
