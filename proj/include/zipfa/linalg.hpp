#pragma once

#include <Eigen/Dense>

namespace zipfa {

// Top-K singular triplet. Each right vector has its largest-magnitude entry
// positive (lowest index wins ties), which fixes the sign ambiguity.
struct SvdTriplet {
  Eigen::MatrixXd left;      // n x K, orthonormal columns
  Eigen::VectorXd singular;  // K, non-increasing
  Eigen::MatrixXd right;     // m x K, orthonormal columns
};

struct FactorPair {
  Eigen::MatrixXd scores;    // n x K
  Eigen::MatrixXd loadings;  // m x K
};

SvdTriplet truncated_svd(const Eigen::MatrixXd& m, Eigen::Index rank);

// Singular values go into the scores; loadings keep orthonormal columns.
FactorPair absorb_scale(const SvdTriplet& svd);

// SVD of scores * loadings^T followed by absorb_scale.
FactorPair reorthogonalize(const Eigen::MatrixXd& scores,
                           const Eigen::MatrixXd& loadings);

}  // namespace zipfa
