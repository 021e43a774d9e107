#pragma once

#include "zipfa/data.hpp"
#include "zipfa/zipreg.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <vector>

namespace zipfa {

enum class OffsetMode {
  Empirical,  // relative library sizes from the (observed) row sums
  Unit,       // N_i = 1
};

struct FitOptions {
  int max_outer_iterations = 100;
  double rel_loglik_tol = 1e-3;
  ZipRegOptions inner;
  OffsetMode offsets = OffsetMode::Empirical;
  // Seed each block regression with the previous (coefficients, tau).
  bool warm_start = true;

  void validate() const;
};

struct FactorModel {
  Eigen::MatrixXd scores;    // U, n x K; singular values live here
  Eigen::MatrixXd loadings;  // V, m x K; orthonormal columns
  double tau = 0.0;
  OffsetVector offsets;
  Index rank = 0;
  std::vector<double> loglik_trace;  // total log-likelihood after each iteration
  int iterations = 0;
  bool converged = false;

  Eigen::MatrixXd log_rate() const { return scores * loadings.transpose(); }
  double final_loglik() const;
};

// Column-stacked response with one copy of the scores per taxon; coefficient
// block j is loading row j.
ZipRegProblem build_loading_problem(const CountMatrix& counts, const Eigen::MatrixXd& scores,
                                    const OffsetVector& offsets,
                                    const HeldOutSet* held_out = nullptr);

// Row-stacked response with one copy of the loadings per sample; coefficient
// block i is score row i.
ZipRegProblem build_score_problem(const CountMatrix& counts, const Eigen::MatrixXd& loadings,
                                  const OffsetVector& offsets,
                                  const HeldOutSet* held_out = nullptr);

// Reshape stacked coefficients (block-major) into a count x rank matrix.
Eigen::MatrixXd unstack_coefficients(const Eigen::VectorXd& beta, Index count, Index rank);
Eigen::VectorXd stack_rows(const Eigen::MatrixXd& m);

// Sum of ln L(a_ij) over observed cells with ln(lambda) = U V^T and
// logit(p) = -tau ln(lambda).
double total_loglik(const CountMatrix& counts, const Eigen::MatrixXd& scores,
                    const Eigen::MatrixXd& loadings, double tau, const OffsetVector& offsets,
                    const HeldOutSet* held_out = nullptr);

FactorModel zipfa_fit(const CountMatrix& counts, Index rank, const FitOptions& options = {},
                      const HeldOutSet* held_out = nullptr);

// Total probability of a zero: structural part plus the Poisson zero.
Eigen::MatrixXd predict_zero_probability(const FactorModel& model);

std::string model_to_json(const FactorModel& model);
FactorModel model_from_json(const std::string& text);
void save_model(const FactorModel& model, const std::filesystem::path& path);
FactorModel load_model(const std::filesystem::path& path);

}  // namespace zipfa
