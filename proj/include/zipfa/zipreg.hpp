#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace zipfa {

using Index = Eigen::Index;

// Linear predictors are clamped to [-kEtaClamp, kEtaClamp] wherever they enter
// an exponential; the clamp is part of the model, so value, gradient and
// Hessian all see the same clamped function.
inline constexpr double kEtaClamp = 30.0;

// Block-diagonal design: block b owns a contiguous run of observations and its
// own run of coefficients. A dense design is the one-block case.
class BlockDesign {
 public:
  BlockDesign() = default;
  explicit BlockDesign(Eigen::MatrixXd dense);
  explicit BlockDesign(std::vector<Eigen::MatrixXd> blocks);

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  Index block_count() const { return static_cast<Index>(blocks_.size()); }
  const Eigen::MatrixXd& block(Index b) const { return blocks_[static_cast<std::size_t>(b)]; }
  Index row_offset(Index b) const { return row_offsets_[static_cast<std::size_t>(b)]; }
  Index col_offset(Index b) const { return col_offsets_[static_cast<std::size_t>(b)]; }

  Eigen::VectorXd multiply(const Eigen::VectorXd& beta) const;
  Eigen::VectorXd transpose_multiply(const Eigen::VectorXd& w) const;
  Eigen::MatrixXd to_dense() const;

  // Throws Argument unless every block has full column rank.
  void require_full_column_rank() const;

 private:
  std::vector<Eigen::MatrixXd> blocks_;
  std::vector<Index> row_offsets_;
  std::vector<Index> col_offsets_;
  Index rows_ = 0;
  Index cols_ = 0;
};

// Zero-inflated Poisson regression with linked zero probability:
// ln(lambda_i) = x_i'beta, logit(p_i) = -tau * ln(lambda_i), rate m_i*lambda_i.
struct ZipRegProblem {
  Eigen::VectorXd response;  // non-negative integers
  BlockDesign design;        // no intercept column
  Eigen::VectorXd offset;    // positive scaling vector

  Index observations() const { return response.size(); }
  Index coefficients() const { return design.cols(); }
  void validate() const;
};

struct ZipParams {
  Eigen::VectorXd beta;
  double tau = 1.0;
};

// Symmetric matrix that is block diagonal in beta plus one dense tau row and
// column (tau is the last coordinate).
struct ArrowMatrix {
  std::vector<Eigen::MatrixXd> blocks;
  Eigen::VectorXd border;
  double corner = 0.0;

  Index size() const { return border.size() + 1; }
  Eigen::VectorXd multiply(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd to_dense() const;
};

// Cholesky factorization of (A + shift*I) exploiting the arrow structure.
class ArrowCholesky {
 public:
  // False when the shifted matrix is not positive definite.
  bool compute(const ArrowMatrix& a, double shift);
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const;

 private:
  std::vector<Eigen::LLT<Eigen::MatrixXd>> blocks_;
  std::vector<Index> offsets_;
  Eigen::VectorXd border_;
  Eigen::VectorXd border_solved_;
  double schur_ = 0.0;
};

struct ObjectiveTerms {
  double value = 0.0;
  Eigen::VectorXd gradient;  // (beta, tau)
  ArrowMatrix hessian;
};

double zip_cell_likelihood(std::int64_t count, double lambda, double p, double offset);
double zip_cell_log_likelihood(std::int64_t count, double lambda, double p,
                               double offset);
// ln of the linked ZIP density at linear predictor eta (clamped).
double zip_log_density(double count, double eta, double tau, double offset);

double softplus(double x);
double sigmoid(double x);

Eigen::VectorXd e_step(const ZipParams& params, const ZipRegProblem& problem);
double observed_loglik(const ZipParams& params, const ZipRegProblem& problem);

// Q(beta, tau) = -E[ln L(Y, Z)] at responsibilities z, with analytic
// gradient and Hessian.
double joint_neg_loglik_value(const ZipParams& params, const Eigen::VectorXd& z,
                              const ZipRegProblem& problem);
ObjectiveTerms joint_neg_loglik(const ZipParams& params, const Eigen::VectorXd& z,
                                const ZipRegProblem& problem);

struct LmState {
  double mu = 1.0;
  double rho = 1e-5;
  double delta_threshold = 1e-3;
};

struct LmOptions {
  double rho = 1e-5;
  double delta_threshold = 1e-3;
  int max_iterations = 200;
  double gradient_tol = 1e-8;
};

// mu = rho * max_i g_i^2, floored to stay positive.
LmState initial_lm_state(const Eigen::VectorXd& gradient, const LmOptions& options = {});
// max{1/3, 1 - (2*delta - 1)^3}
double damping_multiplier(double gain_ratio);

struct LmStep {
  Eigen::VectorXd theta;
  double value = 0.0;
  double gain_ratio = 0.0;
  bool accepted = false;
};

using ObjectiveFn = std::function<double(const Eigen::VectorXd&)>;

// One damped step on a generic objective with arrow-structured Hessian.
LmStep lm_update(LmState& state, const Eigen::VectorXd& theta, double value,
                 const Eigen::VectorXd& gradient, const ArrowMatrix& hessian,
                 const ObjectiveFn& objective);

struct ZipLmStep {
  ZipParams params;
  double gain_ratio = 0.0;
  bool accepted = false;
};

ZipLmStep lm_step(LmState& state, const ZipParams& params, const Eigen::VectorXd& z,
                  const ZipRegProblem& problem);

struct MStepResult {
  ZipParams params;
  int iterations = 0;
  double gradient_norm = 0.0;
  std::vector<double> objective_trace;  // Q after each accepted step
};

MStepResult m_step(const ZipParams& start, const Eigen::VectorXd& z,
                   const ZipRegProblem& problem, const LmOptions& options = {});

// Poisson log-linear regression with offset ln(m), by Newton's method with
// step halving.
Eigen::VectorXd fit_poisson_glm(const Eigen::VectorXd& response,
                                const BlockDesign& design,
                                const Eigen::VectorXd& offset);

struct TauInit {
  double tau = 1.0;
  bool degenerate = false;
};

TauInit init_tau(const Eigen::VectorXd& beta, const BlockDesign& design,
                 const Eigen::VectorXd& response);

struct ZipRegOptions {
  int max_em_iterations = 500;
  double beta_rel_tol = 1e-3;
  LmOptions lm;
};

struct ZipRegFit {
  Eigen::VectorXd beta;
  double tau = 0.0;
  Eigen::VectorXd z;
  double loglik = 0.0;
  int iterations = 0;
  bool converged = false;
  bool warm_started = false;
  bool tau_fallback = false;
  std::vector<double> loglik_trace;  // starting point, then one per EM iteration
};

// EM with a Levenberg-Marquardt M-step. A supplied starting point is tried
// first; the Poisson-GLM cold start is used when it is absent or diverges.
ZipRegFit fit_zip_regression(const ZipRegProblem& problem,
                             const std::optional<ZipParams>& init = std::nullopt,
                             const ZipRegOptions& options = {});

}  // namespace zipfa
