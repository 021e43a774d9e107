#include "zipfa/zipreg.hpp"

#include "zipfa/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace zipfa {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kMinDamping = 1e-300;

double clamp_eta(double eta) { return std::clamp(eta, -kEtaClamp, kEtaClamp); }
bool inside_clamp(double eta) { return eta >= -kEtaClamp && eta <= kEtaClamp; }

double log_sum_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

Eigen::VectorXd pack(const ZipParams& p) {
  Eigen::VectorXd theta(p.beta.size() + 1);
  theta << p.beta, p.tau;
  return theta;
}

ZipParams unpack(const Eigen::VectorXd& theta) {
  return {theta.head(theta.size() - 1), theta[theta.size() - 1]};
}

double max_abs(const Eigen::VectorXd& v) {
  return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

}  // namespace

// ---------------------------------------------------------------------------
// BlockDesign

BlockDesign::BlockDesign(Eigen::MatrixXd dense) {
  std::vector<Eigen::MatrixXd> one;
  one.push_back(std::move(dense));
  *this = BlockDesign(std::move(one));
}

BlockDesign::BlockDesign(std::vector<Eigen::MatrixXd> blocks) : blocks_(std::move(blocks)) {
  row_offsets_.reserve(blocks_.size());
  col_offsets_.reserve(blocks_.size());
  for (const auto& b : blocks_) {
    row_offsets_.push_back(rows_);
    col_offsets_.push_back(cols_);
    rows_ += b.rows();
    cols_ += b.cols();
  }
}

Eigen::VectorXd BlockDesign::multiply(const Eigen::VectorXd& beta) const {
  if (beta.size() != cols_) fail(ErrorKind::Argument, "coefficient length mismatch");
  Eigen::VectorXd out(rows_);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const auto& x = blocks_[b];
    out.segment(row_offsets_[b], x.rows()).noalias() =
        x * beta.segment(col_offsets_[b], x.cols());
  }
  return out;
}

Eigen::VectorXd BlockDesign::transpose_multiply(const Eigen::VectorXd& w) const {
  Eigen::VectorXd out(cols_);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const auto& x = blocks_[b];
    out.segment(col_offsets_[b], x.cols()).noalias() =
        x.transpose() * w.segment(row_offsets_[b], x.rows());
  }
  return out;
}

Eigen::MatrixXd BlockDesign::to_dense() const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(rows_, cols_);
  for (std::size_t b = 0; b < blocks_.size(); ++b)
    out.block(row_offsets_[b], col_offsets_[b], blocks_[b].rows(), blocks_[b].cols()) =
        blocks_[b];
  return out;
}

void BlockDesign::require_full_column_rank() const {
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const auto& x = blocks_[b];
    bool ok = x.rows() >= x.cols();
    if (ok && x.cols() > 0) {
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
      ok = qr.rank() == x.cols();
    }
    if (!ok)
      fail(ErrorKind::Argument,
           "design block " + std::to_string(b) + " is not of full column rank");
  }
}

void ZipRegProblem::validate() const {
  if (design.rows() != response.size() || offset.size() != response.size())
    fail(ErrorKind::Argument, "response, design and offset lengths differ");
  if (design.cols() < 1) fail(ErrorKind::Argument, "design has no columns");
  for (Index i = 0; i < response.size(); ++i) {
    const double y = response[i];
    if (!(y >= 0.0) || y != std::floor(y))
      fail(ErrorKind::Argument, "response " + std::to_string(i) +
                                    " is not a non-negative integer");
    if (!(offset[i] > 0.0) || !std::isfinite(offset[i]))
      fail(ErrorKind::Argument, "offset " + std::to_string(i) + " is not positive");
  }
}

// ---------------------------------------------------------------------------
// ArrowMatrix

Eigen::VectorXd ArrowMatrix::multiply(const Eigen::VectorXd& x) const {
  const Index p = border.size();
  Eigen::VectorXd out(p + 1);
  Index off = 0;
  for (const auto& b : blocks) {
    out.segment(off, b.rows()).noalias() = b * x.segment(off, b.cols());
    off += b.rows();
  }
  out.head(p) += border * x[p];
  out[p] = border.dot(x.head(p)) + corner * x[p];
  return out;
}

Eigen::MatrixXd ArrowMatrix::to_dense() const {
  const Index p = border.size();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(p + 1, p + 1);
  Index off = 0;
  for (const auto& b : blocks) {
    out.block(off, off, b.rows(), b.cols()) = b;
    off += b.rows();
  }
  out.col(p).head(p) = border;
  out.row(p).head(p) = border.transpose();
  out(p, p) = corner;
  return out;
}

bool ArrowCholesky::compute(const ArrowMatrix& a, double shift) {
  blocks_.clear();
  offsets_.clear();
  blocks_.reserve(a.blocks.size());
  border_ = a.border;
  border_solved_.resize(border_.size());
  Index off = 0;
  for (const auto& b : a.blocks) {
    Eigen::MatrixXd shifted = b;
    shifted.diagonal().array() += shift;
    blocks_.emplace_back(shifted);
    if (blocks_.back().info() != Eigen::Success) return false;
    // LLT only flags non-positive pivots; reject numerically singular ones too.
    const auto& l = blocks_.back().matrixLLT();
    if ((l.diagonal().array() <= 0.0).any() || !l.diagonal().allFinite()) return false;
    offsets_.push_back(off);
    border_solved_.segment(off, b.rows()) =
        blocks_.back().solve(border_.segment(off, b.rows()));
    off += b.rows();
  }
  schur_ = a.corner + shift - border_.dot(border_solved_);
  return std::isfinite(schur_) && schur_ > 0.0;
}

Eigen::VectorXd ArrowCholesky::solve(const Eigen::VectorXd& rhs) const {
  const Index p = border_.size();
  Eigen::VectorXd inner(p);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const Index n = blocks_[b].rows();
    inner.segment(offsets_[b], n) = blocks_[b].solve(rhs.segment(offsets_[b], n));
  }
  const double t = (rhs[p] - border_.dot(inner)) / schur_;
  Eigen::VectorXd out(p + 1);
  out.head(p) = inner - border_solved_ * t;
  out[p] = t;
  return out;
}

// ---------------------------------------------------------------------------
// Densities

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double zip_cell_log_likelihood(std::int64_t count, double lambda, double p,
                               double offset) {
  const double rate = offset * lambda;
  const double log_keep = std::log1p(-p);
  if (count == 0) {
    const double log_p = p > 0.0 ? std::log(p) : kNegInf;
    return log_sum_exp(log_p, log_keep - rate);
  }
  const double a = static_cast<double>(count);
  return log_keep + a * std::log(rate) - rate - std::lgamma(a + 1.0);
}

double zip_cell_likelihood(std::int64_t count, double lambda, double p, double offset) {
  if (count == 0) return p + (1.0 - p) * std::exp(-offset * lambda);
  return std::exp(zip_cell_log_likelihood(count, lambda, p, offset));
}

double zip_log_density(double count, double eta, double tau, double offset) {
  const double e = clamp_eta(eta);
  const double s = tau * e;
  const double rate = offset * std::exp(e);
  const double log_keep = -softplus(-s);
  if (count == 0.0) return log_sum_exp(-softplus(s), log_keep - rate);
  return log_keep + count * (std::log(offset) + e) - rate - std::lgamma(count + 1.0);
}

Eigen::VectorXd e_step(const ZipParams& params, const ZipRegProblem& problem) {
  const Eigen::VectorXd eta = problem.design.multiply(params.beta);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(eta.size());
  for (Index i = 0; i < eta.size(); ++i) {
    if (problem.response[i] != 0.0) continue;
    const double e = clamp_eta(eta[i]);
    z[i] = sigmoid(-(params.tau * e - problem.offset[i] * std::exp(e)));
  }
  return z;
}

double observed_loglik(const ZipParams& params, const ZipRegProblem& problem) {
  const Eigen::VectorXd eta = problem.design.multiply(params.beta);
  double total = 0.0;
  for (Index i = 0; i < eta.size(); ++i)
    total += zip_log_density(problem.response[i], eta[i], params.tau, problem.offset[i]);
  return total;
}

double joint_neg_loglik_value(const ZipParams& params, const Eigen::VectorXd& z,
                              const ZipRegProblem& problem) {
  const Eigen::VectorXd eta = problem.design.multiply(params.beta);
  double q = 0.0;
  for (Index i = 0; i < eta.size(); ++i) {
    const double e = clamp_eta(eta[i]);
    const double s = params.tau * e;
    const double y = problem.response[i];
    const double m = problem.offset[i];
    q += z[i] * softplus(s);
    if (z[i] < 1.0)
      q += (1.0 - z[i]) *
           (softplus(-s) - y * (std::log(m) + e) + m * std::exp(e) + std::lgamma(y + 1.0));
  }
  return q;
}

ObjectiveTerms joint_neg_loglik(const ZipParams& params, const Eigen::VectorXd& z,
                                const ZipRegProblem& problem) {
  const auto& x = problem.design;
  const Index n = problem.observations();
  const double tau = params.tau;
  const Eigen::VectorXd eta = x.multiply(params.beta);

  Eigen::VectorXd d_eta(n), d2_eta(n), d_tau_eta(n);
  double value = 0.0, g_tau = 0.0, h_tau = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double e = clamp_eta(eta[i]);
    const double in = inside_clamp(eta[i]) ? 1.0 : 0.0;
    const double s = tau * e;
    const double y = problem.response[i];
    const double m = problem.offset[i];
    const double zi = z[i];
    const double rate = m * std::exp(e);
    const double sig = sigmoid(s);
    const double w = sigmoid(-s);
    const double q = sig * w;
    const double v = w - s * q;

    value += zi * softplus(s);
    if (zi < 1.0)
      value += (1.0 - zi) * (softplus(-s) - y * (std::log(m) + e) + rate + std::lgamma(y + 1.0));

    d_eta[i] = in * (tau * zi - tau * w - (1.0 - zi) * (y - rate));
    d2_eta[i] = in * (tau * tau * q + (1.0 - zi) * rate);
    d_tau_eta[i] = in * (zi - v);
    g_tau += (zi - w) * e;
    h_tau += e * e * q;
  }
  if (!std::isfinite(value))
    fail(ErrorKind::Numeric, "non-finite objective value");

  ObjectiveTerms out;
  out.value = value;
  out.gradient.resize(x.cols() + 1);
  out.gradient.head(x.cols()) = x.transpose_multiply(d_eta);
  out.gradient[x.cols()] = g_tau;
  out.hessian.blocks.reserve(static_cast<std::size_t>(x.block_count()));
  for (Index b = 0; b < x.block_count(); ++b) {
    const auto& xb = x.block(b);
    const auto w = d2_eta.segment(x.row_offset(b), xb.rows());
    out.hessian.blocks.push_back(xb.transpose() * w.asDiagonal() * xb);
  }
  out.hessian.border = x.transpose_multiply(d_tau_eta);
  out.hessian.corner = h_tau;
  for (Index k = 0; k < out.gradient.size(); ++k)
    if (!std::isfinite(out.gradient[k]))
      fail(ErrorKind::Numeric, "non-finite gradient at coordinate " + std::to_string(k));
  return out;
}

// ---------------------------------------------------------------------------
// Levenberg-Marquardt

LmState initial_lm_state(const Eigen::VectorXd& gradient, const LmOptions& options) {
  const double g = max_abs(gradient);
  return {std::max(options.rho * g * g, kMinDamping), options.rho,
          options.delta_threshold};
}

double damping_multiplier(double gain_ratio) {
  const double t = 2.0 * gain_ratio - 1.0;
  return std::max(1.0 / 3.0, 1.0 - t * t * t);
}

LmStep lm_update(LmState& state, const Eigen::VectorXd& theta, double value,
                 const Eigen::VectorXd& gradient, const ArrowMatrix& hessian,
                 const ObjectiveFn& objective) {
  ArrowCholesky chol;
  while (!chol.compute(hessian, state.mu)) {
    state.mu *= 2.0;
    if (!(state.mu < 1e300)) fail(ErrorKind::Numeric, "damping exploded");
  }
  const Eigen::VectorXd h = chol.solve(-gradient);
  if (!h.allFinite())
    fail(ErrorKind::Numeric, "linear solve failed on a positive definite system");

  const double predicted =
      h.dot(gradient) + 0.5 * (h.dot(hessian.multiply(h)) + state.mu * h.squaredNorm());
  LmStep step{theta + h, value, kNegInf, false};
  double trial = std::numeric_limits<double>::quiet_NaN();
  try {
    trial = objective(step.theta);
  } catch (const Error&) {
  }
  if (std::isfinite(trial) && predicted < 0.0)
    step.gain_ratio = -(value - trial) / predicted;

  if (step.gain_ratio > state.delta_threshold) {
    step.accepted = true;
    step.value = trial;
    state.mu = std::max(state.mu * damping_multiplier(step.gain_ratio), kMinDamping);
  } else {
    step.theta = theta;
    state.mu *= 2.0;
  }
  return step;
}

ZipLmStep lm_step(LmState& state, const ZipParams& params, const Eigen::VectorXd& z,
                  const ZipRegProblem& problem) {
  const ObjectiveTerms terms = joint_neg_loglik(params, z, problem);
  auto objective = [&](const Eigen::VectorXd& theta) {
    return joint_neg_loglik_value(unpack(theta), z, problem);
  };
  const LmStep step =
      lm_update(state, pack(params), terms.value, terms.gradient, terms.hessian, objective);
  return {unpack(step.theta), step.gain_ratio, step.accepted};
}

MStepResult m_step(const ZipParams& start, const Eigen::VectorXd& z,
                   const ZipRegProblem& problem, const LmOptions& options) {
  auto objective = [&](const Eigen::VectorXd& theta) {
    return joint_neg_loglik_value(unpack(theta), z, problem);
  };
  Eigen::VectorXd theta = pack(start);
  ObjectiveTerms terms = joint_neg_loglik(start, z, problem);
  LmState state = initial_lm_state(terms.gradient, options);

  MStepResult out;
  out.objective_trace.push_back(terms.value);
  int rejected_in_a_row = 0;
  for (; out.iterations < options.max_iterations; ++out.iterations) {
    if (max_abs(terms.gradient) < options.gradient_tol) break;
    const LmStep step =
        lm_update(state, theta, terms.value, terms.gradient, terms.hessian, objective);
    if (step.accepted) {
      rejected_in_a_row = 0;
      theta = step.theta;
      terms = joint_neg_loglik(unpack(theta), z, problem);
      out.objective_trace.push_back(terms.value);
    } else if (++rejected_in_a_row >= 60) {
      break;  // no representable improvement left
    }
  }
  out.params = unpack(theta);
  out.gradient_norm = max_abs(terms.gradient);
  return out;
}

// ---------------------------------------------------------------------------
// Initial values

Eigen::VectorXd fit_poisson_glm(const Eigen::VectorXd& response, const BlockDesign& design,
                                const Eigen::VectorXd& offset) {
  const Index n = response.size();
  if (design.rows() != n || offset.size() != n)
    fail(ErrorKind::Argument, "response, design and offset lengths differ");
  design.require_full_column_rank();
  const Eigen::VectorXd log_offset = offset.array().log();

  auto loglik = [&](const Eigen::VectorXd& beta) {
    const Eigen::VectorXd eta = design.multiply(beta);
    double total = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double e = clamp_eta(eta[i]);
      total += response[i] * (e + log_offset[i]) - offset[i] * std::exp(e);
    }
    return total;
  };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(design.cols());
  double current = loglik(beta);
  const double tol = 1e-8 * static_cast<double>(std::max<Index>(n, 1));
  for (int iter = 0; iter < 100; ++iter) {
    const Eigen::VectorXd eta = design.multiply(beta);
    Eigen::VectorXd resid(n), weight(n);
    for (Index i = 0; i < n; ++i) {
      const double in = inside_clamp(eta[i]) ? 1.0 : 0.0;
      const double mu = offset[i] * std::exp(clamp_eta(eta[i]));
      resid[i] = in * (response[i] - mu);
      weight[i] = in * mu;
    }
    const Eigen::VectorXd score = design.transpose_multiply(resid);
    if (max_abs(score) < tol) return beta;

    Eigen::VectorXd step(design.cols());
    for (Index b = 0; b < design.block_count(); ++b) {
      const auto& xb = design.block(b);
      const Eigen::MatrixXd info =
          xb.transpose() * weight.segment(design.row_offset(b), xb.rows()).asDiagonal() * xb;
      const auto sb = score.segment(design.col_offset(b), xb.cols());
      Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
      Eigen::VectorXd d = ldlt.solve(sb);
      if (ldlt.info() != Eigen::Success || !d.allFinite()) d = sb;
      step.segment(design.col_offset(b), xb.cols()) = d;
    }

    // Newton decrement: the predicted gain of the full step. Once it is at
    // rounding level the log-likelihood can no longer rank trial points, but
    // the full step is still exact to second order, so take it and stop.
    const double decrement = 0.5 * score.dot(step);
    if (decrement < 1e-9 * (1.0 + std::abs(current))) return beta + step;

    double scale = 1.0;
    bool improved = false;
    for (int halving = 0; halving < 40; ++halving, scale *= 0.5) {
      const Eigen::VectorXd trial = beta + scale * step;
      const double value = loglik(trial);
      if (std::isfinite(value) && value > current) {
        beta = trial;
        current = value;
        improved = true;
        break;
      }
    }
    if (!improved) fail(ErrorKind::NoConvergence, "Poisson regression line search stalled");
  }
  fail(ErrorKind::NoConvergence, "Poisson regression did not converge in 100 Newton steps");
}

TauInit init_tau(const Eigen::VectorXd& beta, const BlockDesign& design,
                 const Eigen::VectorXd& response) {
  const Index n = response.size();
  if (n == 0) return {1.0, true};
  const double zeros = static_cast<double>((response.array() == 0.0).count());
  const double p_bar = zeros / static_cast<double>(n);
  const double denom = design.multiply(beta).sum();
  if (p_bar <= 0.0 || p_bar >= 1.0 || std::abs(denom) < 1e-12) return {1.0, true};
  const double logit = std::log(p_bar / (1.0 - p_bar));
  return {-static_cast<double>(n) * logit / denom, false};
}

// ---------------------------------------------------------------------------
// EM driver

namespace {

// The moment estimate can land on the wrong side of the degenerate ridge
// beta -> 0, |tau| -> inf when sum(eta) is close to zero; EM cannot leave that
// ridge. Keep it only if a coarse grid does not find a better likelihood.
double select_start_tau(const Eigen::VectorXd& beta, double moment_tau,
                        const ZipRegProblem& problem) {
  double best_tau = moment_tau;
  double best = observed_loglik({beta, moment_tau}, problem);
  if (!std::isfinite(best)) best = kNegInf;
  for (int k = -40; k <= 40; ++k) {
    const double tau = 0.25 * k;
    const double ll = observed_loglik({beta, tau}, problem);
    if (std::isfinite(ll) && ll > best) {
      best = ll;
      best_tau = tau;
    }
  }
  return best_tau;
}

ZipRegFit run_em(const ZipRegProblem& problem, ZipParams params, const ZipRegOptions& options) {
  ZipRegFit fit;
  double ll = observed_loglik(params, problem);
  if (!std::isfinite(ll)) fail(ErrorKind::Numeric, "non-finite log-likelihood at start");
  fit.loglik_trace.push_back(ll);
  Eigen::VectorXd z;
  for (int iter = 1; iter <= options.max_em_iterations; ++iter) {
    z = e_step(params, problem);
    const MStepResult m = m_step(params, z, problem, options.lm);
    const double next_ll = observed_loglik(m.params, problem);
    if (!std::isfinite(next_ll) || !std::isfinite(m.params.tau) || !m.params.beta.allFinite())
      fail(ErrorKind::Numeric, "EM diverged at iteration " + std::to_string(iter));
    const double change = (m.params.beta - params.beta).norm() /
                          std::max(params.beta.norm(), 1.0);
    params = m.params;
    ll = next_ll;
    fit.loglik_trace.push_back(ll);
    fit.iterations = iter;
    if (change < options.beta_rel_tol) {
      fit.converged = true;
      break;
    }
  }
  fit.beta = params.beta;
  fit.tau = params.tau;
  fit.z = e_step(params, problem);
  fit.loglik = ll;
  return fit;
}

}  // namespace

ZipRegFit fit_zip_regression(const ZipRegProblem& problem,
                             const std::optional<ZipParams>& init,
                             const ZipRegOptions& options) {
  problem.validate();
  problem.design.require_full_column_rank();

  if (init) {
    if (init->beta.size() != problem.coefficients())
      fail(ErrorKind::Argument, "initial coefficient length mismatch");
    try {
      ZipRegFit fit = run_em(problem, *init, options);
      fit.warm_started = true;
      return fit;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Numeric) throw;
    }
  }
  const Eigen::VectorXd beta0 =
      fit_poisson_glm(problem.response, problem.design, problem.offset);
  const TauInit tau0 = init_tau(beta0, problem.design, problem.response);
  ZipRegFit fit = run_em(problem, {beta0, select_start_tau(beta0, tau0.tau, problem)}, options);
  fit.tau_fallback = tau0.degenerate;
  return fit;
}

}  // namespace zipfa
