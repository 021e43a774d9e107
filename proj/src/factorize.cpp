#include "zipfa/factorize.hpp"

#include "zipfa/error.hpp"
#include "zipfa/linalg.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace zipfa {

void FitOptions::validate() const {
  if (max_outer_iterations < 1) fail(ErrorKind::Argument, "max_outer_iterations must be >= 1");
  if (!(rel_loglik_tol > 0.0)) fail(ErrorKind::Argument, "rel_loglik_tol must be > 0");
  if (inner.max_em_iterations < 1 || !(inner.beta_rel_tol > 0.0) ||
      inner.lm.max_iterations < 1 || !(inner.lm.gradient_tol > 0.0) || !(inner.lm.rho > 0.0))
    fail(ErrorKind::Argument, "inner solver tolerances must be positive");
}

double FactorModel::final_loglik() const {
  return loglik_trace.empty() ? std::numeric_limits<double>::quiet_NaN()
                              : loglik_trace.back();
}

ZipRegProblem build_loading_problem(const CountMatrix& counts, const Eigen::MatrixXd& scores,
                                    const OffsetVector& offsets, const HeldOutSet* held_out) {
  const Index n = counts.rows(), m = counts.cols(), k = scores.cols();
  if (scores.rows() != n || offsets.size() != n)
    fail(ErrorKind::Argument, "scores/offsets do not match the count matrix");

  std::vector<double> y, off;
  y.reserve(static_cast<std::size_t>(n * m));
  off.reserve(static_cast<std::size_t>(n * m));
  std::vector<Eigen::MatrixXd> blocks;
  blocks.reserve(static_cast<std::size_t>(m));
  for (Index j = 0; j < m; ++j) {
    std::vector<Index> kept;
    for (Index i = 0; i < n; ++i)
      if (!held_out || !held_out->contains(i, j)) kept.push_back(i);
    Eigen::MatrixXd block(static_cast<Index>(kept.size()), k);
    for (std::size_t r = 0; r < kept.size(); ++r) {
      const Index i = kept[r];
      block.row(static_cast<Index>(r)) = scores.row(i);
      y.push_back(static_cast<double>(counts(i, j)));
      off.push_back(offsets[i]);
    }
    blocks.push_back(std::move(block));
  }
  return {Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Index>(y.size())),
          BlockDesign(std::move(blocks)),
          Eigen::Map<Eigen::VectorXd>(off.data(), static_cast<Index>(off.size()))};
}

ZipRegProblem build_score_problem(const CountMatrix& counts, const Eigen::MatrixXd& loadings,
                                  const OffsetVector& offsets, const HeldOutSet* held_out) {
  const Index n = counts.rows(), m = counts.cols(), k = loadings.cols();
  if (loadings.rows() != m || offsets.size() != n)
    fail(ErrorKind::Argument, "loadings/offsets do not match the count matrix");

  std::vector<double> y, off;
  y.reserve(static_cast<std::size_t>(n * m));
  off.reserve(static_cast<std::size_t>(n * m));
  std::vector<Eigen::MatrixXd> blocks;
  blocks.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    std::vector<Index> kept;
    for (Index j = 0; j < m; ++j)
      if (!held_out || !held_out->contains(i, j)) kept.push_back(j);
    Eigen::MatrixXd block(static_cast<Index>(kept.size()), k);
    for (std::size_t r = 0; r < kept.size(); ++r) {
      const Index j = kept[r];
      block.row(static_cast<Index>(r)) = loadings.row(j);
      y.push_back(static_cast<double>(counts(i, j)));
      off.push_back(offsets[i]);
    }
    blocks.push_back(std::move(block));
  }
  return {Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Index>(y.size())),
          BlockDesign(std::move(blocks)),
          Eigen::Map<Eigen::VectorXd>(off.data(), static_cast<Index>(off.size()))};
}

Eigen::MatrixXd unstack_coefficients(const Eigen::VectorXd& beta, Index count, Index rank) {
  if (beta.size() != count * rank) fail(ErrorKind::Argument, "coefficient length mismatch");
  Eigen::MatrixXd out(count, rank);
  for (Index r = 0; r < count; ++r) out.row(r) = beta.segment(r * rank, rank).transpose();
  return out;
}

Eigen::VectorXd stack_rows(const Eigen::MatrixXd& m) {
  Eigen::VectorXd out(m.size());
  for (Index r = 0; r < m.rows(); ++r) out.segment(r * m.cols(), m.cols()) = m.row(r).transpose();
  return out;
}

double total_loglik(const CountMatrix& counts, const Eigen::MatrixXd& scores,
                    const Eigen::MatrixXd& loadings, double tau, const OffsetVector& offsets,
                    const HeldOutSet* held_out) {
  if (scores.rows() != counts.rows() || loadings.rows() != counts.cols() ||
      scores.cols() != loadings.cols() || offsets.size() != counts.rows())
    fail(ErrorKind::Argument, "factor shapes do not match the count matrix");
  const Eigen::MatrixXd eta = scores * loadings.transpose();
  double total = 0.0;
  for (Index j = 0; j < counts.cols(); ++j)
    for (Index i = 0; i < counts.rows(); ++i) {
      if (held_out && held_out->contains(i, j)) continue;
      total += zip_log_density(static_cast<double>(counts(i, j)), eta(i, j), tau, offsets[i]);
    }
  return total;
}

FactorModel zipfa_fit(const CountMatrix& counts, Index rank, const FitOptions& options,
                      const HeldOutSet* held_out) {
  options.validate();
  const Index n = counts.rows(), m = counts.cols();
  if (rank < 1 || rank > std::min(n, m))
    fail(ErrorKind::Argument, "rank must lie in [1, min(n, m)]");
  if (held_out) {
    if (held_out->rows() != n || held_out->cols() != m)
      fail(ErrorKind::Argument, "held-out set shape does not match the count matrix");
    held_out->require_retention();
  }

  FactorModel model;
  model.rank = rank;
  model.offsets = options.offsets == OffsetMode::Empirical
                      ? relative_library_size(counts, held_out)
                      : OffsetVector::ones(n);
  FactorPair start = absorb_scale(truncated_svd(impute_log(counts, held_out), rank));
  model.scores = std::move(start.scores);
  model.loadings = std::move(start.loadings);
  model.tau = std::numeric_limits<double>::quiet_NaN();

  bool have_tau = false;
  for (int iter = 1; iter <= options.max_outer_iterations; ++iter) {
    Eigen::MatrixXd new_loadings, new_scores;
    double tau = model.tau;
    try {
      const ZipRegProblem v_problem =
          build_loading_problem(counts, model.scores, model.offsets, held_out);
      std::optional<ZipParams> v_init;
      if (options.warm_start && have_tau) v_init = ZipParams{stack_rows(model.loadings), tau};
      const ZipRegFit v_fit = fit_zip_regression(v_problem, v_init, options.inner);
      new_loadings = unstack_coefficients(v_fit.beta, m, rank);
      tau = v_fit.tau;

      const ZipRegProblem u_problem =
          build_score_problem(counts, new_loadings, model.offsets, held_out);
      std::optional<ZipParams> u_init;
      if (options.warm_start) u_init = ZipParams{stack_rows(model.scores), tau};
      const ZipRegFit u_fit = fit_zip_regression(u_problem, u_init, options.inner);
      new_scores = unstack_coefficients(u_fit.beta, n, rank);
      tau = u_fit.tau;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Numeric && e.kind() != ErrorKind::NoConvergence) throw;
      model.converged = false;
      return model;
    }

    FactorPair next = reorthogonalize(new_scores, new_loadings);
    model.scores = std::move(next.scores);
    model.loadings = std::move(next.loadings);
    model.tau = tau;
    have_tau = true;
    model.iterations = iter;

    const double ll =
        total_loglik(counts, model.scores, model.loadings, tau, model.offsets, held_out);
    model.loglik_trace.push_back(ll);
    const std::size_t t = model.loglik_trace.size();
    if (t >= 2) {
      const double prev = model.loglik_trace[t - 2];
      if (std::abs(ll - prev) / std::max(std::abs(prev), 1e-300) < options.rel_loglik_tol) {
        model.converged = true;
        break;
      }
    }
  }
  return model;
}

Eigen::MatrixXd predict_zero_probability(const FactorModel& model) {
  const Eigen::MatrixXd eta = model.log_rate();
  Eigen::MatrixXd out(eta.rows(), eta.cols());
  for (Index j = 0; j < eta.cols(); ++j)
    for (Index i = 0; i < eta.rows(); ++i) {
      const double e = std::clamp(eta(i, j), -kEtaClamp, kEtaClamp);
      const double p = sigmoid(-model.tau * e);
      out(i, j) = p + (1.0 - p) * std::exp(-model.offsets[i] * std::exp(e));
    }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

using nlohmann::json;

json matrix_rows(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

double number_or_nan(const json& v) {
  return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}

Eigen::MatrixXd rows_matrix(const json& rows, Index cols) {
  Eigen::MatrixXd m(static_cast<Index>(rows.size()), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<Index>(rows[i].size()) != cols)
      fail(ErrorKind::Input, "ragged matrix in model document");
    for (Index j = 0; j < cols; ++j)
      m(static_cast<Index>(i), j) = number_or_nan(rows[i][static_cast<std::size_t>(j)]);
  }
  return m;
}

}  // namespace

std::string model_to_json(const FactorModel& model) {
  json doc;
  doc["rank"] = model.rank;
  doc["tau"] = model.tau;
  doc["N"] = std::vector<double>(model.offsets.values().data(),
                                 model.offsets.values().data() + model.offsets.size());
  doc["U"] = matrix_rows(model.scores);
  doc["V"] = matrix_rows(model.loadings);
  doc["loglik_trace"] = model.loglik_trace;
  doc["iterations"] = model.iterations;
  doc["converged"] = model.converged;
  return doc.dump(1) + "\n";
}

FactorModel model_from_json(const std::string& text) {
  FactorModel model;
  try {
    const json doc = json::parse(text);
    model.rank = doc.at("rank").get<Index>();
    model.tau = number_or_nan(doc.at("tau"));
    const auto n = doc.at("N").get<std::vector<double>>();
    model.offsets = OffsetVector(Eigen::Map<const Eigen::VectorXd>(n.data(), static_cast<Index>(n.size())));
    model.scores = rows_matrix(doc.at("U"), model.rank);
    model.loadings = rows_matrix(doc.at("V"), model.rank);
    for (const auto& v : doc.at("loglik_trace")) model.loglik_trace.push_back(number_or_nan(v));
    model.iterations = doc.value("iterations", static_cast<int>(model.loglik_trace.size()));
    model.converged = doc.at("converged").get<bool>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Input, std::string("malformed model document: ") + e.what());
  }
  if (model.scores.rows() != model.offsets.size())
    fail(ErrorKind::Input, "model document: U rows do not match N");
  return model;
}

void save_model(const FactorModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << model_to_json(model);
  if (!out) fail(ErrorKind::Io, "failed writing " + path.string());
}

FactorModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Input, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return model_from_json(ss.str());
}

}  // namespace zipfa
