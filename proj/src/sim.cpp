#include "zipfa/sim.hpp"

#include "parallel.hpp"
#include "text_util.hpp"
#include "zipfa/error.hpp"
#include "zipfa/linalg.hpp"
#include "zipfa/seed.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace zipfa {

namespace {

// End rows (1-based, inclusive) of the reference 200 x 100 layout.
constexpr int kSampleGroupEnds[] = {35, 80, 140, 200};
constexpr int kTaxonGroupEnds[] = {25, 35, 60, 100};

Index scaled_end(int end, int reference, Index size) {
  return static_cast<Index>(std::lround(static_cast<double>(end) * static_cast<double>(size) /
                                        static_cast<double>(reference)));
}

// Fills rows [first, last] (1-based, reference coordinates) of column `col`.
void fill_rows(Eigen::MatrixXd& m, int first, int last, int reference, Index col, double value) {
  const Index lo = first == 1 ? 0 : scaled_end(first - 1, reference, m.rows());
  const Index hi = scaled_end(last, reference, m.rows());
  for (Index r = lo; r < hi; ++r) m(r, col) = value;
}

std::vector<int> group_labels(const int (&ends)[4], int reference, Index size) {
  std::vector<int> labels(static_cast<std::size_t>(size), 4);
  Index lo = 0;
  for (int g = 0; g < 4; ++g) {
    const Index hi = scaled_end(ends[g], reference, size);
    for (Index r = lo; r < hi; ++r) labels[static_cast<std::size_t>(r)] = g + 1;
    lo = hi;
  }
  return labels;
}

double mean_of(const Eigen::MatrixXd& m) { return m.size() == 0 ? 0.0 : m.mean(); }

}  // namespace

Setting parse_setting(const std::string& text) {
  if (text == "1") return Setting::S1;
  if (text == "2") return Setting::S2;
  if (text == "3") return Setting::S3;
  if (text == "4") return Setting::S4;
  if (text == "5") return Setting::S5;
  if (text == "6.1") return Setting::S6_1;
  if (text == "6.2") return Setting::S6_2;
  fail(ErrorKind::Argument, "unknown setting '" + text + "' (expected 1-5, 6.1 or 6.2)");
}

std::string to_string(Setting setting) {
  switch (setting) {
    case Setting::S1: return "1";
    case Setting::S2: return "2";
    case Setting::S3: return "3";
    case Setting::S4: return "4";
    case Setting::S5: return "5";
    case Setting::S6_1: return "6.1";
    case Setting::S6_2: return "6.2";
  }
  return "?";
}

bool is_negative_binomial(Setting setting) {
  return setting == Setting::S6_1 || setting == Setting::S6_2;
}

double SimulatedDataset::realized_inflation() const {
  return inflation_mask.size() == 0 ? 0.0
                                    : static_cast<double>(inflation_mask.count()) /
                                          static_cast<double>(inflation_mask.size());
}

std::vector<Cell> SimulatedDataset::inflated_cells() const {
  std::vector<Cell> cells;
  for (Index i = 0; i < inflation_mask.rows(); ++i)
    for (Index j = 0; j < inflation_mask.cols(); ++j)
      if (inflation_mask(i, j)) cells.push_back({i, j});
  return cells;
}

GroundTruth generate_truth(std::uint64_t seed, Index n, Index m) {
  if (n < 4 || m < 4) fail(ErrorKind::Argument, "truth needs at least 4 samples and 4 taxa");
  GroundTruth truth;
  truth.scores = Eigen::MatrixXd::Zero(n, 3);
  truth.loadings = Eigen::MatrixXd::Zero(m, 3);

  auto& u = truth.scores;
  fill_rows(u, 36, 80, 200, 0, 2.0);
  fill_rows(u, 81, 140, 200, 0, 1.7);
  fill_rows(u, 1, 35, 200, 1, 1.8);
  fill_rows(u, 36, 80, 200, 1, 0.9);
  fill_rows(u, 36, 200, 200, 2, 1.7);

  auto& v = truth.loadings;
  fill_rows(v, 61, 100, 100, 0, 1.7);
  fill_rows(v, 36, 60, 100, 1, 1.7);
  fill_rows(v, 61, 100, 100, 1, 1.0);
  fill_rows(v, 1, 25, 100, 2, 1.7);
  fill_rows(v, 26, 100, 100, 2, 0.9);

  std::mt19937_64 rng(derive_seed(seed, "truth"));
  std::normal_distribution<double> score_jitter(0.0, 0.06);
  std::normal_distribution<double> loading_jitter(0.0, 0.05);
  for (Index k = 0; k < 3; ++k)
    for (Index i = 0; i < n; ++i) u(i, k) += score_jitter(rng);
  for (Index k = 0; k < 3; ++k)
    for (Index j = 0; j < m; ++j) v(j, k) += loading_jitter(rng);

  truth.sample_groups = group_labels(kSampleGroupEnds, 200, n);
  truth.taxon_groups = group_labels(kTaxonGroupEnds, 100, m);
  return truth;
}

Eigen::MatrixXd zero_probability_matrix(const Eigen::MatrixXd& log_lambda, Setting setting,
                                        double tau, std::mt19937_64* rng) {
  if (!std::isfinite(tau)) fail(ErrorKind::Argument, "tau must be finite");
  const auto& L = log_lambda.array();
  switch (setting) {
    case Setting::S1:
      return (1.0 / (1.0 + (tau * L).exp())).matrix();
    case Setting::S2:
      return (-(tau * L).exp()).exp().matrix();
    case Setting::S3:
      return (-(-(-tau * L).exp()).unaryExpr([](double x) { return std::expm1(x); })).matrix();
    case Setting::S4:
      if (tau < 0.0) fail(ErrorKind::Argument, "setting 4 needs tau >= 0");
      return (-tau * L.exp()).exp().matrix();
    case Setting::S5: {
      if (tau < 0.10 || tau > 0.90)
        fail(ErrorKind::Argument, "setting 5 needs tau in [0.10, 0.90]");
      if (!rng) fail(ErrorKind::Argument, "setting 5 needs a random generator");
      std::uniform_real_distribution<double> column_p(tau - 0.10, tau + 0.10);
      Eigen::MatrixXd p(log_lambda.rows(), log_lambda.cols());
      for (Index j = 0; j < p.cols(); ++j) p.col(j).setConstant(column_p(*rng));
      return p;
    }
    case Setting::S6_1:
    case Setting::S6_2:
      if (tau < 0.0) fail(ErrorKind::Argument, "settings 6.x need tau >= 0");
      return (-tau * (-L).exp()).exp().matrix();
  }
  fail(ErrorKind::Argument, "unknown setting");
}

double calibrate_tau(Setting setting, const Eigen::MatrixXd& log_lambda,
                     double target_zero_fraction, std::uint64_t /*seed*/) {
  const double target = target_zero_fraction;
  if (!(target >= 0.0 && target < 1.0))
    fail(ErrorKind::Calibration, "target zero fraction must be in [0, 1)");
  if (setting == Setting::S5) {
    if (target < 0.10 || target > 0.90)
      fail(ErrorKind::Calibration,
           "setting 5 can reach zero fractions in [0.10, 0.90] only");
    return target;
  }

  // mean(P) decreases in tau for these links; bisect on tau, or on ln(tau)
  // where tau must stay positive.
  const bool log_scale = setting == Setting::S4 || is_negative_binomial(setting);
  const double lo = log_scale ? -40.0 : -50.0;
  const double hi = log_scale ? 40.0 : 50.0;
  auto to_tau = [&](double t) { return log_scale ? std::exp(t) : t; };
  auto excess = [&](double t) {
    return mean_of(zero_probability_matrix(log_lambda, setting, to_tau(t))) - target;
  };

  const double f_lo = excess(lo), f_hi = excess(hi);
  if (f_lo < 0.0 || f_hi > 0.0)
    fail(ErrorKind::Calibration,
         "target " + text::format_double(target) + " outside attainable range [" +
             text::format_double(f_hi + target) + ", " + text::format_double(f_lo + target) +
             "] for setting " + to_string(setting));
  double a = lo, b = hi, best = lo, best_gap = std::abs(f_lo);
  for (int iter = 0; iter < 200 && best_gap > 1e-10; ++iter) {
    const double mid = 0.5 * (a + b);
    const double f = excess(mid);
    if (std::abs(f) < best_gap) {
      best_gap = std::abs(f);
      best = mid;
    }
    (f > 0.0 ? a : b) = mid;
  }
  if (!(best_gap < 0.005))
    fail(ErrorKind::Calibration, "bisection could not reach the target within 0.005");
  return to_tau(best);
}

SimulatedDataset generate_counts(const SimulationSpec& spec) {
  SimulatedDataset data;
  data.spec = spec;
  data.truth = generate_truth(spec.seed, spec.n, spec.m);
  data.log_lambda = data.truth.scores * data.truth.loadings.transpose();
  const Index n = spec.n, m = spec.m;

  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, m);
  if (spec.tau) {
    data.tau = *spec.tau;
  } else if (spec.target_zero_fraction > 0.0) {
    data.tau = calibrate_tau(spec.setting, data.log_lambda, spec.target_zero_fraction, spec.seed);
  } else if (spec.target_zero_fraction < 0.0) {
    fail(ErrorKind::Calibration, "target zero fraction must be in [0, 1)");
  }
  if (data.tau) {
    std::mt19937_64 column_rng(derive_seed(spec.seed, "column-p"));
    p = zero_probability_matrix(data.log_lambda, spec.setting, *data.tau, &column_rng);
  }

  std::vector<double> dispersion(static_cast<std::size_t>(m), 0.0);
  if (is_negative_binomial(spec.setting)) {
    std::mt19937_64 rng(derive_seed(spec.seed, "dispersion"));
    const bool low = spec.setting == Setting::S6_1;
    std::uniform_real_distribution<double> phi(low ? 0.5 : 1.0, low ? 1.0 : 3.0);
    for (auto& d : dispersion) d = phi(rng);
  }

  std::mt19937_64 count_rng(derive_seed(spec.seed, "counts"));
  std::mt19937_64 inflate_rng(derive_seed(spec.seed, "inflation"));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  CountArray counts(n, m);
  data.inflation_mask.resize(n, m);
  for (Index j = 0; j < m; ++j) {
    const double phi = dispersion[static_cast<std::size_t>(j)];
    for (Index i = 0; i < n; ++i) {
      const double mean = std::exp(data.log_lambda(i, j));  // N_i = 1
      double rate = mean;
      if (phi > 0.0) rate = std::gamma_distribution<double>(1.0 / phi, phi * mean)(count_rng);
      std::int64_t a = 0;
      if (rate > 0.0) a = std::poisson_distribution<std::int64_t>(rate)(count_rng);
      const bool inflate = unit(inflate_rng) < p(i, j);
      data.inflation_mask(i, j) = inflate;
      counts(i, j) = inflate ? 0 : a;
    }
  }
  data.counts = CountMatrix(std::move(counts));
  return data;
}

void save_dataset(const SimulatedDataset& data, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  save_counts(data.counts, dir / "counts.csv");
  save_mask(data.inflated_cells(), dir / "mask.csv");

  using nlohmann::json;
  auto rows = [](const Eigen::MatrixXd& m) {
    json out = json::array();
    for (Index i = 0; i < m.rows(); ++i) {
      json row = json::array();
      for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
      out.push_back(std::move(row));
    }
    return out;
  };
  const json tau = data.tau ? json(*data.tau) : json(nullptr);

  json truth;
  truth["setting"] = to_string(data.spec.setting);
  truth["tau"] = tau;
  truth["log_lambda"] = rows(data.log_lambda);
  truth["U"] = rows(data.truth.scores);
  truth["V"] = rows(data.truth.loadings);
  truth["sample_groups"] = data.truth.sample_groups;
  truth["taxon_groups"] = data.truth.taxon_groups;
  json mask = json::array();
  for (const Cell& c : data.inflated_cells()) mask.push_back({c.row, c.col});
  truth["inflation_mask"] = std::move(mask);
  text::write_file(dir / "truth.json", truth.dump(1) + "\n");

  double mean_p = 0.0;
  if (data.tau) {
    std::mt19937_64 column_rng(derive_seed(data.spec.seed, "column-p"));
    mean_p = mean_of(
        zero_probability_matrix(data.log_lambda, data.spec.setting, *data.tau, &column_rng));
  }
  json manifest;
  manifest["setting"] = to_string(data.spec.setting);
  manifest["zero_pct"] = data.spec.target_zero_fraction;
  manifest["tau"] = tau;
  manifest["seed"] = data.spec.seed;
  manifest["n"] = data.spec.n;
  manifest["m"] = data.spec.m;
  manifest["mean_zero_probability"] = mean_p;
  manifest["realized_inflation"] = data.realized_inflation();
  manifest["files"] = {"counts.csv", "truth.json", "mask.csv"};
  text::write_file(dir / "manifest.json", manifest.dump(1) + "\n");
}

double l2_loss(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& loadings,
               const Eigen::MatrixXd& log_lambda) {
  if (scores.rows() != log_lambda.rows() || loadings.rows() != log_lambda.cols() ||
      scores.cols() != loadings.cols())
    fail(ErrorKind::Argument, "factor shapes do not conform to the truth matrix");
  return (scores * loadings.transpose() - log_lambda).squaredNorm();
}

Eigen::MatrixXd center_rows(const Eigen::MatrixXd& m) {
  return m.colwise() - m.rowwise().mean();
}

std::vector<int> complete_linkage(const Eigen::MatrixXd& rows, int clusters) {
  const Index n = rows.rows();
  if (clusters < 1) fail(ErrorKind::Argument, "cluster count must be positive");
  Eigen::MatrixXd dist(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = i; j < n; ++j) dist(i, j) = dist(j, i) = (rows.row(i) - rows.row(j)).norm();

  std::vector<Index> parent(static_cast<std::size_t>(n));
  std::iota(parent.begin(), parent.end(), Index{0});
  std::vector<char> active(static_cast<std::size_t>(n), 1);
  Index remaining = n;
  while (remaining > 1) {
    double best = INFINITY;
    Index a = -1, b = -1;
    for (Index i = 0; i < n; ++i) {
      if (!active[static_cast<std::size_t>(i)]) continue;
      for (Index j = i + 1; j < n; ++j) {
        if (!active[static_cast<std::size_t>(j)]) continue;
        if (dist(i, j) < best) {
          best = dist(i, j);
          a = i;
          b = j;
        }
      }
    }
    if (remaining <= clusters && best > 0.0) break;
    for (Index k = 0; k < n; ++k) {
      const double d = std::max(dist(a, k), dist(b, k));
      dist(a, k) = dist(k, a) = d;
    }
    active[static_cast<std::size_t>(b)] = 0;
    for (auto& p : parent)
      if (p == b) p = a;
    --remaining;
  }

  std::vector<int> labels(static_cast<std::size_t>(n), -1);
  std::vector<Index> roots;
  for (Index i = 0; i < n; ++i) {
    const Index r = parent[static_cast<std::size_t>(i)];
    auto it = std::find(roots.begin(), roots.end(), r);
    if (it == roots.end()) {
      roots.push_back(r);
      it = roots.end() - 1;
    }
    labels[static_cast<std::size_t>(i)] = static_cast<int>(it - roots.begin());
  }
  return labels;
}

double clustering_accuracy(const Eigen::MatrixXd& scores, const std::vector<int>& true_groups,
                           int n_groups) {
  if (static_cast<Index>(true_groups.size()) != scores.rows())
    fail(ErrorKind::Argument, "group labels do not match the number of rows");
  if (scores.rows() < n_groups) fail(ErrorKind::Argument, "fewer rows than groups");
  for (int g : true_groups)
    if (g < 1 || g > n_groups) fail(ErrorKind::Argument, "group labels must lie in 1..n_groups");

  const std::vector<int> labels = complete_linkage(scores, n_groups);
  const int found = *std::max_element(labels.begin(), labels.end()) + 1;
  // contingency[c][g]: rows in cluster c with true group g
  std::vector<std::vector<int>> contingency(static_cast<std::size_t>(found),
                                            std::vector<int>(static_cast<std::size_t>(n_groups), 0));
  for (std::size_t r = 0; r < labels.size(); ++r)
    ++contingency[static_cast<std::size_t>(labels[r])][static_cast<std::size_t>(true_groups[r] - 1)];

  std::vector<int> perm(static_cast<std::size_t>(n_groups));
  std::iota(perm.begin(), perm.end(), 0);
  int best = 0;
  do {
    int hits = 0;
    for (int c = 0; c < found; ++c)
      hits += contingency[static_cast<std::size_t>(c)][static_cast<std::size_t>(perm[static_cast<std::size_t>(c)])];
    best = std::max(best, hits);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(scores.rows());
}

Eigen::MatrixXd log_svd_transform(const CountMatrix& counts) {
  Eigen::MatrixXd shifted = counts.as_double();
  shifted = shifted.unaryExpr([](double a) { return a == 0.0 ? 0.5 : a; });
  const Eigen::VectorXd sums = shifted.rowwise().sum();
  Eigen::MatrixXd out = (shifted.array().colwise() / sums.array()).log().matrix();
  return center_rows(out);
}

FactorPair log_svd_baseline(const CountMatrix& counts, Index rank) {
  return absorb_scale(truncated_svd(log_svd_transform(counts), rank));
}

std::string to_string(Method method) { return method == Method::Zipfa ? "zipfa" : "logsvd"; }

Method parse_method(const std::string& text) {
  if (text == "zipfa") return Method::Zipfa;
  if (text == "logsvd") return Method::LogSvd;
  fail(ErrorKind::Argument, "unknown method '" + text + "' (expected zipfa or logsvd)");
}

std::uint64_t replicate_seed(std::uint64_t root, Setting setting, double zero_fraction,
                             int replicate) {
  const std::string label =
      "replicate/" + to_string(setting) + "/" + text::format_double(zero_fraction);
  return derive_seed(root, label, static_cast<std::uint64_t>(replicate));
}

std::vector<BenchmarkRecord> run_benchmark(const BenchmarkConfig& config) {
  if (config.replicates < 1) fail(ErrorKind::Argument, "replicates must be >= 1");
  if (config.settings.empty() || config.zero_fractions.empty() || config.methods.empty())
    fail(ErrorKind::Argument, "benchmark grid is empty");

  struct Task {
    Setting setting;
    double fraction;
    int replicate;
  };
  std::vector<Task> tasks;
  for (Setting s : config.settings)
    for (double f : config.zero_fractions)
      for (int r = 0; r < config.replicates; ++r) tasks.push_back({s, f, r});

  const std::size_t per_task = config.methods.size();
  std::vector<BenchmarkRecord> records(tasks.size() * per_task);
  parallel_for(tasks.size(), config.threads, [&](std::size_t t) {
    const Task& task = tasks[t];
    SimulationSpec spec;
    spec.setting = task.setting;
    spec.target_zero_fraction = task.fraction;
    spec.seed = replicate_seed(config.seed, task.setting, task.fraction, task.replicate);
    const SimulatedDataset data = generate_counts(spec);

    for (std::size_t k = 0; k < per_task; ++k) {
      BenchmarkRecord rec;
      rec.method = config.methods[k];
      rec.setting = task.setting;
      rec.zero_fraction = task.fraction;
      rec.replicate = task.replicate;
      const auto start = std::chrono::steady_clock::now();
      try {
        if (rec.method == Method::Zipfa) {
          const FactorModel model = zipfa_fit(data.counts, config.rank, config.fit);
          // Fitted log-rate ln(N_i) + (U V^T)_ij is on the scale of the truth,
          // which was generated with unit library sizes.
          const Eigen::MatrixXd target =
              data.log_lambda.colwise() - model.offsets.values().array().log().matrix();
          rec.l2_loss = l2_loss(model.scores, model.loadings, target);
          rec.taxa_accuracy = clustering_accuracy(model.loadings, data.truth.taxon_groups);
          rec.sample_accuracy = clustering_accuracy(model.scores, data.truth.sample_groups);
          rec.converged = model.converged;
        } else {
          const FactorPair fit = log_svd_baseline(data.counts, config.rank);
          rec.l2_loss = l2_loss(fit.scores, fit.loadings, center_rows(data.log_lambda));
          rec.taxa_accuracy = clustering_accuracy(fit.loadings, data.truth.taxon_groups);
          rec.sample_accuracy = clustering_accuracy(fit.scores, data.truth.sample_groups);
          rec.converged = true;
        }
      } catch (const Error&) {
        rec.l2_loss = std::nan("");
        rec.taxa_accuracy = 0.0;
        rec.sample_accuracy = 0.0;
        rec.converged = false;
      }
      if (config.timing)
        rec.runtime_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      records[t * per_task + k] = rec;
    }
  });
  return records;
}

void write_benchmark_csv(const std::vector<BenchmarkRecord>& records,
                         const std::filesystem::path& path) {
  std::ostringstream out;
  out << "method,setting,zero_pct,replicate,l2_loss,taxa_acc,sample_acc,converged,runtime_s\n";
  for (const auto& r : records) {
    out << to_string(r.method) << ',' << to_string(r.setting) << ','
        << text::format_double(r.zero_fraction) << ',' << r.replicate << ','
        << text::format_double(r.l2_loss) << ',' << text::format_double(r.taxa_accuracy) << ','
        << text::format_double(r.sample_accuracy) << ',' << (r.converged ? "true" : "false")
        << ',' << (r.runtime_s ? text::format_double(*r.runtime_s) : "NA") << '\n';
  }
  text::write_file(path, out.str());
}

std::vector<BenchmarkRecord> read_benchmark_csv(const std::filesystem::path& path) {
  const std::string content = text::read_file(path);
  const auto blocks = text::line_blocks(content);
  std::vector<BenchmarkRecord> records;
  if (blocks.empty()) fail(ErrorKind::Input, "empty benchmark file");
  const auto& lines = blocks.front();
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const auto f = text::split(lines[k], ',');
    if (f.size() != 9) fail(ErrorKind::Input, "benchmark row " + std::to_string(k) + ": expected 9 fields");
    BenchmarkRecord r;
    r.method = parse_method(std::string(f[0]));
    r.setting = parse_setting(std::string(f[1]));
    r.zero_fraction = text::parse_double(f[2]);
    r.replicate = static_cast<int>(text::parse_int(f[3]));
    r.l2_loss = text::parse_double(f[4]);
    r.taxa_accuracy = text::parse_double(f[5]);
    r.sample_accuracy = text::parse_double(f[6]);
    r.converged = text::trim(f[7]) == "true";
    if (text::trim(f[8]) != "NA") r.runtime_s = text::parse_double(f[8]);
    records.push_back(r);
  }
  return records;
}

std::string benchmark_conventions_json(const BenchmarkConfig& config) {
  nlohmann::json doc;
  doc["rank"] = config.rank;
  doc["root_seed"] = config.seed;
  doc["replicate_seed"] = "derive_seed(root, \"replicate/<setting>/<zero_pct>\", replicate)";
  doc["zipfa_l2_loss"] =
      "||U V^T - (Lambda - ln N 1^T)||_F^2, i.e. fitted log-rate ln N_i + (U V^T)_ij "
      "against true ln(lambda) (generation used N_i = 1)";
  doc["logsvd_l2_loss"] =
      "||U V^T - rowcenter(Lambda)||_F^2 where U V^T is the rank-K fit of the row-centered "
      "log-ratio matrix";
  doc["clustering"] = "complete linkage, Euclidean, cut at 4 clusters; best label permutation";
  doc["offsets"] = config.fit.offsets == OffsetMode::Empirical ? "empirical" : "unit";
  return doc.dump(1) + "\n";
}

// ---------------------------------------------------------------------------
// Zero-pattern diagnostic

LogisticFit fit_logistic_curve(const std::vector<double>& x, const std::vector<double>& y) {
  LogisticFit fit;
  fit.points = static_cast<int>(x.size());
  if (x.size() < 3) {
    fit.diagnostic = "fewer than 3 points";
    return fit;
  }
  const Index n = static_cast<Index>(x.size());
  Eigen::Map<const Eigen::VectorXd> xs(x.data(), n), ys(y.data(), n);
  if ((xs.array() - xs.mean()).abs().maxCoeff() == 0.0) {
    fit.diagnostic = "no spread in mean log count";
    return fit;
  }

  // Start from the linear fit of logit(y) on x, then damped Gauss-Newton.
  const Eigen::VectorXd ly =
      ys.unaryExpr([](double v) { v = std::clamp(v, 0.01, 0.99); return std::log(v / (1 - v)); });
  const double xm = xs.mean(), ym = ly.mean();
  const double sxx = (xs.array() - xm).square().sum();
  Eigen::Vector2d theta;
  theta[1] = ((xs.array() - xm) * (ly.array() - ym)).sum() / sxx;
  theta[0] = ym - theta[1] * xm;

  auto sse = [&](const Eigen::Vector2d& t) {
    double s = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double r = ys[i] - sigmoid(t[0] + t[1] * xs[i]);
      s += r * r;
    }
    return s;
  };
  double current = sse(theta);
  double lambda = 1e-3;
  for (int iter = 0; iter < 500; ++iter) {
    Eigen::Matrix2d jtj = Eigen::Matrix2d::Zero();
    Eigen::Vector2d jtr = Eigen::Vector2d::Zero();
    for (Index i = 0; i < n; ++i) {
      const double s = sigmoid(theta[0] + theta[1] * xs[i]);
      const double d = s * (1.0 - s);
      const Eigen::Vector2d j(d, d * xs[i]);
      jtj += j * j.transpose();
      jtr += j * (ys[i] - s);
    }
    if (jtr.cwiseAbs().maxCoeff() < 1e-12) break;
    Eigen::Matrix2d a = jtj;
    a.diagonal() *= (1.0 + lambda);
    a.diagonal().array() += 1e-15;
    const Eigen::Vector2d step = a.ldlt().solve(jtr);
    const Eigen::Vector2d trial = theta + step;
    const double value = sse(trial);
    if (std::isfinite(value) && value < current) {
      const double gain = current - value;
      theta = trial;
      current = value;
      lambda = std::max(lambda / 3.0, 1e-12);
      if (gain < 1e-15 * (1.0 + current)) break;
    } else {
      lambda *= 4.0;
      if (lambda > 1e12) break;
    }
  }
  fit.intercept = theta[0];
  fit.slope = theta[1];
  fit.fitted = true;
  return fit;
}

ZeroPatternDiagnostic zero_pattern_diagnostic(const CountMatrix& counts) {
  ZeroPatternDiagnostic diag;
  std::vector<double> fx, fy, ax, ay;
  for (Index j = 0; j < counts.cols(); ++j) {
    TaxonZeroPattern t;
    t.taxon = counts.taxon_ids()[static_cast<std::size_t>(j)];
    Index zeros = 0, nonzero = 0;
    double log_sum = 0.0;
    for (Index i = 0; i < counts.rows(); ++i) {
      if (counts(i, j) == 0) {
        ++zeros;
      } else {
        ++nonzero;
        log_sum += std::log(static_cast<double>(counts(i, j)));
      }
    }
    t.zero_fraction = static_cast<double>(zeros) / static_cast<double>(counts.rows());
    if (nonzero > 0) {
      t.mean_log_nonzero = log_sum / static_cast<double>(nonzero);
      t.flagged = *t.mean_log_nonzero > kMeanLogThreshold;
      ax.push_back(*t.mean_log_nonzero);
      ay.push_back(t.zero_fraction);
      if (t.flagged) {
        fx.push_back(*t.mean_log_nonzero);
        fy.push_back(t.zero_fraction);
      }
    }
    diag.taxa.push_back(std::move(t));
  }
  diag.flagged_fit = fit_logistic_curve(fx, fy);
  diag.all_fit = fit_logistic_curve(ax, ay);
  return diag;
}

void write_diagnostic_csv(const ZeroPatternDiagnostic& diag, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "taxon_id,zero_pct,mean_log_nonzero,flagged\n";
  for (const auto& t : diag.taxa)
    out << t.taxon << ',' << text::format_double(t.zero_fraction) << ','
        << (t.mean_log_nonzero ? text::format_double(*t.mean_log_nonzero) : "NA") << ','
        << (t.flagged ? 1 : 0) << '\n';
  out << "\nfit,intercept,slope,points,status\n";
  auto fit_row = [&](const char* name, const LogisticFit& f) {
    out << name << ',' << (f.fitted ? text::format_double(f.intercept) : "NA") << ','
        << (f.fitted ? text::format_double(f.slope) : "NA") << ',' << f.points << ','
        << (f.fitted ? std::string("ok") : f.diagnostic) << '\n';
  };
  fit_row("flagged", diag.flagged_fit);
  fit_row("all", diag.all_fit);
  text::write_file(path, out.str());
}

ZeroPatternDiagnostic read_diagnostic_csv(const std::filesystem::path& path) {
  const auto content = text::read_file(path);
  const auto blocks = text::line_blocks(content);
  if (blocks.size() != 2) fail(ErrorKind::Input, "diagnostic file needs a taxa block and a fit block");
  ZeroPatternDiagnostic diag;
  for (std::size_t k = 1; k < blocks[0].size(); ++k) {
    const auto f = text::split(blocks[0][k], ',');
    if (f.size() != 4) fail(ErrorKind::Input, "diagnostic row needs 4 fields");
    TaxonZeroPattern t;
    t.taxon = std::string(f[0]);
    t.zero_fraction = text::parse_double(f[1]);
    const double ml = text::parse_double(f[2]);
    if (!std::isnan(ml)) t.mean_log_nonzero = ml;
    t.flagged = text::parse_int(f[3]) != 0;
    diag.taxa.push_back(std::move(t));
  }
  for (std::size_t k = 1; k < blocks[1].size(); ++k) {
    const auto f = text::split(blocks[1][k], ',');
    if (f.size() != 5) fail(ErrorKind::Input, "fit row needs 5 fields");
    LogisticFit fit;
    fit.intercept = text::parse_double(f[1]);
    fit.slope = text::parse_double(f[2]);
    fit.points = static_cast<int>(text::parse_int(f[3]));
    fit.fitted = text::trim(f[4]) == "ok";
    if (!fit.fitted) fit.diagnostic = std::string(text::trim(f[4]));
    (f[0] == "flagged" ? diag.flagged_fit : diag.all_fit) = fit;
  }
  return diag;
}

}  // namespace zipfa
