#pragma once

#include "zipfa/data.hpp"
#include "zipfa/factorize.hpp"
#include "zipfa/linalg.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace zipfa {

// Zero-inflation mechanisms. S1 is the fitted model's own link; S5 draws a
// column-constant probability; S6_x use negative-binomial counts.
enum class Setting { S1, S2, S3, S4, S5, S6_1, S6_2 };

Setting parse_setting(const std::string& text);  // "1".."5", "6.1", "6.2"
std::string to_string(Setting setting);
bool is_negative_binomial(Setting setting);

struct SimulationSpec {
  Setting setting = Setting::S1;
  double target_zero_fraction = 0.0;
  std::optional<double> tau;  // overrides calibration when set
  std::uint64_t seed = 0;
  Index n = 200;
  Index m = 100;
};

struct GroundTruth {
  Eigen::MatrixXd scores;    // n x 3
  Eigen::MatrixXd loadings;  // m x 3
  std::vector<int> sample_groups;  // 1..4
  std::vector<int> taxon_groups;   // 1..4
};

struct SimulatedDataset {
  SimulationSpec spec;
  CountMatrix counts;
  Eigen::MatrixXd log_lambda;  // true ln(lambda)
  GroundTruth truth;
  std::optional<double> tau;   // resolved tau; empty when nothing is inflated
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> inflation_mask;

  double realized_inflation() const;
  std::vector<Cell> inflated_cells() const;
};

// Block-structured rank-3 truth with Gaussian jitter (sd 0.06 on scores,
// 0.05 on loadings). Block boundaries scale with n and m.
GroundTruth generate_truth(std::uint64_t seed, Index n = 200, Index m = 100);

// Structural-zero probability per cell. `rng` is only used by S5.
Eigen::MatrixXd zero_probability_matrix(const Eigen::MatrixXd& log_lambda, Setting setting,
                                        double tau, std::mt19937_64* rng = nullptr);

double calibrate_tau(Setting setting, const Eigen::MatrixXd& log_lambda,
                     double target_zero_fraction, std::uint64_t seed);

SimulatedDataset generate_counts(const SimulationSpec& spec);

// Writes counts.csv, truth.json, mask.csv and manifest.json into `dir`.
void save_dataset(const SimulatedDataset& data, const std::filesystem::path& dir);

double l2_loss(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& loadings,
               const Eigen::MatrixXd& log_lambda);
Eigen::MatrixXd center_rows(const Eigen::MatrixXd& m);

// Complete-linkage agglomerative clustering (Euclidean) cut at `clusters`
// groups. Rows at distance zero always share a cluster. Labels are 0-based.
std::vector<int> complete_linkage(const Eigen::MatrixXd& rows, int clusters);

double clustering_accuracy(const Eigen::MatrixXd& scores, const std::vector<int>& true_groups,
                           int n_groups = 4);

// +0.5 on zeros, row-normalize, log, row-center, then rank-K SVD.
FactorPair log_svd_baseline(const CountMatrix& counts, Index rank);
Eigen::MatrixXd log_svd_transform(const CountMatrix& counts);

enum class Method { Zipfa, LogSvd };
std::string to_string(Method method);
Method parse_method(const std::string& text);

struct BenchmarkRecord {
  Method method = Method::Zipfa;
  Setting setting = Setting::S1;
  double zero_fraction = 0.0;
  int replicate = 0;
  double l2_loss = 0.0;
  double taxa_accuracy = 0.0;
  double sample_accuracy = 0.0;
  bool converged = false;
  std::optional<double> runtime_s;
};

inline FitOptions unit_offset_fit() {
  FitOptions f;
  f.offsets = OffsetMode::Unit;
  return f;
}

struct BenchmarkConfig {
  std::vector<Setting> settings{Setting::S1};
  std::vector<double> zero_fractions{0.0, 0.2, 0.4};
  int replicates = 1;
  std::vector<Method> methods{Method::Zipfa, Method::LogSvd};
  std::uint64_t seed = 0;
  Index rank = 3;
  // Simulated library sizes are known to be 1, so fits use unit offsets.
  FitOptions fit = unit_offset_fit();
  int threads = 0;  // 0 = hardware concurrency
  bool timing = false;
};

std::uint64_t replicate_seed(std::uint64_t root, Setting setting, double zero_fraction,
                             int replicate);

std::vector<BenchmarkRecord> run_benchmark(const BenchmarkConfig& config);

void write_benchmark_csv(const std::vector<BenchmarkRecord>& records,
                         const std::filesystem::path& path);
std::vector<BenchmarkRecord> read_benchmark_csv(const std::filesystem::path& path);
std::string benchmark_conventions_json(const BenchmarkConfig& config);

struct LogisticFit {
  double intercept = 0.0;
  double slope = 0.0;
  int points = 0;
  bool fitted = false;
  std::string diagnostic;
};

struct TaxonZeroPattern {
  std::string taxon;
  double zero_fraction = 0.0;
  std::optional<double> mean_log_nonzero;
  bool flagged = false;
};

struct ZeroPatternDiagnostic {
  std::vector<TaxonZeroPattern> taxa;
  LogisticFit flagged_fit;  // taxa with mean log nonzero count above the threshold
  LogisticFit all_fit;
};

inline constexpr double kMeanLogThreshold = 2.5;

ZeroPatternDiagnostic zero_pattern_diagnostic(const CountMatrix& counts);
LogisticFit fit_logistic_curve(const std::vector<double>& x, const std::vector<double>& y);
void write_diagnostic_csv(const ZeroPatternDiagnostic& diag, const std::filesystem::path& path);
ZeroPatternDiagnostic read_diagnostic_csv(const std::filesystem::path& path);

}  // namespace zipfa
