#include "doctest.h"
#include "test_helpers.hpp"

#include "zipfa/error.hpp"
#include "zipfa/sim.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>

using namespace zipfa;

TEST_CASE("generate_truth block values and determinism") {
  const GroundTruth t = generate_truth(1);
  REQUIRE(t.scores.rows() == 200);
  REQUIRE(t.loadings.rows() == 100);
  CHECK(std::abs(t.scores(49, 0) - 2.0) <= 5 * 0.06);
  CHECK(std::abs(t.scores(100, 0) - 1.7) <= 5 * 0.06);
  CHECK(std::abs(t.scores(10, 1) - 1.8) <= 5 * 0.06);
  CHECK(std::abs(t.scores(150, 1)) <= 5 * 0.06);
  CHECK(std::abs(t.loadings(9, 0)) <= 5 * 0.05);
  CHECK(std::abs(t.loadings(70, 1) - 1.0) <= 5 * 0.05);
  CHECK(std::abs(t.loadings(9, 2) - 1.7) <= 5 * 0.05);
  CHECK(t.sample_groups[34] == 1);
  CHECK(t.sample_groups[35] == 2);
  CHECK(t.sample_groups[199] == 4);
  CHECK(t.taxon_groups[24] == 1);
  CHECK(t.taxon_groups[25] == 2);
  CHECK(t.taxon_groups[60] == 4);

  const GroundTruth again = generate_truth(1);
  CHECK(again.scores == t.scores);
  CHECK(again.loadings == t.loadings);
  CHECK(generate_truth(2).scores != t.scores);

  // jitter sd is about 0.06 around the block value
  const Eigen::VectorXd block = t.scores.col(0).segment(35, 45).array() - 2.0;
  const double sd = std::sqrt(block.squaredNorm() / 45.0);
  CHECK(sd > 0.03);
  CHECK(sd < 0.09);
}

TEST_CASE("generate_truth scales the blocks to other shapes") {
  const GroundTruth t = generate_truth(3, 40, 20);
  CHECK(t.scores.rows() == 40);
  CHECK(t.sample_groups[6] == 1);
  CHECK(t.sample_groups[7] == 2);
  CHECK(t.taxon_groups[4] == 1);
  CHECK(t.taxon_groups[5] == 2);
}

TEST_CASE("zero_probability_matrix reference values") {
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(2, 2);
  CHECK(zero_probability_matrix(zero, Setting::S1, 3.7)(0, 0) == doctest::Approx(0.5));
  CHECK(zero_probability_matrix(zero, Setting::S2, 1.0)(1, 1) == doctest::Approx(std::exp(-1.0)));
  CHECK(zero_probability_matrix(Eigen::MatrixXd::Constant(2, 2, 1.3), Setting::S4, 0.0)
            .isApproxToConstant(1.0));
  const Eigen::MatrixXd one = Eigen::MatrixXd::Constant(1, 1, 1.0);
  CHECK(zero_probability_matrix(one, Setting::S3, 2.0)(0, 0) ==
        doctest::Approx(1.0 - std::exp(-std::exp(-2.0))));
  CHECK(zero_probability_matrix(one, Setting::S6_1, 2.0)(0, 0) ==
        doctest::Approx(std::exp(-2.0 * std::exp(-1.0))));
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd p5 = zero_probability_matrix(Eigen::MatrixXd::Zero(3, 50), Setting::S5, 0.4, &rng);
  CHECK(p5.minCoeff() >= 0.3);
  CHECK(p5.maxCoeff() <= 0.5);
  CHECK(p5.col(7).isApproxToConstant(p5(0, 7)));
  CHECK_THROWS_AS(zero_probability_matrix(one, Setting::S5, 0.4), Error);
  CHECK_THROWS_AS(zero_probability_matrix(one, Setting::S4, -1.0), Error);
}

TEST_CASE("calibrate_tau") {
  const GroundTruth t = generate_truth(5);
  const Eigen::MatrixXd lambda = t.scores * t.loadings.transpose();
  CHECK(calibrate_tau(Setting::S5, lambda, 0.4, 0) == 0.4);
  CHECK_THROWS_AS(calibrate_tau(Setting::S5, lambda, 0.95, 0), Error);
  for (Setting s : {Setting::S1, Setting::S2, Setting::S3, Setting::S4, Setting::S6_1}) {
    const double tau = calibrate_tau(s, lambda, 0.2, 0);
    std::mt19937_64 rng(0);
    CHECK(std::abs(zero_probability_matrix(lambda, s, tau, &rng).mean() - 0.2) < 0.005);
  }
  try {
    calibrate_tau(Setting::S1, Eigen::MatrixXd::Zero(4, 4), 0.2, 0);
    FAIL("expected calibration error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Calibration);
  }
  CHECK_NOTHROW(calibrate_tau(Setting::S1, Eigen::MatrixXd::Zero(4, 4), 0.5, 0));
}

TEST_CASE("generate_counts") {
  SimulationSpec spec;
  spec.seed = 11;
  SUBCASE("no inflation") {
    const auto d = generate_counts(spec);
    CHECK(d.inflation_mask.count() == 0);
    CHECK_FALSE(d.tau.has_value());
  }
  SUBCASE("setting 1 at 20 percent") {
    spec.target_zero_fraction = 0.2;
    const auto d = generate_counts(spec);
    CHECK(std::abs(d.realized_inflation() - 0.2) < 0.01);
    for (const Cell& c : d.inflated_cells()) CHECK(d.counts(c.row, c.col) == 0);
    const auto again = generate_counts(spec);
    CHECK(again.counts.values() == d.counts.values());
  }
  SUBCASE("inflated cells are the only change against the uninflated draw") {
    const auto plain = generate_counts(spec);
    spec.target_zero_fraction = 0.4;
    const auto d = generate_counts(spec);
    for (Index i = 0; i < 200; ++i)
      for (Index j = 0; j < 100; ++j)
        if (!d.inflation_mask(i, j)) CHECK(d.counts(i, j) == plain.counts(i, j));
  }
  SUBCASE("negative binomial counts are over-dispersed") {
    spec.setting = Setting::S6_1;
    // rows 36-80 and columns 61-100 share log-rate around 2.0*1.7 + 0.9*1.0 + 1.7*0.9
    const auto d = generate_counts(spec);
    std::vector<double> resid;
    for (Index i = 35; i < 80; ++i)
      for (Index j = 60; j < 100; ++j)
        resid.push_back((d.counts(i, j) - std::exp(d.log_lambda(i, j))) /
                        std::sqrt(std::exp(d.log_lambda(i, j))));
    double ss = 0.0;
    for (double r : resid) ss += r * r;
    CHECK(ss / static_cast<double>(resid.size()) > 2.0);  // Poisson would give about 1
  }
  SUBCASE("explicit tau skips calibration") {
    spec.tau = 0.5;
    spec.target_zero_fraction = 0.3;
    const auto d = generate_counts(spec);
    CHECK(*d.tau == 0.5);
  }
}

TEST_CASE("save_dataset writes all files") {
  SimulationSpec spec;
  spec.target_zero_fraction = 0.2;
  spec.seed = 3;
  spec.n = 20;
  spec.m = 10;
  const auto d = generate_counts(spec);
  const auto dir = testutil::scratch_dir("dataset");
  save_dataset(d, dir);
  CHECK(load_counts(dir / "counts.csv").values() == d.counts.values());
  CHECK(load_mask(dir / "mask.csv") == d.inflated_cells());
  std::ifstream in(dir / "manifest.json");
  const auto manifest = nlohmann::json::parse(in);
  CHECK(manifest["tau"].get<double>() == *d.tau);
  CHECK(manifest["setting"] == "1");
  std::ifstream tin(dir / "truth.json");
  const auto truth = nlohmann::json::parse(tin);
  CHECK(truth["U"].size() == 20);
  CHECK(truth["log_lambda"][3][4].get<double>() == d.log_lambda(3, 4));
}

TEST_CASE("l2_loss") {
  const Eigen::MatrixXd u = Eigen::MatrixXd::Random(200, 3), v = Eigen::MatrixXd::Random(100, 3);
  const Eigen::MatrixXd lambda = u * v.transpose();
  CHECK(l2_loss(u, v, lambda) == 0.0);
  CHECK(l2_loss(u, v, lambda.array() - 0.1) == doctest::Approx(200.0));
  CHECK_THROWS_AS(l2_loss(u, v, Eigen::MatrixXd::Zero(3, 3)), Error);
}

TEST_CASE("complete linkage and clustering accuracy") {
  std::vector<int> groups;
  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(12, 4);
  for (int i = 0; i < 12; ++i) {
    groups.push_back(i % 4 + 1);
    onehot(i, i % 4) = 1.0;
  }
  CHECK(clustering_accuracy(onehot, groups) == 1.0);

  std::vector<int> uneven{1, 1, 1, 1, 1, 2, 2, 3, 4, 4};
  CHECK(clustering_accuracy(Eigen::MatrixXd::Ones(10, 2), uneven) == doctest::Approx(0.5));

  // hand-worked example: two tight pairs and one outlier
  Eigen::MatrixXd pts(5, 1);
  pts << 0.0, 0.1, 5.0, 5.2, 20.0;
  const auto labels = complete_linkage(pts, 3);
  CHECK(labels == std::vector<int>{0, 0, 1, 1, 2});
  CHECK(complete_linkage(pts, 1) == std::vector<int>(5, 0));
  // complete linkage: {0,0.1} joins {5,5.2} (max 5.2) before {20} (max 15)
  CHECK(complete_linkage(pts, 2) == std::vector<int>{0, 0, 0, 0, 1});
  CHECK_THROWS_AS(clustering_accuracy(pts, {1, 2}), Error);
}

TEST_CASE("log-SVD baseline") {
  CountArray a(4, 3);
  a << 1, 2, 4, 3, 6, 12, 2, 4, 8, 5, 10, 20;
  const CountMatrix counts(a);
  const Eigen::MatrixXd t = log_svd_transform(counts);
  for (Index i = 0; i < 4; ++i) {
    CHECK(t(i, 0) == doctest::Approx(-std::log(2.0)));
    CHECK(t(i, 2) == doctest::Approx(std::log(2.0)));
  }
  const FactorPair f = log_svd_baseline(counts, 1);
  CHECK((f.scores * f.loadings.transpose() - t).norm() <= 1e-10);

  CountArray z = a;
  z(0, 0) = 0;
  const Eigen::MatrixXd tz = log_svd_transform(CountMatrix(z));
  CHECK(tz(0, 0) == doctest::Approx(std::log(0.5 / 6.5) - (std::log(0.5 / 6.5) + std::log(2 / 6.5) + std::log(4 / 6.5)) / 3));
}

TEST_CASE("setting and method names") {
  for (const char* s : {"1", "2", "3", "4", "5", "6.1", "6.2"})
    CHECK(to_string(parse_setting(s)) == s);
  CHECK_THROWS_AS(parse_setting("7"), Error);
  CHECK(parse_method("logsvd") == Method::LogSvd);
  CHECK_THROWS_AS(parse_method("pca"), Error);
  CHECK(replicate_seed(1, Setting::S1, 0.2, 0) != replicate_seed(1, Setting::S1, 0.2, 1));
  CHECK(replicate_seed(1, Setting::S1, 0.2, 0) != replicate_seed(1, Setting::S2, 0.2, 0));
}

TEST_CASE("benchmark records and CSV") {
  BenchmarkConfig config;
  config.settings = {Setting::S1};
  config.zero_fractions = {0.2};
  config.replicates = 2;
  config.methods = {Method::LogSvd};
  config.seed = 4;
  config.threads = 2;
  const auto records = run_benchmark(config);
  REQUIRE(records.size() == 2);
  CHECK(records[0].replicate == 0);
  CHECK(records[1].replicate == 1);
  CHECK(records[0].l2_loss > 0.0);
  const auto dir = testutil::scratch_dir("bench");
  write_benchmark_csv(records, dir / "a.csv");
  const auto back = read_benchmark_csv(dir / "a.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[1].l2_loss == records[1].l2_loss);
  CHECK(back[1].sample_accuracy == records[1].sample_accuracy);
  CHECK_FALSE(back[1].runtime_s.has_value());
  config.threads = 1;
  write_benchmark_csv(run_benchmark(config), dir / "b.csv");
  CHECK(testutil::read_text(dir / "a.csv") == testutil::read_text(dir / "b.csv"));
}

TEST_CASE("zero-pattern diagnostic") {
  CountArray a(3, 4);
  a << 0, 1, 0, 5,
       2, 1, 0, 5,
       8, 1, 0, 5;
  const auto d = zero_pattern_diagnostic(CountMatrix(a));
  REQUIRE(d.taxa.size() == 4);
  CHECK(d.taxa[0].zero_fraction == doctest::Approx(1.0 / 3.0));
  CHECK(*d.taxa[0].mean_log_nonzero == doctest::Approx(2.0 * std::log(2.0)));
  CHECK_FALSE(d.taxa[0].flagged);
  CHECK(d.taxa[1].zero_fraction == 0.0);
  CHECK_FALSE(d.taxa[2].mean_log_nonzero.has_value());
  CHECK_FALSE(d.taxa[2].flagged);
  CHECK(d.all_fit.points == 3);
  CHECK(d.flagged_fit.points == 0);
  CHECK_FALSE(d.flagged_fit.fitted);

  CountArray b(3, 2);
  b << 0, 20, 15, 20, 15, 20;
  const auto flagged = zero_pattern_diagnostic(CountMatrix(b));
  CHECK(flagged.taxa[0].flagged == (std::log(15.0) > 2.5));
  CHECK(flagged.taxa[1].flagged);
}

TEST_CASE("logistic curve fit recovers a known curve") {
  std::vector<double> x, y;
  for (int i = 0; i <= 20; ++i) {
    x.push_back(0.25 * i);
    y.push_back(sigmoid(1.5 - 0.8 * x.back()));
  }
  const LogisticFit f = fit_logistic_curve(x, y);
  CHECK(f.fitted);
  CHECK(f.intercept == doctest::Approx(1.5).epsilon(1e-6));
  CHECK(f.slope == doctest::Approx(-0.8).epsilon(1e-6));
  CHECK_FALSE(fit_logistic_curve({1.0, 2.0}, {0.5, 0.4}).fitted);
}

TEST_CASE("diagnostic on setting-1 data has a negative slope and round-trips") {
  SimulationSpec spec;
  spec.target_zero_fraction = 0.2;
  spec.seed = 21;
  const auto data = generate_counts(spec);
  const auto d = zero_pattern_diagnostic(data.counts);
  CHECK(d.all_fit.fitted);
  CHECK(d.all_fit.slope < 0.0);
  CHECK(d.flagged_fit.fitted);
  CHECK(d.flagged_fit.slope < 0.0);
  for (const auto& t : d.taxa)
    if (t.mean_log_nonzero) CHECK(t.flagged == (*t.mean_log_nonzero > 2.5));
  const auto dir = testutil::scratch_dir("diag");
  write_diagnostic_csv(d, dir / "d.csv");
  const auto back = read_diagnostic_csv(dir / "d.csv");
  REQUIRE(back.taxa.size() == d.taxa.size());
  CHECK(back.all_fit.slope == d.all_fit.slope);
  CHECK(back.flagged_fit.intercept == d.flagged_fit.intercept);
  CHECK(back.taxa[5].flagged == d.taxa[5].flagged);
}
