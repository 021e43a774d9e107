#include "doctest.h"
#include "test_helpers.hpp"

#include "zipfa/zipfa.h"

#include <cmath>
#include <string>
#include <vector>

TEST_CASE("status names and errors") {
  CHECK(std::string(zipfa_status_name(ZIPFA_OK)) == "ok");
  zipfa_counts* counts = nullptr;
  CHECK(zipfa_counts_load("/nonexistent/counts.csv", &counts) == ZIPFA_ERR_INPUT);
  CHECK(counts == nullptr);
  CHECK(std::string(zipfa_last_error()).find("cannot open") != std::string::npos);
  CHECK(zipfa_counts_load(nullptr, &counts) == ZIPFA_ERR_ARGUMENT);
  const int64_t bad[] = {1, -2, 3, 4};
  CHECK(zipfa_counts_from_array(bad, 2, 2, &counts) == ZIPFA_ERR_INPUT);
}

TEST_CASE("simulate, fit, save and load through the C API") {
  const auto dir = testutil::scratch_dir("capi");
  zipfa_sim_options sim;
  zipfa_sim_options_init(&sim);
  sim.zero_pct = 0.2;
  sim.seed = 12;
  sim.n = 40;
  sim.m = 24;
  zipfa_dataset* data = nullptr;
  REQUIRE(zipfa_simulate(&sim, &data) == ZIPFA_OK);
  CHECK(zipfa_dataset_has_tau(data) == 1);
  CHECK(std::abs(zipfa_dataset_realized_inflation(data) - 0.2) < 0.05);
  const zipfa_counts* counts = zipfa_dataset_counts(data);
  CHECK(zipfa_counts_rows(counts) == 40);
  CHECK(zipfa_counts_cols(counts) == 24);
  CHECK(zipfa_counts_value(counts, 99, 0) == -1);
  REQUIRE(zipfa_dataset_write(data, (dir / "d").c_str()) == ZIPFA_OK);

  zipfa_fit_options opts;
  zipfa_fit_options_init(&opts);
  CHECK(opts.max_iter == 100);
  CHECK(opts.tol == 1e-3);
  zipfa_model* model = nullptr;
  CHECK(zipfa_fit(counts, 0, &opts, &model) == ZIPFA_ERR_ARGUMENT);
  REQUIRE(zipfa_fit(counts, 2, &opts, &model) == ZIPFA_OK);
  CHECK(zipfa_model_rank(model) == 2);
  CHECK(zipfa_model_converged(model) == 1);
  std::vector<double> u(40 * 2), v(24 * 2);
  CHECK(zipfa_model_scores(model, u.data(), u.size()) == ZIPFA_OK);
  CHECK(zipfa_model_loadings(model, v.data(), v.size()) == ZIPFA_OK);
  CHECK(zipfa_model_scores(model, u.data(), 3) == ZIPFA_ERR_ARGUMENT);
  REQUIRE(zipfa_model_save(model, (dir / "m.json").c_str()) == ZIPFA_OK);

  zipfa_model* loaded = nullptr;
  REQUIRE(zipfa_model_load((dir / "m.json").c_str(), &loaded) == ZIPFA_OK);
  CHECK(zipfa_model_tau(loaded) == zipfa_model_tau(model));
  CHECK(zipfa_model_loglik(loaded) == zipfa_model_loglik(model));
  std::vector<double> u2(u.size());
  zipfa_model_scores(loaded, u2.data(), u2.size());
  CHECK(u2 == u);

  zipfa_counts* reread = nullptr;
  REQUIRE(zipfa_counts_load((dir / "d" / "counts.csv").c_str(), &reread) == ZIPFA_OK);
  CHECK(zipfa_counts_value(reread, 7, 5) == zipfa_counts_value(counts, 7, 5));

  const std::string diag = (dir / "diag.csv").string();
  CHECK(zipfa_diagnose(reread, diag.c_str()) == ZIPFA_OK);

  zipfa_cv_options cv;
  zipfa_cv_options_init(&cv);
  cv.rank_min = 2;
  cv.rank_max = 2;
  zipfa_cv_result* result = nullptr;
  REQUIRE(zipfa_cv_run(reread, &cv, &result) == ZIPFA_OK);
  CHECK(zipfa_cv_selected_rank(result) == 2);
  CHECK(zipfa_cv_write_csv(result, (dir / "cv.csv").c_str()) == ZIPFA_OK);
  zipfa_cv_free(result);
  cv.rank_min = 3;
  cv.rank_max = 1;
  CHECK(zipfa_cv_run(reread, &cv, &result) == ZIPFA_ERR_ARGUMENT);

  zipfa_model_free(loaded);
  zipfa_model_free(model);
  zipfa_counts_free(reread);
  zipfa_dataset_free(data);
}

TEST_CASE("simulation domain errors map to calibration status") {
  zipfa_sim_options sim;
  zipfa_sim_options_init(&sim);
  sim.setting = "5";
  sim.zero_pct = 0.95;
  zipfa_dataset* data = nullptr;
  CHECK(zipfa_simulate(&sim, &data) == ZIPFA_ERR_CALIBRATION);
  sim.setting = "9";
  sim.zero_pct = 0.2;
  CHECK(zipfa_simulate(&sim, &data) == ZIPFA_ERR_ARGUMENT);
}

TEST_CASE("benchmark through the C API") {
  const auto dir = testutil::scratch_dir("capi_bench");
  zipfa_benchmark_options b;
  zipfa_benchmark_options_init(&b);
  b.zero_pcts = "0.2";
  b.methods = "logsvd";
  b.replicates = 2;
  size_t n = 0;
  REQUIRE(zipfa_benchmark_run(&b, (dir / "b.csv").c_str(), &n) == ZIPFA_OK);
  CHECK(n == 2);
  CHECK(std::filesystem::exists(dir / "b.csv.meta.json"));
  b.methods = "zipfa,,logsvd";
  CHECK(zipfa_benchmark_run(&b, (dir / "c.csv").c_str(), &n) == ZIPFA_ERR_ARGUMENT);
}
