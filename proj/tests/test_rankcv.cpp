#include "doctest.h"
#include "test_helpers.hpp"

#include "zipfa/error.hpp"
#include "zipfa/rankcv.hpp"
#include "zipfa/sim.hpp"

#include <cmath>
#include <random>

using namespace zipfa;

namespace {

// Poisson counts with a rank-1 log-rate and no inflation.
CountMatrix rank_one_counts(std::uint64_t seed, Index n = 30, Index m = 20) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.8, 1.6), v(0.8, 1.8);
  Eigen::VectorXd a(n), b(m);
  for (Index i = 0; i < n; ++i) a[i] = u(rng);
  for (Index j = 0; j < m; ++j) b[j] = v(rng);
  CountArray c(n, m);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < m; ++j)
      c(i, j) = std::poisson_distribution<std::int64_t>(std::exp(a[i] * b[j]))(rng);
  return CountMatrix(c);
}

}  // namespace

TEST_CASE("cv_fold_loglik basics") {
  const CountMatrix counts = rank_one_counts(1);
  CHECK(cv_fold_loglik(counts, 1, {}, {}) == 0.0);
  const std::vector<Cell> fold{{0, 0}, {5, 7}, {12, 3}};
  const double ll = cv_fold_loglik(counts, 1, fold, {});
  CHECK(std::isfinite(ll));
  CHECK(ll < 0.0);

  // the fold's value depends on the held-out counts, the fit does not
  const HeldOutSet held(30, 20, fold);
  const FactorModel fit = zipfa_fit(counts, 1, {}, &held);
  double expected = 0.0;
  for (const Cell& c : fold)
    expected += zip_log_density(static_cast<double>(counts(c.row, c.col)),
                                fit.scores.row(c.row).dot(fit.loadings.row(c.col)), fit.tau,
                                fit.offsets[c.row]);
  CHECK(ll == doctest::Approx(expected).epsilon(1e-12));
  const CountMatrix changed = counts.with_value(5, 7, counts(5, 7) + 40);
  const FactorModel fit2 = zipfa_fit(changed, 1, {}, &held);
  CHECK(fit2.scores == fit.scores);
  CHECK(cv_fold_loglik(changed, 1, fold, {}) != ll);
}

TEST_CASE("single-cell fold reference value") {
  // a = 0 with p = 1/2 and N*lambda = ln 2 gives ln 0.75
  CHECK(zip_log_density(0.0, std::log(std::log(2.0)), 0.0, 1.0) ==
        doctest::Approx(std::log(0.75)));
}

TEST_CASE("singleton rank set needs no fitting") {
  // every column is zero, so any fit would fail
  const CountMatrix counts(CountArray::Zero(6, 5));
  CvConfig config;
  config.ranks = {3};
  const CvResult r = select_rank(counts, config);
  CHECK(r.selected_rank == 3);
}

TEST_CASE("select_rank invariants and CSV round-trip") {
  const CountMatrix counts = rank_one_counts(4);
  CvConfig config;
  config.ranks = {1, 2, 3};
  config.folds = 3;
  config.repeats = 2;
  config.seed = 9;
  config.threads = 2;
  const CvResult r = select_rank(counts, config);
  REQUIRE(r.table.size() == 18);
  REQUIRE(r.totals.size() == 6);
  for (const CvTotal& t : r.totals) {
    double sum = 0.0;
    for (const CvCell& c : r.table)
      if (c.repeat == t.repeat && c.rank == t.rank && !c.dropped) sum += c.heldout_loglik;
    CHECK(t.total_loglik == sum);
    CHECK(t.selected == (t.rank == r.selected_rank));
  }
  // repeats use distinct fold assignments
  CHECK(r.table[0].heldout_loglik != r.table[9].heldout_loglik);

  config.threads = 1;
  const CvResult again = select_rank(counts, config);
  for (std::size_t k = 0; k < r.table.size(); ++k)
    CHECK(again.table[k].heldout_loglik == r.table[k].heldout_loglik);

  const auto dir = testutil::scratch_dir("cv");
  write_cv_csv(r, dir / "cv.csv");
  const CvResult back = read_cv_csv(dir / "cv.csv");
  CHECK(back.selected_rank == r.selected_rank);
  REQUIRE(back.table.size() == r.table.size());
  CHECK(back.table[7].heldout_loglik == r.table[7].heldout_loglik);
  CHECK(back.totals[4].total_loglik == r.totals[4].total_loglik);
}

TEST_CASE("rank-1 data prefers rank 1") {
  int wins_k1_over_k3 = 0, selected_one = 0;
  double sum1 = 0.0, sum3 = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const CountMatrix counts = rank_one_counts(100 + seed);
    CvConfig config;
    config.ranks = {1, 2, 3, 4};
    config.folds = 5;
    config.seed = seed;
    config.threads = 1;
    const CvResult r = select_rank(counts, config);
    if (r.selected_rank == 1) ++selected_one;
    sum1 += r.totals[0].total_loglik;
    sum3 += r.totals[2].total_loglik;
    if (r.totals[0].total_loglik > r.totals[2].total_loglik) ++wins_k1_over_k3;
  }
  CHECK(sum1 > sum3);
  CHECK(selected_one >= 8);
  MESSAGE("rank 1 beat rank 3 in " << wins_k1_over_k3 << " of 10");
}

TEST_CASE("CvConfig validation and rank ranges") {
  const CountMatrix counts = rank_one_counts(2, 6, 5);
  CvConfig config;
  CHECK_THROWS_AS(select_rank(counts, config), Error);
  config.ranks = {6};
  CHECK_THROWS_AS(select_rank(counts, config), Error);
  config.ranks = {1};
  config.folds = 1;
  CHECK_THROWS_AS(select_rank(counts, config), Error);

  CHECK(parse_rank_range("1:6") == std::vector<Index>{1, 2, 3, 4, 5, 6});
  CHECK(parse_rank_range("3:3") == std::vector<Index>{3});
  CHECK(parse_rank_range("2") == std::vector<Index>{2});
  CHECK_THROWS_AS(parse_rank_range("4:2"), Error);
  CHECK_THROWS_AS(parse_rank_range("0:2"), Error);
  CHECK_THROWS_AS(parse_rank_range("a:b"), Error);
}
