#pragma once

#include "zipfa/data.hpp"
#include "zipfa/factorize.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace zipfa {

struct CvConfig {
  std::vector<Index> ranks;
  int folds = 5;
  int repeats = 1;
  std::uint64_t seed = 0;
  FitOptions fit;
  int threads = 0;  // 0 = hardware concurrency

  void validate(Index rows, Index cols) const;
};

struct CvCell {
  int repeat = 0;
  Index rank = 0;
  int fold = 0;
  double heldout_loglik = 0.0;  // -inf when the fit failed
  bool failed = false;
  bool retried = false;
  bool dropped = false;  // excluded from totals because the fold failed for another rank
  std::string diagnostic;
};

struct CvTotal {
  int repeat = 0;
  Index rank = 0;
  double total_loglik = 0.0;
  bool valid = true;
  bool selected = false;  // rank equals the overall selection
};

struct CvResult {
  std::vector<CvCell> table;    // ordered by (repeat, rank, fold)
  std::vector<CvTotal> totals;  // ordered by (repeat, rank)
  Index selected_rank = 0;
};

// Held-out log-likelihood of `fold` under a rank-`rank` fit that never sees
// those cells. Offsets come from the remaining cells of each row.
double cv_fold_loglik(const CountMatrix& counts, Index rank, const std::vector<Cell>& fold,
                      const FitOptions& options);

CvResult select_rank(const CountMatrix& counts, const CvConfig& config);

// Parses "a:b" or a single integer into an inclusive ascending list.
std::vector<Index> parse_rank_range(const std::string& text);

void write_cv_csv(const CvResult& result, const std::filesystem::path& path);
CvResult read_cv_csv(const std::filesystem::path& path);

}  // namespace zipfa
