#include "zipfa/rankcv.hpp"

#include "parallel.hpp"
#include "text_util.hpp"
#include "zipfa/error.hpp"
#include "zipfa/seed.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

namespace zipfa {

void CvConfig::validate(Index rows, Index cols) const {
  if (ranks.empty()) fail(ErrorKind::Argument, "candidate rank set is empty");
  const Index limit = std::min(rows, cols);
  for (Index k : ranks)
    if (k < 1 || k > limit)
      fail(ErrorKind::Argument,
           "candidate rank " + std::to_string(k) + " outside 1.." + std::to_string(limit));
  if (!std::is_sorted(ranks.begin(), ranks.end()) ||
      std::adjacent_find(ranks.begin(), ranks.end()) != ranks.end())
    fail(ErrorKind::Argument, "candidate ranks must be strictly increasing");
  if (folds < 2) fail(ErrorKind::Argument, "folds must be >= 2");
  if (repeats < 1) fail(ErrorKind::Argument, "repeats must be >= 1");
  fit.validate();
}

double cv_fold_loglik(const CountMatrix& counts, Index rank, const std::vector<Cell>& fold,
                      const FitOptions& options) {
  if (fold.empty()) return 0.0;
  const HeldOutSet held(counts.rows(), counts.cols(), fold);
  const FactorModel model = zipfa_fit(counts, rank, options, &held);
  double total = 0.0;
  for (const Cell& c : held.cells()) {
    const double eta = model.scores.row(c.row).dot(model.loadings.row(c.col));
    total += zip_log_density(static_cast<double>(counts(c.row, c.col)), eta, model.tau,
                             model.offsets[c.row]);
  }
  if (!std::isfinite(total)) fail(ErrorKind::Numeric, "held-out log-likelihood is not finite");
  return total;
}

CvResult select_rank(const CountMatrix& counts, const CvConfig& config) {
  config.validate(counts.rows(), counts.cols());
  const int folds = config.folds;
  const auto n_ranks = static_cast<int>(config.ranks.size());

  std::vector<std::vector<std::vector<Cell>>> partitions;
  for (int t = 0; t < config.repeats; ++t)
    partitions.push_back(partition_indices(counts.rows(), counts.cols(), folds,
                                           derive_seed(config.seed, "cv-repeat", t)));

  CvResult result;
  for (int t = 0; t < config.repeats; ++t)
    for (int r = 0; r < n_ranks; ++r)
      for (int f = 0; f < folds; ++f) {
        CvCell cell;
        cell.repeat = t;
        cell.rank = config.ranks[static_cast<std::size_t>(r)];
        cell.fold = f;
        result.table.push_back(cell);
      }

  // A singleton candidate set needs no fitting.
  if (n_ranks == 1) {
    result.selected_rank = config.ranks.front();
    for (int t = 0; t < config.repeats; ++t)
      result.totals.push_back({t, result.selected_rank, 0.0, true, true});
    return result;
  }

  parallel_for(result.table.size(), config.threads, [&](std::size_t k) {
    CvCell& cell = result.table[k];
    const auto& fold = partitions[static_cast<std::size_t>(cell.repeat)]
                                 [static_cast<std::size_t>(cell.fold)];
    try {
      cell.heldout_loglik = cv_fold_loglik(counts, cell.rank, fold, config.fit);
      return;
    } catch (const Error& e) {
      cell.diagnostic = e.what();
    }
    cell.retried = true;
    FitOptions cold = config.fit;
    cold.warm_start = false;
    try {
      cell.heldout_loglik = cv_fold_loglik(counts, cell.rank, fold, cold);
      cell.diagnostic.clear();
    } catch (const Error& e) {
      cell.failed = true;
      cell.heldout_loglik = -std::numeric_limits<double>::infinity();
      cell.diagnostic = e.what();
    }
  });

  auto at = [&](int t, int r, int f) -> CvCell& {
    return result.table[static_cast<std::size_t>((t * n_ranks + r) * folds + f)];
  };

  // A rank whose folds all fail in some repeat is invalid everywhere.
  std::vector<bool> valid(static_cast<std::size_t>(n_ranks), true);
  for (int r = 0; r < n_ranks; ++r)
    for (int t = 0; t < config.repeats; ++t) {
      bool all_failed = true;
      for (int f = 0; f < folds; ++f) all_failed = all_failed && at(t, r, f).failed;
      if (all_failed) valid[static_cast<std::size_t>(r)] = false;
    }
  if (std::none_of(valid.begin(), valid.end(), [](bool v) { return v; }))
    fail(ErrorKind::Selection, "every candidate rank failed on all folds");

  // Folds failing for any valid rank are dropped for all ranks.
  for (int t = 0; t < config.repeats; ++t)
    for (int f = 0; f < folds; ++f) {
      bool drop = false;
      for (int r = 0; r < n_ranks; ++r)
        drop = drop || (valid[static_cast<std::size_t>(r)] && at(t, r, f).failed);
      if (drop)
        for (int r = 0; r < n_ranks; ++r) at(t, r, f).dropped = true;
    }

  bool any_kept = false;
  for (const CvCell& c : result.table) any_kept = any_kept || !c.dropped;
  if (!any_kept) fail(ErrorKind::Selection, "every fold failed for at least one valid rank");

  std::vector<double> grand(static_cast<std::size_t>(n_ranks), 0.0);
  for (int t = 0; t < config.repeats; ++t)
    for (int r = 0; r < n_ranks; ++r) {
      CvTotal total;
      total.repeat = t;
      total.rank = config.ranks[static_cast<std::size_t>(r)];
      total.valid = valid[static_cast<std::size_t>(r)];
      if (total.valid) {
        for (int f = 0; f < folds; ++f)
          if (!at(t, r, f).dropped) total.total_loglik += at(t, r, f).heldout_loglik;
      } else {
        total.total_loglik = -std::numeric_limits<double>::infinity();
      }
      grand[static_cast<std::size_t>(r)] += total.total_loglik;
      result.totals.push_back(total);
    }

  int best = -1;
  for (int r = 0; r < n_ranks; ++r) {
    if (!valid[static_cast<std::size_t>(r)]) continue;
    if (best < 0 || grand[static_cast<std::size_t>(r)] > grand[static_cast<std::size_t>(best)])
      best = r;
  }
  result.selected_rank = config.ranks[static_cast<std::size_t>(best)];
  for (auto& total : result.totals) total.selected = total.rank == result.selected_rank;
  return result;
}

std::vector<Index> parse_rank_range(const std::string& text) {
  auto parse = [&](std::string_view part) -> Index {
    try {
      return static_cast<Index>(text::parse_int(part));
    } catch (const Error&) {
      fail(ErrorKind::Argument, "invalid rank range '" + text + "'");
    }
  };
  const auto parts = text::split(text, ':');
  Index lo = 0, hi = 0;
  if (parts.size() == 1) {
    lo = hi = parse(parts[0]);
  } else if (parts.size() == 2) {
    lo = parse(parts[0]);
    hi = parse(parts[1]);
  } else {
    fail(ErrorKind::Argument, "invalid rank range '" + text + "' (expected a:b)");
  }
  if (lo < 1 || hi < lo) fail(ErrorKind::Argument, "invalid rank range '" + text + "'");
  std::vector<Index> ranks;
  for (Index k = lo; k <= hi; ++k) ranks.push_back(k);
  return ranks;
}

void write_cv_csv(const CvResult& result, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "repeat,rank,fold,heldout_loglik,status\n";
  for (const auto& c : result.table)
    out << c.repeat << ',' << c.rank << ',' << c.fold << ','
        << text::format_double(c.heldout_loglik) << ','
        << (c.failed ? "failed" : c.dropped ? "dropped" : "ok") << '\n';
  out << "\nrepeat,rank,total_loglik,selected\n";
  for (const auto& t : result.totals)
    out << t.repeat << ',' << t.rank << ',' << text::format_double(t.total_loglik) << ','
        << (t.selected ? 1 : 0) << '\n';
  text::write_file(path, out.str());
}

CvResult read_cv_csv(const std::filesystem::path& path) {
  const auto content = text::read_file(path);
  const auto blocks = text::line_blocks(content);
  if (blocks.size() != 2) fail(ErrorKind::Input, "CV file needs a table block and a totals block");
  CvResult result;
  for (std::size_t k = 1; k < blocks[0].size(); ++k) {
    const auto f = text::split(blocks[0][k], ',');
    if (f.size() != 5) fail(ErrorKind::Input, "CV table row needs 5 fields");
    CvCell c;
    c.repeat = static_cast<int>(text::parse_int(f[0]));
    c.rank = static_cast<Index>(text::parse_int(f[1]));
    c.fold = static_cast<int>(text::parse_int(f[2]));
    c.heldout_loglik = text::parse_double(f[3]);
    const auto status = text::trim(f[4]);
    c.failed = status == "failed";
    c.dropped = status == "dropped";
    result.table.push_back(c);
  }
  for (std::size_t k = 1; k < blocks[1].size(); ++k) {
    const auto f = text::split(blocks[1][k], ',');
    if (f.size() != 4) fail(ErrorKind::Input, "CV totals row needs 4 fields");
    CvTotal t;
    t.repeat = static_cast<int>(text::parse_int(f[0]));
    t.rank = static_cast<Index>(text::parse_int(f[1]));
    t.total_loglik = text::parse_double(f[2]);
    t.valid = std::isfinite(t.total_loglik);
    t.selected = text::parse_int(f[3]) != 0;
    if (t.selected) result.selected_rank = t.rank;
    result.totals.push_back(t);
  }
  return result;
}

}  // namespace zipfa
