#include "zipfa/data.hpp"

#include "zipfa/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace zipfa {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Input: return "input error";
    case ErrorKind::Argument: return "argument error";
    case ErrorKind::DegenerateColumn: return "degenerate column";
    case ErrorKind::Numeric: return "numeric error";
    case ErrorKind::NoConvergence: return "no convergence";
    case ErrorKind::Calibration: return "calibration error";
    case ErrorKind::Partition: return "partition infeasible";
    case ErrorKind::Selection: return "selection error";
    case ErrorKind::Io: return "i/o error";
  }
  return "error";
}

namespace {

std::vector<std::string> default_labels(char prefix, Index n) {
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i + 1));
  return out;
}

std::vector<std::string_view> split(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Input, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

CountMatrix::CountMatrix(CountArray values, std::vector<std::string> sample_ids,
                         std::vector<std::string> taxon_ids)
    : values_(std::move(values)),
      sample_ids_(std::move(sample_ids)),
      taxon_ids_(std::move(taxon_ids)) {
  if (values_.rows() < 2 || values_.cols() < 2)
    fail(ErrorKind::Input, "count matrix must have at least 2 rows and 2 columns");
  if (static_cast<Index>(sample_ids_.size()) != values_.rows() ||
      static_cast<Index>(taxon_ids_.size()) != values_.cols())
    fail(ErrorKind::Input, "label count does not match matrix shape");
  if ((values_.array() < 0).any())
    fail(ErrorKind::Input, "count matrix contains negative entries");
}

CountMatrix::CountMatrix(CountArray values)
    : CountMatrix(values, default_labels('S', values.rows()),
                  default_labels('T', values.cols())) {}

CountMatrix CountMatrix::with_value(Index i, Index j, std::int64_t v) const {
  CountArray copy = values_;
  copy(i, j) = v;
  return CountMatrix(std::move(copy), sample_ids_, taxon_ids_);
}

HeldOutSet::HeldOutSet(Index rows, Index cols, std::vector<Cell> cells)
    : rows_(rows), cols_(cols), cells_(std::move(cells)) {
  flags_.assign(static_cast<std::size_t>(rows * cols), 0);
  for (const Cell& c : cells_) {
    if (c.row < 0 || c.row >= rows || c.col < 0 || c.col >= cols)
      fail(ErrorKind::Argument, "held-out cell (" + std::to_string(c.row) + "," +
                                    std::to_string(c.col) + ") out of range");
    auto& f = flags_[static_cast<std::size_t>(c.row * cols + c.col)];
    if (f)
      fail(ErrorKind::Argument, "duplicate held-out cell (" + std::to_string(c.row) +
                                    "," + std::to_string(c.col) + ")");
    f = 1;
  }
  std::sort(cells_.begin(), cells_.end());
}

void HeldOutSet::require_retention() const {
  std::vector<Index> per_row(static_cast<std::size_t>(rows_), 0);
  std::vector<Index> per_col(static_cast<std::size_t>(cols_), 0);
  for (const Cell& c : cells_) {
    ++per_row[static_cast<std::size_t>(c.row)];
    ++per_col[static_cast<std::size_t>(c.col)];
  }
  for (Index i = 0; i < rows_; ++i)
    if (per_row[static_cast<std::size_t>(i)] == cols_)
      fail(ErrorKind::Partition, "row " + std::to_string(i) + " is entirely held out");
  for (Index j = 0; j < cols_; ++j)
    if (per_col[static_cast<std::size_t>(j)] == rows_)
      fail(ErrorKind::Partition, "column " + std::to_string(j) + " is entirely held out");
}

OffsetVector::OffsetVector(Eigen::VectorXd values) : values_(std::move(values)) {
  if ((values_.array() <= 0).any() || !values_.allFinite())
    fail(ErrorKind::Argument, "offsets must be positive and finite");
}

double median(std::vector<double> values) {
  if (values.empty()) fail(ErrorKind::Argument, "median of empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

CountMatrix parse_counts(const std::string& text) {
  std::vector<std::string_view> lines;
  {
    std::string_view all(text);
    if (all.size() >= 3 && all.substr(0, 3) == "\xEF\xBB\xBF") all.remove_prefix(3);
    for (auto line : split(all, '\n')) {
      line = trim(line);
      if (!line.empty()) lines.push_back(line);
    }
  }
  if (lines.empty()) fail(ErrorKind::Input, "empty count file");
  const char delim = lines[0].find('\t') != std::string_view::npos ? '\t' : ',';

  auto header = split(lines[0], delim);
  if (header.size() < 2) fail(ErrorKind::Input, "header names no taxa");
  std::vector<std::string> taxa;
  for (std::size_t k = 1; k < header.size(); ++k) taxa.emplace_back(trim(header[k]));
  const Index m = static_cast<Index>(taxa.size());
  const Index n = static_cast<Index>(lines.size()) - 1;
  if (n == 0) fail(ErrorKind::Input, "count file has no sample rows");

  CountArray values(n, m);
  std::vector<std::string> samples;
  samples.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    auto fields = split(lines[static_cast<std::size_t>(i + 1)], delim);
    const std::string where = "line " + std::to_string(i + 2);
    if (static_cast<Index>(fields.size()) != m + 1)
      fail(ErrorKind::Input, where + ": expected " + std::to_string(m + 1) +
                                 " fields, found " + std::to_string(fields.size()));
    samples.emplace_back(trim(fields[0]));
    for (Index j = 0; j < m; ++j) {
      auto cell = trim(fields[static_cast<std::size_t>(j + 1)]);
      std::int64_t v = 0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() || v < 0)
        fail(ErrorKind::Input, where + " (sample '" + samples.back() + "'), column '" +
                                   taxa[static_cast<std::size_t>(j)] +
                                   "': invalid count '" + std::string(cell) + "'");
      values(i, j) = v;
    }
  }
  return CountMatrix(std::move(values), std::move(samples), std::move(taxa));
}

CountMatrix load_counts(const std::filesystem::path& path) {
  return parse_counts(read_file(path));
}

void save_counts(const CountMatrix& counts, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << "sample_id";
  for (const auto& t : counts.taxon_ids()) out << ',' << t;
  out << '\n';
  for (Index i = 0; i < counts.rows(); ++i) {
    out << counts.sample_ids()[static_cast<std::size_t>(i)];
    for (Index j = 0; j < counts.cols(); ++j) out << ',' << counts(i, j);
    out << '\n';
  }
  if (!out) fail(ErrorKind::Io, "failed writing " + path.string());
}

OffsetVector relative_library_size(const CountMatrix& counts,
                                   const HeldOutSet* held_out) {
  const Index n = counts.rows();
  std::vector<double> sums(static_cast<std::size_t>(n), 0.0);
  for (Index i = 0; i < n; ++i) {
    double s = 0.0;
    for (Index j = 0; j < counts.cols(); ++j)
      if (!held_out || !held_out->contains(i, j)) s += static_cast<double>(counts(i, j));
    if (s <= 0.0)
      fail(ErrorKind::Input, "sample '" + counts.sample_ids()[static_cast<std::size_t>(i)] +
                                 "' has no reads");
    sums[static_cast<std::size_t>(i)] = s;
  }
  const double med = median(sums);
  Eigen::VectorXd out(n);
  for (Index i = 0; i < n; ++i) out[i] = sums[static_cast<std::size_t>(i)] / med;
  return OffsetVector(std::move(out));
}

Eigen::MatrixXd impute_log(const CountMatrix& counts, const HeldOutSet* held_out) {
  Eigen::MatrixXd out(counts.rows(), counts.cols());
  for (Index j = 0; j < counts.cols(); ++j) {
    double sum = 0.0;
    Index kept = 0;
    for (Index i = 0; i < counts.rows(); ++i) {
      if (held_out && held_out->contains(i, j)) continue;
      if (counts(i, j) == 0) continue;
      sum += static_cast<double>(counts(i, j));
      ++kept;
    }
    if (kept == 0)
      fail(ErrorKind::DegenerateColumn,
           "taxon '" + counts.taxon_ids()[static_cast<std::size_t>(j)] +
               "' has no nonzero observed counts");
    const double fill = sum / static_cast<double>(kept);
    for (Index i = 0; i < counts.rows(); ++i) {
      const bool hidden = held_out && held_out->contains(i, j);
      const double v = (hidden || counts(i, j) == 0) ? fill
                                                     : static_cast<double>(counts(i, j));
      out(i, j) = std::log(v);
    }
  }
  return out;
}

std::vector<std::vector<Cell>> partition_indices(Index rows, Index cols, int folds,
                                                 std::uint64_t seed) {
  if (rows < 1 || cols < 1) fail(ErrorKind::Argument, "empty matrix shape");
  const Index total = rows * cols;
  if (folds < 2 || folds > total)
    fail(ErrorKind::Argument, "fold count must be in [2, n*m]");

  std::mt19937_64 rng(seed);
  std::vector<Index> order(static_cast<std::size_t>(total));
  std::string blocking;
  for (int attempt = 0; attempt <= kPartitionRedraws; ++attempt) {
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<std::vector<Cell>> parts(static_cast<std::size_t>(folds));
    const Index base = total / folds;
    const Index extra = total % folds;
    std::size_t cursor = 0;
    for (int f = 0; f < folds; ++f) {
      const Index size = base + (f < extra ? 1 : 0);
      auto& part = parts[static_cast<std::size_t>(f)];
      part.reserve(static_cast<std::size_t>(size));
      for (Index k = 0; k < size; ++k, ++cursor) {
        const Index flat = order[cursor];
        part.push_back({flat / cols, flat % cols});
      }
      std::sort(part.begin(), part.end());
    }

    blocking.clear();
    for (std::size_t f = 0; f < parts.size() && blocking.empty(); ++f) {
      try {
        HeldOutSet(rows, cols, parts[f]).require_retention();
      } catch (const Error& e) {
        blocking = e.what();
      }
    }
    if (blocking.empty()) return parts;
  }
  fail(ErrorKind::Partition, "no feasible partition after " +
                                 std::to_string(kPartitionRedraws) +
                                 " redraws: " + blocking);
}

void save_mask(const std::vector<Cell>& cells, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << "row_index,col_index\n";
  for (const Cell& c : cells) out << c.row << ',' << c.col << '\n';
  if (!out) fail(ErrorKind::Io, "failed writing " + path.string());
}

std::vector<Cell> load_mask(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::vector<Cell> cells;
  bool header = true;
  std::size_t line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.find("row_index") != std::string_view::npos) continue;
    }
    auto f = split(line, ',');
    Index r = -1, c = -1;
    bool ok = f.size() == 2;
    if (ok) {
      auto a = trim(f[0]), b = trim(f[1]);
      ok = std::from_chars(a.data(), a.data() + a.size(), r).ec == std::errc() &&
           std::from_chars(b.data(), b.data() + b.size(), c).ec == std::errc() &&
           r >= 0 && c >= 0;
    }
    if (!ok) fail(ErrorKind::Input, path.string() + " line " + std::to_string(line_no) +
                                        ": expected row_index,col_index");
    cells.push_back({r, c});
  }
  return cells;
}

}  // namespace zipfa
