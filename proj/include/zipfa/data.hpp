#pragma once

#include <Eigen/Dense>

#include <compare>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace zipfa {

using Index = Eigen::Index;
using CountArray =
    Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

// Non-negative integer read counts, samples in rows and taxa in columns.
class CountMatrix {
 public:
  CountMatrix() = default;
  CountMatrix(CountArray values, std::vector<std::string> sample_ids,
              std::vector<std::string> taxon_ids);
  // Labels default to S1..Sn / T1..Tm.
  explicit CountMatrix(CountArray values);

  Index rows() const { return values_.rows(); }
  Index cols() const { return values_.cols(); }
  std::int64_t operator()(Index i, Index j) const { return values_(i, j); }

  const CountArray& values() const { return values_; }
  Eigen::MatrixXd as_double() const { return values_.cast<double>(); }
  const std::vector<std::string>& sample_ids() const { return sample_ids_; }
  const std::vector<std::string>& taxon_ids() const { return taxon_ids_; }

  CountMatrix with_value(Index i, Index j, std::int64_t v) const;

 private:
  CountArray values_;
  std::vector<std::string> sample_ids_;
  std::vector<std::string> taxon_ids_;
};

struct Cell {
  Index row = 0;
  Index col = 0;
  auto operator<=>(const Cell&) const = default;
};

// A validated, duplicate-free set of cells of an n x m matrix.
class HeldOutSet {
 public:
  HeldOutSet() = default;
  HeldOutSet(Index rows, Index cols, std::vector<Cell> cells);

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  std::size_t size() const { return cells_.size(); }
  bool empty() const { return cells_.empty(); }
  bool contains(Index i, Index j) const {
    return !flags_.empty() && flags_[static_cast<std::size_t>(i * cols_ + j)];
  }
  const std::vector<Cell>& cells() const { return cells_; }

  // Throws Partition if some row or column has every cell held out.
  void require_retention() const;

 private:
  Index rows_ = 0;
  Index cols_ = 0;
  std::vector<Cell> cells_;
  std::vector<char> flags_;
};

// Relative library sizes N_i; entries are positive and their median is 1.
class OffsetVector {
 public:
  OffsetVector() = default;
  explicit OffsetVector(Eigen::VectorXd values);
  static OffsetVector ones(Index n) { return OffsetVector(Eigen::VectorXd::Ones(n)); }

  Index size() const { return values_.size(); }
  double operator[](Index i) const { return values_[i]; }
  const Eigen::VectorXd& values() const { return values_; }

 private:
  Eigen::VectorXd values_;
};

CountMatrix load_counts(const std::filesystem::path& path);
CountMatrix parse_counts(const std::string& text);
void save_counts(const CountMatrix& counts, const std::filesystem::path& path);

OffsetVector relative_library_size(const CountMatrix& counts,
                                   const HeldOutSet* held_out = nullptr);

// Zeros and held-out cells are replaced by the mean of the column's nonzero
// observed entries, then the natural log is taken.
Eigen::MatrixXd impute_log(const CountMatrix& counts,
                           const HeldOutSet* held_out = nullptr);

inline constexpr int kPartitionRedraws = 100;

std::vector<std::vector<Cell>> partition_indices(Index rows, Index cols,
                                                 int folds,
                                                 std::uint64_t seed);

void save_mask(const std::vector<Cell>& cells,
               const std::filesystem::path& path);
std::vector<Cell> load_mask(const std::filesystem::path& path);

double median(std::vector<double> values);

}  // namespace zipfa
