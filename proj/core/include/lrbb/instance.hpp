#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lrbb/types.hpp"

namespace lrbb {

enum class InstanceMode { BasisPursuit, Noisy };

std::string to_string(InstanceMode mode);
InstanceMode instance_mode_from_string(const std::string& s);

// Ordered set of observed index pairs with cached row/column slices.
// Iteration order is deterministic (insertion order); slices are sorted.
class IndexSet {
 public:
  IndexSet() = default;
  IndexSet(int rows, int cols) : rows_(rows), cols_(cols) {}

  void reset(int rows, int cols);
  // Returns false if the pair was already present.
  bool insert(int i, int j);
  bool erase(int i, int j);
  bool contains(int i, int j) const;

  int size() const { return static_cast<int>(pairs_.size()); }
  int rows() const { return rows_; }
  int cols() const { return cols_; }

  // Insertion-ordered pairs (compacted lazily after erase).
  const std::vector<std::pair<int, int>>& pairs() const;
  // Column indices observed in row i / row indices observed in column j,
  // each sorted ascending.
  const std::vector<int>& row_slice(int i) const;
  const std::vector<int>& col_slice(int j) const;

  bool covers_all_rows_and_cols() const;

 private:
  int rows_ = 0, cols_ = 0;
  mutable std::vector<std::pair<int, int>> pairs_;
  std::unordered_map<std::int64_t, int> present_;  // key -> count epoch
  std::vector<std::vector<int>> by_row_, by_col_;
  mutable bool pairs_dirty_ = false;

  std::int64_t key(int i, int j) const {
    return static_cast<std::int64_t>(i) * cols_ + j;
  }
};

// Problem data for low-rank completion / basis pursuit.  Immutable by
// convention after construction; safe to share across threads.
struct CompletionInstance {
  int n = 0, m = 0, k = 1;
  double gamma = 1.0;
  InstanceMode mode = InstanceMode::Noisy;
  IndexSet mask;
  std::unordered_map<std::int64_t, double> values;  // key = i*m + j
  std::optional<Matrix> ground_truth;               // for MSE reporting only

  double observed(int i, int j) const {
    auto it = values.find(static_cast<std::int64_t>(i) * m + j);
    if (it == values.end())
      throw std::out_of_range("entry (" + std::to_string(i) + "," +
                              std::to_string(j) + ") is not observed");
    return it->second;
  }
  bool is_observed(int i, int j) const { return mask.contains(i, j); }

  void set_entry(int i, int j, double v) {
    mask.insert(i, j);
    values[static_cast<std::int64_t>(i) * m + j] = v;
  }

  // Throws std::invalid_argument on any violated structural invariant.
  void validate() const;
};

// Synthetic generation per the experimental protocol: A_full = U·V + eps·Z
// with standard-normal factors, sampled mask covering every row and column.
// The factor draws are made at a fixed canonical size (kMaxSyntheticDim) so
// that instances of different (n, m) under the same seed share the top-left
// data submatrix.
inline constexpr int kMaxSyntheticDim = 256;

CompletionInstance generate_instance(int n, int m, int k_true, double gamma,
                                     double noise_eps, int num_observed,
                                     std::uint64_t seed);

// Objective of the original (unrelaxed) problem.
//   Noisy:        (1/2γ)·||X||_F² + ½·Σ_observed (X_ij − A_ij)²
//   BasisPursuit: ||X||_F² when all observed entries match within bp_tol,
//                 +infinity otherwise.
double objective_value(const CompletionInstance& inst, const Matrix& X,
                       double bp_tol = 1e-6);

// Max |X_ij − A_ij| over observed entries (the basis-pursuit residual).
double observed_residual(const CompletionInstance& inst, const Matrix& X);

// (1/nm)·||X − ground_truth||_F²; throws when ground truth is absent.
double mse_all_entries(const CompletionInstance& inst, const Matrix& X);

void save_instance(const CompletionInstance& inst, const std::string& path);
CompletionInstance load_instance(const std::string& path);

// Top-left restriction: keeps data/ground truth entries with i < n2, j < m2.
// The mask is re-sampled by the caller if a particular |I| is needed; here
// observed entries falling outside the corner are dropped.
CompletionInstance restrict_top_left(const CompletionInstance& inst, int n2,
                                     int m2);

// Observed-entry budget formulas, rounding up.  n is the (square) dimension;
// logs are base 10.
enum class EntryRate { KN, KNLogN, KN65LogN, KN15, KN2 };

std::string to_string(EntryRate r);
EntryRate entry_rate_from_string(const std::string& s);
int observed_count(EntryRate rate, double p, int k, int n);

}  // namespace lrbb
