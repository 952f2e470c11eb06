#pragma once

#include <optional>
#include <tuple>
#include <utility>
#include <vector>

#include "lrbb/instance.hpp"

namespace lrbb {

// ---------------------------------------------------------------------------
// Determinant-minor presolve for basis pursuit
// ---------------------------------------------------------------------------
// A rank-k matrix has every (k+1)x(k+1) minor singular.  A minor with one
// unknown entry therefore determines it (affine det expansion); a minor whose
// unknowns share a row or column yields a linear equality.  The closure of
// the fill rule augments the observed index set I into I^k.

// One derived tie: sum_t coeff_t * X_{i_t, j_t} + constant = 0, where every
// (i, j) referenced is unobserved in the augmented index set and the constant
// collects the observed entries' contribution.
struct LinearEquality {
  struct Term {
    int i = 0, j = 0;
    double coeff = 0.0;
  };
  std::vector<Term> terms;
  double constant = 0.0;
};

struct PresolveResult {
  IndexSet index_set;  // I^k: the input mask plus every deduced entry
  std::vector<std::tuple<int, int, double>> fills;  // deduced values, in order
  std::vector<LinearEquality> equalities;           // rank-1 closure ties
  bool fully_presolved = false;

  int fill_count() const { return static_cast<int>(fills.size()); }
};

// Thrown when two minors force different values for the same entry (beyond
// 1e-6 relative): the data is not rank-k consistent, i.e. a noisy instance
// was mislabeled as basis pursuit.
struct PresolveContradiction : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Solves det(minor) = 0 for the single unknown entry, marked by NaN.
// Returns nothing when the unknown's cofactor is negligible relative to the
// minor's scale (the minor then carries no information about the entry).
// Throws std::invalid_argument unless the matrix is square with exactly one
// NaN entry.
std::optional<double> solve_minor_missing_entry(const Matrix& minor);

// Rank-1 closure over 2x2 minors: fills every entry a pivot determines, to a
// fixed point, then derives the non-redundant same-row/column equalities
// among the entries that remain unknown (union-find keeps one spanning tie
// per linked group).  Requires BasisPursuit mode and k = 1.  Throws
// PresolveContradiction on rank-inconsistent data.
PresolveResult presolve_rank1(const CompletionInstance& inst);

// Rank-k closure via the accelerated column-set scan: for each column k-set
// C' with more than k fully observed rows, each outside column j with at
// least k of those rows observed at j completes the remaining rows' (i, j)
// entries from a (k+1)x(k+1) minor.  Loops to a fixed point.  Requires
// BasisPursuit mode; equalities are left to derive_minor_equalities.
PresolveResult presolve_rankk(const CompletionInstance& inst);

// Linear equalities from every (k+1)x(k+1) minor whose unknown entries are
// confined to one row or one column: the determinant expansion along that
// line is affine with fully observed cofactors.  Consecutive-window
// generation per (line, k-set) keeps the list spanning yet small; exact
// duplicates are removed by normalized signature.
std::vector<LinearEquality> derive_minor_equalities(
    const CompletionInstance& inst);

// Applies fills on top of an instance (mode, rank, gamma, ground truth kept).
CompletionInstance apply_presolve(const CompletionInstance& inst,
                                  const PresolveResult& result);

// ---------------------------------------------------------------------------
// Mask-structure analysis
// ---------------------------------------------------------------------------
// A rank-1 closure is a disjoint union of fully observed rectangles
// R_1 x C_1, R_2 x C_2, ... (plus rows/columns with no observations at all).

struct BlockPartition {
  // Parallel row/column groups of the fully observed rectangles.
  std::vector<std::pair<std::vector<int>, std::vector<int>>> blocks;
  std::vector<int> empty_rows, empty_cols;  // no observations
};

// The partition when the index set is block-rectangular (any two rows have
// identical or disjoint observed column sets, ditto columns, and each group's
// rectangle is fully observed); nothing otherwise.
std::optional<BlockPartition> check_block_rectangular(const IndexSet& mask);

}  // namespace lrbb
