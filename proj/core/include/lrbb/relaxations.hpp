#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lrbb/conic.hpp"
#include "lrbb/disjunctions.hpp"
#include "lrbb/instance.hpp"

namespace lrbb {

// ---------------------------------------------------------------------------
// 2x2 determinant minors
// ---------------------------------------------------------------------------

// Rows {i1 < i2} x columns {j1 < j2}; tag counts observed entries (1..4).
struct Minor {
  int i1 = 0, i2 = 0, j1 = 0, j2 = 0;
  int tag = 0;
  bool operator==(const Minor&) const = default;
};

struct MinorSet {
  std::vector<Minor> m4, m3, m2, m1;
};

// Full classification of the instance's 2x2 minors by observed-entry count.
// Cost is pruned through row-pair column unions, so sparse masks stay cheap.
MinorSet enumerate_minors(const CompletionInstance& inst);

enum class ShorPolicy { None, M4, M4PlusHalfM3, M4PlusM3 };

std::string to_string(ShorPolicy p);
ShorPolicy shor_policy_from_string(const std::string& s);

// Minors to strengthen with, per policy.  The half-M3 policy samples a
// reproducible random half of M3 (seed-mixed), as the experiments do.
std::vector<Minor> select_minors(const CompletionInstance& inst,
                                 ShorPolicy policy, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Relaxation builders
// ---------------------------------------------------------------------------
// All builders are pure and name their matrices for extraction:
//   X (n x m), Y (n x n), Theta (m x m), and where present U (n x k),
//   W (n x m), V (n x k(k+1)/2).  Objectives follow the instance mode:
//   Noisy:        (1/2 gamma) tr(Theta) + 1/2 sum_I (X_ij - A_ij)^2
//   BasisPursuit: tr(Theta) with X_ij = A_ij pinned (tr Theta >= |X|_F^2).

// Matrix perspective relaxation: PSD block [[Y, X], [X', Theta]] with
// 0 <= Y <= I and tr Y <= k.
conic::ConicProgram build_mprt(const CompletionInstance& inst);

// MPRT plus the factor block [[Y, U], [U', I_k]] and any disjunction-branch
// constraints (interval rows plus the aggregate piecewise cut per branch).
// With no branches this is an equivalent reformulation of build_mprt.
// `aggregate_cuts` off drops the per-branch piecewise rows and keeps only
// the interval rows -- a relaxation of every branch, used as a numerically
// benign fallback that still yields valid bounds.
conic::ConicProgram build_lifted(const CompletionInstance& inst,
                                 const std::vector<DisjunctionBranch>& cuts = {},
                                 bool aggregate_cuts = true);

// Rank-1 Shor strengthening: per minor, a 5x5 moment block over
// (1, X_i1j1, X_i1j2, X_i2j1, X_i2j2) sharing W / V moments across blocks;
// remaining entries get 2x2 moment blocks so W exists everywhere, and
// Theta_jj = sum_i W_ij.  Theta_{j1 j2} = sum_i V1 is imposed only when every
// row contributes a covering minor (else the equality would be unsound).
// The quadratic objective terms are re-expressed through W.
conic::ConicProgram build_shor_rank1(const CompletionInstance& inst,
                                     const std::vector<Minor>& minors);

// Rank-k Shor: X = sum_t X^t with a (k+1)x(k+1) moment block per entry
// (defining X^t, W^t, H^{t,t'}), per-minor per-slice 5x5 blocks, and
// Theta_jj = sum_i [sum_t W^t_ij + 2 sum_{t<t'} H^{t,t'}_ij].
// k = 1 delegates to build_shor_rank1 (the corollary degenerates to it).
conic::ConicProgram build_shor_rankk(const CompletionInstance& inst,
                                     const std::vector<Minor>& minors);

// Column-and-constraint-generation compromise: entries covered by a selected
// minor receive moment + slice blocks as in build_shor_rankk; every other
// entry only keeps W_ij >= X_ij^2 (second-order representable).  An empty
// minor list therefore yields the "MPRT with W" program.
conic::ConicProgram build_partial_shor(const CompletionInstance& inst,
                                       const std::vector<Minor>& minors);

// Appendix slice decomposition: per-slice blocks [[Y^t, X^t], [X^t', Th^t]]
// and [[Y^t, U_t], [U_t', 1]], tr Y^t <= 1, sum_t Y^t <= I, X = sum_t X^t.
// The Shor variant adds per-entry moment blocks across slices, per-minor
// per-slice 5x5 blocks, Theta^t_jj = sum_i W^t_ij, and sum_i H^{t,t'}_ij = 0.
// Per-slice symbols: X1..Xk, Y1..Yk, Theta1..Thetak; X is the aggregate.
enum class SliceVariant { Plain, Shor };

conic::ConicProgram build_slice_relaxation(const CompletionInstance& inst,
                                           SliceVariant variant,
                                           const std::vector<Minor>& minors = {});

// McCormick baseline: lifted base plus products V_{i,(j1,j2)} (columns in
// pair-rank order, see pair_index) with sum_i V_{i,(j,j)} = 1,
// sum_i V_{i,(j1,j2)} = 0, and the four-envelope rows over the box bounds.
// Bound rows on U entries are added only where the box is tighter than the
// [-1, 1] implied by the factor block.
conic::ConicProgram build_mccormick(const CompletionInstance& inst,
                                    const BoxState& box);

// Column index of the (j1 <= j2) pair inside the V symbol.
inline int pair_index(int k, int j1, int j2) {
  return j1 * k - j1 * (j1 - 1) / 2 + (j2 - j1);
}

}  // namespace lrbb
