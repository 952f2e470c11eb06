#pragma once

#include <array>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "lrbb/types.hpp"

namespace lrbb {

// ---------------------------------------------------------------------------
// Piecewise-linear upper approximation of u^2 on [-1, 1]
// ---------------------------------------------------------------------------

// One chord of u^2 over [lo, up]: f(u) = slope*u + intercept.  Chords of a
// convex function dominate it on their interval and touch at the endpoints.
struct Piece {
  double lo = 0, up = 0;
  double slope = 0, intercept = 0;
  double value(double u) const { return slope * u + intercept; }
};

struct PiecewiseBound {
  std::vector<double> breakpoints;  // b0 < ... < bq spanning [-1, 1]
  std::vector<Piece> pieces;        // q chords

  int num_pieces() const { return static_cast<int>(pieces.size()); }
  // Index of a piece whose interval contains u (clamped into [-1,1]).
  int covering_piece(double u) const;
};

// Breakpoint schedules anchored at the relaxation value u0:
//   q=2: {-1, u0, 1}    q=3: {-1, -|u0|, |u0|, 1}
//   q=4: {-1, -|u0|, 0, |u0|, 1}
// u0 is clamped to +/-(1 - 1e-9) to keep intervals nondegenerate at the ends.
PiecewiseBound make_piecewise(double u0, int q);

// Pieces-per-column default: fine-grained disjunctions pay off only on
// small rank-one problems.
inline int default_pieces(int k, int n) { return (k == 1 && n <= 50) ? 4 : 2; }

// ---------------------------------------------------------------------------
// Eigenvector disjunctions
// ---------------------------------------------------------------------------

// Most negative eigenpair of UU' - Y when it certifies infeasibility:
// returns the unit eigenvector and its eigenvalue when lambda_min < -eps,
// nothing once the point is eps-feasible.  Deterministic sign convention:
// the first component larger than 1e-12 in magnitude is made positive.
std::optional<std::pair<Vector, double>> find_violating_eigenvector(
    const Matrix& Y, const Matrix& U, double eps);

// A disjunction anchored at (U_hat, x): per column j, the q chords of
// (U_j'x)^2 built around u0_j = U_hat_j'x.  Branch z imposes, for each j,
//   b_{z_j} <= U_j'x <= b_{z_j + 1}
// and the aggregate cut  x'Yx <= sum_j f_{z_j}(U_j'x).
struct DisjunctionCut {
  Matrix U_hat;  // n x k anchor
  Vector x;      // unit separating direction
  int q = 2;
  std::vector<PiecewiseBound> columns;  // k schedules

  int k() const { return static_cast<int>(columns.size()); }
  int num_branches() const;
  // Mixed-radix decoding of a branch index into per-column piece choices.
  std::vector<int> branch_pieces(int index) const;
};

// Builds the cut; throws std::invalid_argument unless x'(U_hat U_hat' - Y)x
// is strictly negative (no separation, so no valid disjunction).
DisjunctionCut make_cut(const Matrix& U_hat, const Matrix& Y_hat,
                        const Vector& x, int q);

struct DisjunctionBranch {
  std::shared_ptr<const DisjunctionCut> cut;
  std::vector<int> z;  // piece index per column
};

// Whether (U, Y) satisfies branch z's interval and aggregate constraints
// within tol.  Used by coverage/separation tests and incumbent checks.
bool branch_satisfied(const DisjunctionCut& cut, const std::vector<int>& z,
                      const Matrix& U, const Matrix& Y, double tol = 1e-9);

// ---------------------------------------------------------------------------
// McCormick baseline
// ---------------------------------------------------------------------------

// Per-entry box bounds on U, refined by branching.
struct BoxState {
  Matrix lower, upper;  // n x k
};

BoxState full_box(int n, int k);

// cv*v + cx*x + cy*y <= rhs
struct AffineIneq3 {
  double cv = 0, cx = 0, cy = 0, rhs = 0;
};

// The four inequalities whose intersection is the convex hull of
// {(v,x,y): v = xy} over [xl,xu] x [yl,yu].
std::array<AffineIneq3, 4> mccormick_envelope(double xl, double xu, double yl,
                                              double yu);

// Splits entry (i, j) of the box at split_point (strictly inside).
std::pair<BoxState, BoxState> make_mccormick_children(const BoxState& box,
                                                      int i, int j,
                                                      double split_point);

}  // namespace lrbb
