#pragma once

#include <optional>
#include <vector>

#include "lrbb/conic.hpp"
#include "lrbb/disjunctions.hpp"
#include "lrbb/instance.hpp"
#include "lrbb/types.hpp"

namespace lrbb {

// Alternating minimization over the factorization X = U·V.  Both subproblems
// are regularized least squares:
//   V-step: min_V  1/2 sum_I ((UV)_ij - A_ij)^2 + (1/2 gamma) |UV|_F^2
//   U-step: the same objective over U with V fixed,
// each solved exactly through per-column (per-row) normal equations with the
// Gram matrix  U_Omega' U_Omega + (1/gamma) U'U.  At a branch-and-bound node
// the U-step instead becomes a conic program restricted to the node's
// polyhedron plus a second-order-cone relaxation of U'U <= I.

// A rank-<=k candidate with its factors.  X is the cached product U*V and
// objective the instance objective at X, so both are recomputable from the
// factors alone (basis-pursuit infeasible candidates carry +infinity).
struct FactorPair {
  Matrix U;  // n x k
  Matrix V;  // k x m
  Matrix X;  // U * V
  double objective = 0.0;
};

// Linear constraints on U accumulated from the disjunction branches between
// the root and a node: each branch contributes, per column j, the interval
//   lo <= x' U_j <= hi
// of its chosen piece.  The aggregate piecewise cut couples U with Y and is
// deliberately left out -- only constraints affine in U alone restrict the
// heuristic.
struct UInterval {
  Vector x;  // length n
  int column = 0;
  double lo = 0, hi = 0;
};

struct NodePolyhedron {
  std::vector<UInterval> intervals;

  void add_branch(const DisjunctionBranch& branch);
  bool satisfied(const Matrix& U, double tol = 1e-9) const;
  bool empty() const { return intervals.empty(); }
};

// Per-run diagnostics: half_step_objectives records the penalized objective
// after every V- and U-step in order, ridge_solves counts normal-equation
// (or epigraph-factorization) systems that needed the 1e-12 jitter.
struct AltminReport {
  int iterations = 0;
  bool converged = false;
  int ridge_solves = 0;
  std::vector<double> half_step_objectives;
};

// U-factor of the compact SVD of the zero-filled observation matrix; columns
// are orthonormal.  When the numerical rank falls short of k the remaining
// columns are an arbitrary orthonormal complement.
Matrix initialize_U(const CompletionInstance& inst);

// Unconstrained alternation from U0 until the relative objective decrease
// drops below tol or max_iters full iterations pass.  The returned factors
// are re-orthonormalized through a compact SVD of the converged product, so
// U has orthonormal columns.
FactorPair altmin(const CompletionInstance& inst, const Matrix& U0,
                  int max_iters = 500, double tol = 1e-8,
                  AltminReport* report = nullptr);

// Node-restricted variant.  U is initialized as the U-factor of a compact
// SVD of the relaxed Y_R ("rounding" the projection); every U-step solves a
// conic program -- quadratic epigraph + poly + |U_i|^2 <= 1 and
// |U_i +- U_j|^2 <= 2 over columns -- so the returned U satisfies the node's
// intervals.  No final re-orthonormalization: that would rotate U out of the
// polyhedron.  Returns nothing when the U-step is infeasible (the polyhedron
// excludes every near-orthonormal U) or the conic solve breaks down.
std::optional<FactorPair> altmin_node(
    const CompletionInstance& inst, const NodePolyhedron& poly,
    const Matrix& Y_R, const std::optional<Matrix>& V_init = std::nullopt,
    int max_iters = 50, double tol = 1e-7, AltminReport* report = nullptr,
    const conic::SolveTolerances& conic_tol = {});

// Chance of running altmin at a node, degrading geometrically with depth.
double node_selection_probability(int depth, double beta = 0.5);

// Root-node incumbent policy: alternating minimization from initialize_U for
// noisy instances, nothing for basis pursuit (finding a feasible completion
// is as hard as solving the problem).
std::optional<FactorPair> root_incumbent(const CompletionInstance& inst,
                                         AltminReport* report = nullptr);

}  // namespace lrbb
