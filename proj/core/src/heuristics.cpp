#include "lrbb/heuristics.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace lrbb {

namespace {

constexpr double kRidge = 1e-12;
constexpr double kInf = std::numeric_limits<double>::infinity();

// The objective both subproblems minimize; coincides with objective_value on
// noisy instances and serves as the descent measure on basis pursuit (whose
// true objective is +inf until the observations are matched).
double penalized_objective(const CompletionInstance& inst, const Matrix& X) {
  double fit = 0.0;
  for (const auto& [i, j] : inst.mask.pairs()) {
    const double r = X(i, j) - inst.observed(i, j);
    fit += r * r;
  }
  return X.squaredNorm() / (2.0 * inst.gamma) + 0.5 * fit;
}

// Cholesky solve with a jittered retry: the Gram matrices are positive
// semidefinite by construction and only lose definiteness when a factor
// drops rank, so the 1e-12 ridge restores solvability without visibly
// shifting the minimizer.
Vector solve_spd(Matrix G, const Vector& rhs, int& ridge_solves) {
  Eigen::LLT<Matrix> llt(G);
  if (llt.info() == Eigen::Success) return llt.solve(rhs);
  ++ridge_solves;
  G.diagonal().array() += kRidge;
  return Eigen::LDLT<Matrix>(G).solve(rhs);
}

// Exact V-step: per column j of V, the normal equations
//   (U_Omega' U_Omega + (1/gamma) U'U) v = U_Omega' A_Omega.
Matrix v_step(const CompletionInstance& inst, const Matrix& U,
              int& ridge_solves) {
  const int k = static_cast<int>(U.cols());
  const Matrix G0 = U.transpose() * U / inst.gamma;
  Matrix V(k, inst.m);
  for (int j = 0; j < inst.m; ++j) {
    Matrix G = G0;
    Vector rhs = Vector::Zero(k);
    for (int i : inst.mask.col_slice(j)) {
      G.noalias() += U.row(i).transpose() * U.row(i);
      rhs.noalias() += inst.observed(i, j) * U.row(i).transpose();
    }
    V.col(j) = solve_spd(std::move(G), rhs, ridge_solves);
  }
  return V;
}

// Exact U-step, mirror image of the V-step over rows.
Matrix u_step(const CompletionInstance& inst, const Matrix& V,
              int& ridge_solves) {
  const int k = static_cast<int>(V.rows());
  const Matrix H0 = V * V.transpose() / inst.gamma;
  Matrix U(inst.n, k);
  for (int i = 0; i < inst.n; ++i) {
    Matrix H = H0;
    Vector rhs = Vector::Zero(k);
    for (int j : inst.mask.row_slice(i)) {
      H.noalias() += V.col(j) * V.col(j).transpose();
      rhs.noalias() += inst.observed(i, j) * V.col(j);
    }
    U.row(i) = solve_spd(std::move(H), rhs, ridge_solves).transpose();
  }
  return U;
}

// Fills columns [from, cols) with an orthonormal complement: for each slot,
// the standard basis vector with the largest residual after two
// Gram-Schmidt passes against the earlier columns.
void pad_orthonormal(Matrix& U, int from) {
  const int n = static_cast<int>(U.rows());
  for (int c = from; c < U.cols(); ++c) {
    Vector best;
    double best_norm = -1.0;
    for (int axis = 0; axis < n; ++axis) {
      Vector cand = Vector::Unit(n, axis);
      for (int pass = 0; pass < 2; ++pass)
        for (int p = 0; p < c; ++p) cand -= U.col(p).dot(cand) * U.col(p);
      const double norm = cand.norm();
      if (norm > best_norm) {
        best_norm = norm;
        best = cand;
      }
    }
    U.col(c) = best / best_norm;
  }
}

// Leading k left singular vectors of X, padded when the thin factor runs out
// of columns (k <= min(n, m) keeps this path dormant for valid instances).
Matrix left_factor(const Matrix& X, int k) {
  Eigen::BDCSVD<Matrix> svd(X, Eigen::ComputeThinU);
  const int have = std::min<int>(k, static_cast<int>(svd.matrixU().cols()));
  Matrix U(X.rows(), k);
  U.leftCols(have) = svd.matrixU().leftCols(have);
  if (have < k) pad_orthonormal(U, have);
  return U;
}

// Top-k eigenvectors of a symmetric matrix, by descending eigenvalue; the
// compact-SVD U-factor of a (numerically) PSD Y_R.
Matrix top_eigenvectors(const Matrix& S, int k) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(S));
  const int n = static_cast<int>(S.rows());
  Matrix U(n, k);
  for (int t = 0; t < k; ++t) U.col(t) = es.eigenvectors().col(n - 1 - t);
  return U;
}

// L with L L' = H for the quadratic epigraph rows: Cholesky, then the
// jittered retry, then a clamped eigenvalue square root as a last resort.
Matrix quadratic_factor(const Matrix& H, int& ridge_solves) {
  Eigen::LLT<Matrix> llt(H);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  ++ridge_solves;
  Matrix Hj = H;
  Hj.diagonal().array() += kRidge;
  Eigen::LLT<Matrix> retry(Hj);
  if (retry.info() == Eigen::Success) return retry.matrixL();
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(H));
  return es.eigenvectors() *
         es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

enum class UStepStatus { Solved, Infeasible, Failure };

struct UStepResult {
  UStepStatus status = UStepStatus::Failure;
  Matrix U;
};

// Constrained U-step as a conic program: per row i an epigraph variable t_i
// with t_i >= 1/2 u_i' H_i u_i via the cone (t + 1/2, t - 1/2, L_i' u_i),
// the polyhedron's interval rows with nonnegative slacks, |U_a| <= 1 per
// column, and |U_a +- U_b| <= sqrt(2) per column pair.
UStepResult u_step_conic(const CompletionInstance& inst,
                         const NodePolyhedron& poly, const Matrix& V,
                         const conic::SolveTolerances& conic_tol,
                         int& ridge_solves) {
  const int n = inst.n, k = inst.k;
  conic::ConicProgram prog;
  const int ub = prog.add_free(n * k);  // row-major U entries
  const int tb = prog.add_free(n);      // epigraph values
  prog.name_matrix("U", n, k);
  for (int i = 0; i < n; ++i)
    for (int r = 0; r < k; ++r)
      prog.name_entry("U", i, r, prog.var(ub, i * k + r));

  const Matrix H0 = V * V.transpose() / inst.gamma;
  double constant = 0.0;
  for (int i = 0; i < n; ++i) {
    Matrix H = H0;
    Vector rhs = Vector::Zero(k);
    for (int j : inst.mask.row_slice(i)) {
      H.noalias() += V.col(j) * V.col(j).transpose();
      rhs.noalias() += inst.observed(i, j) * V.col(j);
      constant += 0.5 * inst.observed(i, j) * inst.observed(i, j);
    }
    const Matrix L = quadratic_factor(H, ridge_solves);

    const int sb = prog.add_soc(2 + static_cast<int>(L.cols()));
    int row = prog.add_row(0.5);  // s0 = t_i + 1/2
    prog.add_term(row, prog.var(sb, 0), 1.0);
    prog.add_term(row, prog.var(tb, i), -1.0);
    row = prog.add_row(-0.5);  // s1 = t_i - 1/2
    prog.add_term(row, prog.var(sb, 1), 1.0);
    prog.add_term(row, prog.var(tb, i), -1.0);
    for (int r = 0; r < L.cols(); ++r) {
      row = prog.add_row(0.0);  // s_{2+r} = (L' u_i)_r
      prog.add_term(row, prog.var(sb, 2 + r), 1.0);
      for (int c = 0; c < k; ++c)
        if (L(c, r) != 0.0)
          prog.add_term(row, prog.var(ub, i * k + c), -L(c, r));
    }
    prog.obj_term(prog.var(tb, i), 1.0);
    for (int r = 0; r < k; ++r)
      if (rhs[r] != 0.0) prog.obj_term(prog.var(ub, i * k + r), -rhs[r]);
  }
  prog.add_obj_constant(constant);

  for (const UInterval& iv : poly.intervals) {
    if (iv.x.size() != n || iv.column < 0 || iv.column >= k)
      throw std::invalid_argument("altmin_node: interval shape mismatch");
    const int slack = prog.add_nonneg(2);
    int row = prog.add_row(iv.lo);  // x'U_col - s = lo
    for (int r = 0; r < n; ++r)
      if (iv.x[r] != 0.0)
        prog.add_term(row, prog.var(ub, r * k + iv.column), iv.x[r]);
    prog.add_term(row, prog.var(slack, 0), -1.0);
    row = prog.add_row(iv.hi);  // x'U_col + s = hi
    for (int r = 0; r < n; ++r)
      if (iv.x[r] != 0.0)
        prog.add_term(row, prog.var(ub, r * k + iv.column), iv.x[r]);
    prog.add_term(row, prog.var(slack, 1), 1.0);
  }

  for (int a = 0; a < k; ++a) {
    const int cb = prog.add_soc(n + 1);
    int row = prog.add_row(1.0);
    prog.add_term(row, prog.var(cb, 0), 1.0);
    for (int r = 0; r < n; ++r) {
      row = prog.add_row(0.0);
      prog.add_term(row, prog.var(cb, 1 + r), 1.0);
      prog.add_term(row, prog.var(ub, r * k + a), -1.0);
    }
  }
  for (int a = 0; a < k; ++a)
    for (int b = a + 1; b < k; ++b)
      for (const double sign : {1.0, -1.0}) {
        const int pb = prog.add_soc(n + 1);
        int row = prog.add_row(std::sqrt(2.0));
        prog.add_term(row, prog.var(pb, 0), 1.0);
        for (int r = 0; r < n; ++r) {
          row = prog.add_row(0.0);
          prog.add_term(row, prog.var(pb, 1 + r), 1.0);
          prog.add_term(row, prog.var(ub, r * k + a), -1.0);
          prog.add_term(row, prog.var(ub, r * k + b), -sign);
        }
      }

  const conic::ConicSolution sol = conic::solve(prog, conic_tol);
  UStepResult out;
  switch (sol.status) {
    case conic::SolveStatus::Optimal:
    case conic::SolveStatus::NearOptimal:
      out.status = UStepStatus::Solved;
      out.U = conic::extract(sol, prog, "U");
      break;
    case conic::SolveStatus::Infeasible:
      out.status = UStepStatus::Infeasible;
      break;
    case conic::SolveStatus::NumericalFailure:
      out.status = UStepStatus::Failure;
      break;
  }
  return out;
}

}  // namespace

void NodePolyhedron::add_branch(const DisjunctionBranch& branch) {
  if (!branch.cut) throw std::invalid_argument("add_branch: branch has no cut");
  const DisjunctionCut& cut = *branch.cut;
  if (static_cast<int>(branch.z.size()) != cut.k())
    throw std::invalid_argument("add_branch: piece vector length != k");
  for (int j = 0; j < cut.k(); ++j) {
    const Piece& piece = cut.columns[j].pieces.at(branch.z[j]);
    intervals.push_back({cut.x, j, piece.lo, piece.up});
  }
}

bool NodePolyhedron::satisfied(const Matrix& U, double tol) const {
  for (const UInterval& iv : intervals) {
    if (iv.x.size() != U.rows() || iv.column < 0 || iv.column >= U.cols())
      throw std::invalid_argument("satisfied: interval shape mismatch");
    const double v = iv.x.dot(U.col(iv.column));
    if (v < iv.lo - tol || v > iv.hi + tol) return false;
  }
  return true;
}

Matrix initialize_U(const CompletionInstance& inst) {
  inst.validate();
  Matrix X0 = Matrix::Zero(inst.n, inst.m);
  for (const auto& [i, j] : inst.mask.pairs()) X0(i, j) = inst.observed(i, j);
  return left_factor(X0, inst.k);
}

FactorPair altmin(const CompletionInstance& inst, const Matrix& U0,
                  int max_iters, double tol, AltminReport* report) {
  if (U0.rows() != inst.n || U0.cols() != inst.k)
    throw std::invalid_argument("altmin: U0 must be n x k");
  if (max_iters < 1) throw std::invalid_argument("altmin: max_iters < 1");
  AltminReport local;
  AltminReport& rep = report ? *report : local;
  rep = {};

  Matrix U = U0, V;
  double prev = kInf;
  for (int it = 0; it < max_iters; ++it) {
    V = v_step(inst, U, rep.ridge_solves);
    rep.half_step_objectives.push_back(penalized_objective(inst, U * V));
    U = u_step(inst, V, rep.ridge_solves);
    const double cur = penalized_objective(inst, U * V);
    rep.half_step_objectives.push_back(cur);
    rep.iterations = it + 1;
    if (std::isfinite(prev) &&
        prev - cur <= tol * std::max(1.0, std::abs(prev))) {
      rep.converged = true;
      break;
    }
    prev = cur;
  }

  // Re-orthonormalize through a compact SVD of the converged product; the
  // product itself is unchanged up to roundoff.
  const Matrix X = U * V;
  Eigen::BDCSVD<Matrix> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const int have =
      std::min<int>(inst.k, static_cast<int>(svd.singularValues().size()));
  FactorPair pair;
  pair.U = Matrix(inst.n, inst.k);
  pair.V = Matrix::Zero(inst.k, inst.m);
  pair.U.leftCols(have) = svd.matrixU().leftCols(have);
  if (have < inst.k) pad_orthonormal(pair.U, have);
  pair.V.topRows(have) = svd.singularValues().head(have).asDiagonal() *
                         svd.matrixV().leftCols(have).transpose();
  pair.X = pair.U * pair.V;
  pair.objective = objective_value(inst, pair.X);
  return pair;
}

std::optional<FactorPair> altmin_node(const CompletionInstance& inst,
                                      const NodePolyhedron& poly,
                                      const Matrix& Y_R,
                                      const std::optional<Matrix>& V_init,
                                      int max_iters, double tol,
                                      AltminReport* report,
                                      const conic::SolveTolerances& conic_tol) {
  if (Y_R.rows() != inst.n || Y_R.cols() != inst.n)
    throw std::invalid_argument("altmin_node: Y_R must be n x n");
  if (V_init && (V_init->rows() != inst.k || V_init->cols() != inst.m))
    throw std::invalid_argument("altmin_node: V_init must be k x m");
  if (max_iters < 1) throw std::invalid_argument("altmin_node: max_iters < 1");
  AltminReport local;
  AltminReport& rep = report ? *report : local;
  rep = {};

  Matrix U = top_eigenvectors(Y_R, inst.k);
  Matrix V;
  bool feasible = false;  // U came out of an accepted conic step
  double prev = kInf;
  for (int it = 0; it < max_iters; ++it) {
    if (it == 0 && V_init)
      V = *V_init;
    else
      V = v_step(inst, U, rep.ridge_solves);
    const double after_v = penalized_objective(inst, U * V);
    rep.half_step_objectives.push_back(after_v);

    const UStepResult step =
        u_step_conic(inst, poly, V, conic_tol, rep.ridge_solves);
    if (step.status != UStepStatus::Solved) {
      if (!feasible) return std::nullopt;  // node never certified feasible
      break;                               // keep the last consistent pair
    }
    const double after_u = penalized_objective(inst, step.U * V);
    // The conic step is accurate to solver tolerance only; once it stops
    // improving on the exact V-step value we are at the precision floor
    // (the very first step is always taken -- it establishes feasibility).
    if (feasible && after_u > after_v) break;
    U = step.U;
    feasible = true;
    rep.half_step_objectives.push_back(after_u);
    rep.iterations = it + 1;
    if (std::isfinite(prev) &&
        prev - after_u <= tol * std::max(1.0, std::abs(prev))) {
      rep.converged = true;
      break;
    }
    prev = after_u;
  }
  if (!feasible) return std::nullopt;

  // No final re-orthonormalization: a rotated factor could leave the node's
  // polyhedron, and the incumbent only needs the product.
  FactorPair pair;
  pair.U = U;
  pair.V = V;
  pair.X = U * V;
  pair.objective = objective_value(inst, pair.X);
  return pair;
}

double node_selection_probability(int depth, double beta) {
  if (depth < 0)
    throw std::invalid_argument("node_selection_probability: depth < 0");
  if (!(beta > 0.0) || beta > 1.0)
    throw std::invalid_argument("node_selection_probability: beta not in (0,1]");
  return std::pow(beta, depth);
}

std::optional<FactorPair> root_incumbent(const CompletionInstance& inst,
                                         AltminReport* report) {
  if (inst.mode == InstanceMode::BasisPursuit) return std::nullopt;
  return altmin(inst, initialize_U(inst), 500, 1e-8, report);
}

}  // namespace lrbb
