#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lrbb/types.hpp"

namespace lrbb::conic {

// Standard primal form:
//   min  c'x + c0   s.t.  A x = b,   x in K = K_1 x ... x K_B
// where each K_b is Free, Nonnegative, a second-order cone
// (x_0 >= ||x_1..d-1||), or a PSD cone in scaled-vector coordinates.
//
// PSD blocks store the lower triangle column-major with off-diagonal slots
// multiplied by sqrt(2), so the Euclidean inner product of two stored
// vectors equals the Frobenius inner product of the symmetric matrices.
// VarRef carries the inverse scale, letting builders state coefficients in
// matrix-entry terms and extraction recover matrix entries directly.

enum class ConeType { Free, Nonnegative, SecondOrder, PSD };

struct ConeBlock {
  ConeType type;
  int dim;     // number of flat variables (svec length for PSD)
  int side;    // matrix side for PSD, 0 otherwise
  int offset;  // first flat index
};

struct VarRef {
  int index = -1;
  double scale = 1.0;  // matrix-entry value = scale * x[index]
  bool valid() const { return index >= 0; }
};

inline int svec_dim(int side) { return side * (side + 1) / 2; }
// Lower-triangle column-major offset of (r, c) with r >= c.
inline int svec_offset(int side, int r, int c) {
  return c * side - c * (c - 1) / 2 + (r - c);
}
inline constexpr double kSqrt2 = 1.4142135623730950488;

// Dense symmetric matrix <-> scaled-vector conversions.
Matrix smat(const Eigen::Ref<const Vector>& v, int side);
Vector svec(const Matrix& M);

class ConicProgram {
 public:
  // --- cones -------------------------------------------------------------
  int add_free(int dim) { return add_block(ConeType::Free, dim, 0); }
  int add_nonneg(int dim) { return add_block(ConeType::Nonnegative, dim, 0); }
  int add_soc(int dim) { return add_block(ConeType::SecondOrder, dim, 0); }
  int add_psd(int side) {
    return add_block(ConeType::PSD, svec_dim(side), side);
  }

  // Flat slot i of a block (scale 1).
  VarRef var(int block, int i) const;
  // Matrix entry (r, c) of a PSD block; r, c in any order.
  VarRef psd_entry(int block, int r, int c) const;

  int num_vars() const { return num_vars_; }
  const std::vector<ConeBlock>& cones() const { return cones_; }

  // --- affine rows (coefficients in matrix-entry semantics) ---------------
  int add_row(double rhs);
  void add_term(int row, VarRef v, double coeff);
  int num_rows() const { return static_cast<int>(rhs_.size()); }
  const std::vector<std::vector<std::pair<int, double>>>& rows() const {
    return rows_;
  }
  const std::vector<double>& rhs() const { return rhs_; }

  // --- objective ----------------------------------------------------------
  void obj_term(VarRef v, double coeff);
  void add_obj_constant(double c) { obj_constant_ += c; }
  double obj_constant() const { return obj_constant_; }
  const std::vector<std::pair<int, double>>& objective() const { return obj_; }

  // --- name table ----------------------------------------------------------
  void name_matrix(const std::string& symbol, int rows, int cols,
                   bool symmetric = false);
  void name_entry(const std::string& symbol, int r, int c, VarRef ref);
  void name_entry_const(const std::string& symbol, int r, int c, double value);
  bool has_symbol(const std::string& symbol) const;
  std::vector<std::string> symbols() const;

  // Documented sparse text format, one line per nonzero; see dump() impl.
  void dump(std::ostream& os) const;

  // Re-evaluates c'x + c0 on a primal vector.
  double eval_objective(const Vector& x) const;

  struct NamedMatrix {
    int rows = 0, cols = 0;
    bool symmetric = false;
    std::vector<VarRef> refs;      // rows*cols, invalid when constant
    std::vector<double> constants; // used where ref invalid
  };
  const NamedMatrix& named(const std::string& symbol) const;

 private:
  int add_block(ConeType type, int dim, int side);

  std::vector<ConeBlock> cones_;
  int num_vars_ = 0;
  std::vector<std::vector<std::pair<int, double>>> rows_;
  std::vector<double> rhs_;
  std::vector<std::pair<int, double>> obj_;
  double obj_constant_ = 0.0;
  std::map<std::string, NamedMatrix> names_;
};

struct SolveTolerances {
  double feasibility = 1e-8;
  double gap = 1e-8;
  double psd_residual = 1e-8;
  int max_iterations = 120;
  // Initial point x = s = init_scale . e.  Degenerate or near-infeasible
  // programs sometimes converge from one centering and stall from another;
  // retrying a failed solve at a different scale is cheap insurance.
  double init_scale = 1.0;
  bool verbose = false;
};

enum class SolveStatus { Optimal, Infeasible, NearOptimal, NumericalFailure };

std::string to_string(SolveStatus s);

struct ConicSolution {
  Vector x;  // primal
  Vector y;  // equality multipliers
  Vector s;  // dual slack
  double objective = 0.0;  // includes the constant term
  SolveStatus status = SolveStatus::NumericalFailure;
  double psd_residual = 0.0;        // most negative eigenvalue across PSD blocks
  double constraint_residual = 0.0; // ||Ax-b|| / (1+||b||)
  double duality_gap = 0.0;
  int iterations = 0;
};

// Dense primal-dual interior-point solve (Nesterov-Todd scaled Mehrotra
// predictor-corrector).  Pure function of its inputs.
ConicSolution solve(const ConicProgram& prog, const SolveTolerances& tol = {});

// Reads a named matrix out of a solution; symmetric symbols are averaged
// with their transpose.  Throws std::out_of_range for unknown symbols.
Matrix extract(const ConicSolution& sol, const ConicProgram& prog,
               const std::string& symbol);

// Certificate algebra on a multiplier vector y (same flat coordinates as
// ConicSolution).  dual_slack_candidate returns c - A'y; together with
// by = rhs . y it supports a-posteriori Farkas reasoning: for any feasible x,
//   c'x = b'y + x'(c - A'y) >= b'y - ||x|| . dist(c - A'y, K*),
// so a small dual-cone distance and a norm bound on the feasible set turn a
// diverging multiplier sequence into a rigorous objective floor.
Vector dual_slack_candidate(const ConicProgram& prog, const Vector& y);

// Euclidean distance from s to the dual cone K*.  Free blocks have dual {0},
// the other cone types are self-dual in these coordinates.
double dual_cone_distance(const ConicProgram& prog, const Vector& s);

}  // namespace lrbb::conic
