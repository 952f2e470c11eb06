#include "lrbb/conic.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

namespace lrbb::conic {

Matrix smat(const Eigen::Ref<const Vector>& v, int side) {
  Matrix M(side, side);
  for (int c = 0; c < side; ++c)
    for (int r = c; r < side; ++r) {
      const double raw = v[svec_offset(side, r, c)];
      const double entry = r == c ? raw : raw / kSqrt2;
      M(r, c) = entry;
      M(c, r) = entry;
    }
  return M;
}

Vector svec(const Matrix& M) {
  const int side = static_cast<int>(M.rows());
  Vector v(svec_dim(side));
  for (int c = 0; c < side; ++c)
    for (int r = c; r < side; ++r)
      v[svec_offset(side, r, c)] = r == c ? M(r, c) : kSqrt2 * M(r, c);
  return v;
}

int ConicProgram::add_block(ConeType type, int dim, int side) {
  if (dim <= 0) throw std::invalid_argument("cone dimension must be positive");
  cones_.push_back({type, dim, side, num_vars_});
  num_vars_ += dim;
  return static_cast<int>(cones_.size()) - 1;
}

VarRef ConicProgram::var(int block, int i) const {
  const ConeBlock& b = cones_.at(block);
  if (i < 0 || i >= b.dim) throw std::out_of_range("cone slot out of range");
  return {b.offset + i, 1.0};
}

VarRef ConicProgram::psd_entry(int block, int r, int c) const {
  const ConeBlock& b = cones_.at(block);
  if (b.type != ConeType::PSD)
    throw std::invalid_argument("psd_entry on a non-PSD block");
  if (r < c) std::swap(r, c);
  if (c < 0 || r >= b.side) throw std::out_of_range("psd entry out of range");
  const int off = svec_offset(b.side, r, c);
  return {b.offset + off, r == c ? 1.0 : 1.0 / kSqrt2};
}

int ConicProgram::add_row(double rhs) {
  rows_.emplace_back();
  rhs_.push_back(rhs);
  return static_cast<int>(rhs_.size()) - 1;
}

void ConicProgram::add_term(int row, VarRef v, double coeff) {
  if (!v.valid()) throw std::invalid_argument("add_term on invalid VarRef");
  if (coeff == 0.0) return;
  rows_.at(row).emplace_back(v.index, coeff * v.scale);
}

void ConicProgram::obj_term(VarRef v, double coeff) {
  if (!v.valid()) throw std::invalid_argument("obj_term on invalid VarRef");
  if (coeff == 0.0) return;
  obj_.emplace_back(v.index, coeff * v.scale);
}

void ConicProgram::name_matrix(const std::string& symbol, int rows, int cols,
                               bool symmetric) {
  NamedMatrix nm;
  nm.rows = rows;
  nm.cols = cols;
  nm.symmetric = symmetric;
  nm.refs.assign(static_cast<size_t>(rows) * cols, VarRef{});
  nm.constants.assign(static_cast<size_t>(rows) * cols, 0.0);
  names_[symbol] = std::move(nm);
}

void ConicProgram::name_entry(const std::string& symbol, int r, int c,
                              VarRef ref) {
  NamedMatrix& nm = names_.at(symbol);
  nm.refs.at(static_cast<size_t>(r) * nm.cols + c) = ref;
}

void ConicProgram::name_entry_const(const std::string& symbol, int r, int c,
                                    double value) {
  NamedMatrix& nm = names_.at(symbol);
  nm.refs.at(static_cast<size_t>(r) * nm.cols + c) = VarRef{};
  nm.constants.at(static_cast<size_t>(r) * nm.cols + c) = value;
}

bool ConicProgram::has_symbol(const std::string& symbol) const {
  return names_.count(symbol) > 0;
}

std::vector<std::string> ConicProgram::symbols() const {
  std::vector<std::string> out;
  out.reserve(names_.size());
  for (const auto& [k, v] : names_) out.push_back(k);
  return out;
}

const ConicProgram::NamedMatrix& ConicProgram::named(
    const std::string& symbol) const {
  auto it = names_.find(symbol);
  if (it == names_.end())
    throw std::out_of_range("unknown symbol: " + symbol);
  return it->second;
}

double ConicProgram::eval_objective(const Vector& x) const {
  double v = obj_constant_;
  for (const auto& [idx, coeff] : obj_) v += coeff * x[idx];
  return v;
}

// Format, one record per line:
//   vars <count>
//   cone <free|nonneg|soc|psd> <dim> <side>
//   obj <flat-index> <coeff>
//   objconst <value>
//   row <row> rhs <value>
//   a <row> <flat-index> <coeff>
//   name <symbol> <r> <c> var <flat-index> <scale>
//   name <symbol> <r> <c> const <value>
void ConicProgram::dump(std::ostream& os) const {
  os << "vars " << num_vars_ << "\n";
  for (const auto& b : cones_) {
    const char* t = b.type == ConeType::Free         ? "free"
                    : b.type == ConeType::Nonnegative ? "nonneg"
                    : b.type == ConeType::SecondOrder ? "soc"
                                                      : "psd";
    os << "cone " << t << " " << b.dim << " " << b.side << "\n";
  }
  for (const auto& [idx, coeff] : obj_) os << "obj " << idx << " " << coeff << "\n";
  if (obj_constant_ != 0.0) os << "objconst " << obj_constant_ << "\n";
  for (size_t r = 0; r < rhs_.size(); ++r) {
    os << "row " << r << " rhs " << rhs_[r] << "\n";
    for (const auto& [idx, coeff] : rows_[r])
      os << "a " << r << " " << idx << " " << coeff << "\n";
  }
  for (const auto& [symbol, nm] : names_) {
    for (int r = 0; r < nm.rows; ++r)
      for (int c = 0; c < nm.cols; ++c) {
        const size_t at = static_cast<size_t>(r) * nm.cols + c;
        os << "name " << symbol << " " << r << " " << c;
        if (nm.refs[at].valid())
          os << " var " << nm.refs[at].index << " " << nm.refs[at].scale << "\n";
        else
          os << " const " << nm.constants[at] << "\n";
      }
  }
}

std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::NearOptimal: return "near_optimal";
    case SolveStatus::NumericalFailure: return "numerical_failure";
  }
  return "?";
}

Matrix extract(const ConicSolution& sol, const ConicProgram& prog,
               const std::string& symbol) {
  const auto& nm = prog.named(symbol);
  Matrix M(nm.rows, nm.cols);
  for (int r = 0; r < nm.rows; ++r)
    for (int c = 0; c < nm.cols; ++c) {
      const size_t at = static_cast<size_t>(r) * nm.cols + c;
      M(r, c) = nm.refs[at].valid()
                    ? nm.refs[at].scale * sol.x[nm.refs[at].index]
                    : nm.constants[at];
    }
  if (nm.symmetric && nm.rows == nm.cols) M = symmetrized(M);
  return M;
}

Vector dual_slack_candidate(const ConicProgram& prog, const Vector& y) {
  if (y.size() != prog.num_rows())
    throw std::invalid_argument("dual_slack_candidate: y has wrong length");
  Vector s = Vector::Zero(prog.num_vars());
  for (const auto& [idx, coeff] : prog.objective()) s[idx] += coeff;
  const auto& rows = prog.rows();
  for (int r = 0; r < prog.num_rows(); ++r)
    for (const auto& [idx, coeff] : rows[r]) s[idx] -= coeff * y[r];
  return s;
}

double dual_cone_distance(const ConicProgram& prog, const Vector& s) {
  if (s.size() != prog.num_vars())
    throw std::invalid_argument("dual_cone_distance: s has wrong length");
  double sq = 0.0;
  for (const ConeBlock& blk : prog.cones()) {
    const auto seg = s.segment(blk.offset, blk.dim);
    switch (blk.type) {
      case ConeType::Free:
        sq += seg.squaredNorm();
        break;
      case ConeType::Nonnegative:
        sq += seg.cwiseMin(0.0).squaredNorm();
        break;
      case ConeType::SecondOrder: {
        const double tail = blk.dim > 1 ? seg.tail(blk.dim - 1).norm() : 0.0;
        const double head = seg[0];
        if (head >= tail) break;           // inside
        if (head <= -tail) {               // polar: nearest point is 0
          sq += seg.squaredNorm();
        } else {
          const double d = (tail - head) / kSqrt2;
          sq += d * d;
        }
        break;
      }
      case ConeType::PSD: {
        Eigen::SelfAdjointEigenSolver<Matrix> es(smat(seg, blk.side));
        sq += es.eigenvalues().cwiseMin(0.0).squaredNorm();
        break;
      }
    }
  }
  return std::sqrt(sq);
}

}  // namespace lrbb::conic
