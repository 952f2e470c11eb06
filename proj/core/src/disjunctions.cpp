#include "lrbb/disjunctions.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace lrbb {

namespace {

// Chord of u^2 over [a, b]: passes through (a, a^2) and (b, b^2), so the
// slope is a + b and the intercept -ab.
Piece chord(double a, double b) {
  Piece p;
  p.lo = a;
  p.up = b;
  p.slope = a + b;
  p.intercept = -a * b;
  return p;
}

void canonical_sign(Vector& v) {
  const double scale = v.cwiseAbs().maxCoeff();
  for (int i = 0; i < v.size(); ++i) {
    if (std::abs(v[i]) > 1e-12 * scale) {
      if (v[i] < 0) v = -v;
      return;
    }
  }
}

}  // namespace

int PiecewiseBound::covering_piece(double u) const {
  const double uc = std::clamp(u, breakpoints.front(), breakpoints.back());
  for (int i = 0; i < num_pieces(); ++i)
    if (uc <= pieces[i].up) return i;
  return num_pieces() - 1;
}

PiecewiseBound make_piecewise(double u0, int q) {
  if (q < 2 || q > 4)
    throw std::invalid_argument("piecewise bound supports q in {2,3,4}");
  const double cap = 1.0 - 1e-9;
  const double u = std::clamp(u0, -cap, cap);
  PiecewiseBound out;
  switch (q) {
    case 2: out.breakpoints = {-1.0, u, 1.0}; break;
    case 3: out.breakpoints = {-1.0, -std::abs(u), std::abs(u), 1.0}; break;
    case 4:
      out.breakpoints = {-1.0, -std::abs(u), 0.0, std::abs(u), 1.0};
      break;
  }
  for (size_t i = 0; i + 1 < out.breakpoints.size(); ++i)
    out.pieces.push_back(chord(out.breakpoints[i], out.breakpoints[i + 1]));
  return out;
}

std::optional<std::pair<Vector, double>> find_violating_eigenvector(
    const Matrix& Y, const Matrix& U, double eps) {
  if (Y.rows() != Y.cols() || U.rows() != Y.rows())
    throw std::invalid_argument("find_violating_eigenvector: shape mismatch");
  const Matrix S = symmetrized(U * U.transpose() - Y);
  Eigen::SelfAdjointEigenSolver<Matrix> es(S);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("eigensolver failed on UU' - Y");
  const double lmin = es.eigenvalues()[0];
  if (lmin >= -eps) return std::nullopt;
  Vector x = es.eigenvectors().col(0);
  x /= x.norm();
  canonical_sign(x);
  return std::make_pair(x, lmin);
}

int DisjunctionCut::num_branches() const {
  int n = 1;
  for (int j = 0; j < k(); ++j) n *= q;
  return n;
}

std::vector<int> DisjunctionCut::branch_pieces(int index) const {
  if (index < 0 || index >= num_branches())
    throw std::out_of_range("branch index out of range");
  std::vector<int> z(k());
  for (int j = 0; j < k(); ++j) {
    z[j] = index % q;
    index /= q;
  }
  return z;
}

DisjunctionCut make_cut(const Matrix& U_hat, const Matrix& Y_hat,
                        const Vector& x, int q) {
  if (U_hat.rows() != Y_hat.rows() || Y_hat.rows() != Y_hat.cols() ||
      x.size() != U_hat.rows())
    throw std::invalid_argument("make_cut: shape mismatch");
  DisjunctionCut cut;
  cut.x = x / x.norm();
  const double viol =
      cut.x.dot((U_hat * (U_hat.transpose() * cut.x)) - Y_hat * cut.x);
  if (!(viol < 0))
    throw std::invalid_argument(
        "make_cut: direction does not separate (x'(UU'-Y)x >= 0)");
  cut.U_hat = U_hat;
  cut.q = q;
  for (int j = 0; j < U_hat.cols(); ++j)
    cut.columns.push_back(make_piecewise(U_hat.col(j).dot(cut.x), q));
  return cut;
}

bool branch_satisfied(const DisjunctionCut& cut, const std::vector<int>& z,
                      const Matrix& U, const Matrix& Y, double tol) {
  if (static_cast<int>(z.size()) != cut.k())
    throw std::invalid_argument("branch_satisfied: piece vector size");
  double bound = 0.0;
  for (int j = 0; j < cut.k(); ++j) {
    const Piece& p = cut.columns[j].pieces.at(z[j]);
    const double uj = U.col(j).dot(cut.x);
    if (uj < p.lo - tol || uj > p.up + tol) return false;
    bound += p.value(uj);
  }
  const double quad = cut.x.dot(Y * cut.x);
  return quad <= bound + tol;
}

BoxState full_box(int n, int k) {
  BoxState b;
  b.lower = Matrix::Constant(n, k, -1.0);
  b.upper = Matrix::Constant(n, k, 1.0);
  return b;
}

std::array<AffineIneq3, 4> mccormick_envelope(double xl, double xu, double yl,
                                              double yu) {
  if (xl > xu || yl > yu)
    throw std::invalid_argument("mccormick_envelope: inverted bounds");
  // v >= xl*y + x*yl - xl*yl        v >= xu*y + x*yu - xu*yu
  // v <= xu*y + x*yl - xu*yl        v <= xl*y + x*yu - xl*yu
  return {AffineIneq3{-1.0, yl, xl, xl * yl},
          AffineIneq3{-1.0, yu, xu, xu * yu},
          AffineIneq3{+1.0, -yl, -xu, -xu * yl},
          AffineIneq3{+1.0, -yu, -xl, -xl * yu}};
}

std::pair<BoxState, BoxState> make_mccormick_children(const BoxState& box,
                                                      int i, int j,
                                                      double split_point) {
  if (i < 0 || i >= box.lower.rows() || j < 0 || j >= box.lower.cols())
    throw std::out_of_range("make_mccormick_children: entry out of range");
  if (!(split_point > box.lower(i, j) && split_point < box.upper(i, j)))
    throw std::invalid_argument(
        "make_mccormick_children: split point not strictly inside the box");
  BoxState left = box, right = box;
  left.upper(i, j) = split_point;
  right.lower(i, j) = split_point;
  return {left, right};
}

}  // namespace lrbb
