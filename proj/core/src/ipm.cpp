// Dense primal-dual interior-point method for the standard-form problem
//
//   min c'x  s.t.  A x = b,  x in K,
//
// with K a product of free, nonnegative, second-order, and PSD cones.
// Nesterov-Todd scaling, Mehrotra predictor-corrector, single step length.
// The Newton system is reduced to the Schur complement G = A_K H A_K' with
// free variables handled through a bordered solve; G is assembled blockwise
// from per-cone gathered constraint rows, which keeps the cost linear in the
// number of small PSD blocks.

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <map>
#include <stdexcept>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "lrbb/conic.hpp"

namespace lrbb::conic {

namespace {

constexpr double kStepFraction = 0.99;
constexpr double kInfinity = std::numeric_limits<double>::infinity();

struct NonnegScale {
  Vector w;    // sqrt(x/s)
  Vector lam;  // sqrt(x.*s)
};

struct SocScale {
  double eta = 1.0, eta2 = 1.0;
  Vector wbar;  // Jordan-unit scaling point
  Vector lam;
};

struct PsdScale {
  Matrix R, Rinv;  // W(u) = R' mat(u) R, inverse pair
  Matrix T;        // R R', H(u) = T mat(u) T
  Vector sigma;    // NT eigenvalues (lambda = diag(sigma))
};

// Cholesky that escalates a diagonal jitter until it succeeds.
Matrix robust_cholesky(Matrix M) {
  const int s = static_cast<int>(M.rows());
  double jitter = 0.0;
  const double scale = std::max(1.0, M.diagonal().cwiseAbs().maxCoeff());
  for (int attempt = 0; attempt < 8; ++attempt) {
    Eigen::LLT<Matrix> llt(M + jitter * Matrix::Identity(s, s));
    if (llt.info() == Eigen::Success) return llt.matrixL();
    jitter = jitter == 0.0 ? 1e-14 * scale : jitter * 100.0;
  }
  // Last resort: eigenvalue clip.
  Eigen::SelfAdjointEigenSolver<Matrix> es(M);
  Vector ev = es.eigenvalues().cwiseMax(1e-12 * scale);
  Matrix fixed =
      es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  return Eigen::LLT<Matrix>(fixed).matrixL();
}

class Ipm {
 public:
  Ipm(const ConicProgram& prog, const SolveTolerances& tol)
      : prog_(prog), tol_(tol) {
    build_data();
  }

  ConicSolution run();

 private:
  const ConicProgram& prog_;
  SolveTolerances tol_;

  int n_ = 0, m_ = 0, nf_ = 0;
  double nu_ = 0;  // barrier degree
  std::vector<ConeBlock> blocks_;
  std::vector<int> free_flat_;              // flat indices of free variables
  std::vector<char> is_free_;               // per flat index
  std::vector<std::vector<std::pair<int, double>>> arows_;  // sparse rows of A
  std::vector<std::vector<std::pair<int, double>>> acols_;  // sparse columns
  Vector b_, c_;
  Matrix Af_;  // m x nf dense

  // Gathered constraint rows per SOC/PSD block: M is |rows| x dim with local
  // column order, so G[rows, rows] += M * H_block * M'.
  struct GatheredRows {
    std::vector<int> row_ids;
    Matrix M;
  };
  std::vector<GatheredRows> gathered_;  // parallel to blocks_

  // Per-iteration scaling state, parallel to blocks_.
  std::vector<NonnegScale> nn_scale_;
  std::vector<SocScale> soc_scale_;
  std::vector<PsdScale> psd_scale_;

  void build_data();
  void compute_scaling(const Vector& x, const Vector& s, Vector& lam);

  // Blockwise operators over cone variables (free positions untouched).
  Vector apply_W(const Vector& v) const;
  Vector apply_Wt(const Vector& v) const;
  Vector apply_WinvT(const Vector& v) const;
  Vector apply_H(const Vector& v) const;
  Vector arrow_solve(const Vector& lam, const Vector& d) const;
  Vector jordan_product(const Vector& u, const Vector& v) const;
  Vector cone_identity() const;

  Vector A_mul(const Vector& x) const;
  Vector At_mul(const Vector& y) const;

  void assemble_schur(Matrix& G) const;
  double boundary_step(const Vector& z, const Vector& dz) const;

  struct Direction {
    Vector dx, dy, ds;
  };
  // Solves the Newton system given scaled complementarity rhs d_s and the
  // current residuals; reuses the factorizations passed in.
  Direction newton(const Eigen::LDLT<Matrix>& Gfact, const Matrix& Zf,
                   const Eigen::LDLT<Matrix>& Sf, const Vector& rp,
                   const Vector& rd, const Vector& ds_rhs,
                   const Vector& lam) const;
};

void Ipm::build_data() {
  n_ = prog_.num_vars();
  m_ = prog_.num_rows();
  blocks_ = prog_.cones();

  is_free_.assign(n_, 0);
  for (const auto& blk : blocks_) {
    switch (blk.type) {
      case ConeType::Free:
        for (int i = 0; i < blk.dim; ++i) {
          free_flat_.push_back(blk.offset + i);
          is_free_[blk.offset + i] = 1;
        }
        break;
      case ConeType::Nonnegative: nu_ += blk.dim; break;
      case ConeType::SecondOrder: nu_ += 1; break;
      case ConeType::PSD: nu_ += blk.side; break;
    }
  }
  nf_ = static_cast<int>(free_flat_.size());

  arows_.assign(m_, {});
  acols_.assign(n_, {});
  const auto& rows = prog_.rows();
  for (int r = 0; r < m_; ++r) {
    // Merge duplicate column entries within a row.
    std::map<int, double> merged;
    for (const auto& [idx, coeff] : rows[r]) merged[idx] += coeff;
    for (const auto& [idx, coeff] : merged) {
      if (coeff == 0.0) continue;
      arows_[r].emplace_back(idx, coeff);
      acols_[idx].emplace_back(r, coeff);
    }
  }
  b_ = Vector::Zero(m_);
  for (int r = 0; r < m_; ++r) b_[r] = prog_.rhs()[r];
  c_ = Vector::Zero(n_);
  for (const auto& [idx, coeff] : prog_.objective()) c_[idx] += coeff;

  Af_.resize(m_, nf_);
  Af_.setZero();
  for (int f = 0; f < nf_; ++f)
    for (const auto& [r, coeff] : acols_[free_flat_[f]]) Af_(r, f) = coeff;

  gathered_.resize(blocks_.size());
  for (size_t bi = 0; bi < blocks_.size(); ++bi) {
    const auto& blk = blocks_[bi];
    if (blk.type != ConeType::SecondOrder && blk.type != ConeType::PSD)
      continue;
    std::vector<int> touched;
    for (int i = 0; i < blk.dim; ++i)
      for (const auto& [r, coeff] : acols_[blk.offset + i]) touched.push_back(r);
    std::sort(touched.begin(), touched.end());
    touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
    GatheredRows g;
    g.row_ids = std::move(touched);
    g.M.resize(static_cast<int>(g.row_ids.size()), blk.dim);
    g.M.setZero();
    std::map<int, int> row_pos;
    for (size_t p = 0; p < g.row_ids.size(); ++p) row_pos[g.row_ids[p]] = static_cast<int>(p);
    for (int i = 0; i < blk.dim; ++i)
      for (const auto& [r, coeff] : acols_[blk.offset + i])
        g.M(row_pos[r], i) = coeff;
    gathered_[bi] = std::move(g);
  }

  nn_scale_.resize(blocks_.size());
  soc_scale_.resize(blocks_.size());
  psd_scale_.resize(blocks_.size());
}

void Ipm::compute_scaling(const Vector& x, const Vector& s, Vector& lam) {
  lam.setZero();
  for (size_t bi = 0; bi < blocks_.size(); ++bi) {
    const auto& blk = blocks_[bi];
    const int o = blk.offset, d = blk.dim;
    switch (blk.type) {
      case ConeType::Free:
        break;
      case ConeType::Nonnegative: {
        auto& sc = nn_scale_[bi];
        sc.w = (x.segment(o, d).array() / s.segment(o, d).array()).sqrt();
        sc.lam = (x.segment(o, d).array() * s.segment(o, d).array()).sqrt();
        lam.segment(o, d) = sc.lam;
        break;
      }
      case ConeType::SecondOrder: {
        auto& sc = soc_scale_[bi];
        const Vector xv = x.segment(o, d), sv = s.segment(o, d);
        const double nx = std::sqrt(std::max(
            1e-300, xv[0] * xv[0] - xv.tail(d - 1).squaredNorm()));
        const double ns = std::sqrt(std::max(
            1e-300, sv[0] * sv[0] - sv.tail(d - 1).squaredNorm()));
        const Vector xb = xv / nx, sb = sv / ns;
        const double gamma = std::sqrt(std::max(1e-300, (1.0 + xb.dot(sb)) / 2.0));
        Vector wbar(d);
        wbar[0] = (xb[0] + sb[0]) / (2 * gamma);
        wbar.tail(d - 1) = (xb.tail(d - 1) - sb.tail(d - 1)) / (2 * gamma);
        sc.wbar = wbar;
        sc.eta = std::sqrt(nx / ns);
        sc.eta2 = nx / ns;
        // lambda = W s = eta * Wbar s
        const double t = wbar.tail(d - 1).dot(sv.tail(d - 1));
        Vector l(d);
        l[0] = wbar[0] * sv[0] + t;
        l.tail(d - 1) = sv.tail(d - 1) +
                        (sv[0] + t / (1.0 + wbar[0])) * wbar.tail(d - 1);
        sc.lam = sc.eta * l;
        lam.segment(o, d) = sc.lam;
        break;
      }
      case ConeType::PSD: {
        auto& sc = psd_scale_[bi];
        const Matrix X = smat(x.segment(o, d), blk.side);
        const Matrix S = smat(s.segment(o, d), blk.side);
        const Matrix Lx = robust_cholesky(X);
        const Matrix Ls = robust_cholesky(S);
        Eigen::JacobiSVD<Matrix> svd(Ls.transpose() * Lx,
                                     Eigen::ComputeFullU | Eigen::ComputeFullV);
        Vector sig = svd.singularValues().cwiseMax(1e-150);
        const Vector isqrt = sig.cwiseSqrt().cwiseInverse();
        sc.R = Lx * svd.matrixV() * isqrt.asDiagonal();
        sc.Rinv = isqrt.asDiagonal() * svd.matrixU().transpose() * Ls.transpose();
        sc.T = sc.R * sc.R.transpose();
        sc.sigma = sig;
        // lambda = diag(sigma) as a matrix
        Matrix L = Matrix::Zero(blk.side, blk.side);
        L.diagonal() = sig;
        lam.segment(o, d) = svec(L);
        break;
      }
    }
  }
}

Vector Ipm::apply_W(const Vector& v) const {
  Vector out = Vector::Zero(n_);
  for (size_t bi = 0; bi < blocks_.size(); ++bi) {
    const auto& blk = blocks_[bi];
    const int o = blk.offset, d = blk.dim;
    switch (blk.type) {
      case ConeType::Free: break;
      case ConeType::Nonnegative:
        out.segment(o, d) =
            nn_scale_[bi].w.array() * v.segment(o, d).array();
        break;
      case ConeType::SecondOrder: {
        const auto& sc = soc_scale_[bi];
        const Vector vv = v.segment(o, d);
        const double t = sc.wbar.tail(d - 1).dot(vv.tail(d - 1));
        out[o] = sc.eta * (sc.wbar[0] * vv[0] + t);
        out.segment(o + 1, d - 1) =
            sc.eta * (vv.tail(d - 1) +
                      (vv[0] + t / (1.0 + sc.wbar[0])) * sc.wbar.tail(d - 1));
        break;
      }
      case ConeType::PSD: {
        const auto& sc = psd_scale_[bi];
        const Matrix V = smat(v.segment(o, d), blk.side);
        out.segment(o, d) = svec(sc.R.transpose() * V * sc.R);
        break;
      }
    }
  }
  return out;
}

Vector Ipm::apply_Wt(const Vector& v) const {
  Vector out = Vector::Zero(n_);
  for (size_t bi = 0; bi < blocks_.size(); ++bi) {
    const auto& blk = blocks_[bi];
    const int o = blk.offset, d = blk.dim;
    switch (blk.type) {
      case ConeType::Free: break;
      case ConeType::Nonnegative:
        // W is diagonal, hence symmetric.
        out.segment(o, d) =
            nn_scale_[bi].w.array() * v.segment(o, d).array();
        break;
      case ConeType::SecondOrder: {
        // W is a symmetric matrix for this cone.
        const auto& sc = soc_scale_[bi];
        const Vector vv = v.segment(o, d);
        const double t = sc.wbar.tail(d - 1).dot(vv.tail(d - 1));
        out[o] = sc.eta * (sc.wbar[0] * vv[0] + t);
        out.segment(o + 1, d - 1) =
            sc.eta * (vv.tail(d - 1) +
                      (vv[0] + t / (1.0 + sc.wbar[0])) * sc.wbar.tail(d - 1));
        break;
      }
      case ConeType::PSD: {
        const auto& sc = psd_scale_[bi];
        const Matrix V = smat(v.segment(o, d), blk.side);
        out.segment(o, d) = svec(sc.R * V * sc.R.transpose());
        break;
      }
    }
  }
  return out;
}

Vector Ipm::apply_WinvT(const Vector& v) const {
  Vector out = Vector::Zero(n_);
  for (size_t bi = 0; bi < blocks_.size(); ++bi) {
    const auto& blk = blocks_[bi];
    const int o = blk.offset, d = blk.dim;
    switch (blk.type) {
      case ConeType::Free: break;
      case ConeType::Nonnegative:
        out.segment(o, d) =
            v.segment(o, d).array() / nn_scale_[bi].w.array();
        break;
      case ConeType::SecondOrder: {
        // W^(-1) = eta^(-1) J Wbar J
        const auto& sc = soc_scale_[bi];
        const Vector vv = v.segment(o, d);
        const double t = sc.wbar.tail(d - 1).dot(vv.tail(d - 1));
        out[o] = (sc.wbar[0] * vv[0] - t) / sc.eta;
        out.segment(o + 1, d - 1) =
            (vv.tail(d - 1) +
             (-vv[0] + t / (1.0 + sc.wbar[0])) * sc.wbar.tail(d - 1)) /
            sc.eta;
        break;
      }
      case ConeType::PSD: {
        const auto& sc = psd_scale_[bi];
        const Matrix V = smat(v.segment(o, d), blk.side);
        out.segment(o, d) = svec(sc.Rinv * V * sc.Rinv.transpose());
        break;
      }
    }
  }
  return out;
}

Vector Ipm::apply_H(const Vector& v) const {
  Vector out = Vector::Zero(n_);
  for (size_t bi = 0; bi < blocks_.size(); ++bi) {
    const auto& blk = blocks_[bi];
    const int o = blk.offset, d = blk.dim;
    switch (blk.type) {
      case ConeType::Free: break;
      case ConeType::Nonnegative:
        out.segment(o, d) = nn_scale_[bi].w.array().square() *
                            v.segment(o, d).array();
        break;
      case ConeType::SecondOrder: {
        const auto& sc = soc_scale_[bi];
        const Vector vv = v.segment(o, d);
        const double t = sc.wbar.dot(vv);
        Vector jv(d);
        jv[0] = vv[0];
        jv.tail(d - 1) = -vv.tail(d - 1);
        out.segment(o, d) = sc.eta2 * (2.0 * t * sc.wbar - jv);
        break;
      }
      case ConeType::PSD: {
        const auto& sc = psd_scale_[bi];
        const Matrix V = smat(v.segment(o, d), blk.side);
        out.segment(o, d) = svec(sc.T * V * sc.T);
        break;
      }
    }
  }
  return out;
}

Vector Ipm::arrow_solve(const Vector& lam, const Vector& d) const {
  Vector out = Vector::Zero(n_);
  for (size_t bi = 0; bi < blocks_.size(); ++bi) {
    const auto& blk = blocks_[bi];
    const int o = blk.offset, dim = blk.dim;
    switch (blk.type) {
      case ConeType::Free: break;
      case ConeType::Nonnegative:
        out.segment(o, dim) =
            d.segment(o, dim).array() / lam.segment(o, dim).array();
        break;
      case ConeType::SecondOrder: {
        const Vector l = lam.segment(o, dim), dv = d.segment(o, dim);
        const double den = l[0] * l[0] - l.tail(dim - 1).squaredNorm();
        const double z0 =
            (l[0] * dv[0] - l.tail(dim - 1).dot(dv.tail(dim - 1))) / den;
        out[o] = z0;
        out.segment(o + 1, dim - 1) =
            (dv.tail(dim - 1) - z0 * l.tail(dim - 1)) / l[0];
        break;
      }
      case ConeType::PSD: {
        const auto& sc = psd_scale_[bi];
        const Matrix D = smat(d.segment(o, dim), blk.side);
        Matrix Z(blk.side, blk.side);
        for (int r = 0; r < blk.side; ++r)
          for (int cc = 0; cc < blk.side; ++cc)
            Z(r, cc) = 2.0 * D(r, cc) / (sc.sigma[r] + sc.sigma[cc]);
        out.segment(o, dim) = svec(Z);
        break;
      }
    }
  }
  return out;
}

Vector Ipm::jordan_product(const Vector& u, const Vector& v) const {
  Vector out = Vector::Zero(n_);
  for (const auto& blk : blocks_) {
    const int o = blk.offset, d = blk.dim;
    switch (blk.type) {
      case ConeType::Free: break;
      case ConeType::Nonnegative:
        out.segment(o, d) = u.segment(o, d).array() * v.segment(o, d).array();
        break;
      case ConeType::SecondOrder: {
        const Vector uu = u.segment(o, d), vv = v.segment(o, d);
        out[o] = uu.dot(vv);
        out.segment(o + 1, d - 1) =
            uu[0] * vv.tail(d - 1) + vv[0] * uu.tail(d - 1);
        break;
      }
      case ConeType::PSD: {
        const Matrix U = smat(u.segment(o, d), blk.side);
        const Matrix V = smat(v.segment(o, d), blk.side);
        out.segment(o, d) = svec(0.5 * (U * V + V * U));
        break;
      }
    }
  }
  return out;
}

Vector Ipm::cone_identity() const {
  Vector e = Vector::Zero(n_);
  for (const auto& blk : blocks_) {
    switch (blk.type) {
      case ConeType::Free: break;
      case ConeType::Nonnegative:
        e.segment(blk.offset, blk.dim).setOnes();
        break;
      case ConeType::SecondOrder:
        e[blk.offset] = 1.0;
        break;
      case ConeType::PSD:
        e.segment(blk.offset, blk.dim) =
            svec(Matrix::Identity(blk.side, blk.side));
        break;
    }
  }
  return e;
}

Vector Ipm::A_mul(const Vector& x) const {
  Vector out = Vector::Zero(m_);
  for (int r = 0; r < m_; ++r) {
    double acc = 0.0;
    for (const auto& [idx, coeff] : arows_[r]) acc += coeff * x[idx];
    out[r] = acc;
  }
  return out;
}

Vector Ipm::At_mul(const Vector& y) const {
  Vector out = Vector::Zero(n_);
  for (int r = 0; r < m_; ++r) {
    const double yr = y[r];
    if (yr == 0.0) continue;
    for (const auto& [idx, coeff] : arows_[r]) out[idx] += coeff * yr;
  }
  return out;
}

void Ipm::assemble_schur(Matrix& G) const {
  G.setZero();
  for (size_t bi = 0; bi < blocks_.size(); ++bi) {
    const auto& blk = blocks_[bi];
    switch (blk.type) {
      case ConeType::Free: break;
      case ConeType::Nonnegative: {
        const auto& sc = nn_scale_[bi];
        for (int i = 0; i < blk.dim; ++i) {
          const double h = sc.w[i] * sc.w[i];
          const auto& col = acols_[blk.offset + i];
          for (const auto& [r1, c1] : col)
            for (const auto& [r2, c2] : col) G(r1, r2) += h * c1 * c2;
        }
        break;
      }
      case ConeType::SecondOrder: {
        const auto& g = gathered_[bi];
        if (g.row_ids.empty()) break;
        const auto& sc = soc_scale_[bi];
        const int d = blk.dim;
        // N = M H = eta2 (2 (M wbar) wbar' - M J)
        Matrix MJ = g.M;
        MJ.rightCols(d - 1) *= -1.0;
        const Vector Mw = g.M * sc.wbar;
        Matrix N = sc.eta2 * (2.0 * Mw * sc.wbar.transpose() - MJ);
        Matrix contrib = N * g.M.transpose();
        for (size_t p = 0; p < g.row_ids.size(); ++p)
          for (size_t q = 0; q < g.row_ids.size(); ++q)
            G(g.row_ids[p], g.row_ids[q]) += contrib(p, q);
        break;
      }
      case ConeType::PSD: {
        const auto& g = gathered_[bi];
        if (g.row_ids.empty()) break;
        const auto& sc = psd_scale_[bi];
        Matrix N(g.M.rows(), g.M.cols());
        for (int p = 0; p < g.M.rows(); ++p) {
          const Matrix V = smat(g.M.row(p).transpose(), blk.side);
          N.row(p) = svec(sc.T * V * sc.T).transpose();
        }
        Matrix contrib = N * g.M.transpose();
        for (size_t p = 0; p < g.row_ids.size(); ++p)
          for (size_t q = 0; q < g.row_ids.size(); ++q)
            G(g.row_ids[p], g.row_ids[q]) += contrib(p, q);
        break;
      }
    }
  }
  G = 0.5 * (G + G.transpose()).eval();
}

double Ipm::boundary_step(const Vector& z, const Vector& dz) const {
  double alpha = kInfinity;
  for (size_t bi = 0; bi < blocks_.size(); ++bi) {
    const auto& blk = blocks_[bi];
    const int o = blk.offset, d = blk.dim;
    switch (blk.type) {
      case ConeType::Free: break;
      case ConeType::Nonnegative:
        for (int i = 0; i < d; ++i)
          if (dz[o + i] < 0.0)
            alpha = std::min(alpha, -z[o + i] / dz[o + i]);
        break;
      case ConeType::SecondOrder: {
        const Vector zz = z.segment(o, d), dd = dz.segment(o, d);
        const double a2 = dd[0] * dd[0] - dd.tail(d - 1).squaredNorm();
        const double a1 = zz[0] * dd[0] - zz.tail(d - 1).dot(dd.tail(d - 1));
        const double a0 = zz[0] * zz[0] - zz.tail(d - 1).squaredNorm();
        double best = kInfinity;
        if (std::abs(a2) < 1e-300) {
          if (a1 < 0.0) best = -a0 / (2.0 * a1);
        } else {
          const double disc = a1 * a1 - a2 * a0;
          if (disc >= 0.0) {
            const double sq = std::sqrt(disc);
            for (double root : {(-a1 - sq) / a2, (-a1 + sq) / a2})
              if (root > 0.0) best = std::min(best, root);
          }
        }
        // Guard the half-space z0 + alpha d0 >= 0 as well.
        if (dd[0] < 0.0) best = std::min(best, -zz[0] / dd[0]);
        alpha = std::min(alpha, best);
        break;
      }
      case ConeType::PSD: {
        const Matrix Z = smat(z.segment(o, d), blk.side);
        const Matrix D = smat(dz.segment(o, d), blk.side);
        const Matrix L = robust_cholesky(Z);
        const Matrix M = L.triangularView<Eigen::Lower>().solve(
            L.triangularView<Eigen::Lower>().solve(D).transpose());
        Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (M + M.transpose()),
                                                 Eigen::EigenvaluesOnly);
        const double lmin = es.eigenvalues().minCoeff();
        if (lmin < 0.0) alpha = std::min(alpha, -1.0 / lmin);
        break;
      }
    }
  }
  return alpha;
}

Ipm::Direction Ipm::newton(const Eigen::LDLT<Matrix>& Gfact, const Matrix& Zf,
                           const Eigen::LDLT<Matrix>& Sf, const Vector& rp,
                           const Vector& rd, const Vector& ds_rhs,
                           const Vector& lam) const {
  const Vector psi = arrow_solve(lam, ds_rhs);
  const Vector wpsi = apply_Wt(psi);
  Vector rdK = rd;
  for (int f : free_flat_) rdK[f] = 0.0;
  const Vector t1 = wpsi - apply_H(rdK);
  const Vector g = rp - A_mul(t1);

  Vector rdf(nf_);
  for (int f = 0; f < nf_; ++f) rdf[f] = rd[free_flat_[f]];

  auto bordered_solve = [&](const Vector& rhs1, const Vector& rhs2,
                            Vector& dy, Vector& dxf) {
    const Vector w = Gfact.solve(rhs1);
    if (nf_ > 0) {
      dxf = Sf.solve(Af_.transpose() * w - rhs2);
      dy = w - Zf * dxf;
    } else {
      dxf.resize(0);
      dy = w;
    }
  };

  Vector dy, dxf;
  bordered_solve(g, rdf, dy, dxf);
  // One pass of iterative refinement on the bordered system; G*dy is
  // recomputed matrix-free as A_K H A_K' dy.
  {
    Vector ady = At_mul(dy);
    for (int f : free_flat_) ady[f] = 0.0;
    Vector res1 = g - A_mul(apply_H(ady));
    if (nf_ > 0) res1 -= Af_ * dxf;
    Vector res2(nf_);
    if (nf_ > 0) res2 = rdf - Af_.transpose() * dy;
    if (res1.norm() > 1e-14 * (1.0 + g.norm()) ||
        (nf_ > 0 && res2.norm() > 1e-14 * (1.0 + rdf.norm()))) {
      Vector cy, cxf;
      bordered_solve(res1, nf_ > 0 ? Vector(res2) : Vector(Vector::Zero(0)),
                     cy, cxf);
      dy += cy;
      if (nf_ > 0) dxf += cxf;
    }
  }

  Direction dir;
  dir.dy = dy;
  dir.ds = rd - At_mul(dy);
  for (int f : free_flat_) dir.ds[f] = 0.0;
  dir.dx = wpsi - apply_H(dir.ds);
  for (int f = 0; f < nf_; ++f) dir.dx[free_flat_[f]] = dxf[f];
  return dir;
}

ConicSolution Ipm::run() {
  ConicSolution sol;
  if (m_ == 0) throw std::invalid_argument("conic solve: no constraints");

  const double init =
      (std::isfinite(tol_.init_scale) && tol_.init_scale > 0.0)
          ? tol_.init_scale
          : 1.0;
  Vector x = init * cone_identity();
  Vector s = init * cone_identity();
  Vector y = Vector::Zero(m_);
  const Vector e = cone_identity();

  const double bnorm = b_.norm(), cnorm = c_.norm();

  double best_phi = kInfinity;
  Vector best_x = x, best_y = y, best_s = s;
  double best_pres = kInfinity, best_gap = kInfinity;
  int stall = 0;

  Matrix G(m_, m_);
  Vector lam(n_);

  SolveStatus status = SolveStatus::NumericalFailure;
  int iter = 0;
  for (; iter < tol_.max_iterations; ++iter) {
    const Vector rp = b_ - A_mul(x);
    const Vector rd_full = c_ - At_mul(y) - s;
    const double pres = rp.norm() / (1.0 + bnorm);
    const double dres = rd_full.norm() / (1.0 + cnorm);
    const double cx = c_.dot(x), by = b_.dot(y);
    const double relgap =
        std::abs(cx - by) / std::max({1.0, std::abs(cx), std::abs(by)});
    double mu = x.dot(s) / nu_;
    const double phi = std::max({pres, dres, relgap});

    if (tol_.verbose) {
      const double by = b_.dot(y);
      const double cert =
          by > 0 ? (At_mul(y) + s).norm() / by : kInfinity;
      std::cerr << "iter " << iter << " pres " << pres << " dres " << dres
                << " gap " << relgap << " mu " << mu << " b'y " << by
                << " cert " << cert << "\n";
    }

    if (phi < best_phi) {
      best_phi = phi;
      best_x = x;
      best_y = y;
      best_s = s;
      best_pres = pres;
      best_gap = relgap;
      stall = 0;
    } else if (++stall >= 10) {
      break;
    }

    if (pres <= tol_.feasibility && dres <= tol_.feasibility &&
        relgap <= tol_.gap) {
      status = SolveStatus::Optimal;
      best_x = x; best_y = y; best_s = s;
      best_pres = pres; best_gap = relgap;
      break;
    }

    // Primal infeasibility certificate: A'y + s ~ 0, s in K*, b'y > 0.
    if (iter >= 3) {
      const double by_pos = b_.dot(y);
      if (by_pos > 1e-8 * std::max(1.0, bnorm)) {
        const double cert = (At_mul(y) + s).norm() / by_pos;
        if (cert <= 1e-7 * std::max(1.0, cnorm)) {
          status = SolveStatus::Infeasible;
          best_y = y; best_s = s;
          break;
        }
      }
    }
    if (mu < 1e-300) break;

    compute_scaling(x, s, lam);
    assemble_schur(G);
    const double gscale = std::max(1.0, G.diagonal().cwiseAbs().maxCoeff());
    G.diagonal().array() += 1e-12 * gscale;
    Eigen::LDLT<Matrix> Gfact(G);
    {
      double ridge = 1e-10 * gscale;
      int tries = 0;
      while (Gfact.info() != Eigen::Success && tries++ < 6) {
        G.diagonal().array() += ridge;
        ridge *= 100.0;
        Gfact.compute(G);
      }
      if (Gfact.info() != Eigen::Success) break;
    }
    Matrix Zf;
    Eigen::LDLT<Matrix> Sf;
    if (nf_ > 0) {
      Zf = Gfact.solve(Af_);
      Matrix SfM = Af_.transpose() * Zf;
      SfM.diagonal().array() +=
          1e-12 * std::max(1.0, SfM.diagonal().cwiseAbs().maxCoeff());
      Sf.compute(SfM);
      if (Sf.info() != Eigen::Success) break;
    }

    // Affine (predictor) direction.
    const Vector lam_sq = jordan_product(lam, lam);
    Direction aff = newton(Gfact, Zf, Sf, rp, rd_full, -lam_sq, lam);
    const double alpha_aff =
        std::min({1.0, boundary_step(x, aff.dx), boundary_step(s, aff.ds)});
    const double mu_aff =
        (x + alpha_aff * aff.dx).dot(s + alpha_aff * aff.ds) / nu_;
    double sigma = std::pow(std::max(0.0, mu_aff / mu), 3.0);
    sigma = std::clamp(sigma, 1e-10, 1.0);

    // Combined (corrector) direction.
    const Vector corr =
        jordan_product(apply_WinvT(aff.dx), apply_W(aff.ds));
    const Vector ds_rhs = sigma * mu * e - lam_sq - corr;
    Direction dir = newton(Gfact, Zf, Sf, rp, rd_full, ds_rhs, lam);

    double alpha = std::min(
        {1.0, kStepFraction * boundary_step(x, dir.dx),
         kStepFraction * boundary_step(s, dir.ds)});
    if (!(alpha > 1e-9)) break;

    x += alpha * dir.dx;
    y += alpha * dir.dy;
    s += alpha * dir.ds;
  }

  if (status == SolveStatus::NumericalFailure && best_phi <= 1e-5)
    status = SolveStatus::NearOptimal;

  sol.x = best_x;
  sol.y = best_y;
  sol.s = best_s;
  sol.status = status;
  sol.iterations = iter;
  sol.objective = prog_.eval_objective(best_x);
  sol.constraint_residual = best_pres;
  sol.duality_gap = best_gap;
  double psd_min = 0.0;
  for (const auto& blk : blocks_) {
    if (blk.type != ConeType::PSD) continue;
    psd_min = std::min(
        psd_min, min_eigenvalue(smat(best_x.segment(blk.offset, blk.dim),
                                     blk.side)));
  }
  sol.psd_residual = psd_min;
  return sol;
}

}  // namespace

ConicSolution solve(const ConicProgram& prog, const SolveTolerances& tol) {
  Ipm ipm(prog, tol);
  return ipm.run();
}

}  // namespace lrbb::conic
