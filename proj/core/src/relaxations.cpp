#include "lrbb/relaxations.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>

#include "lrbb/rng.hpp"

namespace lrbb {

using conic::ConicProgram;
using conic::VarRef;

namespace {

// ---------------------------------------------------------------------------
// Shared moment registry
// ---------------------------------------------------------------------------
// Canonical variable slots for moments that several LMI blocks mention.  The
// first block to mention a moment owns the slot; later mentions are tied to
// it with equality rows.  Keys:
//   kW(t,i,j)          X^t_ij * X^t_ij         (diagonal W)
//   kRowProd(t,i,a,b)  X^t_ia * X^t_ib         (V1: same row, column pair)
//   kColProd(t,j,a,b)  X^t_aj * X^t_bj         (V2: same column, row pair)
//   kCross(t,...)      X^t_i1j1 * X^t_i2j2     (V3: both cross products of a
//                                               minor agree at rank one)
//   kSlice(t,i,j)      X^t_ij itself
//   kH(t,t',i,j)       X^t_ij * X^{t'}_ij      (cross-slice)

enum MomentKind { kW = 0, kRowProd, kColProd, kCross, kSlice, kH };

using MomentKey = std::tuple<int, int, int, int, int, int>;

class Registry {
 public:
  // Canonical ref for the key; candidate becomes canonical on first use,
  // later candidates get tied to the canonical slot by an equality row.
  VarRef bind(ConicProgram& prog, const MomentKey& key, VarRef candidate) {
    auto [it, fresh] = map_.try_emplace(key, candidate);
    if (!fresh) {
      const int row = prog.add_row(0.0);
      prog.add_term(row, candidate, 1.0);
      prog.add_term(row, it->second, -1.0);
    }
    return it->second;
  }

  const VarRef* find(const MomentKey& key) const {
    auto it = map_.find(key);
    return it == map_.end() ? nullptr : &it->second;
  }

 private:
  std::map<MomentKey, VarRef> map_;
};

// Small linear expression (for W expansions that span several variables).
struct LinExpr {
  std::vector<std::pair<VarRef, double>> terms;
  void add(VarRef v, double c) { terms.emplace_back(v, c); }
};

void add_expr(ConicProgram& prog, int row, const LinExpr& e, double s = 1.0) {
  for (const auto& [v, c] : e.terms) prog.add_term(row, v, s * c);
}

void obj_expr(ConicProgram& prog, const LinExpr& e, double s = 1.0) {
  for (const auto& [v, c] : e.terms) prog.obj_term(v, s * c);
}

// ---------------------------------------------------------------------------
// Base construction shared by all relaxations
// ---------------------------------------------------------------------------

// [[Y, X], [X', Theta]] >= 0 with 0 <= Y <= I and tr Y <= k, all named.
struct Base {
  const CompletionInstance* inst = nullptr;
  int P = -1;  // psd block of side n + m

  VarRef Y(const ConicProgram& p, int r, int c) const {
    return p.psd_entry(P, r, c);
  }
  VarRef X(const ConicProgram& p, int i, int j) const {
    return p.psd_entry(P, inst->n + j, i);  // column j lives at n + j
  }
  VarRef Th(const ConicProgram& p, int r, int c) const {
    return p.psd_entry(P, inst->n + r, inst->n + c);
  }
};

Base add_base(ConicProgram& prog, const CompletionInstance& inst) {
  const int n = inst.n, m = inst.m;
  Base base;
  base.inst = &inst;
  base.P = prog.add_psd(n + m);

  // Y <= I through a PSD slack: Y_rc + S_rc = delta_rc.
  const int S = prog.add_psd(n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c <= r; ++c) {
      const int row = prog.add_row(r == c ? 1.0 : 0.0);
      prog.add_term(row, base.Y(prog, r, c), 1.0);
      prog.add_term(row, prog.psd_entry(S, r, c), 1.0);
    }
  // tr Y + t = k, t >= 0.
  const int t = prog.add_nonneg(1);
  const int tr = prog.add_row(inst.k);
  for (int r = 0; r < n; ++r) prog.add_term(tr, base.Y(prog, r, r), 1.0);
  prog.add_term(tr, prog.var(t, 0), 1.0);

  prog.name_matrix("Y", n, n, /*symmetric=*/true);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) prog.name_entry("Y", r, c, base.Y(prog, r, c));
  prog.name_matrix("X", n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) prog.name_entry("X", i, j, base.X(prog, i, j));
  prog.name_matrix("Theta", m, m, /*symmetric=*/true);
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < m; ++c)
      prog.name_entry("Theta", r, c, base.Th(prog, r, c));
  return base;
}

// Data-fit part of the objective.  Basis pursuit pins the observed entries
// and keeps the pure tr(Theta) = |X|_F^2 surrogate objective; the noisy mode
// adds the least-squares term through one epigraph cone over all residuals:
// (a, r_1..r_E, c) in SOC with a - c = 1 makes (a+c)/2 >= 0.5 sum r_e^2.
template <typename XRef, typename ThRef>
void add_data_objective(ConicProgram& prog, const CompletionInstance& inst,
                        XRef Xref, ThRef Thref) {
  const double theta_coeff =
      inst.mode == InstanceMode::BasisPursuit ? 1.0 : 0.5 / inst.gamma;
  for (int j = 0; j < inst.m; ++j) prog.obj_term(Thref(j, j), theta_coeff);

  const auto& pairs = inst.mask.pairs();
  if (inst.mode == InstanceMode::BasisPursuit) {
    for (const auto& [i, j] : pairs) {
      const int row = prog.add_row(inst.observed(i, j));
      prog.add_term(row, Xref(i, j), 1.0);
    }
    return;
  }
  const int E = static_cast<int>(pairs.size());
  const int ep = prog.add_soc(E + 2);
  const int unit = prog.add_row(1.0);  // a - c = 1
  prog.add_term(unit, prog.var(ep, 0), 1.0);
  prog.add_term(unit, prog.var(ep, E + 1), -1.0);
  for (int e = 0; e < E; ++e) {
    const auto& [i, j] = pairs[e];
    const int row = prog.add_row(-inst.observed(i, j));  // r_e - X_ij = -A_ij
    prog.add_term(row, prog.var(ep, 1 + e), 1.0);
    prog.add_term(row, Xref(i, j), -1.0);
  }
  prog.obj_term(prog.var(ep, 0), 0.5);
  prog.obj_term(prog.var(ep, E + 1), 0.5);
}

// Shor-style data fit: quadratic residual terms are re-expressed through the
// moment surrogate W_ij >= X_ij^2, keeping the objective linear:
//   0.5 (X_ij - A_ij)^2 -> 0.5 W_ij - A_ij X_ij + 0.5 A_ij^2.
template <typename XRef, typename ThRef, typename WExpr>
void add_shor_objective(ConicProgram& prog, const CompletionInstance& inst,
                        XRef Xref, ThRef Thref, WExpr Wexpr) {
  const double theta_coeff =
      inst.mode == InstanceMode::BasisPursuit ? 1.0 : 0.5 / inst.gamma;
  for (int j = 0; j < inst.m; ++j) prog.obj_term(Thref(j, j), theta_coeff);

  if (inst.mode == InstanceMode::BasisPursuit) {
    for (const auto& [i, j] : inst.mask.pairs()) {
      const int row = prog.add_row(inst.observed(i, j));
      prog.add_term(row, Xref(i, j), 1.0);
    }
    return;
  }
  for (const auto& [i, j] : inst.mask.pairs()) {
    const double a = inst.observed(i, j);
    obj_expr(prog, Wexpr(i, j), 0.5);
    prog.obj_term(Xref(i, j), -a);
    prog.add_obj_constant(0.5 * a * a);
  }
}

// Factor block [[Y, U], [U', I_k]] tied to the base's Y; names U.
// Returns the psd block id (side n + k).
int add_factor_block(ConicProgram& prog, const Base& base) {
  const int n = base.inst->n, k = base.inst->k;
  const int L = prog.add_psd(n + k);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c <= r; ++c) {
      const int row = prog.add_row(0.0);
      prog.add_term(row, prog.psd_entry(L, r, c), 1.0);
      prog.add_term(row, base.Y(prog, r, c), -1.0);
    }
  for (int a = 0; a < k; ++a)
    for (int b = 0; b <= a; ++b) {
      const int row = prog.add_row(a == b ? 1.0 : 0.0);
      prog.add_term(row, prog.psd_entry(L, n + a, n + b), 1.0);
    }
  prog.name_matrix("U", n, k);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j)
      prog.name_entry("U", i, j, prog.psd_entry(L, n + j, i));
  return L;
}

// Interval rows and the aggregate piecewise cut of one disjunction branch.
// `aggregate` off keeps only the interval rows: a relaxation of the branch
// used to recover a valid (weaker) bound when the full program resists the
// interior-point method numerically.
void add_branch_rows(ConicProgram& prog, const Base& base, const int L,
                     const DisjunctionBranch& branch, bool aggregate) {
  const int n = base.inst->n, k = base.inst->k;
  const DisjunctionCut& cut = *branch.cut;
  if (cut.k() != k || cut.x.size() != n)
    throw std::invalid_argument("disjunction branch does not fit instance");
  auto Uref = [&](int i, int j) { return prog.psd_entry(L, n + j, i); };

  double intercept_sum = 0.0;
  for (int j = 0; j < k; ++j)
    intercept_sum += cut.columns[j].pieces.at(branch.z[j]).intercept;

  // x'Yx - sum_j slope_j (U_j'x) + s = sum_j intercept_j
  const int agg = aggregate ? prog.add_row(intercept_sum) : -1;
  for (int j = 0; j < k; ++j) {
    const Piece& p = cut.columns[j].pieces.at(branch.z[j]);
    // b_lo <= U_j'x:   sum_i x_i U_ij - s = b_lo
    const int slo = prog.add_nonneg(1);
    const int rlo = prog.add_row(p.lo);
    // U_j'x <= b_up:   sum_i x_i U_ij + s = b_up
    const int sup = prog.add_nonneg(1);
    const int rup = prog.add_row(p.up);
    for (int i = 0; i < n; ++i) {
      prog.add_term(rlo, Uref(i, j), cut.x[i]);
      prog.add_term(rup, Uref(i, j), cut.x[i]);
      if (aggregate) prog.add_term(agg, Uref(i, j), -p.slope * cut.x[i]);
    }
    prog.add_term(rlo, prog.var(slo, 0), -1.0);
    prog.add_term(rup, prog.var(sup, 0), 1.0);
  }
  if (!aggregate) return;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c <= r; ++c) {
      const double coeff = (r == c) ? cut.x[r] * cut.x[r]
                                    : 2.0 * cut.x[r] * cut.x[c];
      prog.add_term(agg, base.Y(prog, r, c), coeff);
    }
  const int sagg = prog.add_nonneg(1);
  prog.add_term(agg, prog.var(sagg, 0), 1.0);
}

// ---------------------------------------------------------------------------
// Shor block machinery
// ---------------------------------------------------------------------------

void validate_minor(const CompletionInstance& inst, const Minor& mn) {
  if (mn.i1 < 0 || mn.i1 >= mn.i2 || mn.i2 >= inst.n || mn.j1 < 0 ||
      mn.j1 >= mn.j2 || mn.j2 >= inst.m)
    throw std::invalid_argument("minor indices out of range or unordered");
}

// The 5x5 Shor block of one 2x2 minor in slice t.  Entries of the moment
// matrix over (1, X_i1j1, X_i1j2, X_i2j1, X_i2j2):
//   row 0: the constant 1 and the four entry values,
//   interior: pairwise products, registered so blocks sharing a product
//   share one variable.  The minor's two cross products X_i1j1 X_i2j2 and
//   X_i1j2 X_i2j1 coincide when the slice has rank one, hence one key.
void add_minor_block(ConicProgram& prog, Registry& reg, int t,
                     const Minor& mn, const std::array<VarRef, 4>& xrefs) {
  const int B = prog.add_psd(5);
  const int pin = prog.add_row(1.0);
  prog.add_term(pin, prog.psd_entry(B, 0, 0), 1.0);
  for (int r = 1; r <= 4; ++r) {
    const int row = prog.add_row(0.0);
    prog.add_term(row, prog.psd_entry(B, r, 0), 1.0);
    prog.add_term(row, xrefs[r - 1], -1.0);
  }
  const int i1 = mn.i1, i2 = mn.i2, j1 = mn.j1, j2 = mn.j2;
  auto bind = [&](int r, int c, MomentKey key) {
    reg.bind(prog, key, prog.psd_entry(B, r, c));
  };
  const MomentKey cross{kCross, t, i1, i2, j1, j2};
  bind(1, 1, {kW, t, i1, j1, 0, 0});
  bind(2, 1, {kRowProd, t, i1, j1, j2, 0});
  bind(2, 2, {kW, t, i1, j2, 0, 0});
  bind(3, 1, {kColProd, t, j1, i1, i2, 0});
  bind(3, 2, cross);
  bind(3, 3, {kW, t, i2, j1, 0, 0});
  bind(4, 1, cross);
  bind(4, 2, {kColProd, t, j2, i1, i2, 0});
  bind(4, 3, {kRowProd, t, i2, j1, j2, 0});
  bind(4, 4, {kW, t, i2, j2, 0, 0});
}

// Moment matrix of the slice values at one entry: side k+1 over
// (1, X^1_ij, ..., X^k_ij).  Diagonal defines W^t_ij, off-diagonal the
// cross-slice products H^{t,t'}_ij.  When a slot already has a canonical
// variable (slice value pinned to a big block, W owned by another block)
// the registry ties them.
int add_entry_moment_block(ConicProgram& prog, Registry& reg, int k, int i,
                           int j) {
  const int B = prog.add_psd(k + 1);
  const int pin = prog.add_row(1.0);
  prog.add_term(pin, prog.psd_entry(B, 0, 0), 1.0);
  for (int t = 0; t < k; ++t) {
    reg.bind(prog, {kSlice, t, i, j, 0, 0}, prog.psd_entry(B, t + 1, 0));
    reg.bind(prog, {kW, t, i, j, 0, 0}, prog.psd_entry(B, t + 1, t + 1));
    for (int u = 0; u < t; ++u)
      reg.bind(prog, {kH, u, t, i, j, 0}, prog.psd_entry(B, t + 1, u + 1));
  }
  return B;
}

// Theta diagonal linking: Theta_jj = sum_i W_ij with W_ij given as a linear
// expression (single variable at rank one, sums of moments otherwise).
template <typename ThRef, typename WExpr>
void add_theta_diag_rows(ConicProgram& prog, const CompletionInstance& inst,
                         ThRef Thref, WExpr Wexpr) {
  for (int j = 0; j < inst.m; ++j) {
    const int row = prog.add_row(0.0);
    prog.add_term(row, Thref(j, j), 1.0);
    for (int i = 0; i < inst.n; ++i) add_expr(prog, row, Wexpr(i, j), -1.0);
  }
}

std::vector<Minor> combined_minors(const MinorSet& sel) {
  std::vector<Minor> all;
  all.reserve(sel.m4.size() + sel.m3.size() + sel.m2.size() + sel.m1.size());
  auto push = [&all](const std::vector<Minor>& v) {
    all.insert(all.end(), v.begin(), v.end());
  };
  push(sel.m4);
  push(sel.m3);
  push(sel.m2);
  push(sel.m1);
  std::sort(all.begin(), all.end(), [](const Minor& a, const Minor& b) {
    return std::tie(a.i1, a.i2, a.j1, a.j2) <
           std::tie(b.i1, b.i2, b.j1, b.j2);
  });
  all.erase(std::unique(all.begin(), all.end(),
                        [](const Minor& a, const Minor& b) {
                          return a.i1 == b.i1 && a.i2 == b.i2 &&
                                 a.j1 == b.j1 && a.j2 == b.j2;
                        }),
            all.end());
  return all;
}

}  // namespace

// ---------------------------------------------------------------------------
// Minor enumeration and selection
// ---------------------------------------------------------------------------

MinorSet enumerate_minors(const CompletionInstance& inst) {
  MinorSet out;
  // Group observed columns by row once; pair rows and intersect/union.
  std::vector<std::vector<int>> row_cols(inst.n);
  for (const auto& [i, j] : inst.mask.pairs()) row_cols[i].push_back(j);
  for (auto& cols : row_cols) std::sort(cols.begin(), cols.end());

  std::vector<char> in_first(inst.m, 0);
  for (int i1 = 0; i1 < inst.n; ++i1) {
    if (row_cols[i1].empty()) continue;
    for (int j : row_cols[i1]) in_first[j] = 1;
    for (int i2 = i1 + 1; i2 < inst.n; ++i2) {
      if (row_cols[i2].empty()) continue;
      // Columns observed in both rows and in exactly one row.
      std::vector<int> both, only2;
      for (int j : row_cols[i2]) (in_first[j] ? both : only2).push_back(j);
      std::vector<int> only1;
      for (int j : row_cols[i1])
        if (!std::binary_search(row_cols[i2].begin(), row_cols[i2].end(), j))
          only1.push_back(j);

      // Four observed: both columns seen by both rows.
      for (size_t a = 0; a < both.size(); ++a)
        for (size_t b = a + 1; b < both.size(); ++b)
          out.m4.push_back({i1, i2, both[a], both[b], 4});
      // Three observed: one shared column, one column seen by one row.
      for (int js : both) {
        for (int jo : only1) {
          const int j1 = std::min(js, jo), j2 = std::max(js, jo);
          out.m3.push_back({i1, i2, j1, j2, 3});
        }
        for (int jo : only2) {
          const int j1 = std::min(js, jo), j2 = std::max(js, jo);
          out.m3.push_back({i1, i2, j1, j2, 3});
        }
      }
      // Two observed, in two patterns: diagonal (one entry per row, distinct
      // columns) or same-row/column pairs.
      for (int ja : only1)
        for (int jb : only2)
          if (ja != jb)
            out.m2.push_back(
                {i1, i2, std::min(ja, jb), std::max(ja, jb), 2});
      for (int js : both) {
        (void)js;  // both entries in one column: covered below
      }
      // Same-column pair (both rows observe j, second column unobserved in
      // both rows) and same-row pairs are tag-2/tag-1 minors as well; they
      // are cheap to enumerate directly from the complements.
      std::vector<int> neither;
      neither.reserve(inst.m);
      for (int j = 0; j < inst.m; ++j) {
        const bool a = std::binary_search(row_cols[i1].begin(),
                                          row_cols[i1].end(), j);
        const bool b = std::binary_search(row_cols[i2].begin(),
                                          row_cols[i2].end(), j);
        if (!a && !b) neither.push_back(j);
      }
      for (int js : both)
        for (int ju : neither)
          out.m2.push_back(
              {i1, i2, std::min(js, ju), std::max(js, ju), 2});
      for (size_t a = 0; a < only1.size(); ++a)
        for (size_t b = a + 1; b < only1.size(); ++b)
          out.m2.push_back({i1, i2, only1[a], only1[b], 2});
      for (size_t a = 0; a < only2.size(); ++a)
        for (size_t b = a + 1; b < only2.size(); ++b)
          out.m2.push_back({i1, i2, only2[a], only2[b], 2});
      // One observed.
      for (int jo : only1)
        for (int ju : neither)
          out.m1.push_back(
              {i1, i2, std::min(jo, ju), std::max(jo, ju), 1});
      for (int jo : only2)
        for (int ju : neither)
          out.m1.push_back(
              {i1, i2, std::min(jo, ju), std::max(jo, ju), 1});
    }
    for (int j : row_cols[i1]) in_first[j] = 0;
  }
  return out;
}

std::vector<Minor> select_minors(const CompletionInstance& inst,
                                 ShorPolicy policy, uint64_t seed) {
  MinorSet all = enumerate_minors(inst);
  MinorSet chosen;
  switch (policy) {
    case ShorPolicy::None:
      break;
    case ShorPolicy::M4:
      chosen.m4 = all.m4;
      break;
    case ShorPolicy::M4PlusHalfM3: {
      chosen.m4 = all.m4;
      std::vector<Minor> m3 = all.m3;
      Rng rng(mix_seed(seed, 0x5303'5303ULL));
      rng.shuffle(m3.begin(), m3.end());
      m3.resize(m3.size() / 2);
      chosen.m3 = std::move(m3);
      break;
    }
    case ShorPolicy::M4PlusM3:
      chosen.m4 = all.m4;
      chosen.m3 = all.m3;
      break;
  }
  return combined_minors(chosen);
}

std::string to_string(ShorPolicy policy) {
  switch (policy) {
    case ShorPolicy::None: return "none";
    case ShorPolicy::M4: return "m4";
    case ShorPolicy::M4PlusHalfM3: return "m4m3half";
    case ShorPolicy::M4PlusM3: return "m4m3";
  }
  throw std::invalid_argument("unknown ShorPolicy");
}

ShorPolicy shor_policy_from_string(const std::string& s) {
  if (s == "none") return ShorPolicy::None;
  if (s == "m4") return ShorPolicy::M4;
  if (s == "m4m3half") return ShorPolicy::M4PlusHalfM3;
  if (s == "m4m3") return ShorPolicy::M4PlusM3;
  throw std::invalid_argument("unknown shor policy: " + s);
}

// ---------------------------------------------------------------------------
// Root relaxations
// ---------------------------------------------------------------------------

ConicProgram build_mprt(const CompletionInstance& inst) {
  ConicProgram prog;
  const Base base = add_base(prog, inst);
  add_data_objective(
      prog, inst, [&](int i, int j) { return base.X(prog, i, j); },
      [&](int r, int c) { return base.Th(prog, r, c); });
  return prog;
}

ConicProgram build_lifted(const CompletionInstance& inst,
                          const std::vector<DisjunctionBranch>& branches,
                          bool aggregate_cuts) {
  ConicProgram prog;
  const Base base = add_base(prog, inst);
  const int L = add_factor_block(prog, base);
  add_data_objective(
      prog, inst, [&](int i, int j) { return base.X(prog, i, j); },
      [&](int r, int c) { return base.Th(prog, r, c); });
  for (const auto& branch : branches)
    add_branch_rows(prog, base, L, branch, aggregate_cuts);
  return prog;
}

ConicProgram build_shor_rank1(const CompletionInstance& inst,
                              const std::vector<Minor>& minors) {
  if (inst.k != 1)
    throw std::invalid_argument("build_shor_rank1 requires a rank-1 instance");
  ConicProgram prog;
  const Base base = add_base(prog, inst);
  Registry reg;
  for (const Minor& mn : minors) {
    validate_minor(inst, mn);
    add_minor_block(prog, reg, 0, mn,
                    {base.X(prog, mn.i1, mn.j1), base.X(prog, mn.i1, mn.j2),
                     base.X(prog, mn.i2, mn.j1), base.X(prog, mn.i2, mn.j2)});
  }
  // Entries no minor touched still need W_ij >= X_ij^2 for the Theta link:
  // a 2x2 moment block [[1, X_ij], [X_ij, W_ij]].
  for (int i = 0; i < inst.n; ++i)
    for (int j = 0; j < inst.m; ++j) {
      if (reg.find({kW, 0, i, j, 0, 0})) continue;
      const int B = prog.add_psd(2);
      const int pin = prog.add_row(1.0);
      prog.add_term(pin, prog.psd_entry(B, 0, 0), 1.0);
      const int tie = prog.add_row(0.0);
      prog.add_term(tie, prog.psd_entry(B, 1, 0), 1.0);
      prog.add_term(tie, base.X(prog, i, j), -1.0);
      reg.bind(prog, {kW, 0, i, j, 0, 0}, prog.psd_entry(B, 1, 1));
    }

  prog.name_matrix("W", inst.n, inst.m);
  for (int i = 0; i < inst.n; ++i)
    for (int j = 0; j < inst.m; ++j)
      prog.name_entry("W", i, j, *reg.find({kW, 0, i, j, 0, 0}));

  // Basis pursuit: observed entries are constants, so every off-diagonal
  // moment with an observed factor collapses to a pin (both observed) or a
  // linear tie (one observed).  Without this the Shor blocks lose their
  // bite — the cross moment of a minor with three observed entries is what
  // forces the fourth entry, and only once A_{i1,j1} X_{i2,j2} is linear.
  // The diagonal W is deliberately not pinned: W_ij = A_ij² would make the
  // moment blocks exactly singular (no strict interior for the solver), and
  // the objective pressure together with W_ij >= X_ij² already closes it.
  if (inst.mode == InstanceMode::BasisPursuit) {
    std::set<std::tuple<MomentKey, int>> done;
    std::map<MomentKey, double> pinned;
    auto propagate = [&](const MomentKey& key, int reading, int ia, int ja,
                         int ib, int jb) {
      const VarRef* mv = reg.find(key);
      if (!mv) return;
      const bool oa = inst.is_observed(ia, ja), ob = inst.is_observed(ib, jb);
      if (!oa && !ob) return;
      if (!done.insert({key, reading}).second) return;
      if (oa && ob) {
        const double rhs = inst.observed(ia, ja) * inst.observed(ib, jb);
        // Skip an exact duplicate pin (the two cross readings of a fully
        // observed consistent minor); keep conflicting pins so that
        // rank-infeasible data is detected by the solver.
        auto [it, fresh] = pinned.try_emplace(key, rhs);
        if (!fresh && std::abs(it->second - rhs) <=
                          1e-9 * std::max(1.0, std::abs(rhs)))
          return;
        const int row = prog.add_row(rhs);
        prog.add_term(row, *mv, 1.0);
      } else if (oa) {
        const int row = prog.add_row(0.0);
        prog.add_term(row, *mv, 1.0);
        prog.add_term(row, base.X(prog, ib, jb), -inst.observed(ia, ja));
      } else {
        const int row = prog.add_row(0.0);
        prog.add_term(row, *mv, 1.0);
        prog.add_term(row, base.X(prog, ia, ja), -inst.observed(ib, jb));
      }
    };
    for (const Minor& mn : minors) {
      const int i1 = mn.i1, i2 = mn.i2, j1 = mn.j1, j2 = mn.j2;
      propagate({kRowProd, 0, i1, j1, j2, 0}, 0, i1, j1, i1, j2);
      propagate({kRowProd, 0, i2, j1, j2, 0}, 0, i2, j1, i2, j2);
      propagate({kColProd, 0, j1, i1, i2, 0}, 0, i1, j1, i2, j1);
      propagate({kColProd, 0, j2, i1, i2, 0}, 0, i1, j2, i2, j2);
      propagate({kCross, 0, i1, i2, j1, j2}, 0, i1, j1, i2, j2);
      propagate({kCross, 0, i1, i2, j1, j2}, 1, i1, j2, i2, j1);
    }
  }

  auto Wexpr = [&](int i, int j) {
    LinExpr e;
    e.add(*reg.find({kW, 0, i, j, 0, 0}), 1.0);
    return e;
  };
  add_theta_diag_rows(
      prog, inst, [&](int r, int c) { return base.Th(prog, r, c); }, Wexpr);
  // Off-diagonal linking Theta_{j1 j2} = sum_i X_ij1 X_ij2 is valid only
  // when every row's product moment exists in some block.
  for (int j1 = 0; j1 < inst.m; ++j1)
    for (int j2 = j1 + 1; j2 < inst.m; ++j2) {
      bool complete = true;
      for (int i = 0; i < inst.n && complete; ++i)
        complete = reg.find({kRowProd, 0, i, j1, j2, 0}) != nullptr;
      if (!complete) continue;
      const int row = prog.add_row(0.0);
      prog.add_term(row, base.Th(prog, j2, j1), 1.0);
      for (int i = 0; i < inst.n; ++i)
        prog.add_term(row, *reg.find({kRowProd, 0, i, j1, j2, 0}), -1.0);
    }

  add_shor_objective(
      prog, inst, [&](int i, int j) { return base.X(prog, i, j); },
      [&](int r, int c) { return base.Th(prog, r, c); }, Wexpr);
  return prog;
}

ConicProgram build_shor_rankk(const CompletionInstance& inst,
                              const std::vector<Minor>& minors) {
  if (inst.k == 1) return build_shor_rank1(inst, minors);
  ConicProgram prog;
  const Base base = add_base(prog, inst);
  Registry reg;
  const int k = inst.k;

  // Every entry gets a slice moment block; it owns the slice values
  // X^t_ij, the diagonal moments W^t_ij and the cross moments H^{tt'}_ij.
  for (int i = 0; i < inst.n; ++i)
    for (int j = 0; j < inst.m; ++j) {
      add_entry_moment_block(prog, reg, k, i, j);
      const int row = prog.add_row(0.0);  // X_ij = sum_t X^t_ij
      prog.add_term(row, base.X(prog, i, j), 1.0);
      for (int t = 0; t < k; ++t)
        prog.add_term(row, *reg.find({kSlice, t, i, j, 0, 0}), -1.0);
    }
  for (const Minor& mn : minors) {
    validate_minor(inst, mn);
    for (int t = 0; t < k; ++t)
      add_minor_block(prog, reg, t, mn,
                      {*reg.find({kSlice, t, mn.i1, mn.j1, 0, 0}),
                       *reg.find({kSlice, t, mn.i1, mn.j2, 0, 0}),
                       *reg.find({kSlice, t, mn.i2, mn.j1, 0, 0}),
                       *reg.find({kSlice, t, mn.i2, mn.j2, 0, 0})});
  }
  // Theta_jj = sum_i (sum_t X^t_ij)^2 expanded in moments.
  auto Wexpr = [&](int i, int j) {
    LinExpr e;
    for (int t = 0; t < k; ++t) e.add(*reg.find({kW, t, i, j, 0, 0}), 1.0);
    for (int t = 0; t < k; ++t)
      for (int u = 0; u < t; ++u)
        e.add(*reg.find({kH, u, t, i, j, 0}), 2.0);
    return e;
  };
  add_theta_diag_rows(
      prog, inst, [&](int r, int c) { return base.Th(prog, r, c); }, Wexpr);
  add_shor_objective(
      prog, inst, [&](int i, int j) { return base.X(prog, i, j); },
      [&](int r, int c) { return base.Th(prog, r, c); }, Wexpr);
  return prog;
}

ConicProgram build_partial_shor(const CompletionInstance& inst,
                                const std::vector<Minor>& minors) {
  ConicProgram prog;
  const Base base = add_base(prog, inst);
  Registry reg;
  const int k = inst.k;

  // Entries some minor touches get the full slice moment treatment.
  std::set<std::pair<int, int>> covered;
  for (const Minor& mn : minors) {
    validate_minor(inst, mn);
    covered.insert({mn.i1, mn.j1});
    covered.insert({mn.i1, mn.j2});
    covered.insert({mn.i2, mn.j1});
    covered.insert({mn.i2, mn.j2});
  }
  for (const auto& [i, j] : covered) {
    add_entry_moment_block(prog, reg, k, i, j);
    const int row = prog.add_row(0.0);  // X_ij = sum_t X^t_ij
    prog.add_term(row, base.X(prog, i, j), 1.0);
    for (int t = 0; t < k; ++t)
      prog.add_term(row, *reg.find({kSlice, t, i, j, 0, 0}), -1.0);
  }
  for (const Minor& mn : minors)
    for (int t = 0; t < k; ++t)
      add_minor_block(prog, reg, t, mn,
                      {*reg.find({kSlice, t, mn.i1, mn.j1, 0, 0}),
                       *reg.find({kSlice, t, mn.i1, mn.j2, 0, 0}),
                       *reg.find({kSlice, t, mn.i2, mn.j1, 0, 0}),
                       *reg.find({kSlice, t, mn.i2, mn.j2, 0, 0})});

  // Uncovered entries only need a scalar W_ij >= X_ij^2; a rotated-cone
  // style SOC(3) (a, u, c) with a - c = 1 gives a + c >= u^2 at a - c = 1.
  std::map<std::pair<int, int>, LinExpr> wexprs;
  for (int i = 0; i < inst.n; ++i)
    for (int j = 0; j < inst.m; ++j) {
      LinExpr e;
      if (covered.count({i, j})) {
        for (int t = 0; t < k; ++t)
          e.add(*reg.find({kW, t, i, j, 0, 0}), 1.0);
        for (int t = 0; t < k; ++t)
          for (int u = 0; u < t; ++u)
            e.add(*reg.find({kH, u, t, i, j, 0}), 2.0);
      } else {
        const int soc = prog.add_soc(3);
        const int unit = prog.add_row(1.0);  // a - c = 1
        prog.add_term(unit, prog.var(soc, 0), 1.0);
        prog.add_term(unit, prog.var(soc, 2), -1.0);
        const int tie = prog.add_row(0.0);  // u = X_ij
        prog.add_term(tie, prog.var(soc, 1), 1.0);
        prog.add_term(tie, base.X(prog, i, j), -1.0);
        // a^2 >= u^2 + c^2 with a - c = 1 means a + c >= u^2.
        e.add(prog.var(soc, 0), 1.0);
        e.add(prog.var(soc, 2), 1.0);
      }
      wexprs.emplace(std::make_pair(i, j), std::move(e));
    }
  auto Wexpr = [&](int i, int j) -> const LinExpr& {
    return wexprs.at({i, j});
  };
  add_theta_diag_rows(
      prog, inst, [&](int r, int c) { return base.Th(prog, r, c); }, Wexpr);
  add_shor_objective(
      prog, inst, [&](int i, int j) { return base.X(prog, i, j); },
      [&](int r, int c) { return base.Th(prog, r, c); }, Wexpr);
  return prog;
}

// ---------------------------------------------------------------------------
// Slice decomposition
// ---------------------------------------------------------------------------

ConicProgram build_slice_relaxation(const CompletionInstance& inst,
                                    SliceVariant variant,
                                    const std::vector<Minor>& minors) {
  ConicProgram prog;
  const int n = inst.n, m = inst.m, k = inst.k;
  Registry reg;

  struct Slice {
    int P;  // big block, side n + m
  };
  std::vector<Slice> slices(k);
  auto Yt = [&](int t, int r, int c) {
    return prog.psd_entry(slices[t].P, r, c);
  };
  auto Xt = [&](int t, int i, int j) {
    return prog.psd_entry(slices[t].P, n + j, i);
  };
  auto Tht = [&](int t, int r, int c) {
    return prog.psd_entry(slices[t].P, n + r, n + c);
  };

  for (int t = 0; t < k; ++t) {
    slices[t].P = prog.add_psd(n + m);
    const std::string idx = std::to_string(t + 1);
    prog.name_matrix("Y" + idx, n, n, /*symmetric=*/true);
    prog.name_matrix("X" + idx, n, m);
    prog.name_matrix("Theta" + idx, m, m, /*symmetric=*/true);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c)
        prog.name_entry("Y" + idx, r, c, Yt(t, r, c));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) prog.name_entry("X" + idx, i, j, Xt(t, i, j));
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < m; ++c)
        prog.name_entry("Theta" + idx, r, c, Tht(t, r, c));

    // Lifted certificate [[Y^t, u_t], [u_t', 1]] >= 0, i.e. Y^t >= u_t u_t'.
    const int L = prog.add_psd(n + 1);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c <= r; ++c) {
        const int row = prog.add_row(0.0);
        prog.add_term(row, prog.psd_entry(L, r, c), 1.0);
        prog.add_term(row, Yt(t, r, c), -1.0);
      }
    const int corner = prog.add_row(1.0);
    prog.add_term(corner, prog.psd_entry(L, n, n), 1.0);
    prog.name_matrix("U" + idx, n, 1);
    for (int i = 0; i < n; ++i)
      prog.name_entry("U" + idx, i, 0, prog.psd_entry(L, n, i));

    // tr Y^t <= 1.
    const int s = prog.add_nonneg(1);
    const int tr = prog.add_row(1.0);
    for (int r = 0; r < n; ++r) prog.add_term(tr, Yt(t, r, r), 1.0);
    prog.add_term(tr, prog.var(s, 0), 1.0);
  }

  // sum_t Y^t <= I through one PSD slack.
  const int S = prog.add_psd(n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c <= r; ++c) {
      const int row = prog.add_row(r == c ? 1.0 : 0.0);
      for (int t = 0; t < k; ++t) prog.add_term(row, Yt(t, r, c), 1.0);
      prog.add_term(row, prog.psd_entry(S, r, c), 1.0);
    }

  // Aggregate X as explicit variables: X_ij = sum_t X^t_ij.
  const int XB = prog.add_free(n * m);
  auto Xagg = [&](int i, int j) { return prog.var(XB, i * m + j); };
  prog.name_matrix("X", n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      prog.name_entry("X", i, j, Xagg(i, j));
      const int row = prog.add_row(0.0);
      prog.add_term(row, Xagg(i, j), 1.0);
      for (int t = 0; t < k; ++t) prog.add_term(row, Xt(t, i, j), -1.0);
    }

  if (variant == SliceVariant::Shor) {
    // Slice values are the big-block entries; bind before any moment block.
    for (int t = 0; t < k; ++t)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j)
          reg.bind(prog, {kSlice, t, i, j, 0, 0}, Xt(t, i, j));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) add_entry_moment_block(prog, reg, k, i, j);
    for (const Minor& mn : minors) {
      validate_minor(inst, mn);
      for (int t = 0; t < k; ++t)
        add_minor_block(prog, reg, t, mn,
                        {Xt(t, mn.i1, mn.j1), Xt(t, mn.i1, mn.j2),
                         Xt(t, mn.i2, mn.j1), Xt(t, mn.i2, mn.j2)});
    }
    // Per-slice Theta diagonal and orthogonality of distinct slices.
    for (int t = 0; t < k; ++t)
      for (int j = 0; j < m; ++j) {
        const int row = prog.add_row(0.0);
        prog.add_term(row, Tht(t, j, j), 1.0);
        for (int i = 0; i < n; ++i)
          prog.add_term(row, *reg.find({kW, t, i, j, 0, 0}), -1.0);
      }
    for (int t = 0; t < k; ++t)
      for (int u = 0; u < t; ++u)
        for (int j = 0; j < m; ++j) {
          const int row = prog.add_row(0.0);
          for (int i = 0; i < n; ++i)
            prog.add_term(row, *reg.find({kH, u, t, i, j, 0}), 1.0);
        }
  }

  // Objective: per-slice trace surrogate plus the data-fit on aggregate X.
  const double theta_coeff =
      inst.mode == InstanceMode::BasisPursuit ? 1.0 : 0.5 / inst.gamma;
  for (int t = 0; t < k; ++t)
    for (int j = 0; j < m; ++j) prog.obj_term(Tht(t, j, j), theta_coeff);
  const auto& pairs = inst.mask.pairs();
  if (inst.mode == InstanceMode::BasisPursuit) {
    for (const auto& [i, j] : pairs) {
      const int row = prog.add_row(inst.observed(i, j));
      prog.add_term(row, Xagg(i, j), 1.0);
    }
  } else {
    const int E = static_cast<int>(pairs.size());
    const int ep = prog.add_soc(E + 2);
    const int unit = prog.add_row(1.0);
    prog.add_term(unit, prog.var(ep, 0), 1.0);
    prog.add_term(unit, prog.var(ep, E + 1), -1.0);
    for (int e = 0; e < E; ++e) {
      const auto& [i, j] = pairs[e];
      const int row = prog.add_row(-inst.observed(i, j));
      prog.add_term(row, prog.var(ep, 1 + e), 1.0);
      prog.add_term(row, Xagg(i, j), -1.0);
    }
    prog.obj_term(prog.var(ep, 0), 0.5);
    prog.obj_term(prog.var(ep, E + 1), 0.5);
  }
  return prog;
}

// ---------------------------------------------------------------------------
// McCormick baseline
// ---------------------------------------------------------------------------

ConicProgram build_mccormick(const CompletionInstance& inst,
                             const BoxState& box) {
  const int n = inst.n, k = inst.k;
  if (box.lower.rows() != n || box.lower.cols() != k ||
      box.upper.rows() != n || box.upper.cols() != k)
    throw std::invalid_argument("box dimensions do not match instance");

  ConicProgram prog;
  const Base base = add_base(prog, inst);
  const int L = add_factor_block(prog, base);
  auto Uref = [&](int i, int j) { return prog.psd_entry(L, n + j, i); };
  add_data_objective(
      prog, inst, [&](int i, int j) { return base.X(prog, i, j); },
      [&](int r, int c) { return base.Th(prog, r, c); });

  // V_{i,(j1,j2)} models U_ij1 U_ij2 (j1 <= j2), column-pair indexed.
  const int kk2 = k * (k + 1) / 2;
  const int VB = prog.add_free(n * kk2);
  auto Vref = [&](int i, int j1, int j2) {
    return prog.var(VB, i * kk2 + pair_index(k, j1, j2));
  };
  prog.name_matrix("V", n, kk2);
  for (int i = 0; i < n; ++i)
    for (int p = 0; p < kk2; ++p)
      prog.name_entry("V", i, p, prog.var(VB, i * kk2 + p));

  // Orthonormal-column surrogate: sum_i V_{i,(j,j)} = 1, crossed sums 0.
  for (int j = 0; j < k; ++j) {
    const int row = prog.add_row(1.0);
    for (int i = 0; i < n; ++i) prog.add_term(row, Vref(i, j, j), 1.0);
  }
  for (int j1 = 0; j1 < k; ++j1)
    for (int j2 = j1 + 1; j2 < k; ++j2) {
      const int row = prog.add_row(0.0);
      for (int i = 0; i < n; ++i) prog.add_term(row, Vref(i, j1, j2), 1.0);
    }

  // McCormick envelopes of V = U_ij1 U_ij2 on the node's box.
  for (int i = 0; i < n; ++i)
    for (int j1 = 0; j1 < k; ++j1)
      for (int j2 = j1; j2 < k; ++j2) {
        const auto ineqs =
            mccormick_envelope(box.lower(i, j1), box.upper(i, j1),
                               box.lower(i, j2), box.upper(i, j2));
        for (const AffineIneq3& q : ineqs) {
          const int s = prog.add_nonneg(1);
          const int row = prog.add_row(q.rhs);
          prog.add_term(row, Vref(i, j1, j2), q.cv);
          // x and y coefficients merge automatically when j1 == j2.
          prog.add_term(row, Uref(i, j1), q.cx);
          prog.add_term(row, Uref(i, j2), q.cy);
          prog.add_term(row, prog.var(s, 0), 1.0);
        }
      }

  // Explicit U bounds when the node box is tighter than [-1, 1].
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) {
      if (box.lower(i, j) > -1.0 + 1e-12) {
        const int s = prog.add_nonneg(1);
        const int row = prog.add_row(box.lower(i, j));
        prog.add_term(row, Uref(i, j), 1.0);
        prog.add_term(row, prog.var(s, 0), -1.0);
      }
      if (box.upper(i, j) < 1.0 - 1e-12) {
        const int s = prog.add_nonneg(1);
        const int row = prog.add_row(box.upper(i, j));
        prog.add_term(row, Uref(i, j), 1.0);
        prog.add_term(row, prog.var(s, 0), 1.0);
      }
    }
  return prog;
}

}  // namespace lrbb
