#include "lrbb/presolve.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>

namespace lrbb {

namespace {

constexpr double kPivotRelTol = 1e-10;     // cofactor cutoff vs minor scale
constexpr double kConsistencyTol = 1e-6;   // "same value" across minors

// Working copy of the data: dense availability grid plus values.
struct Grid {
  int n = 0, m = 0;
  std::vector<char> known;
  std::vector<double> value;

  Grid(const CompletionInstance& inst)
      : n(inst.n), m(inst.m), known(n * m, 0), value(n * m, 0.0) {
    for (const auto& [i, j] : inst.mask.pairs()) {
      known[i * m + j] = 1;
      value[i * m + j] = inst.observed(i, j);
    }
  }
  bool has(int i, int j) const { return known[i * m + j]; }
  double at(int i, int j) const { return value[i * m + j]; }
  void set(int i, int j, double v) {
    known[i * m + j] = 1;
    value[i * m + j] = v;
  }
};

void require_basis_pursuit(const CompletionInstance& inst, const char* who) {
  if (inst.mode != InstanceMode::BasisPursuit)
    throw std::invalid_argument(std::string(who) +
                                " is defined for basis pursuit instances");
}

PresolveResult finish(const CompletionInstance& inst, const Grid& grid,
                      std::vector<std::tuple<int, int, double>> fills) {
  PresolveResult out;
  out.index_set.reset(inst.n, inst.m);
  for (int i = 0; i < inst.n; ++i)
    for (int j = 0; j < inst.m; ++j)
      if (grid.has(i, j)) out.index_set.insert(i, j);
  out.fills = std::move(fills);
  out.fully_presolved = out.index_set.size() == inst.n * inst.m;
  return out;
}

[[noreturn]] void contradiction(int i, int j, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "minors force entry (%d,%d) to both %.12g and %.12g; "
                "data is not rank-consistent",
                i, j, a, b);
  throw PresolveContradiction(buf);
}

bool values_agree(double a, double b) {
  return std::abs(a - b) <=
         kConsistencyTol * std::max({1.0, std::abs(a), std::abs(b)});
}

// Verifies that every available entry of one bipartite component factors as
// mu_i * nu_j.  Components holding no filled entry are left alone: complete
// non-rank-1 data is an infeasibility question, not a presolve contradiction.
void verify_rank1_components(const Grid& grid,
                             const std::vector<char>& was_filled) {
  const int n = grid.n, m = grid.m;
  std::vector<int> row_comp(n, -1), col_comp(m, -1);
  std::vector<double> mu(n, 0.0), nu(m, 0.0);
  double data_max = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      if (grid.has(i, j)) data_max = std::max(data_max, std::abs(grid.at(i, j)));
  const double zero_tol = 1e-12 * std::max(1.0, data_max);

  int comp_count = 0;
  for (int seed = 0; seed < n; ++seed) {
    if (row_comp[seed] >= 0) continue;
    const int c = comp_count++;
    row_comp[seed] = c;
    mu[seed] = 1.0;
    // BFS over entries with a usable magnitude; zero entries carry no ratio.
    std::vector<int> rows{seed}, cols;
    std::size_t ri = 0, ci = 0;
    while (ri < rows.size() || ci < cols.size()) {
      if (ri < rows.size()) {
        const int i = rows[ri++];
        for (int j = 0; j < m; ++j)
          if (col_comp[j] < 0 && grid.has(i, j) &&
              std::abs(grid.at(i, j)) > zero_tol) {
            col_comp[j] = c;
            nu[j] = grid.at(i, j) / mu[i];
            cols.push_back(j);
          }
      } else {
        const int j = cols[ci++];
        for (int i = 0; i < n; ++i)
          if (row_comp[i] < 0 && grid.has(i, j) &&
              std::abs(grid.at(i, j)) > zero_tol) {
            row_comp[i] = c;
            mu[i] = grid.at(i, j) / nu[j];
            rows.push_back(i);
          }
      }
    }
    bool has_fill = false;
    for (int i : rows)
      for (int j = 0; j < m; ++j)
        if (grid.has(i, j) && was_filled[i * m + j]) has_fill = true;
    if (!has_fill) continue;
    for (int i : rows)
      for (int j = 0; j < m; ++j) {
        if (!grid.has(i, j)) continue;
        const double predicted = col_comp[j] == c ? mu[i] * nu[j] : 0.0;
        const double got = grid.at(i, j);
        if (std::abs(got - predicted) >
            kConsistencyTol *
                std::max({std::abs(got), std::abs(predicted), zero_tol}))
          contradiction(i, j, got, predicted);
      }
  }
}

// Next k-combination of {0..pool-1} in lexicographic order; false when done.
bool next_combination(std::vector<int>& idx, int pool) {
  const int k = static_cast<int>(idx.size());
  for (int t = k - 1; t >= 0; --t) {
    if (idx[t] < pool - (k - t)) {
      ++idx[t];
      for (int u = t + 1; u < k; ++u) idx[u] = idx[u - 1] + 1;
      return true;
    }
  }
  return false;
}

// Builds the (k+1)x(k+1) minor over rows R' + {i}, cols C' + {j} with the
// (i, j) slot unknown, and solves it.  Rows/cols are used in sorted order.
std::optional<double> fill_from_minor(const Grid& grid,
                                      const std::vector<int>& rp, int i,
                                      const std::vector<int>& cp, int j) {
  std::vector<int> rows(rp), cols(cp);
  rows.push_back(i);
  cols.push_back(j);
  std::sort(rows.begin(), rows.end());
  std::sort(cols.begin(), cols.end());
  const int d = static_cast<int>(rows.size());
  Matrix minor(d, d);
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c)
      minor(r, c) = (rows[r] == i && cols[c] == j)
                        ? std::numeric_limits<double>::quiet_NaN()
                        : grid.at(rows[r], cols[c]);
  return solve_minor_missing_entry(minor);
}

struct EqualityBuilder {
  std::set<std::string> signatures;
  std::vector<LinearEquality> out;

  // Normalizes (leading sorted term gets coefficient 1), deduplicates, keeps.
  void add(LinearEquality eq) {
    std::sort(eq.terms.begin(), eq.terms.end(),
              [](const LinearEquality::Term& a, const LinearEquality::Term& b) {
                return std::tie(a.i, a.j) < std::tie(b.i, b.j);
              });
    double top = 0.0;
    for (const auto& t : eq.terms) top = std::max(top, std::abs(t.coeff));
    if (top <= 0.0) return;
    std::erase_if(eq.terms, [&](const LinearEquality::Term& t) {
      return std::abs(t.coeff) < 1e-12 * top;
    });
    if (eq.terms.empty()) return;
    const double lead = eq.terms.front().coeff;
    for (auto& t : eq.terms) t.coeff /= lead;
    eq.constant /= lead;
    std::string sig;
    char buf[64];
    for (const auto& t : eq.terms) {
      std::snprintf(buf, sizeof buf, "%d,%d,%.9e;", t.i, t.j, t.coeff);
      sig += buf;
    }
    std::snprintf(buf, sizeof buf, "=%.9e", eq.constant);
    sig += buf;
    if (signatures.insert(sig).second) out.push_back(std::move(eq));
  }
};

// Equalities whose unknowns sit in column j of minors over C' + {j}: windows
// of k+1 consecutive candidate rows (those observed on all of C'), needing at
// least one unknown at (row, j).  transposed=true swaps the emitted indices.
void column_line_equalities(const Grid& grid, int k, bool transposed,
                            EqualityBuilder& builder) {
  const int n = grid.n, m = grid.m;
  if (m < k + 1 || n < k + 1) return;
  std::vector<int> cp(k);
  std::iota(cp.begin(), cp.end(), 0);
  do {
    std::vector<int> rows_on_cp;
    for (int r = 0; r < n; ++r) {
      bool all = true;
      for (int c : cp) all = all && grid.has(r, c);
      if (all) rows_on_cp.push_back(r);
    }
    if (static_cast<int>(rows_on_cp.size()) < k + 1) continue;
    for (int j = 0; j < m; ++j) {
      if (std::find(cp.begin(), cp.end(), j) != cp.end()) continue;
      for (std::size_t w = 0; w + k < rows_on_cp.size(); ++w) {
        bool any_unknown = false;
        for (int t = 0; t <= k; ++t)
          any_unknown = any_unknown || !grid.has(rows_on_cp[w + t], j);
        if (!any_unknown) continue;
        // Expand det over column j: cofactors come from the C' block.
        std::vector<int> cols(cp);
        cols.push_back(j);
        std::sort(cols.begin(), cols.end());
        const int pos_j =
            static_cast<int>(std::find(cols.begin(), cols.end(), j) -
                             cols.begin());
        LinearEquality eq;
        for (int t = 0; t <= k; ++t) {
          Matrix block(k, k);
          int rr = 0;
          for (int u = 0; u <= k; ++u) {
            if (u == t) continue;
            int cc = 0;
            for (int c : cols)
              if (c != j) block(rr, cc++) = grid.at(rows_on_cp[w + u], c);
            ++rr;
          }
          const double cof =
              ((t + pos_j) % 2 == 0 ? 1.0 : -1.0) *
              (k == 0 ? 1.0 : block.determinant());
          const int row = rows_on_cp[w + t];
          if (grid.has(row, j))
            eq.constant += cof * grid.at(row, j);
          else if (transposed)
            eq.terms.push_back({j, row, cof});
          else
            eq.terms.push_back({row, j, cof});
        }
        builder.add(std::move(eq));
      }
    }
  } while (next_combination(cp, m));
}

Grid transpose(const Grid& g) {
  CompletionInstance dummy;
  dummy.n = g.m;
  dummy.m = g.n;
  dummy.mask.reset(g.m, g.n);
  Grid t(dummy);
  for (int i = 0; i < g.n; ++i)
    for (int j = 0; j < g.m; ++j)
      if (g.has(i, j)) t.set(j, i, g.at(i, j));
  return t;
}

std::vector<LinearEquality> equalities_for(const Grid& grid, int k) {
  EqualityBuilder builder;
  column_line_equalities(grid, k, /*transposed=*/false, builder);
  column_line_equalities(transpose(grid), k, /*transposed=*/true, builder);
  return std::move(builder.out);
}

}  // namespace

std::optional<double> solve_minor_missing_entry(const Matrix& minor) {
  const int d = static_cast<int>(minor.rows());
  if (minor.cols() != d || d < 2)
    throw std::invalid_argument("minor must be square, at least 2x2");
  int ur = -1, uc = -1, unknowns = 0;
  double scale = 1.0;
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c) {
      if (std::isnan(minor(r, c))) {
        ++unknowns;
        ur = r;
        uc = c;
      } else {
        scale = std::max(scale, std::abs(minor(r, c)));
      }
    }
  if (unknowns != 1)
    throw std::invalid_argument("minor must have exactly one unknown entry");

  Matrix sub(d - 1, d - 1);
  for (int r = 0, rr = 0; r < d; ++r) {
    if (r == ur) continue;
    for (int c = 0, cc = 0; c < d; ++c) {
      if (c == uc) continue;
      sub(rr, cc++) = minor(r, c);
    }
    ++rr;
  }
  const double cof = ((ur + uc) % 2 == 0 ? 1.0 : -1.0) * sub.determinant();
  if (std::abs(cof) < kPivotRelTol * std::pow(scale, d - 1))
    return std::nullopt;  // the minor says nothing about this entry

  Matrix zeroed = minor;
  zeroed(ur, uc) = 0.0;
  return -zeroed.determinant() / cof;
}

PresolveResult presolve_rank1(const CompletionInstance& inst) {
  require_basis_pursuit(inst, "presolve_rank1");
  if (inst.k != 1)
    throw std::invalid_argument("presolve_rank1 requires k = 1");

  Grid grid(inst);
  std::vector<char> was_filled(inst.n * inst.m, 0);
  std::vector<std::tuple<int, int, double>> fills;

  bool changed = true;
  while (changed) {
    changed = false;
    for (int dst = 0; dst < inst.m; ++dst)
      for (int src = 0; src < inst.m; ++src) {
        if (src == dst) continue;
        std::vector<int> pivots;
        for (int p = 0; p < inst.n; ++p)
          if (grid.has(p, src) && grid.has(p, dst)) pivots.push_back(p);
        if (pivots.empty()) continue;
        for (int r = 0; r < inst.n; ++r) {
          if (!grid.has(r, src) || grid.has(r, dst)) continue;
          for (int p : pivots) {
            if (p == r) continue;
            const auto v = fill_from_minor(grid, {p}, r, {src}, dst);
            if (!v) continue;
            grid.set(r, dst, *v);
            was_filled[r * inst.m + dst] = 1;
            fills.emplace_back(r, dst, *v);
            changed = true;
            break;
          }
        }
      }
  }

  verify_rank1_components(grid, was_filled);

  PresolveResult out = finish(inst, grid, std::move(fills));

  // Spanning set of ties among the still-unknown entries: union-find drops
  // every equality whose two entries are already linked.
  std::vector<int> parent(inst.n * inst.m);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  for (LinearEquality& eq : equalities_for(grid, 1)) {
    if (eq.terms.size() != 2) continue;
    const int a = find(eq.terms[0].i * inst.m + eq.terms[0].j);
    const int b = find(eq.terms[1].i * inst.m + eq.terms[1].j);
    if (a == b) continue;
    parent[a] = b;
    out.equalities.push_back(std::move(eq));
  }
  return out;
}

PresolveResult presolve_rankk(const CompletionInstance& inst) {
  require_basis_pursuit(inst, "presolve_rankk");
  const int n = inst.n, m = inst.m, k = inst.k;
  Grid grid(inst);
  std::vector<std::tuple<int, int, double>> fills;
  if (k + 1 > n || k + 1 > m) return finish(inst, grid, std::move(fills));

  bool converged = false;
  while (!converged) {
    converged = true;
    std::vector<int> cp(k);
    std::iota(cp.begin(), cp.end(), 0);
    do {
      std::vector<int> rows_on_cp;
      for (int r = 0; r < n; ++r) {
        bool all = true;
        for (int c : cp) all = all && grid.has(r, c);
        if (all) rows_on_cp.push_back(r);
      }
      if (static_cast<int>(rows_on_cp.size()) <= k) continue;
      for (int j = 0; j < m; ++j) {
        if (std::find(cp.begin(), cp.end(), j) != cp.end()) continue;
        std::vector<int> rbar, targets;
        for (int r : rows_on_cp)
          (grid.has(r, j) ? rbar : targets).push_back(r);
        if (static_cast<int>(rbar.size()) < k || targets.empty()) continue;
        for (int i : targets) {
          // Scan pivot-row k-subsets until one has a usable cofactor; a
          // second determination, when available, cross-checks the value.
          std::vector<int> sel(k);
          std::iota(sel.begin(), sel.end(), 0);
          std::optional<double> first, second;
          int attempts = 0;
          do {
            std::vector<int> rp(k);
            for (int t = 0; t < k; ++t) rp[t] = rbar[sel[t]];
            const auto v = fill_from_minor(grid, rp, i, cp, j);
            if (v) {
              if (!first)
                first = v;
              else
                second = v;
            }
            if (second || ++attempts >= 32) break;
          } while (next_combination(sel, static_cast<int>(rbar.size())));
          if (!first) continue;
          if (second && !values_agree(*first, *second))
            contradiction(i, j, *first, *second);
          grid.set(i, j, *first);
          fills.emplace_back(i, j, *first);
          converged = false;
        }
      }
    } while (next_combination(cp, m));
  }
  return finish(inst, grid, std::move(fills));
}

std::vector<LinearEquality> derive_minor_equalities(
    const CompletionInstance& inst) {
  require_basis_pursuit(inst, "derive_minor_equalities");
  return equalities_for(Grid(inst), inst.k);
}

CompletionInstance apply_presolve(const CompletionInstance& inst,
                                  const PresolveResult& result) {
  CompletionInstance out = inst;
  for (const auto& [i, j, v] : result.fills) out.set_entry(i, j, v);
  return out;
}

std::optional<BlockPartition> check_block_rectangular(const IndexSet& mask) {
  const int n = mask.rows(), m = mask.cols();
  BlockPartition part;
  std::vector<int> group_of_col(m, -1);
  std::vector<char> row_done(n, 0);
  for (int i = 0; i < n; ++i) {
    if (row_done[i]) continue;
    const std::vector<int>& slice = mask.row_slice(i);
    if (slice.empty()) {
      part.empty_rows.push_back(i);
      row_done[i] = 1;
      continue;
    }
    std::vector<int> rows;
    for (int r = i; r < n; ++r) {
      if (row_done[r]) continue;
      const std::vector<int>& other = mask.row_slice(r);
      if (other == slice) {
        rows.push_back(r);
        row_done[r] = 1;
      } else {
        // Identical or disjoint: any shared column breaks the structure.
        std::vector<int> shared;
        std::set_intersection(slice.begin(), slice.end(), other.begin(),
                              other.end(), std::back_inserter(shared));
        if (!shared.empty()) return std::nullopt;
      }
    }
    const int g = static_cast<int>(part.blocks.size());
    for (int c : slice) {
      if (group_of_col[c] != -1) return std::nullopt;
      group_of_col[c] = g;
      // Column slices must mirror the row group exactly.
      if (mask.col_slice(c) != rows) return std::nullopt;
    }
    part.blocks.emplace_back(std::move(rows), slice);
  }
  for (int c = 0; c < m; ++c)
    if (group_of_col[c] == -1) part.empty_cols.push_back(c);
  return part;
}

}  // namespace lrbb
