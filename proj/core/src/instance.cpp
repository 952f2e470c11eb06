#include "lrbb/instance.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "lrbb/rng.hpp"
#include "json.hpp"

namespace lrbb {

namespace {

void check_range(int i, int j, int n, int m) {
  if (i < 0 || i >= n || j < 0 || j >= m)
    throw std::out_of_range("index (" + std::to_string(i) + "," +
                            std::to_string(j) + ") outside " +
                            std::to_string(n) + "x" + std::to_string(m));
}

void sorted_insert(std::vector<int>& v, int x) {
  v.insert(std::lower_bound(v.begin(), v.end(), x), x);
}

void sorted_erase(std::vector<int>& v, int x) {
  auto it = std::lower_bound(v.begin(), v.end(), x);
  if (it != v.end() && *it == x) v.erase(it);
}

}  // namespace

std::string to_string(InstanceMode mode) {
  return mode == InstanceMode::BasisPursuit ? "basis_pursuit" : "noisy";
}

InstanceMode instance_mode_from_string(const std::string& s) {
  if (s == "basis_pursuit" || s == "bp") return InstanceMode::BasisPursuit;
  if (s == "noisy") return InstanceMode::Noisy;
  throw std::invalid_argument("unknown instance mode: " + s);
}

void IndexSet::reset(int rows, int cols) {
  rows_ = rows;
  cols_ = cols;
  pairs_.clear();
  present_.clear();
  by_row_.assign(rows, {});
  by_col_.assign(cols, {});
}

bool IndexSet::insert(int i, int j) {
  check_range(i, j, rows_, cols_);
  if (by_row_.empty()) {
    by_row_.assign(rows_, {});
    by_col_.assign(cols_, {});
  }
  if (!present_.emplace(key(i, j), 1).second) return false;
  pairs_.emplace_back(i, j);
  sorted_insert(by_row_[i], j);
  sorted_insert(by_col_[j], i);
  return true;
}

bool IndexSet::erase(int i, int j) {
  if (!contains(i, j)) return false;
  present_.erase(key(i, j));
  pairs_.erase(std::find(pairs_.begin(), pairs_.end(), std::make_pair(i, j)));
  sorted_erase(by_row_[i], j);
  sorted_erase(by_col_[j], i);
  return true;
}

bool IndexSet::contains(int i, int j) const {
  if (i < 0 || i >= rows_ || j < 0 || j >= cols_) return false;
  return present_.count(key(i, j)) > 0;
}

const std::vector<std::pair<int, int>>& IndexSet::pairs() const {
  return pairs_;
}

const std::vector<int>& IndexSet::row_slice(int i) const {
  check_range(i, 0, rows_, 1);
  return by_row_[i];
}

const std::vector<int>& IndexSet::col_slice(int j) const {
  check_range(0, j, 1, cols_);
  return by_col_[j];
}

bool IndexSet::covers_all_rows_and_cols() const {
  for (int i = 0; i < rows_; ++i)
    if (by_row_[i].empty()) return false;
  for (int j = 0; j < cols_; ++j)
    if (by_col_[j].empty()) return false;
  return true;
}

void CompletionInstance::validate() const {
  if (n <= 0 || m <= 0) throw std::invalid_argument("dimensions must be positive");
  if (k < 1 || k > std::min(n, m))
    throw std::invalid_argument("rank bound k must satisfy 1 <= k <= min(n,m)");
  if (!(gamma > 0)) throw std::invalid_argument("gamma must be positive");
  if (mode == InstanceMode::BasisPursuit && gamma != 1.0)
    throw std::invalid_argument("basis pursuit fixes gamma = 1");
  if (mask.rows() != n || mask.cols() != m)
    throw std::invalid_argument("mask dimensions disagree with instance");
  if (static_cast<int>(values.size()) != mask.size())
    throw std::invalid_argument("observed values and mask are inconsistent");
  for (const auto& [i, j] : mask.pairs()) {
    check_range(i, j, n, m);
    if (!values.count(static_cast<std::int64_t>(i) * m + j))
      throw std::invalid_argument("mask entry without a value");
  }
  if (ground_truth &&
      (ground_truth->rows() != n || ground_truth->cols() != m))
    throw std::invalid_argument("ground truth dimensions disagree");
}

namespace {

// Adds min(count_target - current, ...) entries, one new row/column pairing
// per step, by walking shuffled row and column orders in lockstep.  Every
// full pass over max(n,m) steps touches all rows and all columns.
void transversal_seed(IndexSet& mask, int target, Rng& rng) {
  const int n = mask.rows(), m = mask.cols();
  std::vector<int> rows(n), cols(m);
  for (int i = 0; i < n; ++i) rows[i] = i;
  for (int j = 0; j < m; ++j) cols[j] = j;
  rng.shuffle(rows.begin(), rows.end());
  rng.shuffle(cols.begin(), cols.end());
  long attempts = 0;
  const long max_attempts = 100L * target + 1000;
  for (long t = 0; mask.size() < target && attempts < max_attempts; ++t) {
    if (t > 0 && t % n == 0) rng.shuffle(rows.begin(), rows.end());
    if (t > 0 && t % m == 0) rng.shuffle(cols.begin(), cols.end());
    mask.insert(rows[t % n], cols[t % m]);
    ++attempts;
  }
  // Leftovers (pathological duplicate streaks) fall through to the uniform
  // filler in the caller.
}

void uniform_fill(IndexSet& mask, int target, Rng& rng) {
  const int n = mask.rows(), m = mask.cols();
  if (target > n * m / 2) {
    // Dense regime: enumerate the complement and take a shuffled prefix.
    std::vector<std::pair<int, int>> missing;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j)
        if (!mask.contains(i, j)) missing.emplace_back(i, j);
    rng.shuffle(missing.begin(), missing.end());
    for (const auto& [i, j] : missing) {
      if (mask.size() >= target) break;
      mask.insert(i, j);
    }
    return;
  }
  while (mask.size() < target) {
    mask.insert(static_cast<int>(rng.uniform_int(0, n - 1)),
                static_cast<int>(rng.uniform_int(0, m - 1)));
  }
}

// Restores row/column coverage without changing |mask|: moves an entry out
// of a multiply-covered row (column) into the uncovered one, reusing the
// donor's column (row) so no other line loses coverage.
void repair_coverage(IndexSet& mask, Rng& rng) {
  const int n = mask.rows(), m = mask.cols();
  for (int guard = 0; guard < n + m + 8; ++guard) {
    int bad_row = -1, bad_col = -1;
    for (int i = 0; i < n && bad_row < 0; ++i)
      if (mask.row_slice(i).empty()) bad_row = i;
    for (int j = 0; j < m && bad_col < 0; ++j)
      if (mask.col_slice(j).empty()) bad_col = j;
    if (bad_row < 0 && bad_col < 0) return;

    std::vector<std::pair<int, int>> donors;
    if (bad_row >= 0) {
      for (const auto& [i, j] : mask.pairs())
        if (static_cast<int>(mask.row_slice(i).size()) >= 2)
          donors.emplace_back(i, j);
    } else {
      for (const auto& [i, j] : mask.pairs())
        if (static_cast<int>(mask.col_slice(j).size()) >= 2)
          donors.emplace_back(i, j);
    }
    if (donors.empty())
      throw std::runtime_error("mask too sparse to cover all rows/columns");
    const auto [di, dj] = donors[static_cast<size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(donors.size()) - 1))];
    mask.erase(di, dj);
    if (bad_row >= 0)
      mask.insert(bad_row, dj);
    else
      mask.insert(di, bad_col);
  }
  throw std::runtime_error("mask coverage repair did not converge");
}

}  // namespace

CompletionInstance generate_instance(int n, int m, int k_true, double gamma,
                                     double noise_eps, int num_observed,
                                     std::uint64_t seed) {
  if (n <= 0 || m <= 0 || n > kMaxSyntheticDim || m > kMaxSyntheticDim)
    throw std::invalid_argument("dimensions must lie in [1, " +
                                std::to_string(kMaxSyntheticDim) + "]");
  if (k_true < 1 || k_true > std::min(n, m))
    throw std::invalid_argument("k_true must satisfy 1 <= k <= min(n,m)");
  if (num_observed > n * m)
    throw std::invalid_argument("infeasible mask: more entries than cells");
  if (num_observed < std::max(n, m))
    throw std::invalid_argument(
        "mask cannot cover every row and column: need at least max(n,m) "
        "entries");
  if (num_observed < k_true * (n + m))
    throw std::invalid_argument(
        "under-determined mask: need at least k(n+m) observed entries");

  // Factor draws happen at the canonical size so the top-left data block is
  // shared across instances of different (n, m) with the same seed.
  const int N = kMaxSyntheticDim;
  Rng data_rng(mix_seed(seed, 0));
  Matrix U(N, k_true), V(k_true, N);
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < k_true; ++t) U(i, t) = data_rng.normal();
  for (int t = 0; t < k_true; ++t)
    for (int j = 0; j < N; ++j) V(t, j) = data_rng.normal();
  Matrix A_corner = U.topRows(n) * V.leftCols(m);
  if (noise_eps != 0.0) {
    // The noise field is also drawn at canonical size (row-major) so the
    // corner is independent of (n, m).
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j) {
        const double z = data_rng.normal();
        if (i < n && j < m) A_corner(i, j) += noise_eps * z;
      }
  }

  CompletionInstance inst;
  inst.n = n;
  inst.m = m;
  inst.k = k_true;
  inst.mode = noise_eps == 0.0 ? InstanceMode::BasisPursuit : InstanceMode::Noisy;
  inst.gamma = inst.mode == InstanceMode::BasisPursuit ? 1.0 : gamma;
  inst.ground_truth = A_corner;
  inst.mask.reset(n, m);

  std::uint64_t s = mix_seed(seed, 1);
  s = mix_seed(s, static_cast<std::uint64_t>(n));
  s = mix_seed(s, static_cast<std::uint64_t>(m));
  s = mix_seed(s, static_cast<std::uint64_t>(num_observed));
  Rng mask_rng(s);

  // Small regime (|I| close to k(n+m)): seed one entry per row/column walk
  // directly; large regime: sample uniformly and repair coverage afterwards.
  const bool small_regime = num_observed < k_true * (n + m) + n;
  if (small_regime) {
    transversal_seed(inst.mask, std::min(num_observed, k_true * (n + m)),
                     mask_rng);
  }
  uniform_fill(inst.mask, num_observed, mask_rng);
  repair_coverage(inst.mask, mask_rng);

  for (const auto& [i, j] : inst.mask.pairs())
    inst.values[static_cast<std::int64_t>(i) * m + j] = A_corner(i, j);

  inst.validate();
  return inst;
}

double observed_residual(const CompletionInstance& inst, const Matrix& X) {
  double worst = 0.0;
  for (const auto& [i, j] : inst.mask.pairs())
    worst = std::max(worst, std::abs(X(i, j) - inst.observed(i, j)));
  return worst;
}

double objective_value(const CompletionInstance& inst, const Matrix& X,
                       double bp_tol) {
  if (X.rows() != inst.n || X.cols() != inst.m)
    throw std::invalid_argument("objective_value: dimension mismatch");
  if (inst.mode == InstanceMode::BasisPursuit) {
    if (observed_residual(inst, X) > bp_tol)
      return std::numeric_limits<double>::infinity();
    return X.squaredNorm();
  }
  double fit = 0.0;
  for (const auto& [i, j] : inst.mask.pairs()) {
    const double r = X(i, j) - inst.observed(i, j);
    fit += r * r;
  }
  return X.squaredNorm() / (2.0 * inst.gamma) + 0.5 * fit;
}

double mse_all_entries(const CompletionInstance& inst, const Matrix& X) {
  if (!inst.ground_truth)
    throw std::invalid_argument("mse_all_entries: ground truth missing");
  if (X.rows() != inst.n || X.cols() != inst.m)
    throw std::invalid_argument("mse_all_entries: dimension mismatch");
  return (X - *inst.ground_truth).squaredNorm() /
         (static_cast<double>(inst.n) * inst.m);
}

void save_instance(const CompletionInstance& inst, const std::string& path) {
  nlohmann::json j;
  j["n"] = inst.n;
  j["m"] = inst.m;
  j["k"] = inst.k;
  j["gamma"] = inst.gamma;
  j["mode"] = to_string(inst.mode);
  auto entries = nlohmann::json::array();
  for (const auto& [i, jj] : inst.mask.pairs()) {
    entries.push_back({{"i", i + 1}, {"j", jj + 1}, {"v", inst.observed(i, jj)}});
  }
  j["entries"] = std::move(entries);
  if (inst.ground_truth) {
    std::vector<double> flat(static_cast<size_t>(inst.n) * inst.m);
    for (int r = 0; r < inst.n; ++r)
      for (int c = 0; c < inst.m; ++c)
        flat[static_cast<size_t>(r) * inst.m + c] = (*inst.ground_truth)(r, c);
    j["ground_truth"] = std::move(flat);
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
}

CompletionInstance load_instance(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed instance file " + path + ": " +
                             e.what());
  }
  CompletionInstance inst;
  try {
    inst.n = j.at("n").get<int>();
    inst.m = j.at("m").get<int>();
    inst.k = j.at("k").get<int>();
    inst.gamma = j.at("gamma").get<double>();
    inst.mode = instance_mode_from_string(j.at("mode").get<std::string>());
    inst.mask.reset(inst.n, inst.m);
    const auto& entries = j.at("entries");
    if (entries.empty())
      throw std::runtime_error("instance has no observed entries");
    for (const auto& e : entries) {
      const int i = e.at("i").get<int>() - 1;  // file is 1-based
      const int jj = e.at("j").get<int>() - 1;
      if (i < 0 || i >= inst.n || jj < 0 || jj >= inst.m)
        throw std::runtime_error("entry index out of range in " + path);
      if (!inst.mask.insert(i, jj))
        throw std::runtime_error("duplicate entry (" + std::to_string(i + 1) +
                                 "," + std::to_string(jj + 1) + ") in " + path);
      inst.values[static_cast<std::int64_t>(i) * inst.m + jj] =
          e.at("v").get<double>();
    }
    if (j.contains("ground_truth")) {
      const auto flat = j.at("ground_truth").get<std::vector<double>>();
      if (static_cast<int>(flat.size()) != inst.n * inst.m)
        throw std::runtime_error("ground_truth size mismatch in " + path);
      Matrix G(inst.n, inst.m);
      for (int r = 0; r < inst.n; ++r)
        for (int c = 0; c < inst.m; ++c)
          G(r, c) = flat[static_cast<size_t>(r) * inst.m + c];
      inst.ground_truth = std::move(G);
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed instance file " + path + ": " +
                             e.what());
  }
  inst.validate();
  return inst;
}

CompletionInstance restrict_top_left(const CompletionInstance& inst, int n2,
                                     int m2) {
  if (n2 < 1 || n2 > inst.n || m2 < 1 || m2 > inst.m)
    throw std::invalid_argument("restriction dimensions out of range");
  CompletionInstance out;
  out.n = n2;
  out.m = m2;
  out.k = std::min(inst.k, std::min(n2, m2));
  out.gamma = inst.gamma;
  out.mode = inst.mode;
  out.mask.reset(n2, m2);
  for (const auto& [i, j] : inst.mask.pairs())
    if (i < n2 && j < m2) out.set_entry(i, j, inst.observed(i, j));
  if (inst.ground_truth)
    out.ground_truth = inst.ground_truth->topLeftCorner(n2, m2);
  return out;
}

std::string to_string(EntryRate r) {
  switch (r) {
    case EntryRate::KN: return "kn";
    case EntryRate::KNLogN: return "knlogn";
    case EntryRate::KN65LogN: return "kn65logn";
    case EntryRate::KN15: return "kn15";
    case EntryRate::KN2: return "kn2";
  }
  return "?";
}

EntryRate entry_rate_from_string(const std::string& s) {
  if (s == "kn") return EntryRate::KN;
  if (s == "knlogn") return EntryRate::KNLogN;
  if (s == "kn65logn") return EntryRate::KN65LogN;
  if (s == "kn15") return EntryRate::KN15;
  if (s == "kn2") return EntryRate::KN2;
  throw std::invalid_argument("unknown entry rate: " + s);
}

int observed_count(EntryRate rate, double p, int k, int n) {
  // |I| = p * k * r(n), with every r normalized so that r(10) = 10; the
  // slowest and canonical rates (n, n log10 n) then keep their usual
  // constants while the faster rates remain comparable at small n.
  const double kd = k, nd = n;
  double r = 0;
  switch (rate) {
    case EntryRate::KN: r = nd; break;
    case EntryRate::KNLogN: r = nd * std::log10(nd); break;
    case EntryRate::KN65LogN:
      r = std::pow(nd, 1.2) * std::log10(nd) / std::pow(10.0, 0.2);
      break;
    case EntryRate::KN15: r = std::pow(nd, 1.5) / std::sqrt(10.0); break;
    case EntryRate::KN2: r = nd * nd / 10.0; break;
  }
  return static_cast<int>(std::ceil(p * kd * r - 1e-12));
}

}  // namespace lrbb
