#include "lrbb/bnb.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <iostream>
#include <mutex>
#include <set>
#include <stdexcept>
#include <thread>

#include "lrbb/heuristics.hpp"
#include "lrbb/presolve.hpp"
#include "lrbb/rng.hpp"

namespace lrbb {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Factor recovered by rounding Y: top-k eigenvectors scaled by
// sqrt(clamp(lambda, 0, 1)).  UU' = truncate_k(Y) <= Y, so (Y, U) satisfies
// the factor block whenever Y is feasible, and lambda_min(UU' - Y) equals
// -lambda_{k+1}(Y): the feasibility test degrades gracefully.
Matrix factor_from_projection(const Matrix& Y, int k) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(Y));
  const int n = static_cast<int>(Y.rows());
  Matrix U(n, k);
  for (int t = 0; t < k; ++t) {
    const double lam = std::clamp(es.eigenvalues()(n - 1 - t), 0.0, 1.0);
    U.col(t) = es.eigenvectors().col(n - 1 - t) * std::sqrt(lam);
  }
  return U;
}

NodeSolution extract_node_solution(const conic::ConicSolution& sol,
                                   const conic::ConicProgram& prog,
                                   const CompletionInstance& inst,
                                   bool want_products) {
  NodeSolution out;
  out.objective = sol.objective;
  out.X = conic::extract(sol, prog, "X");
  if (prog.has_symbol("Y")) {
    out.Y = conic::extract(sol, prog, "Y");
  } else {
    out.Y = Matrix::Zero(inst.n, inst.n);
    for (int t = 1; t <= inst.k; ++t)
      out.Y += conic::extract(sol, prog, "Y" + std::to_string(t));
  }
  if (prog.has_symbol("U")) {
    out.U = conic::extract(sol, prog, "U");
  } else if (prog.has_symbol("U1")) {
    out.U = Matrix(inst.n, inst.k);
    for (int t = 0; t < inst.k; ++t)
      out.U.col(t) =
          conic::extract(sol, prog, "U" + std::to_string(t + 1)).col(0);
  } else {
    out.U = factor_from_projection(out.Y, inst.k);
  }
  if (want_products && prog.has_symbol("V"))
    out.V = conic::extract(sol, prog, "V");
  return out;
}

// A lower bound that stays valid when the solver stops short of optimality:
// back off the primal value by the relative duality gap it reported.
double safe_node_bound(const conic::ConicSolution& sol) {
  return sol.objective -
         std::abs(sol.duality_gap) * std::max(1.0, std::abs(sol.objective));
}

conic::ConicProgram build_node_program(const CompletionInstance& inst,
                                       const Node& node,
                                       const SolverConfig& config,
                                       const std::vector<Minor>& minors) {
  if (config.disjunction == DisjunctionMode::McCormick)
    return build_mccormick(inst, node.box);
  if (node.branches.empty() && config.shor != ShorPolicy::None) {
    if (inst.k == 1) return build_shor_rank1(inst, minors);
    return build_slice_relaxation(inst, SliceVariant::Shor, minors);
  }
  return build_lifted(inst, node.branches);
}

// Norm bound over the feasible points of a lifted nodal program whose total
// objective is at most `cutoff_total`.  Every block is bounded by program
// structure once the objective is capped:
//   tr Y <= k and diag Y <= 1;  theta_coeff . tr Theta <= B where
//   B = cutoff_total - obj_constant (remaining objective terms are >= 0);
//   ||P||_F <= tr P = tr Y + tr Theta;  ||I - Y||_F <= n;
//   ||[[Y,U],[U',I]]||_F <= tr = tr Y + k <= 2k;  trace slack <= k;
//   interval slacks <= piece width <= 2;  the aggregate slack is at most
//   x'Yx + sum_j (|slope_j| |U_j'x| + |intercept_j|) <= 1 + k(2 sqrt(k) + 1)
//   for a unit branching vector (slopes of x^2 chords on [-1,1] are in
//   [-2,2], intercepts in [-1,1], ||U_j|| <= sqrt(tr Y) <= sqrt(k));  the
//   noisy epigraph cone has a - c = 1, (a + c)/2 <= B, so its norm is at
//   most sqrt(2)(2B + 1).
// The final bound carries a 10x safety factor; an overestimate only costs
// pruning strength, never soundness.
double lifted_norm_bound(const CompletionInstance& inst, double nb,
                         double cutoff_total, double obj_constant) {
  const double k = inst.k, n = inst.n;
  const double theta_coeff =
      inst.mode == InstanceMode::BasisPursuit ? 1.0 : 0.5 / inst.gamma;
  const double B = std::max(cutoff_total - obj_constant, 0.0);
  const double tr_theta = B / theta_coeff;
  double sq = 0.0;
  sq += (k + tr_theta) * (k + tr_theta);  // moment block P
  sq += n * n;                            // Y <= I slack block
  sq += 4.0 * k * k;                      // factor block
  sq += k * k;                            // trace slack
  const double agg = 1.0 + k * (2.0 * std::sqrt(k) + 1.0);
  sq += nb * (2.0 * k * 4.0 + agg * agg);
  if (inst.mode == InstanceMode::Noisy)
    sq += 2.0 * (2.0 * B + 1.0) * (2.0 * B + 1.0);
  return 10.0 * std::sqrt(sq);
}

// Interval constraints a node imposes on U, for the restricted heuristic:
// the disjunction branches directly, or a McCormick box read column-wise.
NodePolyhedron node_polyhedron(const Node& node, const SolverConfig& config,
                               const CompletionInstance& inst) {
  NodePolyhedron poly;
  if (config.disjunction == DisjunctionMode::Eigenvector) {
    for (const DisjunctionBranch& b : node.branches) poly.add_branch(b);
    return poly;
  }
  for (int i = 0; i < inst.n; ++i)
    for (int j = 0; j < inst.k; ++j) {
      const double lo = node.box.lower(i, j), hi = node.box.upper(i, j);
      if (lo <= -1.0 + 1e-12 && hi >= 1.0 - 1e-12) continue;
      UInterval iv;
      iv.x = Vector::Unit(inst.n, i);
      iv.column = j;
      iv.lo = lo;
      iv.hi = hi;
      poly.intervals.push_back(iv);
    }
  return poly;
}

Incumbent incumbent_from_factors(const Matrix& X, double objective, int k) {
  Eigen::BDCSVD<Matrix> svd(X, Eigen::ComputeThinU);
  const int have = std::min<int>(k, static_cast<int>(svd.matrixU().cols()));
  Incumbent inc;
  inc.X = X;
  inc.U = Matrix::Zero(X.rows(), k);
  inc.U.leftCols(have) = svd.matrixU().leftCols(have);
  inc.Y = inc.U * inc.U.transpose();
  inc.objective = objective;
  return inc;
}

}  // namespace

std::string to_string(DisjunctionMode m) {
  return m == DisjunctionMode::Eigenvector ? "eig" : "mccormick";
}

std::string to_string(NodeOrder o) {
  switch (o) {
    case NodeOrder::BestFirst: return "best";
    case NodeOrder::BreadthFirst: return "breadth";
    case NodeOrder::DepthFirst: return "depth";
  }
  return "best";
}

std::string to_string(Termination t) {
  switch (t) {
    case Termination::GapClosed: return "gap_closed";
    case Termination::TimeLimit: return "time_limit";
    case Termination::QueueEmpty: return "queue_empty";
    case Termination::Infeasible: return "infeasible";
    case Termination::NodeLimit: return "node_limit";
  }
  return "queue_empty";
}

DisjunctionMode disjunction_mode_from_string(const std::string& s) {
  if (s == "eig" || s == "eigenvector") return DisjunctionMode::Eigenvector;
  if (s == "mccormick") return DisjunctionMode::McCormick;
  throw std::invalid_argument("unknown disjunction mode: " + s);
}

NodeOrder node_order_from_string(const std::string& s) {
  if (s == "best") return NodeOrder::BestFirst;
  if (s == "breadth") return NodeOrder::BreadthFirst;
  if (s == "depth") return NodeOrder::DepthFirst;
  throw std::invalid_argument("unknown node order: " + s);
}

void SolverConfig::validate() const {
  if (!(eps > 0.0)) throw std::invalid_argument("config: eps must be > 0");
  if (pieces != 0 && (pieces < 2 || pieces > 4))
    throw std::invalid_argument("config: pieces must be 2, 3, or 4");
  if (threads < 1) throw std::invalid_argument("config: threads must be >= 1");
  if (!(node_altmin_beta > 0.0) || node_altmin_beta > 1.0)
    throw std::invalid_argument("config: node_altmin_beta not in (0, 1]");
  if (!(time_limit_s > 0.0))
    throw std::invalid_argument("config: time limit must be positive");
}

double relative_gap(double z_lower, double z_upper) {
  if (std::isinf(z_upper) || std::isinf(z_lower)) return kInf;
  return (z_upper - z_lower) / std::max(std::abs(z_upper), 1e-10);
}

std::optional<Incumbent> check_incumbent(const CompletionInstance& inst,
                                         const NodeSolution& sol, double eps) {
  if (min_eigenvalue(sol.U * sol.U.transpose() - sol.Y) < -eps)
    return std::nullopt;
  Incumbent inc;
  inc.X = sol.X;
  inc.U = sol.U;
  inc.Y = sol.Y;
  inc.objective = objective_value(inst, sol.X);
  // An exactly rank-k rounding of X sometimes evaluates better than the
  // eps-feasible X itself; both are legitimate upper bounds, but X as-is is
  // only eligible while its tail spectrum is eps-small relative to its head.
  const Matrix rounded = truncate_rank(sol.X, inst.k);
  const double alt = objective_value(inst, rounded);
  Eigen::BDCSVD<Matrix> svd(sol.X);
  const auto& sig = svd.singularValues();
  const bool tail_ok =
      sig.size() <= inst.k || sig[inst.k] <= eps * std::max(sig[0], 1e-12);
  if (alt < inc.objective || !tail_ok)
    return incumbent_from_factors(rounded, alt, inst.k);
  return inc;
}

std::vector<Node> expand_node(const Node& parent, const NodeSolution& sol,
                              const CompletionInstance& inst,
                              const SolverConfig& config) {
  std::vector<Node> children;
  if (config.disjunction == DisjunctionMode::Eigenvector) {
    const auto viol = find_violating_eigenvector(sol.Y, sol.U, config.eps);
    if (!viol)
      throw std::invalid_argument("expand_node: solution is eps-feasible");
    const int q =
        config.pieces > 0 ? config.pieces : default_pieces(inst.k, inst.n);
    auto cut =
        std::make_shared<DisjunctionCut>(make_cut(sol.U, sol.Y, viol->first, q));
    children.reserve(cut->num_branches());
    for (int idx = 0; idx < cut->num_branches(); ++idx) {
      Node child;
      child.branches = parent.branches;
      child.branches.push_back({cut, cut->branch_pieces(idx)});
      child.depth = parent.depth + 1;
      child.bound = parent.bound;
      children.push_back(std::move(child));
    }
    return children;
  }

  // McCormick: split the U entry under the most violated product envelope.
  const int k = inst.k;
  int bi = 0, bj = 0;
  double worst = -1.0;
  for (int i = 0; i < inst.n; ++i)
    for (int j1 = 0; j1 < k; ++j1)
      for (int j2 = j1; j2 < k; ++j2) {
        const double v = sol.V.size() > 0
                             ? std::abs(sol.V(i, pair_index(k, j1, j2)) -
                                        sol.U(i, j1) * sol.U(i, j2))
                             : 0.0;
        if (v <= worst) continue;
        // Prefer the coordinate with the wider remaining interval.
        const double w1 = parent.box.upper(i, j1) - parent.box.lower(i, j1);
        const double w2 = parent.box.upper(i, j2) - parent.box.lower(i, j2);
        worst = v;
        bi = i;
        bj = w1 >= w2 ? j1 : j2;
      }
  if (worst < 1e-9) {
    // No envelope violation to chase: halve the widest box interval.
    double widest = -1.0;
    for (int i = 0; i < inst.n; ++i)
      for (int j = 0; j < k; ++j) {
        const double w = parent.box.upper(i, j) - parent.box.lower(i, j);
        if (w > widest) {
          widest = w;
          bi = i;
          bj = j;
        }
      }
  }
  const double lo = parent.box.lower(bi, bj), hi = parent.box.upper(bi, bj);
  const double margin = 0.15 * (hi - lo);
  const double split =
      std::clamp(sol.U(bi, bj), lo + margin, hi - margin);
  auto halves = make_mccormick_children(parent.box, bi, bj, split);
  for (BoxState* half : {&halves.first, &halves.second}) {
    Node child;
    child.box = std::move(*half);
    child.depth = parent.depth + 1;
    child.bound = parent.bound;
    children.push_back(std::move(child));
  }
  return children;
}

void NodeQueue::push(Node node) {
  bounds_.insert(node.bound);
  ++size_;
  if (order_ == NodeOrder::BestFirst) {
    const double b = node.bound;
    by_bound_.emplace(b, std::move(node));
  } else {
    fifo_.push_back(std::move(node));
  }
}

Node NodeQueue::pop() {
  if (size_ == 0) throw std::logic_error("NodeQueue::pop: queue is empty");
  Node out;
  if (order_ == NodeOrder::BestFirst) {
    auto it = by_bound_.begin();
    out = std::move(it->second);
    by_bound_.erase(it);
  } else if (order_ == NodeOrder::BreadthFirst) {
    out = std::move(fifo_.front());
    fifo_.pop_front();
  } else {
    out = std::move(fifo_.back());
    fifo_.pop_back();
  }
  bounds_.erase(bounds_.find(out.bound));
  --size_;
  return out;
}

double NodeQueue::min_bound() const {
  return bounds_.empty() ? kInf : *bounds_.begin();
}

namespace {

// A node dropped after two failed relaxation solves.  Its final dual iterate
// still carries information: with y the returned multipliers, every feasible
// x satisfies c'x >= b'y - ||x|| . dist(c - A'y, K*).  The norm bound over
// the sublevel set {objective <= cutoff} shrinks as the incumbent improves,
// so the certified floor of a dropped node rises over time and is therefore
// re-evaluated against the current cutoff rather than frozen at drop time.
struct FailedCert {
  double inherited = -kInf;  // bound inherited down the branch chain
  double by = -kInf;         // b'y + c0 at the final iterate
  double dist = kInf;        // dist(c - A'y, K*); infinite = no usable dual
  double nb = 0.0;           // branch count, for the norm bound
  double c0 = 0.0;           // objective constant of the nodal program
};

// Shared search state; the mutex covers every member.  Workers solve
// relaxations outside the lock and reacquire it to publish results.
class Engine {
 public:
  Engine(const CompletionInstance& inst, const SolverConfig& config)
      : inst_(inst), cfg_(config), queue_(config.order) {}

  SolveReport run();

 private:
  void worker();
  void process(Node node);
  // Everything below assumes mu_ is held.
  // Certified floor of a dropped node under the current cutoff.  dist == 0
  // means c - A'y lies in the dual cone exactly, so b'y is an unconditional
  // weak-duality bound; otherwise the Farkas inequality only covers the
  // sublevel set, and points outside it cost more than the cutoff, so the
  // region optimum is at least min(floor, cutoff).
  double failed_entry_floor(const FailedCert& e) const {
    double f = e.inherited;
    if (!(e.by > -kInf)) return f;
    const double margin = 1e-6 * std::max(1.0, std::abs(e.by));
    if (e.dist <= 0.0) return std::max(f, e.by - margin);
    const double cut = cutoff();
    if (std::isfinite(e.dist) && std::isfinite(cut)) {
      const double radius = lifted_norm_bound(inst_, e.nb, cut, e.c0);
      f = std::max(f, std::min(e.by - e.dist * radius - margin, cut));
    }
    return f;
  }
  // Called whenever the cutoff tightens: dropped nodes whose certified floor
  // now clears the cutoff are permanently fathomed (the certificate proves
  // their region holds nothing better than the cutoff at conversion time,
  // and that fact survives later incumbent improvements).
  void sweep_failed() {
    const double cut = cutoff();
    if (!std::isfinite(cut)) return;
    for (std::size_t i = 0; i < failed_.size();) {
      const double f = failed_entry_floor(failed_[i]);
      if (f >= cut) {
        fathom_floor_ = std::min(fathom_floor_, f);
        failed_[i] = failed_.back();
        failed_.pop_back();
      } else {
        ++i;
      }
    }
  }
  double z_lower_now() const {
    double z = std::min(queue_.min_bound(), fathom_floor_);
    for (const FailedCert& e : failed_) z = std::min(z, failed_entry_floor(e));
    if (!inflight_.empty()) z = std::min(z, *inflight_.begin());
    return z;
  }
  void refresh_lower() {
    const double z = z_lower_now();
    if (z > best_lower_ && !std::isinf(z)) {
      best_lower_ = z;
      rep_.lower_trajectory.push_back({seconds_since(start_), z});
    }
  }
  void set_upper(const Incumbent& inc) {
    if (inc.objective >= z_upper_) return;
    z_upper_ = inc.objective;
    incumbent_ = inc;
    rep_.upper_trajectory.push_back({seconds_since(start_), z_upper_});
    sweep_failed();
  }
  double cutoff() const {
    if (std::isinf(z_upper_)) return kInf;
    // Nudge upward until a floor that lands exactly on the cutoff certifies
    // an eps gap under the same rounded arithmetic the gap test uses.
    double c = z_upper_ - cfg_.eps * std::max(std::abs(z_upper_), 1e-10);
    while (relative_gap(c, z_upper_) > cfg_.eps) c = std::nextafter(c, kInf);
    return c;
  }
  bool should_stop() {
    if (stop_) return true;
    if (relative_gap(best_lower_, z_upper_) <= cfg_.eps) {
      term_ = Termination::GapClosed;
      return stop_ = true;
    }
    if (seconds_since(start_) > cfg_.time_limit_s) {
      term_ = Termination::TimeLimit;
      return stop_ = true;
    }
    if (cfg_.node_limit >= 0 && popped_ >= cfg_.node_limit) {
      term_ = Termination::NodeLimit;
      return stop_ = true;
    }
    return false;
  }
  void fathom(double floor, const char* action, const Node& node) {
    fathom_floor_ = std::min(fathom_floor_, floor);
    log_node(node, action);
  }
  void log_node(const Node& node, const char* action) {
    if (!cfg_.log_nodes) return;
    std::ostream& os = cfg_.log ? *cfg_.log : std::cout;
    os << "node " << node.sequence << " depth " << node.depth << " bound "
       << node.bound << " lower " << best_lower_ << " upper " << z_upper_
       << " gap " << relative_gap(best_lower_, z_upper_) << ' ' << action
       << '\n';
  }

  CompletionInstance inst_;
  SolverConfig cfg_;
  std::vector<Minor> minors_;
  Clock::time_point start_;

  std::mutex mu_;
  std::condition_variable cv_;
  NodeQueue queue_;
  std::multiset<double> inflight_;
  double fathom_floor_ = kInf;
  std::vector<FailedCert> failed_;
  double best_lower_ = -kInf;
  double z_upper_ = kInf;
  std::optional<Incumbent> incumbent_;
  std::int64_t next_seq_ = 0;
  std::int64_t popped_ = 0;
  bool stop_ = false;
  Termination term_ = Termination::QueueEmpty;
  SolveReport rep_;
};

SolveReport Engine::run() {
  start_ = Clock::now();
  inst_.validate();
  cfg_.validate();

  if (cfg_.presolve && inst_.mode == InstanceMode::BasisPursuit) {
    try {
      const PresolveResult pre =
          inst_.k == 1 ? presolve_rank1(inst_) : presolve_rankk(inst_);
      rep_.presolve_fills = pre.fill_count();
      rep_.fully_presolved = pre.fully_presolved;
      inst_ = apply_presolve(inst_, pre);
    } catch (const PresolveContradiction&) {
      // The observations admit no rank-k completion at all.
      rep_.termination = Termination::Infeasible;
      rep_.total_time_s = seconds_since(start_);
      return rep_;
    }
  }
  minors_ = select_minors(inst_, cfg_.shor, cfg_.seed);

  if (inst_.mode == InstanceMode::Noisy) {
    if (const auto inc = root_incumbent(inst_))
      set_upper(incumbent_from_factors(inc->X, inc->objective, inst_.k));
  }

  Node root;
  root.box = full_box(inst_.n, inst_.k);
  root.sequence = next_seq_++;
  queue_.push(std::move(root));

  if (cfg_.threads <= 1) {
    std::unique_lock<std::mutex> lk(mu_);
    while (!queue_.empty()) {
      refresh_lower();
      if (should_stop()) break;
      Node node = queue_.pop();
      ++popped_;
      lk.unlock();
      process(std::move(node));
      lk.lock();
    }
    refresh_lower();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(cfg_.threads);
    for (int t = 0; t < cfg_.threads; ++t)
      pool.emplace_back([this] { worker(); });
    for (auto& th : pool) th.join();
    std::lock_guard<std::mutex> lk(mu_);
    refresh_lower();
  }

  if (!stop_) {
    // Queue exhausted: every region was fathomed.  With an incumbent the
    // floors certify (near-)optimality; without one and without dropped
    // nodes, basis pursuit is proven infeasible.
    if (relative_gap(best_lower_, z_upper_) <= cfg_.eps)
      term_ = Termination::GapClosed;
    else if (!incumbent_ && rep_.nodes_failed == 0)
      term_ = Termination::Infeasible;
    else
      term_ = Termination::QueueEmpty;
  }

  rep_.z_lower = best_lower_;
  rep_.z_upper = z_upper_;
  rep_.incumbent = incumbent_;
  rep_.termination = term_;
  rep_.final_gap = std::max(0.0, relative_gap(best_lower_, z_upper_));
  rep_.total_time_s = seconds_since(start_);
  return rep_;
}

void Engine::worker() {
  std::unique_lock<std::mutex> lk(mu_);
  while (true) {
    refresh_lower();
    if (should_stop()) break;
    if (queue_.empty()) {
      if (inflight_.empty()) break;
      cv_.wait(lk);
      continue;
    }
    Node node = queue_.pop();
    ++popped_;
    lk.unlock();
    process(std::move(node));
    lk.lock();
  }
  lk.unlock();
  cv_.notify_all();
}

void Engine::process(Node node) {
  {
    std::lock_guard<std::mutex> lk(mu_);
    ++rep_.nodes_explored;
    if (node.bound >= cutoff()) {
      fathom(node.bound, "prune-bound", node);
      cv_.notify_all();
      return;
    }
    inflight_.insert(node.bound);
  }

  conic::SolveTolerances tol = cfg_.conic_tol;
  // A second attempt from a different initial centering often either
  // converges or runs far enough along the Farkas ray to certify
  // infeasibility where the default start stalls on a short step.
  if (node.retried) tol.init_scale = 10.0;
  const auto t0 = Clock::now();
  const conic::ConicProgram prog =
      build_node_program(inst_, node, cfg_, minors_);
  const conic::ConicSolution sol = conic::solve(prog, tol);
  const double solve_s = seconds_since(t0);

  std::unique_lock<std::mutex> lk(mu_);
  inflight_.erase(inflight_.find(node.bound));
  rep_.node_solve_times.push_back(solve_s);

  switch (sol.status) {
    case conic::SolveStatus::Infeasible:
      fathom(kInf, "prune-infeasible", node);
      if (node.sequence == 0) {
        rep_.root_bound = kInf;
        rep_.root_time_s = seconds_since(start_);
      }
      cv_.notify_all();
      return;
    case conic::SolveStatus::NumericalFailure: {
      // The interior-point method usually fails here because the branch
      // region is infeasible or bound-dominated: multipliers diverge along
      // an improving ray.  Turn the final iterate into a rigorous objective
      // floor: any feasible x has
      //   c'x >= b'y - ||x|| . dist(c - A'y, K*),
      // and over the sublevel set {objective <= cutoff} the norm ||x|| is
      // bounded by program structure, so the floor is certified whenever it
      // lands above the cutoff and the node can be fathomed.  The McCormick
      // program has no such structural norm bound, so it gets no certificate.
      FailedCert cert;
      cert.nb = static_cast<double>(node.branches.size());
      cert.c0 = prog.obj_constant();
      const bool lifted_family =
          cfg_.disjunction == DisjunctionMode::Eigenvector &&
          !(node.branches.empty() && cfg_.shor != ShorPolicy::None);
      if (lifted_family && sol.y.size() == prog.num_rows()) {
        const Vector cand = conic::dual_slack_candidate(prog, sol.y);
        cert.dist = conic::dual_cone_distance(prog, cand);
        cert.by = prog.obj_constant();
        for (int r = 0; r < prog.num_rows(); ++r)
          cert.by += prog.rhs()[r] * sol.y[r];
      }
      cert.inherited = node.bound;
      const double floor = failed_entry_floor(cert);
      if (floor >= cutoff()) {
        fathom(floor, "prune-dominated", node);
        cv_.notify_all();
        return;
      }
      node.bound = std::max(node.bound, floor);
      if (!node.retried) {
        node.retried = true;
        log_node(node, "requeue");
        queue_.push(std::move(node));
      } else {
        ++rep_.nodes_failed;
        cert.inherited = node.bound;
        failed_.push_back(cert);
        log_node(node, "drop-failed");
      }
      cv_.notify_all();
      return;
    }
    case conic::SolveStatus::Optimal:
    case conic::SolveStatus::NearOptimal:
      break;
  }

  const bool want_products = cfg_.disjunction == DisjunctionMode::McCormick;
  const NodeSolution nodesol =
      extract_node_solution(sol, prog, inst_, want_products);
  node.bound = std::max(node.bound, safe_node_bound(sol));
  if (node.sequence == 0) {
    rep_.root_bound = node.bound;
    rep_.root_time_s = seconds_since(start_);
  }

  if (const auto inc = check_incumbent(inst_, nodesol, cfg_.eps)) {
    set_upper(*inc);
    fathom(node.bound, "prune-feasible", node);
    cv_.notify_all();
    return;
  }
  if (node.bound >= cutoff()) {
    fathom(node.bound, "prune-bound", node);
    cv_.notify_all();
    return;
  }

  std::vector<Node> children = expand_node(node, nodesol, inst_, cfg_);
  for (Node& child : children) {
    child.sequence = next_seq_++;
    queue_.push(std::move(child));
  }
  log_node(node, "branch");

  // Depth-degrading randomized restart of the heuristic inside this node's
  // region; noisy instances only (a feasible basis-pursuit point is as hard
  // as the problem itself).
  if (cfg_.use_node_altmin && inst_.mode == InstanceMode::Noisy &&
      node.depth >= 1) {
    Rng rng(mix_seed(cfg_.seed, static_cast<std::uint64_t>(node.sequence)));
    const double p =
        node_selection_probability(node.depth, cfg_.node_altmin_beta);
    if (rng.uniform() < p) {
      const NodePolyhedron poly = node_polyhedron(node, cfg_, inst_);
      const Matrix Y_R = nodesol.Y;
      lk.unlock();
      const auto pair = altmin_node(inst_, poly, Y_R, std::nullopt, 25, 1e-7,
                                    nullptr, cfg_.conic_tol);
      lk.lock();
      if (pair && std::isfinite(pair->objective))
        set_upper(
            incumbent_from_factors(pair->X, pair->objective, inst_.k));
    }
  }
  cv_.notify_all();
}

}  // namespace

SolveReport solve(const CompletionInstance& inst, const SolverConfig& config) {
  Engine engine(inst, config);
  return engine.run();
}

}  // namespace lrbb
