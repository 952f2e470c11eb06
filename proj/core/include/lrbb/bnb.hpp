#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lrbb/conic.hpp"
#include "lrbb/disjunctions.hpp"
#include "lrbb/instance.hpp"
#include "lrbb/relaxations.hpp"

namespace lrbb {

// Branch-and-bound over the lifted relaxation: nodes carry the disjunction
// branches (or McCormick boxes) accumulated from the root, each node solves
// its restricted relaxation, eps-feasible solutions (lambda_min(UU' - Y) >=
// -eps) become incumbents, fractional nodes split into q^k children through
// a new eigenvector disjunction (two children per box split in McCormick
// mode), and nodes whose bound cannot beat the incumbent by more than the
// relative tolerance are fathomed.

enum class DisjunctionMode { Eigenvector, McCormick };
enum class NodeOrder { BestFirst, BreadthFirst, DepthFirst };
enum class Termination { GapClosed, TimeLimit, QueueEmpty, Infeasible,
                         NodeLimit };

std::string to_string(DisjunctionMode m);
std::string to_string(NodeOrder o);
std::string to_string(Termination t);
DisjunctionMode disjunction_mode_from_string(const std::string& s);
NodeOrder node_order_from_string(const std::string& s);

struct SolverConfig {
  DisjunctionMode disjunction = DisjunctionMode::Eigenvector;
  int pieces = 0;  // 0: default_pieces(k, n)
  NodeOrder order = NodeOrder::BestFirst;
  double eps = 1e-4;  // feasibility and relative-gap target
  double time_limit_s = std::numeric_limits<double>::infinity();
  std::int64_t node_limit = -1;  // < 0: unlimited
  bool use_node_altmin = true;
  double node_altmin_beta = 0.5;
  ShorPolicy shor = ShorPolicy::None;  // root strengthening
  bool presolve = false;               // determinant fills (basis pursuit)
  std::uint64_t seed = 0;
  int threads = 1;  // > 1: pool workers; node counts may vary run-to-run
  bool log_nodes = false;
  std::ostream* log = nullptr;  // default std::cout when log_nodes is set
  conic::SolveTolerances conic_tol;

  void validate() const;  // throws std::invalid_argument
};

// A subproblem: the constraints accumulated from the root plus bookkeeping.
// `bound` starts as the inherited parent bound (a valid lower bound, since
// children partition the parent's region) and is raised to the node's own
// relaxation value once solved.
struct Node {
  std::vector<DisjunctionBranch> branches;  // eigenvector mode
  BoxState box;                             // McCormick mode
  int depth = 0;
  double bound = -std::numeric_limits<double>::infinity();
  std::int64_t sequence = 0;
  // A node whose solve failed numerically is requeued once carrying any
  // certificate floor recovered from the diverging multipliers; a second
  // failure drops it (its bound stays in the lower-bound bookkeeping).
  bool retried = false;
};

// What the engine needs from a nodal relaxation solution.  U is extracted
// when the program names it (lifted/slice forms) and otherwise recovered by
// rounding Y: its top-k eigenvectors scaled by sqrt(clamp(lambda, 0, 1)),
// which satisfies the factor constraints whenever Y does.  V holds the
// McCormick products when present.
struct NodeSolution {
  double objective = 0.0;
  Matrix X, Y, U;
  Matrix V;
};

struct Incumbent {
  Matrix X, U, Y;
  double objective = std::numeric_limits<double>::infinity();
};

struct BoundPoint {
  double t_s = 0.0;  // seconds since solve start
  double value = 0.0;
};

struct SolveReport {
  double z_lower = -std::numeric_limits<double>::infinity();
  double z_upper = std::numeric_limits<double>::infinity();
  std::optional<Incumbent> incumbent;
  Termination termination = Termination::QueueEmpty;
  std::int64_t nodes_explored = 0;
  std::int64_t nodes_failed = 0;  // dropped after the retry, bound retained
  double final_gap = std::numeric_limits<double>::infinity();
  double root_bound = -std::numeric_limits<double>::infinity();
  double root_time_s = 0.0;
  double total_time_s = 0.0;
  int presolve_fills = 0;
  bool fully_presolved = false;
  std::vector<BoundPoint> lower_trajectory;  // non-decreasing
  std::vector<BoundPoint> upper_trajectory;  // non-increasing
  std::vector<double> node_solve_times;
};

// (Z_upper - Z_lower) / max(|Z_upper|, 1e-10); +inf when either bound is
// still at its sentinel.
double relative_gap(double z_lower, double z_upper);

// Accepts an eps-feasible nodal solution: lambda_min(UU' - Y) >= -eps.  The
// incumbent objective is re-evaluated on the extracted X rather than read
// from the relaxation, so Theta slack cannot understate it.
std::optional<Incumbent> check_incumbent(const CompletionInstance& inst,
                                         const NodeSolution& sol, double eps);

// Children of a fractional node: q^k branches of a fresh eigenvector
// disjunction anchored at (U, Y), or two box halves split at the most
// violated McCormick product.  Children inherit the parent's bound; their
// sequence numbers are assigned by the queue.  Throws std::invalid_argument
// when the parent solution is already eps-feasible.
std::vector<Node> expand_node(const Node& parent, const NodeSolution& sol,
                              const CompletionInstance& inst,
                              const SolverConfig& config);

// Node storage honoring the configured exploration order.  BestFirst pops
// the minimum bound (ties by sequence), BreadthFirst is FIFO, DepthFirst is
// LIFO.  min_bound() is the least bound over queued nodes under any order.
class NodeQueue {
 public:
  explicit NodeQueue(NodeOrder order) : order_(order) {}

  void push(Node node);
  Node pop();  // throws std::logic_error when empty
  bool empty() const { return size_ == 0; }
  std::int64_t size() const { return size_; }
  double min_bound() const;

 private:
  NodeOrder order_;
  std::int64_t size_ = 0;
  std::deque<Node> fifo_;                     // breadth/depth-first
  std::multimap<double, Node> by_bound_;      // best-first
  std::multiset<double> bounds_;              // min over queued nodes
};

// Algorithm 1.  Runs presolve first on basis-pursuit instances when enabled
// (a determinant contradiction proves infeasibility outright), seeds the
// incumbent via alternating minimization on noisy instances, then explores
// until the relative gap closes, the queue empties, or a limit trips.
SolveReport solve(const CompletionInstance& inst, const SolverConfig& config);

}  // namespace lrbb
