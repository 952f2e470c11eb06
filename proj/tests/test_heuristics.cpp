#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "doctest.h"
#include "lrbb/conic.hpp"
#include "lrbb/heuristics.hpp"
#include "lrbb/instance.hpp"
#include "lrbb/relaxations.hpp"
#include "lrbb/rng.hpp"

using namespace lrbb;

namespace {

bool close_vals(double a, double b, double tol = 1e-6) {
  return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

CompletionInstance manual_instance(int n, int m, int k, double gamma,
                                   InstanceMode mode) {
  CompletionInstance inst;
  inst.n = n;
  inst.m = m;
  inst.k = k;
  inst.gamma = gamma;
  inst.mode = mode;
  inst.mask.reset(n, m);
  return inst;
}

// Fully observed noisy instance over a given data matrix.
CompletionInstance fully_observed(const Matrix& A, int k, double gamma) {
  auto inst = manual_instance(static_cast<int>(A.rows()),
                              static_cast<int>(A.cols()), k, gamma,
                              InstanceMode::Noisy);
  for (int i = 0; i < A.rows(); ++i)
    for (int j = 0; j < A.cols(); ++j) inst.set_entry(i, j, A(i, j));
  return inst;
}

Matrix random_matrix(int n, int m, Rng& rng) {
  Matrix A(n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) A(i, j) = rng.normal();
  return A;
}

double orthonormality_defect(const Matrix& U) {
  const Matrix G = U.transpose() * U;
  return (G - Matrix::Identity(U.cols(), U.cols())).cwiseAbs().maxCoeff();
}

// Trace is non-increasing within slack.
void check_descent(const std::vector<double>& trace, double slack = 1e-9) {
  for (std::size_t t = 1; t < trace.size(); ++t)
    CHECK(trace[t] <= trace[t - 1] + slack);
}

}  // namespace

TEST_CASE("initialize_U recovers the factor of observed rank-1 data") {
  Vector u(5), v(4);
  u << 3.0, -1.0, 2.0, 0.5, 1.0;
  v << 1.0, 2.0, -1.0, 0.5;
  const Matrix A = u * v.transpose();
  const auto inst = fully_observed(A, 1, 20.0);
  const Matrix U0 = initialize_U(inst);
  REQUIRE(U0.rows() == 5);
  REQUIRE(U0.cols() == 1);
  const Vector uhat = u / u.norm();
  const double dist =
      std::min((U0.col(0) - uhat).norm(), (U0.col(0) + uhat).norm());
  CHECK(dist < 1e-10);
}

TEST_CASE("initialize_U columns are orthonormal across random instances") {
  for (int s = 0; s < 50; ++s) {
    const int n = 7 + s % 2;
    const int k = 1 + s % 3;
    const int target = k * 2 * n + 4;
    const auto inst = generate_instance(n, n, k, 20.0, 0.1, target,
                                        1000 + static_cast<std::uint64_t>(s));
    const Matrix U0 = initialize_U(inst);
    CHECK(orthonormality_defect(U0) <= 1e-10);
  }
}

TEST_CASE("initialize_U stays orthonormal on all-zero observations") {
  auto inst = manual_instance(4, 4, 2, 5.0, InstanceMode::Noisy);
  inst.set_entry(0, 0, 0.0);
  inst.set_entry(1, 2, 0.0);
  inst.set_entry(2, 1, 0.0);
  inst.set_entry(3, 3, 0.0);
  const Matrix U0 = initialize_U(inst);
  CHECK(orthonormality_defect(U0) <= 1e-10);
}

TEST_CASE("altmin reaches the shrunk truncated SVD on full observations") {
  // With every entry observed the objective separates across singular values
  // and the optimum is (gamma/(1+gamma)) * truncate_k(A).
  Rng rng(42);
  const struct {
    int n, m, k;
    double gamma;
  } cases[] = {{5, 4, 1, 20.0}, {6, 6, 2, 20.0}, {8, 5, 3, 2.0}};
  for (const auto& c : cases) {
    const Matrix A = random_matrix(c.n, c.m, rng);
    const auto inst = fully_observed(A, c.k, c.gamma);
    const Matrix Xstar =
        (c.gamma / (1.0 + c.gamma)) * truncate_rank(A, c.k);
    const double oracle = objective_value(inst, Xstar);
    AltminReport rep;
    const FactorPair pair = altmin(inst, initialize_U(inst), 500, 1e-10, &rep);
    CHECK(rep.converged);
    CHECK(close_vals(pair.objective, oracle, 1e-6));
    CHECK((pair.X - Xstar).cwiseAbs().maxCoeff() < 1e-5);
  }
}

TEST_CASE("altmin descends at every half-step on partial observations") {
  for (std::uint64_t seed : {7u, 21u, 99u}) {
    const auto inst = generate_instance(6, 5, 2, 20.0, 0.1, 24, seed);
    AltminReport rep;
    altmin(inst, initialize_U(inst), 500, 1e-8, &rep);
    REQUIRE(rep.half_step_objectives.size() >= 2);
    check_descent(rep.half_step_objectives);
    CHECK(rep.converged);
  }
}

TEST_CASE("altmin factor pairs satisfy their structural invariants") {
  const auto inst = generate_instance(7, 6, 2, 20.0, 0.1, 30, 314);
  const FactorPair pair = altmin(inst, initialize_U(inst));
  // Cached product and stored objective are recomputable from the factors.
  CHECK((pair.X - pair.U * pair.V).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(std::abs(pair.objective - objective_value(inst, pair.X)) <=
        1e-9 * std::max(1.0, std::abs(pair.objective)));
  // Rank <= k by construction and orthonormal U after the final SVD.
  Eigen::BDCSVD<Matrix> svd(pair.X);
  CHECK(svd.singularValues()(std::min<int>(inst.k, 5)) <=
        1e-9 * std::max(1.0, svd.singularValues()(0)));
  CHECK(orthonormality_defect(pair.U) <= 1e-10);
}

TEST_CASE("root incumbent policy by mode") {
  // Basis pursuit gets no incumbent; noisy instances get a finite one.
  const auto bp = generate_instance(5, 5, 1, 1.0, 0.0, 14, 11);
  REQUIRE(bp.mode == InstanceMode::BasisPursuit);
  CHECK_FALSE(root_incumbent(bp).has_value());

  const auto noisy = generate_instance(5, 5, 1, 20.0, 0.1, 14, 11);
  const auto inc = root_incumbent(noisy);
  REQUIRE(inc.has_value());
  CHECK(std::isfinite(inc->objective));
  CHECK(close_vals(inc->objective, objective_value(noisy, inc->X), 1e-9));
}

TEST_CASE("altmin on basis pursuit keeps the descent surrogate honest") {
  // The iterations minimize the penalized surrogate; the stored objective is
  // the true basis-pursuit objective, +inf unless the observations match.
  const auto inst = generate_instance(5, 5, 1, 1.0, 0.0, 14, 23);
  AltminReport rep;
  const FactorPair pair = altmin(inst, initialize_U(inst), 200, 1e-9, &rep);
  check_descent(rep.half_step_objectives);
  CHECK(pair.objective == objective_value(inst, pair.X));
}

TEST_CASE("node altmin without constraints tracks the root trajectory") {
  // Y_R = U0 U0' makes the rounded initializer span the same subspace, and
  // inactive SOC constraints leave the conic U-step unconstrained.
  for (const auto& [n, m, k, obs, seed] :
       {std::tuple{5, 4, 1, 14, std::uint64_t{7}},
        std::tuple{5, 5, 2, 22, std::uint64_t{44}}}) {
    const auto inst = generate_instance(n, m, k, 20.0, 0.1, obs, seed);
    const Matrix U0 = initialize_U(inst);
    const FactorPair root = altmin(inst, U0);
    const auto node =
        altmin_node(inst, NodePolyhedron{}, U0 * U0.transpose(), std::nullopt,
                    30, 1e-8);
    REQUIRE(node.has_value());
    CHECK(close_vals(node->objective, root.objective, 1e-4));
  }
}

TEST_CASE("node altmin accepts a warm-started V") {
  const auto inst = generate_instance(5, 4, 1, 20.0, 0.1, 14, 7);
  const FactorPair root = altmin(inst, initialize_U(inst));
  const auto node = altmin_node(inst, NodePolyhedron{},
                                root.U * root.U.transpose(), root.V, 20, 1e-8);
  REQUIRE(node.has_value());
  CHECK(close_vals(node->objective, root.objective, 1e-4));
  CHECK_THROWS_AS(altmin_node(inst, NodePolyhedron{},
                              root.U * root.U.transpose(),
                              Matrix::Zero(2, 4), 20, 1e-8),
                  std::invalid_argument);
}

TEST_CASE("node altmin honors branch intervals") {
  const auto inst = generate_instance(6, 6, 1, 20.0, 0.1, 20, 91);
  const FactorPair root = altmin(inst, initialize_U(inst));
  int i0 = 0;
  root.U.col(0).cwiseAbs().maxCoeff(&i0);
  const double anchor = root.U(i0, 0);

  // Force the dominant coordinate to the opposite sign.
  UInterval iv;
  iv.x = Vector::Unit(6, i0);
  iv.column = 0;
  iv.lo = anchor > 0 ? -1.0 : 0.1;
  iv.hi = anchor > 0 ? -0.1 : 1.0;
  NodePolyhedron poly;
  poly.intervals.push_back(iv);

  const auto node =
      altmin_node(inst, poly, root.U * root.U.transpose(), std::nullopt, 15,
                  1e-6);
  REQUIRE(node.has_value());
  CHECK(poly.satisfied(node->U, 1e-6));
  const double moved = node->U(i0, 0);
  CHECK(moved >= iv.lo - 1e-6);
  CHECK(moved <= iv.hi + 1e-6);
  CHECK(close_vals(node->objective, objective_value(inst, node->X), 1e-9));
}

TEST_CASE("node altmin reports no incumbent on an empty region") {
  const auto inst = generate_instance(5, 4, 1, 20.0, 0.1, 14, 7);
  NodePolyhedron poly;
  UInterval a, b;
  a.x = b.x = Vector::Unit(5, 0);
  a.column = b.column = 0;
  a.lo = 0.5;
  a.hi = 0.6;
  b.lo = -0.6;
  b.hi = -0.5;
  poly.intervals = {a, b};
  const Matrix U0 = initialize_U(inst);
  const auto node =
      altmin_node(inst, poly, U0 * U0.transpose(), std::nullopt, 5, 1e-6);
  CHECK_FALSE(node.has_value());
}

TEST_CASE("node polyhedron accumulates branch intervals") {
  const Matrix U_hat = Matrix::Zero(3, 2);
  const Matrix Y_hat = 0.5 * Matrix::Identity(3, 3);
  const Vector x = Vector::Unit(3, 0);
  auto cut = std::make_shared<DisjunctionCut>(make_cut(U_hat, Y_hat, x, 2));
  REQUIRE(cut->num_branches() == 4);

  NodePolyhedron poly;
  poly.add_branch({cut, {0, 1}});
  REQUIRE(poly.intervals.size() == 2);
  CHECK(poly.intervals[0].column == 0);
  CHECK(poly.intervals[0].lo == doctest::Approx(-1.0));
  CHECK(poly.intervals[0].hi == doctest::Approx(0.0));
  CHECK(poly.intervals[1].column == 1);
  CHECK(poly.intervals[1].lo == doctest::Approx(0.0));
  CHECK(poly.intervals[1].hi == doctest::Approx(1.0));

  Matrix U(3, 2);
  U.setZero();
  U(0, 0) = -0.5;
  U(0, 1) = 0.5;
  CHECK(poly.satisfied(U));
  U(0, 1) = -0.5;  // outside [0, 1]
  CHECK_FALSE(poly.satisfied(U, 1e-9));

  CHECK_THROWS_AS(poly.add_branch({cut, {0}}), std::invalid_argument);
  CHECK_THROWS_AS(poly.add_branch({nullptr, {0, 1}}), std::invalid_argument);
}

TEST_CASE("node selection probability decays geometrically") {
  CHECK(node_selection_probability(0, 0.5) == doctest::Approx(1.0));
  CHECK(node_selection_probability(2, 0.5) == doctest::Approx(0.25));
  CHECK(node_selection_probability(3) == doctest::Approx(0.125));
  CHECK_THROWS_AS(node_selection_probability(-1, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(node_selection_probability(1, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(node_selection_probability(1, 1.5), std::invalid_argument);

  // Monte-Carlo acceptance frequency at depth 2, beta 0.7 -> p = 0.49.
  const double p = node_selection_probability(2, 0.7);
  Rng rng(2024);
  int hits = 0;
  const int draws = 10000;
  for (int t = 0; t < draws; ++t)
    if (rng.uniform() < p) ++hits;
  CHECK(std::abs(static_cast<double>(hits) / draws - p) <= 0.02);
}

TEST_CASE("altmin argument validation") {
  const auto inst = generate_instance(5, 4, 1, 20.0, 0.1, 14, 7);
  CHECK_THROWS_AS(altmin(inst, Matrix::Zero(4, 1)), std::invalid_argument);
  CHECK_THROWS_AS(altmin(inst, Matrix::Zero(5, 2)), std::invalid_argument);
  CHECK_THROWS_AS(altmin(inst, initialize_U(inst), 0), std::invalid_argument);
  CHECK_THROWS_AS(
      altmin_node(inst, NodePolyhedron{}, Matrix::Zero(4, 4)),
      std::invalid_argument);
}

TEST_CASE("root altmin gap versus the plain relaxation stays in regime") {
  // Rank-1, n = 10, |I| = 2 n log10(n) = 20, gamma = 20: the reported mean
  // root gap against the plain relaxation is 1.78e-2.  Instance draws
  // differ, so assert soundness (ub >= lb) and the order of magnitude.
  std::vector<double> gaps;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto inst = generate_instance(10, 10, 1, 20.0, 0.1, 20, 600 + seed);
    const auto inc = root_incumbent(inst);
    REQUIRE(inc.has_value());
    const auto sol = conic::solve(build_mprt(inst));
    REQUIRE((sol.status == conic::SolveStatus::Optimal ||
             sol.status == conic::SolveStatus::NearOptimal));
    const double ub = inc->objective, lb = sol.objective;
    CHECK(ub >= lb - 1e-6 * std::max(1.0, std::abs(lb)));
    gaps.push_back(std::max(ub - lb, 0.0) / std::max(std::abs(ub), 1e-10));
  }
  double log_sum = 0.0;
  for (double g : gaps) log_sum += std::log(std::max(g, 1e-12));
  const double geo = std::exp(log_sum / static_cast<double>(gaps.size()));
  CHECK(geo <= 10.0 * 1.78e-2);
}

TEST_CASE("node restarts can improve on the root incumbent") {
  // Restarting alternating minimization from other subspace regions finds a
  // strictly better solution on at least one of 20 random rank-1 instances.
  int improved = 0;
  for (std::uint64_t t = 0; t < 20; ++t) {
    const auto inst = generate_instance(10, 10, 1, 20.0, 0.1, 20, 500 + t);
    const FactorPair root = altmin(inst, initialize_U(inst));

    std::vector<double> node_values;
    int i0 = 0;
    root.U.col(0).cwiseAbs().maxCoeff(&i0);
    const double anchor = root.U(i0, 0);
    for (const bool flip : {true, false}) {
      UInterval iv;
      iv.x = Vector::Unit(10, i0);
      iv.column = 0;
      const double side = flip ? -1.0 : 1.0;
      iv.lo = side * (anchor > 0 ? -1.0 : 0.05);
      iv.hi = side * (anchor > 0 ? -0.05 : 1.0);
      if (iv.lo > iv.hi) std::swap(iv.lo, iv.hi);
      NodePolyhedron poly;
      poly.intervals.push_back(iv);
      const auto node = altmin_node(inst, poly, root.U * root.U.transpose(),
                                    std::nullopt, 12, 1e-6);
      if (node) node_values.push_back(node->objective);
    }
    Rng rng(900 + t);
    Vector dir(10);
    for (int i = 0; i < 10; ++i) dir[i] = rng.normal();
    dir.normalize();
    const auto shaken = altmin_node(inst, NodePolyhedron{},
                                    dir * dir.transpose(), std::nullopt, 12,
                                    1e-6);
    if (shaken) node_values.push_back(shaken->objective);

    const double margin = 1e-7 * std::max(1.0, std::abs(root.objective));
    for (double v : node_values)
      if (v < root.objective - margin) {
        ++improved;
        break;
      }
  }
  CHECK(improved >= 1);
}
