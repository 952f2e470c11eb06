#include <algorithm>
#include <cmath>
#include <memory>
#include <set>
#include <sstream>
#include <tuple>
#include <vector>

#include "doctest.h"
#include "lrbb/conic.hpp"
#include "lrbb/disjunctions.hpp"
#include "lrbb/instance.hpp"
#include "lrbb/relaxations.hpp"

using namespace lrbb;

namespace {

bool solved(const conic::ConicSolution& s) {
  return s.status == conic::SolveStatus::Optimal ||
         s.status == conic::SolveStatus::NearOptimal;
}

conic::ConicSolution solve_ok(const conic::ConicProgram& p) {
  conic::SolveTolerances tol;
  auto res = conic::solve(p, tol);
  REQUIRE(solved(res));
  return res;
}

// Relative agreement on objective scale: |a-b| <= tol * max(1, |a|, |b|).
bool close_vals(double a, double b, double tol = 1e-6) {
  return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

// a >= b up to solver noise.
bool at_least(double a, double b, double tol = 1e-5) {
  return a >= b - tol * std::max({1.0, std::abs(a), std::abs(b)});
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

// The 2x2 rank-one pattern [[4,2],[2,1]]; with the corner missing the Shor
// minor forces X_00 = 2*2/1 = 4 and the objective 4^2+2^2+2^2+1 = 25.
CompletionInstance two_by_two(bool missing_corner) {
  auto inst = manual_instance(2, 2, 1, 1.0, InstanceMode::BasisPursuit);
  inst.set_entry(0, 1, 2.0);
  inst.set_entry(1, 0, 2.0);
  inst.set_entry(1, 1, 1.0);
  if (!missing_corner) inst.set_entry(0, 0, 4.0);
  return inst;
}

std::set<std::tuple<int, int, int, int>> as_keys(const std::vector<Minor>& v) {
  std::set<std::tuple<int, int, int, int>> out;
  for (const Minor& mn : v) out.insert({mn.i1, mn.i2, mn.j1, mn.j2});
  return out;
}

}  // namespace

TEST_CASE("minor classification on a full 3x3 mask") {
  auto inst = manual_instance(3, 3, 1, 1.0, InstanceMode::BasisPursuit);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) inst.set_entry(i, j, 1.0 + i + j);
  const MinorSet ms = enumerate_minors(inst);
  CHECK(ms.m4.size() == 9);  // C(3,2)^2
  CHECK(ms.m3.empty());
  CHECK(ms.m2.empty());
  CHECK(ms.m1.empty());
  for (const Minor& mn : ms.m4) {
    CHECK(mn.tag == 4);
    CHECK(mn.i1 < mn.i2);
    CHECK(mn.j1 < mn.j2);
  }
}

TEST_CASE("minor classification with one missing entry") {
  const auto inst = two_by_two(true);
  const MinorSet ms = enumerate_minors(inst);
  CHECK(ms.m4.empty());
  REQUIRE(ms.m3.size() == 1);
  CHECK(ms.m3[0] == Minor{0, 1, 0, 1, 3});
  CHECK(ms.m2.empty());
  CHECK(ms.m1.empty());
}

TEST_CASE("minor enumeration matches brute force on a patterned 8x8 mask") {
  auto inst = manual_instance(8, 8, 1, 1.0, InstanceMode::BasisPursuit);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j)
      if ((5 * i + 3 * j) % 7 < 3) inst.set_entry(i, j, 1.0);

  std::set<std::tuple<int, int, int, int>> brute[5];
  for (int i1 = 0; i1 < 8; ++i1)
    for (int i2 = i1 + 1; i2 < 8; ++i2)
      for (int j1 = 0; j1 < 8; ++j1)
        for (int j2 = j1 + 1; j2 < 8; ++j2) {
          const int obs = inst.is_observed(i1, j1) + inst.is_observed(i1, j2) +
                          inst.is_observed(i2, j1) + inst.is_observed(i2, j2);
          if (obs > 0) brute[obs].insert({i1, i2, j1, j2});
        }

  const MinorSet ms = enumerate_minors(inst);
  CHECK(as_keys(ms.m4) == brute[4]);
  CHECK(as_keys(ms.m3) == brute[3]);
  CHECK(as_keys(ms.m2) == brute[2]);
  CHECK(as_keys(ms.m1) == brute[1]);
  for (const Minor& mn : ms.m3) CHECK(mn.tag == 3);
  for (const Minor& mn : ms.m2) CHECK(mn.tag == 2);
  for (const Minor& mn : ms.m1) CHECK(mn.tag == 1);
}

TEST_CASE("select_minors policies: sizes, subset property, determinism") {
  const auto inst = generate_instance(8, 8, 1, 20.0, 0.0, 30, 7);
  const MinorSet ms = enumerate_minors(inst);
  REQUIRE(ms.m3.size() >= 2);

  CHECK(select_minors(inst, ShorPolicy::None, 5).empty());
  CHECK(select_minors(inst, ShorPolicy::M4, 5).size() == ms.m4.size());
  CHECK(select_minors(inst, ShorPolicy::M4PlusM3, 5).size() ==
        ms.m4.size() + ms.m3.size());

  const auto half_a = select_minors(inst, ShorPolicy::M4PlusHalfM3, 5);
  const auto half_b = select_minors(inst, ShorPolicy::M4PlusHalfM3, 5);
  CHECK(half_a.size() == ms.m4.size() + ms.m3.size() / 2);
  CHECK(as_keys(half_a) == as_keys(half_b));  // same seed, same sample

  auto universe = as_keys(ms.m4);
  for (const auto& key : as_keys(ms.m3)) universe.insert(key);
  const auto picked = as_keys(half_a);
  CHECK(picked.size() == half_a.size());  // no duplicates
  for (const auto& key : picked) CHECK(universe.count(key) == 1);
}

TEST_CASE("shor policy names round-trip") {
  for (ShorPolicy p : {ShorPolicy::None, ShorPolicy::M4,
                       ShorPolicy::M4PlusHalfM3, ShorPolicy::M4PlusM3})
    CHECK(shor_policy_from_string(to_string(p)) == p);
  CHECK_THROWS(shor_policy_from_string("m5"));
}

TEST_CASE("mprt closed forms on rank-one data") {
  // Scalar noisy case: min x^2/(2 gamma) + (x-3)^2/2 = 9/(2(1+gamma)).
  {
    auto inst = manual_instance(1, 1, 1, 4.0, InstanceMode::Noisy);
    inst.set_entry(0, 0, 3.0);
    const auto res = solve_ok(build_mprt(inst));
    CHECK(close_vals(res.objective, 9.0 / (2.0 * 5.0)));
  }
  // Fully observed rank-one A, noisy: relaxation is tight and the optimum is
  // sigma_1^2 / (2 (1 + gamma)).
  {
    auto inst = manual_instance(3, 2, 1, 20.0, InstanceMode::Noisy);
    const double a[3] = {1.0, 2.0, 3.0}, b[2] = {2.0, 1.0};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 2; ++j) inst.set_entry(i, j, a[i] * b[j]);
    const double sigma_sq = (1 + 4 + 9) * (4 + 1);
    const auto res = solve_ok(build_mprt(inst));
    CHECK(close_vals(res.objective, sigma_sq / (2.0 * 21.0)));
  }
  // Fully observed rank-one A, basis pursuit: value is |A|_F^2.
  {
    auto inst = manual_instance(3, 2, 1, 1.0, InstanceMode::BasisPursuit);
    const double a[3] = {1.0, 2.0, 3.0}, b[2] = {2.0, 1.0};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 2; ++j) inst.set_entry(i, j, a[i] * b[j]);
    const auto res = solve_ok(build_mprt(inst));
    CHECK(close_vals(res.objective, 70.0));
  }
}

TEST_CASE("lifted reformulation matches mprt without cuts") {
  for (std::uint64_t seed : {99ULL, 321ULL}) {
    const auto inst = generate_instance(5, 4, 1, 20.0, 0.1, 13, seed);
    const auto vm = solve_ok(build_mprt(inst)).objective;
    const auto vl = solve_ok(build_lifted(inst)).objective;
    CHECK(close_vals(vm, vl));
  }
}

TEST_CASE("one eigenvector disjunction: children bound parent, witness cut off") {
  const auto inst = generate_instance(5, 4, 1, 20.0, 0.1, 13, 99);
  const auto root_prog = build_lifted(inst);
  const auto root = solve_ok(root_prog);
  const Matrix U = conic::extract(root, root_prog, "U");
  const Matrix Y = conic::extract(root, root_prog, "Y");

  const auto viol = find_violating_eigenvector(Y, U, 1e-6);
  REQUIRE(viol.has_value());
  CHECK(viol->second < -1e-4);  // genuine violation at the root

  auto cut = std::make_shared<DisjunctionCut>(
      make_cut(U, Y, viol->first, /*q=*/2));
  double min_child = 0.0;
  for (int b = 0; b < cut->num_branches(); ++b) {
    const DisjunctionBranch branch{cut, cut->branch_pieces(b)};
    // The separated point violates every branch of its own disjunction.
    CHECK_FALSE(branch_satisfied(*cut, branch.z, U, Y));
    const auto child = solve_ok(build_lifted(inst, {branch}));
    CHECK(at_least(child.objective, root.objective));
    min_child = b == 0 ? child.objective
                       : std::min(min_child, child.objective);
  }
  CHECK(at_least(min_child, root.objective));
}

TEST_CASE("shor rank-1 tightness on the 2x2 rank-one pattern") {
  // Fully observed: the minor block pins every moment, value is |A|_F^2.
  {
    const auto inst = two_by_two(false);
    const auto minors = select_minors(inst, ShorPolicy::M4PlusM3, 7);
    REQUIRE(minors.size() == 1);
    const auto res = solve_ok(build_shor_rank1(inst, minors));
    CHECK(close_vals(res.objective, 25.0));
  }
  // Missing corner: the cross moment ties A_01 A_10 = A_11 X_00, forcing the
  // unique rank-one completion X_00 = 4 and the same objective 25.
  {
    const auto inst = two_by_two(true);
    const auto minors = select_minors(inst, ShorPolicy::M4PlusM3, 7);
    const auto prog = build_shor_rank1(inst, minors);
    const auto res = solve_ok(prog);
    CHECK(close_vals(res.objective, 25.0));
    const Matrix X = conic::extract(res, prog, "X");
    CHECK(std::abs(X(0, 0) - 4.0) < 1e-5);
    // The perspective relaxation alone misses the completion: it spends
    // nothing on the free entry and returns only |A_observed|_F^2 + 7.
    const auto weak = solve_ok(build_mprt(inst));
    CHECK(close_vals(weak.objective, 16.0));
  }
}

TEST_CASE("shor rank-1 dominates mprt") {
  // Basis pursuit, strict improvement.
  {
    const auto inst = generate_instance(4, 4, 1, 20.0, 0.0, 14, 104);
    const double vm = solve_ok(build_mprt(inst)).objective;
    const double v0 = solve_ok(build_shor_rank1(inst, {})).objective;
    const auto minors = select_minors(inst, ShorPolicy::M4PlusM3, 3);
    const double v1 = solve_ok(build_shor_rank1(inst, minors)).objective;
    CHECK(at_least(v0, vm));
    CHECK(v1 > vm + 0.5);  // frozen margin: 28.766 vs 27.973
  }
  // Noisy mode.
  {
    const auto inst = generate_instance(5, 4, 1, 20.0, 0.1, 13, 99);
    const double vm = solve_ok(build_mprt(inst)).objective;
    const auto minors = select_minors(inst, ShorPolicy::M4PlusM3, 3);
    const double v1 = solve_ok(build_shor_rank1(inst, minors)).objective;
    CHECK(at_least(v1, vm));
    CHECK(v1 > vm + 1e-3);  // frozen margin: 1.5717 vs 1.5689
  }
}

TEST_CASE("shor rank-1 rejects k > 1") {
  const auto inst = generate_instance(5, 5, 2, 20.0, 0.1, 22, 44);
  CHECK_THROWS(build_shor_rank1(inst, {}));
}

TEST_CASE("shor rank-k delegates to rank-1 when k = 1") {
  const auto inst = generate_instance(5, 4, 1, 20.0, 0.1, 13, 99);
  const auto minors = select_minors(inst, ShorPolicy::M4PlusM3, 3);
  std::ostringstream a, b;
  build_shor_rank1(inst, minors).dump(a);
  build_shor_rankk(inst, minors).dump(b);
  CHECK(a.str() == b.str());
}

TEST_CASE("shor rank-k dominates mprt at k = 2") {
  const auto inst = generate_instance(5, 5, 2, 20.0, 0.1, 22, 44);
  const double vm = solve_ok(build_mprt(inst)).objective;
  const auto minors = select_minors(inst, ShorPolicy::M4, 3);
  const double vk = solve_ok(build_shor_rankk(inst, minors)).objective;
  CHECK(at_least(vk, vm));
  CHECK(vk > vm + 0.01);  // frozen margin: 0.2327 vs 0.2108
}

TEST_CASE("partial shor: empty minors equal the with-W base program") {
  const auto inst = generate_instance(5, 4, 1, 20.0, 0.0, 13, 99);
  const double va = solve_ok(build_shor_rank1(inst, {})).objective;
  const double vb = solve_ok(build_partial_shor(inst, {})).objective;
  CHECK(close_vals(va, vb, 1e-5));
}

TEST_CASE("partial shor with every minor matches the full build") {
  const auto inst = generate_instance(5, 4, 1, 20.0, 0.1, 13, 99);
  const auto minors = select_minors(inst, ShorPolicy::M4PlusM3, 3);
  const double va = solve_ok(build_shor_rank1(inst, minors)).objective;
  const double vb = solve_ok(build_partial_shor(inst, minors)).objective;
  CHECK(close_vals(va, vb, 1e-5));
}

TEST_CASE("partial shor value grows with the minor set") {
  const auto inst = generate_instance(5, 4, 1, 20.0, 0.1, 13, 321);
  const double v_none =
      solve_ok(build_partial_shor(inst, {})).objective;
  const double v_half =
      solve_ok(build_partial_shor(
                   inst, select_minors(inst, ShorPolicy::M4PlusHalfM3, 5)))
          .objective;
  const double v_full =
      solve_ok(build_partial_shor(
                   inst, select_minors(inst, ShorPolicy::M4PlusM3, 5)))
          .objective;
  CHECK(at_least(v_half, v_none));
  CHECK(at_least(v_full, v_half));
}

TEST_CASE("slice relaxation coincides with the lifted program at k = 1") {
  const auto inst = generate_instance(5, 4, 1, 20.0, 0.1, 13, 99);
  const double vl = solve_ok(build_lifted(inst)).objective;
  const double vs =
      solve_ok(build_slice_relaxation(inst, SliceVariant::Plain)).objective;
  CHECK(close_vals(vl, vs));
}

TEST_CASE("slice relaxation at k = 2: bounds and trace budget") {
  for (std::uint64_t seed : {11ULL, 12ULL, 13ULL}) {
    const auto inst = generate_instance(4, 4, 2, 20.0, 0.1, 16, seed);
    const double vm = solve_ok(build_mprt(inst)).objective;
    const auto prog = build_slice_relaxation(inst, SliceVariant::Plain);
    const auto res = solve_ok(prog);
    CHECK(at_least(res.objective, vm));
    const Matrix y1 = conic::extract(res, prog, "Y1");
    const Matrix y2 = conic::extract(res, prog, "Y2");
    CHECK(y1.trace() + y2.trace() <= inst.k + 1e-6);
  }
}

TEST_CASE("slice shor variant dominates the plain slice bound") {
  const auto inst = generate_instance(4, 4, 2, 20.0, 0.1, 16, 11);
  const auto minors = select_minors(inst, ShorPolicy::M4, 3);
  const double vp =
      solve_ok(build_slice_relaxation(inst, SliceVariant::Plain, minors))
          .objective;
  const double vs =
      solve_ok(build_slice_relaxation(inst, SliceVariant::Shor, minors))
          .objective;
  CHECK(at_least(vs, vp));
}

TEST_CASE("mccormick split is lossless at the root") {
  const auto inst = generate_instance(5, 4, 1, 20.0, 0.0, 13, 99);
  const BoxState box = full_box(inst.n, inst.k);
  const double root = solve_ok(build_mccormick(inst, box)).objective;
  const auto [left, right] = make_mccormick_children(box, 0, 0, 0.0);
  const double vl = solve_ok(build_mccormick(inst, left)).objective;
  const double vr = solve_ok(build_mccormick(inst, right)).objective;
  CHECK(at_least(vl, root));
  CHECK(at_least(vr, root));
  CHECK(close_vals(std::min(vl, vr), root));
}

TEST_CASE("relaxation chain is sandwiched by a feasible completion") {
  const auto inst = generate_instance(5, 4, 1, 20.0, 0.1, 13, 99);
  const double vm = solve_ok(build_mprt(inst)).objective;
  const auto minors = select_minors(inst, ShorPolicy::M4PlusM3, 3);
  const double vp = solve_ok(build_partial_shor(inst, minors)).objective;
  const double vf = solve_ok(build_shor_rank1(inst, minors)).objective;
  CHECK(at_least(vp, vm));
  CHECK(close_vals(vp, vf, 1e-5));

  // Any rank-k point is primal feasible, so its objective caps every bound.
  Matrix zero_fill = Matrix::Zero(inst.n, inst.m);
  for (int i = 0; i < inst.n; ++i)
    for (int j = 0; j < inst.m; ++j)
      if (inst.is_observed(i, j)) zero_fill(i, j) = inst.observed(i, j);
  const Matrix incumbent =
      (inst.gamma / (1.0 + inst.gamma)) * truncate_rank(zero_fill, inst.k);
  const double upper = objective_value(inst, incumbent);
  CHECK(at_least(upper, vf));
}
