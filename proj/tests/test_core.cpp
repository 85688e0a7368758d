#include "doctest.h"

#include <algorithm>
#include <numeric>

#include "msb/core.hpp"
#include "msb/random.hpp"

using namespace msb;

namespace {

FeatureMatrix random_features(Index L, Index d, Rng& rng) {
  FeatureMatrix f(L, d);
  for (Index i = 0; i < L; ++i)
    for (Index j = 0; j < d; ++j) f(i, j) = uniform01(rng);
  return f;
}

ActionVector action(std::initializer_list<int> bits) {
  std::vector<std::uint8_t> b(bits.begin(), bits.end());
  return ActionVector::from_bits(b);
}

}  // namespace

TEST_CASE("ned examples") {
  RealVector u(2), v(2);
  u << 1, 0;
  v << 0, 1;
  CHECK(ned(u, v) == doctest::Approx(1.0));
  CHECK(ned(u, u) == 0.0);
  u << 0.5, 0.5;
  v << 0.1, 0.9;
  CHECK(ned(u, v) == doctest::Approx(0.4));
}

TEST_CASE("ned errors") {
  RealVector u = RealVector::Zero(2), v = RealVector::Zero(3);
  CHECK_THROWS_AS(ned(u, v), InvalidInput);
  RealVector z = RealVector::Zero(2);
  CHECK_THROWS_AS(ned(u, z), DegenerateInput);
}

TEST_CASE("ned is symmetric and bounded for nonnegative inputs") {
  Rng rng = make_rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    RealVector u(5), v(5);
    for (int i = 0; i < 5; ++i) {
      u[i] = uniform01(rng);
      v[i] = uniform01(rng);
    }
    const double a = ned(u, v);
    CHECK(a == ned(v, u));
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
    CHECK(a > 0.0);
  }
}

TEST_CASE("build_constraints edge cases") {
  Rng rng = make_rng(5);
  const FeatureMatrix f = random_features(12, 3, rng);
  CHECK(build_constraints(f, 0.0).size() == 0);

  FeatureMatrix twins(3, 2);
  twins << 0.3, 0.4, 0.3, 0.4, 0.9, 0.0;
  const auto c = build_constraints(twins, 0.1);
  CHECK(c.contains(0, 1));
  CHECK(c.size() == 1);
}

TEST_CASE("build_constraints matches the pairwise definition and is monotone in tau") {
  Rng rng = make_rng(11);
  const FeatureMatrix f = random_features(25, 4, rng);
  const double taus[] = {0.1, 0.2, 0.25, 0.3, 0.5};
  ConstraintSet prev(25);
  for (double tau : taus) {
    const auto c = build_constraints(f, tau);
    std::size_t expected = 0;
    for (Index i = 0; i < 25; ++i)
      for (Index j = i + 1; j < 25; ++j) {
        const bool in = ned<double>(f.row(i).transpose(), f.row(j).transpose()) < tau;
        expected += in;
        CHECK(c.contains(i, j) == in);
      }
    CHECK(c.size() == expected);
    for (auto [i, j] : prev.pairs()) CHECK(c.contains(i, j));
    prev = c;
  }
}

TEST_CASE("constraint set rejects malformed pairs") {
  ConstraintSet c(4);
  CHECK(c.add(2, 1));
  CHECK_FALSE(c.add(1, 2));
  CHECK(c.size() == 1);
  CHECK(c.pairs().front() == std::pair<Index, Index>{1, 2});
  CHECK_THROWS_AS(c.add(3, 3), InvalidInput);
  CHECK_THROWS_AS(c.add(0, 4), InvalidInput);
}

TEST_CASE("violation_rate examples") {
  ConstraintSet c(6);
  c.add(0, 1);
  c.add(2, 3);
  c.add(4, 5);
  c.add(1, 5);
  CHECK(violation_rate(action({1, 1, 0, 0, 0, 0}), c) == doctest::Approx(0.25));
  CHECK(violation_rate(action({1, 0, 1, 0, 1, 0}), c) == 0.0);
  CHECK(violation_rate(action({1, 0, 1, 0, 1, 0}), ConstraintSet(6)) == 0.0);

  ConstraintSet all(4);
  for (Index i = 0; i < 4; ++i)
    for (Index j = i + 1; j < 4; ++j) all.add(i, j);
  CHECK(violation_rate(action({1, 1, 1, 1}), all) == doctest::Approx(1.0));
}

TEST_CASE("violation_rate is invariant under constraint reordering and joint relabeling") {
  Rng rng = make_rng(21);
  const Index L = 15;
  for (int trial = 0; trial < 50; ++trial) {
    const FeatureMatrix f = random_features(L, 3, rng);
    const auto c = build_constraints(f, 0.3);
    std::vector<Index> perm(L);
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);

    auto pairs = c.pairs();
    std::shuffle(pairs.begin(), pairs.end(), rng);
    ConstraintSet reordered(L), relabeled(L);
    for (auto [i, j] : pairs) {
      reordered.add(i, j);
      relabeled.add(perm[i], perm[j]);
    }
    std::vector<Index> sel(L);
    std::iota(sel.begin(), sel.end(), Index{0});
    std::shuffle(sel.begin(), sel.end(), rng);
    sel.resize(5);
    std::vector<Index> sel_perm;
    for (Index i : sel) sel_perm.push_back(perm[i]);

    const auto a = ActionVector::from_indices(L, sel);
    const auto b = ActionVector::from_indices(L, sel_perm);
    CHECK(violation_rate(a, c) == violation_rate(a, reordered));
    CHECK(violation_rate(a, c) == violation_rate(b, relabeled));
  }
}

TEST_CASE("binarize_top_k examples") {
  RealVector v(4);
  v << 0.9, 0.1, 0.5, 0.7;
  CHECK(binarize_top_k(v, 2) == action({1, 0, 0, 1}));
  RealVector ties = RealVector::Constant(3, 0.5);
  CHECK(binarize_top_k(ties, 2) == action({1, 1, 0}));
  const auto a = action({0, 1, 1, 0, 1});
  CHECK(binarize_top_k(a.to_real(), 3) == a);
  CHECK_THROWS_AS(binarize_top_k(v, 5), InvalidInput);
}

TEST_CASE("binarize_top_k always yields K ones and is idempotent") {
  Rng rng = make_rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const Index L = 1 + static_cast<Index>(uniform_index(rng, 20));
    const Index K = 1 + static_cast<Index>(uniform_index(rng, static_cast<std::size_t>(L)));
    RealVector v(L);
    // coarse values so ties are common
    for (Index i = 0; i < L; ++i) v[i] = std::floor(uniform01(rng) * 4.0) / 4.0;
    const auto a = binarize_top_k(v, K);
    CHECK(a.k() == K);
    CHECK(binarize_top_k(a.to_real(), K) == a);
    // every selected component dominates every unselected one
    double min_sel = 2.0, max_unsel = -1.0;
    for (Index i = 0; i < L; ++i) {
      if (a[i]) min_sel = std::min(min_sel, v[i]);
      else max_unsel = std::max(max_unsel, v[i]);
    }
    CHECK(min_sel >= max_unsel);
  }
}

TEST_CASE("composite_score examples and argmax shift invariance") {
  CHECK(composite_score(0.5, 0.02, 5.0) == doctest::Approx(0.4));
  CHECK(composite_score(0.7, 0.0, 5.0) == 0.7);
  CHECK(composite_score(0.7, 0.9, 0.0) == 0.7);

  Rng rng = make_rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> u(8), c(8);
    for (int i = 0; i < 8; ++i) {
      u[i] = uniform01(rng);
      c[i] = uniform01(rng) * 0.2;
    }
    auto best = [&](double shift) {
      int arg = 0;
      for (int i = 1; i < 8; ++i)
        if (composite_score(u[i] + shift, c[i], 5.0) > composite_score(u[arg] + shift, c[arg], 5.0)) arg = i;
      return arg;
    };
    CHECK(best(0.0) == best(0.125));
  }
}

TEST_CASE("action vector construction") {
  CHECK_THROWS_AS(ActionVector::from_bits({0, 0, 0}), InvalidInput);
  CHECK_THROWS_AS(ActionVector::from_bits({0, 2, 1}), InvalidInput);
  CHECK_THROWS_AS(ActionVector::from_indices(3, {0, 0}), InvalidInput);
  const auto a = ActionVector::from_indices(5, {3, 1});
  CHECK(a.selected() == std::vector<Index>{1, 3});
  CHECK(a.to_string() == "01010");
  CHECK(a.normalized().norm() == doctest::Approx(1.0));
}

TEST_CASE("hyperparameter validation names the field") {
  Hyperparameters h;
  h.validate();
  h.lambda = -1.0;
  CHECK_THROWS_WITH_AS(h.validate(), doctest::Contains("lambda"), InvalidInput);
  h = Hyperparameters{};
  h.eps0 = 0.5;
  CHECK_THROWS_WITH_AS(h.validate(), doctest::Contains("eps0"), InvalidInput);
  h = Hyperparameters{};
  h.f_in = 0;
  CHECK_THROWS_AS(h.validate(), InvalidInput);
}
