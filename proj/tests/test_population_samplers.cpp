#include "doctest.h"

#include <cmath>

#include "msb/population_samplers.hpp"

using namespace msb;

namespace {

ActionVector bits(std::vector<unsigned char> b) { return ActionVector::from_bits(b); }

}  // namespace

TEST_CASE("random sample: K = L and marginals") {
  Rng rng = make_rng(1);
  CHECK(random_sample(5, 5, rng) == bits({1, 1, 1, 1, 1}));
  const int n = 100000;
  RealVector freq = RealVector::Zero(10);
  for (int s = 0; s < n; ++s) {
    const auto a = random_sample(10, 3, rng);
    REQUIRE(a.k() == 3);
    freq += a.to_real();
  }
  const double sigma = std::sqrt(0.3 * 0.7 / n);
  for (Index i = 0; i < 10; ++i) CHECK(std::abs(freq[i] / n - 0.3) < 3.0 * sigma);
  CHECK_THROWS_AS(random_sample(3, 4, rng), InvalidInput);
}

TEST_CASE("best in history is monotone") {
  BestInHistory h;
  CHECK(!h.best());
  Rng rng = make_rng(2);
  double prev = -1e300;
  double max_seen = -1e300;
  for (int s = 0; s < 200; ++s) {
    const double score = standard_normal(rng);
    max_seen = std::max(max_seen, score);
    h.insert(random_sample(6, 2, rng), score);
    CHECK(h.score() >= prev);
    CHECK(h.score() == max_seen);
    prev = h.score();
  }
}

TEST_CASE("random sampler resubmits its best and re-scores it") {
  RandomSampler rs;
  SamplerContext ctx;
  ctx.L = 6;
  ctx.K = 2;
  ctx.lambda = 0.0;
  Rng rng = make_rng(3);
  auto first = rs.propose(ctx, 3, rng);
  CHECK(first.size() == 3);
  rs.record(ctx, first[1], 2.0, 0.0);
  rs.record(ctx, first[2], 1.0, 0.0);
  ctx.surrogate = [](const ActionVector&) { return 0.5; };
  auto next = rs.propose(ctx, 3, rng);
  CHECK(next.front() == first[1]);
  CHECK(rs.history().score() == doctest::Approx(0.5));
  for (const auto& a : next) CHECK(a.k() == 2);
}

TEST_CASE("teacher step examples") {
  const auto A = bits({1, 1, 0, 0});
  const auto T = bits({0, 1, 1, 0});
  CHECK(tlbo_teacher_step(A, T, 0.0) == A);
  CHECK(tlbo_teacher_step(A, T, 1.0) == T);
  // [0.5, 1, 0.5, 0]; the tie at 0.5 goes to the lower index
  CHECK(tlbo_teacher_step(A, T, 0.5) == bits({1, 1, 0, 0}));
}

TEST_CASE("student step examples") {
  const auto A = bits({1, 1, 0, 0});
  const auto B = bits({0, 1, 1, 0});
  Rng rng = make_rng(4);
  for (int s = 0; s < 20; ++s) CHECK(tlbo_student_step(A, A, 0.0, 1.0, rng) == A);
  CHECK(tlbo_student_step(A, B, 0.0, 1.0, 1.0) == B);
  // 2A - B = [2, 1, -1, 0]: arm 0 (in A only) leads, arm 1 next
  CHECK(tlbo_student_step(A, B, 1.0, 0.0, 1.0) == bits({1, 1, 0, 0}));
  // L = 4, K = 2, A = {0, 3}, B = {1, 3}: 2A - B = [2, -1, 0, 1] -> {0, 3}
  CHECK(tlbo_student_step(bits({1, 0, 0, 1}), bits({0, 1, 0, 1}), 1.0, 0.0, 1.0) == bits({1, 0, 0, 1}));
}

TEST_CASE("tlbo sampler uses the pool and splits teacher and student steps") {
  TlboSampler tl;
  SamplerContext ctx;
  ctx.L = 6;
  ctx.K = 2;
  Rng rng = make_rng(5);
  CHECK(tl.propose(ctx, 4, rng).empty());
  std::vector<EliteSample> pool;
  for (int i = 0; i < 5; ++i)
    pool.push_back({random_sample(6, 2, rng), SamplerId::cem, static_cast<double>(i), 0.0});
  ctx.pool = pool;
  const auto out = tl.propose(ctx, 5, rng);
  CHECK(out.size() == 5);
  for (const auto& a : out) CHECK(a.k() == 2);
  // a one-element pool: every step returns that element
  std::vector<EliteSample> single{{bits({0, 0, 1, 1, 0, 0}), SamplerId::solver, 1.0, 0.0}};
  ctx.pool = single;
  for (const auto& a : tl.propose(ctx, 4, rng)) CHECK(a == single[0].action);
}
