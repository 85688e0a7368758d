#include "doctest.h"

#include <set>

#include "msb/wolpertinger_sampler.hpp"

using namespace msb;

namespace {

std::deque<ReplayEntry> make_replay(std::size_t n, Index L, Rng& rng, bool constant_reward) {
  std::deque<ReplayEntry> out;
  for (std::size_t i = 0; i < n; ++i) {
    ReplayEntry e;
    e.state = RealVector::Constant(L, 1.0 / L);
    e.action = ActionVector::from_indices(L, {static_cast<Index>(i % static_cast<std::size_t>(L))});
    e.composite = constant_reward ? 0.5 : standard_normal(rng);
    e.violation = 0.0;
    e.next_state = e.state;
    out.push_back(e);
  }
  return out;
}

}  // namespace

TEST_CASE("dual step arithmetic and projection") {
  CHECK(rcpo_dual_step(0.1, 0.52, 0.02, 0.01) == doctest::Approx(0.105));
  double l2 = 0.3;
  for (int i = 0; i < 2000; ++i) {
    l2 = rcpo_dual_step(l2, 0.0, 0.02, 0.01);
    CHECK(l2 >= 0.0);
  }
  CHECK(l2 == 0.0);
}

TEST_CASE("base candidate is the binarized proto-action") {
  WolpertingerConfig cfg;
  cfg.kappa = 0.0;
  cfg.n_swaps = 0;
  WolpertingerSampler w(3, cfg);
  Rng rng = make_rng(1);
  const auto cand = w.candidates(5, 1, rng);
  REQUIRE(cand.size() == 1);
  CHECK(cand[0] == binarize_top_k(w.proto_action(), 1));
}

TEST_CASE("candidates are valid and distinct") {
  WolpertingerSampler w(12);
  Rng rng = make_rng(2);
  for (std::size_t t = 1; t < 30; ++t) {
    const auto cand = w.candidates(t, 4, rng);
    CHECK(cand.size() <= 11);
    std::set<std::string> seen;
    for (const auto& a : cand) {
      CHECK(a.k() == 4);
      CHECK(seen.insert(a.to_string()).second);
    }
  }
}

TEST_CASE("propose is deterministic given the stream") {
  WolpertingerSampler a(10), b(10);
  SamplerContext ctx;
  ctx.L = 10;
  ctx.K = 3;
  ctx.round = 7;
  Rng r1 = make_rng(5), r2 = make_rng(5);
  CHECK(a.propose(ctx, 4, r1) == b.propose(ctx, 4, r2));
}

TEST_CASE("batch tiers follow the 1/3, 1/6, remainder split") {
  Rng rng = make_rng(8);
  auto replay = make_replay(300, 10, rng, false);
  // Plant outliers in both feedback and violation.
  for (std::size_t i = 0; i < 10; ++i) {
    replay[i].composite = 50.0;
    replay[i + 10].violation = 1.0;
  }
  std::vector<RealVector> pts;
  for (const auto& e : replay) pts.push_back(e.action.to_real());
  const auto labels = kmeans_labels(pts, 20, 10, rng);
  const auto draw = sample_batch(replay, labels, 30, rng);
  CHECK(draw.indices.size() == 30);
  CHECK(draw.clustered == 10);
  CHECK(draw.extreme == 5);
  CHECK(draw.uniform == 15);
  // The extreme draws come from the planted outliers.
  for (std::size_t s = draw.clustered; s < draw.clustered + draw.extreme; ++s) CHECK(draw.indices[s] < 20);
}

TEST_CASE("constant feedback empties the extreme tier") {
  Rng rng = make_rng(9);
  const auto replay = make_replay(50, 5, rng, true);
  std::vector<int> labels(50, 0);
  const auto draw = sample_batch(replay, labels, 30, rng);
  CHECK(draw.extreme == 0);
  CHECK(draw.uniform == 20);
  CHECK(draw.indices.size() == 30);
}

TEST_CASE("single-entry buffer is sampled with replacement") {
  Rng rng = make_rng(10);
  const auto replay = make_replay(1, 5, rng, false);
  const auto draw = sample_batch(replay, {0}, 12, rng);
  CHECK(draw.indices.size() == 12);
  for (auto i : draw.indices) CHECK(i == 0);
  CHECK(sample_batch({}, {}, 12, rng).indices.empty());
}

TEST_CASE("kmeans separates two obvious groups") {
  Rng rng = make_rng(11);
  std::vector<RealVector> pts;
  for (int i = 0; i < 20; ++i) pts.push_back(ActionVector::from_indices(8, {0, 1, 2}).to_real());
  for (int i = 0; i < 20; ++i) pts.push_back(ActionVector::from_indices(8, {5, 6, 7}).to_real());
  const auto labels = kmeans_labels(pts, 2, 10, rng);
  for (int i = 1; i < 20; ++i) CHECK(labels[static_cast<std::size_t>(i)] == labels[0]);
  for (int i = 21; i < 40; ++i) CHECK(labels[static_cast<std::size_t>(i)] == labels[20]);
  CHECK(labels[0] != labels[20]);
}

TEST_CASE("critic loss decreases on a repeated triple") {
  WolpertingerSampler w(6);
  const std::vector<RealVector> s(8, RealVector::Constant(6, 1.0 / 6));
  const std::vector<ActionVector> a(8, ActionVector::from_indices(6, {0, 2}));
  const std::vector<double> f(8, 2.0);
  double prev = w.train_step(s, a, f);
  for (int i = 0; i < 50; ++i) {
    const double cur = w.train_step(s, a, f);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("targets track the online networks by soft updates") {
  WolpertingerSampler w(5);
  auto before = w.target_critic();
  w.train_step({RealVector::Constant(5, 0.2)}, {ActionVector::from_indices(5, {1})}, {1.0});
  const auto& online = w.critic();
  const auto& target = w.target_critic();
  for (std::size_t l = 0; l < online.layers.size(); ++l)
    CHECK((target.layers[l].W - (0.99 * before.layers[l].W + 0.01 * online.layers[l].W)).cwiseAbs().maxCoeff() <
          1e-14);
}

TEST_CASE("zero actor learning rate leaves the actor unchanged") {
  WolpertingerConfig cfg;
  cfg.actor_lr = 0.0;
  WolpertingerSampler w(5, cfg);
  const auto before = w.actor();
  w.train_step({RealVector::Constant(5, 0.2)}, {ActionVector::from_indices(5, {1})}, {1.0});
  for (std::size_t l = 0; l < before.layers.size(); ++l) CHECK(w.actor().layers[l].W == before.layers[l].W);
}

TEST_CASE("state moves only at epoch boundaries and sums to one") {
  WolpertingerConfig cfg;
  cfg.length_epoch = 5;
  WolpertingerSampler w(6, cfg);
  SamplerContext ctx;
  ctx.L = 6;
  ctx.K = 2;
  Rng rng = make_rng(4);
  CHECK(w.state().sum() == doctest::Approx(1.0));
  for (std::size_t t = 1; t <= 12; ++t) {
    ctx.round = t;
    const RealVector before = w.state();
    const auto out = w.propose(ctx, 2, rng);
    if (t % 5 != 0) CHECK(w.state() == before);
    for (const auto& a : out) w.record(ctx, a, 0.5, 0.1);
    CHECK(w.state().sum() == doctest::Approx(1.0));
  }
  // Composite feedback at insertion uses the multiplier of that moment (zero so far).
  CHECK(w.replay().front().composite == doctest::Approx(0.5));
  w.train(ctx, rng);
  CHECK(w.lambda2() == doctest::Approx(0.01 * (0.1 - 0.02)));
}

TEST_CASE("demonstration steps pull the actor towards A*") {
  WolpertingerSampler w(10);
  SamplerContext ctx;
  const auto a_star = ActionVector::from_indices(10, {0, 5, 9});
  const double before = binary_cross_entropy(w.real_output(ctx), a_star.to_real());
  w.demonstrate(ctx, a_star, 20);
  const double after = binary_cross_entropy(w.real_output(ctx), a_star.to_real());
  CHECK(after < before);
  w.demonstrate(ctx, a_star, 200);
  CHECK(binarize_top_k(w.real_output(ctx), 3) == a_star);
}
