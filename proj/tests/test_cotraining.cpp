#include "doctest.h"

#include "msb/cotraining.hpp"
#include "msb/nn.hpp"

using namespace msb;

namespace {

EliteSample elite(Index L, std::vector<Index> sel, double u) {
  return EliteSample{ActionVector::from_indices(L, sel), SamplerId::random, u, 0.0};
}

// Two-layer sigmoid network over a constant input, for demonstration runs.
class StubSampler final : public Sampler {
 public:
  explicit StubSampler(Index L) : L_(L) {
    Rng rng = make_rng(2);
    net_ = Mlp<double>({L, 16, L}, Activation::tanh, Activation::sigmoid, rng);
    opt_ = Adam<double>(net_, 1e-2);
  }
  SamplerId id() const override { return SamplerId::cem; }
  std::vector<ActionVector> propose(const SamplerContext&, std::size_t, Rng&) override { return {}; }
  bool demonstrable() const override { return true; }
  RealVector real_output(const SamplerContext&) const override { return net_.forward(input()); }
  void demonstrate(const SamplerContext&, const ActionVector& a, int steps) override {
    for (int s = 0; s < steps; ++s) {
      Mlp<double>::Tape tape;
      const Eigen::MatrixXd p = net_.forward(input(), tape);
      // BCE through a sigmoid head, pre-divided by the head derivative.
      const Eigen::MatrixXd dp = ((p.array() - a.to_real().array()) / (p.array() * (1 - p.array()))).matrix() / L_;
      opt_.step(net_, net_.backward(tape, dp));
    }
    ++applied;
  }
  int applied = 0;

 private:
  RealVector input() const { return RealVector::Constant(L_, 1.0 / L_); }
  Index L_;
  Mlp<double> net_;
  Adam<double> opt_;
};

}  // namespace

TEST_CASE("demonstration loss examples") {
  const auto a = ActionVector::from_indices(4, {0, 2});
  CHECK(demonstration_loss(RealVector::Constant(4, 0.5), a) == doctest::Approx(std::log(2.0)));
  CHECK(demonstration_loss(a.to_real(), a) == doctest::Approx(-std::log(1 - 1e-6)).epsilon(1e-6));
  RealVector rv(2);
  rv << 0.9, 0.2;
  CHECK(demonstration_loss(rv, ActionVector::from_bits({1, 0})) == doctest::Approx(0.1643).epsilon(1e-3));
}

TEST_CASE("demonstration loss is nonnegative and minimal at the clipped target") {
  Rng rng = make_rng(9);
  const auto a = ActionVector::from_indices(6, {1, 3, 4});
  const double at_target = demonstration_loss(a.to_real(), a);
  for (int i = 0; i < 200; ++i) {
    RealVector rv(6);
    for (Index j = 0; j < 6; ++j) rv[j] = uniform01(rng);
    const double l = demonstration_loss(rv, a);
    CHECK(l >= 0.0);
    CHECK(l >= at_target);
  }
}

TEST_CASE("recommended buffer is FIFO and bounded") {
  SharedBuffers buf(3);
  for (int i = 0; i < 4; ++i)
    buf.push_recommended({ActionVector::from_indices(5, {static_cast<Index>(i)}), 0.0, 0.0, 0.0,
                          static_cast<std::size_t>(i)});
  REQUIRE(buf.recommended().size() == 3);
  CHECK(buf.recommended().front().round == 1);
  CHECK(buf.recommended().back().round == 3);
}

TEST_CASE("elite buffer keeps the top distinct actions") {
  Rng rng = make_rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    SharedBuffers buf(4);
    double best = -1.0;
    for (int i = 0; i < 30; ++i) {
      const double s = uniform01(rng);
      best = std::max(best, s);
      buf.push_elite(elite(8, {static_cast<Index>(uniform_index(rng, 8))}, s), s);
      CHECK(buf.elites().size() <= 4);
      CHECK(std::is_sorted(buf.elite_scores().rbegin(), buf.elite_scores().rend()));
    }
    CHECK(buf.elite_scores().front() == best);
  }
  SharedBuffers dup(3);
  dup.push_elite(elite(4, {0}, 1.0), 1.0);
  dup.push_elite(elite(4, {0}, 2.0), 2.0);
  CHECK(dup.elites().size() == 1);
  CHECK(dup.elite_scores().front() == 2.0);
}

TEST_CASE("snapshots do not see later pushes") {
  SharedBuffers buf(3);
  buf.push_elite(elite(4, {1}, 0.5), 0.5);
  const auto snap = buf.snapshot();
  buf.push_elite(elite(4, {2}, 0.9), 0.9);
  buf.push_recommended({ActionVector::from_indices(4, {3}), 1.0, 0.0, 1.0, 1});
  CHECK(snap.elites.size() == 1);
  CHECK(snap.recommended.empty());
}

TEST_CASE("demonstration store tracks the trailing-window maximum") {
  Rng rng = make_rng(12);
  DemonstrationStore store(10);
  CHECK_FALSE(store.best());
  std::vector<double> scores;
  for (std::size_t t = 1; t <= 100; ++t) {
    const double s = uniform01(rng);
    scores.push_back(s);
    store.push(t, ActionVector::from_indices(20, {static_cast<Index>(t % 20)}), s);
    const auto lo = scores.size() > 10 ? scores.end() - 10 : scores.begin();
    CHECK(store.best_score() == *std::max_element(lo, scores.end()));
  }
}

TEST_CASE("stuck trigger fires after the patience window") {
  StuckTracker improving(5);
  for (int t = 0; t < 50; ++t) {
    improving.observe(static_cast<double>(t));
    CHECK_FALSE(improving.stuck());
  }

  StuckTracker frozen(5);
  frozen.observe(1.0);
  int fired_at = -1;
  for (int t = 1; t <= 10 && fired_at < 0; ++t) {
    frozen.observe(1.0);
    if (frozen.stuck()) fired_at = t;
  }
  CHECK(fired_at == 5);
}

TEST_CASE("trigger_and_apply needs a demonstration and a stuck signal") {
  StubSampler stub(10);
  SamplerContext ctx;
  StuckTracker tracker(2);
  DemonstrationStore store(100);
  tracker.observe(1.0);
  tracker.observe(1.0);
  tracker.observe(1.0);
  REQUIRE(tracker.stuck());
  CHECK_FALSE(trigger_and_apply(stub, tracker, store, 5, ctx));
  store.push(1, ActionVector::from_indices(10, {0, 3, 7}), 1.0);
  CHECK(trigger_and_apply(stub, tracker, store, 5, ctx));
  CHECK(stub.applied == 1);
  CHECK_FALSE(tracker.stuck());
}

TEST_CASE("200 demonstration steps make a stub reproduce A*") {
  StubSampler stub(10);
  SamplerContext ctx;
  const auto a_star = ActionVector::from_indices(10, {1, 4, 5, 8});
  stub.demonstrate(ctx, a_star, 200);
  CHECK(binarize_top_k(stub.real_output(ctx), 4) == a_star);
  CHECK(demonstration_loss(stub.real_output(ctx), a_star) < 0.1);
}
