#include "doctest.h"

#include <cmath>

#include "msb/master.hpp"
#include "msb/population_samplers.hpp"

using namespace msb;

namespace {

class FixedSampler final : public Sampler {
 public:
  FixedSampler(SamplerId id, ActionVector a) : id_(id), a_(std::move(a)) {}
  SamplerId id() const override { return id_; }
  std::vector<ActionVector> propose(const SamplerContext&, std::size_t count, Rng&) override {
    return std::vector<ActionVector>(count, a_);
  }

 private:
  SamplerId id_;
  ActionVector a_;
};

class ConstantEnvironment final : public Environment {
 public:
  explicit ConstantEnvironment(Index L) : L_(L) {}
  Index arm_count() const override { return L_; }
  double feedback(std::size_t, const ActionVector& a, std::span<const Index>, Rng&) override {
    return 0.1 * static_cast<double>(a.selected().front());
  }

 private:
  Index L_;
};

UcbConfig small_ucb() {
  UcbConfig u;
  u.width = 8;
  u.steps = 3;
  u.warm_start = true;
  return u;
}

std::array<std::unique_ptr<Sampler>, kSlaveCount> fixed_slaves(const ActionVector& a) {
  std::array<std::unique_ptr<Sampler>, kSlaveCount> s;
  for (int i = 0; i < kSlaveCount; ++i) s[static_cast<std::size_t>(i)] = std::make_unique<FixedSampler>(static_cast<SamplerId>(i), a);
  return s;
}

}  // namespace

TEST_CASE("quota shares") {
  const auto eq = quota_shares(std::vector<double>(6, 0.7));
  for (double s : eq) CHECK(s == doctest::Approx(1.0 / 6.0));
  const auto one = quota_shares({1, 0, 0, 0, 0, 0});
  CHECK(one[0] == doctest::Approx(std::exp(1.0) / (std::exp(1.0) + 5.0)));
  CHECK(one[0] == doctest::Approx(0.3522).epsilon(1e-4));
}

TEST_CASE("quotas always sum to n_es") {
  Rng rng = make_rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> s(6);
    for (auto& x : s) x = 3.0 * standard_normal(rng);
    const int n = 1 + static_cast<int>(uniform_index(rng, 100));
    const auto q = assign_quotas(s, n);
    int total = 0;
    for (int v : q) {
      CHECK(v >= 0);
      total += v;
    }
    CHECK(total == n);
  }
  const auto q = assign_quotas(std::vector<double>(6, 0.0), 10);
  CHECK(q == std::vector<int>{2, 2, 2, 2, 1, 1});
}

TEST_CASE("selection by Score") {
  const auto a = ActionVector::from_indices(4, {0, 1});
  const auto b = ActionVector::from_indices(4, {2, 3});
  CHECK(select_best({{a, SamplerId::cem, 1.0, 0.3}}, 5.0) == 0);
  CHECK(select_best({{a, SamplerId::cem, 1.0, 0.5}, {b, SamplerId::solver, 1.0, 0.0}}, 5.0) == 1);
  // ties go to the first
  CHECK(select_best({{a, SamplerId::cem, 1.0, 0.0}, {b, SamplerId::solver, 1.0, 0.0}}, 5.0) == 0);
  Rng rng = make_rng(2);
  std::vector<EliteSample> pool;
  for (int i = 0; i < 20; ++i) pool.push_back({random_sample(6, 2, rng), SamplerId::random, standard_normal(rng), uniform01(rng)});
  const std::size_t before = select_best(pool, 2.0);
  for (auto& e : pool) e.surrogate_score += 3.7;
  CHECK(select_best(pool, 2.0) == before);
  CHECK_THROWS(select_best({}, 1.0));
}

TEST_CASE("exploration phase uses the random sampler only") {
  const Index L = 10, K = 2;
  MasterConfig cfg;
  cfg.L = L;
  cfg.K = K;
  cfg.f_in = 5;
  auto slaves = make_default_slaves(L, K, nullptr, 3);
  Master m(cfg, small_ucb(), ConstraintSet(L), nullptr, std::move(slaves));
  Rng env_rng = make_rng(4);
  Rng spec_rng = make_rng(5);
  SyntheticEnvironment env(make_synthetic_spec(FeedbackForm::linear, L, spec_rng));
  const auto first = m.run_round(env, env_rng);
  CHECK(first.t == 1);
  for (const auto& e : m.last_pool()) CHECK(e.sampler_id == SamplerId::random);
  CHECK(m.last_pool().size() == static_cast<std::size_t>(cfg.n_es));
  for (std::size_t t = 2; t <= 2 * L + 30; ++t) {
    const auto r = m.run_round(env, env_rng);
    bool member = false;
    for (const auto& e : m.last_pool()) member = member || (e.action == r.action && e.sampler_id == r.chosen);
    CHECK(member);
    CHECK(m.ucb().history_size() == t);
    CHECK(r.violation >= 0.0);
    CHECK(r.violation <= 1.0);
    if (t > 2 * L) {
      const auto q = m.current_quotas();
      int sum = 0;
      for (int v : q) sum += v;
      CHECK(sum == cfg.n_es);
    }
  }
}

TEST_CASE("fixed-action stubs: reward is the environment's for that action") {
  const Index L = 6, K = 2;
  const auto a = ActionVector::from_indices(L, {3, 5});
  MasterConfig cfg;
  cfg.L = L;
  cfg.K = K;
  cfg.exploration_rounds = 0;
  Master m(cfg, small_ucb(), ConstraintSet(L), nullptr, fixed_slaves(a));
  ConstantEnvironment env(L);
  Rng rng = make_rng(6);
  for (int t = 0; t < 30; ++t) {
    const auto r = m.run_round(env, rng);
    CHECK(r.action == a);
    CHECK(r.reward == doctest::Approx(0.3));
  }
}

TEST_CASE("surrogate is memoized and optimistic") {
  const Index L = 6, K = 2;
  MasterConfig cfg;
  cfg.L = L;
  cfg.K = K;
  Master m(cfg, small_ucb(), ConstraintSet(L), nullptr, make_default_slaves(L, K, nullptr, 1));
  const auto a = ActionVector::from_indices(L, {0, 4});
  const double u1 = m.surrogate(a);
  CHECK(m.surrogate(ActionVector::from_indices(L, {4, 0})) == u1);
  CHECK(u1 >= m.ucb().ucb(a.normalized()).mean);
}

TEST_CASE("master determinism") {
  const Index L = 8, K = 2;
  auto run = [&] {
    MasterConfig cfg;
    cfg.L = L;
    cfg.K = K;
    cfg.f_in = 5;
    cfg.seed = 9;
    Rng spec_rng = make_rng(10);
    SyntheticEnvironment env(make_synthetic_spec(FeedbackForm::linear, L, spec_rng));
    Master m(cfg, small_ucb(), ConstraintSet(L), nullptr, make_default_slaves(L, K, nullptr, 9));
    Rng env_rng = make_rng(11);
    std::vector<double> out;
    for (int t = 0; t < 60; ++t) {
      const auto r = m.run_round(env, env_rng);
      out.push_back(r.reward);
      out.push_back(static_cast<double>(r.chosen));
    }
    return out;
  };
  CHECK(run() == run());
}
