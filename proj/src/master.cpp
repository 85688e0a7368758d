#include "msb/master.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "msb/cem_sampler.hpp"
#include "msb/population_samplers.hpp"
#include "msb/solver_sampler.hpp"
#include "msb/wolpertinger_sampler.hpp"

namespace msb {

std::vector<double> quota_shares(const std::vector<double>& scores) {
  if (scores.empty()) return {};
  const double m = *std::max_element(scores.begin(), scores.end());
  std::vector<double> w(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) w[i] = std::exp(scores[i] - m);
  const double z = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& x : w) x /= z;
  return w;
}

std::vector<int> assign_quotas(const std::vector<double>& scores, int n_es) {
  if (n_es < 0) throw InvalidInput("assign_quotas: n_es must be >= 0");
  const auto share = quota_shares(scores);
  std::vector<int> q(share.size());
  std::vector<std::pair<double, std::size_t>> rem;
  int used = 0;
  for (std::size_t i = 0; i < share.size(); ++i) {
    const double exact = share[i] * n_es;
    q[i] = static_cast<int>(std::floor(exact));
    used += q[i];
    rem.emplace_back(exact - q[i], i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; used < n_es && !rem.empty(); r = (r + 1) % rem.size(), ++used) ++q[rem[r].second];
  return q;
}

std::size_t select_best(const std::vector<EliteSample>& elites, double lambda) {
  if (elites.empty()) throw std::logic_error("select_best: empty elite pool");
  std::size_t best = 0;
  double best_score = composite_score(elites[0].surrogate_score, elites[0].violation_rate, lambda);
  for (std::size_t i = 1; i < elites.size(); ++i) {
    const double s = composite_score(elites[i].surrogate_score, elites[i].violation_rate, lambda);
    if (s > best_score) {
      best = i;
      best_score = s;
    }
  }
  return best;
}

Master::Master(const MasterConfig& config, const UcbConfig& ucb, ConstraintSet constraints,
               const FeatureMatrix* features, std::array<std::unique_ptr<Sampler>, kSlaveCount> slaves)
    : config_(config),
      ucb_(config.L, ucb),
      constraints_(std::move(constraints)),
      features_(features),
      slaves_(std::move(slaves)),
      buffers_(config.buffer_capacity),
      demos_(config.demo_window) {
  if (config.K < 1 || config.K > config.L) throw InvalidInput("Master: K must satisfy 1 <= K <= L");
  if (config.f_in < 1) throw InvalidInput("Master: f_in must be >= 1");
  if (config.n_es < 1) throw InvalidInput("Master: n_es must be >= 1");
  if (!slaves_[static_cast<std::size_t>(SamplerId::random)])
    slaves_[static_cast<std::size_t>(SamplerId::random)] = std::make_unique<RandomSampler>();
  const std::size_t patience = config.stuck_patience.value_or(3 * static_cast<std::size_t>(config.f_in));
  for (std::size_t s = 0; s < kSlaveCount; ++s) {
    rngs_[s] = make_rng(config.seed, 0x5000 + s);
    trackers_[s] = StuckTracker(patience);
    if (slaves_[s] && static_cast<std::size_t>(slaves_[s]->id()) != s)
      throw InvalidInput("Master: slave in the wrong slot");
  }
}

std::size_t Master::exploration_rounds() const {
  return config_.exploration_rounds.value_or(2 * static_cast<std::size_t>(config_.L));
}

double Master::surrogate(const ActionVector& a) {
  const auto it = memo_.find(a);
  if (it != memo_.end()) return it->second;
  const double u = ucb_.ucb(a.normalized()).ucb;
  memo_.emplace(a, u);
  return u;
}

SamplerContext Master::context() {
  SamplerContext ctx;
  ctx.round = round_ + 1;
  ctx.L = config_.L;
  ctx.K = config_.K;
  ctx.lambda = config_.lambda;
  ctx.constraints = &constraints_;
  ctx.features = features_;
  ctx.surrogate = [this](const ActionVector& a) { return surrogate(a); };
  ctx.surrogate_raw = [this](const Eigen::MatrixXd& X) { return surrogate_raw(X); };
  ctx.buffers = &buffers_;
  return ctx;
}

bool Master::participates(std::size_t slot, std::size_t t) const {
  if (!slaves_[slot] || !config_.enabled[slot]) return false;
  const int p = std::max(1, config_.period[slot]);
  return t % static_cast<std::size_t>(p) == 0;
}

std::vector<int> Master::current_quotas() const {
  std::vector<std::size_t> active;
  for (std::size_t s = 0; s < kSlaveCount; ++s)
    if (slaves_[s] && config_.enabled[s]) active.push_back(s);
  // Samplers without history yet borrow the mean of those with one.
  double sum = 0.0;
  int n = 0;
  for (std::size_t s : active)
    if (score_history_[s]) {
      sum += *score_history_[s];
      ++n;
    }
  const double fill = n > 0 ? sum / n : 0.0;
  std::vector<double> scores;
  for (std::size_t s : active) scores.push_back(score_history_[s].value_or(fill));
  const auto q = assign_quotas(scores, config_.n_es);
  std::vector<int> out(kSlaveCount, 0);
  for (std::size_t i = 0; i < active.size(); ++i) out[active[i]] = q[i];
  return out;
}

std::vector<Index> Master::play_order(const ActionVector& a) const {
  std::vector<Index> sel = a.selected();
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(config_.L, static_cast<Index>(sel.size()));
  for (std::size_t k = 0; k < sel.size(); ++k) X(sel[k], static_cast<Index>(k)) = 1.0;
  const RealVector b = surrogate_raw(X);
  std::vector<std::size_t> idx(sel.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t x, std::size_t y) { return b[static_cast<Index>(x)] > b[static_cast<Index>(y)]; });
  std::vector<Index> order;
  for (std::size_t k : idx) order.push_back(sel[k]);
  return order;
}

RoundRecord Master::run_round(Environment& env, Rng& env_rng) {
  memo_.clear();
  const std::size_t t = round_ + 1;
  SamplerContext ctx = context();
  std::vector<EliteSample> pool;
  const auto random_slot = static_cast<std::size_t>(SamplerId::random);
  const auto tlbo_slot = static_cast<std::size_t>(SamplerId::tlbo);

  auto submit = [&](std::size_t slot, const std::vector<ActionVector>& actions, std::size_t limit) {
    std::size_t n = 0;
    for (const auto& a : actions) {
      if (n >= limit) break;
      if (a.size() != config_.L || a.k() != config_.K) continue;
      pool.push_back({a, static_cast<SamplerId>(slot), surrogate(a), ctx.violation(a)});
      ++n;
    }
    return n;
  };

  std::size_t deficit = 0;
  if (t <= exploration_rounds()) {
    const auto q = static_cast<std::size_t>(config_.n_es);
    deficit = q - submit(random_slot, slaves_[random_slot]->propose(ctx, q, rngs_[random_slot]), q);
  } else {
    const auto quota = current_quotas();
    for (std::size_t s = 0; s < kSlaveCount; ++s) {
      if (s == random_slot || s == tlbo_slot) continue;
      const auto q = static_cast<std::size_t>(quota[s]);
      if (q == 0) continue;
      if (!participates(s, t)) {
        deficit += q;
        continue;
      }
      deficit += q - submit(s, slaves_[s]->propose(ctx, q, rngs_[s]), q);
    }
    if (participates(random_slot, t) && quota[random_slot] > 0) {
      const auto q = static_cast<std::size_t>(quota[random_slot]);
      deficit += q - submit(random_slot, slaves_[random_slot]->propose(ctx, q, rngs_[random_slot]), q);
    } else {
      deficit += static_cast<std::size_t>(quota[random_slot]);
    }
    // Teacher-student steps work on what everyone else has already submitted.
    if (quota[tlbo_slot] > 0) {
      const auto q = static_cast<std::size_t>(quota[tlbo_slot]);
      if (participates(tlbo_slot, t) && !pool.empty()) {
        SamplerContext tctx = ctx;
        const std::vector<EliteSample> others = pool;
        tctx.pool = others;
        deficit += q - submit(tlbo_slot, slaves_[tlbo_slot]->propose(tctx, q, rngs_[tlbo_slot]), q);
      } else {
        deficit += q;
      }
    }
  }
  // A short or empty pool is topped up by fresh uniform draws.
  if (deficit > 0 || pool.empty()) {
    std::vector<ActionVector> fill;
    const std::size_t n = std::max<std::size_t>(deficit, 1);
    for (std::size_t k = 0; k < n; ++k) fill.push_back(random_sample(config_.L, config_.K, rngs_[random_slot]));
    submit(random_slot, fill, n);
  }

  const std::size_t best = select_best(pool, config_.lambda);
  RoundRecord rec;
  rec.t = t;
  rec.action = pool[best].action;
  rec.chosen = pool[best].sampler_id;
  rec.violation = pool[best].violation_rate;
  rec.score = composite_score(pool[best].surrogate_score, rec.violation, config_.lambda);

  const std::vector<Index> order = env.ordered() ? play_order(rec.action) : rec.action.selected();
  rec.reward = env.feedback(t, rec.action, order, env_rng);

  // Slaves learn from the frozen surrogate, never from r_t directly.
  std::array<std::optional<double>, kSlaveCount> best_u;
  for (const auto& e : pool) {
    const auto s = static_cast<std::size_t>(e.sampler_id);
    slaves_[s]->record(ctx, e.action, e.surrogate_score, e.violation_rate);
    score_history_[s] = score_history_[s] ? config_.score_decay * *score_history_[s] +
                                                (1.0 - config_.score_decay) * e.surrogate_score
                                          : e.surrogate_score;
    if (!best_u[s] || e.surrogate_score > *best_u[s]) best_u[s] = e.surrogate_score;
    buffers_.push_elite(e, composite_score(e.surrogate_score, e.violation_rate, config_.lambda));
  }
  buffers_.push_recommended({rec.action, rec.reward, rec.violation, rec.score, t});
  demos_.push(t, rec.action, rec.score);

  if (config_.cotraining && t > exploration_rounds()) {
    for (std::size_t s = 0; s < kSlaveCount; ++s) {
      if (!participates(s, t) || !slaves_[s]->demonstrable()) continue;
      trackers_[s].observe(best_u[s]);
      if (trigger_and_apply(*slaves_[s], trackers_[s], demos_, config_.demo_steps, ctx)) ++demo_count_[s];
    }
  }
  if (t % static_cast<std::size_t>(config_.f_in) == 0)
    for (std::size_t s = 0; s < kSlaveCount; ++s)
      if (slaves_[s] && config_.enabled[s]) slaves_[s]->train(ctx, rngs_[s]);

  ucb_.update(rec.action.normalized(), rec.reward);
  last_pool_ = std::move(pool);
  round_ = t;
  return rec;
}

std::array<std::unique_ptr<Sampler>, kSlaveCount> make_default_slaves(Index L, Index K, const FeatureMatrix* features,
                                                                        std::uint64_t seed) {
  std::array<std::unique_ptr<Sampler>, kSlaveCount> s;
  SolverSamplerConfig sc;
  sc.solve.seed = mix_seed(seed, 1);
  s[static_cast<std::size_t>(SamplerId::solver)] = std::make_unique<SolverSampler>(sc);
  WolpertingerConfig wc;
  wc.seed = mix_seed(seed, 2);
  s[static_cast<std::size_t>(SamplerId::wolpertinger)] = std::make_unique<WolpertingerSampler>(L, wc);
  G2aConfig gc;
  gc.seed = mix_seed(seed, 3);
  s[static_cast<std::size_t>(SamplerId::g2anet)] = std::make_unique<G2aSampler>(L, features, gc);
  s[static_cast<std::size_t>(SamplerId::cem)] = std::make_unique<CemSampler>(L, K);
  s[static_cast<std::size_t>(SamplerId::random)] = std::make_unique<RandomSampler>();
  s[static_cast<std::size_t>(SamplerId::tlbo)] = std::make_unique<TlboSampler>();
  return s;
}

}  // namespace msb
