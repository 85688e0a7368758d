#include "msb/cem_sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "msb/cotraining.hpp"

namespace msb {

namespace {

RealVector odds(const RealVector& u) { return (u.array() / (1.0 - u.array())).matrix(); }

double log_ratio_topk(const RealVector& u_old, const RealVector& u_new, const PpoSample& s) {
  return subset_log_probability(odds(u_new), s.orderings) - subset_log_probability(odds(u_old), s.orderings);
}

void sort_desc(std::vector<ScoredAction>& v) {
  std::stable_sort(v.begin(), v.end(), [](const ScoredAction& a, const ScoredAction& b) { return a.score > b.score; });
}

double rescore(const SamplerContext& ctx, const ActionVector& a, double stored) {
  if (!ctx.has_surrogate()) return stored;
  return composite_score(ctx.surrogate(a), ctx.violation(a), ctx.lambda);
}

}  // namespace

double bernoulli_kl(const RealVector& p, const RealVector& q) {
  if (p.size() != q.size()) throw InvalidInput("bernoulli_kl: length mismatch");
  double kl = 0.0;
  for (Index i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) kl += p[i] * std::log(p[i] / q[i]);
    if (p[i] < 1.0) kl += (1.0 - p[i]) * std::log((1.0 - p[i]) / (1.0 - q[i]));
  }
  return kl;
}

SubsetDraw cem_draw(const RealVector& mu, Index K, Rng& rng, int m_perms) {
  if (K < 1 || K > mu.size()) throw InvalidInput("cem_draw: K out of range");
  SubsetDraw d;
  d.perturbed.resize(mu.size());
  for (Index i = 0; i < mu.size(); ++i) d.perturbed[i] = std::log(mu[i] / (1.0 - mu[i])) + gumbel(rng);
  d.action = binarize_top_k(d.perturbed, K);
  if (m_perms > 0) {
    d.orderings = draw_orderings(d.action.selected(), m_perms, rng);
    d.logprob = subset_log_probability(odds(mu), d.orderings);
  }
  return d;
}

RealVector cem_mean_update(const RealVector& mu_old, const std::vector<ActionVector>& elites, double beta_mix,
                           double eps) {
  if (elites.empty()) return clip(mu_old, eps, 1.0 - eps);
  RealVector mean = RealVector::Zero(mu_old.size());
  for (const auto& e : elites) mean += e.to_real();
  mean /= static_cast<double>(elites.size());
  return clip(beta_mix * mu_old + (1.0 - beta_mix) * mean, eps, 1.0 - eps);
}

std::vector<ActionVector> select_elites(std::vector<ScoredAction> own, std::vector<ScoredAction> global,
                                        std::size_t count) {
  sort_desc(own);
  sort_desc(global);
  std::size_t from_global = std::min(count / 2, global.size());
  std::size_t from_own = std::min(count - from_global, own.size());
  from_global = std::min(count - from_own, global.size());
  std::vector<ActionVector> out;
  for (std::size_t i = 0; i < from_global; ++i) out.push_back(global[i].action);
  for (std::size_t i = 0; i < from_own; ++i) out.push_back(own[i].action);
  return out;
}

double ppo_objective(const RealVector& u_old, const RealVector& u_new, const std::vector<PpoSample>& samples,
                     double baseline, double beta_kl, PpoProbability form) {
  if (samples.empty()) return -beta_kl * bernoulli_kl(u_old, u_new);
  double total = 0.0;
  for (const auto& s : samples) {
    double ratio = 0.0;
    if (form == PpoProbability::factorized) {
      for (Index i = 0; i < u_old.size(); ++i)
        ratio += bernoulli_probability(s.action[i], u_new[i]) / bernoulli_probability(s.action[i], u_old[i]);
    } else {
      ratio = std::exp(log_ratio_topk(u_old, u_new, s));
    }
    total += ratio * (s.score - baseline);
  }
  return total / static_cast<double>(samples.size()) - beta_kl * bernoulli_kl(u_old, u_new);
}

RealVector ppo_objective_grad(const RealVector& u_old, const RealVector& u_new, const std::vector<PpoSample>& samples,
                              double baseline, double beta_kl, PpoProbability form) {
  const Index L = u_old.size();
  RealVector g = RealVector::Zero(L);
  for (const auto& s : samples) {
    const double adv = s.score - baseline;
    if (form == PpoProbability::factorized) {
      for (Index i = 0; i < L; ++i) g[i] += adv * (s.action[i] ? 1.0 / u_old[i] : -1.0 / (1.0 - u_old[i]));
    } else {
      const double ratio = std::exp(log_ratio_topk(u_old, u_new, s));
      const RealVector dodds = (1.0 / (1.0 - u_new.array()).square()).matrix();
      g += adv * ratio * subset_log_probability_grad(odds(u_new), s.orderings).cwiseProduct(dodds);
    }
  }
  if (!samples.empty()) g /= static_cast<double>(samples.size());
  // d/dq KL(p || q) = -p/q + (1-p)/(1-q)
  g -= beta_kl * (-(u_old.array() / u_new.array()) + (1.0 - u_old.array()) / (1.0 - u_new.array())).matrix();
  return g;
}

RealVector ppo_interval_update(const RealVector& u_old, const std::vector<PpoSample>& samples, const CemConfig& cfg) {
  if (samples.empty()) return u_old;
  double b = 0.0;
  for (const auto& s : samples) b += s.score;
  b /= static_cast<double>(samples.size());
  RealVector u = u_old;
  for (int step = 0; step < cfg.ascent_steps; ++step)
    u = clip(u + cfg.ascent_lr * ppo_objective_grad(u_old, u, samples, b, cfg.beta_kl, cfg.probability), cfg.eps_mu,
             1.0 - cfg.eps_mu);
  return u;
}

CemSampler::CemSampler(Index L, Index K, const CemConfig& config) : L_(L), K_(K), config_(config) {
  if (K < 1 || K > L) throw InvalidInput("CemSampler: K must satisfy 1 <= K <= L");
  if (config.epoch_length == 0 || config.interval_length == 0) throw InvalidInput("CemSampler: empty epoch or interval");
  if (!(config.eps_mu > 0.0 && config.eps_mu < 0.5)) throw InvalidInput("CemSampler: eps_mu must lie in (0, 0.5)");
  mu_ = clip(RealVector::Constant(L, static_cast<double>(K) / static_cast<double>(L)), config.eps_mu,
             1.0 - config.eps_mu);
  u_ = mu_;
}

std::vector<ActionVector> CemSampler::propose(const SamplerContext&, std::size_t count, Rng& rng) {
  const int m = config_.probability == PpoProbability::topk ? default_perm_count(K_, config_.perm_cap) : 0;
  std::vector<ActionVector> out;
  for (std::size_t s = 0; s < count; ++s) {
    pending_.push_back(cem_draw(u_, K_, rng, m));
    out.push_back(pending_.back().action);
  }
  return out;
}

void CemSampler::record(const SamplerContext& ctx, const ActionVector& a, double reward, double violation) {
  auto it = std::find_if(pending_.begin(), pending_.end(), [&](const SubsetDraw& d) { return d.action == a; });
  if (it == pending_.end()) return;
  const double score = composite_score(reward, violation, ctx.lambda);
  interval_.push_back({a, score, std::move(it->orderings)});
  epoch_.push_back({a, score});
  pending_.erase(it);
  if (interval_.size() >= config_.interval_length) finish_interval();
  if (epoch_.size() >= config_.epoch_length) finish_epoch(ctx);
}

void CemSampler::finish_interval() {
  u_ = ppo_interval_update(u_, interval_, config_);
  interval_.clear();
}

void CemSampler::finish_epoch(const SamplerContext& ctx) {
  std::vector<ScoredAction> own = epoch_;
  for (const auto& a : archive_) own.push_back({a.action, rescore(ctx, a.action, a.score)});
  std::vector<ScoredAction> global;
  if (config_.use_global_elites && ctx.buffers) {
    const auto& el = ctx.buffers->elites();
    const auto& sc = ctx.buffers->elite_scores();
    for (std::size_t i = 0; i < el.size(); ++i) global.push_back({el[i].action, rescore(ctx, el[i].action, sc[i])});
  }
  const auto n_elite = static_cast<std::size_t>(std::ceil(config_.rho * static_cast<double>(config_.epoch_length)));
  const auto elites = select_elites(own, std::move(global), std::max<std::size_t>(1, n_elite));
  mu_ = cem_mean_update(u_, elites, config_.beta_mix, config_.eps_mu);
  u_ = mu_;

  // Archive: best distinct actions seen, by their latest score.
  sort_desc(own);
  archive_.clear();
  for (const auto& s : own) {
    if (archive_.size() >= config_.archive_size) break;
    if (std::none_of(archive_.begin(), archive_.end(), [&](const ScoredAction& x) { return x.action == s.action; }))
      archive_.push_back(s);
  }
  epoch_.clear();
  interval_.clear();
  pending_.clear();
  ++epochs_;
}

void CemSampler::demonstrate(const SamplerContext&, const ActionVector& a_star, int steps) {
  const RealVector target = a_star.to_real();
  RealVector theta = (u_.array() / (1.0 - u_.array())).log().matrix();
  for (int s = 0; s < steps; ++s) {
    const RealVector q = (1.0 / (1.0 + (-theta.array()).exp())).matrix();
    theta -= config_.demo_lr * (q - target) / static_cast<double>(L_);
  }
  u_ = clip((1.0 / (1.0 + (-theta.array()).exp())).matrix(), config_.eps_mu, 1.0 - config_.eps_mu);
  mu_ = u_;
}

GtkrSampler::GtkrSampler(Index L, const GtkrConfig& config) : L_(L), config_(config), theta_(RealVector::Zero(L)) {
  if (L < 1) throw InvalidInput("GtkrSampler: need at least one arm");
}

RealVector GtkrSampler::scores() const { return (1.0 / (1.0 + (-theta_.array()).exp())).matrix(); }

std::vector<ActionVector> GtkrSampler::propose(const SamplerContext& ctx, std::size_t count, Rng& rng) {
  const RealVector p = scores();
  const int m = default_perm_count(ctx.K, config_.perm_cap);
  std::vector<ActionVector> out;
  for (std::size_t s = 0; s < count; ++s) {
    draws_.push_back(gumbel_topk_sample(p, ctx.K, m, rng));
    feedback_.push_back(std::nullopt);
    out.push_back(draws_.back().action);
  }
  return out;
}

void GtkrSampler::record(const SamplerContext& ctx, const ActionVector& a, double reward, double violation) {
  for (std::size_t d = draws_.size(); d-- > 0;)
    if (!feedback_[d] && draws_[d].action == a) {
      feedback_[d] = composite_score(reward, violation, ctx.lambda);
      return;
    }
}

void GtkrSampler::train(const SamplerContext&, Rng&) {
  const RealVector p = scores();
  const RealVector pc = clip(p, kScoreClip, 1.0 - kScoreClip);
  std::vector<RealVector> grads;
  std::vector<double> fb;
  for (std::size_t d = 0; d < draws_.size(); ++d) {
    if (!feedback_[d]) continue;
    RealVector g = subset_log_probability_grad(pc, draws_[d].orderings);
    for (Index i = 0; i < L_; ++i) g[i] = (p[i] <= kScoreClip || p[i] >= 1.0 - kScoreClip) ? 0.0 : g[i] * p[i] * (1.0 - p[i]);
    grads.push_back(std::move(g));
    fb.push_back(*feedback_[d]);
  }
  if (grads.size() >= 2) theta_ += config_.lr * reinforce_direction(grads, fb);
  draws_.clear();
  feedback_.clear();
}

}  // namespace msb
