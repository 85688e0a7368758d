#pragma once

// Cross-entropy slave with proximal corrections. A per-arm inclusion
// probability vector is refit to the elite fraction of each epoch; inside the
// epoch it is nudged every interval by a clipped-ratio style objective.
// Actions are drawn by gumbel top-K over the Bernoulli logits so every draw
// has exactly K arms.
//
// Epochs and intervals count recorded samples, not rounds: under the master a
// round yields several samples from this sampler.

#include <optional>

#include "msb/g2anet_sampler.hpp"

namespace msb {

/// Probability of one coordinate of an action under inclusion probability u.
inline double bernoulli_probability(bool selected, double u) { return selected ? u : 1.0 - u; }

/// Sum over arms of KL(Bernoulli(p_i) || Bernoulli(q_i)).
double bernoulli_kl(const RealVector& p, const RealVector& q);

/// Exactly-K draw: gumbel top-K over log(mu / (1 - mu)). With m_perms > 0 the
/// orderings for the subset-probability estimate are kept on the draw.
SubsetDraw cem_draw(const RealVector& mu, Index K, Rng& rng, int m_perms = 0);

struct ScoredAction {
  ActionVector action;
  double score = 0.0;
};

/// mu <- beta_mix * mu_old + (1 - beta_mix) * mean(elites), clipped to [eps, 1 - eps].
RealVector cem_mean_update(const RealVector& mu_old, const std::vector<ActionVector>& elites, double beta_mix,
                           double eps);

/// Picks `count` elites: floor(count / 2) slots from `global` (best first),
/// the rest from `own` (best first); either side's shortfall is filled from
/// the other. Ties keep input order.
std::vector<ActionVector> select_elites(std::vector<ScoredAction> own, std::vector<ScoredAction> global,
                                        std::size_t count);

enum class PpoProbability {
  factorized,  // per-arm Bernoulli ratios summed over arms
  topk,        // one ratio per sample from the gumbel top-K subset probability
};

struct PpoSample {
  ActionVector action;
  double score = 0.0;
  /// Orderings for the top-K probability form; ignored when factorized.
  std::vector<std::vector<Index>> orderings;
};

/// J(u_new) = (1/n) sum_t ratio_t (score_t - b) - beta_kl * KL(u_old || u_new).
double ppo_objective(const RealVector& u_old, const RealVector& u_new, const std::vector<PpoSample>& samples,
                     double baseline, double beta_kl, PpoProbability form = PpoProbability::factorized);

RealVector ppo_objective_grad(const RealVector& u_old, const RealVector& u_new, const std::vector<PpoSample>& samples,
                              double baseline, double beta_kl, PpoProbability form = PpoProbability::factorized);

struct CemConfig {
  std::size_t epoch_length = 50;     // N
  std::size_t interval_length = 10;  // n
  double rho = 0.1;
  double beta_mix = 0.3;
  double beta_kl = 0.1;
  double eps_mu = 0.01;
  std::size_t archive_size = 20;
  int ascent_steps = 5;
  double ascent_lr = 0.05;
  bool use_global_elites = true;
  PpoProbability probability = PpoProbability::factorized;
  int perm_cap = 10;
  double demo_lr = 0.5;
};

/// Ascent steps on J starting from u_old; result clipped to [eps, 1 - eps]
/// after every step. The baseline is the interval's mean score.
RealVector ppo_interval_update(const RealVector& u_old, const std::vector<PpoSample>& samples, const CemConfig& cfg);

class CemSampler final : public Sampler {
 public:
  CemSampler(Index L, Index K, const CemConfig& config = {});

  SamplerId id() const override { return SamplerId::cem; }
  std::vector<ActionVector> propose(const SamplerContext& ctx, std::size_t count, Rng& rng) override;
  void record(const SamplerContext& ctx, const ActionVector& a, double reward, double violation) override;

  bool demonstrable() const override { return true; }
  RealVector real_output(const SamplerContext&) const override { return u_; }
  void demonstrate(const SamplerContext& ctx, const ActionVector& a_star, int steps) override;

  /// Epoch-level inclusion probabilities.
  const RealVector& mu() const { return mu_; }
  /// Probabilities currently sampled from (mu plus the interval corrections).
  const RealVector& sampling_parameters() const { return u_; }
  const std::vector<ScoredAction>& archive() const { return archive_; }
  std::size_t epochs_completed() const { return epochs_; }
  CemConfig& config() { return config_; }

 private:
  void finish_interval();
  void finish_epoch(const SamplerContext& ctx);

  Index L_, K_;
  CemConfig config_;
  RealVector mu_, u_;
  std::vector<SubsetDraw> pending_;
  std::vector<PpoSample> interval_;
  std::vector<ScoredAction> epoch_;
  std::vector<ScoredAction> archive_;
  std::size_t epochs_ = 0;
};

/// GTKR baseline: free per-arm logits, gumbel top-K draws, REINFORCE with a
/// batch-mean baseline. Only meant to run standalone.
struct GtkrConfig {
  double lr = 0.1;
  int perm_cap = 10;
};

class GtkrSampler final : public Sampler {
 public:
  GtkrSampler(Index L, const GtkrConfig& config = {});

  SamplerId id() const override { return SamplerId::gtkr; }
  std::vector<ActionVector> propose(const SamplerContext& ctx, std::size_t count, Rng& rng) override;
  void record(const SamplerContext& ctx, const ActionVector& a, double reward, double violation) override;
  /// One ascent step on everything recorded since the last call.
  void train(const SamplerContext& ctx, Rng& rng) override;

  const RealVector& logits() const { return theta_; }
  RealVector scores() const;

 private:
  Index L_;
  GtkrConfig config_;
  RealVector theta_;
  std::vector<SubsetDraw> draws_;
  std::vector<std::optional<double>> feedback_;
};

}  // namespace msb
