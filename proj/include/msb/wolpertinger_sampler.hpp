#pragma once

// Primal-dual Wolpertinger slave. A deterministic actor maps the arm-usage
// state to a proto-action, a count bonus and random swaps turn it into
// candidate actions, and a critic ranks them. The reward-constraint balance is
// a Lagrange multiplier updated by dual ascent.

#include <deque>

#include "msb/cotraining.hpp"
#include "msb/nn.hpp"
#include "msb/sampler.hpp"

namespace msb {

struct ReplayEntry {
  RealVector state;
  ActionVector action;
  double composite = 0.0;  // surrogate - lambda2 * violation at insertion
  double violation = 0.0;
  RealVector next_state;
};

struct BatchDraw {
  std::vector<std::size_t> indices;
  std::size_t clustered = 0;
  std::size_t extreme = 0;
  std::size_t uniform = 0;
};

/// Lloyd's algorithm on action bit-vectors; returns a cluster label per action.
std::vector<int> kmeans_labels(const std::vector<RealVector>& points, int clusters, int iterations, Rng& rng);

/// Three-tier prioritized draw with replacement: batch/3 proportionally across
/// clusters, batch/6 from reward and violation outliers (beyond two standard
/// deviations), the rest uniform. Shortfalls move to the uniform tier.
BatchDraw sample_batch(const std::deque<ReplayEntry>& replay, const std::vector<int>& labels,
                       std::size_t batch_size, Rng& rng);

/// lambda2 <- max(0, lambda2 + lr * (c_mean - alpha)).
inline double rcpo_dual_step(double lambda2, double c_mean, double alpha, double lr) {
  return std::max(0.0, lambda2 + lr * (c_mean - alpha));
}

struct WolpertingerConfig {
  Index hidden = 64;
  double actor_lr = 1e-3;
  double critic_lr = 1e-3;
  /// Step size for demonstration (cross-entropy) steps on the actor.
  double demo_lr = 0.5;
  double tau_soft = 0.01;
  double kappa = 0.1;
  int n_swaps = 10;
  double alpha_c = 0.02;
  double lr_dual = 0.01;
  std::size_t replay_capacity = 10000;
  std::size_t batch_size = 64;
  int train_steps = 10;
  std::size_t length_epoch = 20;
  int clusters = 20;
  int kmeans_iterations = 10;
  std::uint64_t seed = 1;
};

class WolpertingerSampler final : public Sampler {
 public:
  WolpertingerSampler(Index L, const WolpertingerConfig& config = {});

  SamplerId id() const override { return SamplerId::wolpertinger; }
  std::vector<ActionVector> propose(const SamplerContext& ctx, std::size_t count, Rng& rng) override;
  void record(const SamplerContext& ctx, const ActionVector& a, double reward, double violation) override;
  void train(const SamplerContext& ctx, Rng& rng) override;

  bool demonstrable() const override { return true; }
  RealVector real_output(const SamplerContext& ctx) const override;
  void demonstrate(const SamplerContext& ctx, const ActionVector& a_star, int steps) override;

  /// Candidate set before ranking: the binarized bonus-shifted proto-action
  /// followed by up to n_swaps distinct one-in/one-out swaps.
  std::vector<ActionVector> candidates(std::size_t round, Index K, Rng& rng) const;
  RealVector proto_action() const;
  RealVector critic_values(const std::vector<ActionVector>& actions) const;

  /// One actor-critic update on explicit (state, action, target) triples; returns the critic loss before the step.
  double train_step(const std::vector<RealVector>& states, const std::vector<ActionVector>& actions,
                    const std::vector<double>& targets);

  double lambda2() const { return lambda2_; }
  const RealVector& state() const { return state_; }
  const std::deque<ReplayEntry>& replay() const { return replay_; }
  const Mlp<double>& actor() const { return actor_; }
  const Mlp<double>& critic() const { return critic_; }
  const Mlp<double>& target_actor() const { return target_actor_; }
  const Mlp<double>& target_critic() const { return target_critic_; }
  WolpertingerConfig& config() { return config_; }

  /// Recomputes the state at epoch boundaries; called from propose.
  void advance_to(std::size_t round);

 private:
  Eigen::MatrixXd critic_input(const std::vector<RealVector>& states, const std::vector<ActionVector>& actions) const;

  Index L_;
  WolpertingerConfig config_;
  Mlp<double> actor_, critic_, target_actor_, target_critic_;
  double lambda2_ = 0.0;
  RealVector counts_;
  RealVector state_;
  std::size_t epoch_ = 0;
  std::size_t epoch_start_ = 0;  // first replay index of the current epoch
  std::deque<ReplayEntry> replay_;
  std::vector<int> labels_;
  double c_sum_ = 0.0;
  std::size_t c_count_ = 0;
};

}  // namespace msb
