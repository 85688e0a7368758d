#pragma once

// The master loop. Each round the slaves propose elites under per-sampler
// quotas, the master scores them with its optimistic estimator minus the
// violation penalty, plays the best one, and feeds the real reward back into
// the estimator.

#include <array>
#include <memory>
#include <optional>
#include <unordered_map>

#include "msb/cotraining.hpp"
#include "msb/env.hpp"
#include "msb/neuralucb.hpp"
#include "msb/sampler.hpp"

namespace msb {

struct RoundRecord {
  std::size_t t = 0;
  ActionVector action;
  double reward = 0.0;
  double violation = 0.0;
  SamplerId chosen = SamplerId::random;
  double score = 0.0;
};

/// Softmax of the per-sampler scores, rounded to integers summing to n_es by
/// largest remainder (ties to the lower index).
std::vector<int> assign_quotas(const std::vector<double>& scores, int n_es);
std::vector<double> quota_shares(const std::vector<double>& scores);

/// Index of the highest Score = surrogate - lambda * violation; lowest index on ties.
std::size_t select_best(const std::vector<EliteSample>& elites, double lambda);

struct MasterConfig {
  Index L = 30;
  Index K = 5;
  double lambda = 5.0;
  int f_in = 20;
  int n_es = 10;
  /// Rounds at the start where only the random sampler proposes; defaults to 2L.
  std::optional<std::size_t> exploration_rounds;
  double score_decay = 0.99;
  std::array<bool, kSlaveCount> enabled{true, true, true, true, true, true};
  /// A slave proposes on rounds t with t % period == 0.
  std::array<int, kSlaveCount> period{1, 1, 1, 1, 1, 1};
  std::size_t buffer_capacity = 20;  // length_epoch
  std::size_t demo_window = 100;
  /// Rounds without improvement before a demonstration; defaults to 3 f_in.
  std::optional<std::size_t> stuck_patience;
  int demo_steps = 20;
  bool cotraining = true;
  std::uint64_t seed = 1;
};

class Master {
 public:
  /// Slaves are indexed by SamplerId; a null entry, or a disabled one, never proposes.
  Master(const MasterConfig& config, const UcbConfig& ucb, ConstraintSet constraints, const FeatureMatrix* features,
         std::array<std::unique_ptr<Sampler>, kSlaveCount> slaves);

  /// Plays round t = rounds_played() + 1. Throws EndOfLog when the environment is exhausted.
  RoundRecord run_round(Environment& env, Rng& env_rng);

  /// U at A / ||A||, frozen for the current round and memoized.
  double surrogate(const ActionVector& a);
  RealVector surrogate_raw(const Eigen::MatrixXd& X) const { return ucb_.ucb_batch(X); }

  /// The context slaves see in the current round (pool left empty).
  SamplerContext context();

  std::vector<int> current_quotas() const;
  const std::array<std::optional<double>, kSlaveCount>& score_history() const { return score_history_; }
  std::size_t rounds_played() const { return round_; }
  const NeuralUcb& ucb() const { return ucb_; }
  NeuralUcb& ucb() { return ucb_; }
  const ConstraintSet& constraints() const { return constraints_; }
  const SharedBuffers& buffers() const { return buffers_; }
  const DemonstrationStore& demonstrations() const { return demos_; }
  Sampler* slave(SamplerId id) const { return slaves_[static_cast<std::size_t>(id)].get(); }
  std::size_t demonstrations_applied(SamplerId id) const { return demo_count_[static_cast<std::size_t>(id)]; }
  /// Provenance of the elite pool of the last round.
  const std::vector<EliteSample>& last_pool() const { return last_pool_; }
  const MasterConfig& config() const { return config_; }
  std::size_t exploration_rounds() const;

 private:
  bool participates(std::size_t slot, std::size_t t) const;
  std::vector<Index> play_order(const ActionVector& a) const;

  MasterConfig config_;
  NeuralUcb ucb_;
  ConstraintSet constraints_;
  const FeatureMatrix* features_;
  std::array<std::unique_ptr<Sampler>, kSlaveCount> slaves_;
  std::array<Rng, kSlaveCount> rngs_;
  std::array<std::optional<double>, kSlaveCount> score_history_;
  std::array<StuckTracker, kSlaveCount> trackers_;
  std::array<std::size_t, kSlaveCount> demo_count_{};
  SharedBuffers buffers_;
  DemonstrationStore demos_;
  std::unordered_map<ActionVector, double, ActionHash> memo_;
  std::vector<EliteSample> last_pool_;
  std::size_t round_ = 0;
};

/// The six slaves with their default settings, seeded from `seed`.
std::array<std::unique_ptr<Sampler>, kSlaveCount> make_default_slaves(Index L, Index K,
                                                                        const FeatureMatrix* features,
                                                                        std::uint64_t seed);

}  // namespace msb
