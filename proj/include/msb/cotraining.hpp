#pragma once

// Policy co-training: the global-best demonstration, the cross-entropy loss
// that pulls a stuck sampler towards it, and the two buffers every sampler
// can read (best historical elites, latest recommended actions).

#include <deque>
#include <optional>

#include "msb/sampler.hpp"

namespace msb {

struct RecommendedEntry {
  ActionVector action;
  double reward = 0.0;     // environment feedback r_t
  double violation = 0.0;  // c_t
  double score = 0.0;      // master Score when chosen
  std::size_t round = 0;
};

class SharedBuffers {
 public:
  explicit SharedBuffers(std::size_t capacity = 20) : capacity_(capacity) {}

  struct Snapshot {
    std::vector<EliteSample> elites;
    std::vector<RecommendedEntry> recommended;
  };

  /// Keeps the `capacity` best distinct actions by `score`, sorted descending.
  void push_elite(const EliteSample& sample, double score);
  /// FIFO of the latest `capacity` master recommendations.
  void push_recommended(const RecommendedEntry& entry);

  const std::vector<EliteSample>& elites() const { return elites_; }
  const std::vector<double>& elite_scores() const { return elite_scores_; }
  const std::deque<RecommendedEntry>& recommended() const { return recommended_; }
  std::size_t capacity() const { return capacity_; }

  Snapshot snapshot() const;

 private:
  std::size_t capacity_;
  std::vector<EliteSample> elites_;
  std::vector<double> elite_scores_;
  std::deque<RecommendedEntry> recommended_;
};

/// Mean binary cross-entropy of RV against A*, RV clipped to [1e-6, 1 - 1e-6].
double demonstration_loss(const RealVector& rv, const ActionVector& a_star);

/// Best composite score over a trailing window of rounds.
class DemonstrationStore {
 public:
  explicit DemonstrationStore(std::size_t window = 100) : window_(window) {}

  void push(std::size_t round, const ActionVector& action, double score);
  std::optional<ActionVector> best() const;
  double best_score() const;
  std::size_t window() const { return window_; }

 private:
  struct Entry {
    std::size_t round;
    ActionVector action;
    double score;
  };
  std::size_t window_;
  std::deque<Entry> entries_;
};

/// Counts rounds since a sampler's best submitted surrogate last improved.
class StuckTracker {
 public:
  explicit StuckTracker(std::size_t patience = 60) : patience_(patience) {}

  /// Call once per round the sampler participates; `best_this_round` is its
  /// best submitted surrogate score, if it submitted anything.
  void observe(std::optional<double> best_this_round);
  bool stuck() const { return since_improvement_ >= patience_; }
  void reset() { since_improvement_ = 0; }
  std::size_t rounds_since_improvement() const { return since_improvement_; }
  std::size_t patience() const { return patience_; }

 private:
  std::size_t patience_;
  std::optional<double> best_;
  std::size_t since_improvement_ = 0;
};

/// When the tracker reports stuck and a demonstration exists, runs `steps`
/// demonstration steps on the sampler and resets the tracker.
bool trigger_and_apply(Sampler& sampler, StuckTracker& tracker, const DemonstrationStore& store, int steps,
                       const SamplerContext& ctx);

}  // namespace msb
