#pragma once

// The two population slaves: uniform random subsets with a best-ever memory,
// and teaching-learning perturbations of the elites the other slaves have
// already submitted this round.

#include <optional>

#include "msb/sampler.hpp"

namespace msb {

/// Uniform over all C(L, K) subsets (partial Fisher-Yates).
ActionVector random_sample(Index L, Index K, Rng& rng);

class BestInHistory {
 public:
  /// Keeps `sample` if `score` beats the stored score. Returns true if kept.
  bool insert(const ActionVector& sample, double score);
  /// Replaces the stored score, e.g. after re-evaluating under a newer surrogate.
  void rescore(double score);

  const std::optional<ActionVector>& best() const { return best_; }
  double score() const { return score_; }

 private:
  std::optional<ActionVector> best_;
  double score_ = 0.0;
};

class RandomSampler final : public Sampler {
 public:
  /// keep_best = false gives the plain uniform sampler.
  explicit RandomSampler(bool keep_best = true) : keep_best_(keep_best) {}

  SamplerId id() const override { return SamplerId::random; }
  /// The remembered best (re-scored against the surrogate when there is one)
  /// followed by fresh uniform draws.
  std::vector<ActionVector> propose(const SamplerContext& ctx, std::size_t count, Rng& rng) override;
  void record(const SamplerContext& ctx, const ActionVector& a, double reward, double violation) override;

  const BestInHistory& history() const { return history_; }

 private:
  bool keep_best_;
  BestInHistory history_;
};

/// binarize_top_k(A + r (T - A), K).
ActionVector tlbo_teacher_step(const ActionVector& A, const ActionVector& T, double r);
ActionVector tlbo_teacher_step(const ActionVector& A, const ActionVector& T, Rng& rng);

/// binarize_top_k(A + r (B - A)) when A scores below B, else binarize_top_k(A + r (A - B)).
ActionVector tlbo_student_step(const ActionVector& A, const ActionVector& B, double scoreA, double scoreB, double r);
ActionVector tlbo_student_step(const ActionVector& A, const ActionVector& B, double scoreA, double scoreB, Rng& rng);

class TlboSampler final : public Sampler {
 public:
  SamplerId id() const override { return SamplerId::tlbo; }
  /// Works on ctx.pool; returns nothing when the pool is empty. The first
  /// ceil(count/2) outputs are teacher steps, the rest student steps.
  std::vector<ActionVector> propose(const SamplerContext& ctx, std::size_t count, Rng& rng) override;
};

}  // namespace msb
