#include "msb/cotraining.hpp"

#include <algorithm>

#include "msb/nn.hpp"

namespace msb {

void SharedBuffers::push_elite(const EliteSample& sample, double score) {
  for (std::size_t i = 0; i < elites_.size(); ++i) {
    if (elites_[i].action != sample.action) continue;
    if (score <= elite_scores_[i]) return;
    elites_.erase(elites_.begin() + static_cast<std::ptrdiff_t>(i));
    elite_scores_.erase(elite_scores_.begin() + static_cast<std::ptrdiff_t>(i));
    break;
  }
  // Stable: an equal score goes after existing entries.
  const auto pos = std::upper_bound(elite_scores_.begin(), elite_scores_.end(), score, std::greater<>());
  const auto offset = pos - elite_scores_.begin();
  if (static_cast<std::size_t>(offset) >= capacity_) return;
  elite_scores_.insert(pos, score);
  elites_.insert(elites_.begin() + offset, sample);
  if (elites_.size() > capacity_) {
    elites_.pop_back();
    elite_scores_.pop_back();
  }
}

void SharedBuffers::push_recommended(const RecommendedEntry& entry) {
  if (capacity_ == 0) return;
  recommended_.push_back(entry);
  while (recommended_.size() > capacity_) recommended_.pop_front();
}

SharedBuffers::Snapshot SharedBuffers::snapshot() const {
  return Snapshot{elites_, std::vector<RecommendedEntry>(recommended_.begin(), recommended_.end())};
}

double demonstration_loss(const RealVector& rv, const ActionVector& a_star) {
  return binary_cross_entropy(rv, a_star.to_real(), 1e-6);
}

void DemonstrationStore::push(std::size_t round, const ActionVector& action, double score) {
  entries_.push_back({round, action, score});
  while (!entries_.empty() && entries_.front().round + window_ <= round) entries_.pop_front();
}

std::optional<ActionVector> DemonstrationStore::best() const {
  if (entries_.empty()) return std::nullopt;
  const auto it = std::max_element(entries_.begin(), entries_.end(),
                                   [](const Entry& a, const Entry& b) { return a.score < b.score; });
  return it->action;
}

double DemonstrationStore::best_score() const {
  if (entries_.empty()) throw InvalidInput("DemonstrationStore: empty");
  return std::max_element(entries_.begin(), entries_.end(),
                          [](const Entry& a, const Entry& b) { return a.score < b.score; })
      ->score;
}

void StuckTracker::observe(std::optional<double> best_this_round) {
  if (best_this_round && (!best_ || *best_this_round > *best_)) {
    best_ = best_this_round;
    since_improvement_ = 0;
    return;
  }
  ++since_improvement_;
}

bool trigger_and_apply(Sampler& sampler, StuckTracker& tracker, const DemonstrationStore& store, int steps,
                       const SamplerContext& ctx) {
  if (!sampler.demonstrable() || !tracker.stuck()) return false;
  const auto a_star = store.best();
  if (!a_star) return false;
  sampler.demonstrate(ctx, *a_star, steps);
  tracker.reset();
  return true;
}

}  // namespace msb
