#include "msb/wolpertinger_sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace msb {

std::vector<int> kmeans_labels(const std::vector<RealVector>& points, int clusters, int iterations, Rng& rng) {
  const std::size_t n = points.size();
  std::vector<int> labels(n, 0);
  if (n == 0) return labels;
  const auto k = static_cast<std::size_t>(std::clamp<long>(clusters, 1, static_cast<long>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<RealVector> centres;
  for (std::size_t c = 0; c < k; ++c) centres.push_back(points[order[c]]);

  for (int it = 0; it < std::max(1, iterations); ++it) {
    bool changed = false;
    for (std::size_t p = 0; p < n; ++p) {
      int best = 0;
      double best_d = (points[p] - centres[0]).squaredNorm();
      for (std::size_t c = 1; c < k; ++c) {
        const double d = (points[p] - centres[c]).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = static_cast<int>(c);
        }
      }
      if (labels[p] != best) changed = true;
      labels[p] = best;
    }
    std::vector<RealVector> sums(k, RealVector::Zero(points.front().size()));
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t p = 0; p < n; ++p) {
      sums[static_cast<std::size_t>(labels[p])] += points[p];
      ++sizes[static_cast<std::size_t>(labels[p])];
    }
    for (std::size_t c = 0; c < k; ++c)
      if (sizes[c] > 0) centres[c] = sums[c] / static_cast<double>(sizes[c]);
    if (!changed && it > 0) break;
  }
  return labels;
}

BatchDraw sample_batch(const std::deque<ReplayEntry>& replay, const std::vector<int>& labels, std::size_t batch_size,
                       Rng& rng) {
  BatchDraw out;
  const std::size_t n = replay.size();
  if (n == 0 || batch_size == 0) return out;
  const std::size_t clustered_target = batch_size / 3;
  const std::size_t extreme_target = batch_size / 6;

  // Tier 1: proportional allocation over clusters, largest remainder.
  if (labels.size() == n && clustered_target > 0) {
    std::vector<std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < n; ++i) {
      const auto g = static_cast<std::size_t>(labels[i]);
      if (g >= groups.size()) groups.resize(g + 1);
      groups[g].push_back(i);
    }
    std::vector<std::size_t> alloc(groups.size(), 0);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t given = 0;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const double share = static_cast<double>(clustered_target) * static_cast<double>(groups[g].size()) /
                           static_cast<double>(n);
      alloc[g] = static_cast<std::size_t>(std::floor(share));
      given += alloc[g];
      remainders.emplace_back(share - std::floor(share), g);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; given < clustered_target && r < remainders.size(); ++r, ++given)
      ++alloc[remainders[r].second];
    for (std::size_t g = 0; g < groups.size(); ++g)
      for (std::size_t s = 0; s < alloc[g] && !groups[g].empty(); ++s) {
        out.indices.push_back(groups[g][uniform_index(rng, groups[g].size())]);
        ++out.clustered;
      }
  }

  // Tier 2: outliers in composite feedback and in violation rate.
  auto outliers = [&](auto value) {
    double mean = 0.0;
    for (const auto& e : replay) mean += value(e);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (const auto& e : replay) var += (value(e) - mean) * (value(e) - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    std::vector<std::size_t> idx;
    if (sd > 0.0)
      for (std::size_t i = 0; i < n; ++i)
        if (std::abs(value(replay[i]) - mean) > 2.0 * sd) idx.push_back(i);
    return idx;
  };
  const auto reward_out = outliers([](const ReplayEntry& e) { return e.composite; });
  const auto violation_out = outliers([](const ReplayEntry& e) { return e.violation; });
  const std::size_t reward_target = (extreme_target + 1) / 2;
  const std::size_t violation_target = extreme_target - reward_target;
  for (std::size_t s = 0; s < reward_target && !reward_out.empty(); ++s, ++out.extreme)
    out.indices.push_back(reward_out[uniform_index(rng, reward_out.size())]);
  for (std::size_t s = 0; s < violation_target && !violation_out.empty(); ++s, ++out.extreme)
    out.indices.push_back(violation_out[uniform_index(rng, violation_out.size())]);

  // Tier 3: uniform, absorbing any shortfall above.
  while (out.indices.size() < batch_size) {
    out.indices.push_back(uniform_index(rng, n));
    ++out.uniform;
  }
  return out;
}

WolpertingerSampler::WolpertingerSampler(Index L, const WolpertingerConfig& config) : L_(L), config_(config) {
  if (L < 2) throw InvalidInput("WolpertingerSampler: need at least two arms");
  Rng rng = make_rng(config.seed, 0x3011);
  const Index h = config.hidden;
  actor_ = Mlp<double>({L, h, h, L}, Activation::tanh, Activation::sigmoid, rng);
  critic_ = Mlp<double>({2 * L, h, h, 1}, Activation::tanh, Activation::identity, rng);
  target_actor_ = actor_;
  target_critic_ = critic_;
  counts_ = RealVector::Zero(L);
  state_ = RealVector::Constant(L, 1.0 / static_cast<double>(L));
}

void WolpertingerSampler::advance_to(std::size_t round) {
  const std::size_t len = std::max<std::size_t>(1, config_.length_epoch);
  const std::size_t epoch = round / len;
  if (epoch == epoch_) return;
  epoch_ = epoch;
  const double total = counts_.sum();
  const RealVector next = total > 0.0 ? RealVector(counts_ / total) : RealVector::Constant(L_, 1.0 / L_);
  for (std::size_t i = epoch_start_; i < replay_.size(); ++i) replay_[i].next_state = next;
  epoch_start_ = replay_.size();
  state_ = next;
}

RealVector WolpertingerSampler::proto_action() const { return actor_.forward(state_); }

std::vector<ActionVector> WolpertingerSampler::candidates(std::size_t round, Index K, Rng& rng) const {
  RealVector pa = proto_action();
  const double log_t = std::log(static_cast<double>(std::max<std::size_t>(round, 1)));
  if (config_.kappa != 0.0)
    pa.array() += config_.kappa * (log_t / (1.0 + counts_.array())).sqrt();
  const ActionVector base = binarize_top_k(pa, K);
  std::vector<ActionVector> out = {base};
  if (K == L_) return out;
  std::unordered_set<ActionVector, ActionHash> seen = {base};
  std::vector<Index> unselected;
  for (Index i = 0; i < L_; ++i)
    if (!base[i]) unselected.push_back(i);
  for (int s = 0; s < config_.n_swaps; ++s) {
    std::vector<Index> sel = base.selected();
    const std::size_t slot = uniform_index(rng, sel.size());
    sel[slot] = unselected[uniform_index(rng, unselected.size())];
    auto swapped = ActionVector::from_indices(L_, sel);
    if (seen.insert(swapped).second) out.push_back(std::move(swapped));
  }
  return out;
}

Eigen::MatrixXd WolpertingerSampler::critic_input(const std::vector<RealVector>& states,
                                                  const std::vector<ActionVector>& actions) const {
  Eigen::MatrixXd X(2 * L_, static_cast<Index>(actions.size()));
  for (std::size_t c = 0; c < actions.size(); ++c) {
    X.col(static_cast<Index>(c)).head(L_) = states[c];
    X.col(static_cast<Index>(c)).tail(L_) = actions[c].to_real();
  }
  return X;
}

RealVector WolpertingerSampler::critic_values(const std::vector<ActionVector>& actions) const {
  const std::vector<RealVector> states(actions.size(), state_);
  return critic_.forward(critic_input(states, actions)).row(0).transpose();
}

std::vector<ActionVector> WolpertingerSampler::propose(const SamplerContext& ctx, std::size_t count, Rng& rng) {
  advance_to(ctx.round);
  if (count == 0) return {};
  auto cand = candidates(ctx.round, ctx.K, rng);
  const RealVector q = critic_values(cand);
  std::vector<std::size_t> order(cand.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return q[static_cast<Index>(a)] > q[static_cast<Index>(b)];
  });
  std::vector<ActionVector> out;
  for (std::size_t i = 0; i < std::min(count, order.size()); ++i) out.push_back(cand[order[i]]);
  return out;
}

void WolpertingerSampler::record(const SamplerContext&, const ActionVector& a, double reward, double violation) {
  ReplayEntry e{state_, a, reward - lambda2_ * violation, violation, state_};
  if (replay_.size() >= config_.replay_capacity && !replay_.empty()) {
    replay_.pop_front();
    if (epoch_start_ > 0) --epoch_start_;
    if (!labels_.empty()) labels_.erase(labels_.begin());
  }
  replay_.push_back(std::move(e));
  for (Index i : a.selected()) counts_[i] += 1.0;
  c_sum_ += violation;
  ++c_count_;
}

double WolpertingerSampler::train_step(const std::vector<RealVector>& states, const std::vector<ActionVector>& actions,
                                       const std::vector<double>& targets) {
  if (actions.empty()) return 0.0;
  const auto B = static_cast<double>(actions.size());

  // Critic: one-step regression onto the composite feedback.
  Mlp<double>::Tape tape;
  const Eigen::MatrixXd X = critic_input(states, actions);
  const Eigen::MatrixXd q = critic_.forward(X, tape);
  Eigen::MatrixXd resid(1, q.cols());
  for (Index c = 0; c < q.cols(); ++c) resid(0, c) = q(0, c) - targets[static_cast<std::size_t>(c)];
  const double loss = resid.squaredNorm() / B;
  sgd_step(critic_, critic_.backward(tape, 2.0 * resid / B), config_.critic_lr);

  // Actor: ascend the critic through the proto-action.
  Eigen::MatrixXd S(L_, static_cast<Index>(states.size()));
  for (std::size_t c = 0; c < states.size(); ++c) S.col(static_cast<Index>(c)) = states[c];
  Mlp<double>::Tape actor_tape;
  const Eigen::MatrixXd pa = actor_.forward(S, actor_tape);
  Eigen::MatrixXd Xa(2 * L_, S.cols());
  Xa.topRows(L_) = S;
  Xa.bottomRows(L_) = pa;
  Mlp<double>::Tape critic_tape;
  critic_.forward(Xa, critic_tape);
  Eigen::MatrixXd dX;
  critic_.backward(critic_tape, Eigen::MatrixXd::Constant(1, S.cols(), -1.0 / B), &dX);
  sgd_step(actor_, actor_.backward(actor_tape, dX.bottomRows(L_)), config_.actor_lr);

  target_critic_.soft_update_from(critic_, config_.tau_soft);
  target_actor_.soft_update_from(actor_, config_.tau_soft);
  return loss;
}

void WolpertingerSampler::train(const SamplerContext& ctx, Rng& rng) {
  if (c_count_ > 0) {
    lambda2_ = rcpo_dual_step(lambda2_, c_sum_ / static_cast<double>(c_count_), config_.alpha_c, config_.lr_dual);
    c_sum_ = 0.0;
    c_count_ = 0;
  }
  if (replay_.empty()) return;
  std::vector<RealVector> points;
  points.reserve(replay_.size());
  for (const auto& e : replay_) points.push_back(e.action.to_real());
  labels_ = kmeans_labels(points, config_.clusters, config_.kmeans_iterations, rng);

  // Recent master recommendations join every batch as extra critic pairs.
  std::vector<RealVector> shared_states;
  std::vector<ActionVector> shared_actions;
  std::vector<double> shared_targets;
  if (ctx.buffers)
    for (const auto& r : ctx.buffers->recommended()) {
      if (r.action.size() != L_) continue;
      shared_states.push_back(state_);
      shared_actions.push_back(r.action);
      const double u = ctx.has_surrogate() ? ctx.surrogate(r.action) : r.reward;
      shared_targets.push_back(u - lambda2_ * r.violation);
    }

  for (int step = 0; step < config_.train_steps; ++step) {
    const auto draw = sample_batch(replay_, labels_, config_.batch_size, rng);
    std::vector<RealVector> states = shared_states;
    std::vector<ActionVector> actions = shared_actions;
    std::vector<double> targets = shared_targets;
    for (std::size_t i : draw.indices) {
      states.push_back(replay_[i].state);
      actions.push_back(replay_[i].action);
      targets.push_back(replay_[i].composite);
    }
    train_step(states, actions, targets);
  }
}

RealVector WolpertingerSampler::real_output(const SamplerContext&) const { return proto_action(); }

void WolpertingerSampler::demonstrate(const SamplerContext&, const ActionVector& a_star, int steps) {
  const RealVector target = a_star.to_real();
  for (int s = 0; s < steps; ++s) {
    Mlp<double>::Tape tape;
    const Eigen::MatrixXd p = actor_.forward(state_, tape);
    const Eigen::MatrixXd q = p.cwiseMax(1e-6).cwiseMin(1.0 - 1e-6);
    // d BCE / dp, averaged over arms.
    const Eigen::MatrixXd dp =
        ((q.array() - target.array()) / (q.array() * (1.0 - q.array()))).matrix() / static_cast<double>(L_);
    sgd_step(actor_, actor_.backward(tape, dp), config_.demo_lr);
  }
}

}  // namespace msb
