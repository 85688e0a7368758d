#pragma once

// Relation-inference slave. Arms are graph nodes; a hard pairwise gate
// (straight-through gumbel-softmax) decides which edges exist, soft attention
// weights the surviving ones, and a sigmoid head gives per-arm scores. Actions
// are drawn by gumbel top-K and trained with REINFORCE.
//
// The gumbel top-K subset estimator here is shared with the CEM sampler.

#include <optional>

#include "msb/sampler.hpp"

namespace msb {

struct SubsetDraw {
  ActionVector action;
  double logprob = 0.0;
  RealVector perturbed;  // log out + gumbel noise
  /// Orderings of the selected arms averaged in the probability estimate.
  std::vector<std::vector<Index>> orderings;
};

inline constexpr double kScoreClip = 1e-4;

/// min(K!, cap).
int default_perm_count(Index K, int cap = 10);

/// Probability that sequential sampling without replacement proportional to
/// p emits exactly this ordering.
double ordered_draw_probability(const RealVector& p, const std::vector<Index>& ordering);

/// log( K! * mean over orderings of ordered_draw_probability ), capped at 0.
/// With every ordering of the set supplied this is the exact log probability
/// of drawing the set.
double subset_log_probability(const RealVector& p, const std::vector<std::vector<Index>>& orderings);

/// d subset_log_probability / d p, with the orderings held fixed.
RealVector subset_log_probability_grad(const RealVector& p, const std::vector<std::vector<Index>>& orderings);

/// All K! orderings when m_perms >= K!, otherwise m_perms random ones.
std::vector<std::vector<Index>> draw_orderings(const std::vector<Index>& selected, int m_perms, Rng& rng);

/// Perturb log scores with gumbel noise, keep the top K. Scores are clipped to
/// [1e-4, 1 - 1e-4] first.
SubsetDraw gumbel_topk_sample(const RealVector& out, Index K, int m_perms, Rng& rng);

/// (1/n) sum_b (f_b - mean f) g_b: the centred score-function direction.
RealVector reinforce_direction(const std::vector<RealVector>& grads, const std::vector<double>& feedbacks);

/// Parameter blocks of the attention network, in a fixed order.
enum AttentionBlock : int { enc_w, enc_b, pair_w1, pair_b1, pair_w2, pair_b2, key_w, query_w, head_w1, head_b1, head_w2, head_b2 };
inline constexpr int kAttentionBlocks = 12;

struct AttentionParams {
  Index feature_dim = 0;
  Index hidden = 16;
  std::vector<Eigen::MatrixXd> blocks;  // kAttentionBlocks entries

  static AttentionParams init(Index feature_dim, Index hidden, Rng& rng);
  Index size() const;
  RealVector flatten() const;
  void assign(const RealVector& theta);
};

struct AttentionOptions {
  bool stochastic = true;         // gumbel noise on the gates; false uses logit argmax
  std::optional<bool> force_gate; // pin every gate open or closed
  double temperature = 1.0;       // straight-through softmax temperature
};

/// Per-pair gumbel noise, two entries per unordered pair (i < j) in row-major pair order.
Eigen::MatrixXd draw_gate_noise(Index L, Rng& rng);

struct AttentionTape {
  Eigen::MatrixXd F;       // L x d
  Eigen::MatrixXd h;       // H x L embeddings
  Eigen::MatrixXd keys;    // H x L
  Eigen::MatrixXd queries; // H x L
  std::vector<Eigen::Vector2d> soft_gate;  // per pair, softmax((logit + g) / T)
  Eigen::MatrixXd pair_hidden;             // H x pairs
  Eigen::MatrixXd pair_input;              // 2H x pairs
  Eigen::MatrixXd gate;    // L x L, symmetric 0/1, zero diagonal
  Eigen::MatrixXd weights; // L x L, row i = soft attention of i over j != i
  Eigen::MatrixXd x;       // H x L aggregated neighbours
  Eigen::MatrixXd head_hidden; // H x L
  RealVector out;
  double temperature = 1.0;
};

/// Forward pass; `noise` may be empty when options.stochastic is false.
RealVector forward_attention(const AttentionParams& params, const Eigen::MatrixXd& F, const Eigen::MatrixXd& noise,
                             const AttentionOptions& options, AttentionTape* tape = nullptr);

/// Gradient of dout . out with respect to every parameter, flattened. With
/// straight_through the gate path carries the relaxed-softmax surrogate;
/// without it the result is the exact derivative of the (piecewise constant
/// in the gates) forward pass.
RealVector backward_attention(const AttentionParams& params, const AttentionTape& tape, const RealVector& dout,
                              bool straight_through = true);

struct G2aConfig {
  Index hidden = 16;
  double lr = 0.05;
  double demo_lr = 0.5;
  double temperature = 1.0;
  double anneal = 0.995;
  double temperature_floor = 0.1;
  int perm_cap = 10;
  std::uint64_t seed = 1;
};

class G2aSampler final : public Sampler {
 public:
  /// Without features every arm gets a one-hot identity feature.
  G2aSampler(Index L, const FeatureMatrix* features, const G2aConfig& config = {});

  SamplerId id() const override { return SamplerId::g2anet; }
  std::vector<ActionVector> propose(const SamplerContext& ctx, std::size_t count, Rng& rng) override;
  void record(const SamplerContext& ctx, const ActionVector& a, double reward, double violation) override;
  void train(const SamplerContext& ctx, Rng& rng) override;

  bool demonstrable() const override { return true; }
  RealVector real_output(const SamplerContext& ctx) const override;
  void demonstrate(const SamplerContext& ctx, const ActionVector& a_star, int steps) override;

  const AttentionParams& params() const { return params_; }
  double temperature() const { return temperature_; }
  std::size_t pending_feedback() const;

 private:
  struct RoundBatch {
    Eigen::MatrixXd noise;
    std::vector<SubsetDraw> draws;
    std::vector<std::optional<double>> feedback;
  };

  Index L_;
  G2aConfig config_;
  Eigen::MatrixXd F_;
  AttentionParams params_;
  double temperature_;
  std::vector<RoundBatch> rounds_;
};

}  // namespace msb
