#include "msb/g2anet_sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace msb {

namespace {

double log_sum_exp(const std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

double log_ordered(const RealVector& p, const std::vector<Index>& ordering, double Z) {
  double lp = 0.0;
  double remaining = Z;
  for (Index i : ordering) {
    lp += std::log(p[i]) - std::log(remaining);
    remaining -= p[i];
  }
  return lp;
}

Eigen::MatrixXd glorot(Index rows, Index cols, Rng& rng, double gain = 1.0) {
  const double limit = gain * std::sqrt(6.0 / static_cast<double>(rows + cols));
  Eigen::MatrixXd W(rows, cols);
  for (Index i = 0; i < W.size(); ++i) W.data()[i] = (2.0 * uniform01(rng) - 1.0) * limit;
  return W;
}

Eigen::MatrixXd tanh_of(const Eigen::MatrixXd& z) { return z.array().tanh().matrix(); }

}  // namespace

int default_perm_count(Index K, int cap) {
  long f = 1;
  for (Index k = 2; k <= K; ++k) {
    f *= k;
    if (f >= cap) return cap;
  }
  return static_cast<int>(std::min<long>(f, cap));
}

double ordered_draw_probability(const RealVector& p, const std::vector<Index>& ordering) {
  return std::exp(log_ordered(p, ordering, p.sum()));
}

double subset_log_probability(const RealVector& p, const std::vector<std::vector<Index>>& orderings) {
  if (orderings.empty()) throw InvalidInput("subset_log_probability: no orderings");
  const double Z = p.sum();
  std::vector<double> logs;
  logs.reserve(orderings.size());
  for (const auto& o : orderings) logs.push_back(log_ordered(p, o, Z));
  const auto K = static_cast<double>(orderings.front().size());
  const double est = std::lgamma(K + 1.0) + log_sum_exp(logs) - std::log(static_cast<double>(orderings.size()));
  return std::min(est, 0.0);
}

RealVector subset_log_probability_grad(const RealVector& p, const std::vector<std::vector<Index>>& orderings) {
  RealVector g = RealVector::Zero(p.size());
  const double Z = p.sum();
  std::vector<double> logs;
  for (const auto& o : orderings) logs.push_back(log_ordered(p, o, Z));
  const double lse = log_sum_exp(logs);
  const auto K = static_cast<double>(orderings.front().size());
  if (std::lgamma(K + 1.0) + lse - std::log(static_cast<double>(orderings.size())) > 0.0) return g;  // capped
  for (std::size_t r = 0; r < orderings.size(); ++r) {
    const double w = std::exp(logs[r] - lse);
    if (w == 0.0) continue;
    double remaining = Z;
    double inv_sum = 0.0;  // sum of 1/D_k over steps an arm is still unpicked
    RealVector gr = RealVector::Zero(p.size());
    // An arm picked at step k sees 1/D_1 .. 1/D_k in the denominators.
    for (Index i : orderings[r]) {
      inv_sum += 1.0 / remaining;
      gr[i] += 1.0 / p[i] - inv_sum;
      remaining -= p[i];
    }
    // Arms never picked appear in every denominator.
    std::vector<std::uint8_t> picked(static_cast<std::size_t>(p.size()), 0);
    for (Index i : orderings[r]) picked[static_cast<std::size_t>(i)] = 1;
    for (Index i = 0; i < p.size(); ++i)
      if (!picked[static_cast<std::size_t>(i)]) gr[i] -= inv_sum;
    g += w * gr;
  }
  return g;
}

std::vector<std::vector<Index>> draw_orderings(const std::vector<Index>& selected, int m_perms, Rng& rng) {
  std::vector<std::vector<Index>> out;
  const auto K = static_cast<Index>(selected.size());
  long total = 1;
  for (Index k = 2; k <= K && total <= m_perms; ++k) total *= k;
  if (total <= m_perms) {
    std::vector<Index> perm = selected;
    std::sort(perm.begin(), perm.end());
    do out.push_back(perm);
    while (std::next_permutation(perm.begin(), perm.end()));
    return out;
  }
  for (int m = 0; m < m_perms; ++m) {
    std::vector<Index> perm = selected;
    std::shuffle(perm.begin(), perm.end(), rng);
    out.push_back(std::move(perm));
  }
  return out;
}

SubsetDraw gumbel_topk_sample(const RealVector& out, Index K, int m_perms, Rng& rng) {
  if (K < 1 || K > out.size()) throw InvalidInput("gumbel_topk_sample: K out of range");
  if (m_perms < 1) throw InvalidInput("gumbel_topk_sample: need at least one permutation");
  const RealVector p = clip(out, kScoreClip, 1.0 - kScoreClip);
  SubsetDraw d;
  d.perturbed.resize(p.size());
  for (Index i = 0; i < p.size(); ++i) d.perturbed[i] = std::log(p[i]) + gumbel(rng);
  d.action = binarize_top_k(d.perturbed, K);
  d.orderings = draw_orderings(d.action.selected(), m_perms, rng);
  d.logprob = subset_log_probability(p, d.orderings);
  return d;
}

RealVector reinforce_direction(const std::vector<RealVector>& grads, const std::vector<double>& feedbacks) {
  if (grads.size() != feedbacks.size()) throw InvalidInput("reinforce_direction: size mismatch");
  if (grads.empty()) return {};
  const double baseline = std::accumulate(feedbacks.begin(), feedbacks.end(), 0.0) / static_cast<double>(feedbacks.size());
  RealVector dir = RealVector::Zero(grads.front().size());
  for (std::size_t b = 0; b < grads.size(); ++b) dir += (feedbacks[b] - baseline) * grads[b];
  return dir / static_cast<double>(grads.size());
}

AttentionParams AttentionParams::init(Index feature_dim, Index hidden, Rng& rng) {
  AttentionParams p;
  p.feature_dim = feature_dim;
  p.hidden = hidden;
  const Index H = hidden;
  p.blocks.resize(kAttentionBlocks);
  p.blocks[enc_w] = glorot(H, feature_dim, rng);
  p.blocks[enc_b] = Eigen::MatrixXd::Zero(H, 1);
  p.blocks[pair_w1] = glorot(H, 2 * H, rng);
  p.blocks[pair_b1] = Eigen::MatrixXd::Zero(H, 1);
  p.blocks[pair_w2] = glorot(2, H, rng);
  p.blocks[pair_b2] = Eigen::MatrixXd::Zero(2, 1);
  p.blocks[key_w] = glorot(H, H, rng);
  p.blocks[query_w] = glorot(H, H, rng);
  p.blocks[head_w1] = glorot(H, 2 * H, rng);
  p.blocks[head_b1] = Eigen::MatrixXd::Zero(H, 1);
  p.blocks[head_w2] = glorot(1, H, rng, 0.5);
  p.blocks[head_b2] = Eigen::MatrixXd::Zero(1, 1);
  return p;
}

Index AttentionParams::size() const {
  Index n = 0;
  for (const auto& b : blocks) n += b.size();
  return n;
}

RealVector AttentionParams::flatten() const {
  RealVector theta(size());
  Index off = 0;
  for (const auto& b : blocks) {
    theta.segment(off, b.size()) = Eigen::Map<const RealVector>(b.data(), b.size());
    off += b.size();
  }
  return theta;
}

void AttentionParams::assign(const RealVector& theta) {
  if (theta.size() != size()) throw InvalidInput("AttentionParams::assign: wrong parameter count");
  Index off = 0;
  for (auto& b : blocks) {
    Eigen::Map<RealVector>(b.data(), b.size()) = theta.segment(off, b.size());
    off += b.size();
  }
}

Eigen::MatrixXd draw_gate_noise(Index L, Rng& rng) {
  const Index pairs = L * (L - 1) / 2;
  Eigen::MatrixXd g(2, pairs);
  for (Index i = 0; i < g.size(); ++i) g.data()[i] = gumbel(rng);
  return g;
}

RealVector forward_attention(const AttentionParams& P, const Eigen::MatrixXd& F, const Eigen::MatrixXd& noise,
                             const AttentionOptions& opt, AttentionTape* tape) {
  const Index L = F.rows();
  const Index H = P.hidden;
  if (L < 2) throw InvalidInput("forward_attention: need at least two arms");
  if (F.cols() != P.feature_dim) throw InvalidInput("forward_attention: feature dimension mismatch");
  const Index pairs = L * (L - 1) / 2;
  if (opt.stochastic && !opt.force_gate && (noise.rows() != 2 || noise.cols() != pairs))
    throw InvalidInput("forward_attention: gate noise has the wrong shape");

  AttentionTape local;
  AttentionTape& t = tape ? *tape : local;
  t.F = F;
  t.temperature = opt.temperature;
  const auto& B = P.blocks;
  t.h = tanh_of((B[enc_w] * F.transpose()).colwise() + B[enc_b].col(0));
  t.keys = B[key_w] * t.h;
  t.queries = B[query_w] * t.h;

  t.gate = Eigen::MatrixXd::Zero(L, L);
  t.soft_gate.assign(static_cast<std::size_t>(pairs), Eigen::Vector2d::Zero());
  if (opt.force_gate) {
    if (*opt.force_gate) t.gate.setOnes();
    t.gate.diagonal().setZero();
    t.pair_input.resize(0, 0);
    t.pair_hidden.resize(0, 0);
  } else {
    t.pair_input.resize(2 * H, pairs);
    Index c = 0;
    for (Index i = 0; i < L; ++i)
      for (Index j = i + 1; j < L; ++j, ++c) {
        t.pair_input.col(c).head(H) = t.h.col(i) + t.h.col(j);
        t.pair_input.col(c).tail(H) = t.h.col(i).cwiseProduct(t.h.col(j));
      }
    t.pair_hidden = tanh_of((B[pair_w1] * t.pair_input).colwise() + B[pair_b1].col(0));
    const Eigen::MatrixXd logits = (B[pair_w2] * t.pair_hidden).colwise() + B[pair_b2].col(0);
    c = 0;
    for (Index i = 0; i < L; ++i)
      for (Index j = i + 1; j < L; ++j, ++c) {
        Eigen::Vector2d z = logits.col(c);
        if (opt.stochastic) z += noise.col(c);
        z /= opt.temperature;
        const double m = z.maxCoeff();
        Eigen::Vector2d y = (z.array() - m).exp();
        y /= y.sum();
        t.soft_gate[static_cast<std::size_t>(c)] = y;
        const double open = z[1] > z[0] ? 1.0 : 0.0;
        t.gate(i, j) = open;
        t.gate(j, i) = open;
      }
  }

  const Eigen::MatrixXd E = t.queries.transpose() * t.keys;  // E(i, j) = q_i . k_j
  t.weights = Eigen::MatrixXd::Zero(L, L);
  for (Index i = 0; i < L; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < L; ++j)
      if (j != i) m = std::max(m, t.gate(i, j) * E(i, j));
    double s = 0.0;
    for (Index j = 0; j < L; ++j)
      if (j != i) {
        t.weights(i, j) = std::exp(t.gate(i, j) * E(i, j) - m);
        s += t.weights(i, j);
      }
    t.weights.row(i) /= s;
  }
  t.x = t.h * t.weights.transpose();

  Eigen::MatrixXd head_in(2 * H, L);
  head_in.topRows(H) = t.h;
  head_in.bottomRows(H) = t.x;
  t.head_hidden = tanh_of((B[head_w1] * head_in).colwise() + B[head_b1].col(0));
  const Eigen::MatrixXd logit = (B[head_w2] * t.head_hidden).array() + B[head_b2](0, 0);
  t.out = (1.0 / (1.0 + (-logit.array()).exp())).matrix().transpose();
  return t.out;
}

RealVector backward_attention(const AttentionParams& P, const AttentionTape& t, const RealVector& dout,
                              bool straight_through) {
  const Index L = t.F.rows();
  const Index H = P.hidden;
  const auto& B = P.blocks;
  std::vector<Eigen::MatrixXd> g(kAttentionBlocks);
  for (int k = 0; k < kAttentionBlocks; ++k) g[static_cast<std::size_t>(k)] = Eigen::MatrixXd::Zero(B[k].rows(), B[k].cols());

  // Head.
  const Eigen::RowVectorXd dlogit = (dout.array() * t.out.array() * (1.0 - t.out.array())).matrix().transpose();
  g[head_w2] = dlogit * t.head_hidden.transpose();
  g[head_b2](0, 0) = dlogit.sum();
  const Eigen::MatrixXd dhh =
      (B[head_w2].transpose() * dlogit).cwiseProduct((1.0 - t.head_hidden.array().square()).matrix());
  Eigen::MatrixXd head_in(2 * H, L);
  head_in.topRows(H) = t.h;
  head_in.bottomRows(H) = t.x;
  g[head_w1] = dhh * head_in.transpose();
  g[head_b1] = dhh.rowwise().sum();
  const Eigen::MatrixXd dhead_in = B[head_w1].transpose() * dhh;
  Eigen::MatrixXd dh = dhead_in.topRows(H);
  const Eigen::MatrixXd dx = dhead_in.bottomRows(H);

  // Soft attention: x = h W^T.
  dh += dx * t.weights;
  const Eigen::MatrixXd dW = dx.transpose() * t.h;
  Eigen::MatrixXd de = Eigen::MatrixXd::Zero(L, L);
  for (Index i = 0; i < L; ++i) {
    const double dot = t.weights.row(i).dot(dW.row(i));
    for (Index j = 0; j < L; ++j)
      if (j != i) de(i, j) = t.weights(i, j) * (dW(i, j) - dot);
  }
  const Eigen::MatrixXd E = t.queries.transpose() * t.keys;
  const Eigen::MatrixXd dE = de.cwiseProduct(t.gate);
  const Eigen::MatrixXd dQ = t.keys * dE.transpose();
  const Eigen::MatrixXd dK = t.queries * dE;
  g[query_w] = dQ * t.h.transpose();
  g[key_w] = dK * t.h.transpose();
  dh += B[query_w].transpose() * dQ + B[key_w].transpose() * dK;

  // Gates, straight through the relaxed softmax.
  if (straight_through && t.pair_hidden.size() > 0) {
    const Index pairs = t.pair_hidden.cols();
    Eigen::MatrixXd dlogits(2, pairs);
    Index c = 0;
    for (Index i = 0; i < L; ++i)
      for (Index j = i + 1; j < L; ++j, ++c) {
        const double dgate = de(i, j) * E(i, j) + de(j, i) * E(j, i);
        const auto& y = t.soft_gate[static_cast<std::size_t>(c)];
        const double s = y[0] * y[1] / t.temperature * dgate;
        dlogits(0, c) = -s;
        dlogits(1, c) = s;
      }
    g[pair_w2] = dlogits * t.pair_hidden.transpose();
    g[pair_b2] = dlogits.rowwise().sum();
    const Eigen::MatrixXd dph =
        (B[pair_w2].transpose() * dlogits).cwiseProduct((1.0 - t.pair_hidden.array().square()).matrix());
    g[pair_w1] = dph * t.pair_input.transpose();
    g[pair_b1] = dph.rowwise().sum();
    const Eigen::MatrixXd dpin = B[pair_w1].transpose() * dph;
    c = 0;
    for (Index i = 0; i < L; ++i)
      for (Index j = i + 1; j < L; ++j, ++c) {
        const auto dsum = dpin.col(c).head(H);
        const auto dprod = dpin.col(c).tail(H);
        dh.col(i) += dsum + dprod.cwiseProduct(t.h.col(j));
        dh.col(j) += dsum + dprod.cwiseProduct(t.h.col(i));
      }
  }

  // Encoder.
  const Eigen::MatrixXd dpre = dh.cwiseProduct((1.0 - t.h.array().square()).matrix());
  g[enc_w] = dpre * t.F;
  g[enc_b] = dpre.rowwise().sum();

  RealVector flat(P.size());
  Index off = 0;
  for (const auto& b : g) {
    flat.segment(off, b.size()) = Eigen::Map<const RealVector>(b.data(), b.size());
    off += b.size();
  }
  return flat;
}

G2aSampler::G2aSampler(Index L, const FeatureMatrix* features, const G2aConfig& config)
    : L_(L), config_(config), temperature_(config.temperature) {
  if (L < 2) throw InvalidInput("G2aSampler: need at least two arms");
  if (features && features->rows() > 0) {
    if (features->rows() != L) throw InvalidInput("G2aSampler: feature rows must equal L");
    F_ = *features;
  } else {
    F_ = Eigen::MatrixXd::Identity(L, L);
  }
  Rng rng = make_rng(config.seed, 0x62a);
  params_ = AttentionParams::init(F_.cols(), config.hidden, rng);
}

std::vector<ActionVector> G2aSampler::propose(const SamplerContext& ctx, std::size_t count, Rng& rng) {
  if (count == 0) return {};
  RoundBatch batch;
  batch.noise = draw_gate_noise(L_, rng);
  AttentionOptions opt;
  opt.temperature = temperature_;
  const RealVector out = forward_attention(params_, F_, batch.noise, opt);
  const int m = default_perm_count(ctx.K, config_.perm_cap);
  std::vector<ActionVector> actions;
  for (std::size_t s = 0; s < count; ++s) {
    batch.draws.push_back(gumbel_topk_sample(out, ctx.K, m, rng));
    actions.push_back(batch.draws.back().action);
  }
  batch.feedback.assign(batch.draws.size(), std::nullopt);
  rounds_.push_back(std::move(batch));
  return actions;
}

void G2aSampler::record(const SamplerContext& ctx, const ActionVector& a, double reward, double violation) {
  for (auto r = rounds_.rbegin(); r != rounds_.rend(); ++r)
    for (std::size_t d = 0; d < r->draws.size(); ++d)
      if (!r->feedback[d] && r->draws[d].action == a) {
        r->feedback[d] = composite_score(reward, violation, ctx.lambda);
        return;
      }
}

std::size_t G2aSampler::pending_feedback() const {
  std::size_t n = 0;
  for (const auto& r : rounds_)
    for (const auto& f : r.feedback) n += f ? 1 : 0;
  return n;
}

void G2aSampler::train(const SamplerContext&, Rng&) {
  std::vector<double> all;
  for (const auto& r : rounds_)
    for (const auto& f : r.feedback)
      if (f) all.push_back(*f);
  if (all.size() >= 2) {
    const double baseline = std::accumulate(all.begin(), all.end(), 0.0) / static_cast<double>(all.size());
    const auto n = static_cast<double>(all.size());
    RealVector step = RealVector::Zero(params_.size());
    AttentionOptions opt;
    opt.temperature = temperature_;
    for (const auto& r : rounds_) {
      AttentionTape tape;
      const RealVector out = forward_attention(params_, F_, r.noise, opt, &tape);
      const RealVector p = clip(out, kScoreClip, 1.0 - kScoreClip);
      RealVector dout = RealVector::Zero(L_);
      bool any = false;
      for (std::size_t d = 0; d < r.draws.size(); ++d) {
        if (!r.feedback[d]) continue;
        dout += (*r.feedback[d] - baseline) / n * subset_log_probability_grad(p, r.draws[d].orderings);
        any = true;
      }
      if (!any) continue;
      for (Index i = 0; i < L_; ++i)
        if (out[i] <= kScoreClip || out[i] >= 1.0 - kScoreClip) dout[i] = 0.0;
      step += backward_attention(params_, tape, dout);
    }
    params_.assign(params_.flatten() + config_.lr * step);
    temperature_ = std::max(config_.temperature_floor, temperature_ * config_.anneal);
  }
  rounds_.clear();
}

RealVector G2aSampler::real_output(const SamplerContext&) const {
  AttentionOptions opt;
  opt.stochastic = false;
  opt.temperature = temperature_;
  return forward_attention(params_, F_, Eigen::MatrixXd(), opt);
}

void G2aSampler::demonstrate(const SamplerContext&, const ActionVector& a_star, int steps) {
  const RealVector target = a_star.to_real();
  AttentionOptions opt;
  opt.stochastic = false;
  opt.temperature = temperature_;
  for (int s = 0; s < steps; ++s) {
    AttentionTape tape;
    const RealVector out = forward_attention(params_, F_, Eigen::MatrixXd(), opt, &tape);
    const RealVector q = clip(out, 1e-6, 1.0 - 1e-6);
    const RealVector dout = ((q.array() - target.array()) / (q.array() * (1.0 - q.array()))).matrix() / L_;
    params_.assign(params_.flatten() - config_.demo_lr * backward_attention(params_, tape, dout));
  }
}

}  // namespace msb
