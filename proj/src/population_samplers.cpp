#include "msb/population_samplers.hpp"

#include <numeric>

namespace msb {

ActionVector random_sample(Index L, Index K, Rng& rng) {
  if (K < 0 || K > L) throw InvalidInput("random_sample: K must satisfy 0 <= K <= L");
  std::vector<Index> idx(static_cast<std::size_t>(L));
  std::iota(idx.begin(), idx.end(), Index{0});
  for (Index i = 0; i < K; ++i) {
    const auto j = static_cast<std::size_t>(i) + uniform_index(rng, static_cast<std::size_t>(L - i));
    std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
  }
  idx.resize(static_cast<std::size_t>(K));
  return ActionVector::from_indices(L, idx);
}

bool BestInHistory::insert(const ActionVector& sample, double score) {
  if (best_ && !(score > score_)) return false;
  best_ = sample;
  score_ = score;
  return true;
}

void BestInHistory::rescore(double score) { score_ = score; }

std::vector<ActionVector> RandomSampler::propose(const SamplerContext& ctx, std::size_t count, Rng& rng) {
  std::vector<ActionVector> out;
  if (count == 0) return out;
  if (keep_best_ && history_.best()) {
    if (ctx.has_surrogate())
      history_.rescore(composite_score(ctx.surrogate(*history_.best()), ctx.violation(*history_.best()), ctx.lambda));
    out.push_back(*history_.best());
  }
  while (out.size() < count) out.push_back(random_sample(ctx.L, ctx.K, rng));
  return out;
}

void RandomSampler::record(const SamplerContext& ctx, const ActionVector& a, double reward, double violation) {
  history_.insert(a, composite_score(reward, violation, ctx.lambda));
}

ActionVector tlbo_teacher_step(const ActionVector& A, const ActionVector& T, double r) {
  const RealVector a = A.to_real();
  return binarize_top_k(a + r * (T.to_real() - a), A.k());
}

ActionVector tlbo_teacher_step(const ActionVector& A, const ActionVector& T, Rng& rng) {
  return tlbo_teacher_step(A, T, uniform01(rng));
}

ActionVector tlbo_student_step(const ActionVector& A, const ActionVector& B, double scoreA, double scoreB, double r) {
  const RealVector a = A.to_real();
  const RealVector b = B.to_real();
  const RealVector c = scoreA < scoreB ? RealVector(a + r * (b - a)) : RealVector(a + r * (a - b));
  return binarize_top_k(c, A.k());
}

ActionVector tlbo_student_step(const ActionVector& A, const ActionVector& B, double scoreA, double scoreB, Rng& rng) {
  return tlbo_student_step(A, B, scoreA, scoreB, uniform01(rng));
}

std::vector<ActionVector> TlboSampler::propose(const SamplerContext& ctx, std::size_t count, Rng& rng) {
  std::vector<ActionVector> out;
  const auto& pool = ctx.pool;
  if (pool.empty() || count == 0) return out;
  std::vector<double> score(pool.size());
  std::size_t teacher = 0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    score[i] = composite_score(pool[i].surrogate_score, pool[i].violation_rate, ctx.lambda);
    if (score[i] > score[teacher]) teacher = i;
  }
  const std::size_t teacher_steps = (count + 1) / 2;
  for (std::size_t s = 0; s < teacher_steps; ++s) {
    const auto& A = pool[uniform_index(rng, pool.size())].action;
    out.push_back(tlbo_teacher_step(A, pool[teacher].action, rng));
  }
  while (out.size() < count) {
    const std::size_t i = uniform_index(rng, pool.size());
    std::size_t j = i;
    if (pool.size() > 1) {
      j = uniform_index(rng, pool.size() - 1);
      if (j >= i) ++j;
    }
    out.push_back(tlbo_student_step(pool[i].action, pool[j].action, score[i], score[j], rng));
  }
  return out;
}

}  // namespace msb
