#include "msb/solver_sampler.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace msb {

namespace {

constexpr double kSqrt2 = 1.41421356237309504880;

std::vector<std::uint8_t> dense_adjacency(const ConstraintSet& C) {
  const auto L = static_cast<std::size_t>(C.arm_count());
  std::vector<std::uint8_t> adj(L * L, 0);
  for (const auto& [i, j] : C.pairs()) {
    adj[static_cast<std::size_t>(i) * L + static_cast<std::size_t>(j)] = 1;
    adj[static_cast<std::size_t>(j) * L + static_cast<std::size_t>(i)] = 1;
  }
  return adj;
}

std::vector<Index> greedy_independent_set(const ConstraintSet& C) {
  const Index L = C.arm_count();
  std::vector<int> degree(static_cast<std::size_t>(L));
  std::vector<std::uint8_t> alive(static_cast<std::size_t>(L), 1);
  for (Index i = 0; i < L; ++i) degree[static_cast<std::size_t>(i)] = static_cast<int>(C.neighbors(i).size());
  std::vector<Index> chosen;
  for (;;) {
    Index pick = -1;
    for (Index i = 0; i < L; ++i)
      if (alive[static_cast<std::size_t>(i)] &&
          (pick < 0 || degree[static_cast<std::size_t>(i)] < degree[static_cast<std::size_t>(pick)]))
        pick = i;
    if (pick < 0) break;
    chosen.push_back(pick);
    auto remove = [&](Index v) {
      if (!alive[static_cast<std::size_t>(v)]) return;
      alive[static_cast<std::size_t>(v)] = 0;
      for (Index w : C.neighbors(v)) --degree[static_cast<std::size_t>(w)];
    };
    remove(pick);
    for (Index w : C.neighbors(pick)) remove(w);
  }
  return chosen;
}

// Maximizes sum_{i,j in S} W_ij over feasible |S| = K. A linear objective is
// the diagonal case; `pairwise` is false then and the pair bound is skipped.
class BranchAndBound {
 public:
  BranchAndBound(const Eigen::MatrixXd& W, bool pairwise, const ConstraintSet& C, Index K,
                 std::function<double(const ActionVector&)> canonical)
      : W_(W), pairwise_(pairwise), C_(C), K_(K), L_(W.rows()), canonical_(std::move(canonical)) {
    // Branch on promising arms first so a good incumbent appears early.
    std::vector<double> potential(static_cast<std::size_t>(L_));
    for (Index i = 0; i < L_; ++i) {
      double p = W_(i, i);
      if (pairwise_) {
        std::vector<double> row;
        for (Index k = 0; k < L_; ++k)
          if (k != i) row.push_back(std::max(0.0, W_(i, k)));
        const auto take = std::min<std::size_t>(row.size(), static_cast<std::size_t>(K_ - 1));
        std::partial_sort(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(take), row.end(), std::greater<>());
        p += 2.0 * std::accumulate(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(take), 0.0);
      }
      potential[static_cast<std::size_t>(i)] = p;
    }
    order_.resize(static_cast<std::size_t>(L_));
    std::iota(order_.begin(), order_.end(), Index{0});
    std::stable_sort(order_.begin(), order_.end(), [&](Index a, Index b) {
      return potential[static_cast<std::size_t>(a)] > potential[static_cast<std::size_t>(b)];
    });
    lin_.resize(static_cast<std::size_t>(L_));
    for (Index i = 0; i < L_; ++i) lin_[static_cast<std::size_t>(i)] = W_(i, i);
    blocked_.assign(static_cast<std::size_t>(L_), 0);
    scale_ = W_.cwiseAbs().maxCoeff() * static_cast<double>(K_ * K_) + 1.0;
  }

  void seed_incumbent(const ActionVector& a) { consider(a); }

  std::optional<IpSolution> run() {
    dfs(0, 0.0);
    if (!best_) return std::nullopt;
    return IpSolution{*best_, best_value_, false};
  }

 private:
  void consider(const ActionVector& a) {
    const double v = canonical_(a);
    if (!best_ || v > best_value_) {
      best_ = a;
      best_value_ = v;
    }
  }

  void dfs(std::size_t pos, double f) {
    const Index r = K_ - static_cast<Index>(chosen_.size());
    if (r == 0) {
      consider(ActionVector::from_indices(L_, chosen_));
      return;
    }
    std::vector<Index> cand;
    std::vector<std::size_t> cand_pos;
    for (std::size_t q = pos; q < order_.size(); ++q)
      if (blocked_[static_cast<std::size_t>(order_[q])] == 0) {
        cand.push_back(order_[q]);
        cand_pos.push_back(q);
      }
    if (static_cast<Index>(cand.size()) < r) return;

    if (best_) {
      std::vector<double> gains(cand.size());
      std::vector<double> row;
      for (std::size_t a = 0; a < cand.size(); ++a) {
        double g = lin_[static_cast<std::size_t>(cand[a])];
        if (pairwise_ && r > 1) {
          row.clear();
          for (std::size_t b = 0; b < cand.size(); ++b)
            if (b != a) row.push_back(std::max(0.0, W_(cand[a], cand[b])));
          const auto take = static_cast<std::ptrdiff_t>(r - 1);
          std::nth_element(row.begin(), row.begin() + take - 1, row.end(), std::greater<>());
          g += std::accumulate(row.begin(), row.begin() + take, 0.0);
        }
        gains[a] = g;
      }
      std::nth_element(gains.begin(), gains.begin() + (r - 1), gains.end(), std::greater<>());
      const double bound = f + std::accumulate(gains.begin(), gains.begin() + r, 0.0);
      if (bound < best_value_ - 1e-9 * scale_) return;
    }

    const Index j = cand.front();
    const std::size_t qj = cand_pos.front();
    const double gain = lin_[static_cast<std::size_t>(j)];

    chosen_.push_back(j);
    for (Index w : C_.neighbors(j)) ++blocked_[static_cast<std::size_t>(w)];
    if (pairwise_)
      for (Index k = 0; k < L_; ++k) lin_[static_cast<std::size_t>(k)] += 2.0 * W_(j, k);
    dfs(qj + 1, f + gain);
    if (pairwise_)
      for (Index k = 0; k < L_; ++k) lin_[static_cast<std::size_t>(k)] -= 2.0 * W_(j, k);
    for (Index w : C_.neighbors(j)) --blocked_[static_cast<std::size_t>(w)];
    chosen_.pop_back();

    dfs(qj + 1, f);
  }

  const Eigen::MatrixXd& W_;
  bool pairwise_;
  const ConstraintSet& C_;
  Index K_;
  Index L_;
  std::function<double(const ActionVector&)> canonical_;
  std::vector<Index> order_;
  std::vector<double> lin_;
  std::vector<int> blocked_;
  std::vector<Index> chosen_;
  double scale_ = 1.0;
  std::optional<ActionVector> best_;
  double best_value_ = 0.0;
};

// Adds arms by largest marginal gain while feasible. May get stuck short of K.
std::optional<ActionVector> greedy_construct(const Eigen::MatrixXd& W, const ConstraintSet& C, Index K,
                                             const std::vector<Index>& pool) {
  const Index L = W.rows();
  std::vector<std::uint8_t> usable(static_cast<std::size_t>(L), 0);
  for (Index i : pool) usable[static_cast<std::size_t>(i)] = 1;
  RealVector lin = W.diagonal();
  std::vector<Index> chosen;
  while (static_cast<Index>(chosen.size()) < K) {
    Index pick = -1;
    for (Index i = 0; i < L; ++i)
      if (usable[static_cast<std::size_t>(i)] && (pick < 0 || lin[i] > lin[pick])) pick = i;
    if (pick < 0) return std::nullopt;
    chosen.push_back(pick);
    usable[static_cast<std::size_t>(pick)] = 0;
    for (Index w : C.neighbors(pick)) usable[static_cast<std::size_t>(w)] = 0;
    lin += 2.0 * W.col(pick);
  }
  return ActionVector::from_indices(L, chosen);
}

IpSolution anneal(const Eigen::MatrixXd& W, const ConstraintSet& C, Index K, const SolveOptions& opt,
                  const std::function<double(const ActionVector&)>& canonical) {
  const Index L = W.rows();
  auto start = greedy_construct(W, C, K, [&] {
    std::vector<Index> all(static_cast<std::size_t>(L));
    std::iota(all.begin(), all.end(), Index{0});
    return all;
  }());
  if (!start) {
    // Repair: restrict to a greedy independent set, where every subset is feasible.
    const auto indep = greedy_independent_set(C);
    if (static_cast<Index>(indep.size()) < K) throw Infeasible("solve_ip: no feasible selection of size K found");
    start = greedy_construct(W, C, K, indep);
  }
  const auto adj = dense_adjacency(C);
  auto adjacent = [&](Index i, Index j) {
    return adj[static_cast<std::size_t>(i) * static_cast<std::size_t>(L) + static_cast<std::size_t>(j)] != 0;
  };

  std::vector<std::uint8_t> in(static_cast<std::size_t>(L), 0);
  std::vector<Index> sel = start->selected();
  for (Index i : sel) in[static_cast<std::size_t>(i)] = 1;
  std::vector<int> conflicts(static_cast<std::size_t>(L), 0);  // selected neighbours
  RealVector R = RealVector::Zero(L);                           // sum_{s in S} W(x, s)
  for (Index s : sel) {
    R += W.col(s);
    for (Index w : C.neighbors(s)) ++conflicts[static_cast<std::size_t>(w)];
  }

  double f = canonical(*start);
  ActionVector best = *start;
  double best_value = f;
  if (K == L) return {best, best_value, true};

  Rng rng = make_rng(opt.seed, 0xa11ea1);
  auto delta_of = [&](Index i, Index j) { return W(i, i) - 2.0 * R[i] + W(j, j) + 2.0 * R[j] - 2.0 * W(i, j); };
  double t0 = 0.0;
  for (int s = 0; s < 64; ++s) {
    const Index i = sel[uniform_index(rng, sel.size())];
    const auto j = static_cast<Index>(uniform_index(rng, static_cast<std::size_t>(L)));
    if (!in[static_cast<std::size_t>(j)]) t0 += std::abs(delta_of(i, j));
  }
  t0 = t0 > 0.0 ? t0 / 64.0 : 1.0;
  const int iters = std::max(1, opt.anneal_iterations);
  for (int it = 0; it < iters; ++it) {
    const double T = t0 * std::pow(1e-3, static_cast<double>(it) / iters);
    const std::size_t slot = uniform_index(rng, sel.size());
    const Index i = sel[slot];
    const auto j = static_cast<Index>(uniform_index(rng, static_cast<std::size_t>(L)));
    if (in[static_cast<std::size_t>(j)]) continue;
    if (conflicts[static_cast<std::size_t>(j)] - (adjacent(i, j) ? 1 : 0) != 0) continue;
    const double d = delta_of(i, j);
    if (d < 0.0 && uniform01(rng) >= std::exp(d / T)) continue;
    in[static_cast<std::size_t>(i)] = 0;
    in[static_cast<std::size_t>(j)] = 1;
    sel[slot] = j;
    R += W.col(j) - W.col(i);
    for (Index w : C.neighbors(i)) --conflicts[static_cast<std::size_t>(w)];
    for (Index w : C.neighbors(j)) ++conflicts[static_cast<std::size_t>(w)];
    f += d;
    if (f > best_value + 1e-12) {
      ActionVector cur = ActionVector::from_indices(L, sel);
      const double v = canonical(cur);
      f = v;
      if (v > best_value) {
        best = std::move(cur);
        best_value = v;
      }
    }
  }
  return {best, best_value, true};
}

IpSolution solve_general(const Eigen::MatrixXd& W, bool pairwise, const ConstraintSet& C, Index K,
                         const SolveOptions& opt, const std::function<double(const ActionVector&)>& canonical) {
  const Index L = W.rows();
  if (K < 1 || K > L) throw InvalidInput("solve_ip: K out of range");
  if (C.arm_count() != L) throw InvalidInput("solve_ip: constraint set size mismatch");
  const bool exact =
      opt.mode == SolveMode::exact || (opt.mode == SolveMode::automatic && L <= opt.exact_limit);
  if (!exact) return anneal(W, C, K, opt, canonical);

  BranchAndBound bb(W, pairwise, C, K, canonical);
  std::vector<Index> all(static_cast<std::size_t>(L));
  std::iota(all.begin(), all.end(), Index{0});
  if (auto start = greedy_construct(W, C, K, all)) bb.seed_incumbent(*start);
  auto result = bb.run();
  if (!result) throw Infeasible("solve_ip: no feasible selection of size K exists");
  return *result;
}

}  // namespace

LinearSurrogate extract_first_order(const BatchOracle& oracle, Index L) {
  LinearSurrogate out;
  out.b = oracle(Eigen::MatrixXd::Identity(L, L));
  if (out.b.size() != L) throw InvalidInput("extract_first_order: oracle returned wrong length");
  return out;
}

QuadraticSurrogate extract_second_order(const BatchOracle& oracle, const LinearSurrogate& first) {
  const Index L = first.b.size();
  const Index pairs = L * (L - 1) / 2;
  // Columns: zero, sqrt(2) e_i (L of them), then (e_i + e_j)/sqrt(2) for i < j.
  Eigen::MatrixXd probes = Eigen::MatrixXd::Zero(L, 1 + L + pairs);
  for (Index i = 0; i < L; ++i) probes(i, 1 + i) = kSqrt2;
  Index c = 1 + L;
  for (Index i = 0; i < L; ++i)
    for (Index j = i + 1; j < L; ++j, ++c) {
      probes(i, c) = 1.0 / kSqrt2;
      probes(j, c) = 1.0 / kSqrt2;
    }
  const RealVector out = oracle(probes);
  if (out.size() != probes.cols()) throw InvalidInput("extract_second_order: oracle returned wrong length");

  QuadraticSurrogate q;
  q.e0 = out[0];
  const double e = q.e0;
  const auto& b = first.b;
  const RealVector o_diag = out.segment(1, L);
  q.Q.resize(L, L);
  for (Index i = 0; i < L; ++i) q.Q(i, i) = (o_diag[i] - kSqrt2 * (b[i] - e) - e) / (2.0 - kSqrt2);
  c = 1 + L;
  for (Index i = 0; i < L; ++i)
    for (Index j = i + 1; j < L; ++j, ++c) {
      const double v = out[c] + (kSqrt2 / 4.0) * (o_diag[i] + o_diag[j]) - ((1.0 + kSqrt2) / 2.0) * (b[i] + b[j]) +
                       (kSqrt2 / 2.0) * e;
      q.Q(i, j) = v;
      q.Q(j, i) = v;
    }
  return q;
}

double objective_value(const LinearSurrogate& obj, const ActionVector& a) {
  double v = 0.0;
  for (Index i : a.selected()) v += obj.b[i];
  return v;
}

double objective_value(const QuadraticSurrogate& obj, const ActionVector& a) {
  double v = 0.0;
  for (Index i : a.selected())
    for (Index j : a.selected()) v += obj.Q(i, j);
  return v;
}

Index greedy_independent_set_size(const ConstraintSet& C) {
  return static_cast<Index>(greedy_independent_set(C).size());
}

IpSolution solve_ip(const LinearSurrogate& obj, const ConstraintSet& C, Index K, const SolveOptions& opt) {
  if (!obj.b.allFinite()) throw InvalidInput("solve_ip: non-finite linear objective");
  const Eigen::MatrixXd W = obj.b.asDiagonal();
  return solve_general(W, false, C, K, opt, [&](const ActionVector& a) { return objective_value(obj, a); });
}

IpSolution solve_ip(const QuadraticSurrogate& obj, const ConstraintSet& C, Index K, const SolveOptions& opt) {
  if (!obj.Q.allFinite()) throw InvalidInput("solve_ip: non-finite quadratic objective");
  if (obj.Q.rows() != obj.Q.cols()) throw InvalidInput("solve_ip: Q must be square");
  const Eigen::MatrixXd W = 0.5 * (obj.Q + obj.Q.transpose());
  return solve_general(W, true, C, K, opt, [&](const ActionVector& a) { return objective_value(obj, a); });
}

std::vector<ActionVector> beta_perturb(const ActionVector& elite, double eps0, std::size_t count, Rng& rng) {
  if (!(eps0 > 0.0 && eps0 < 0.5)) throw InvalidInput("beta_perturb: eps0 must lie in (0, 0.5)");
  const RealVector v = clip(elite.to_real(), eps0, 1.0 - eps0);
  std::vector<ActionVector> out;
  out.reserve(count);
  RealVector draw(v.size());
  for (std::size_t s = 0; s < count; ++s) {
    for (Index i = 0; i < v.size(); ++i) draw[i] = beta_draw(rng, v[i], 1.0 - v[i]);
    out.push_back(binarize_top_k(draw, elite.k()));
  }
  return out;
}

void SolverSampler::resolve(const SamplerContext& ctx) {
  elite1_.reset();
  elite2_.reset();
  heuristic_ = false;
  const ConstraintSet empty(ctx.L);
  const ConstraintSet& C = ctx.constraints ? *ctx.constraints : empty;
  SolveOptions opt = config_.solve;
  opt.seed = mix_seed(config_.solve.seed, ctx.round);
  const auto first = extract_first_order(ctx.surrogate_raw, ctx.L);
  const auto second = extract_second_order(ctx.surrogate_raw, first);
  try {
    auto s1 = solve_ip(first, C, ctx.K, opt);
    auto s2 = solve_ip(second, C, ctx.K, opt);
    heuristic_ = s1.heuristic || s2.heuristic;
    elite1_ = std::move(s1.action);
    elite2_ = std::move(s2.action);
  } catch (const Infeasible&) {
    // Nothing to offer; the master backfills from the random sampler.
  }
  solved_round_ = ctx.round;
}

std::vector<ActionVector> SolverSampler::propose(const SamplerContext& ctx, std::size_t count, Rng& rng) {
  if (count == 0 || !ctx.surrogate_raw) return {};
  const std::size_t period = std::max<std::size_t>(1, config_.refresh_every);
  if (solved_round_ == 0 || ctx.round >= solved_round_ + period) resolve(ctx);
  if (!elite1_) return {};

  std::vector<ActionVector> out = {*elite1_};
  if (count >= 2) out.push_back(*elite2_);
  if (count > 2) {
    const std::size_t rest = count - 2;
    const std::size_t half = (rest + 1) / 2;
    for (auto& a : beta_perturb(*elite1_, config_.eps0, half, rng)) out.push_back(std::move(a));
    for (auto& a : beta_perturb(*elite2_, config_.eps0, rest - half, rng)) out.push_back(std::move(a));
  }
  return out;
}

}  // namespace msb
