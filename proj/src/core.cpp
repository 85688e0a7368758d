#include "msb/core.hpp"

#include <algorithm>
#include <numeric>

namespace msb {

ActionVector ActionVector::from_bits(std::vector<std::uint8_t> bits) {
  ActionVector a;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] > 1) throw InvalidInput("ActionVector: non-binary entry");
    if (bits[i]) a.selected_.push_back(static_cast<Index>(i));
  }
  if (a.selected_.empty()) throw InvalidInput("ActionVector: K must be at least 1");
  a.bits_ = std::move(bits);
  return a;
}

ActionVector ActionVector::from_indices(Index L, const std::vector<Index>& selected) {
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(L), 0);
  for (Index i : selected) {
    if (i < 0 || i >= L) throw InvalidInput("ActionVector: index out of range");
    if (bits[static_cast<std::size_t>(i)]) throw InvalidInput("ActionVector: duplicate index");
    bits[static_cast<std::size_t>(i)] = 1;
  }
  return from_bits(std::move(bits));
}

RealVector ActionVector::to_real() const {
  RealVector v = RealVector::Zero(size());
  for (Index i : selected_) v[i] = 1.0;
  return v;
}

RealVector ActionVector::normalized() const {
  return to_real() / std::sqrt(static_cast<double>(selected_.size()));
}

std::string ActionVector::to_string() const {
  std::string s;
  s.reserve(bits_.size());
  for (auto b : bits_) s.push_back(b ? '1' : '0');
  return s;
}

std::uint64_t ActionVector::hash() const {
  // FNV-1a over selected indices
  std::uint64_t h = 1469598103934665603ull;
  for (Index i : selected_) {
    h ^= static_cast<std::uint64_t>(i) + 0x9e3779b97f4a7c15ull;
    h *= 1099511628211ull;
  }
  return h;
}

bool ConstraintSet::add(Index i, Index j) {
  if (i == j) throw InvalidInput("ConstraintSet: self pair");
  if (i > j) std::swap(i, j);
  if (i < 0 || j >= arm_count()) throw InvalidInput("ConstraintSet: index out of range");
  if (contains(i, j)) return false;
  pairs_.emplace_back(i, j);
  neighbors_[static_cast<std::size_t>(i)].push_back(j);
  neighbors_[static_cast<std::size_t>(j)].push_back(i);
  return true;
}

bool ConstraintSet::contains(Index i, Index j) const {
  if (i < 0 || j < 0 || i >= arm_count() || j >= arm_count()) return false;
  const auto& n = neighbors_[static_cast<std::size_t>(i)];
  return std::find(n.begin(), n.end(), j) != n.end();
}

const char* sampler_name(SamplerId id) {
  switch (id) {
    case SamplerId::solver: return "solver";
    case SamplerId::wolpertinger: return "wolpertinger";
    case SamplerId::g2anet: return "g2anet";
    case SamplerId::cem: return "cem";
    case SamplerId::random: return "random";
    case SamplerId::tlbo: return "tlbo";
    case SamplerId::gtkr: return "gtkr";
  }
  return "unknown";
}

SamplerId sampler_from_name(const std::string& name) {
  for (int i = 0; i < kSamplerCount; ++i) {
    auto id = static_cast<SamplerId>(i);
    if (name == sampler_name(id)) return id;
  }
  throw InvalidInput("unknown sampler: " + name);
}

void Hyperparameters::validate() const {
  if (L < 1) throw InvalidInput("L must be >= 1");
  if (K < 1 || K > L) throw InvalidInput("K must satisfy 1 <= K <= L");
  if (!(lambda >= 0.0)) throw InvalidInput("lambda must be >= 0");
  if (!(tau >= 0.0 && tau <= 1.0)) throw InvalidInput("tau must lie in [0,1]");
  if (!(eps0 > 0.0 && eps0 < 0.5)) throw InvalidInput("eps0 must lie in (0, 0.5)");
  if (!(rho > 0.0 && rho <= 1.0)) throw InvalidInput("rho must lie in (0, 1]");
  if (f_in < 1) throw InvalidInput("f_in must be >= 1");
  if (length_epoch < 1) throw InvalidInput("length_epoch must be >= 1");
  if (demo_window < 1) throw InvalidInput("demo_window must be >= 1");
  if (n_es < 1) throw InvalidInput("n_es must be >= 1");
  if (cluster_count < 1) throw InvalidInput("cluster_count must be >= 1");
}

ConstraintSet build_constraints(const FeatureMatrix& features, double tau) {
  const Index L = features.rows();
  ConstraintSet c(L);
  const RealVector sums = features.rowwise().sum();
  for (Index i = 0; i < L; ++i) {
    for (Index j = i + 1; j < L; ++j) {
      const double denom = sums[i] + sums[j];
      if (!(denom > 0.0)) throw DegenerateInput("build_constraints: all-zero feature rows");
      const double d = (features.row(i) - features.row(j)).cwiseAbs().sum() / denom;
      if (d < tau) c.add(i, j);
    }
  }
  return c;
}

std::size_t violation_count(const ActionVector& a, const ConstraintSet& c) {
  std::size_t n = 0;
  for (Index i : a.selected()) {
    if (i >= c.arm_count()) continue;
    for (Index j : c.neighbors(i)) {
      if (j > i && a[j]) ++n;
    }
  }
  return n;
}

double violation_rate(const ActionVector& a, const ConstraintSet& c) {
  if (c.empty()) return 0.0;
  return static_cast<double>(violation_count(a, c)) / static_cast<double>(c.size());
}

ActionVector binarize_top_k(const RealVector& v, Index K) {
  const Index L = v.size();
  if (K < 1 || K > L) throw InvalidInput("binarize_top_k: K must satisfy 1 <= K <= L");
  std::vector<Index> order(static_cast<std::size_t>(L));
  std::iota(order.begin(), order.end(), Index{0});
  auto before = [&](Index a, Index b) { return v[a] > v[b] || (v[a] == v[b] && a < b); };
  std::nth_element(order.begin(), order.begin() + (K - 1), order.end(), before);
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(L), 0);
  for (Index r = 0; r < K; ++r) bits[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = 1;
  return ActionVector::from_bits(std::move(bits));
}

}  // namespace msb
