#pragma once

// Independent brute-force references shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <vector>

#include "msb/core.hpp"

namespace msb::oracle {

/// Exact probability of every K-subset under sequential sampling without
/// replacement proportional to p, by walking every ordered draw.
inline std::map<std::vector<Index>, double> subset_probabilities(const RealVector& p, Index K) {
  std::map<std::vector<Index>, double> out;
  std::vector<Index> path;
  std::vector<bool> used(static_cast<std::size_t>(p.size()), false);
  auto rec = [&](auto&& self, double prob, double remaining) -> void {
    if (static_cast<Index>(path.size()) == K) {
      std::vector<Index> key = path;
      std::sort(key.begin(), key.end());
      out[key] += prob;
      return;
    }
    for (Index i = 0; i < p.size(); ++i) {
      if (used[static_cast<std::size_t>(i)]) continue;
      used[static_cast<std::size_t>(i)] = true;
      path.push_back(i);
      self(self, prob * p[i] / remaining, remaining - p[i]);
      path.pop_back();
      used[static_cast<std::size_t>(i)] = false;
    }
  };
  rec(rec, 1.0, p.sum());
  return out;
}

/// Calls fn(indices) for every K-subset of {0..L-1} in lexicographic order.
template <typename Fn>
void for_each_subset(Index L, Index K, Fn fn) {
  std::vector<Index> pick(static_cast<std::size_t>(K));
  std::iota(pick.begin(), pick.end(), Index{0});
  for (;;) {
    fn(pick);
    Index i = K - 1;
    while (i >= 0 && pick[static_cast<std::size_t>(i)] == L - K + i) --i;
    if (i < 0) return;
    ++pick[static_cast<std::size_t>(i)];
    for (Index j = i + 1; j < K; ++j) pick[static_cast<std::size_t>(j)] = pick[static_cast<std::size_t>(j - 1)] + 1;
  }
}

inline bool feasible(const std::vector<Index>& pick, const ConstraintSet& C) {
  for (std::size_t a = 0; a < pick.size(); ++a)
    for (std::size_t b = a + 1; b < pick.size(); ++b)
      if (C.contains(pick[a], pick[b])) return false;
  return true;
}

/// Best objective over feasible K-subsets; NaN when none is feasible.
template <typename Value>
double best_feasible(Index L, Index K, const ConstraintSet& C, Value value) {
  double best = std::nan("");
  for_each_subset(L, K, [&](const std::vector<Index>& pick) {
    if (!feasible(pick, C)) return;
    const double v = value(ActionVector::from_indices(L, pick));
    if (std::isnan(best) || v > best) best = v;
  });
  return best;
}

/// Upper critical values of the chi-square distribution at p = 0.01.
inline double chi2_critical_01(int dof) {
  static const double table[] = {0, 6.635, 9.210, 11.345, 13.277, 15.086, 16.812, 18.475, 20.090, 21.666, 23.209,
                                 24.725, 26.217, 27.688, 29.141, 30.578};
  if (dof < 1 || dof > 15) throw InvalidInput("chi2_critical_01: dof out of table");
  return table[dof];
}

}  // namespace msb::oracle
