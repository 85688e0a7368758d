#pragma once

// Shared domain types for the constrained top-K bandit: actions, constraint
// sets, elite samples, hyperparameters, and the small arithmetic kernels that
// every sampler leans on (NED, constraint generation, binarization, scoring).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace msb {

using Index = Eigen::Index;
using RealVector = Eigen::VectorXd;
/// One row per arm, one column per feature dimension.
using FeatureMatrix = Eigen::MatrixXd;

struct InvalidInput : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct DegenerateInput : std::domain_error {
  using std::domain_error::domain_error;
};
struct Infeasible : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EndOfLog : std::out_of_range {
  using std::out_of_range::out_of_range;
};

/// Binary length-L vector with exactly K ones.
class ActionVector {
 public:
  ActionVector() = default;

  static ActionVector from_bits(std::vector<std::uint8_t> bits);
  static ActionVector from_indices(Index L, const std::vector<Index>& selected);

  Index size() const { return static_cast<Index>(bits_.size()); }
  Index k() const { return static_cast<Index>(selected_.size()); }
  bool operator[](Index i) const { return bits_[static_cast<std::size_t>(i)] != 0; }

  /// Selected arm indices in increasing order.
  const std::vector<Index>& selected() const { return selected_; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }

  RealVector to_real() const;
  /// A / ||A||_2, the input representation of the feedback estimator.
  RealVector normalized() const;

  bool operator==(const ActionVector& other) const { return bits_ == other.bits_; }
  bool operator!=(const ActionVector& other) const { return !(*this == other); }

  std::string to_string() const;
  std::uint64_t hash() const;

 private:
  std::vector<std::uint8_t> bits_;
  std::vector<Index> selected_;
};

struct ActionHash {
  std::size_t operator()(const ActionVector& a) const { return static_cast<std::size_t>(a.hash()); }
};

/// Unordered forbidden arm pairs (i < j).
class ConstraintSet {
 public:
  ConstraintSet() = default;
  explicit ConstraintSet(Index L) : neighbors_(static_cast<std::size_t>(L)) {}

  /// Adds (i, j); returns false if the pair was already present.
  bool add(Index i, Index j);
  bool contains(Index i, Index j) const;

  Index arm_count() const { return static_cast<Index>(neighbors_.size()); }
  /// M, the number of stored pairs.
  std::size_t size() const { return pairs_.size(); }
  bool empty() const { return pairs_.empty(); }

  const std::vector<std::pair<Index, Index>>& pairs() const { return pairs_; }
  const std::vector<Index>& neighbors(Index i) const { return neighbors_[static_cast<std::size_t>(i)]; }

 private:
  std::vector<std::pair<Index, Index>> pairs_;
  std::vector<std::vector<Index>> neighbors_;
};

enum class SamplerId : int { solver = 0, wolpertinger = 1, g2anet = 2, cem = 3, random = 4, tlbo = 5, gtkr = 6 };
/// The six master slaves come first; gtkr is a standalone-only baseline.
inline constexpr int kSlaveCount = 6;
inline constexpr int kSamplerCount = 7;

const char* sampler_name(SamplerId id);
SamplerId sampler_from_name(const std::string& name);

struct EliteSample {
  ActionVector action;
  SamplerId sampler_id = SamplerId::random;
  double surrogate_score = 0.0;
  double violation_rate = 0.0;
};

struct Hyperparameters {
  Index L = 30;
  Index K = 5;
  double lambda = 5.0;       // reward-constraint trade-off
  double tau = 0.5;          // NED threshold
  double eps0 = 0.05;        // beta perturber clip
  double rho = 0.1;          // CEM elite fraction
  int f_in = 20;             // slave update period
  int length_epoch = 20;
  int demo_window = 100;     // L2
  int n_es = 10;             // elite samples per round
  int cluster_count = 20;
  std::uint64_t seed = 1;

  /// Throws InvalidInput naming the offending field.
  void validate() const;
};

template <typename Scalar>
Scalar ned(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& u, const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& v) {
  if (u.size() != v.size()) throw InvalidInput("ned: dimension mismatch");
  const Scalar denom = u.sum() + v.sum();
  if (!(denom > Scalar(0))) throw DegenerateInput("ned: zero denominator");
  return (u - v).cwiseAbs().sum() / denom;
}

/// All pairs i < j with ned(row_i, row_j) < tau.
ConstraintSet build_constraints(const FeatureMatrix& features, double tau);

std::size_t violation_count(const ActionVector& a, const ConstraintSet& c);
/// n_t / M, or 0 when M = 0.
double violation_rate(const ActionVector& a, const ConstraintSet& c);

/// Ones at the K largest components; ties go to the lowest index.
ActionVector binarize_top_k(const RealVector& v, Index K);

template <typename Scalar>
constexpr Scalar composite_score(Scalar surrogate, Scalar violation, Scalar lambda) {
  return surrogate - lambda * violation;
}

inline RealVector clip(const RealVector& v, double lo, double hi) { return v.cwiseMax(lo).cwiseMin(hi); }

}  // namespace msb
