#pragma once

// The contract every slave sampler implements. A sampler proposes candidate
// actions, is told how each of its proposals scored, and gets a parameter
// update every f_in rounds.

#include <functional>
#include <span>
#include <vector>

#include "msb/core.hpp"
#include "msb/random.hpp"

namespace msb {

class SharedBuffers;

struct SamplerContext {
  std::size_t round = 1;  // t, 1-based
  Index L = 0;
  Index K = 0;
  double lambda = 5.0;
  const ConstraintSet* constraints = nullptr;
  /// Arm features; empty when the environment has none.
  const FeatureMatrix* features = nullptr;
  /// Frozen optimistic estimate U(A/||A||). Empty in standalone runs.
  std::function<double(const ActionVector&)> surrogate;
  /// Same estimator on arbitrary inputs, batched column-wise (curvature probes).
  std::function<RealVector(const Eigen::MatrixXd&)> surrogate_raw;
  const SharedBuffers* buffers = nullptr;
  /// Elites already submitted by other samplers this round.
  std::span<const EliteSample> pool;

  bool has_surrogate() const { return static_cast<bool>(surrogate); }
  double violation(const ActionVector& a) const { return constraints ? violation_rate(a, *constraints) : 0.0; }
};

class Sampler {
 public:
  virtual ~Sampler() = default;
  virtual SamplerId id() const = 0;

  virtual std::vector<ActionVector> propose(const SamplerContext& ctx, std::size_t count, Rng& rng) = 0;

  /// Feedback on one of this sampler's proposals: `reward` is the surrogate U
  /// under the master, or the environment reward when run standalone.
  virtual void record(const SamplerContext&, const ActionVector&, double /*reward*/, double /*violation*/) {}

  /// Periodic parameter update.
  virtual void train(const SamplerContext&, Rng&) {}

  /// Samplers with a trainable real-valued output head accept demonstrations.
  virtual bool demonstrable() const { return false; }
  virtual RealVector real_output(const SamplerContext&) const { return {}; }
  virtual void demonstrate(const SamplerContext&, const ActionVector& /*a_star*/, int /*steps*/) {}
};

}  // namespace msb
