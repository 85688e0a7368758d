#pragma once

// Solver slave: reads first- and second-order structure off the master's
// estimator and solves the two induced top-K integer programs under the hard
// diversity constraints.

#include <functional>
#include <optional>

#include "msb/sampler.hpp"

namespace msb {

struct LinearSurrogate {
  RealVector b;
};

struct QuadraticSurrogate {
  Eigen::MatrixXd Q;  // symmetric
  double e0 = 0.0;    // oracle at the zero input
};

/// Column-batched oracle: column c of the argument is one probe input.
using BatchOracle = std::function<RealVector(const Eigen::MatrixXd&)>;

/// b_i = oracle(e_i).
LinearSurrogate extract_first_order(const BatchOracle& oracle, Index L);

/// Recovers Q from probes at 0, sqrt(2) e_i and (e_i + e_j)/sqrt(2). Exact when
/// the oracle is a quadratic form plus an affine term.
QuadraticSurrogate extract_second_order(const BatchOracle& oracle, const LinearSurrogate& first);

double objective_value(const LinearSurrogate& obj, const ActionVector& a);
double objective_value(const QuadraticSurrogate& obj, const ActionVector& a);

enum class SolveMode { automatic, exact, heuristic };

struct SolveOptions {
  SolveMode mode = SolveMode::automatic;
  Index exact_limit = 40;  // automatic mode uses branch and bound up to this L
  int anneal_iterations = 20000;
  std::uint64_t seed = 1;
};

struct IpSolution {
  ActionVector action;
  double value = 0.0;
  bool heuristic = false;
};

/// Size of a greedy (minimum remaining degree) independent set of the conflict graph.
Index greedy_independent_set_size(const ConstraintSet& C);

/// Maximizes the objective over feasible K-subsets. Throws Infeasible when no
/// feasible subset exists (or, in heuristic mode, when greedy cannot find one).
IpSolution solve_ip(const LinearSurrogate& obj, const ConstraintSet& C, Index K, const SolveOptions& opt = {});
IpSolution solve_ip(const QuadraticSurrogate& obj, const ConstraintSet& C, Index K, const SolveOptions& opt = {});

/// Clip bits to [eps0, 1 - eps0], redraw each from Beta(v, 1 - v), keep the top K.
std::vector<ActionVector> beta_perturb(const ActionVector& elite, double eps0, std::size_t count, Rng& rng);

struct SolverSamplerConfig {
  double eps0 = 0.05;
  /// Re-extract and re-solve every this many rounds; 1 means every round.
  std::size_t refresh_every = 1;
  SolveOptions solve;
};

class SolverSampler final : public Sampler {
 public:
  explicit SolverSampler(const SolverSamplerConfig& config = {}) : config_(config) {}

  SamplerId id() const override { return SamplerId::solver; }
  std::vector<ActionVector> propose(const SamplerContext& ctx, std::size_t count, Rng& rng) override;

  const std::optional<ActionVector>& linear_elite() const { return elite1_; }
  const std::optional<ActionVector>& quadratic_elite() const { return elite2_; }
  bool last_solve_heuristic() const { return heuristic_; }

 private:
  void resolve(const SamplerContext& ctx);

  SolverSamplerConfig config_;
  std::optional<ActionVector> elite1_;
  std::optional<ActionVector> elite2_;
  std::size_t solved_round_ = 0;
  bool heuristic_ = false;
};

}  // namespace msb
