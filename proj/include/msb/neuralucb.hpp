#pragma once

// Neural UCB feedback estimator used by the master.
//
//   h(x; theta) = sqrt(m) * w_last . relu(W_{D-1} relu(... relu(W_1 x)))
//
// with D = depth >= 2 weight layers, hidden width m, and a block-diagonal
// initialization with an antisymmetric output layer. The design matrix Z
// accumulates g g^T / m where g = dh/dtheta; the optimistic score is
// U = mean + gamma_t * sqrt(g^T Z^{-1} g / m).

#include <cstdint>
#include <string>
#include <vector>

#include "msb/core.hpp"
#include "msb/random.hpp"

namespace msb {

template <typename Scalar>
struct ReluNetwork {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Index arm_count = 0;  // L, the raw input length
  Index input_dim = 0;  // L rounded up to even
  Index width = 0;      // m
  int depth = 2;        // D, number of weight layers
  /// layers[0] is m x input_dim, hidden layers m x m, the last one 1 x m.
  std::vector<Matrix> layers;

  Index parameter_count() const { return width * input_dim + width * width * (depth - 2) + width; }

  Vector flatten() const {
    Vector theta(parameter_count());
    Index off = 0;
    for (const auto& w : layers) {
      theta.segment(off, w.size()) = Eigen::Map<const Vector>(w.data(), w.size());
      off += w.size();
    }
    return theta;
  }

  void assign(const Vector& theta) {
    if (theta.size() != parameter_count()) throw InvalidInput("ReluNetwork::assign: wrong parameter count");
    Index off = 0;
    for (auto& w : layers) {
      Eigen::Map<Vector>(w.data(), w.size()) = theta.segment(off, w.size());
      off += w.size();
    }
  }

  template <typename Other>
  ReluNetwork<Other> cast() const {
    ReluNetwork<Other> out;
    out.arm_count = arm_count;
    out.input_dim = input_dim;
    out.width = width;
    out.depth = depth;
    for (const auto& w : layers) out.layers.push_back(w.template cast<Other>());
    return out;
  }

  Vector pad(const Vector& x) const {
    if (x.size() == input_dim) return x;
    if (x.size() != arm_count) throw InvalidInput("ReluNetwork: input length mismatch");
    Vector p = Vector::Zero(input_dim);
    p.head(arm_count) = x;
    return p;
  }
};

/// Block-diagonal Gaussian initialization; throws InvalidInput for odd m.
ReluNetwork<double> init_params(Index L, Index m, int depth, std::uint64_t seed);

template <typename Scalar>
Scalar forward_unchecked(const ReluNetwork<Scalar>& net, const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& x) {
  using Vector = typename ReluNetwork<Scalar>::Vector;
  Vector a = net.pad(x);
  for (int l = 0; l + 1 < net.depth; ++l) a = (net.layers[static_cast<std::size_t>(l)] * a).cwiseMax(Scalar(0));
  using std::sqrt;
  return sqrt(Scalar(net.width)) * (net.layers.back() * a)(0, 0);
}

/// Gradient with respect to the flattened parameters, via backpropagation.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> grad_unchecked(const ReluNetwork<Scalar>& net,
                                                        const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& x,
                                                        Scalar* value = nullptr) {
  using Vector = typename ReluNetwork<Scalar>::Vector;
  const auto D = static_cast<std::size_t>(net.depth);
  std::vector<Vector> acts(D);  // acts[l] = input to layer l
  std::vector<Vector> pre(D - 1);
  acts[0] = net.pad(x);
  for (std::size_t l = 0; l + 1 < D; ++l) {
    pre[l] = net.layers[l] * acts[l];
    acts[l + 1] = pre[l].cwiseMax(Scalar(0));
  }
  using std::sqrt;
  const Scalar scale = sqrt(Scalar(net.width));
  if (value) *value = scale * (net.layers.back() * acts[D - 1])(0, 0);

  Vector g(net.parameter_count());
  std::vector<Index> offsets(D);
  Index off = 0;
  for (std::size_t l = 0; l < D; ++l) {
    offsets[l] = off;
    off += net.layers[l].size();
  }
  g.segment(offsets[D - 1], net.width) = scale * acts[D - 1];
  Vector delta = scale * net.layers.back().transpose();
  for (std::size_t l = D - 1; l-- > 0;) {
    delta = delta.cwiseProduct(pre[l].unaryExpr([](Scalar z) { return z > Scalar(0) ? Scalar(1) : Scalar(0); }));
    const auto& w = net.layers[l];
    Eigen::Map<typename ReluNetwork<Scalar>::Matrix>(g.data() + offsets[l], w.rows(), w.cols()) =
        delta * acts[l].transpose();
    if (l > 0) delta = w.transpose() * delta;
  }
  return g;
}

/// Rejects inputs whose Euclidean norm deviates from 1 by more than 1e-6.
void require_unit_norm(const RealVector& x);

double forward(const ReluNetwork<double>& net, const RealVector& x);
RealVector grad(const ReluNetwork<double>& net, const RealVector& x);

/// Z <- Z + g g^T / m
inline void design_step(Eigen::MatrixXd& Z, const RealVector& g, double m) { Z.noalias() += g * g.transpose() / m; }

/// Z  <- gamma Z  + g g^T / m + (1 - gamma)   lambda I
/// Z~ <- gamma Z~ + g g^T / m + (1 - gamma^2) lambda I
inline void discounted_design_step(Eigen::MatrixXd& Z, Eigen::MatrixXd& Z_tilde, const RealVector& g, double m,
                                   double gamma, double lambda) {
  const Eigen::MatrixXd ggT = g * g.transpose() / m;
  Z = gamma * Z + ggT;
  Z.diagonal().array() += (1.0 - gamma) * lambda;
  Z_tilde = gamma * Z_tilde + ggT;
  Z_tilde.diagonal().array() += (1.0 - gamma * gamma) * lambda;
}

struct UcbConfig {
  Index width = 32;
  int depth = 2;
  int steps = 100;           // J
  double lr = 1e-3;          // eta
  double ridge = 1.0;        // lambda_1
  double nu = 1.0;
  double delta = 0.1;
  double radius_floor = 0.0;
  bool warm_start = false;
  /// Full re-inversion of Z every this many rank-1 updates.
  int refresh_every = 500;
  /// Keep only diag(Z); for parameter counts where p x p storage is impractical.
  bool diagonal = false;
  /// Discounted (non-stationary) recursions. gamma_ns in (0,1).
  bool discounted = false;
  double gamma_ns = 0.99;
  double alpha_const = 1.0;
  std::uint64_t seed = 1;
};

struct UcbEstimate {
  double mean = 0.0;
  double var = 0.0;
  double ucb = 0.0;
};

class NeuralUcb {
 public:
  NeuralUcb(Index L, const UcbConfig& config);

  /// Mean, exploration width, and optimistic score at a unit-norm input.
  UcbEstimate ucb(const RealVector& x) const;
  /// Same computation without the unit-norm precondition (zero input for curvature probes).
  UcbEstimate ucb_any(const RealVector& x) const;
  /// sqrt(g^T Z^{-1} g / m) for a given gradient (stationary), or the sandwich form when discounted.
  double variance_for(const RealVector& g) const;

  /// ucb_any(...).ucb over the columns of X, sharing one Z^{-1} product.
  RealVector ucb_batch(const Eigen::MatrixXd& X) const;

  void update(const RealVector& x, double reward);

  const ReluNetwork<double>& params() const { return params_; }
  const ReluNetwork<double>& initial_params() const { return theta0_; }
  RealVector gradient(const RealVector& x) const { return grad_unchecked(params_, x); }
  const Eigen::MatrixXd& design() const { return Z_; }
  const Eigen::MatrixXd& design_inverse() const { return Z_inv_; }
  const Eigen::MatrixXd& design_tilde() const { return Z_tilde_; }
  double gamma() const { return gamma_; }
  double log_det() const { return log_det_; }
  std::size_t history_size() const { return history_x_.size(); }
  const UcbConfig& config() const { return config_; }
  Index parameter_count() const { return params_.parameter_count(); }

  /// Test hook: pin the exploration radius.
  void set_gamma(double g) { gamma_ = g; }

  void save(const std::string& path) const;
  static NeuralUcb load(const std::string& path);

 private:
  NeuralUcb() = default;
  void rank_one_update(const RealVector& g);
  void discounted_design_update(const RealVector& g);
  void refresh_inverse();
  void retrain();
  void recompute_gamma();

  UcbConfig config_;
  ReluNetwork<double> params_;
  ReluNetwork<double> theta0_;
  Eigen::MatrixXd Z_;
  Eigen::MatrixXd Z_inv_;
  Eigen::MatrixXd Z_tilde_;
  double log_det_ = 0.0;
  double gamma_ = 0.0;
  int updates_since_refresh_ = 0;
  std::vector<RealVector> history_x_;
  std::vector<double> history_r_;
};

}  // namespace msb
