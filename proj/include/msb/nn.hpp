#pragma once

// Small fully connected networks with hand-written backprop and Adam, used by
// the actor-critic and attention samplers. Batches are column-major: each
// column of the input is one sample.

#include <cmath>
#include <vector>

#include "msb/core.hpp"
#include "msb/random.hpp"

namespace msb {

enum class Activation { identity, tanh, sigmoid, relu };

template <typename Scalar>
using DynMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using DynVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
DynMatrix<Scalar> activate(const DynMatrix<Scalar>& z, Activation a) {
  switch (a) {
    case Activation::tanh:
      return z.array().tanh().matrix();
    case Activation::sigmoid:
      return (Scalar(1) / (Scalar(1) + (-z.array()).exp())).matrix();
    case Activation::relu:
      return z.cwiseMax(Scalar(0));
    case Activation::identity:
      break;
  }
  return z;
}

/// d activation / dz expressed through the activation output y.
template <typename Scalar>
DynMatrix<Scalar> activate_derivative(const DynMatrix<Scalar>& y, Activation a) {
  switch (a) {
    case Activation::tanh:
      return (Scalar(1) - y.array().square()).matrix();
    case Activation::sigmoid:
      return (y.array() * (Scalar(1) - y.array())).matrix();
    case Activation::relu:
      return (y.array() > Scalar(0)).template cast<Scalar>().matrix();
    case Activation::identity:
      break;
  }
  return DynMatrix<Scalar>::Ones(y.rows(), y.cols());
}

template <typename Scalar>
struct DenseLayer {
  DynMatrix<Scalar> W;
  DynVector<Scalar> b;
  Activation act = Activation::identity;
};

template <typename Scalar>
struct MlpGradients {
  std::vector<DynMatrix<Scalar>> dW;
  std::vector<DynVector<Scalar>> db;

  void scale(Scalar s) {
    for (auto& w : dW) w *= s;
    for (auto& b : db) b *= s;
  }
};

template <typename Scalar>
class Mlp {
 public:
  using Matrix = DynMatrix<Scalar>;
  using Vector = DynVector<Scalar>;

  /// Activations remembered by a forward pass, consumed by backward().
  struct Tape {
    std::vector<Matrix> inputs;
    Matrix output;
  };

  Mlp() = default;

  /// sizes = {in, hidden..., out}; Glorot-uniform weights, zero biases.
  Mlp(const std::vector<Index>& sizes, Activation hidden, Activation out, Rng& rng) {
    if (sizes.size() < 2) throw InvalidInput("Mlp: need at least input and output sizes");
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      DenseLayer<Scalar> layer;
      const Index fan_in = sizes[l], fan_out = sizes[l + 1];
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      layer.W.resize(fan_out, fan_in);
      for (Index i = 0; i < layer.W.size(); ++i)
        layer.W.data()[i] = static_cast<Scalar>((2.0 * uniform01(rng) - 1.0) * limit);
      layer.b = Vector::Zero(fan_out);
      layer.act = (l + 2 == sizes.size()) ? out : hidden;
      layers.push_back(std::move(layer));
    }
  }

  Index input_size() const { return layers.front().W.cols(); }
  Index output_size() const { return layers.back().W.rows(); }

  Matrix forward(const Matrix& X) const {
    Matrix a = X;
    for (const auto& layer : layers) a = activate<Scalar>((layer.W * a).colwise() + layer.b, layer.act);
    return a;
  }

  Matrix forward(const Matrix& X, Tape& tape) const {
    tape.inputs.clear();
    Matrix a = X;
    for (const auto& layer : layers) {
      tape.inputs.push_back(a);
      a = activate<Scalar>((layer.W * a).colwise() + layer.b, layer.act);
    }
    tape.output = a;
    return a;
  }

  /// Gradients of sum_c dY(:, c) . Y(:, c); dX receives the input gradient if given.
  MlpGradients<Scalar> backward(const Tape& tape, const Matrix& dY, Matrix* dX = nullptr) const {
    MlpGradients<Scalar> g;
    g.dW.resize(layers.size());
    g.db.resize(layers.size());
    Matrix y = tape.output;
    Matrix delta = dY;
    for (std::size_t l = layers.size(); l-- > 0;) {
      delta = delta.cwiseProduct(activate_derivative<Scalar>(y, layers[l].act));
      g.dW[l] = delta * tape.inputs[l].transpose();
      g.db[l] = delta.rowwise().sum();
      if (l > 0 || dX) delta = layers[l].W.transpose() * delta;
      if (l > 0) y = tape.inputs[l];
    }
    if (dX) *dX = delta;
    return g;
  }

  /// this <- (1 - tau) * this + tau * source, entrywise.
  void soft_update_from(const Mlp& source, Scalar tau) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      layers[l].W = (Scalar(1) - tau) * layers[l].W + tau * source.layers[l].W;
      layers[l].b = (Scalar(1) - tau) * layers[l].b + tau * source.layers[l].b;
    }
  }

  std::vector<DenseLayer<Scalar>> layers;
};

template <typename Scalar>
class Adam {
 public:
  Adam() = default;
  Adam(const Mlp<Scalar>& net, Scalar lr, Scalar beta1 = Scalar(0.9), Scalar beta2 = Scalar(0.999),
       Scalar eps = Scalar(1e-8))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& layer : net.layers) {
      mW_.push_back(DynMatrix<Scalar>::Zero(layer.W.rows(), layer.W.cols()));
      vW_.push_back(mW_.back());
      mb_.push_back(DynVector<Scalar>::Zero(layer.b.size()));
      vb_.push_back(mb_.back());
    }
  }

  Scalar learning_rate() const { return lr_; }
  void set_learning_rate(Scalar lr) { lr_ = lr; }

  /// Descent step: params -= lr * m_hat / (sqrt(v_hat) + eps).
  void step(Mlp<Scalar>& net, const MlpGradients<Scalar>& g) {
    ++t_;
    using std::pow;
    const Scalar c1 = Scalar(1) - pow(beta1_, Scalar(t_));
    const Scalar c2 = Scalar(1) - pow(beta2_, Scalar(t_));
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      update(net.layers[l].W, mW_[l], vW_[l], g.dW[l], c1, c2);
      update(net.layers[l].b, mb_[l], vb_[l], g.db[l], c1, c2);
    }
  }

 private:
  template <typename P, typename G>
  void update(P& p, P& m, P& v, const G& g, Scalar c1, Scalar c2) {
    m = beta1_ * m + (Scalar(1) - beta1_) * g;
    v = beta2_ * v + (Scalar(1) - beta2_) * g.cwiseProduct(g);
    p.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
  }

  Scalar lr_ = Scalar(1e-3);
  Scalar beta1_ = Scalar(0.9);
  Scalar beta2_ = Scalar(0.999);
  Scalar eps_ = Scalar(1e-8);
  long t_ = 0;
  std::vector<DynMatrix<Scalar>> mW_, vW_;
  std::vector<DynVector<Scalar>> mb_, vb_;
};

/// Plain gradient descent: params -= lr * grad.
template <typename Scalar>
void sgd_step(Mlp<Scalar>& net, const MlpGradients<Scalar>& g, Scalar lr) {
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    net.layers[l].W -= lr * g.dW[l];
    net.layers[l].b -= lr * g.db[l];
  }
}

/// Mean binary cross-entropy with predictions clipped to [clip_eps, 1 - clip_eps].
inline double binary_cross_entropy(const RealVector& p, const RealVector& target, double clip_eps = 1e-6) {
  if (p.size() != target.size()) throw InvalidInput("binary_cross_entropy: length mismatch");
  const RealVector q = clip(p, clip_eps, 1.0 - clip_eps);
  return -(target.array() * q.array().log() + (1.0 - target.array()) * (1.0 - q.array()).log()).mean();
}

}  // namespace msb
