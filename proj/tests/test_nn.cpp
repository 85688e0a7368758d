#include "doctest.h"

#include "msb/nn.hpp"

using namespace msb;

namespace {

// Central-difference check of sum(weights .* net(X)) against backward().
double max_rel_error(Mlp<double> net, const Eigen::MatrixXd& X, const Eigen::MatrixXd& weights) {
  Mlp<double>::Tape tape;
  net.forward(X, tape);
  Eigen::MatrixXd dX;
  const auto g = net.backward(tape, weights, &dX);
  auto loss = [&](const Mlp<double>& n, const Eigen::MatrixXd& in) { return n.forward(in).cwiseProduct(weights).sum(); };
  double worst = 0.0;
  const double h = 1e-6;
  auto compare = [&](double analytic, double numeric) {
    const double denom = std::max(1e-6, std::abs(analytic) + std::abs(numeric));
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  };
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    for (Index i = 0; i < net.layers[l].W.size(); ++i) {
      const double keep = net.layers[l].W.data()[i];
      net.layers[l].W.data()[i] = keep + h;
      const double up = loss(net, X);
      net.layers[l].W.data()[i] = keep - h;
      const double down = loss(net, X);
      net.layers[l].W.data()[i] = keep;
      compare(g.dW[l].data()[i], (up - down) / (2 * h));
    }
    for (Index i = 0; i < net.layers[l].b.size(); ++i) {
      const double keep = net.layers[l].b[i];
      net.layers[l].b[i] = keep + h;
      const double up = loss(net, X);
      net.layers[l].b[i] = keep - h;
      const double down = loss(net, X);
      net.layers[l].b[i] = keep;
      compare(g.db[l][i], (up - down) / (2 * h));
    }
  }
  for (Index i = 0; i < X.size(); ++i) {
    Eigen::MatrixXd Xp = X, Xm = X;
    Xp.data()[i] += h;
    Xm.data()[i] -= h;
    compare(dX.data()[i], (loss(net, Xp) - loss(net, Xm)) / (2 * h));
  }
  return worst;
}

}  // namespace

TEST_CASE("backprop matches finite differences for each activation") {
  Rng rng = make_rng(4);
  for (auto hidden : {Activation::tanh, Activation::sigmoid}) {
    for (auto out : {Activation::identity, Activation::sigmoid, Activation::tanh}) {
      Mlp<double> net({5, 7, 6, 3}, hidden, out, rng);
      Eigen::MatrixXd X = Eigen::MatrixXd::Random(5, 4);
      Eigen::MatrixXd W = Eigen::MatrixXd::Random(3, 4);
      CHECK(max_rel_error(net, X, W) < 1e-5);
    }
  }
}

TEST_CASE("soft update interpolates entrywise") {
  Rng rng = make_rng(5);
  Mlp<double> a({3, 4, 2}, Activation::tanh, Activation::identity, rng);
  Mlp<double> b({3, 4, 2}, Activation::tanh, Activation::identity, rng);
  Mlp<double> mixed = a;
  mixed.soft_update_from(b, 0.01);
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    CHECK((mixed.layers[l].W - (0.99 * a.layers[l].W + 0.01 * b.layers[l].W)).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((mixed.layers[l].b - (0.99 * a.layers[l].b + 0.01 * b.layers[l].b)).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("Adam fits a small regression") {
  Rng rng = make_rng(6);
  Mlp<double> net({2, 16, 1}, Activation::tanh, Activation::identity, rng);
  Adam<double> opt(net, 1e-2);
  Eigen::MatrixXd X = Eigen::MatrixXd::Random(2, 32);
  Eigen::MatrixXd y = (X.row(0).array() * 0.5 - X.row(1).array() * 0.3).matrix();
  double first = 0.0, last = 0.0;
  for (int it = 0; it < 500; ++it) {
    Mlp<double>::Tape tape;
    const Eigen::MatrixXd r = net.forward(X, tape) - y;
    const double loss = r.squaredNorm() / 32.0;
    if (it == 0) first = loss;
    last = loss;
    opt.step(net, net.backward(tape, 2.0 * r / 32.0));
  }
  CHECK(last < 0.01 * first);
}

TEST_CASE("binary cross-entropy values") {
  CHECK(binary_cross_entropy(RealVector::Constant(4, 0.5), RealVector::Ones(4)) == doctest::Approx(std::log(2.0)));
  RealVector p(2), t(2);
  p << 0.9, 0.2;
  t << 1, 0;
  CHECK(binary_cross_entropy(p, t) == doctest::Approx((-std::log(0.9) - std::log(0.8)) / 2));
}
