#include "doctest.h"

#include <filesystem>

#include "msb/neuralucb.hpp"

using namespace msb;

namespace {

RealVector random_unit(Index L, Rng& rng) {
  RealVector x(L);
  for (Index i = 0; i < L; ++i) x[i] = standard_normal(rng);
  return x / x.norm();
}

bool near_kink(const ReluNetwork<double>& net, const RealVector& x) {
  RealVector a = net.pad(x);
  for (int l = 0; l + 1 < net.depth; ++l) {
    const RealVector z = net.layers[static_cast<std::size_t>(l)] * a;
    if ((z.array().abs() < 1e-6).any()) return true;
    a = z.cwiseMax(0.0);
  }
  return false;
}

ReluNetwork<double> perturbed(const ReluNetwork<double>& base, Rng& rng) {
  auto net = base;
  RealVector theta = net.flatten();
  for (Index i = 0; i < theta.size(); ++i) theta[i] += 0.3 * standard_normal(rng);
  net.assign(theta);
  return net;
}

}  // namespace

TEST_CASE("init_params block structure") {
  for (int depth : {2, 3, 4}) {
    const auto net = init_params(7, 8, depth, 42);
    CHECK(net.input_dim == 8);
    CHECK(net.parameter_count() == 8 * 8 + 64 * (depth - 2) + 8);
    for (int l = 0; l + 1 < depth; ++l) {
      const auto& w = net.layers[static_cast<std::size_t>(l)];
      const Index h = w.rows() / 2, c = w.cols() / 2;
      CHECK(w.topRightCorner(h, c).isZero(0.0));
      CHECK(w.bottomLeftCorner(h, c).isZero(0.0));
      CHECK(w.topLeftCorner(h, c) == w.bottomRightCorner(h, c));
    }
    const auto& last = net.layers.back();
    CHECK(last.leftCols(4) == -last.rightCols(4));
  }
  CHECK_THROWS_AS(init_params(6, 7, 2, 1), InvalidInput);
}

TEST_CASE("init_params hidden variance is 4/m") {
  const Index m = 200, L = 200;
  const auto net = init_params(L, m, 2, 7);
  const Eigen::MatrixXd block = net.layers[0].topLeftCorner(m / 2, L / 2);
  const double mean = block.mean();
  const double var = (block.array() - mean).square().sum() / static_cast<double>(block.size() - 1);
  CHECK(block.size() >= 10000);
  CHECK(var == doctest::Approx(4.0 / m).epsilon(0.2));
}

TEST_CASE("forward scales homogeneously on a positive network") {
  auto net = init_params(6, 4, 3, 1);
  for (auto& w : net.layers) w = w.cwiseAbs().array() + 0.1;
  RealVector x = RealVector::Ones(6);
  x /= x.norm();
  const double base = forward(net, x);
  auto scaled = net;
  const double c = 1.7;
  for (auto& w : scaled.layers) w *= c;
  CHECK(forward(scaled, x) == doctest::Approx(std::pow(c, 3) * base).epsilon(1e-12));
}

TEST_CASE("forward and grad require unit-norm input") {
  const auto net = init_params(4, 4, 2, 1);
  CHECK_THROWS_AS(forward(net, RealVector::Zero(4)), InvalidInput);
  CHECK_THROWS_AS(grad(net, RealVector::Ones(4)), InvalidInput);
}

TEST_CASE("backprop matches central finite differences") {
  Rng rng = make_rng(99);
  int checked = 0;
  while (checked < 100) {
    const int depth = 2 + static_cast<int>(uniform_index(rng, 3));
    const Index L = 3 + static_cast<Index>(uniform_index(rng, 6));
    auto net = perturbed(init_params(L, 6, depth, rng()), rng);
    const RealVector x = random_unit(L, rng);
    if (near_kink(net, x)) continue;
    const RealVector g = grad(net, x);
    const RealVector theta = net.flatten();
    RealVector fd(theta.size());
    const double h = 1e-5;
    for (Index i = 0; i < theta.size(); ++i) {
      RealVector tp = theta, tm = theta;
      tp[i] += h;
      tm[i] -= h;
      auto np = net, nm = net;
      np.assign(tp);
      nm.assign(tm);
      fd[i] = (forward_unchecked(np, x) - forward_unchecked(nm, x)) / (2 * h);
    }
    const double rel = (g - fd).cwiseAbs().maxCoeff() / std::max(g.cwiseAbs().maxCoeff(), 1e-12);
    CHECK(rel < 1e-4);
    ++checked;
  }
}

TEST_CASE("grad value output agrees with forward") {
  Rng rng = make_rng(5);
  const auto net = perturbed(init_params(5, 8, 3, 3), rng);
  const RealVector x = random_unit(5, rng);
  double v = 0.0;
  grad_unchecked(net, x, &v);
  CHECK(v == doctest::Approx(forward(net, x)).epsilon(1e-14));
}

TEST_CASE("ucb on a fresh state") {
  UcbConfig cfg;
  cfg.width = 8;
  cfg.ridge = 2.0;
  NeuralUcb ucb(6, cfg);
  Rng rng = make_rng(3);
  const RealVector x = random_unit(6, rng);
  const RealVector g = ucb.gradient(x);
  const auto e = ucb.ucb(x);
  CHECK(e.var == doctest::Approx(g.norm() / std::sqrt(8.0 * 2.0)));
  CHECK(e.ucb == doctest::Approx(e.mean + ucb.gamma() * e.var));
  ucb.set_gamma(0.0);
  CHECK(ucb.ucb(x).ucb == ucb.ucb(x).mean);
  CHECK_THROWS_AS(ucb.ucb(RealVector::Ones(6)), InvalidInput);
  CHECK_NOTHROW(ucb.ucb_any(RealVector::Zero(6)));
}

TEST_CASE("update shrinks the width at the observed input and keeps Z_inv consistent") {
  UcbConfig cfg;
  cfg.width = 8;
  cfg.steps = 0;
  NeuralUcb ucb(6, cfg);
  Rng rng = make_rng(4);
  const auto theta_before = ucb.params().flatten();
  for (int t = 0; t < 30; ++t) {
    const RealVector x = random_unit(6, rng);
    const double before = ucb.ucb(x).var;
    ucb.update(x, uniform01(rng));
    CHECK(ucb.ucb(x).var < before);
  }
  CHECK(ucb.params().flatten() == theta_before);
  CHECK(ucb.history_size() == 30);
  const Eigen::MatrixXd prod = ucb.design_inverse() * ucb.design();
  CHECK((prod - Eigen::MatrixXd::Identity(prod.rows(), prod.cols())).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((ucb.design() - ucb.design().transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("design updates commute") {
  UcbConfig cfg;
  cfg.width = 4;
  cfg.steps = 0;
  Rng rng = make_rng(8);
  const RealVector x1 = random_unit(4, rng), x2 = random_unit(4, rng);
  NeuralUcb a(4, cfg), b(4, cfg);
  a.update(x1, 0.1);
  a.update(x2, 0.2);
  b.update(x2, 0.2);
  b.update(x1, 0.1);
  CHECK((a.design() - b.design()).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(a.log_det() == doctest::Approx(b.log_det()).epsilon(1e-12));
  CHECK(a.gamma() == doctest::Approx(b.gamma()).epsilon(1e-12));
}

TEST_CASE("log det tracks the design matrix") {
  UcbConfig cfg;
  cfg.width = 4;
  cfg.steps = 0;
  cfg.ridge = 0.5;
  NeuralUcb ucb(5, cfg);
  Rng rng = make_rng(12);
  for (int i = 0; i < 40; ++i) ucb.update(random_unit(5, rng), 0.0);
  const double direct = std::log(ucb.design().determinant());
  CHECK(ucb.log_det() == doctest::Approx(direct).epsilon(1e-9));
}

TEST_CASE("gradient descent fits a small data set") {
  UcbConfig cfg;
  cfg.width = 16;
  cfg.steps = 400;
  cfg.lr = 5e-3;
  cfg.ridge = 1e-3;
  NeuralUcb ucb(4, cfg);
  Rng rng = make_rng(19);
  std::vector<RealVector> xs;
  RealVector beta(4);
  beta << 0.4, 0.1, 0.3, 0.2;
  for (int i = 0; i < 12; ++i) xs.push_back(random_unit(4, rng).cwiseAbs());
  for (auto& x : xs) x /= x.norm();
  for (const auto& x : xs) ucb.update(x, beta.dot(x));
  double sq = 0.0;
  for (const auto& x : xs) sq += std::pow(ucb.ucb(x).mean - beta.dot(x), 2);
  CHECK(std::sqrt(sq / 12.0) < 0.05);
}

TEST_CASE("warm start continues from the previous iterate") {
  UcbConfig cfg;
  cfg.width = 8;
  cfg.steps = 5;
  cfg.lr = 1e-2;
  cfg.warm_start = true;
  NeuralUcb warm(4, cfg);
  cfg.warm_start = false;
  NeuralUcb cold(4, cfg);
  Rng rng = make_rng(2);
  for (int i = 0; i < 5; ++i) {
    const RealVector x = random_unit(4, rng).cwiseAbs().normalized();
    warm.update(x, 0.5);
    cold.update(x, 0.5);
  }
  CHECK(warm.params().flatten() != cold.params().flatten());
}

TEST_CASE("discounted recursions: 2x2 toy and the gamma -> 1 limit") {
  Eigen::MatrixXd Z = 0.5 * Eigen::MatrixXd::Identity(2, 2), Zt = Z;
  RealVector g(2);
  g << 1.0, 2.0;
  discounted_design_step(Z, Zt, g, 2.0, 0.9, 0.5);
  // hand expansion: gamma * lambda I + g g^T / m + (1 - gamma) lambda I = lambda I + ggT/2
  Eigen::MatrixXd expected_Z(2, 2);
  expected_Z << 0.5 + 0.5, 1.0, 1.0, 0.5 + 2.0;
  Eigen::MatrixXd expected_Zt(2, 2);
  // 0.9 * 0.5 + 0.5 + 0.19 * 0.5 = 1.045 on the first diagonal entry
  expected_Zt << 0.45 + 0.5 + 0.095, 1.0, 1.0, 0.45 + 2.0 + 0.095;
  CHECK((Z - expected_Z).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((Zt - expected_Zt).cwiseAbs().maxCoeff() < 1e-15);

  Eigen::MatrixXd S = 0.5 * Eigen::MatrixXd::Identity(2, 2), D = S, Dt = S;
  for (int t = 0; t < 5; ++t) {
    RealVector gt(2);
    gt << 0.3 * t, 1.0 - 0.1 * t;
    design_step(S, gt, 2.0);
    discounted_design_step(D, Dt, gt, 2.0, 1.0, 0.5);
  }
  CHECK(D == S);
  CHECK(Dt == S);
}

TEST_CASE("discounted mode keeps both designs positive definite") {
  UcbConfig cfg;
  cfg.width = 4;
  cfg.steps = 2;
  cfg.discounted = true;
  cfg.gamma_ns = 0.8;
  cfg.alpha_const = 0.5;
  NeuralUcb ucb(4, cfg);
  Rng rng = make_rng(31);
  for (int t = 0; t < 60; ++t) {
    const RealVector x = random_unit(4, rng);
    ucb.update(x, uniform01(rng));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ez(ucb.design()), ezt(ucb.design_tilde());
    CHECK(ez.eigenvalues().minCoeff() > 0.0);
    CHECK(ezt.eigenvalues().minCoeff() > 0.0);
  }
  const RealVector x = random_unit(4, rng);
  const auto e = ucb.ucb(x);
  CHECK(e.ucb == doctest::Approx(e.mean + 0.5 * e.var));

  cfg.gamma_ns = 1.0;
  CHECK_THROWS_AS(NeuralUcb(4, cfg), InvalidInput);
  cfg.gamma_ns = 0.0;
  CHECK_THROWS_AS(NeuralUcb(4, cfg), InvalidInput);
}

TEST_CASE("diagonal design mode") {
  UcbConfig cfg;
  cfg.width = 4;
  cfg.steps = 0;
  cfg.diagonal = true;
  NeuralUcb ucb(5, cfg);
  Rng rng = make_rng(9);
  const RealVector x = random_unit(5, rng);
  const RealVector g = ucb.gradient(x);
  const double before = ucb.ucb(x).var;
  ucb.update(x, 1.0);
  CHECK(ucb.ucb(x).var < before);
  CHECK(ucb.ucb(x).var == doctest::Approx(std::sqrt((g.cwiseAbs2().array() / (1.0 + g.cwiseAbs2().array() / 4.0)).sum() / 4.0)));
}

TEST_CASE("checkpoint round trip") {
  UcbConfig cfg;
  cfg.width = 6;
  cfg.steps = 3;
  NeuralUcb ucb(5, cfg);
  Rng rng = make_rng(77);
  for (int i = 0; i < 7; ++i) ucb.update(random_unit(5, rng), uniform01(rng));
  const auto path = (std::filesystem::temp_directory_path() / "msb_ucb_checkpoint.bin").string();
  ucb.save(path);
  NeuralUcb back = NeuralUcb::load(path);
  const RealVector x = random_unit(5, rng);
  CHECK(back.ucb(x).ucb == ucb.ucb(x).ucb);
  CHECK(back.history_size() == 7);
  back.update(x, 0.3);
  ucb.update(x, 0.3);
  CHECK(back.params().flatten() == ucb.params().flatten());
}

TEST_CASE("batched ucb agrees with the single-input path") {
  Rng rng = make_rng(77);
  for (int variant = 0; variant < 3; ++variant) {
    UcbConfig cfg;
    cfg.width = 8;
    cfg.steps = 5;
    cfg.diagonal = variant == 1;
    cfg.discounted = variant == 2;
    NeuralUcb ucb(6, cfg);
    for (int t = 0; t < 10; ++t) ucb.update(random_unit(6, rng), uniform01(rng));
    Eigen::MatrixXd X(6, 5);
    for (Index c = 0; c < 4; ++c) X.col(c) = random_unit(6, rng);
    X.col(4).setZero();
    const RealVector u = ucb.ucb_batch(X);
    for (Index c = 0; c < 5; ++c) CHECK(u[c] == doctest::Approx(ucb.ucb_any(X.col(c)).ucb).epsilon(1e-10));
  }
}
