#include "msb/neuralucb.hpp"

#include <cmath>
#include <fstream>

namespace msb {

ReluNetwork<double> init_params(Index L, Index m, int depth, std::uint64_t seed) {
  if (m < 2 || m % 2 != 0) throw InvalidInput("init_params: hidden width m must be even and >= 2");
  if (depth < 2) throw InvalidInput("init_params: depth must be >= 2");
  if (L < 1) throw InvalidInput("init_params: L must be >= 1");
  Rng rng = make_rng(seed, 0x55cb);
  ReluNetwork<double> net;
  net.arm_count = L;
  net.input_dim = L + (L % 2);
  net.width = m;
  net.depth = depth;
  const Index half = m / 2;
  const double hidden_sd = std::sqrt(4.0 / static_cast<double>(m));
  const double last_sd = std::sqrt(2.0 / static_cast<double>(m));
  for (int l = 0; l + 1 < depth; ++l) {
    const Index in = l == 0 ? net.input_dim : m;
    const Index in_half = in / 2;
    Eigen::MatrixXd block(half, in_half);
    for (Index j = 0; j < in_half; ++j)
      for (Index i = 0; i < half; ++i) block(i, j) = hidden_sd * standard_normal(rng);
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(m, in);
    w.topLeftCorner(half, in_half) = block;
    w.bottomRightCorner(half, in_half) = block;
    net.layers.push_back(std::move(w));
  }
  Eigen::RowVectorXd half_w(half);
  for (Index i = 0; i < half; ++i) half_w[i] = last_sd * standard_normal(rng);
  Eigen::MatrixXd last(1, m);
  last.leftCols(half) = half_w;
  last.rightCols(half) = -half_w;
  net.layers.push_back(std::move(last));
  return net;
}

void require_unit_norm(const RealVector& x) {
  if (std::abs(x.norm() - 1.0) > 1e-6) throw InvalidInput("input must have unit Euclidean norm");
}

double forward(const ReluNetwork<double>& net, const RealVector& x) {
  require_unit_norm(x);
  return forward_unchecked(net, x);
}

RealVector grad(const ReluNetwork<double>& net, const RealVector& x) {
  require_unit_norm(x);
  return grad_unchecked(net, x);
}

namespace {

/// Weighted least-squares loss gradient over a batch stored column-wise.
///   sum_i w_i (h(x_i) - r_i)^2 / 2
RealVector batch_loss_gradient(const ReluNetwork<double>& net, const Eigen::MatrixXd& X, const RealVector& r,
                               const RealVector& weights) {
  const auto D = static_cast<std::size_t>(net.depth);
  std::vector<Eigen::MatrixXd> acts(D);
  std::vector<Eigen::MatrixXd> pre(D - 1);
  acts[0] = X;
  for (std::size_t l = 0; l + 1 < D; ++l) {
    pre[l] = net.layers[l] * acts[l];
    acts[l + 1] = pre[l].cwiseMax(0.0);
  }
  const double scale = std::sqrt(static_cast<double>(net.width));
  const Eigen::RowVectorXd out = scale * (net.layers.back() * acts[D - 1]);
  const Eigen::RowVectorXd resid = (out - r.transpose()).cwiseProduct(weights.transpose());

  RealVector g(net.parameter_count());
  std::vector<Index> offsets(D);
  Index off = 0;
  for (std::size_t l = 0; l < D; ++l) {
    offsets[l] = off;
    off += net.layers[l].size();
  }
  g.segment(offsets[D - 1], net.width) = scale * (acts[D - 1] * resid.transpose());
  Eigen::MatrixXd delta = scale * net.layers.back().transpose() * resid;
  for (std::size_t l = D - 1; l-- > 0;) {
    delta = delta.cwiseProduct((pre[l].array() > 0.0).cast<double>().matrix());
    const auto& w = net.layers[l];
    Eigen::Map<Eigen::MatrixXd>(g.data() + offsets[l], w.rows(), w.cols()) = delta * acts[l].transpose();
    if (l > 0) delta = w.transpose() * delta;
  }
  return g;
}

}  // namespace

NeuralUcb::NeuralUcb(Index L, const UcbConfig& config) : config_(config) {
  if (!(config.ridge > 0.0)) throw InvalidInput("NeuralUcb: ridge lambda_1 must be > 0");
  if (config.steps < 0) throw InvalidInput("NeuralUcb: steps must be >= 0");
  if (config.discounted && !(config.gamma_ns > 0.0 && config.gamma_ns < 1.0)) {
    throw InvalidInput("NeuralUcb: gamma_ns must lie in (0,1)");
  }
  if (config.discounted && config.diagonal) throw InvalidInput("NeuralUcb: discounted mode needs the full design");
  params_ = init_params(L, config.width, config.depth, config.seed);
  theta0_ = params_;
  const Index p = params_.parameter_count();
  if (config.diagonal) {
    Z_ = Eigen::MatrixXd::Constant(p, 1, config.ridge);
    Z_inv_ = Eigen::MatrixXd::Constant(p, 1, 1.0 / config.ridge);
  } else {
    Z_ = config.ridge * Eigen::MatrixXd::Identity(p, p);
    Z_inv_ = Eigen::MatrixXd::Identity(p, p) / config.ridge;
  }
  if (config.discounted) Z_tilde_ = Z_;
  log_det_ = static_cast<double>(p) * std::log(config.ridge);
  recompute_gamma();
}

double NeuralUcb::variance_for(const RealVector& g) const {
  const double m = static_cast<double>(params_.width);
  double q = 0.0;
  if (config_.diagonal) {
    q = g.cwiseAbs2().cwiseProduct(Z_inv_.col(0)).sum();
  } else if (config_.discounted) {
    const RealVector y = Z_inv_ * g;
    q = y.dot(Z_tilde_ * y);
  } else {
    q = g.dot(Z_inv_ * g);
  }
  return std::sqrt(std::max(q, 0.0) / m);
}

UcbEstimate NeuralUcb::ucb_any(const RealVector& x) const {
  UcbEstimate e;
  const RealVector g = grad_unchecked(params_, x, &e.mean);
  e.var = variance_for(g);
  e.ucb = e.mean + gamma_ * e.var;
  return e;
}

UcbEstimate NeuralUcb::ucb(const RealVector& x) const {
  require_unit_norm(x);
  return ucb_any(x);
}

RealVector NeuralUcb::ucb_batch(const Eigen::MatrixXd& X) const {
  const Index n = X.cols();
  Eigen::MatrixXd G(params_.parameter_count(), n);
  RealVector mean(n);
  for (Index c = 0; c < n; ++c) G.col(c) = grad_unchecked(params_, RealVector(X.col(c)), &mean[c]);
  RealVector q(n);
  if (config_.diagonal) {
    q = G.cwiseAbs2().transpose() * Z_inv_.col(0);
  } else if (config_.discounted) {
    const Eigen::MatrixXd Y = Z_inv_ * G;
    q = (Y.cwiseProduct(Z_tilde_ * Y)).colwise().sum().transpose();
  } else {
    const Eigen::MatrixXd Y = Z_inv_ * G;
    q = (G.cwiseProduct(Y)).colwise().sum().transpose();
  }
  const double m = static_cast<double>(params_.width);
  return mean + gamma_ * (q.cwiseMax(0.0) / m).cwiseSqrt();
}

void NeuralUcb::rank_one_update(const RealVector& g) {
  const double m = static_cast<double>(params_.width);
  if (config_.diagonal) {
    Z_.col(0) += g.cwiseAbs2() / m;
    Z_inv_.col(0) = Z_.col(0).cwiseInverse();
    log_det_ = Z_.col(0).array().log().sum();
    return;
  }
  const RealVector zg = Z_inv_ * g;
  const double denom = m + g.dot(zg);
  design_step(Z_, g, m);
  Z_inv_.noalias() -= zg * zg.transpose() / denom;
  log_det_ += std::log1p(g.dot(zg) / m);
  if (++updates_since_refresh_ >= config_.refresh_every) refresh_inverse();
}

void NeuralUcb::discounted_design_update(const RealVector& g) {
  discounted_design_step(Z_, Z_tilde_, g, static_cast<double>(params_.width), config_.gamma_ns, config_.ridge);
  refresh_inverse();
}

void NeuralUcb::refresh_inverse() {
  updates_since_refresh_ = 0;
  if (config_.diagonal) return;
  Eigen::LLT<Eigen::MatrixXd> llt(Z_);
  if (llt.info() != Eigen::Success) throw std::runtime_error("NeuralUcb: design matrix lost positive definiteness");
  Z_inv_ = llt.solve(Eigen::MatrixXd::Identity(Z_.rows(), Z_.cols()));
  const Eigen::MatrixXd& Lf = llt.matrixLLT();
  log_det_ = 2.0 * Lf.diagonal().array().log().sum();
}

void NeuralUcb::recompute_gamma() {
  if (config_.discounted) {
    // the radius order is left open for the discounted recursion; a tunable constant stands in
    gamma_ = config_.alpha_const;
    return;
  }
  const double p = static_cast<double>(params_.parameter_count());
  const double inside = log_det_ - p * std::log(config_.ridge) + 2.0 * std::log(1.0 / config_.delta);
  gamma_ = config_.nu * std::sqrt(std::max(inside, 0.0)) + config_.radius_floor;
}

void NeuralUcb::retrain() {
  const std::size_t n = history_x_.size();
  if (config_.steps == 0 || n == 0) return;
  Eigen::MatrixXd X(params_.input_dim, static_cast<Index>(n));
  RealVector r(static_cast<Index>(n));
  RealVector w = RealVector::Ones(static_cast<Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    X.col(static_cast<Index>(i)) = params_.pad(history_x_[i]);
    r[static_cast<Index>(i)] = history_r_[i];
  }
  if (config_.discounted) {
    // gamma^{-i} weights rescaled by gamma^t: the most recent sample weighs 1.
    for (std::size_t i = 0; i < n; ++i) w[static_cast<Index>(i)] = std::pow(config_.gamma_ns, double(n - 1 - i));
  }
  const RealVector theta0 = theta0_.flatten();
  RealVector theta = config_.warm_start ? params_.flatten() : theta0;
  const double ridge = static_cast<double>(params_.width) * config_.ridge;
  ReluNetwork<double> work = params_;
  for (int j = 0; j < config_.steps; ++j) {
    work.assign(theta);
    const RealVector g = batch_loss_gradient(work, X, r, w) + ridge * (theta - theta0);
    theta -= config_.lr * g;
  }
  params_.assign(theta);
}

void NeuralUcb::update(const RealVector& x, double reward) {
  require_unit_norm(x);
  const RealVector g = grad_unchecked(params_, x);
  if (config_.discounted) {
    discounted_design_update(g);
  } else {
    rank_one_update(g);
  }
  history_x_.push_back(x);
  history_r_.push_back(reward);
  retrain();
  recompute_gamma();
}

namespace {

constexpr char kMagic[8] = {'M', 'S', 'B', 'U', 'C', 'B', '0', '1'};

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw InvalidInput("checkpoint truncated");
  return v;
}
void put_matrix(std::ofstream& out, const Eigen::MatrixXd& m) {
  put<std::int64_t>(out, m.rows());
  put<std::int64_t>(out, m.cols());
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
}
Eigen::MatrixXd get_matrix(std::ifstream& in) {
  const auto rows = get<std::int64_t>(in);
  const auto cols = get<std::int64_t>(in);
  if (rows < 0 || cols < 0) throw InvalidInput("checkpoint: bad matrix shape");
  Eigen::MatrixXd m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!in) throw InvalidInput("checkpoint truncated");
  return m;
}

}  // namespace

void NeuralUcb::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  put<std::int64_t>(out, params_.arm_count);
  put<std::int64_t>(out, config_.width);
  put<std::int32_t>(out, config_.depth);
  put<std::int32_t>(out, config_.steps);
  put(out, config_.lr);
  put(out, config_.ridge);
  put(out, config_.nu);
  put(out, config_.delta);
  put(out, config_.radius_floor);
  put<std::uint8_t>(out, config_.warm_start);
  put<std::int32_t>(out, config_.refresh_every);
  put<std::uint8_t>(out, config_.diagonal);
  put<std::uint8_t>(out, config_.discounted);
  put(out, config_.gamma_ns);
  put(out, config_.alpha_const);
  put(out, config_.seed);
  put_matrix(out, params_.flatten());
  put_matrix(out, theta0_.flatten());
  put_matrix(out, Z_);
  put_matrix(out, Z_inv_);
  put_matrix(out, Z_tilde_);
  put(out, log_det_);
  put(out, gamma_);
  put<std::int32_t>(out, updates_since_refresh_);
  put<std::int64_t>(out, static_cast<std::int64_t>(history_x_.size()));
  for (std::size_t i = 0; i < history_x_.size(); ++i) {
    put_matrix(out, history_x_[i]);
    put(out, history_r_[i]);
  }
}

NeuralUcb NeuralUcb::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(magic, magic + 8, kMagic)) throw InvalidInput("not a checkpoint file: " + path);
  NeuralUcb s;
  const auto L = get<std::int64_t>(in);
  s.config_.width = get<std::int64_t>(in);
  s.config_.depth = get<std::int32_t>(in);
  s.config_.steps = get<std::int32_t>(in);
  s.config_.lr = get<double>(in);
  s.config_.ridge = get<double>(in);
  s.config_.nu = get<double>(in);
  s.config_.delta = get<double>(in);
  s.config_.radius_floor = get<double>(in);
  s.config_.warm_start = get<std::uint8_t>(in) != 0;
  s.config_.refresh_every = get<std::int32_t>(in);
  s.config_.diagonal = get<std::uint8_t>(in) != 0;
  s.config_.discounted = get<std::uint8_t>(in) != 0;
  s.config_.gamma_ns = get<double>(in);
  s.config_.alpha_const = get<double>(in);
  s.config_.seed = get<std::uint64_t>(in);
  s.params_ = init_params(L, s.config_.width, s.config_.depth, s.config_.seed);
  s.theta0_ = s.params_;
  s.params_.assign(get_matrix(in).col(0));
  s.theta0_.assign(get_matrix(in).col(0));
  s.Z_ = get_matrix(in);
  s.Z_inv_ = get_matrix(in);
  s.Z_tilde_ = get_matrix(in);
  s.log_det_ = get<double>(in);
  s.gamma_ = get<double>(in);
  s.updates_since_refresh_ = get<std::int32_t>(in);
  const auto n = get<std::int64_t>(in);
  for (std::int64_t i = 0; i < n; ++i) {
    s.history_x_.push_back(get_matrix(in).col(0));
    s.history_r_.push_back(get<double>(in));
  }
  return s;
}

}  // namespace msb
