#include "misder/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace misder {

double bce_loss(double p, int y) {
  if (!std::isfinite(p)) throw Error("invalid probability");
  if (y != 0 && y != 1) throw Error("bce_loss: label must be 0 or 1");
  const double q = std::clamp(p, 1e-7, 1.0 - 1e-7);
  return y == 1 ? -std::log(q) : -std::log(1.0 - q);
}

double l1_loss(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error("l1_loss: shape mismatch");
  if (a.size() == 0) throw Error("l1_loss: empty input");
  return (a - b).cwiseAbs().sum() / static_cast<double>(a.size());
}

void adam_step(ParamTensor& group, AdamState& state, double lr, const AdamConfig& cfg) {
  if (group.frozen) {
    ++state.frozen_skips;
    return;
  }
  if (state.step_count == 0 || state.first_moment.size() != group.values.size()) {
    state.first_moment = Matrix::Zero(group.values.rows(), group.values.cols());
    state.second_moment = Matrix::Zero(group.values.rows(), group.values.cols());
  }
  ++state.step_count;
  Matrix g = group.grad;
  if (cfg.weight_decay > 0.0) g += cfg.weight_decay * group.values;
  state.first_moment = cfg.beta1 * state.first_moment + (1.0 - cfg.beta1) * g;
  state.second_moment = cfg.beta2 * state.second_moment + (1.0 - cfg.beta2) * g.cwiseProduct(g);
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  group.values.array() -=
      lr * (state.first_moment.array() / c1) / ((state.second_moment.array() / c2).sqrt() + cfg.epsilon);
}

Adam::Adam(std::vector<ParamTensor*> params, double lr, AdamConfig cfg, double clip_norm)
    : params_(std::move(params)), states_(params_.size()), lr_(lr), cfg_(cfg), clip_norm_(clip_norm) {}

void Adam::zero_grad() {
  for (ParamTensor* p : params_) p->zero_grad();
}

void Adam::step() {
  if (clip_norm_ > 0.0) {
    double sq = 0.0;
    for (const ParamTensor* p : params_) {
      if (!p->frozen) sq += p->grad.squaredNorm();
    }
    const double norm = std::sqrt(sq);
    if (norm > clip_norm_) {
      for (ParamTensor* p : params_) p->grad *= clip_norm_ / norm;
    }
  }
  for (std::size_t i = 0; i < params_.size(); ++i) adam_step(*params_[i], states_[i], lr_, cfg_);
}

constexpr double kMinFdEps = 1e-6;

double grad_check(const LossBuilder& loss_fn, std::span<ParamTensor* const> params, const GradCheckOptions& opts) {
  if (opts.fd_eps < kMinFdEps || opts.fd_eps > 1e-3) throw Error("grad_check: fd_eps must lie in [1e-6, 1e-3]");
  for (ParamTensor* p : params) p->zero_grad();
  {
    Graph g;
    Var loss = loss_fn(g);
    if (!std::isfinite(loss.scalar())) throw Error("grad_check: non-finite loss");
    g.backward(loss);
  }
  auto eval = [&]() {
    Graph g;
    const double v = loss_fn(g).scalar();
    if (!std::isfinite(v)) throw Error("grad_check: non-finite loss");
    return v;
  };
  std::mt19937_64 rng(opts.seed);
  double worst = 0.0;
  for (ParamTensor* p : params) {
    if (p->frozen || p->size() == 0) continue;
    const Eigen::Index n = p->values.size();
    std::vector<Eigen::Index> coords;
    if (static_cast<std::size_t>(n) <= opts.max_coords_per_tensor) {
      for (Eigen::Index i = 0; i < n; ++i) coords.push_back(i);
    } else {
      std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
      for (std::size_t i = 0; i < opts.max_coords_per_tensor; ++i) coords.push_back(pick(rng));
    }
    for (Eigen::Index c : coords) {
      double& x = p->values.data()[c];
      const double saved = x;
      double noise = 0.0;  // rounding bound of the latest central difference
      auto central = [&](double step) {
        x = saved + step;
        const double up = eval();
        x = saved - step;
        const double down = eval();
        x = saved;
        noise = std::numeric_limits<double>::epsilon() * std::max(std::abs(up), std::abs(down)) / step;
        return (up - down) / (2.0 * step);
      };
      // A probe that straddles a kink (ReLU, |x|, clamp) disagrees with the
      // same probe taken closer in; shrink until two scales agree.
      double step = opts.fd_eps;
      double fd = central(step);
      double fd_noise = noise;
      while (step / 10.0 >= kMinFdEps) {
        const double closer = central(step / 10.0);
        if (std::abs(closer - fd) <= 1e-6 * std::max(std::abs(closer), std::abs(fd)) + 1e-9) break;
        fd = closer;
        fd_noise = noise;
        step /= 10.0;
      }
      noise = fd_noise;
      const double ad = p->grad.data()[c];
      const double denom = std::max({std::abs(fd), std::abs(ad), 1e-8});
      // Differences within the loss's rounding level are not resolvable.
      worst = std::max(worst, std::max(0.0, std::abs(fd - ad) - noise) / denom);
    }
  }
  return worst;
}

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace misder
