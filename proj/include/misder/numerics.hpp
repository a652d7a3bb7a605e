#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "misder/autodiff.hpp"

namespace misder {

/// Binary cross-entropy of one probability, clamped to [1e-7, 1 - 1e-7].
double bce_loss(double p, int y);

/// Element-mean absolute difference.
double l1_loss(const Matrix& a, const Matrix& b);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  // off unless configured
};

struct AdamState {
  std::size_t step_count = 0;
  Matrix first_moment;
  Matrix second_moment;
  std::size_t frozen_skips = 0;
};

/// One bias-corrected Adam update of `group` from its accumulated grad.
/// Frozen groups are left untouched and bump `state.frozen_skips`.
void adam_step(ParamTensor& group, AdamState& state, double lr, const AdamConfig& cfg = {});

/// Adam over a fixed list of parameter tensors with optional global-norm
/// gradient clipping (clip_norm <= 0 disables it).
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<ParamTensor*> params, double lr, AdamConfig cfg = {}, double clip_norm = 0.0);

  void zero_grad();
  void step();

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  const std::vector<AdamState>& states() const { return states_; }

 private:
  std::vector<ParamTensor*> params_;
  std::vector<AdamState> states_;
  double lr_ = 1e-3;
  AdamConfig cfg_;
  double clip_norm_ = 0.0;
};

struct GradCheckOptions {
  double fd_eps = 1e-4;
  std::size_t max_coords_per_tensor = 24;
  std::uint64_t seed = 0;
};

/// Builds a scalar loss on the given graph from the current parameter values.
using LossBuilder = std::function<Var(Graph&)>;

/// Central finite differences against reverse-mode gradients on sampled
/// coordinates of every non-frozen tensor in `params`; the step shrinks
/// toward 1e-6 when a probe straddles a kink. Returns the largest
/// relative error, with denominator max(|fd|, |ad|, 1e-8), after discounting
/// the rounding bound eps·|loss|/step of the difference quotient.
double grad_check(const LossBuilder& loss_fn, std::span<ParamTensor* const> params, const GradCheckOptions& opts = {});

/// Deterministic initializers.
Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, std::mt19937_64& rng);
Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng);

bool all_finite(const Matrix& m);

}  // namespace misder
