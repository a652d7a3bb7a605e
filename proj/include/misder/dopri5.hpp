#pragma once

#include <functional>
#include <span>
#include <vector>

#include "misder/autodiff.hpp"

namespace misder::ode {

struct IntegrationConfig {
  double rtol = 1e-6;
  double atol = 1e-8;
  int max_steps = 10000;
  double first_step = 0.0;  // 0 = automatic
};

/// Right-hand side dz/dt = f(z, t), recorded on the caller's graph.
using Field = std::function<Var(Graph&, Var z, double t)>;

/// Accepted steps of one integration. Replaying a trace reruns exactly these
/// steps with no error control, which keeps finite-difference checks on the
/// same discretization as the recorded gradient.
struct StepTrace {
  std::vector<double> starts;
  std::vector<double> sizes;
  int rejected = 0;
  int field_evals = 0;

  std::size_t accepted() const { return starts.size(); }
  bool operator==(const StepTrace&) const = default;
};

struct Solution {
  Var end;                 // z(t1)
  std::vector<Var> dense;  // z at each requested time
  StepTrace trace;
};

/// Dormand-Prince 5(4) with FSAL, PI step control and 4th-order dense output.
/// `dense_times` must be non-decreasing and lie in [t0, t1]. Rejected steps
/// are rewound off the tape, so gradients flow only through accepted steps.
Solution dopri5(Graph& g, const Field& f, Var z0, double t0, double t1, const IntegrationConfig& cfg = {},
                std::span<const double> dense_times = {}, const StepTrace* replay = nullptr);

/// Value-only convenience wrapper.
Matrix integrate(const std::function<Matrix(const Matrix&, double)>& f, const Matrix& z0, double t0, double t1,
                 const IntegrationConfig& cfg = {}, StepTrace* trace = nullptr);

}  // namespace misder::ode
