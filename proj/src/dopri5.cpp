#include "misder/dopri5.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "misder/ops.hpp"

namespace misder::ode {
namespace {

constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784, a76 = 11.0 / 84;
// 5th minus 4th order weights.
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200, e6 = 22.0 / 525,
                 e7 = -1.0 / 40;
// Dense output (Hairer & Wanner, dopri5 contd5).
constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                 d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                 d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

constexpr double kSafety = 0.9;
constexpr double kMinFactor = 0.2;
constexpr double kMaxFactor = 10.0;
constexpr double kBeta = 0.04;
constexpr double kExpo = 0.2 - 0.75 * kBeta;

struct Evaluator {
  Graph& g;
  const Field& f;
  int evals = 0;

  Var operator()(Var z, double t) {
    ++evals;
    Var k = f(g, z, t);
    if (k.rows() != z.rows() || k.cols() != z.cols()) throw Error("dopri5: field changed the state shape");
    if (!k.value().allFinite()) {
      std::ostringstream msg;
      msg << "dopri5: non-finite field output at t=" << t;
      throw Error(msg.str());
    }
    return k;
  }
};

double rms(const Matrix& m) { return std::sqrt(m.squaredNorm() / static_cast<double>(m.size())); }

double initial_step(Evaluator& eval, Var z0, Var k1, double t0, double span, const IntegrationConfig& cfg) {
  // Copies: pushing onto the tape may move node storage.
  const Matrix y0 = z0.value();
  const Matrix f0 = k1.value();
  const Matrix sc = (cfg.atol + cfg.rtol * y0.array().abs()).matrix();
  const double dn0 = rms(y0.cwiseQuotient(sc));
  const double dn1 = rms(f0.cwiseQuotient(sc));
  double h0 = (dn0 < 1e-5 || dn1 < 1e-5) ? 1e-6 : 0.01 * dn0 / dn1;
  h0 = std::min(h0, span);
  const auto m = eval.g.mark();
  Var y1 = eval.g.constant(y0 + h0 * f0);
  const Matrix f1 = eval(y1, t0 + h0).value();
  eval.g.rewind(m);
  const double dn2 = rms((f1 - f0).cwiseQuotient(sc)) / h0;
  const double big = std::max(dn1, dn2);
  const double h1 = big <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / big, 0.2);
  return std::min({100.0 * h0, h1, span});
}

}  // namespace

Solution dopri5(Graph& g, const Field& f, Var z0, double t0, double t1, const IntegrationConfig& cfg,
                std::span<const double> dense_times, const StepTrace* replay) {
  if (!(t1 >= t0)) throw Error("dopri5: t1 must not precede t0");
  if (!(cfg.rtol > 0.0) || !(cfg.atol > 0.0) || cfg.max_steps <= 0) throw Error("dopri5: invalid tolerances");
  if (!z0.value().allFinite()) throw Error("dopri5: non-finite initial state");
  for (std::size_t i = 0; i < dense_times.size(); ++i) {
    if (dense_times[i] < t0 || dense_times[i] > t1 || (i > 0 && dense_times[i] < dense_times[i - 1])) {
      throw Error("dopri5: dense times must be sorted and inside [t0, t1]");
    }
  }

  Solution sol;
  std::size_t next_dense = 0;
  while (next_dense < dense_times.size() && dense_times[next_dense] == t0) {
    sol.dense.push_back(z0);
    ++next_dense;
  }
  if (t1 == t0) {
    sol.end = z0;
    return sol;
  }

  Evaluator eval{g, f};
  Var y = z0;
  double t = t0;
  Var k1 = eval(y, t);
  double h = 0.0;
  if (replay == nullptr) {
    h = cfg.first_step > 0.0 ? std::min(cfg.first_step, t1 - t0) : initial_step(eval, z0, k1, t0, t1 - t0, cfg);
  } else if (replay->starts.empty() || replay->starts.front() != t0) {
    throw Error("dopri5: replay trace does not start at t0");
  }
  double err_old = 1e-4;
  bool last_rejected = false;
  int attempts = 0;

  while (t < t1) {
    const std::size_t step_index = sol.trace.accepted();
    if (replay != nullptr) {
      if (step_index >= replay->accepted()) throw Error("dopri5: replay trace ended before t1");
      h = replay->sizes[step_index];
    }
    if (++attempts > cfg.max_steps) {
      std::ostringstream msg;
      msg << "dopri5: stiffness/step budget exceeded at t=" << t << " after " << cfg.max_steps << " steps";
      throw Error(msg.str());
    }
    const bool final_step = replay != nullptr ? step_index + 1 == replay->accepted() : t + h >= t1;
    if (final_step) h = t1 - t;
    if (!(h > 0.0) || t + h == t) throw Error("dopri5: step size underflow at t=" + std::to_string(t));

    const auto mark = g.mark();
    auto stage = [&](std::initializer_list<Var> ks, std::initializer_list<double> as, double c) {
      std::vector<Var> terms{y};
      std::vector<double> coeffs{1.0};
      auto a = as.begin();
      for (Var k : ks) {
        terms.push_back(k);
        coeffs.push_back(h * *a++);
      }
      return eval(ops::lincomb(terms, coeffs), t + c * h);
    };
    Var k2 = stage({k1}, {a21}, c2);
    Var k3 = stage({k1, k2}, {a31, a32}, c3);
    Var k4 = stage({k1, k2, k3}, {a41, a42, a43}, c4);
    Var k5 = stage({k1, k2, k3, k4}, {a51, a52, a53, a54}, c5);
    Var k6 = stage({k1, k2, k3, k4, k5}, {a61, a62, a63, a64, a65}, 1.0);
    const Var sol_terms[] = {y, k1, k3, k4, k5, k6};
    const double sol_coeffs[] = {1.0, h * a71, h * a73, h * a74, h * a75, h * a76};
    Var y_new = ops::lincomb(sol_terms, sol_coeffs);
    const double t_new = final_step ? t1 : t + h;
    Var k7 = eval(y_new, t_new);

    double factor = 1.0;
    bool accept = true;
    if (replay == nullptr) {
      const Matrix err_vec = h * (e1 * k1.value() + e3 * k3.value() + e4 * k4.value() + e5 * k5.value() +
                                  e6 * k6.value() + e7 * k7.value());
      const Matrix sc =
          (cfg.atol + cfg.rtol * y.value().array().abs().max(y_new.value().array().abs())).matrix();
      const double err = rms(err_vec.cwiseQuotient(sc));
      if (!std::isfinite(err)) throw Error("dopri5: non-finite error estimate at t=" + std::to_string(t));
      accept = err <= 1.0;
      const double base = err == 0.0 ? kMaxFactor : kSafety * std::pow(err, -kExpo);
      if (accept) {
        factor = std::clamp(base * std::pow(err_old, kBeta), kMinFactor, kMaxFactor);
        if (last_rejected) factor = std::min(factor, 1.0);
        err_old = std::max(err, 1e-4);
      } else {
        factor = std::clamp(base, kMinFactor, 1.0);
      }
    }

    if (!accept) {
      g.rewind(mark);
      ++sol.trace.rejected;
      last_rejected = true;
      h *= factor;
      continue;
    }

    sol.trace.starts.push_back(t);
    sol.trace.sizes.push_back(h);
    while (next_dense < dense_times.size() && dense_times[next_dense] <= t_new) {
      const double theta = (dense_times[next_dense] - t) / h;
      if (theta >= 1.0) {
        sol.dense.push_back(y_new);
      } else if (theta <= 0.0) {
        sol.dense.push_back(y);
      } else {
        // y(θ) = r1 + θ(r2 + (1-θ)(r3 + θ(r4 + (1-θ) r5))), expanded as a
        // linear combination of y, y_new - y and the stages.
        const double th = theta, th1 = 1.0 - theta;
        const double w3 = th * th1, w4 = w3 * th, w5 = w4 * th1;
        // r2 = y_new - y; r3 = h k1 - r2; r4 = r2 - h k7 - r3; r5 = h Σ d_i k_i
        const double r2 = th - w3 + 2.0 * w4;  // coefficient on (y_new - y)
        const Var terms[] = {y, ops::sub(y_new, y), k1, k3, k4, k5, k6, k7};
        const double coeffs[] = {1.0,
                                 r2,
                                 h * (w3 - w4 + w5 * d1),
                                 h * w5 * d3,
                                 h * w5 * d4,
                                 h * w5 * d5,
                                 h * w5 * d6,
                                 h * (-w4 + w5 * d7)};
        sol.dense.push_back(ops::lincomb(terms, coeffs));
      }
      ++next_dense;
    }
    y = y_new;
    k1 = k7;  // FSAL
    t = t_new;
    last_rejected = false;
    h *= factor;
  }
  if (replay != nullptr && sol.trace.accepted() != replay->accepted()) throw Error("dopri5: replay trace mismatch");
  sol.trace.field_evals = eval.evals;
  sol.end = y;
  return sol;
}

Matrix integrate(const std::function<Matrix(const Matrix&, double)>& f, const Matrix& z0, double t0, double t1,
                 const IntegrationConfig& cfg, StepTrace* trace) {
  Graph g(false);
  const Field field = [&f](Graph& gr, Var z, double t) { return gr.constant(f(z.value(), t)); };
  Solution s = dopri5(g, field, g.constant(z0), t0, t1, cfg);
  if (trace != nullptr) *trace = s.trace;
  return s.end.value();
}

}  // namespace misder::ode
