#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "misder/dopri5.hpp"
#include "misder/numerics.hpp"
#include "misder/ops.hpp"

using namespace misder;
using misder::ode::IntegrationConfig;

namespace {

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

Matrix decay(const Matrix& z, double) { return -z; }

Matrix rotate(const Matrix& z, double) { return row({z(0, 1), -z(0, 0)}); }

}  // namespace

TEST_CASE("zero-length interval returns the initial state bit-exactly") {
  const Matrix z0 = row({0.1234567890123, -7.0});
  const Matrix z = ode::integrate(decay, z0, 0.3, 0.3);
  CHECK(std::memcmp(z.data(), z0.data(), sizeof(double) * 2) == 0);
}

TEST_CASE("exponential decay matches e^-1") {
  IntegrationConfig cfg;
  const Matrix z = ode::integrate(decay, row({1.0}), 0.0, 1.0, cfg);
  CHECK(std::abs(z(0, 0) - 0.367879441) < cfg.rtol * 10);
  CHECK(std::abs(z(0, 0) - std::exp(-1.0)) < 1e-6);
}

TEST_CASE("harmonic oscillator reaches (-1, 0) at pi") {
  const Matrix z = ode::integrate(rotate, row({1.0, 0.0}), 0.0, std::numbers::pi);
  CHECK(std::abs(z(0, 0) + 1.0) < 1e-5);
  CHECK(std::abs(z(0, 1)) < 1e-5);
}

TEST_CASE("error shrinks as tolerances tighten") {
  double previous = INFINITY;
  for (double tol : {1e-3, 1e-4, 1e-5, 1e-6, 1e-7}) {
    IntegrationConfig cfg;
    cfg.rtol = tol;
    cfg.atol = tol * 1e-2;
    const double err = std::abs(ode::integrate(decay, row({1.0}), 0.0, 1.0, cfg)(0, 0) - std::exp(-1.0));
    CAPTURE(tol);
    CHECK(err < previous);
    previous = err;
  }
}

TEST_CASE("split integration agrees with one-shot integration") {
  IntegrationConfig cfg;
  const Matrix z0 = row({1.0, 0.5});
  const Matrix once = ode::integrate(rotate, z0, 0.0, 2.0, cfg);
  const Matrix mid = ode::integrate(rotate, z0, 0.0, 0.7, cfg);
  const Matrix twice = ode::integrate(rotate, mid, 0.7, 2.0, cfg);
  const Matrix exact = row({std::cos(2.0) + 0.5 * std::sin(2.0), -std::sin(2.0) + 0.5 * std::cos(2.0)});
  const double bound = std::max((once - exact).cwiseAbs().maxCoeff(), cfg.atol + cfg.rtol);
  CHECK((once - twice).cwiseAbs().maxCoeff() <= 5 * bound);
}

TEST_CASE("identical inputs give identical traces and FSAL evaluation counts") {
  ode::StepTrace a, b;
  ode::integrate(rotate, row({1.0, 0.0}), 0.0, 10.0, {}, &a);
  ode::integrate(rotate, row({1.0, 0.0}), 0.0, 10.0, {}, &b);
  CHECK(a == b);
  CHECK(a.accepted() > 1);
  // Two evaluations choose the first step; each attempted step then costs
  // six new evaluations because the last stage is reused.
  CHECK(a.field_evals == 2 + 6 * static_cast<int>(a.accepted() + a.rejected));
}

TEST_CASE("rejections happen and are recovered from on a sharp field") {
  ode::StepTrace tr;
  auto sharp = [](const Matrix& z, double t) -> Matrix { return -50.0 * (z.array() - std::sin(10 * t)).matrix(); };
  IntegrationConfig cfg;
  cfg.first_step = 0.5;
  const Matrix z = ode::integrate(sharp, row({1.0}), 0.0, 1.0, cfg, &tr);
  CHECK(tr.rejected > 0);
  CHECK(std::isfinite(z(0, 0)));
}

TEST_CASE("solver failures") {
  IntegrationConfig tight;
  tight.max_steps = 3;
  CHECK_THROWS_WITH(ode::integrate(rotate, row({1.0, 0.0}), 0.0, 50.0, tight),
                    doctest::Contains("stiffness/step budget"));
  auto blowup = [](const Matrix& z, double t) -> Matrix {
    return t > 0.5 ? Matrix::Constant(z.rows(), z.cols(), NAN) : Matrix(-z);
  };
  CHECK_THROWS_WITH(ode::integrate(blowup, row({1.0}), 0.0, 1.0), doctest::Contains("non-finite field output at t="));
  CHECK_THROWS(ode::integrate(decay, row({1.0}), 1.0, 0.0));
  IntegrationConfig bad;
  bad.rtol = 0.0;
  CHECK_THROWS(ode::integrate(decay, row({1.0}), 0.0, 1.0, bad));
}

TEST_CASE("dense output matches the analytic solution between steps") {
  Graph g(false);
  const ode::Field f = [](Graph&, Var z, double) { return ops::scale(z, -1.0); };
  const double times[] = {0.0, 0.013, 0.25, 0.5, 0.5, 0.77, 1.0};
  IntegrationConfig cfg;
  const auto sol = ode::dopri5(g, f, g.constant(row({1.0})), 0.0, 1.0, cfg, times);
  REQUIRE(sol.dense.size() == 7);
  for (std::size_t i = 0; i < 7; ++i) {
    CAPTURE(times[i]);
    CHECK(std::abs(sol.dense[i].scalar() - std::exp(-times[i])) < 1e-6);
  }
  CHECK(sol.dense[3].value() == sol.dense[4].value());
  CHECK(sol.dense.back().value() == sol.end.value());
}

TEST_CASE("gradient of a linear field matches the closed-form sensitivity") {
  for (double a0 : {-1.3, -0.2, 0.4}) {
    ParamTensor a("a", Matrix::Constant(1, 1, a0));
    const Matrix z0 = row({0.7, -1.1});
    Graph g;
    const ode::Field f = [&a](Graph& gr, Var z, double) {
      Var s = gr.param(a);
      return ops::matmul(ops::reshape(z, 2, 1), s);
    };
    ode::Field flat = [&](Graph& gr, Var z, double t) { return ops::reshape(f(gr, z, t), 1, 2); };
    auto sol = ode::dopri5(g, flat, g.constant(z0), 0.0, 1.0);
    g.backward(ops::sum(sol.end));
    const double analytic = (z0(0, 0) + z0(0, 1)) * std::exp(a0);
    CAPTURE(a0);
    CHECK(std::abs(a.grad(0, 0) - analytic) / std::abs(analytic) < 1e-4);
  }
}

TEST_CASE("zero field has identity Jacobian in the initial state") {
  ParamTensor z0("z0", row({0.3, -0.4, 2.0}));
  for (int j = 0; j < 3; ++j) {
    z0.zero_grad();
    Graph g;
    const ode::Field zero = [](Graph& gr, Var z, double) { return gr.constant(Matrix::Zero(z.rows(), z.cols())); };
    auto sol = ode::dopri5(g, zero, g.param(z0), 0.0, 0.8);
    g.backward(ops::slice_cols(sol.end, j, 1));
    for (int i = 0; i < 3; ++i) CHECK(z0.grad(0, i) == (i == j ? 1.0 : 0.0));
  }
}

TEST_CASE("random two-layer field: finite differences agree through the solver") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    ParamTensor w1("w1", normal_matrix(5, 8, 0.5, rng));
    ParamTensor b1("b1", normal_matrix(1, 8, 0.5, rng));
    ParamTensor w2("w2", normal_matrix(8, 4, 0.5, rng));
    ParamTensor z0("z0", normal_matrix(1, 4, 1.0, rng));
    const ode::Field f = [&](Graph& gr, Var z, double t) {
      Var parts[] = {z, gr.constant(Matrix::Constant(1, 1, t))};
      Var h = ops::tanh(ops::add_row(ops::matmul(ops::concat_cols(parts), gr.param(w1)), gr.param(b1)));
      return ops::matmul(h, gr.param(w2));
    };
    ode::StepTrace trace;
    {
      Graph g(false);
      trace = ode::dopri5(g, f, g.param(z0), 0.0, 0.5).trace;
    }
    const Matrix target = normal_matrix(1, 4, 1.0, rng);
    ParamTensor* ps[] = {&w1, &b1, &w2, &z0};
    GradCheckOptions opts;
    opts.seed = seed;
    const double err = grad_check(
        [&](Graph& g) {
          auto sol = ode::dopri5(g, f, g.param(z0), 0.0, 0.5, {}, {}, &trace);
          return ops::l1_loss(sol.end, g.constant(target));
        },
        ps, opts);
    CAPTURE(seed);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("replaying a trace reproduces the adaptive solution") {
  Graph g(false);
  const ode::Field f = [](Graph& gr, Var z, double t) {
    return ops::add(ops::scale(z, -0.5), gr.constant(Matrix::Constant(1, 2, std::sin(t))));
  };
  auto first = ode::dopri5(g, f, g.constant(row({1.0, 2.0})), 0.0, 3.0);
  auto again = ode::dopri5(g, f, g.constant(row({1.0, 2.0})), 0.0, 3.0, {}, {}, &first.trace);
  CHECK(again.end.value() == first.end.value());
  CHECK(again.trace.starts == first.trace.starts);
}
