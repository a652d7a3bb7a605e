#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "misder/checkpoint.hpp"
#include "misder/numerics.hpp"
#include "misder/ops.hpp"

using namespace misder;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  return normal_matrix(r, c, scale, rng);
}

}  // namespace

TEST_CASE("bce_loss closed forms") {
  CHECK(bce_loss(1.0, 1) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(bce_loss(0.5, 1) == doctest::Approx(0.693147).epsilon(1e-6));
  CHECK(bce_loss(0.1, 0) == doctest::Approx(0.105361).epsilon(1e-5));
  CHECK_THROWS_WITH(bce_loss(std::nan(""), 1), "invalid probability");
  CHECK_THROWS(bce_loss(INFINITY, 0));
}

TEST_CASE("bce_loss is non-negative and zero only at clamped agreement") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double p = u(rng);
    CHECK(bce_loss(p, 0) >= 0.0);
    CHECK(bce_loss(p, 1) >= 0.0);
  }
  CHECK(bce_loss(0.0, 0) < 1e-6);
  CHECK(bce_loss(0.0, 1) > 10.0);
}

TEST_CASE("l1_loss is an element mean") {
  Matrix a(1, 2), b(1, 2);
  a << 1, 2;
  b << 0, 0;
  CHECK(l1_loss(a, b) == doctest::Approx(1.5));
  Matrix c(1, 1), d(1, 1);
  c << -1;
  d << 1;
  CHECK(l1_loss(c, d) == doctest::Approx(2.0));
  const Matrix r = random_matrix(3, 4, 1);
  CHECK(l1_loss(r, r) == 0.0);
  const Matrix s = random_matrix(3, 4, 2);
  CHECK(l1_loss(r, s) == l1_loss(s, r));
  CHECK_THROWS(l1_loss(r, random_matrix(4, 3, 1)));
}

TEST_CASE("adam_step first update and frozen groups") {
  ParamTensor p("w", Matrix::Zero(1, 1));
  AdamState st;
  p.grad(0, 0) = 1.0;
  adam_step(p, st, 1e-3);
  CHECK(st.step_count == 1);
  CHECK(p.values(0, 0) == doctest::Approx(-0.000999999).epsilon(1e-6));
  const double after_one = p.values(0, 0);
  adam_step(p, st, 1e-3);
  CHECK(p.values(0, 0) < after_one);

  ParamTensor z("z", random_matrix(2, 3, 5));
  const Matrix before = z.values;
  AdamState zs;
  adam_step(z, zs, 1e-2);
  CHECK(z.values == before);

  ParamTensor f("f", random_matrix(2, 3, 6));
  f.frozen = true;
  f.grad.setOnes();
  const Matrix fb = f.values;
  AdamState fs;
  adam_step(f, fs, 1.0);
  CHECK(std::memcmp(f.values.data(), fb.data(), sizeof(double) * 6) == 0);
  CHECK(fs.frozen_skips == 1);
  CHECK(fs.step_count == 0);
}

TEST_CASE("zero_grad clears gradients") {
  ParamTensor p("p", random_matrix(2, 2, 1));
  p.grad.setOnes();
  p.zero_grad();
  CHECK(p.grad.isZero());
}

TEST_CASE("grad_check on analytic losses") {
  ParamTensor x("x", random_matrix(3, 3, 11));
  ParamTensor* ps[] = {&x};
  const double err = grad_check([&](Graph& g) { Var v = g.param(x); return ops::sum(ops::mul(v, v)); }, ps);
  CHECK(err < 1e-6);
  const double zero = grad_check([&](Graph& g) { return g.constant(Matrix::Constant(1, 1, 3.0)); }, ps);
  CHECK(zero == 0.0);
  CHECK_THROWS(grad_check([&](Graph& g) { return g.constant(Matrix::Constant(1, 1, NAN)); }, ps));
  GradCheckOptions bad;
  bad.fd_eps = 1e-1;
  CHECK_THROWS(grad_check([&](Graph& g) { return ops::sum(g.param(x)); }, ps, bad));
}

TEST_CASE("every op passes finite-difference checks over 5 seeds") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    CAPTURE(seed);
    ParamTensor a("a", random_matrix(4, 6, seed));
    ParamTensor b("b", random_matrix(6, 3, seed + 100));
    ParamTensor c("c", random_matrix(4, 6, seed + 200));
    ParamTensor row("row", random_matrix(1, 6, seed + 300));
    ParamTensor gain("gain", random_matrix(1, 6, seed + 400) * 0.3 + Matrix::Ones(1, 6));
    ParamTensor table("table", random_matrix(7, 6, seed + 500));
    ParamTensor* ps[] = {&a, &b, &c, &row, &gain, &table};
    GradCheckOptions opts;
    opts.seed = seed;
    opts.fd_eps = 1e-5;

    auto check = [&](const std::string& name, const LossBuilder& fn) {
      CAPTURE(name);
      CHECK(grad_check(fn, ps, opts) < 1e-6);
    };
    // Weighted sums keep upstream gradients non-uniform.
    const Matrix w46 = random_matrix(4, 6, seed + 900);
    const Matrix w43 = random_matrix(4, 3, seed + 901);
    auto wsum = [](Graph& g, Var v, const Matrix& w) { return ops::sum(ops::mul(v, g.constant(w))); };

    check("matmul", [&](Graph& g) { return wsum(g, ops::matmul(g.param(a), g.param(b)), w43); });
    check("add/sub/scale", [&](Graph& g) {
      return wsum(g, ops::scale(ops::sub(ops::add(g.param(a), g.param(c)), ops::mul(g.param(a), g.param(c))), 0.7), w46);
    });
    check("add_row", [&](Graph& g) { return wsum(g, ops::add_row(g.param(a), g.param(row)), w46); });
    check("tanh", [&](Graph& g) { return wsum(g, ops::tanh(g.param(a)), w46); });
    check("sigmoid", [&](Graph& g) { return wsum(g, ops::sigmoid(g.param(a)), w46); });
    check("relu", [&](Graph& g) { return wsum(g, ops::relu(ops::add_row(g.param(a), g.param(row))), w46); });
    check("concat/slice", [&](Graph& g) {
      Var parts[] = {g.param(a), g.param(c)};
      Var cat = ops::concat_cols(parts);
      Var rows[] = {ops::slice_cols(cat, 3, 6), ops::slice_rows(g.param(c), 1, 2)};
      return ops::sum(ops::tanh(ops::concat_rows(rows)));
    });
    check("reshape/shift", [&](Graph& g) {
      Var r = ops::reshape(g.param(a), 6, 4);
      return ops::sum(ops::tanh(ops::add(ops::shift_rows(r, 1), ops::shift_rows(r, -2))));
    });
    check("mean", [&](Graph& g) { return ops::mean(ops::mul(g.param(a), g.param(a))); });
    check("l1_loss", [&](Graph& g) { return ops::l1_loss(g.param(a), g.param(c)); });
    check("layer_norm", [&](Graph& g) { return wsum(g, ops::layer_norm(g.param(a), g.param(gain), g.param(row)), w46); });
    const std::int32_t ids[] = {3, 0, 3, 6};
    check("embedding", [&](Graph& g) { return wsum(g, ops::embedding(g.param(table), ids), w46); });
    check("bce_loss", [&](Graph& g) {
      const int labels[] = {1, 0, 0, 1};
      Var p = ops::sigmoid(ops::matmul(g.param(a), ops::slice_cols(g.param(b), 0, 1)));
      return ops::bce_loss(p, labels);
    });
    check("attention", [&](Graph& g) {
      // 2 blocks × 2 rows of queries, 2 blocks × 3 keys (rows of `table` subsets)
      Var q = g.param(a);
      Var k = ops::slice_rows(g.param(table), 0, 6);
      Var v = ops::tanh(ops::slice_rows(g.param(table), 1, 6));
      const std::uint8_t mask[] = {1, 0, 1, 1, 1, 0};
      return wsum(g, ops::attention(q, k, v, 2, 3, mask), w46);
    });
    check("masked_mean_rows", [&](Graph& g) {
      const double wts[] = {1, 0, 1, 2};
      return ops::sum(ops::tanh(ops::masked_mean_rows(g.param(a), 2, wts)));
    });
    check("prefix_rows", [&](Graph& g) {
      Var pre = ops::slice_rows(g.param(table), 0, 2);
      return ops::sum(ops::tanh(ops::prefix_rows(pre, g.param(a), 2)));
    });
  }
}

TEST_CASE("op shape errors") {
  Graph g;
  Var a = g.constant(Matrix::Zero(2, 3));
  Var b = g.constant(Matrix::Zero(2, 2));
  CHECK_THROWS(ops::matmul(a, a));
  CHECK_THROWS(ops::add(a, b));
  CHECK_THROWS(ops::l1_loss(a, b));
  const std::int32_t bad[] = {5};
  CHECK_THROWS(ops::embedding(b, bad));
}

TEST_CASE("attention ignores masked keys entirely") {
  Graph g;
  Matrix q = random_matrix(3, 4, 1);
  Matrix k = random_matrix(3, 4, 2);
  Matrix v = random_matrix(3, 4, 3);
  const std::uint8_t mask[] = {1, 1, 0};
  Var out1 = ops::attention(g.constant(q), g.constant(k), g.constant(v), 1, 2, mask);
  k.row(2) = random_matrix(1, 4, 9);
  v.row(2) = random_matrix(1, 4, 10);
  Var out2 = ops::attention(g.constant(q), g.constant(k), g.constant(v), 1, 2, mask);
  CHECK((out1.value() - out2.value()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("graph rewind drops later nodes") {
  Graph g;
  Var a = g.constant(Matrix::Ones(2, 2));
  const auto m = g.mark();
  ops::scale(a, 2.0);
  ops::scale(a, 3.0);
  CHECK(g.size() == m + 2);
  g.rewind(m);
  CHECK(g.size() == m);
}

TEST_CASE("checkpoint container") {
  Checkpoint ck;
  Matrix a = random_matrix(3, 2, 1);
  ck.put("embedding", a);
  ck.put("extractor.layer0.w", random_matrix(2, 2, 2));
  const std::string bytes = ck.serialize();
  CHECK(bytes.substr(0, 8) == "MSDRCKPT");
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + 8, 4);
  CHECK(version == 1);

  const Checkpoint back = Checkpoint::deserialize(bytes);
  CHECK(back.serialize() == bytes);
  CHECK((back.get("embedding") - a).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(back.names_with_prefix("extractor").size() == 1);

  std::string corrupt = bytes;
  corrupt[corrupt.size() - 1] ^= 0x5A;
  CHECK_THROWS_WITH(Checkpoint::deserialize(corrupt), "checkpoint: checksum mismatch");
  CHECK_THROWS(Checkpoint::deserialize("nonsense"));
  CHECK_THROWS(back.get("missing"));

  ParamTensor wrong("embedding", Matrix::Zero(2, 2));
  CHECK_THROWS(back.restore(wrong));

  const auto path = std::filesystem::temp_directory_path() / "misder_test.ckpt";
  ck.save(path);
  CHECK(Checkpoint::load(path).serialize() == bytes);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint float32 round trip is idempotent") {
  // Property: after one save/load the values are float-representable, so any
  // further round trip is byte-identical.
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Checkpoint ck;
    ck.put("x", random_matrix(1 + seed % 4, 1 + seed % 5, seed, 10.0));
    const Checkpoint once = Checkpoint::deserialize(ck.serialize());
    Checkpoint again;
    again.put("x", once.get("x"));
    CHECK(again.serialize() == once.serialize());
  }
}
