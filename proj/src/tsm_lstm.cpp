#include <cmath>

#include "misder/ops.hpp"
#include "misder/tsm.hpp"

namespace misder {
namespace {

// Rows [begin, end) of the series, each DER flattened row-major.
Matrix stack_flat(const std::vector<Matrix>& ders, std::size_t begin, std::size_t end) {
  const Eigen::Index width = ders[0].size();
  Matrix out(static_cast<Eigen::Index>(end - begin), width);
  for (std::size_t i = begin; i < end; ++i) {
    out.row(static_cast<Eigen::Index>(i - begin)) = Eigen::Map<const RowVector>(ders[i].data(), width);
  }
  return out;
}

}  // namespace

LstmForecaster::LstmForecaster(const LstmConfig& cfg) : cfg_(cfg) {
  if (cfg.state < 1 || cfg.hidden < 1) throw Error("lstm: bad sizes");
  std::mt19937_64 rng(cfg.seed);
  const int h = cfg.hidden;
  input_ = nn::Linear("tsm.lstm.input", cfg.state, h, rng);
  const double bound = 1.0 / std::sqrt(static_cast<double>(h));
  w_x_ = ParamTensor("tsm.lstm.cell.w_input", uniform_matrix(h, 4 * h, bound, rng));
  w_h_ = ParamTensor("tsm.lstm.cell.w_hidden", uniform_matrix(h, 4 * h, bound, rng));
  Matrix b = Matrix::Zero(1, 4 * h);
  b.block(0, h, 1, h).setOnes();  // forget gate
  b_ = ParamTensor("tsm.lstm.cell.bias", b);
  output_ = nn::Linear("tsm.lstm.output", h, cfg.state, rng);
}

Var LstmForecaster::run(Graph& g, Var inputs, int extra_steps) {
  if (inputs.cols() != cfg_.state) throw Error("lstm: input width differs from K*D");
  const int h = cfg_.hidden;
  Var wx = g.param(w_x_);
  Var wh = g.param(w_h_);
  Var bias = g.param(b_);
  Var x = input_(g, inputs);
  Var hidden = g.constant(Matrix::Zero(1, h));
  Var cell = g.constant(Matrix::Zero(1, h));
  std::vector<Var> preds;

  auto step = [&](Var xt) {
    Var gates = ops::add_row(ops::add(ops::matmul(xt, wx), ops::matmul(hidden, wh)), bias);
    Var in = ops::sigmoid(ops::slice_cols(gates, 0, h));
    Var forget = ops::sigmoid(ops::slice_cols(gates, h, h));
    Var cand = ops::tanh(ops::slice_cols(gates, 2 * h, h));
    Var out = ops::sigmoid(ops::slice_cols(gates, 3 * h, h));
    cell = ops::add(ops::mul(forget, cell), ops::mul(in, cand));
    hidden = ops::mul(out, ops::tanh(cell));
    return hidden;
  };

  std::vector<Var> hs;
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) hs.push_back(step(ops::slice_rows(x, i, 1)));
  Var pred = output_(g, ops::concat_rows(hs));
  if (extra_steps <= 0) return pred;
  preds.push_back(pred);
  Var last = ops::slice_rows(pred, pred.rows() - 1, 1);
  for (int k = 0; k < extra_steps; ++k) {
    last = output_(g, step(input_(g, last)));
    preds.push_back(last);
  }
  return ops::concat_rows(preds);
}

Var LstmForecaster::fit_loss(Graph& g, const SeriesInput& s) {
  s.validate();
  const std::size_t n = s.ders.size();
  Var inputs = g.constant(stack_flat(s.ders, 0, n - 1));
  Var targets = g.constant(stack_flat(s.ders, 1, n));
  // Every row has K·D elements, so the element mean equals the mean over τ
  // of per-period mean-L1.
  return ops::l1_loss(run(g, inputs), targets);
}

Var LstmForecaster::forecast(Graph& g, const SeriesInput& s, double time) {
  s.validate();
  const auto ahead = static_cast<int>(std::max(1L, std::lround(time - s.times.back())));
  Var pred = run(g, g.constant(stack_flat(s.ders, 0, s.ders.size())), ahead - 1);
  return ops::reshape(ops::slice_rows(pred, pred.rows() - 1, 1), s.ders[0].rows(), s.ders[0].cols());
}

std::vector<ParamTensor*> LstmForecaster::params() {
  std::vector<ParamTensor*> out;
  input_.collect(out);
  out.push_back(&w_x_);
  out.push_back(&w_h_);
  out.push_back(&b_);
  output_.collect(out);
  return out;
}

}  // namespace misder
