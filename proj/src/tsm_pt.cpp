#include <algorithm>
#include <cmath>
#include <numeric>

#include "misder/ops.hpp"
#include "misder/tsm.hpp"

namespace misder {
namespace {

// Rows that receive zeros when shifting `offset` steps inside blocks of
// length `len` are masked out so convolution taps never cross blocks.
Matrix block_shift_mask(int batch, int len, int offset, Eigen::Index width) {
  Matrix m = Matrix::Ones(batch * len, width);
  for (int b = 0; b < batch; ++b) {
    for (int j = 0; j < len; ++j) {
      const int src = j + offset;
      if (src < 0 || src >= len) m.row(b * len + j).setZero();
    }
  }
  return m;
}

}  // namespace

PtForecaster::PtForecaster(const PtConfig& cfg) : cfg_(cfg) {
  if (cfg.state < 1 || cfg.model_dim < 1 || cfg.model_dim % cfg.heads != 0 || cfg.max_positions < 2) {
    throw Error("pt: bad sizes");
  }
  std::mt19937_64 rng(cfg.seed);
  const int m = cfg.model_dim;
  conv_ = ParamTensor("tsm.pt.conv.weight", uniform_matrix(3 * cfg.state, m, 1.0 / std::sqrt(3.0 * cfg.state), rng));
  conv_bias_ = ParamTensor("tsm.pt.conv.bias", Matrix::Zero(1, m));
  pos_ = ParamTensor("tsm.pt.positions", normal_matrix(cfg.max_positions, m, 0.1, rng));
  for (int l = 0; l < cfg.layers; ++l) {
    encoder_.emplace_back("tsm.pt.encoder.layer" + std::to_string(l), m, cfg.heads, 4 * m, rng);
  }
  enc_norm_ = nn::LayerNorm("tsm.pt.encoder.final_norm", m);
  for (int l = 0; l < cfg.layers; ++l) {
    decoder_.emplace_back("tsm.pt.decoder.layer" + std::to_string(l), m, cfg.heads, 4 * m, rng);
  }
  dec_norm_ = nn::LayerNorm("tsm.pt.decoder.final_norm", m);
  head_in_ = nn::Linear("tsm.pt.head_reconstruct", m, cfg.state, rng);
  head_out_ = nn::Linear("tsm.pt.head_forecast", m, cfg.state, rng);
}

Var PtForecaster::positions(Graph& g, std::span<const double> pos) {
  // Fractional positions blend the two neighbouring learned rows.
  Matrix interp = Matrix::Zero(static_cast<Eigen::Index>(pos.size()), cfg_.max_positions);
  for (std::size_t i = 0; i < pos.size(); ++i) {
    const double p = pos[i];
    if (!(p >= 0.0) || p > cfg_.max_positions - 1) {
      throw Error("pt: position " + std::to_string(p) + " outside [0, " + std::to_string(cfg_.max_positions - 1) + "]");
    }
    const auto lo = static_cast<Eigen::Index>(std::floor(p));
    const double w = p - static_cast<double>(lo);
    interp(static_cast<Eigen::Index>(i), lo) += 1.0 - w;
    if (w > 0.0) interp(static_cast<Eigen::Index>(i), lo + 1) += w;
  }
  return ops::matmul(g.constant(interp), g.param(pos_));
}

Var PtForecaster::encode(Graph& g, Var states, std::span<const double> pos, int batch,
                         std::span<const std::uint8_t> mask) {
  if (states.cols() != cfg_.state) throw Error("pt: state width differs from K*D");
  if (batch < 1 || states.rows() % batch != 0) throw Error("pt: rows must split into batch blocks");
  if (pos.size() != static_cast<std::size_t>(states.rows())) throw Error("pt: one position per row required");
  const int len = static_cast<int>(states.rows()) / batch;
  const Var taps[] = {
      ops::mul(ops::shift_rows(states, -1), g.constant(block_shift_mask(batch, len, -1, cfg_.state))),
      states,
      ops::mul(ops::shift_rows(states, 1), g.constant(block_shift_mask(batch, len, 1, cfg_.state))),
  };
  Var x = ops::add_row(ops::matmul(ops::concat_cols(taps), g.param(conv_)), g.param(conv_bias_));
  x = ops::add(x, positions(g, pos));
  for (auto& layer : encoder_) x = layer(g, x, batch, mask);
  return enc_norm_(g, x);
}

Var PtForecaster::reconstruct(Graph& g, Var memory) { return head_in_(g, memory); }

Var PtForecaster::decode(Graph& g, Var memory, std::span<const double> query_positions, int batch) {
  return decode_masked(g, memory, query_positions, batch, {});
}

Var PtForecaster::decode_masked(Graph& g, Var memory, std::span<const double> query_positions, int batch,
                                std::span<const std::uint8_t> memory_mask) {
  if (query_positions.size() % static_cast<std::size_t>(batch) != 0) throw Error("pt: queries must split into blocks");
  Var x = positions(g, query_positions);
  for (auto& layer : decoder_) x = layer(g, x, memory, batch, memory_mask);
  return head_out_(g, dec_norm_(g, x));
}

Var PtForecaster::fit_loss(Graph& g, const SeriesInput& s) {
  s.validate();
  const int t = s.periods();
  // Block τ holds the prefix z^0..z^{τ-1}, zero-padded to length T and
  // masked, and queries the time of period τ.
  Matrix states = Matrix::Zero(t * t, cfg_.state);
  std::vector<double> pos(static_cast<std::size_t>(t * t));
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(t * t), 0);
  std::vector<double> queries;
  Matrix targets(t, cfg_.state);
  for (int b = 0; b < t; ++b) {
    for (int j = 0; j < t; ++j) {
      const auto at = static_cast<std::size_t>(b * t + j);
      pos[at] = s.times[static_cast<std::size_t>(j)];
      if (j <= b) {
        const Matrix& z = s.ders[static_cast<std::size_t>(j)];
        states.row(b * t + j) = Eigen::Map<const RowVector>(z.data(), z.size());
        mask[at] = 1;
      }
    }
    queries.push_back(s.times[static_cast<std::size_t>(b + 1)]);
    const Matrix& target = s.ders[static_cast<std::size_t>(b + 1)];
    targets.row(b) = Eigen::Map<const RowVector>(target.data(), target.size());
  }
  Var memory = encode(g, g.constant(states), pos, t, mask);
  return ops::l1_loss(decode_masked(g, memory, queries, t, mask), g.constant(targets));
}

Var PtForecaster::forecast(Graph& g, const SeriesInput& s, double time) {
  s.validate();
  Matrix states(static_cast<Eigen::Index>(s.ders.size()), cfg_.state);
  for (std::size_t i = 0; i < s.ders.size(); ++i) {
    states.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const RowVector>(s.ders[i].data(), s.ders[i].size());
  }
  Var memory = encode(g, g.constant(states), s.times, 1, {});
  const double q[] = {time};
  return ops::reshape(decode(g, memory, q, 1), s.ders[0].rows(), s.ders[0].cols());
}

Var PtForecaster::pretrain_loss(Graph& g, const data::TrajectoryCorpus& corpus, std::span<const std::size_t> which,
                                double* reconstruction, double* forecast) {
  if (which.empty()) throw Error("pt: empty pre-training batch");
  if (corpus.state_dim() != cfg_.state) throw Error("pt: corpus state_dim differs from K*D");
  const int split = corpus.split;
  const int len = static_cast<int>(corpus.trajectories.front().states.rows());
  const int batch = static_cast<int>(which.size());
  const int out_len = len - split;
  if (split < 1 || out_len < 1) throw Error("pt: corpus split must leave both parts non-empty");
  Matrix in(batch * split, cfg_.state), out(batch * out_len, cfg_.state);
  std::vector<double> pos_in, pos_out;
  for (int b = 0; b < batch; ++b) {
    const auto& tr = corpus.trajectories.at(which[static_cast<std::size_t>(b)]);
    if (tr.states.rows() != len) throw Error("pt: corpus trajectories differ in length");
    in.middleRows(b * split, split) = tr.states.topRows(split);
    out.middleRows(b * out_len, out_len) = tr.states.bottomRows(out_len);
    for (int j = 0; j < split; ++j) pos_in.push_back(j);
    for (int j = split; j < len; ++j) pos_out.push_back(j);
  }
  Var memory = encode(g, g.constant(in), pos_in, batch, {});
  Var recon = ops::l1_loss(reconstruct(g, memory), g.constant(in));
  Var fore = ops::l1_loss(decode(g, memory, pos_out, batch), g.constant(out));
  if (reconstruction != nullptr) *reconstruction = recon.scalar();
  if (forecast != nullptr) *forecast = fore.scalar();
  return ops::add(recon, fore);
}

std::vector<ParamTensor*> PtForecaster::params() {
  std::vector<ParamTensor*> out{&conv_, &conv_bias_, &pos_};
  for (auto& l : encoder_) l.collect(out);
  enc_norm_.collect(out);
  for (auto& l : decoder_) l.collect(out);
  dec_norm_.collect(out);
  head_in_.collect(out);
  head_out_.collect(out);
  return out;
}

PretrainReport pretrain(PtForecaster& model, const data::TrajectoryCorpus& corpus, const PretrainConfig& cfg) {
  if (corpus.trajectories.empty()) throw Error("pretrain: empty corpus");
  if (cfg.epochs < 0 || cfg.batch < 1) throw Error("pretrain: bad schedule");
  std::mt19937_64 rng(cfg.seed);
  Adam opt(model.params(), cfg.lr);
  std::vector<std::size_t> order(corpus.trajectories.size());
  std::iota(order.begin(), order.end(), 0);
  PretrainReport report;
  for (int e = 0; e < cfg.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0, recon_sum = 0.0, fore_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t n = std::min(order.size() - start, static_cast<std::size_t>(cfg.batch));
      opt.zero_grad();
      Graph g;
      double recon = 0.0, fore = 0.0;
      Var loss = model.pretrain_loss(g, corpus, std::span(order).subspan(start, n), &recon, &fore);
      g.backward(loss);
      opt.step();
      total += loss.scalar();
      recon_sum += recon;
      fore_sum += fore;
      ++batches;
    }
    report.epoch_loss.push_back(total / batches);
    report.epoch_reconstruction.push_back(recon_sum / batches);
    report.epoch_forecast.push_back(fore_sum / batches);
  }
  return report;
}

}  // namespace misder
