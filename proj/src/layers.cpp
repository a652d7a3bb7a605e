#include "misder/layers.hpp"

#include <cmath>

#include "misder/numerics.hpp"
#include "misder/ops.hpp"

namespace misder::nn {

Linear::Linear(const std::string& name, Eigen::Index in, Eigen::Index out, std::mt19937_64& rng)
    : weight(name + ".weight", uniform_matrix(in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng)),
      bias(name + ".bias", Matrix::Zero(1, out)) {}

Var Linear::operator()(Graph& g, Var x) { return ops::add_row(ops::matmul(x, g.param(weight)), g.param(bias)); }

void Linear::collect(std::vector<ParamTensor*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

LayerNorm::LayerNorm(const std::string& name, Eigen::Index width)
    : gain(name + ".gain", Matrix::Ones(1, width)), bias(name + ".bias", Matrix::Zero(1, width)) {}

Var LayerNorm::operator()(Graph& g, Var x) { return ops::layer_norm(x, g.param(gain), g.param(bias)); }

void LayerNorm::collect(std::vector<ParamTensor*>& out) {
  out.push_back(&gain);
  out.push_back(&bias);
}

MultiHeadAttention::MultiHeadAttention(const std::string& name, Eigen::Index width, int h, std::mt19937_64& rng)
    : wq(name + ".wq", width, width, rng),
      wk(name + ".wk", width, width, rng),
      wv(name + ".wv", width, width, rng),
      wo(name + ".wo", width, width, rng),
      heads(h) {}

Var MultiHeadAttention::operator()(Graph& g, Var queries, Var keys, int batch,
                                   std::span<const std::uint8_t> key_mask) {
  Var q = wq(g, queries);
  Var k = ops::matmul(keys, g.param(wk.weight));
  Var v = wv(g, keys);
  return wo(g, ops::attention(q, k, v, batch, heads, key_mask));
}

void MultiHeadAttention::collect(std::vector<ParamTensor*>& out) {
  wq.collect(out);
  // A key bias shifts every score of a query equally, so it has no effect.
  out.push_back(&wk.weight);
  wv.collect(out);
  wo.collect(out);
}

EncoderLayer::EncoderLayer(const std::string& name, Eigen::Index width, int heads, Eigen::Index ff_width,
                           std::mt19937_64& rng)
    : ln1(name + ".ln1", width),
      ln2(name + ".ln2", width),
      attn(name + ".attn", width, heads, rng),
      ff1(name + ".ff1", width, ff_width, rng),
      ff2(name + ".ff2", ff_width, width, rng) {}

Var EncoderLayer::operator()(Graph& g, Var x, int batch, std::span<const std::uint8_t> key_mask) {
  Var h = ln1(g, x);
  x = ops::add(x, attn(g, h, h, batch, key_mask));
  Var f = ff2(g, ops::relu(ff1(g, ln2(g, x))));
  return ops::add(x, f);
}

void EncoderLayer::collect(std::vector<ParamTensor*>& out) {
  ln1.collect(out);
  attn.collect(out);
  ln2.collect(out);
  ff1.collect(out);
  ff2.collect(out);
}

DecoderLayer::DecoderLayer(const std::string& name, Eigen::Index width, int heads, Eigen::Index ff_width,
                           std::mt19937_64& rng)
    : ln1(name + ".ln1", width),
      ln2(name + ".ln2", width),
      ln3(name + ".ln3", width),
      self_attn(name + ".self_attn", width, heads, rng),
      cross_attn(name + ".cross_attn", width, heads, rng),
      ff1(name + ".ff1", width, ff_width, rng),
      ff2(name + ".ff2", ff_width, width, rng) {}

Var DecoderLayer::operator()(Graph& g, Var x, Var memory, int batch, std::span<const std::uint8_t> memory_mask) {
  Var h = ln1(g, x);
  x = ops::add(x, self_attn(g, h, h, batch, {}));
  x = ops::add(x, cross_attn(g, ln2(g, x), memory, batch, memory_mask));
  Var f = ff2(g, ops::relu(ff1(g, ln3(g, x))));
  return ops::add(x, f);
}

void DecoderLayer::collect(std::vector<ParamTensor*>& out) {
  ln1.collect(out);
  self_attn.collect(out);
  ln2.collect(out);
  cross_attn.collect(out);
  ln3.collect(out);
  ff1.collect(out);
  ff2.collect(out);
}

}  // namespace misder::nn
