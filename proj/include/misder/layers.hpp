#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "misder/autodiff.hpp"

// Small parameterized building blocks shared by the detector and the
// forecasters. Every block owns its ParamTensors and lists them via params().
namespace misder::nn {

struct Linear {
  ParamTensor weight;  // in × out
  ParamTensor bias;    // 1 × out

  Linear() = default;
  Linear(const std::string& name, Eigen::Index in, Eigen::Index out, std::mt19937_64& rng);
  Var operator()(Graph& g, Var x);
  void collect(std::vector<ParamTensor*>& out);
};

struct LayerNorm {
  ParamTensor gain;
  ParamTensor bias;

  LayerNorm() = default;
  LayerNorm(const std::string& name, Eigen::Index width);
  Var operator()(Graph& g, Var x);
  void collect(std::vector<ParamTensor*>& out);
};

/// Multi-head attention with separate q/k/v/output projections.
struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  int heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, Eigen::Index width, int heads, std::mt19937_64& rng);
  Var operator()(Graph& g, Var queries, Var keys, int batch, std::span<const std::uint8_t> key_mask);
  void collect(std::vector<ParamTensor*>& out);
};

/// Pre-norm encoder block: x + MHA(LN(x)), then x + FF(LN(x)).
struct EncoderLayer {
  LayerNorm ln1, ln2;
  MultiHeadAttention attn;
  Linear ff1, ff2;

  EncoderLayer() = default;
  EncoderLayer(const std::string& name, Eigen::Index width, int heads, Eigen::Index ff_width, std::mt19937_64& rng);
  Var operator()(Graph& g, Var x, int batch, std::span<const std::uint8_t> key_mask);
  void collect(std::vector<ParamTensor*>& out);
};

/// Pre-norm decoder block: self-attention, cross-attention to memory, FF.
struct DecoderLayer {
  LayerNorm ln1, ln2, ln3;
  MultiHeadAttention self_attn, cross_attn;
  Linear ff1, ff2;

  DecoderLayer() = default;
  DecoderLayer(const std::string& name, Eigen::Index width, int heads, Eigen::Index ff_width, std::mt19937_64& rng);
  Var operator()(Graph& g, Var x, Var memory, int batch, std::span<const std::uint8_t> memory_mask = {});
  void collect(std::vector<ParamTensor*>& out);
};

}  // namespace misder::nn
