#include "misder/detector.hpp"

#include <random>

#include "misder/numerics.hpp"
#include "misder/ops.hpp"
#include "misder/tokenizer.hpp"

namespace misder {
namespace {

void check_finite(Var v, const std::string& layer) {
  if (!v.value().allFinite()) throw Error("non-finite activation in " + layer);
}

}  // namespace

EncodedBatch make_batch(std::span<const std::vector<std::int32_t>> sequences, std::span<const int> labels) {
  if (sequences.empty()) throw Error("empty batch");
  if (!labels.empty() && labels.size() != sequences.size()) throw Error("label count differs from batch size");
  EncodedBatch b;
  b.batch = static_cast<int>(sequences.size());
  b.text_len = static_cast<int>(sequences.front().size());
  for (const auto& s : sequences) {
    if (static_cast<int>(s.size()) != b.text_len) throw Error("ragged batch");
    for (std::int32_t id : s) {
      b.ids.push_back(id);
      b.text_mask.push_back(id == data::Vocabulary::kPad ? 0 : 1);
    }
  }
  b.labels.assign(labels.begin(), labels.end());
  return b;
}

Detector::Detector(const DetectorConfig& cfg) : cfg_(cfg) {
  if (cfg.dim % cfg.heads != 0) throw Error("detector: dim must be divisible by heads");
  if (cfg.dim < 2 || cfg.der_len < 1 || cfg.max_len < 1 || cfg.vocab_size < 3) throw Error("detector: bad sizes");
  std::mt19937_64 rng(cfg.seed);
  embedding_ = ParamTensor("embedding", normal_matrix(cfg.vocab_size, cfg.dim, 1.0, rng));
  for (int l = 0; l < cfg.layers; ++l) {
    layers_.emplace_back("extractor.layer" + std::to_string(l), cfg.dim, cfg.heads, cfg.ff_mult * cfg.dim, rng);
  }
  final_norm_ = nn::LayerNorm("extractor.final_norm", cfg.dim);
  hidden_ = nn::Linear("classifier.fc1", cfg.dim, cfg.dim / 2, rng);
  output_ = nn::Linear("classifier.fc2", cfg.dim / 2, 1, rng);
}

Var Detector::embed(Graph& g, std::span<const std::int32_t> ids) { return ops::embedding(g.param(embedding_), ids); }

Var Detector::predict_with_der(Graph& g, Var der, Var embedded, std::span<const std::uint8_t> text_mask, int batch) {
  const int k = cfg_.der_len;
  if (der.rows() != k || der.cols() != cfg_.dim) throw Error("predict_with_der: DER must be K x D");
  if (embedded.cols() != cfg_.dim || embedded.rows() % batch != 0) throw Error("predict_with_der: embedding must be (B*L) x D");
  const int l = static_cast<int>(embedded.rows()) / batch;
  if (static_cast<int>(text_mask.size()) != batch * l) throw Error("predict_with_der: mask length differs");

  std::vector<std::uint8_t> key_mask(static_cast<std::size_t>(batch * (k + l)), 1);
  std::vector<double> pool(key_mask.size(), 0.0);
  for (int b = 0; b < batch; ++b) {
    bool any_text = false;
    for (int j = 0; j < l; ++j) {
      const std::uint8_t m = text_mask[static_cast<std::size_t>(b * l + j)];
      key_mask[static_cast<std::size_t>(b * (k + l) + k + j)] = m;
      any_text = any_text || m != 0;
    }
    for (int j = 0; j < k + l; ++j) {
      const auto at = static_cast<std::size_t>(b * (k + l) + j);
      if (cfg_.pooling == Pooling::mean) {
        pool[at] = key_mask[at] ? 1.0 : 0.0;
      } else {
        pool[at] = (j == k && any_text) || (j == 0 && !any_text) ? 1.0 : 0.0;
      }
    }
  }

  Var x = ops::prefix_rows(der, embedded, batch);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i](g, x, batch, key_mask);
    check_finite(x, "extractor.layer" + std::to_string(i));
  }
  x = final_norm_(g, x);
  Var pooled = ops::masked_mean_rows(x, batch, pool);
  Var h = ops::relu(hidden_(g, pooled));
  check_finite(h, "classifier.fc1");
  Var p = ops::sigmoid(output_(g, h));
  check_finite(p, "classifier.fc2");
  return p;
}

Var Detector::batch_loss(Graph& g, Var der, const EncodedBatch& b) {
  if (b.labels.empty()) throw Error("batch_loss: batch has no labels");
  Var e = embed(g, b.ids);
  return ops::bce_loss(predict_with_der(g, der, e, b.text_mask, b.batch), b.labels);
}

std::vector<double> Detector::score(const Matrix& der, std::span<const std::vector<std::int32_t>> sequences, int chunk) {
  std::vector<double> out;
  out.reserve(sequences.size());
  for (std::size_t start = 0; start < sequences.size(); start += static_cast<std::size_t>(chunk)) {
    const std::size_t n = std::min(sequences.size() - start, static_cast<std::size_t>(chunk));
    const EncodedBatch b = make_batch(sequences.subspan(start, n));
    Graph g(false);
    Var p = predict_with_der(g, g.constant(der), embed(g, b.ids), b.text_mask, b.batch);
    for (Eigen::Index i = 0; i < p.rows(); ++i) out.push_back(p.value()(i, 0));
  }
  return out;
}

std::vector<ParamTensor*> Detector::embedding_params() { return {&embedding_}; }

std::vector<ParamTensor*> Detector::extractor_params() {
  std::vector<ParamTensor*> out;
  for (auto& l : layers_) l.collect(out);
  final_norm_.collect(out);
  return out;
}

std::vector<ParamTensor*> Detector::classifier_params() {
  std::vector<ParamTensor*> out;
  hidden_.collect(out);
  output_.collect(out);
  return out;
}

std::vector<ParamTensor*> Detector::params() {
  std::vector<ParamTensor*> out = embedding_params();
  for (ParamTensor* p : extractor_params()) out.push_back(p);
  for (ParamTensor* p : classifier_params()) out.push_back(p);
  return out;
}

void Detector::set_frozen(bool frozen) {
  for (ParamTensor* p : params()) p->frozen = frozen;
}

void Detector::save_to(Checkpoint& ck) { ck.put_all(params()); }

void Detector::load_from(const Checkpoint& ck) { ck.restore_all(params()); }

Matrix Detector::initial_der(std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  return normal_matrix(cfg_.der_len, cfg_.dim, cfg_.der_init_scale, rng);
}

}  // namespace misder
