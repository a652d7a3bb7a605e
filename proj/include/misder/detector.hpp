#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "misder/autodiff.hpp"
#include "misder/checkpoint.hpp"
#include "misder/layers.hpp"

namespace misder {

enum class Pooling { mean, cls };

struct DetectorConfig {
  int vocab_size = 2000;
  int dim = 64;       // D
  int heads = 4;
  int layers = 2;
  int ff_mult = 4;
  int der_len = 32;   // K
  int max_len = 32;   // L, including the leading CLS
  double der_init_scale = 0.02;  // std of the entries of a freshly drawn DER
  Pooling pooling = Pooling::mean;
  std::uint64_t seed = 0;
};

/// Token ids of a batch of articles plus everything derived from them that
/// the extractor needs (attention mask and pooling weights).
struct EncodedBatch {
  int batch = 0;
  int text_len = 0;
  std::vector<std::int32_t> ids;      // batch·L
  std::vector<std::uint8_t> text_mask;  // batch·L, 1 = real token
  std::vector<int> labels;            // batch (may be empty for inference)
};

EncodedBatch make_batch(std::span<const std::vector<std::int32_t>> sequences, std::span<const int> labels = {});

/// Embedding table, prompt-conditioned self-attention extractor and the
/// two-layer veracity classifier. Parameter names carry the checkpoint
/// group prefixes "embedding", "extractor." and "classifier.".
class Detector {
 public:
  explicit Detector(const DetectorConfig& cfg);

  const DetectorConfig& config() const { return cfg_; }

  Var embed(Graph& g, std::span<const std::int32_t> ids);

  /// Probabilities (batch × 1) for the sequences [der ; text_b].
  /// `text_mask` marks real tokens; prompt rows are always visible.
  Var predict_with_der(Graph& g, Var der, Var embedded, std::span<const std::uint8_t> text_mask, int batch);

  /// Mean BCE of the batch under `der`.
  Var batch_loss(Graph& g, Var der, const EncodedBatch& b);

  /// Inference-only probabilities for many sequences.
  std::vector<double> score(const Matrix& der, std::span<const std::vector<std::int32_t>> sequences,
                            int chunk = 256);

  std::vector<ParamTensor*> embedding_params();
  std::vector<ParamTensor*> extractor_params();
  std::vector<ParamTensor*> classifier_params();
  std::vector<ParamTensor*> params();

  void set_frozen(bool frozen);

  void save_to(Checkpoint& ck);
  void load_from(const Checkpoint& ck);

  /// Fresh K×D prompt drawn from the detector's initializer.
  Matrix initial_der(std::uint64_t seed) const;

 private:
  DetectorConfig cfg_;
  ParamTensor embedding_;
  std::vector<nn::EncoderLayer> layers_;
  nn::LayerNorm final_norm_;
  nn::Linear hidden_;
  nn::Linear output_;
};

}  // namespace misder
