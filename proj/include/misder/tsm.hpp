#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "misder/autodiff.hpp"
#include "misder/checkpoint.hpp"
#include "misder/dopri5.hpp"
#include "misder/layers.hpp"
#include "misder/numerics.hpp"
#include "misder/synthetic.hpp"

namespace misder {

enum class Variant { static_der, lstm, ode, pt };

Variant parse_variant(const std::string& name);
std::string variant_name(Variant v);

/// A DER sequence as the forecasters see it: ders[0] is the warm-up DER,
/// ders[τ] the DER of training period τ, and times[τ] its position on the
/// calendar axis in period units (times[0] = 0).
struct SeriesInput {
  std::vector<Matrix> ders;
  std::vector<double> times;

  int periods() const { return static_cast<int>(ders.size()) - 1; }
  void validate() const;
};

/// Common interface of the DER forecasters.
class Forecaster {
 public:
  virtual ~Forecaster() = default;

  virtual Variant variant() const = 0;
  /// Teacher-forced training objective: mean over τ = 1..T of the mean-L1
  /// error between the forecast from the true prefix and ders[τ].
  virtual Var fit_loss(Graph& g, const SeriesInput& s) = 0;
  /// Forecast at calendar time `time` (> times.back()) from the full series.
  virtual Var forecast(Graph& g, const SeriesInput& s, double time) = 0;
  virtual std::vector<ParamTensor*> params() = 0;

  Matrix forecast_value(const SeriesInput& s, double time);

  void save_to(Checkpoint& ck) { ck.put_all(params()); }
  void load_from(const Checkpoint& ck) { ck.restore_all(params()); }
};

/// Runs one fit step (loss, backward, Adam) and returns the pre-step loss.
double fit_step(Forecaster& model, Adam& opt, const SeriesInput& s);

// ---------------------------------------------------------------------------

struct LstmConfig {
  int state = 0;   // K·D
  int hidden = 128;
  std::uint64_t seed = 0;
};

/// Discrete-time forecaster: input projection, one LSTM layer, output
/// projection of the last hidden state.
class LstmForecaster : public Forecaster {
 public:
  explicit LstmForecaster(const LstmConfig& cfg);

  Variant variant() const override { return Variant::lstm; }
  Var fit_loss(Graph& g, const SeriesInput& s) override;
  /// Horizons beyond one period are rolled out by feeding forecasts back.
  Var forecast(Graph& g, const SeriesInput& s, double time) override;
  std::vector<ParamTensor*> params() override;

  /// Predictions for every step of `inputs` (rows are flattened DERs).
  Var run(Graph& g, Var inputs, int extra_steps = 0);

 private:
  LstmConfig cfg_;
  nn::Linear input_;
  ParamTensor w_x_, w_h_, b_;
  nn::Linear output_;
};

// ---------------------------------------------------------------------------

struct OdeConfig {
  int state = 0;     // K·D
  int latent = 256;  // H
  int field_hidden = 256;
  ode::IntegrationConfig solver;
  bool zero_field = false;  // start with a vanishing field output layer
  std::uint64_t seed = 0;
};

/// Continuous-time forecaster: encode z^0, integrate a learned field in
/// latent space, decode at the requested times. Calendar time is divided by
/// the time of the last training period.
class OdeForecaster : public Forecaster {
 public:
  explicit OdeForecaster(const OdeConfig& cfg);

  Variant variant() const override { return Variant::ode; }
  Var fit_loss(Graph& g, const SeriesInput& s) override;
  Var forecast(Graph& g, const SeriesInput& s, double time) override;
  std::vector<ParamTensor*> params() override;

  /// Decoded states at non-decreasing normalized times (≥ 0) from z0.
  std::vector<Var> trajectory(Graph& g, Var z0, const std::vector<double>& times);

  Var encode(Graph& g, Var z);
  Var decode(Graph& g, Var h);
  ode::Field field();

  /// Trace of the most recent integration, and an optional trace to replay.
  const ode::StepTrace& last_trace() const { return last_trace_; }
  void set_replay(const ode::StepTrace* trace) { replay_ = trace; }

 private:
  OdeConfig cfg_;
  nn::Linear enc1_, enc2_;
  nn::Linear field1_, field2_, field3_;
  nn::Linear dec1_, dec2_;
  ode::StepTrace last_trace_;
  const ode::StepTrace* replay_ = nullptr;
};

// ---------------------------------------------------------------------------

struct PtConfig {
  int state = 0;        // K·D
  int model_dim = 128;  // M
  int heads = 4;
  int layers = 2;
  int max_positions = 64;
  std::uint64_t seed = 0;
};

struct PretrainReport {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_reconstruction;
  std::vector<double> epoch_forecast;
};

/// Sequence encoder-decoder forecaster with separate reconstruction and
/// forecasting heads, pre-trainable on trajectory corpora.
class PtForecaster : public Forecaster {
 public:
  explicit PtForecaster(const PtConfig& cfg);

  Variant variant() const override { return Variant::pt; }
  Var fit_loss(Graph& g, const SeriesInput& s) override;
  Var forecast(Graph& g, const SeriesInput& s, double time) override;
  std::vector<ParamTensor*> params() override;

  /// Encodes `batch` sequences of equal length (rows batch·len, width
  /// state), one position per row; masked steps must already be zero.
  Var encode(Graph& g, Var states, std::span<const double> positions, int batch, std::span<const std::uint8_t> mask);
  /// Reconstruction head applied to encoder output.
  Var reconstruct(Graph& g, Var memory);
  /// Forecasting head on decoder output; query positions split evenly
  /// across the batch blocks.
  Var decode(Graph& g, Var memory, std::span<const double> query_positions, int batch);
  Var decode_masked(Graph& g, Var memory, std::span<const double> query_positions, int batch,
                    std::span<const std::uint8_t> memory_mask);

  /// Reconstruction + forecast L1 on a batch of corpus trajectories.
  Var pretrain_loss(Graph& g, const data::TrajectoryCorpus& corpus, std::span<const std::size_t> which,
                    double* reconstruction = nullptr, double* forecast = nullptr);

  ParamTensor& head_in_weight() { return head_in_.weight; }
  ParamTensor& head_out_weight() { return head_out_.weight; }

 private:
  Var positions(Graph& g, std::span<const double> pos);

  PtConfig cfg_;
  ParamTensor conv_;  // 3·state × M, taps for t-1, t, t+1
  ParamTensor conv_bias_;
  ParamTensor pos_;   // max_positions × M
  std::vector<nn::EncoderLayer> encoder_;
  nn::LayerNorm enc_norm_;
  std::vector<nn::DecoderLayer> decoder_;
  nn::LayerNorm dec_norm_;
  nn::Linear head_in_, head_out_;
};

struct PretrainConfig {
  int epochs = 30;
  int batch = 16;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

PretrainReport pretrain(PtForecaster& model, const data::TrajectoryCorpus& corpus, const PretrainConfig& cfg);

}  // namespace misder
