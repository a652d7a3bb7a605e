#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "misder/checkpoint.hpp"
#include "misder/data.hpp"
#include "misder/der.hpp"
#include "misder/detector.hpp"
#include "misder/events.hpp"
#include "misder/metrics.hpp"
#include "misder/synthetic.hpp"
#include "misder/tokenizer.hpp"
#include "misder/tsm.hpp"

namespace misder {

enum class PeriodSampling { round_robin, random };
enum class DerSchedule { interleaved, sequential };

/// Every knob of a run. JSON keys equal the field names.
struct RunConfig {
  // detector
  int der_len = 32;  // K
  int dim = 64;      // D
  int heads = 4;
  int layers = 2;
  int max_len = 32;  // L
  double der_init_scale = 0.02;
  std::string pooling = "mean";
  int vocab_min_freq = 2;
  int vocab_max_size = 0;  // 0 = unlimited

  // data
  std::string interval = "yearly";
  double drop_rate = 0.0;
  std::string extractor = "offline_mean";
  std::string events_sidecar;
  std::string llm_endpoint;

  // schedule
  double warmup_epochs = 20.0;  // E_w, in epochs of the training split
  double der_epochs = 10.0;     // E_d, in epochs of the training split
  int batch = 64;
  double lr_detector = 7e-5;
  double lr_der = 1e-5;
  double lr_tsm = 1e-3;
  int patience = 5;
  int der_min_steps = 50;
  std::string sampling = "round_robin";
  std::string schedule = "interleaved";
  double weight_decay = 0.0;
  double clip_norm = 0.0;

  // time-series model
  std::string variant = "ode";
  int lstm_hidden = 128;
  int ode_latent = 256;
  int ode_field_hidden = 256;
  double ode_rtol = 1e-6;
  double ode_atol = 1e-8;
  int ode_max_steps = 10000;
  int pt_model_dim = 128;
  int pt_heads = 4;
  int pt_layers = 2;
  int pt_max_positions = 64;
  int pt_pretrain_epochs = 30;
  int pt_pretrain_trajectories = 256;
  int pt_pretrain_grid = 12;
  double pt_pretrain_lr = 1e-3;

  std::uint64_t seed = 0;

  void validate() const;
  Variant tsm_variant() const { return parse_variant(variant); }
  data::Interval split_interval() const { return data::parse_interval(interval); }
  DetectorConfig detector_config(int vocab_size) const;
  data::ExtractorConfig extractor_config() const;
};

nlohmann::ordered_json to_json(const RunConfig& c);
/// Overlays `j` on `base`; unknown keys are an error.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});

/// Independent deterministic stream for a named use of the run seed.
std::uint64_t derive_seed(std::uint64_t seed, const std::string& purpose, std::uint64_t index = 0);

/// Articles split into the past/future protocol and encoded with a
/// vocabulary built on the training split.
struct PreparedData {
  data::TemporalDataset train;
  std::vector<data::NewsArticle> validation;
  std::vector<data::NewsArticle> test;
  data::Vocabulary vocab;
  LabeledSequences train_all;
  std::vector<LabeledSequences> periods;
  LabeledSequences validation_seq;
  LabeledSequences test_seq;
  data::Date train_max{};
};

PreparedData prepare_data(const std::vector<data::NewsArticle>& articles, const RunConfig& cfg);

struct WarmupReport {
  std::vector<double> epoch_loss;      // mean minibatch loss per epoch
  std::vector<double> val_macro_f1;    // [0] at initialization, then per epoch
  int best_epoch = 0;                  // 0 = initialization
  int epochs_run = 0;
  bool early_stopped = false;
  bool validation_used = false;
  std::vector<std::string> warnings;
};

/// Stage 1: joint minibatch Adam on the detector and z^0 with early stopping
/// on validation macro F1; the best epoch is restored.
WarmupReport warmup(Detector& detector, ParamTensor& z0, const PreparedData& data, const RunConfig& cfg);

std::unique_ptr<Forecaster> make_forecaster(const RunConfig& cfg, int state);

struct LearnReport {
  DerSeries series;
  std::vector<double> tsm_loss;         // R_TSM before each TSM step
  std::vector<int> der_steps;           // per period
  std::vector<int> period_order;        // period index of each iteration
  int iterations = 0;
  int tsm_failures = 0;
  double final_tsm_loss = 0.0;          // R_TSM of the fitted model on the final series
  std::vector<std::string> log;
};

/// Stage 2: freezes the detector, initializes each period DER from its
/// events, then alternates one DER step on a period minibatch with one TSM
/// fit step on the current series. `tsm` may be null for the static variant.
LearnReport dynamic_env_learning(Detector& detector, const Matrix& z0, const PreparedData& data, Forecaster* tsm,
                                 const RunConfig& cfg);

/// z^T for the static variant, otherwise the TSM forecast for the bucket
/// after the last training period.
Matrix predict_future(Forecaster* tsm, const DerSeries& series);

/// Pre-trains a pt forecaster on a generated dynamics corpus sized to K·D.
PretrainReport pretrain_for_run(PtForecaster& model, const RunConfig& cfg);

struct StageTiming {
  std::string stage;
  double seconds = 0.0;
};

struct TimingLedger {
  std::vector<StageTiming> stages;
  void add(const std::string& stage, double seconds) { stages.push_back({stage, seconds}); }
  double total() const;
};

/// Stage durations of `run` and its total-time ratio to `baseline`.
nlohmann::ordered_json timing_report(const TimingLedger& run, const TimingLedger& baseline);

/// Detector after warm-up, shared by every variant of the same seed.
struct WarmState {
  PreparedData data;
  Checkpoint detector;  // embedding, extractor.*, classifier.*, der.0
  WarmupReport report;
  double seconds = 0.0;
};

WarmState run_warmup(const std::vector<data::NewsArticle>& articles, const RunConfig& cfg);

struct RunArtifacts {
  std::string variant;
  Checkpoint detector;
  Checkpoint ders;
  nlohmann::ordered_json der_index;
  Checkpoint tsm;
  std::optional<Matrix> future_der;
  eval::MetricReport report;       // future period under the predicted (or z^T) DER
  eval::MetricReport report_z0;    // future period under the warm-up DER
  LearnReport learn;
  WarmupReport warmup;
  TimingLedger timing;
};

/// Stage 2, prediction and evaluation on top of a warm-up.
RunArtifacts run_learn(const WarmState& warm, const RunConfig& cfg);

/// Full pipeline for one configuration.
RunArtifacts run_pipeline(const std::vector<data::NewsArticle>& articles, const RunConfig& cfg);

}  // namespace misder
