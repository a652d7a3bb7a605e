#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "misder/checkpoint.hpp"
#include "misder/data.hpp"
#include "misder/detector.hpp"
#include "misder/events.hpp"
#include "misder/numerics.hpp"
#include "misder/tokenizer.hpp"
#include "misder/tsm.hpp"

namespace misder {

/// Token ids and labels of one group of articles (a period, a split).
struct LabeledSequences {
  std::vector<std::vector<std::int32_t>> sequences;
  std::vector<int> labels;

  std::size_t size() const { return sequences.size(); }
  bool empty() const { return sequences.empty(); }
};

LabeledSequences encode_articles(const std::vector<data::NewsArticle>& articles, const data::Vocabulary& vocab);
LabeledSequences encode_period(const data::TemporalDataset& ds, const data::Period& period,
                               const data::Vocabulary& vocab);

/// One trained period DER with its calendar placement.
struct DerPeriod {
  int index = 0;            // τ, 1..T
  int calendar_offset = 0;  // buckets since the first training bucket
  data::Date begin{};
  data::Date end{};
  Matrix der;
  std::vector<double> losses;  // per DER step, pre-update minibatch loss
};

struct DerSeries {
  Matrix z0;
  std::vector<DerPeriod> periods;

  int length() const { return static_cast<int>(periods.size()); }
  /// z^0..z^T on the calendar axis: z^0 at 0, period τ at calendar_offset + 1.
  SeriesInput as_series() const;
  /// Calendar time of the bucket that follows the last period.
  double next_time() const;

  /// Stores "der.1".."der.T" in `ck` and returns the JSON index of
  /// calendar ranges that accompanies them.
  nlohmann::ordered_json save_to(Checkpoint& ck) const;
  static DerSeries load_from(const Checkpoint& ck, const nlohmann::json& index, const Matrix& z0);
};

/// Mean Π-embedding of the non-special tokens of each event, averaged over
/// events, copied to all K rows and jittered with N(0, 0.01²) noise. Falls
/// back to a copy of `fallback` when no event has a usable token.
Matrix init_der(const std::vector<std::string>& events, const data::Vocabulary& vocab, Detector& detector,
                const Matrix& fallback, std::uint64_t noise_seed, std::vector<std::string>* warnings = nullptr);

/// Extracts events for a period's articles and initializes its DER.
Matrix init_period_der(const data::TemporalDataset& ds, const data::Period& period,
                       const data::ExtractorConfig& extractor, const data::Vocabulary& vocab, Detector& detector,
                       const Matrix& fallback, std::uint64_t noise_seed, std::vector<std::string>* warnings = nullptr);

/// DER steps for a period of `n` articles: `epochs` passes of `batch`-sized
/// minibatches, never fewer than `floor`.
int der_step_budget(std::size_t n, int batch, double epochs, int floor);

/// Adam on a single period DER against a frozen detector. Minibatches walk
/// a seeded shuffle of the period, reshuffled after each pass.
class PeriodDerTrainer {
 public:
  PeriodDerTrainer(Detector& detector, const LabeledSequences& data, Matrix init, int index, double lr, int batch,
                   std::uint64_t seed, AdamConfig adam = {});
  PeriodDerTrainer(const PeriodDerTrainer&) = delete;
  PeriodDerTrainer& operator=(const PeriodDerTrainer&) = delete;

  /// One Adam step; returns the minibatch loss before the update.
  double step();
  /// Mean BCE over the whole period at the current DER.
  double period_loss() const;

  const Matrix& der() const { return der_.values; }
  const std::vector<double>& losses() const { return losses_; }
  int steps_taken() const { return static_cast<int>(losses_.size()); }

 private:
  Detector* detector_;
  const LabeledSequences* data_;
  ParamTensor der_;
  Adam opt_;
  int batch_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::vector<double> losses_;
};

struct PeriodDerResult {
  Matrix der;
  std::vector<double> losses;
  double final_loss = 0.0;
};

/// Runs `steps` DER updates for one period. The detector must be frozen.
PeriodDerResult train_period_der(Detector& detector, const LabeledSequences& data, const Matrix& init, int steps,
                                 double lr, int batch, std::uint64_t seed);

/// Mean over periods of the per-period mean BCE under each period's DER.
Var der_objective(Graph& g, Detector& detector, const std::vector<Var>& ders,
                  const std::vector<const LabeledSequences*>& periods);

}  // namespace misder
