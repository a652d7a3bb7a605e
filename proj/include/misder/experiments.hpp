#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "misder/metrics.hpp"
#include "misder/train.hpp"

namespace misder::eval {

/// Scores every test article under `der`. Any test article dated on or
/// before `train_max` is temporal leakage and an error.
MetricReport evaluate_future(Detector& detector, const data::Vocabulary& vocab, const Matrix& der,
                             const std::vector<data::NewsArticle>& test, data::Date train_max, std::uint64_t seed);

/// Reruns the pipeline with the newest `rate` of the training data removed
/// and reports one point per (rate, variant). Rates that leave fewer than
/// two training periods are skipped with a warning. avg_decline is the mean
/// over metrics of (rate-0 mean - point mean) when rate 0 is part of the
/// sweep.
SweepReport drop_rate_experiment(const std::vector<data::NewsArticle>& articles, const RunConfig& base,
                                 const std::vector<double>& rates, const std::vector<std::string>& variants,
                                 const std::vector<std::uint64_t>& seeds, std::vector<std::string>* warnings = nullptr);

/// Yearly vs seasonal splits (or any list of intervals).
SweepReport interval_sweep(const std::vector<data::NewsArticle>& articles, const RunConfig& base,
                           const std::vector<std::string>& intervals, const std::vector<std::string>& variants,
                           const std::vector<std::uint64_t>& seeds);

/// DER length sensitivity.
SweepReport der_length_sweep(const std::vector<data::NewsArticle>& articles, const RunConfig& base,
                             const std::vector<int>& lengths, const std::vector<std::string>& variants,
                             const std::vector<std::uint64_t>& seeds);

struct TracePoint {
  double time = 0.0;        // calendar time (z^0 at 0, period τ at offset + 1)
  std::string source;       // "der.τ" for trained DERs, "forecast" otherwise
  double probability = 0.0;
};

/// Fake probability of one article over time. Times that coincide with a
/// trained period use that period's DER; other times use the forecaster
/// (continuous for ode/pt, rolled out for lstm) or, with no forecaster, the
/// latest DER at or before the time.
std::vector<TracePoint> case_trace(Detector& detector, const data::Vocabulary& vocab, const data::NewsArticle& article,
                                   const DerSeries& series, Forecaster* tsm, const std::vector<double>& times);

}  // namespace misder::eval
