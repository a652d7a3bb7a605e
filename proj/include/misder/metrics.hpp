#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace misder::eval {

/// Threshold-0.5 classification metrics; label 1 is "fake".
struct ConfusionMetrics {
  double accuracy = 0.0;
  double f1_real = 0.0;
  double f1_fake = 0.0;
  double macro_f1 = 0.0;
};

/// F1 of a class with no true positives, false positives or false
/// negatives is 0.
ConfusionMetrics confusion_metrics(std::span<const double> scores, std::span<const int> labels);

/// Mann-Whitney statistic P(score_fake > score_real) + 0.5·P(tie), by
/// average ranks.
double auc(std::span<const double> scores, std::span<const int> labels);

/// Partial AUC over FPR in [0, max_fpr], standardized with the McClish map
/// 0.5·(1 + (pAUC - max_fpr²/2) / (max_fpr - max_fpr²/2)).
double sp_auc(std::span<const double> scores, std::span<const int> labels, double max_fpr = 0.1);

struct MetricReport {
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  double auc = 0.0;
  double sp_auc = 0.0;
  double f1_real = 0.0;
  double f1_fake = 0.0;
  std::size_t n_test = 0;
  std::uint64_t seed = 0;
};

MetricReport metric_report(std::span<const double> scores, std::span<const int> labels, std::uint64_t seed,
                           double max_fpr = 0.1);

/// Metric values in report order, with names.
std::vector<std::pair<std::string, double>> metric_values(const MetricReport& r);

nlohmann::ordered_json to_json(const MetricReport& r);
MetricReport metric_report_from_json(const nlohmann::json& j);
std::string format_text(const MetricReport& r);

/// One point of a sweep: an axis value and one variant, summarized over
/// seeds by mean and (population) standard deviation.
struct SweepPoint {
  std::string value;
  std::string variant;
  MetricReport mean;
  MetricReport stddev;
  int seeds = 0;
  /// Mean over metrics of (baseline - this) for drop-rate sweeps.
  double avg_decline = 0.0;
  std::vector<MetricReport> runs;
};

struct SweepReport {
  std::string axis;  // drop_rate | interval | K | period
  std::vector<SweepPoint> points;
};

SweepPoint summarize(const std::string& value, const std::string& variant, const std::vector<MetricReport>& runs);

nlohmann::ordered_json to_json(const SweepReport& r);
std::string format_text(const SweepReport& r);
/// One row per (point, variant, metric): axis,variant,metric,mean,std.
std::string format_csv(const SweepReport& r);

}  // namespace misder::eval
