#include "misder/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

namespace misder::eval {
namespace {

std::string rate_label(double rate) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%.2f", rate);
  return buf;
}

double metric_mean(const MetricReport& r) {
  double s = 0.0;
  const auto values = metric_values(r);
  for (const auto& [name, v] : values) s += v;
  return s / static_cast<double>(values.size());
}

/// Runs every variant on one shared warm-up per seed.
std::map<std::string, std::vector<MetricReport>> run_variants(const std::vector<data::NewsArticle>& articles,
                                                              RunConfig cfg, const std::vector<std::string>& variants,
                                                              const std::vector<std::uint64_t>& seeds) {
  std::map<std::string, std::vector<MetricReport>> out;
  for (std::uint64_t seed : seeds) {
    cfg.seed = seed;
    const WarmState warm = run_warmup(articles, cfg);
    for (const std::string& v : variants) {
      RunConfig vc = cfg;
      vc.variant = v;
      out[v].push_back(run_learn(warm, vc).report);
    }
  }
  return out;
}

}  // namespace

MetricReport evaluate_future(Detector& detector, const data::Vocabulary& vocab, const Matrix& der,
                             const std::vector<data::NewsArticle>& test, data::Date train_max, std::uint64_t seed) {
  if (test.empty()) throw Error("evaluate_future: empty test split");
  for (const data::NewsArticle& a : test) {
    if (a.timestamp <= train_max) {
      throw Error("temporal leakage: test article " + a.id + " dated " + data::format_date(a.timestamp) +
                  " is not after the last training date " + data::format_date(train_max));
    }
  }
  const LabeledSequences seq = encode_articles(test, vocab);
  const std::vector<double> scores = detector.score(der, seq.sequences);
  return metric_report(scores, seq.labels, seed);
}

SweepReport drop_rate_experiment(const std::vector<data::NewsArticle>& articles, const RunConfig& base,
                                 const std::vector<double>& rates, const std::vector<std::string>& variants,
                                 const std::vector<std::uint64_t>& seeds, std::vector<std::string>* warnings) {
  SweepReport report{"drop_rate", {}};
  const data::Interval interval = base.split_interval();
  const data::FutureSplit split = data::split_future(data::make_dataset(articles, interval), interval);
  std::map<std::string, double> baseline;
  for (double rate : rates) {
    const data::TemporalDataset kept = rate > 0.0 ? data::drop_tail(split.train, rate) : split.train;
    if (kept.num_periods() < 2) {
      if (warnings != nullptr) {
        warnings->push_back("drop rate " + rate_label(rate) + " leaves fewer than 2 training periods; skipped");
      }
      continue;
    }
    RunConfig cfg = base;
    cfg.drop_rate = rate;
    const auto runs = run_variants(articles, cfg, variants, seeds);
    for (const std::string& v : variants) {
      SweepPoint p = summarize(rate_label(rate), v, runs.at(v));
      if (rate == 0.0) baseline[v] = metric_mean(p.mean);
      if (baseline.count(v) != 0) p.avg_decline = baseline[v] - metric_mean(p.mean);
      report.points.push_back(std::move(p));
    }
  }
  return report;
}

SweepReport interval_sweep(const std::vector<data::NewsArticle>& articles, const RunConfig& base,
                           const std::vector<std::string>& intervals, const std::vector<std::string>& variants,
                           const std::vector<std::uint64_t>& seeds) {
  SweepReport report{"interval", {}};
  for (const std::string& interval : intervals) {
    RunConfig cfg = base;
    cfg.interval = interval;
    const auto runs = run_variants(articles, cfg, variants, seeds);
    for (const std::string& v : variants) report.points.push_back(summarize(interval, v, runs.at(v)));
  }
  return report;
}

SweepReport der_length_sweep(const std::vector<data::NewsArticle>& articles, const RunConfig& base,
                             const std::vector<int>& lengths, const std::vector<std::string>& variants,
                             const std::vector<std::uint64_t>& seeds) {
  SweepReport report{"K", {}};
  for (int k : lengths) {
    RunConfig cfg = base;
    cfg.der_len = k;
    const auto runs = run_variants(articles, cfg, variants, seeds);
    for (const std::string& v : variants) report.points.push_back(summarize(std::to_string(k), v, runs.at(v)));
  }
  return report;
}

std::vector<TracePoint> case_trace(Detector& detector, const data::Vocabulary& vocab, const data::NewsArticle& article,
                                   const DerSeries& series, Forecaster* tsm, const std::vector<double>& times) {
  const SeriesInput full = series.as_series();
  const std::vector<std::vector<std::int32_t>> seq{data::tokenize(article, vocab)};
  std::vector<TracePoint> out;
  for (double t : times) {
    if (t < 0.0) throw Error("case_trace: times must be non-negative");
    TracePoint point;
    point.time = t;
    const auto exact = std::find(full.times.begin(), full.times.end(), t);
    Matrix der;
    if (exact != full.times.end()) {
      const auto i = static_cast<std::size_t>(exact - full.times.begin());
      der = full.ders[i];
      point.source = "der." + std::to_string(i);
    } else {
      // Latest DER at or before t, then let the forecaster refine it.
      std::size_t known = 0;
      while (known + 1 < full.times.size() && full.times[known + 1] <= t) ++known;
      der = full.ders[known];
      point.source = "der." + std::to_string(known);
      if (tsm != nullptr && tsm->variant() == Variant::ode) {
        der = tsm->forecast_value(full, t);
        point.source = "forecast";
      } else if (tsm != nullptr && known >= 1) {
        SeriesInput prefix;
        prefix.ders.assign(full.ders.begin(), full.ders.begin() + static_cast<std::ptrdiff_t>(known + 1));
        prefix.times.assign(full.times.begin(), full.times.begin() + static_cast<std::ptrdiff_t>(known + 1));
        der = tsm->forecast_value(prefix, t);
        point.source = "forecast";
      }
    }
    point.probability = detector.score(der, seq).front();
    out.push_back(point);
  }
  return out;
}

}  // namespace misder::eval
