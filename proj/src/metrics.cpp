#include "misder/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "misder/autodiff.hpp"

namespace misder::eval {
namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.empty()) throw Error("metrics: empty input");
  if (scores.size() != labels.size()) throw Error("metrics: scores and labels differ in length");
  for (int y : labels) {
    if (y != 0 && y != 1) throw Error("metrics: labels must be 0 or 1");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw Error("metrics: non-finite score");
  }
}

std::pair<std::size_t, std::size_t> class_counts(std::span<const int> labels) {
  const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  return {pos, labels.size() - pos};
}

double f1(std::size_t tp, std::size_t fp, std::size_t fn) {
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

std::string fixed(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace

ConfusionMetrics confusion_metrics(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= 0.5;
    if (pred && labels[i] == 1) ++tp;
    if (pred && labels[i] == 0) ++fp;
    if (!pred && labels[i] == 0) ++tn;
    if (!pred && labels[i] == 1) ++fn;
  }
  ConfusionMetrics m;
  m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(scores.size());
  m.f1_fake = f1(tp, fp, fn);
  m.f1_real = f1(tn, fn, fp);
  m.macro_f1 = 0.5 * (m.f1_fake + m.f1_real);
  return m;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const auto [pos, neg] = class_counts(labels);
  if (pos == 0 || neg == 0) throw Error("AUC undefined: labels contain a single class");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1..j
    for (std::size_t m = i; m < j; ++m) {
      if (labels[order[m]] == 1) rank_sum += avg_rank;
    }
    i = j;
  }
  const double p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

double sp_auc(std::span<const double> scores, std::span<const int> labels, double max_fpr) {
  check_inputs(scores, labels);
  if (!(max_fpr > 0.0 && max_fpr <= 1.0)) throw Error("sp_auc: max_fpr must lie in (0, 1]");
  const auto [pos, neg] = class_counts(labels);
  if (pos == 0 || neg == 0) throw Error("AUC undefined: labels contain a single class");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  // ROC vertices after each group of tied scores.
  std::vector<std::pair<double, double>> roc{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? tp : fp) += 1;
      ++j;
    }
    roc.emplace_back(static_cast<double>(fp) / static_cast<double>(neg), static_cast<double>(tp) / static_cast<double>(pos));
    i = j;
  }
  double area = 0.0;
  for (std::size_t i = 1; i < roc.size(); ++i) {
    const auto [x0, y0] = roc[i - 1];
    auto [x1, y1] = roc[i];
    if (x0 >= max_fpr) break;
    if (x1 > max_fpr) {
      y1 = y0 + (y1 - y0) * (max_fpr - x0) / (x1 - x0);
      x1 = max_fpr;
    }
    area += 0.5 * (x1 - x0) * (y0 + y1);
  }
  const double min_area = 0.5 * max_fpr * max_fpr;
  const double max_area = max_fpr;
  return 0.5 * (1.0 + (area - min_area) / (max_area - min_area));
}

MetricReport metric_report(std::span<const double> scores, std::span<const int> labels, std::uint64_t seed,
                           double max_fpr) {
  const ConfusionMetrics c = confusion_metrics(scores, labels);
  MetricReport r;
  r.macro_f1 = c.macro_f1;
  r.accuracy = c.accuracy;
  r.f1_real = c.f1_real;
  r.f1_fake = c.f1_fake;
  r.auc = auc(scores, labels);
  r.sp_auc = sp_auc(scores, labels, max_fpr);
  r.n_test = scores.size();
  r.seed = seed;
  return r;
}

std::vector<std::pair<std::string, double>> metric_values(const MetricReport& r) {
  return {{"macro_f1", r.macro_f1}, {"accuracy", r.accuracy}, {"auc", r.auc},
          {"sp_auc", r.sp_auc},     {"f1_real", r.f1_real},   {"f1_fake", r.f1_fake}};
}

nlohmann::ordered_json to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  for (const auto& [name, v] : metric_values(r)) j[name] = v;
  j["n_test"] = r.n_test;
  j["seed"] = r.seed;
  return j;
}

MetricReport metric_report_from_json(const nlohmann::json& j) {
  MetricReport r;
  r.macro_f1 = j.at("macro_f1").get<double>();
  r.accuracy = j.at("accuracy").get<double>();
  r.auc = j.at("auc").get<double>();
  r.sp_auc = j.at("sp_auc").get<double>();
  r.f1_real = j.at("f1_real").get<double>();
  r.f1_fake = j.at("f1_fake").get<double>();
  r.n_test = j.at("n_test").get<std::size_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  return r;
}

std::string format_text(const MetricReport& r) {
  std::ostringstream out;
  for (const auto& [name, v] : metric_values(r)) {
    char line[64];
    std::snprintf(line, sizeof(line), "%-10s %8s\n", name.c_str(), fixed(v).c_str());
    out << line;
  }
  out << "n_test     " << r.n_test << "\nseed       " << r.seed << "\n";
  return out.str();
}

SweepPoint summarize(const std::string& value, const std::string& variant, const std::vector<MetricReport>& runs) {
  if (runs.empty()) throw Error("sweep point without runs");
  SweepPoint p;
  p.value = value;
  p.variant = variant;
  p.seeds = static_cast<int>(runs.size());
  p.runs = runs;
  const double n = static_cast<double>(runs.size());
  auto fields = [](MetricReport& r) {
    return std::vector<double*>{&r.macro_f1, &r.accuracy, &r.auc, &r.sp_auc, &r.f1_real, &r.f1_fake};
  };
  auto mean_fields = fields(p.mean);
  auto std_fields = fields(p.stddev);
  for (std::size_t f = 0; f < mean_fields.size(); ++f) {
    double sum = 0.0;
    for (MetricReport r : runs) sum += *fields(r)[f];
    const double mu = sum / n;
    double sq = 0.0;
    for (MetricReport r : runs) sq += (*fields(r)[f] - mu) * (*fields(r)[f] - mu);
    *mean_fields[f] = mu;
    *std_fields[f] = std::sqrt(sq / n);
  }
  p.mean.n_test = runs.front().n_test;
  p.stddev.n_test = runs.front().n_test;
  return p;
}

nlohmann::ordered_json to_json(const SweepReport& r) {
  nlohmann::ordered_json j;
  j["axis"] = r.axis;
  j["points"] = nlohmann::ordered_json::array();
  for (const SweepPoint& p : r.points) {
    nlohmann::ordered_json jp;
    jp["value"] = p.value;
    jp["variant"] = p.variant;
    jp["seeds"] = p.seeds;
    jp["mean"] = to_json(p.mean);
    jp["std"] = to_json(p.stddev);
    jp["mean"].erase("seed");
    jp["std"].erase("seed");
    jp["avg_decline"] = p.avg_decline;
    jp["runs"] = nlohmann::ordered_json::array();
    for (const MetricReport& run : p.runs) jp["runs"].push_back(to_json(run));
    j["points"].push_back(std::move(jp));
  }
  return j;
}

std::string format_text(const SweepReport& r) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-12s %-8s %5s %16s %16s %16s %16s %10s\n", r.axis.c_str(), "variant", "seeds",
                "macro_f1", "accuracy", "auc", "sp_auc", "avg_decl");
  out << line;
  for (const SweepPoint& p : r.points) {
    auto cell = [](double mean, double sd) { return fixed(mean) + " ±" + fixed(sd); };
    std::snprintf(line, sizeof(line), "%-12s %-8s %5d %16s %16s %16s %16s %10s\n", p.value.c_str(), p.variant.c_str(),
                  p.seeds, cell(p.mean.macro_f1, p.stddev.macro_f1).c_str(),
                  cell(p.mean.accuracy, p.stddev.accuracy).c_str(), cell(p.mean.auc, p.stddev.auc).c_str(),
                  cell(p.mean.sp_auc, p.stddev.sp_auc).c_str(), fixed(p.avg_decline).c_str());
    out << line;
  }
  return out.str();
}

std::string format_csv(const SweepReport& r) {
  std::ostringstream out;
  out << "axis,variant,metric,mean,std\n";
  for (const SweepPoint& p : r.points) {
    const auto means = metric_values(p.mean);
    const auto sds = metric_values(p.stddev);
    for (std::size_t i = 0; i < means.size(); ++i) {
      out << p.value << ',' << p.variant << ',' << means[i].first << ',' << fixed(means[i].second, 6) << ','
          << fixed(sds[i].second, 6) << '\n';
    }
  }
  return out.str();
}

}  // namespace misder::eval
