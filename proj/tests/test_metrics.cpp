#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "misder/autodiff.hpp"
#include "misder/metrics.hpp"

using namespace misder;
using namespace misder::eval;

namespace {

double brute_force_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      pairs += 1.0;
      if (s[i] > s[j]) wins += 1.0;
      if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

}  // namespace

TEST_CASE("confusion metrics on hand fixtures") {
  const std::vector<double> perfect_s{0.9, 0.1, 0.8, 0.2};
  const std::vector<int> perfect_y{1, 0, 1, 0};
  const auto p = confusion_metrics(perfect_s, perfect_y);
  CHECK(p.accuracy == 1.0);
  CHECK(p.f1_real == 1.0);
  CHECK(p.f1_fake == 1.0);
  CHECK(p.macro_f1 == 1.0);

  const std::vector<double> preds{1, 1, 0, 0};
  const std::vector<int> labels{1, 0, 0, 0};
  const auto m = confusion_metrics(preds, labels);
  CHECK(m.f1_fake == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(m.f1_real == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(m.macro_f1 == doctest::Approx(0.7333333333333333).epsilon(1e-12));
  CHECK(m.accuracy == 0.75);

  const std::vector<double> one_class{0.7, 0.7, 0.7, 0.7};
  const std::vector<int> balanced{1, 1, 0, 0};
  const auto o = confusion_metrics(one_class, balanced);
  CHECK(o.f1_real == 0.0);
  CHECK(o.macro_f1 == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  CHECK_THROWS(confusion_metrics(std::vector<double>{}, std::vector<int>{}));
}

TEST_CASE("score 0.5 is a fake prediction") {
  const std::vector<double> s{0.5, 0.4999};
  const std::vector<int> y{1, 0};
  CHECK(confusion_metrics(s, y).accuracy == 1.0);
}

TEST_CASE("auc fixtures and single-class error") {
  CHECK(auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}) == 1.0);
  CHECK(auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1}) == 0.75);
  CHECK(auc(std::vector<double>{0.3, 0.3, 0.3, 0.3}, std::vector<int>{0, 1, 0, 1}) == 0.5);
  CHECK_THROWS_WITH(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), doctest::Contains("AUC undefined"));
}

TEST_CASE("auc equals the brute-force pairwise statistic on random instances") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> size(2, 200);
  std::uniform_int_distribution<int> level(0, 20);  // coarse scores force ties
  for (int trial = 0; trial < 100; ++trial) {
    const int n = size(rng);
    std::vector<double> s(static_cast<std::size_t>(n));
    std::vector<int> y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      s[static_cast<std::size_t>(i)] = level(rng) / 20.0;
      y[static_cast<std::size_t>(i)] = static_cast<int>(rng() % 2);
    }
    y[0] = 0;
    y[1] = 1;
    CAPTURE(trial);
    CHECK(auc(s, y) == brute_force_auc(s, y));
  }
}

TEST_CASE("sp_auc fixtures") {
  CHECK(sp_auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}) == doctest::Approx(1.0));
  CHECK(sp_auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, std::vector<int>{0, 1, 0, 1}) == doctest::Approx(0.5));
  const double worst = sp_auc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, std::vector<int>{0, 0, 1, 1});
  CHECK(worst == doctest::Approx(0.5 * (1.0 + (0.0 - 0.005) / (0.1 - 0.005))).epsilon(1e-12));
  CHECK(worst == doctest::Approx(0.4737).epsilon(1e-4));
  CHECK_THROWS(sp_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 1}, 0.0));
}

TEST_CASE("sp_auc with max_fpr 1 equals auc") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s(60);
    std::vector<int> y(60);
    for (std::size_t i = 0; i < s.size(); ++i) {
      y[i] = static_cast<int>(rng() % 2);
      s[i] = std::round((u(rng) + 0.3 * y[i]) * 10.0) / 10.0;
    }
    y[0] = 0;
    y[1] = 1;
    CHECK(std::abs(sp_auc(s, y, 1.0) - auc(s, y)) < 1e-12);
  }
}

TEST_CASE("metrics are invariant to sample order and stay in [0, 1]") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> s(100);
  std::vector<int> y(100);
  for (std::size_t i = 0; i < s.size(); ++i) {
    y[i] = static_cast<int>(rng() % 2);
    s[i] = u(rng);
  }
  const MetricReport a = metric_report(s, y, 3);
  std::vector<std::size_t> perm(s.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<double> s2;
  std::vector<int> y2;
  for (std::size_t i : perm) {
    s2.push_back(s[i]);
    y2.push_back(y[i]);
  }
  const MetricReport b = metric_report(s2, y2, 3);
  CHECK(a.macro_f1 == b.macro_f1);
  CHECK(a.auc == b.auc);
  CHECK(a.sp_auc == doctest::Approx(b.sp_auc).epsilon(1e-12));
  for (const auto& [name, v] : metric_values(a)) {
    CAPTURE(name);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(a.macro_f1 == doctest::Approx(0.5 * (a.f1_real + a.f1_fake)).epsilon(1e-15));
}

TEST_CASE("report serialization round-trips and sweeps summarize seeds") {
  MetricReport r;
  r.macro_f1 = 0.7;
  r.accuracy = 0.8;
  r.auc = 0.9;
  r.sp_auc = 0.6;
  r.f1_real = 0.75;
  r.f1_fake = 0.65;
  r.n_test = 10;
  r.seed = 4;
  const MetricReport back = metric_report_from_json(nlohmann::json::parse(to_json(r).dump()));
  CHECK(back.macro_f1 == r.macro_f1);
  CHECK(back.seed == 4);
  CHECK(format_text(r).find("macro_f1") != std::string::npos);

  MetricReport s = r;
  s.macro_f1 = 0.5;
  const SweepPoint p = summarize("0.1", "ode", {r, s});
  CHECK(p.mean.macro_f1 == doctest::Approx(0.6));
  CHECK(p.stddev.macro_f1 == doctest::Approx(0.1));
  CHECK(p.seeds == 2);
  SweepReport sweep{"drop_rate", {p, p}};
  const std::string csv = format_csv(sweep);
  CHECK(csv.rfind("axis,variant,metric,mean,std\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 2 * 6);
  CHECK(to_json(sweep)["points"].size() == 2);
  CHECK(format_text(sweep).find("ode") != std::string::npos);
}
