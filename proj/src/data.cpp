#include "misder/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "misder/autodiff.hpp"

namespace misder::data {
namespace {

int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

}  // namespace

Date parse_date(std::string_view iso) {
  if (iso.size() != 10 || iso[4] != '-' || iso[7] != '-') throw Error("unparseable timestamp '" + std::string(iso) + "'");
  auto num = [&](std::size_t pos, std::size_t len) {
    int v = 0;
    for (std::size_t i = pos; i < pos + len; ++i) {
      if (iso[i] < '0' || iso[i] > '9') throw Error("unparseable timestamp '" + std::string(iso) + "'");
      v = v * 10 + (iso[i] - '0');
    }
    return v;
  };
  const std::chrono::year_month_day ymd{std::chrono::year{num(0, 4)}, std::chrono::month{static_cast<unsigned>(num(5, 2))},
                                        std::chrono::day{static_cast<unsigned>(num(8, 2))}};
  if (!ymd.ok()) throw Error("unparseable timestamp '" + std::string(iso) + "'");
  return Date{ymd};
}

std::string format_date(Date d) {
  const std::chrono::year_month_day ymd{d};
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

Interval parse_interval(std::string_view name) {
  if (name == "yearly") return Interval::yearly;
  if (name == "seasonal") return Interval::seasonal;
  throw Error("unknown interval '" + std::string(name) + "' (expected yearly|seasonal)");
}

std::string_view interval_name(Interval interval) { return interval == Interval::yearly ? "yearly" : "seasonal"; }

int bucket_of(Date d, Interval interval) {
  const std::chrono::year_month_day ymd{d};
  const int year = static_cast<int>(ymd.year());
  if (interval == Interval::yearly) return year;
  const int month_index = year * 12 + static_cast<int>(static_cast<unsigned>(ymd.month())) - 1;
  return floor_div(month_index - 2, 3);
}

Date bucket_begin(int bucket, Interval interval) {
  using namespace std::chrono;
  if (interval == Interval::yearly) return Date{year{bucket} / January / 1};
  const int month_index = bucket * 3 + 2;
  const int y = floor_div(month_index, 12);
  const unsigned m = static_cast<unsigned>(month_index - y * 12 + 1);
  return Date{year{y} / month{m} / 1};
}

TemporalDataset load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset '" + path.string() + "'");
  TemporalDataset ds;
  std::string line;
  std::size_t total = 0;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++total;
    try {
      const auto rec = nlohmann::json::parse(line);
      NewsArticle a;
      a.id = rec.contains("id") ? rec.at("id").get<std::string>() : std::to_string(line_no);
      a.text = rec.at("text").get<std::string>();
      a.label = rec.at("label").get<int>();
      if (a.label != 0 && a.label != 1) throw Error("label must be 0 or 1");
      a.timestamp = parse_date(rec.at("timestamp").get<std::string>());
      if (a.text.find_first_not_of(" \t\r\n") == std::string::npos) throw Error("empty text");
      ds.articles.push_back(std::move(a));
    } catch (const std::exception& e) {
      ++ds.malformed_lines;
      ds.warnings.push_back("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (ds.articles.empty()) throw Error("no records in '" + path.string() + "'");
  if (static_cast<double>(ds.malformed_lines) > 0.01 * static_cast<double>(total)) {
    throw Error(std::to_string(ds.malformed_lines) + " of " + std::to_string(total) + " lines malformed in '" +
                path.string() + "' (limit 1%)");
  }
  std::stable_sort(ds.articles.begin(), ds.articles.end(),
                   [](const NewsArticle& a, const NewsArticle& b) { return a.timestamp < b.timestamp; });
  return ds;
}

std::string to_jsonl(const std::vector<NewsArticle>& articles) {
  std::string out;
  for (const NewsArticle& a : articles) {
    nlohmann::ordered_json rec;
    rec["id"] = a.id;
    rec["text"] = a.text;
    rec["label"] = a.label;
    rec["timestamp"] = format_date(a.timestamp);
    out += rec.dump();
    out += '\n';
  }
  return out;
}

void save_jsonl(const std::filesystem::path& path, const std::vector<NewsArticle>& articles) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << to_jsonl(articles);
}

TemporalDataset split_temporal(TemporalDataset ds, Interval interval) {
  if (ds.articles.empty()) throw Error("split_temporal: no articles");
  std::stable_sort(ds.articles.begin(), ds.articles.end(),
                   [](const NewsArticle& a, const NewsArticle& b) { return a.timestamp < b.timestamp; });
  ds.interval = interval;
  ds.periods.clear();
  std::map<int, std::vector<std::size_t>> buckets;
  for (std::size_t i = 0; i < ds.articles.size(); ++i) buckets[bucket_of(ds.articles[i].timestamp, interval)].push_back(i);
  const int first = buckets.begin()->first;
  int index = 1;
  for (auto& [bucket, members] : buckets) {
    Period p;
    p.index = index++;
    p.calendar_offset = bucket - first;
    p.begin = bucket_begin(bucket, interval);
    p.end = bucket_begin(bucket + 1, interval);
    p.articles = std::move(members);
    ds.periods.push_back(std::move(p));
  }
  if (interval == Interval::seasonal && ds.periods.size() == 1 &&
      ds.articles.front().timestamp == ds.articles.back().timestamp && ds.articles.size() > 1) {
    ds.warnings.push_back("all articles share one date; seasonal split yields a single period");
  }
  return ds;
}

TemporalDataset make_dataset(std::vector<NewsArticle> articles, Interval interval) {
  TemporalDataset ds;
  ds.articles = std::move(articles);
  return split_temporal(std::move(ds), interval);
}

FutureSplit split_future(const TemporalDataset& all, Interval interval) {
  if (all.articles.empty()) throw Error("split_future: no articles");
  Date last = all.articles.front().timestamp;
  for (const NewsArticle& a : all.articles) last = std::max(last, a.timestamp);
  const int final_year = static_cast<int>(std::chrono::year_month_day{last}.year());
  const Date cutoff = bucket_begin(final_year, Interval::yearly);
  std::vector<NewsArticle> past, future;
  for (const NewsArticle& a : all.articles) (a.timestamp < cutoff ? past : future).push_back(a);
  if (past.empty()) throw Error("split_future: no articles before the final year " + std::to_string(final_year));
  std::stable_sort(future.begin(), future.end(),
                   [](const NewsArticle& a, const NewsArticle& b) { return a.timestamp < b.timestamp; });
  FutureSplit out;
  out.train = make_dataset(std::move(past), interval);
  const std::size_t half = future.size() / 2;
  out.validation.assign(future.begin(), future.begin() + static_cast<std::ptrdiff_t>(half));
  out.test.assign(future.begin() + static_cast<std::ptrdiff_t>(half), future.end());
  return out;
}

TemporalDataset drop_tail(const TemporalDataset& dataset, double rate) {
  if (rate < 0.0 || rate >= 1.0) throw Error("drop rate must lie in [0, 1)");
  std::vector<NewsArticle> kept = dataset.articles;
  const auto keep = static_cast<std::size_t>(std::llround(static_cast<double>(kept.size()) * (1.0 - rate)));
  kept.resize(std::max<std::size_t>(keep, 1));
  return make_dataset(std::move(kept), dataset.interval);
}

}  // namespace misder::data
