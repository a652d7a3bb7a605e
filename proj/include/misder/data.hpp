#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace misder::data {

using Date = std::chrono::sys_days;

Date parse_date(std::string_view iso);  // "YYYY-MM-DD"; throws on malformed input
std::string format_date(Date d);

struct NewsArticle {
  std::string id;
  std::string text;
  int label = 0;  // 0 = real, 1 = fake
  Date timestamp{};
};

enum class Interval { yearly, seasonal };

Interval parse_interval(std::string_view name);
std::string_view interval_name(Interval interval);

/// One calendar bucket that holds at least one article.
struct Period {
  int index = 0;           // 1..T, contiguous
  int calendar_offset = 0; // buckets since the first non-empty bucket (gaps preserved)
  Date begin{};            // inclusive
  Date end{};              // exclusive
  std::vector<std::size_t> articles;
};

struct TemporalDataset {
  std::vector<NewsArticle> articles;  // ascending by timestamp
  std::vector<Period> periods;
  Interval interval = Interval::yearly;
  std::size_t malformed_lines = 0;
  std::vector<std::string> warnings;

  std::size_t size() const { return articles.size(); }
  std::size_t num_periods() const { return periods.size(); }
};

/// Reads JSON-lines records {"id","text","label","timestamp"}. Malformed lines
/// are skipped and counted; more than 1% malformed is a hard error.
TemporalDataset load_jsonl(const std::filesystem::path& path);
void save_jsonl(const std::filesystem::path& path, const std::vector<NewsArticle>& articles);
std::string to_jsonl(const std::vector<NewsArticle>& articles);

/// Stable-sorts by timestamp and assigns articles to calendar buckets.
/// Yearly buckets are calendar years; seasonal buckets are three-month
/// seasons starting in March, June, September and December. Empty buckets
/// are dropped and indices renumbered 1..T.
TemporalDataset split_temporal(TemporalDataset dataset, Interval interval);
TemporalDataset make_dataset(std::vector<NewsArticle> articles, Interval interval);

/// Calendar bucket id of a date (monotone in time) and its range.
int bucket_of(Date d, Interval interval);
Date bucket_begin(int bucket, Interval interval);

/// Past/future protocol: training articles precede the final calendar year;
/// that year is split chronologically, first half validation, second half test.
struct FutureSplit {
  TemporalDataset train;
  std::vector<NewsArticle> validation;
  std::vector<NewsArticle> test;
};
FutureSplit split_future(const TemporalDataset& all, Interval interval);

/// Discards the newest `rate` fraction of articles (by count) and re-buckets.
TemporalDataset drop_tail(const TemporalDataset& dataset, double rate);

}  // namespace misder::data
