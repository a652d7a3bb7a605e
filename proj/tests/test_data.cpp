#include <doctest.h>

// Eigen must precede httplib: <resolv.h> defines a `_res` macro.
#include "misder/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "misder/data.hpp"
#include "misder/events.hpp"
#include "misder/synthetic.hpp"
#include "misder/tokenizer.hpp"

using namespace misder;
using namespace misder::data;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("misder-data-" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())) + "-" +
            std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  static inline int counter = 0;
};

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

NewsArticle article(const std::string& id, const std::string& date, int label = 0, const std::string& text = "news") {
  return {id, text, label, parse_date(date)};
}

std::multiset<std::string> period_ids(const TemporalDataset& ds) {
  std::multiset<std::string> out;
  for (const Period& p : ds.periods) {
    for (std::size_t i : p.articles) out.insert(ds.articles[i].id);
  }
  return out;
}

}  // namespace

TEST_CASE("dates parse and format as ISO days") {
  CHECK(format_date(parse_date("2017-03-01")) == "2017-03-01");
  CHECK_THROWS(parse_date("2017-13-01"));
  CHECK_THROWS(parse_date("2017-02-30"));
  CHECK_THROWS(parse_date("yesterday"));
}

TEST_CASE("load_jsonl reads records, sorts them and rejects bad files") {
  TempDir dir;
  const auto good = dir.path / "good.jsonl";
  write_file(good,
             "{\"id\":\"b\",\"text\":\"second story\",\"label\":1,\"timestamp\":\"2011-05-02\"}\n"
             "{\"id\":\"a\",\"text\":\"first story\",\"label\":0,\"timestamp\":\"2010-01-09\"}\n");
  const TemporalDataset ds = load_jsonl(good);
  REQUIRE(ds.size() == 2);
  CHECK(ds.articles[0].id == "a");
  CHECK(ds.articles[1].label == 1);

  const auto empty = dir.path / "empty.jsonl";
  write_file(empty, "");
  CHECK_THROWS_WITH(load_jsonl(empty), doctest::Contains("no records"));

  const auto one = dir.path / "one.jsonl";
  write_file(one, "{\"id\":\"x\",\"text\":\"only\",\"label\":0,\"timestamp\":\"2015-06-01\"}\n");
  CHECK(split_temporal(load_jsonl(one), Interval::yearly).num_periods() == 1);

  // One malformed line in two exceeds the 1% tolerance.
  const auto bad = dir.path / "bad.jsonl";
  write_file(bad,
             "{\"id\":\"x\",\"text\":\"only\",\"label\":0,\"timestamp\":\"2015-06-01\"}\n"
             "{\"id\":\"y\",\"text\":\"late\",\"label\":0,\"timestamp\":\"2015-99-01\"}\n");
  CHECK_THROWS_WITH(load_jsonl(bad), doctest::Contains("malformed"));

  // One malformed line in 200 is tolerated and counted.
  std::string many;
  for (int i = 0; i < 199; ++i) {
    many += "{\"id\":\"" + std::to_string(i) + "\",\"text\":\"t\",\"label\":0,\"timestamp\":\"2012-01-01\"}\n";
  }
  many += "not json\n";
  const auto tolerated = dir.path / "tolerated.jsonl";
  write_file(tolerated, many);
  const TemporalDataset t = load_jsonl(tolerated);
  CHECK(t.size() == 199);
  CHECK(t.malformed_lines == 1);

  CHECK_THROWS(load_jsonl(dir.path / "missing.jsonl"));
}

TEST_CASE("jsonl round-trips") {
  TempDir dir;
  const std::vector<NewsArticle> in{article("1", "2010-02-03", 1, "héllo wörld"), article("2", "2012-12-31", 0, "微博 新闻")};
  save_jsonl(dir.path / "rt.jsonl", in);
  const TemporalDataset back = load_jsonl(dir.path / "rt.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back.articles[0].text == "héllo wörld");
  CHECK(back.articles[1].text == "微博 新闻");
  CHECK(back.articles[1].timestamp == in[1].timestamp);
}

TEST_CASE("yearly split of 2010-2017 gives eight periods") {
  std::vector<NewsArticle> arts;
  for (int y = 2010; y <= 2017; ++y) {
    arts.push_back(article("a" + std::to_string(y), std::to_string(y) + "-04-01"));
    arts.push_back(article("b" + std::to_string(y), std::to_string(y) + "-11-30"));
  }
  const TemporalDataset ds = make_dataset(arts, Interval::yearly);
  REQUIRE(ds.num_periods() == 8);
  for (std::size_t i = 0; i < ds.periods.size(); ++i) {
    CHECK(ds.periods[i].index == static_cast<int>(i) + 1);
    CHECK(ds.periods[i].articles.size() == 2);
  }
  CHECK(format_date(ds.periods[0].begin) == "2010-01-01");
  CHECK(format_date(ds.periods[7].end) == "2018-01-01");
}

TEST_CASE("one article gives one period") {
  CHECK(make_dataset({article("x", "2013-07-07")}, Interval::seasonal).num_periods() == 1);
  CHECK(make_dataset({article("x", "2013-07-07")}, Interval::yearly).num_periods() == 1);
}

TEST_CASE("seasonal split renumbers across empty seasons and keeps calendar offsets") {
  const TemporalDataset ds =
      make_dataset({article("jan", "2017-01-15"), article("jul", "2017-07-15")}, Interval::seasonal);
  REQUIRE(ds.num_periods() == 2);
  CHECK(ds.periods[0].index == 1);
  CHECK(ds.periods[1].index == 2);
  // January belongs to the season starting in December 2016; July to June 2017.
  CHECK(format_date(ds.periods[0].begin) == "2016-12-01");
  CHECK(format_date(ds.periods[1].begin) == "2017-06-01");
  CHECK(ds.periods[1].calendar_offset - ds.periods[0].calendar_offset == 2);
}

TEST_CASE("seasonal split of a single date warns") {
  const TemporalDataset ds =
      make_dataset({article("a", "2014-05-05"), article("b", "2014-05-05")}, Interval::seasonal);
  CHECK(ds.num_periods() == 1);
  CHECK(!ds.warnings.empty());
}

TEST_CASE("periods partition the articles and preserve time order") {
  SyntheticDriftConfig cfg;
  cfg.per_period_count = 120;
  cfg.seed = 5;
  for (Interval interval : {Interval::yearly, Interval::seasonal}) {
    const auto arts = gen_synthetic_drift(cfg);
    const TemporalDataset ds = make_dataset(arts, interval);
    std::multiset<std::string> all;
    for (const auto& a : ds.articles) all.insert(a.id);
    CHECK(period_ids(ds) == all);
    Date last{};
    bool first = true;
    for (const Period& p : ds.periods) {
      CHECK(p.begin < p.end);
      for (std::size_t i : p.articles) {
        const Date t = ds.articles[i].timestamp;
        CHECK(t >= p.begin);
        CHECK(t < p.end);
        if (!first) CHECK(t >= last);
        last = t;
        first = false;
      }
    }
    for (std::size_t i = 1; i < ds.periods.size(); ++i) {
      CHECK(ds.periods[i - 1].end <= ds.periods[i].begin);
      CHECK(ds.periods[i].index == ds.periods[i - 1].index + 1);
    }
  }
}

TEST_CASE("split_future holds out the final year chronologically") {
  SyntheticDriftConfig cfg;
  cfg.per_period_count = 100;
  cfg.seed = 2;
  const TemporalDataset ds = make_dataset(gen_synthetic_drift(cfg), Interval::yearly);
  const FutureSplit split = split_future(ds, Interval::yearly);
  CHECK(split.train.num_periods() == 7);
  CHECK(split.validation.size() + split.test.size() == 100);
  CHECK(split.validation.size() == 50);
  const Date train_max = split.train.articles.back().timestamp;
  for (const auto& a : split.validation) CHECK(a.timestamp > train_max);
  CHECK(split.validation.back().timestamp <= split.test.front().timestamp);

  const TemporalDataset kept = drop_tail(split.train, 0.5);
  CHECK(kept.size() == split.train.size() - split.train.size() / 2);
  CHECK(kept.articles.back().timestamp <= split.train.articles.back().timestamp);
  CHECK(drop_tail(split.train, 0.0).size() == split.train.size());
}

TEST_CASE("tokenize pads, truncates and is deterministic") {
  const std::vector<NewsArticle> arts{article("1", "2010-01-01", 0, "alpha beta gamma"),
                                      article("2", "2010-01-02", 1, "Alpha, beta! delta")};
  const Vocabulary vocab = Vocabulary::build(arts, 4, 1);
  CHECK(vocab.token_of(Vocabulary::kPad) == "[PAD]");

  const auto empty = vocab.encode("  ,,, ");
  REQUIRE(empty.size() == 4);
  CHECK(empty[0] == Vocabulary::kCls);
  CHECK(std::all_of(empty.begin() + 1, empty.end(), [](std::int32_t id) { return id == Vocabulary::kPad; }));

  const auto longer = vocab.encode("alpha beta gamma delta alpha beta");
  CHECK(longer.size() == 4);
  CHECK(longer[1] == vocab.id_of("alpha"));

  CHECK(vocab.encode("beta zebra") == vocab.encode("beta zebra"));
  CHECK(vocab.encode("zebra")[1] == Vocabulary::kUnk);

  const auto ids = vocab.encode("alpha beta");
  const auto words = vocab.decode({ids[1], ids[2]});
  CHECK(words == std::vector<std::string>{"alpha", "beta"});
}

TEST_CASE("normalization lowercases Latin and splits CJK per ideograph") {
  CHECK(normalize_tokens("Hello, World!") == std::vector<std::string>{"hello", "world"});
  CHECK(normalize_tokens("微博news") == std::vector<std::string>{"微", "博", "news"});
}

TEST_CASE("vocabulary respects min frequency and survives JSON") {
  const std::vector<NewsArticle> arts{article("1", "2010-01-01", 0, "common rare"),
                                      article("2", "2010-01-02", 0, "common other")};
  const Vocabulary vocab = Vocabulary::build(arts, 8, 2);
  CHECK(vocab.size() == 4);
  CHECK(vocab.id_of("rare") == Vocabulary::kUnk);
  const Vocabulary back = Vocabulary::from_json(vocab.to_json());
  CHECK(back.encode("common rare") == vocab.encode("common rare"));
  CHECK(back.max_len() == 8);
}

TEST_CASE("synthetic drift generator is deterministic and validated") {
  SyntheticDriftConfig cfg;
  cfg.per_period_count = 50;
  cfg.seed = 9;
  CHECK(to_jsonl(gen_synthetic_drift(cfg)) == to_jsonl(gen_synthetic_drift(cfg)));
  SyntheticDriftConfig other = cfg;
  other.seed = 10;
  CHECK(to_jsonl(gen_synthetic_drift(other)) != to_jsonl(gen_synthetic_drift(cfg)));

  SyntheticDriftConfig bad = cfg;
  bad.drift_amplitude = 1.5;
  CHECK_THROWS(gen_synthetic_drift(bad));
  bad.drift_amplitude = -0.1;
  CHECK_THROWS(gen_synthetic_drift(bad));
  bad = cfg;
  bad.n_periods = 1;
  CHECK_THROWS(gen_synthetic_drift(bad));

  const auto arts = gen_synthetic_drift(cfg);
  CHECK(arts.size() == 400);
  CHECK(make_dataset(arts, Interval::yearly).num_periods() == 8);
}

TEST_CASE("zero drift leaves label and cue distributions unchanged across periods") {
  SyntheticDriftConfig cfg;
  cfg.drift_amplitude = 0.0;
  cfg.prior_swing = 2.0;
  cfg.seed = 4;
  for (int k = 0; k < cfg.n_topics; ++k) {
    for (int p = 1; p < cfg.n_periods; ++p) CHECK(synthetic_fake_rate(cfg, k, p) == synthetic_fake_rate(cfg, k, 0));
  }

  // Empirical cue-word/label counts of the first and last halves agree.
  cfg.per_period_count = 2000;
  const auto arts = gen_synthetic_drift(cfg);
  const int cue_base = cfg.n_topics * cfg.topic_words;
  std::map<std::pair<int, int>, double> early, late;
  for (const auto& a : arts) {
    const bool is_late = a.timestamp >= parse_date("2014-01-01");
    std::istringstream words(a.text);
    std::string w;
    while (words >> w) {
      const int id = std::stoi(w.substr(1));
      if (id < cue_base || id >= cue_base + cfg.cue_ring) continue;
      (is_late ? late : early)[{id, a.label}] += 1.0;
    }
  }
  double total_early = 0, total_late = 0;
  for (const auto& [k, v] : early) total_early += v;
  for (const auto& [k, v] : late) total_late += v;
  double tv = 0.0;
  for (int id = cue_base; id < cue_base + cfg.cue_ring; ++id) {
    for (int y = 0; y < 2; ++y) tv += std::abs(early[{id, y}] / total_early - late[{id, y}] / total_late);
  }
  CHECK(0.5 * tv < 0.03);
}

TEST_CASE("drift moves flipping topics across one half") {
  SyntheticDriftConfig cfg;
  cfg.seed = 3;
  int crossed = 0;
  for (int k = 0; k < cfg.n_topics; ++k) {
    const double first = synthetic_fake_rate(cfg, k, 0);
    const double last = synthetic_fake_rate(cfg, k, cfg.n_periods - 1);
    if ((first - 0.5) * (last - 0.5) < 0.0) ++crossed;
  }
  CHECK(crossed == static_cast<int>(std::lround(cfg.label_flip_topics * cfg.n_topics)));
}

TEST_CASE("dynamics corpus follows the closed forms") {
  CHECK(linear_decay(1.0, 1.0, 1.0) == doctest::Approx(0.367879).epsilon(1e-6));

  DynamicsCorpusConfig cfg;
  cfg.families = {"linear_decay"};
  cfg.grid_len = 5;
  cfg.n_traj = 3;
  const TrajectoryCorpus corpus = gen_dynamics_corpus(cfg);
  REQUIRE(corpus.trajectories.size() == 3);
  const Trajectory& tr = corpus.trajectories[0];
  CHECK(tr.times.back() == 1.0);
  // Every grid step multiplies by the same factor.
  const double r1 = tr.states(1, 0) / tr.states(0, 0);
  const double r4 = tr.states(4, 0) / tr.states(3, 0);
  CHECK(r1 == doctest::Approx(r4).epsilon(1e-12));

  const auto [x, v] = damped_oscillator(0.3, -0.7, 1.0, 0.0, 2.0 * std::numbers::pi);
  CHECK(std::abs(x - 0.3) < 1e-9);
  CHECK(std::abs(v + 0.7) < 1e-9);

  DynamicsCorpusConfig empty = cfg;
  empty.n_traj = 0;
  CHECK_THROWS_WITH(gen_dynamics_corpus(empty), doctest::Contains("empty corpus"));
  DynamicsCorpusConfig unknown = cfg;
  unknown.families = {"chaos"};
  CHECK_THROWS(gen_dynamics_corpus(unknown));

  DynamicsCorpusConfig mixed;
  mixed.seed = 12;
  CHECK(to_json(gen_dynamics_corpus(mixed)).dump() == to_json(gen_dynamics_corpus(mixed)).dump());
  const TrajectoryCorpus back = corpus_from_json(nlohmann::json::parse(to_json(corpus).dump()));
  CHECK(back.split == corpus.split);
  CHECK(back.trajectories[2].states.isApprox(corpus.trajectories[2].states));
}

TEST_CASE("offline and sidecar extractors") {
  const std::vector<NewsArticle> arts{article("a", "2010-01-01", 0, "first text"),
                                      article("b", "2010-01-01", 1, "second text"),
                                      article("c", "2010-01-01", 0, "third text")};
  std::vector<const NewsArticle*> ptrs;
  for (const auto& a : arts) ptrs.push_back(&a);

  ExtractorConfig offline;
  const auto same = extract_events(ptrs, offline);
  CHECK(same.events == std::vector<std::string>{"first text", "second text", "third text"});

  TempDir dir;
  ExtractorConfig sidecar;
  sidecar.kind = ExtractorKind::sidecar_file;
  sidecar.sidecar = dir.path / "events.jsonl";
  write_file(sidecar.sidecar,
             "{\"id\":\"a\",\"event\":\"quake\"}\n{\"id\":\"b\",\"event\":\"flood\"}\n{\"id\":\"c\",\"event\":\"vote\"}\n");
  CHECK(extract_events(ptrs, sidecar).events == std::vector<std::string>{"quake", "flood", "vote"});

  write_file(sidecar.sidecar, "{\"id\":\"a\",\"event\":\"quake\"}\n");
  const auto partial = extract_events(ptrs, sidecar);
  CHECK(partial.events == std::vector<std::string>{"quake", "second text", "third text"});
  CHECK(partial.log.size() == 2);

  CHECK_THROWS(parse_extractor("gpt"));
}

TEST_CASE("http extractor talks to a chat-completions stub and downgrades on failure") {
  httplib::Server server;
  std::atomic<int> calls{0};
  std::string seen_prompt;
  std::string seen_auth;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    ++calls;
    const auto body = nlohmann::json::parse(req.body);
    seen_prompt = body["messages"][0]["content"].get<std::string>();
    seen_auth = req.get_header_value("Authorization");
    res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"stub event"}}]})", "application/json");
  });
  server.Post("/broken", [&](const httplib::Request&, httplib::Response& res) { res.status = 500; });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  const std::vector<NewsArticle> arts{article("a", "2010-01-01", 0, "one"), article("b", "2010-01-01", 1, "two")};
  std::vector<const NewsArticle*> ptrs{&arts[0], &arts[1]};

  ExtractorConfig cfg;
  cfg.kind = ExtractorKind::http_llm;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  cfg.api_key = "test-key";
  const auto ok = extract_events(ptrs, cfg);
  CHECK(!ok.downgraded);
  CHECK(ok.events == std::vector<std::string>{"stub event", "stub event"});
  CHECK(seen_prompt.rfind(kEventPrompt, 0) == 0);
  CHECK(seen_auth == "Bearer test-key");

  const int before = calls.load();
  ExtractorConfig broken = cfg;
  broken.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/broken";
  broken.backoff_ms = 1;
  const auto down = extract_events(ptrs, broken);
  CHECK(down.downgraded);
  CHECK(down.events == std::vector<std::string>{"one", "two"});
  CHECK(calls.load() == before);
  CHECK(std::count_if(down.log.begin(), down.log.end(),
                      [](const std::string& l) { return l.rfind("retrying", 0) == 0; }) == broken.retries);

  server.stop();
  worker.join();
}
