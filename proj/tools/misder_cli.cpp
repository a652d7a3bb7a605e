#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unistd.h>
#include <vector>

#include "misder/experiments.hpp"
#include "misder/synthetic.hpp"
#include "misder/train.hpp"

#ifndef MISDER_VERSION
#define MISDER_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;
using namespace misder;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string variant;
  std::string interval;
  std::optional<int> der_len;
  std::optional<double> drop_rate;
  std::vector<std::string> set;
  std::string out;
  bool force = false;

  // inputs
  std::string data;
  std::string warmup_dir;
  std::string run_dir;
  std::string pretrained_dir;
  std::string corpus;
  std::string manifest;

  // command arguments
  std::optional<double> drift;
  std::optional<int> periods;
  std::optional<int> per_period;
  std::string axis = "drop_rate";
  std::string values;
  std::string variants = "static,lstm,ode,pt";
  std::string seeds = "0";
  std::string article;
  std::string times;
};

// ---------------------------------------------------------------- files

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_json(const fs::path& path, const ojson& j) { write_file(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw UsageError("cannot parse " + path.string() + ": " + e.what());
  }
}

fs::path require_file(const fs::path& dir, const std::string& name, const std::string& what) {
  const fs::path p = dir / name;
  if (!fs::is_regular_file(p)) throw UsageError("missing " + what + ": " + p.string());
  return p;
}

fs::path require_input(const std::string& path, const std::string& what) {
  if (path.empty()) throw UsageError("missing required input: " + what);
  if (!fs::exists(path)) throw UsageError("missing " + what + ": " + path);
  return fs::absolute(path).lexically_normal();
}

json read_manifest(const fs::path& dir) {
  const json m = read_json(require_file(dir, "manifest.json", "manifest"));
  if (fs::exists(dir / "FAILED")) throw UsageError(dir.string() + " holds a failed run");
  return m;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const std::string& what) {
  std::vector<T> out;
  for (const std::string& item : split_list(text)) {
    try {
      std::size_t used = 0;
      if constexpr (std::is_same_v<T, double>) {
        out.push_back(std::stod(item, &used));
      } else if constexpr (std::is_same_v<T, int>) {
        out.push_back(std::stoi(item, &used));
      } else {
        out.push_back(static_cast<T>(std::stoull(item, &used)));
      }
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("bad " + what + " value '" + item + "'");
    }
  }
  if (out.empty()) throw UsageError("empty " + what + " list");
  return out;
}

// ---------------------------------------------------------------- config

/// The "config" member of a manifest, or the file itself.
json config_file_json(const std::string& path) {
  json j = read_json(require_input(path, "config"));
  if (j.is_object() && j.contains("command") && j.contains("config")) j = j["config"];
  if (!j.is_object()) throw UsageError("config must be a JSON object: " + path);
  return j;
}

json parse_set_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return text;
  }
}

/// Applies --config, --set and the named flags on top of `base`.
json overlay(json base, const Options& o) {
  if (!o.config.empty()) base.merge_patch(config_file_json(o.config));
  for (const std::string& kv : o.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + kv + "'");
    base[kv.substr(0, eq)] = parse_set_value(kv.substr(eq + 1));
  }
  if (o.seed) base["seed"] = *o.seed;
  return base;
}

RunConfig resolve_run_config(const json& base, const Options& o) {
  json j = overlay(base, o);
  if (!o.variant.empty()) j["variant"] = o.variant;
  if (!o.interval.empty()) j["interval"] = o.interval;
  if (o.der_len) j["der_len"] = *o.der_len;
  if (o.drop_rate) j["drop_rate"] = *o.drop_rate;
  try {
    RunConfig cfg = run_config_from_json(j);
    cfg.validate();
    return cfg;
  } catch (const std::exception& e) {
    throw UsageError(std::string("invalid run config: ") + e.what());
  }
}

/// Keys that shape the data split or the detector and so must match the warm-up.
const std::vector<std::string> kWarmupKeys = {"der_len", "dim",      "heads",          "layers",
                                              "max_len", "pooling",  "vocab_min_freq", "vocab_max_size",
                                              "interval", "drop_rate"};

void check_matches_warmup(const RunConfig& cfg, const json& warm_config) {
  const ojson now = to_json(cfg);
  for (const std::string& key : kWarmupKeys) {
    if (warm_config.contains(key) && json(now[key]) != warm_config[key]) {
      throw UsageError("'" + key + "' differs from the warm-up run (" + warm_config[key].dump() + " vs " +
                       now[key].dump() + ")");
    }
  }
}

std::vector<data::NewsArticle> load_articles(const fs::path& path) {
  data::TemporalDataset ds = data::load_jsonl(path);
  for (const std::string& w : ds.warnings) std::cerr << "warning: " << w << "\n";
  return std::move(ds.articles);
}

// ---------------------------------------------------------------- output

/// Stages outputs in a sibling directory and renames it into place. A run
/// that throws leaves its partial outputs under the target with a FAILED file.
class OutputDir {
 public:
  OutputDir(const std::string& out, bool force) {
    if (out.empty()) throw UsageError("missing required option --out");
    target_ = fs::absolute(out).lexically_normal();
    if (target_.filename().empty()) target_ = target_.parent_path();
    if (fs::exists(target_)) {
      if (!force) throw UsageError("output directory exists: " + target_.string() + " (use --force)");
    }
    fs::create_directories(target_.parent_path());
    staging_ = target_.parent_path() / ("." + target_.filename().string() + ".tmp-" + std::to_string(::getpid()));
    fs::remove_all(staging_);
    fs::create_directory(staging_);
    force_ = force;
  }

  OutputDir(const OutputDir&) = delete;
  OutputDir& operator=(const OutputDir&) = delete;

  ~OutputDir() {
    if (!done_) fail("interrupted");
  }

  const fs::path& path() const { return staging_; }
  const fs::path& target() const { return target_; }

  void commit() {
    publish();
    done_ = true;
  }

  void discard() {
    done_ = true;
    fs::remove_all(staging_);
  }

  void fail(const std::string& message) {
    if (done_) return;
    done_ = true;
    try {
      write_file(staging_ / "FAILED", message + "\n");
      publish();
    } catch (const std::exception& e) {
      std::cerr << "error: could not publish failed outputs: " << e.what() << "\n";
    }
  }

 private:
  void publish() {
    if (force_) fs::remove_all(target_);
    fs::rename(staging_, target_);
  }

  fs::path target_;
  fs::path staging_;
  bool force_ = false;
  bool done_ = false;
};

/// Manifest: the resolved config, its seed, the version and every input,
/// enough for `replay` to rerun the command.
struct Manifest {
  std::string command;
  std::uint64_t seed = 0;
  ojson config;
  ojson inputs = ojson::object();
  ojson args = ojson::object();

  void write(const fs::path& dir) const {
    write_json(dir / "manifest.json", {{"command", command},
                                       {"version", MISDER_VERSION},
                                       {"seed", seed},
                                       {"config", config},
                                       {"inputs", inputs},
                                       {"args", args}});
  }
};

ojson warnings_json(const std::vector<std::string>& warnings) {
  ojson a = ojson::array();
  for (const std::string& w : warnings) a.push_back(w);
  return a;
}

// ---------------------------------------------------------------- stages

struct Upstream {
  fs::path dir;
  json manifest;
  RunConfig cfg;
  fs::path data;
};

/// Loads an upstream run directory of one of `commands`.
Upstream load_upstream(const std::string& dir_arg, const std::string& what, const std::vector<std::string>& commands,
                       const Options& o, bool apply_overrides) {
  Upstream u;
  u.dir = require_input(dir_arg, what);
  u.manifest = read_manifest(u.dir);
  const std::string cmd = u.manifest.value("command", "");
  if (std::find(commands.begin(), commands.end(), cmd) == commands.end()) {
    throw UsageError(u.dir.string() + " is a '" + cmd + "' directory, not " + what);
  }
  u.cfg = apply_overrides ? resolve_run_config(u.manifest["config"], o)
                          : run_config_from_json(u.manifest["config"]);
  u.data = require_input(u.manifest["inputs"].value("data", ""), "dataset");
  return u;
}

void copy_artifact(const fs::path& from_dir, const fs::path& to_dir, const std::string& name, const std::string& what) {
  fs::copy_file(require_file(from_dir, name, what), to_dir / name);
}

Detector load_detector(const fs::path& dir, const RunConfig& cfg, data::Vocabulary& vocab, Checkpoint& ck) {
  const fs::path ck_path = require_file(dir, "detector.ckpt", "detector checkpoint");
  const fs::path vocab_path = require_file(dir, "vocab.json", "vocabulary");
  vocab = data::Vocabulary::load(vocab_path);
  ck = Checkpoint::load(ck_path);
  Detector det(cfg.detector_config(static_cast<int>(vocab.size())));
  det.load_from(ck);
  return det;
}

std::unique_ptr<Forecaster> load_forecaster(const fs::path& dir, const RunConfig& cfg) {
  if (cfg.tsm_variant() == Variant::static_der) return nullptr;
  auto tsm = make_forecaster(cfg, cfg.der_len * cfg.dim);
  tsm->load_from(Checkpoint::load(require_file(dir, "tsm.ckpt", "time-series model checkpoint")));
  return tsm;
}

DerSeries load_series(const fs::path& dir, const Checkpoint& detector) {
  const json index = read_json(require_file(dir, "ders.json", "DER index"));
  return DerSeries::load_from(Checkpoint::load(require_file(dir, "ders.ckpt", "DER checkpoint")), index,
                              detector.get("der.0"));
}

// ---------------------------------------------------------------- commands

void cmd_gen_data(const Options& o, Manifest& m, const fs::path& out) {
  json j = json(to_json(data::SyntheticDriftConfig{}));
  j = overlay(j, o);
  if (o.drift) j["drift_amplitude"] = *o.drift;
  if (o.periods) j["n_periods"] = *o.periods;
  if (o.per_period) j["per_period_count"] = *o.per_period;
  data::SyntheticDriftConfig cfg;
  try {
    cfg = data::drift_config_from_json(j);
  } catch (const std::exception& e) {
    throw UsageError(std::string("invalid generator config: ") + e.what());
  }
  const auto articles = data::gen_synthetic_drift(cfg);
  data::save_jsonl(out / "articles.jsonl", articles);
  m.seed = cfg.seed;
  m.config = to_json(cfg);
  std::cout << "wrote " << articles.size() << " articles\n";
}

void cmd_gen_dynamics(const Options& o, Manifest& m, const fs::path& out) {
  json j = overlay(json(to_json(data::DynamicsCorpusConfig{})), o);
  data::DynamicsCorpusConfig cfg;
  try {
    cfg = data::dynamics_config_from_json(j);
  } catch (const std::exception& e) {
    throw UsageError(std::string("invalid dynamics config: ") + e.what());
  }
  const auto corpus = data::gen_dynamics_corpus(cfg);
  write_json(out / "corpus.json", to_json(corpus));
  m.seed = cfg.seed;
  m.config = to_json(cfg);
  std::cout << "wrote " << corpus.trajectories.size() << " trajectories\n";
}

void cmd_warmup(const Options& o, Manifest& m, const fs::path& out) {
  const fs::path data_path = require_input(o.data, "dataset");
  const RunConfig cfg = resolve_run_config(json(to_json(RunConfig{})), o);
  m.seed = cfg.seed;
  m.config = to_json(cfg);
  m.inputs["data"] = data_path.string();

  const WarmState warm = run_warmup(load_articles(data_path), cfg);
  warm.detector.save(out / "detector.ckpt");
  warm.data.vocab.save(out / "vocab.json");
  const WarmupReport& r = warm.report;
  write_json(out / "warmup.json", {{"epoch_loss", r.epoch_loss},
                                   {"val_macro_f1", r.val_macro_f1},
                                   {"best_epoch", r.best_epoch},
                                   {"epochs_run", r.epochs_run},
                                   {"early_stopped", r.early_stopped},
                                   {"validation_used", r.validation_used},
                                   {"train_periods", warm.data.train.num_periods()},
                                   {"warnings", warnings_json(r.warnings)}});
  write_json(out / "timing.json", {{"stages", {{{"stage", "warmup"}, {"seconds", warm.seconds}}}}});
  for (const std::string& w : r.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "warm-up: " << r.epochs_run << " epochs, best epoch " << r.best_epoch << "\n";
}

void cmd_learn(const Options& o, Manifest& m, const fs::path& out) {
  const Upstream warm = load_upstream(o.warmup_dir, "a warm-up directory", {"warmup"}, o, true);
  const RunConfig& cfg = warm.cfg;
  check_matches_warmup(cfg, warm.manifest["config"]);
  m.seed = cfg.seed;
  m.config = to_json(cfg);
  m.inputs["warmup"] = warm.dir.string();
  m.inputs["data"] = warm.data.string();

  data::Vocabulary vocab;
  Checkpoint warm_ck;
  Detector detector = load_detector(warm.dir, cfg, vocab, warm_ck);
  const PreparedData data = prepare_data(load_articles(warm.data), cfg);
  if (data.vocab.to_json() != vocab.to_json()) {
    throw UsageError("dataset " + warm.data.string() + " no longer matches the warm-up vocabulary");
  }

  TimingLedger timing;
  auto tsm = cfg.tsm_variant() == Variant::static_der ? nullptr : make_forecaster(cfg, cfg.der_len * cfg.dim);
  if (auto* pt = dynamic_cast<PtForecaster*>(tsm.get()); pt != nullptr) {
    if (!o.pretrained_dir.empty()) {
      const fs::path dir = require_input(o.pretrained_dir, "pre-training directory");
      pt->load_from(Checkpoint::load(require_file(dir, "tsm.ckpt", "pre-trained checkpoint")));
      m.inputs["pretrained"] = dir.string();
    } else if (cfg.pt_pretrain_epochs > 0) {
      const auto start = std::chrono::steady_clock::now();
      pretrain_for_run(*pt, cfg);
      timing.add("pretrain", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    }
  }

  const auto start = std::chrono::steady_clock::now();
  const LearnReport r = dynamic_env_learning(detector, warm_ck.get("der.0"), data, tsm.get(), cfg);
  timing.add("dynamic_env_learning", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());

  Checkpoint ders;
  write_json(out / "ders.json", r.series.save_to(ders));
  ders.save(out / "ders.ckpt");
  if (tsm != nullptr) {
    Checkpoint tsm_ck;
    tsm->save_to(tsm_ck);
    tsm_ck.save(out / "tsm.ckpt");
  }
  copy_artifact(warm.dir, out, "detector.ckpt", "detector checkpoint");
  copy_artifact(warm.dir, out, "vocab.json", "vocabulary");
  write_json(out / "learn.json", {{"variant", cfg.variant},
                                  {"iterations", r.iterations},
                                  {"der_steps", r.der_steps},
                                  {"period_order", r.period_order},
                                  {"tsm_loss", r.tsm_loss},
                                  {"final_tsm_loss", r.final_tsm_loss},
                                  {"tsm_failures", r.tsm_failures},
                                  {"log", warnings_json(r.log)}});
  ojson stages = ojson::array();
  for (const StageTiming& s : timing.stages) stages.push_back({{"stage", s.stage}, {"seconds", s.seconds}});
  write_json(out / "timing.json", {{"stages", stages}});
  std::cout << "learned " << r.series.length() << " period DERs in " << r.iterations << " iterations\n";
}

void cmd_predict(const Options& o, Manifest& m, const fs::path& out) {
  const Upstream run = load_upstream(o.run_dir, "a learn directory", {"learn"}, o, false);
  const RunConfig& cfg = run.cfg;
  m.seed = cfg.seed;
  m.config = to_json(cfg);
  m.inputs["run"] = run.dir.string();
  m.inputs["data"] = run.data.string();

  const Checkpoint detector = Checkpoint::load(require_file(run.dir, "detector.ckpt", "detector checkpoint"));
  const DerSeries series = load_series(run.dir, detector);
  auto tsm = load_forecaster(run.dir, cfg);
  Checkpoint ck;
  ck.put("future_der", predict_future(tsm.get(), series));
  ck.save(out / "future_der.ckpt");
  for (const char* name : {"detector.ckpt", "vocab.json"}) copy_artifact(run.dir, out, name, name);
  write_json(out / "prediction.json", {{"variant", cfg.variant},
                                       {"time", series.next_time()},
                                       {"source", tsm == nullptr ? "der." + std::to_string(series.length())
                                                                 : std::string("forecast")}});
  std::cout << "predicted the DER at calendar time " << series.next_time() << "\n";
}

void cmd_eval(const Options& o, Manifest& m, const fs::path& out) {
  const fs::path dir = require_input(o.run_dir, "a prediction directory");
  const json manifest = read_manifest(dir);
  require_file(dir, "detector.ckpt", "detector checkpoint");
  const fs::path der_path = require_file(dir, "future_der.ckpt", "predicted DER");
  const RunConfig cfg = run_config_from_json(manifest["config"]);
  const fs::path data_path = require_input(manifest["inputs"].value("data", ""), "dataset");
  m.seed = cfg.seed;
  m.config = to_json(cfg);
  m.inputs["run"] = dir.string();
  m.inputs["data"] = data_path.string();

  data::Vocabulary vocab;
  Checkpoint ck;
  Detector detector = load_detector(dir, cfg, vocab, ck);
  const Matrix der = Checkpoint::load(der_path).get("future_der");
  const PreparedData data = prepare_data(load_articles(data_path), cfg);
  const eval::MetricReport report =
      eval::evaluate_future(detector, vocab, der, data.test, data.train_max, cfg.seed);
  const eval::MetricReport report_z0 =
      eval::evaluate_future(detector, vocab, ck.get("der.0"), data.test, data.train_max, cfg.seed);
  write_json(out / "metrics.json", {{"variant", cfg.variant}, {"future", to_json(report)}, {"z0", to_json(report_z0)}});
  write_file(out / "metrics.txt", "variant " + cfg.variant + "\n" + eval::format_text(report));
  std::cout << eval::format_text(report);
}

void cmd_sweep(const Options& o, Manifest& m, const fs::path& out) {
  const fs::path data_path = require_input(o.data, "dataset");
  const RunConfig cfg = resolve_run_config(json(to_json(RunConfig{})), o);
  const auto variants = split_list(o.variants);
  const auto seeds = parse_list<std::uint64_t>(o.seeds, "seed");
  for (const std::string& v : variants) {
    try {
      parse_variant(v);
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
  }
  m.seed = cfg.seed;
  m.config = to_json(cfg);
  m.inputs["data"] = data_path.string();
  m.args = {{"axis", o.axis}, {"values", o.values}, {"variants", o.variants}, {"seeds", o.seeds}};

  const auto articles = load_articles(data_path);
  eval::SweepReport report;
  std::vector<std::string> warnings;
  if (o.axis == "drop_rate") {
    const auto rates = o.values.empty() ? std::vector<double>{0.0, 0.1, 0.3, 0.5} : parse_list<double>(o.values, "rate");
    report = eval::drop_rate_experiment(articles, cfg, rates, variants, seeds, &warnings);
  } else if (o.axis == "interval") {
    const auto intervals = o.values.empty() ? std::vector<std::string>{"yearly", "seasonal"} : split_list(o.values);
    report = eval::interval_sweep(articles, cfg, intervals, variants, seeds);
  } else if (o.axis == "K") {
    const auto ks = o.values.empty() ? std::vector<int>{8, 16, 32} : parse_list<int>(o.values, "K");
    report = eval::der_length_sweep(articles, cfg, ks, variants, seeds);
  } else {
    throw UsageError("unknown sweep axis '" + o.axis + "' (expected drop_rate, interval or K)");
  }
  for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";
  write_json(out / "sweep.json", to_json(report));
  write_file(out / "sweep.txt", eval::format_text(report));
  write_file(out / "sweep.csv", eval::format_csv(report));
  std::cout << eval::format_text(report);
}

void cmd_trace(const Options& o, Manifest& m, const fs::path& out) {
  const Upstream run = load_upstream(o.run_dir, "a learn directory", {"learn"}, o, false);
  const RunConfig& cfg = run.cfg;
  m.seed = cfg.seed;
  m.config = to_json(cfg);
  m.inputs["run"] = run.dir.string();
  m.inputs["data"] = run.data.string();
  m.args = {{"article", o.article}, {"times", o.times}};

  data::Vocabulary vocab;
  Checkpoint ck;
  Detector detector = load_detector(run.dir, cfg, vocab, ck);
  const DerSeries series = load_series(run.dir, ck);
  auto tsm = load_forecaster(run.dir, cfg);

  const auto articles = load_articles(run.data);
  std::optional<data::NewsArticle> article;
  if (o.article.empty()) {
    const PreparedData data = prepare_data(articles, cfg);
    if (data.test.empty()) throw UsageError("the dataset has no test articles to trace");
    article = data.test.front();
  } else {
    for (const auto& a : articles) {
      if (a.id == o.article) article = a;
    }
    if (!article) throw UsageError("no article with id '" + o.article + "'");
  }

  std::vector<double> times;
  if (o.times.empty()) {
    for (double t = 0.0; t <= series.next_time() + 1e-9; t += 0.5) times.push_back(t);
  } else {
    times = parse_list<double>(o.times, "time");
  }
  const auto trace = eval::case_trace(detector, vocab, *article, series, tsm.get(), times);
  ojson points = ojson::array();
  std::ostringstream text;
  text << "article " << article->id << " label " << article->label << "\n";
  for (const eval::TracePoint& p : trace) {
    points.push_back({{"time", p.time}, {"source", p.source}, {"probability", p.probability}});
    char line[96];
    std::snprintf(line, sizeof line, "%8.3f  %-10s %.4f\n", p.time, p.source.c_str(), p.probability);
    text << line;
  }
  write_json(out / "trace.json",
             {{"article", article->id}, {"label", article->label}, {"variant", cfg.variant}, {"points", points}});
  write_file(out / "trace.txt", text.str());
  std::cout << text.str();
}

void cmd_pretrain(const Options& o, Manifest& m, const fs::path& out) {
  RunConfig cfg = resolve_run_config(json(to_json(RunConfig{})), o);
  cfg.variant = "pt";
  m.seed = cfg.seed;
  m.config = to_json(cfg);
  auto model = make_forecaster(cfg, cfg.der_len * cfg.dim);
  auto& pt = dynamic_cast<PtForecaster&>(*model);
  PretrainReport r;
  if (o.corpus.empty()) {
    r = pretrain_for_run(pt, cfg);
  } else {
    const fs::path corpus_path = require_input(o.corpus, "dynamics corpus");
    m.inputs["corpus"] = corpus_path.string();
    const auto corpus = data::corpus_from_json(read_json(corpus_path));
    if (corpus.state_dim() != cfg.der_len * cfg.dim) {
      throw UsageError("corpus state width " + std::to_string(corpus.state_dim()) + " differs from K·D = " +
                       std::to_string(cfg.der_len * cfg.dim));
    }
    r = pretrain(pt, corpus,
                 {.epochs = cfg.pt_pretrain_epochs, .batch = 16, .lr = cfg.pt_pretrain_lr,
                  .seed = derive_seed(cfg.seed, "pretrain.batches")});
  }
  Checkpoint ck;
  pt.save_to(ck);
  ck.save(out / "tsm.ckpt");
  write_json(out / "pretrain.json", {{"epoch_loss", r.epoch_loss},
                                     {"epoch_reconstruction", r.epoch_reconstruction},
                                     {"epoch_forecast", r.epoch_forecast}});
  std::cout << "pre-trained " << r.epoch_loss.size() << " epochs\n";
}

using Handler = void (*)(const Options&, Manifest&, const fs::path&);

int execute(const std::string& command, Handler handler, const Options& o) {
  OutputDir dir(o.out, o.force);
  Manifest m;
  m.command = command;
  try {
    handler(o, m, dir.path());
    m.write(dir.path());
    dir.commit();
  } catch (const UsageError&) {
    dir.discard();
    throw;
  } catch (const std::exception& e) {
    m.write(dir.path());
    dir.fail(e.what());
    throw;
  }
  std::cout << "outputs in " << dir.target().string() << "\n";
  return kExitOk;
}

int run(std::vector<std::string> args);

/// Reruns the command recorded in a manifest into a new directory.
int replay(const Options& o) {
  const fs::path path = require_input(o.manifest, "manifest");
  const json m = read_json(fs::is_directory(path) ? require_file(path, "manifest.json", "manifest") : path);
  std::vector<std::string> args{"misder", m.at("command").get<std::string>()};
  const std::map<std::string, std::string> input_flags = {
      {"data", "--data"}, {"warmup", "--warmup"}, {"run", "--run"}, {"pretrained", "--pretrained"},
      {"corpus", "--corpus"}};
  const std::string command = args[1];
  for (const auto& [key, value] : m["inputs"].items()) {
    // learn, predict and trace find their dataset through the upstream manifest.
    if (key == "data" && command != "warmup" && command != "sweep") continue;
    args.push_back(input_flags.at(key));
    args.push_back(value.get<std::string>());
  }
  for (const auto& [key, value] : m["args"].items()) {
    if (value.get<std::string>().empty()) continue;
    args.push_back("--" + key);
    args.push_back(value.get<std::string>());
  }
  if (command != "predict" && command != "eval" && command != "trace") {
    args.push_back("--config");
    args.push_back(fs::is_directory(path) ? (path / "manifest.json").string() : path.string());
  }
  args.push_back("--out");
  args.push_back(o.out);
  if (o.force) args.push_back("--force");
  return run(args);
}

void add_output_options(CLI::App* app, Options& o) {
  app->add_option("--out", o.out, "Output directory")->required();
  app->add_flag("--force", o.force, "Replace an existing output directory");
}

void add_config_options(CLI::App* app, Options& o) {
  app->add_option("--config", o.config, "JSON config (or a manifest whose config is reused)");
  app->add_option("--seed", o.seed, "Run seed");
  app->add_option("--set", o.set, "Override any config field, key=value (repeatable)");
  add_output_options(app, o);
}

void add_run_options(CLI::App* app, Options& o) {
  add_config_options(app, o);
  app->add_option("--variant", o.variant, "static | lstm | ode | pt");
  app->add_option("--interval", o.interval, "yearly | seasonal");
  app->add_option("--der-len", o.der_len, "DER length K");
  app->add_option("--drop-rate", o.drop_rate, "Fraction of the newest training data to discard");
}

int run(std::vector<std::string> args) {
  Options o;
  CLI::App app("Dynamic environment misinformation detection", "misder");
  app.set_version_flag("--version", std::string(MISDER_VERSION));
  app.require_subcommand(1);

  auto* gen_data = app.add_subcommand("gen-data", "Generate the synthetic drift benchmark");
  add_config_options(gen_data, o);
  gen_data->add_option("--drift", o.drift, "Drift amplitude");
  gen_data->add_option("--periods", o.periods, "Number of yearly periods");
  gen_data->add_option("--per-period", o.per_period, "Articles per period");

  auto* gen_dynamics = app.add_subcommand("gen-dynamics", "Generate a closed-form trajectory corpus");
  add_config_options(gen_dynamics, o);

  auto* warm = app.add_subcommand("warmup", "Train the detector and z^0 on the past periods");
  add_run_options(warm, o);
  warm->add_option("--data", o.data, "Articles (JSON lines)")->required();

  auto* learn = app.add_subcommand("learn", "Learn period DERs and the time-series model");
  add_run_options(learn, o);
  learn->add_option("--warmup", o.warmup_dir, "Warm-up output directory")->required();
  learn->add_option("--pretrained", o.pretrained_dir, "pretrain-dynamics output used to initialize pt");

  auto* predict = app.add_subcommand("predict", "Forecast the DER of the future period");
  add_output_options(predict, o);
  predict->add_option("--run", o.run_dir, "Learn output directory")->required();

  auto* evaluate = app.add_subcommand("eval", "Score the future period with the predicted DER");
  add_output_options(evaluate, o);
  evaluate->add_option("--run", o.run_dir, "Predict output directory")->required();

  auto* sweep = app.add_subcommand("sweep", "Run a drop-rate, interval or K sweep");
  add_run_options(sweep, o);
  sweep->add_option("--data", o.data, "Articles (JSON lines)")->required();
  sweep->add_option("--axis", o.axis, "drop_rate | interval | K");
  sweep->add_option("--values", o.values, "Comma-separated axis values");
  sweep->add_option("--variants", o.variants, "Comma-separated variants");
  sweep->add_option("--seeds", o.seeds, "Comma-separated seeds");

  auto* trace = app.add_subcommand("trace", "Fake probability of one article over time");
  add_output_options(trace, o);
  trace->add_option("--run", o.run_dir, "Learn output directory")->required();
  trace->add_option("--article", o.article, "Article id (default: first test article)");
  trace->add_option("--times", o.times, "Comma-separated calendar times");

  auto* pre = app.add_subcommand("pretrain-dynamics", "Pre-train the pt forecaster on trajectories");
  add_run_options(pre, o);
  pre->add_option("--corpus", o.corpus, "gen-dynamics corpus.json (default: generated for K·D)");

  auto* rep = app.add_subcommand("replay", "Rerun the command recorded in a manifest");
  rep->add_option("manifest", o.manifest, "manifest.json or its directory")->required();
  add_output_options(rep, o);

  args.erase(args.begin());
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const std::vector<std::pair<CLI::App*, Handler>> handlers = {
      {gen_data, cmd_gen_data}, {gen_dynamics, cmd_gen_dynamics}, {warm, cmd_warmup},
      {learn, cmd_learn},       {predict, cmd_predict},           {evaluate, cmd_eval},
      {sweep, cmd_sweep},       {trace, cmd_trace},               {pre, cmd_pretrain}};
  if (rep->parsed()) return replay(o);
  for (const auto& [sub, handler] : handlers) {
    if (sub->parsed()) return execute(sub->get_name(), handler, o);
  }
  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(std::vector<std::string>(argv, argv + argc));
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
