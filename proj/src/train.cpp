#include "misder/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "misder/experiments.hpp"

namespace misder {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::vector<Matrix> snapshot(const std::vector<ParamTensor*>& params) {
  std::vector<Matrix> out;
  for (const ParamTensor* p : params) out.push_back(p->values);
  return out;
}

void restore(const std::vector<ParamTensor*>& params, const std::vector<Matrix>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->values = values[i];
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, const std::string& purpose, std::uint64_t index) {
  std::uint64_t h = splitmix(seed);
  for (unsigned char c : purpose) h = splitmix(h ^ c);
  return splitmix(h ^ index);
}

void RunConfig::validate() const {
  if (der_len < 1 || dim < 2 || heads < 1 || layers < 1 || max_len < 1) throw Error("config: detector sizes must be positive");
  if (!(der_init_scale > 0.0)) throw Error("config: der_init_scale must be positive");
  if (dim % heads != 0) throw Error("config: dim must be divisible by heads");
  if (pooling != "mean" && pooling != "cls") throw Error("config: pooling must be mean or cls");
  if (vocab_min_freq < 1 || vocab_max_size < 0) throw Error("config: bad vocabulary limits");
  data::parse_interval(interval);
  if (drop_rate < 0.0 || drop_rate >= 1.0) throw Error("config: drop_rate must lie in [0, 1)");
  data::parse_extractor(extractor);
  if (warmup_epochs < 0.0 || der_epochs < 0.0) throw Error("config: epoch counts must be non-negative");
  if (batch < 1 || patience < 1 || der_min_steps < 0) throw Error("config: batch, patience and der_min_steps must be positive");
  if (!(lr_detector > 0.0 && lr_der > 0.0 && lr_tsm > 0.0)) throw Error("config: learning rates must be positive");
  if (sampling != "round_robin" && sampling != "random") throw Error("config: sampling must be round_robin or random");
  if (schedule != "interleaved" && schedule != "sequential") throw Error("config: schedule must be interleaved or sequential");
  parse_variant(variant);
  if (lstm_hidden < 1 || ode_latent < 1 || ode_field_hidden < 1 || pt_model_dim < 1 || pt_heads < 1 || pt_layers < 1) {
    throw Error("config: time-series model sizes must be positive");
  }
  if (!(ode_rtol > 0.0 && ode_atol > 0.0) || ode_max_steps < 1) throw Error("config: solver tolerances must be positive");
  if (pt_pretrain_epochs < 0 || pt_pretrain_trajectories < 1 || pt_pretrain_grid < 4) throw Error("config: bad pre-training sizes");
}

DetectorConfig RunConfig::detector_config(int vocab_size) const {
  DetectorConfig d;
  d.vocab_size = vocab_size;
  d.dim = dim;
  d.heads = heads;
  d.layers = layers;
  d.der_len = der_len;
  d.max_len = max_len;
  d.der_init_scale = der_init_scale;
  d.pooling = pooling == "cls" ? Pooling::cls : Pooling::mean;
  d.seed = derive_seed(seed, "detector");
  return d;
}

data::ExtractorConfig RunConfig::extractor_config() const {
  data::ExtractorConfig e;
  e.kind = data::parse_extractor(extractor);
  e.sidecar = events_sidecar;
  e.endpoint = llm_endpoint;
  return data::with_environment(e);
}

nlohmann::ordered_json to_json(const RunConfig& c) {
  return {{"der_len", c.der_len},
          {"dim", c.dim},
          {"heads", c.heads},
          {"layers", c.layers},
          {"max_len", c.max_len},
          {"der_init_scale", c.der_init_scale},
          {"pooling", c.pooling},
          {"vocab_min_freq", c.vocab_min_freq},
          {"vocab_max_size", c.vocab_max_size},
          {"interval", c.interval},
          {"drop_rate", c.drop_rate},
          {"extractor", c.extractor},
          {"events_sidecar", c.events_sidecar},
          {"llm_endpoint", c.llm_endpoint},
          {"warmup_epochs", c.warmup_epochs},
          {"der_epochs", c.der_epochs},
          {"batch", c.batch},
          {"lr_detector", c.lr_detector},
          {"lr_der", c.lr_der},
          {"lr_tsm", c.lr_tsm},
          {"patience", c.patience},
          {"der_min_steps", c.der_min_steps},
          {"sampling", c.sampling},
          {"schedule", c.schedule},
          {"weight_decay", c.weight_decay},
          {"clip_norm", c.clip_norm},
          {"variant", c.variant},
          {"lstm_hidden", c.lstm_hidden},
          {"ode_latent", c.ode_latent},
          {"ode_field_hidden", c.ode_field_hidden},
          {"ode_rtol", c.ode_rtol},
          {"ode_atol", c.ode_atol},
          {"ode_max_steps", c.ode_max_steps},
          {"pt_model_dim", c.pt_model_dim},
          {"pt_heads", c.pt_heads},
          {"pt_layers", c.pt_layers},
          {"pt_max_positions", c.pt_max_positions},
          {"pt_pretrain_epochs", c.pt_pretrain_epochs},
          {"pt_pretrain_trajectories", c.pt_pretrain_trajectories},
          {"pt_pretrain_grid", c.pt_pretrain_grid},
          {"pt_pretrain_lr", c.pt_pretrain_lr},
          {"seed", c.seed}};
}

RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c) {
  if (!j.is_object()) throw Error("config: expected a JSON object");
  const nlohmann::ordered_json known = to_json(c);
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw Error("config: unknown key '" + key + "'");
  }
  read(j, "der_len", c.der_len);
  read(j, "dim", c.dim);
  read(j, "heads", c.heads);
  read(j, "layers", c.layers);
  read(j, "max_len", c.max_len);
  read(j, "der_init_scale", c.der_init_scale);
  read(j, "pooling", c.pooling);
  read(j, "vocab_min_freq", c.vocab_min_freq);
  read(j, "vocab_max_size", c.vocab_max_size);
  read(j, "interval", c.interval);
  read(j, "drop_rate", c.drop_rate);
  read(j, "extractor", c.extractor);
  read(j, "events_sidecar", c.events_sidecar);
  read(j, "llm_endpoint", c.llm_endpoint);
  read(j, "warmup_epochs", c.warmup_epochs);
  read(j, "der_epochs", c.der_epochs);
  read(j, "batch", c.batch);
  read(j, "lr_detector", c.lr_detector);
  read(j, "lr_der", c.lr_der);
  read(j, "lr_tsm", c.lr_tsm);
  read(j, "patience", c.patience);
  read(j, "der_min_steps", c.der_min_steps);
  read(j, "sampling", c.sampling);
  read(j, "schedule", c.schedule);
  read(j, "weight_decay", c.weight_decay);
  read(j, "clip_norm", c.clip_norm);
  read(j, "variant", c.variant);
  read(j, "lstm_hidden", c.lstm_hidden);
  read(j, "ode_latent", c.ode_latent);
  read(j, "ode_field_hidden", c.ode_field_hidden);
  read(j, "ode_rtol", c.ode_rtol);
  read(j, "ode_atol", c.ode_atol);
  read(j, "ode_max_steps", c.ode_max_steps);
  read(j, "pt_model_dim", c.pt_model_dim);
  read(j, "pt_heads", c.pt_heads);
  read(j, "pt_layers", c.pt_layers);
  read(j, "pt_max_positions", c.pt_max_positions);
  read(j, "pt_pretrain_epochs", c.pt_pretrain_epochs);
  read(j, "pt_pretrain_trajectories", c.pt_pretrain_trajectories);
  read(j, "pt_pretrain_grid", c.pt_pretrain_grid);
  read(j, "pt_pretrain_lr", c.pt_pretrain_lr);
  read(j, "seed", c.seed);
  c.validate();
  return c;
}

PreparedData prepare_data(const std::vector<data::NewsArticle>& articles, const RunConfig& cfg) {
  cfg.validate();
  const data::Interval interval = cfg.split_interval();
  data::FutureSplit split = data::split_future(data::make_dataset(articles, interval), interval);
  PreparedData p;
  p.train = cfg.drop_rate > 0.0 ? data::drop_tail(split.train, cfg.drop_rate) : std::move(split.train);
  p.validation = std::move(split.validation);
  p.test = std::move(split.test);
  p.vocab = data::Vocabulary::build(p.train.articles, cfg.max_len, cfg.vocab_min_freq,
                                    static_cast<std::size_t>(cfg.vocab_max_size));
  p.train_all = encode_articles(p.train.articles, p.vocab);
  for (const data::Period& period : p.train.periods) p.periods.push_back(encode_period(p.train, period, p.vocab));
  p.validation_seq = encode_articles(p.validation, p.vocab);
  p.test_seq = encode_articles(p.test, p.vocab);
  p.train_max = p.train.articles.back().timestamp;
  return p;
}

WarmupReport warmup(Detector& detector, ParamTensor& z0, const PreparedData& data, const RunConfig& cfg) {
  if (data.train_all.empty()) throw Error("warmup: training split is empty");
  WarmupReport report;
  detector.set_frozen(false);
  z0.frozen = false;
  const AdamConfig adam{.weight_decay = cfg.weight_decay};
  Adam det_opt(detector.params(), cfg.lr_detector, adam, cfg.clip_norm);
  Adam der_opt({&z0}, cfg.lr_der, adam, cfg.clip_norm);
  std::vector<ParamTensor*> tracked = detector.params();
  tracked.push_back(&z0);

  report.validation_used = !data.validation_seq.empty();
  if (!report.validation_used) report.warnings.push_back("warmup: no validation split, early stopping disabled");
  auto val_f1 = [&] {
    const std::vector<double> scores = detector.score(z0.values, data.validation_seq.sequences);
    return eval::confusion_metrics(scores, data.validation_seq.labels).macro_f1;
  };
  double best = report.validation_used ? val_f1() : 0.0;
  if (report.validation_used) report.val_macro_f1.push_back(best);
  std::vector<Matrix> best_values = snapshot(tracked);

  const std::size_t n = data.train_all.size();
  const auto per_epoch = static_cast<long>((n + static_cast<std::size_t>(cfg.batch) - 1) / static_cast<std::size_t>(cfg.batch));
  long remaining = std::lround(cfg.warmup_epochs * static_cast<double>(per_epoch));
  std::mt19937_64 rng(derive_seed(cfg.seed, "warmup"));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  int bad_epochs = 0;
  while (remaining > 0) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < n && remaining > 0; start += static_cast<std::size_t>(cfg.batch), --remaining) {
      const std::size_t count = std::min(n - start, static_cast<std::size_t>(cfg.batch));
      std::vector<std::vector<std::int32_t>> seqs;
      std::vector<int> labels;
      for (std::size_t i = start; i < start + count; ++i) {
        seqs.push_back(data.train_all.sequences[order[i]]);
        labels.push_back(data.train_all.labels[order[i]]);
      }
      det_opt.zero_grad();
      der_opt.zero_grad();
      Graph g;
      Var loss = detector.batch_loss(g, g.param(z0), make_batch(seqs, labels));
      g.backward(loss);
      det_opt.step();
      der_opt.step();
      loss_sum += loss.scalar();
      ++batches;
    }
    ++report.epochs_run;
    report.epoch_loss.push_back(loss_sum / batches);
    if (!report.validation_used) continue;
    const double f1 = val_f1();
    report.val_macro_f1.push_back(f1);
    if (f1 > best) {
      best = f1;
      best_values = snapshot(tracked);
      report.best_epoch = report.epochs_run;
      bad_epochs = 0;
    } else if (++bad_epochs >= cfg.patience) {
      report.early_stopped = true;
      break;
    }
  }
  if (report.validation_used) {
    restore(tracked, best_values);
  } else {
    report.best_epoch = report.epochs_run;
  }
  return report;
}

std::unique_ptr<Forecaster> make_forecaster(const RunConfig& cfg, int state) {
  switch (cfg.tsm_variant()) {
    case Variant::static_der:
      return nullptr;
    case Variant::lstm:
      return std::make_unique<LstmForecaster>(
          LstmConfig{.state = state, .hidden = cfg.lstm_hidden, .seed = derive_seed(cfg.seed, "tsm.lstm")});
    case Variant::ode: {
      OdeConfig c;
      c.state = state;
      c.latent = cfg.ode_latent;
      c.field_hidden = cfg.ode_field_hidden;
      c.solver.rtol = cfg.ode_rtol;
      c.solver.atol = cfg.ode_atol;
      c.solver.max_steps = cfg.ode_max_steps;
      c.seed = derive_seed(cfg.seed, "tsm.ode");
      return std::make_unique<OdeForecaster>(c);
    }
    case Variant::pt: {
      PtConfig c;
      c.state = state;
      c.model_dim = cfg.pt_model_dim;
      c.heads = cfg.pt_heads;
      c.layers = cfg.pt_layers;
      c.max_positions = cfg.pt_max_positions;
      c.seed = derive_seed(cfg.seed, "tsm.pt");
      return std::make_unique<PtForecaster>(c);
    }
  }
  return nullptr;
}

LearnReport dynamic_env_learning(Detector& detector, const Matrix& z0, const PreparedData& data, Forecaster* tsm,
                                 const RunConfig& cfg) {
  const int t = static_cast<int>(data.periods.size());
  if (t < 1) throw Error("dynamic environment learning needs at least one training period");
  if (cfg.tsm_variant() != Variant::static_der && tsm == nullptr) throw Error("variant needs a time-series model");
  detector.set_frozen(true);
  LearnReport report;

  const data::ExtractorConfig extractor = cfg.extractor_config();
  std::vector<std::unique_ptr<PeriodDerTrainer>> trainers;
  std::vector<int> active;  // trainer slots of non-empty periods
  for (int p = 0; p < t; ++p) {
    const data::Period& period = data.train.periods[static_cast<std::size_t>(p)];
    const Matrix init = init_period_der(data.train, period, extractor, data.vocab, detector, z0,
                                        derive_seed(cfg.seed, "der.init", period.index), &report.log);
    if (data.periods[static_cast<std::size_t>(p)].empty()) {
      report.log.push_back("period " + std::to_string(period.index) + " is empty and is excluded");
      trainers.push_back(nullptr);
      continue;
    }
    trainers.push_back(std::make_unique<PeriodDerTrainer>(detector, data.periods[static_cast<std::size_t>(p)], init,
                                                          period.index, cfg.lr_der, cfg.batch,
                                                          derive_seed(cfg.seed, "der.batches", period.index),
                                                          AdamConfig{.weight_decay = cfg.weight_decay}));
    active.push_back(p);
  }
  if (active.empty()) throw Error("every training period is empty");

  auto current_series = [&] {
    DerSeries s;
    s.z0 = z0;
    for (int p : active) {
      const data::Period& period = data.train.periods[static_cast<std::size_t>(p)];
      s.periods.push_back({static_cast<int>(s.periods.size()) + 1, period.calendar_offset, period.begin, period.end,
                           trainers[static_cast<std::size_t>(p)]->der(), trainers[static_cast<std::size_t>(p)]->losses()});
    }
    return s;
  };

  const auto per_epoch = static_cast<long>((data.train_all.size() + static_cast<std::size_t>(cfg.batch) - 1) /
                                           static_cast<std::size_t>(cfg.batch));
  const long by_epochs = std::lround(cfg.der_epochs * static_cast<double>(per_epoch));
  const long by_floor = static_cast<long>(cfg.der_min_steps) * static_cast<long>(active.size());
  report.iterations = static_cast<int>(std::max(by_epochs, by_floor));

  std::mt19937_64 pick_rng(derive_seed(cfg.seed, "period.sampling"));
  std::uniform_int_distribution<std::size_t> pick(0, active.size() - 1);
  for (int i = 0; i < report.iterations; ++i) {
    const std::size_t slot = cfg.sampling == "random" ? pick(pick_rng) : static_cast<std::size_t>(i) % active.size();
    report.period_order.push_back(active[slot]);
  }

  std::unique_ptr<Adam> tsm_opt;
  if (tsm != nullptr) tsm_opt = std::make_unique<Adam>(tsm->params(), cfg.lr_tsm, AdamConfig{.weight_decay = cfg.weight_decay}, cfg.clip_norm);
  int consecutive_failures = 0;
  auto tsm_step = [&] {
    if (tsm == nullptr) return;
    try {
      report.tsm_loss.push_back(fit_step(*tsm, *tsm_opt, current_series().as_series()));
      consecutive_failures = 0;
    } catch (const Error& e) {
      ++report.tsm_failures;
      report.log.push_back(std::string("tsm step skipped: ") + e.what());
      if (++consecutive_failures >= 3) {
        throw Error(std::string("time-series model failed 3 consecutive steps; last error: ") + e.what());
      }
    }
  };

  const bool interleaved = cfg.schedule == "interleaved";
  for (int p : report.period_order) {
    trainers[static_cast<std::size_t>(p)]->step();
    if (interleaved) tsm_step();
  }
  if (!interleaved) {
    for (int i = 0; i < report.iterations; ++i) tsm_step();
  }

  report.series = current_series();
  for (int p : active) report.der_steps.push_back(trainers[static_cast<std::size_t>(p)]->steps_taken());
  if (tsm != nullptr) {
    Graph g(false);
    report.final_tsm_loss = tsm->fit_loss(g, report.series.as_series()).scalar();
  }
  return report;
}

Matrix predict_future(Forecaster* tsm, const DerSeries& series) {
  if (series.periods.empty()) throw Error("predict_future: empty DER series");
  if (tsm == nullptr) return series.periods.back().der;
  return tsm->forecast_value(series.as_series(), series.next_time());
}

PretrainReport pretrain_for_run(PtForecaster& model, const RunConfig& cfg) {
  data::DynamicsCorpusConfig dc;
  dc.n_traj = cfg.pt_pretrain_trajectories;
  dc.grid_len = cfg.pt_pretrain_grid;
  dc.split_frac = 0.5;
  dc.state_dim = cfg.der_len * cfg.dim;
  dc.seed = derive_seed(cfg.seed, "pretrain.corpus");
  const data::TrajectoryCorpus corpus = data::gen_dynamics_corpus(dc);
  return pretrain(model, corpus,
                  {.epochs = cfg.pt_pretrain_epochs, .batch = 16, .lr = cfg.pt_pretrain_lr,
                   .seed = derive_seed(cfg.seed, "pretrain.batches")});
}

double TimingLedger::total() const {
  double t = 0.0;
  for (const StageTiming& s : stages) t += s.seconds;
  return t;
}

nlohmann::ordered_json timing_report(const TimingLedger& run, const TimingLedger& baseline) {
  nlohmann::ordered_json j;
  j["stages"] = nlohmann::ordered_json::array();
  for (const StageTiming& s : run.stages) j["stages"].push_back({{"stage", s.stage}, {"seconds", s.seconds}});
  j["total_seconds"] = run.total();
  j["baseline_seconds"] = baseline.total();
  j["ratio"] = baseline.total() > 0.0 ? run.total() / baseline.total() : 1.0;
  return j;
}

WarmState run_warmup(const std::vector<data::NewsArticle>& articles, const RunConfig& cfg) {
  const auto start = Clock::now();
  WarmState w;
  w.data = prepare_data(articles, cfg);
  Detector detector(cfg.detector_config(static_cast<int>(w.data.vocab.size())));
  ParamTensor z0("der.0", detector.initial_der(derive_seed(cfg.seed, "der.0")));
  w.report = warmup(detector, z0, w.data, cfg);
  detector.save_to(w.detector);
  w.detector.put(z0);
  w.seconds = seconds_since(start);
  return w;
}

RunArtifacts run_learn(const WarmState& warm, const RunConfig& cfg) {
  RunArtifacts a;
  a.variant = cfg.variant;
  a.warmup = warm.report;
  a.timing.add("warmup", warm.seconds);
  const PreparedData& data = warm.data;
  Detector detector(cfg.detector_config(static_cast<int>(data.vocab.size())));
  detector.load_from(warm.detector);
  const Matrix z0 = warm.detector.get("der.0");
  if (z0.rows() != cfg.der_len || z0.cols() != cfg.dim) throw Error("warm-up DER shape differs from the configuration");

  std::unique_ptr<Forecaster> tsm = make_forecaster(cfg, cfg.der_len * cfg.dim);
  if (auto* pt = dynamic_cast<PtForecaster*>(tsm.get()); pt != nullptr && cfg.pt_pretrain_epochs > 0) {
    const auto start = Clock::now();
    pretrain_for_run(*pt, cfg);
    a.timing.add("pretrain", seconds_since(start));
  }

  auto start = Clock::now();
  a.learn = dynamic_env_learning(detector, z0, data, tsm.get(), cfg);
  a.timing.add("dynamic_env_learning", seconds_since(start));

  start = Clock::now();
  const Matrix der = predict_future(tsm.get(), a.learn.series);
  if (tsm != nullptr) a.future_der = der;
  a.timing.add("predict", seconds_since(start));

  start = Clock::now();
  a.report = eval::evaluate_future(detector, data.vocab, der, data.test, data.train_max, cfg.seed);
  a.report_z0 = eval::evaluate_future(detector, data.vocab, z0, data.test, data.train_max, cfg.seed);
  a.timing.add("evaluate", seconds_since(start));

  detector.save_to(a.detector);
  a.detector.put("der.0", z0);
  a.der_index = a.learn.series.save_to(a.ders);
  if (tsm != nullptr) tsm->save_to(a.tsm);
  if (a.future_der) a.tsm.put("future_der", *a.future_der);
  return a;
}

RunArtifacts run_pipeline(const std::vector<data::NewsArticle>& articles, const RunConfig& cfg) {
  return run_learn(run_warmup(articles, cfg), cfg);
}

}  // namespace misder
