#include "misder/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace misder::data {
namespace {

struct TopicModel {
  std::vector<double> base;
  std::vector<double> direction;  // 0 for topics whose fake-rate never moves
};

TopicModel topic_model(const SyntheticDriftConfig& cfg) {
  std::mt19937_64 rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  std::uniform_real_distribution<double> base(-1.2, 1.2);
  TopicModel m;
  for (int k = 0; k < cfg.n_topics; ++k) m.base.push_back(base(rng));
  std::vector<int> order(static_cast<std::size_t>(cfg.n_topics));
  for (int k = 0; k < cfg.n_topics; ++k) order[static_cast<std::size_t>(k)] = k;
  std::shuffle(order.begin(), order.end(), rng);
  const int flipping = static_cast<int>(std::lround(cfg.label_flip_topics * cfg.n_topics));
  m.direction.assign(static_cast<std::size_t>(cfg.n_topics), 0.0);
  for (int i = 0; i < flipping; ++i) {
    const auto k = static_cast<std::size_t>(order[static_cast<std::size_t>(i)]);
    m.direction[k] = (i % 2 == 0) ? 1.0 : -1.0;
    m.base[k] *= 0.25;
  }
  return m;
}

double horizon_fraction(const SyntheticDriftConfig& cfg, int period) {
  return cfg.n_periods > 1 ? static_cast<double>(period) / static_cast<double>(cfg.n_periods - 1) : 0.0;
}

double fake_logit(const SyntheticDriftConfig& cfg, const TopicModel& m, std::size_t topic, double s) {
  const double swing = cfg.drift_amplitude * (2.0 * s - 1.0);
  return m.base[topic] + swing * (m.direction[topic] * cfg.flip_logit + cfg.prior_swing);
}

void validate(const SyntheticDriftConfig& cfg) {
  if (cfg.drift_amplitude < 0.0 || cfg.drift_amplitude > 1.0) throw Error("drift_amplitude must lie in [0, 1]");
  if (cfg.n_periods < 2) throw Error("n_periods must be at least 2");
  if (cfg.per_period_count < 1) throw Error("per_period_count must be positive");
  if (cfg.label_flip_topics < 0.0 || cfg.label_flip_topics > 1.0) throw Error("label_flip_topics must lie in [0, 1]");
  if (cfg.n_topics < 1 || cfg.topic_words < 1 || cfg.cue_ring < 4 || cfg.cue_ring % 4 != 0) {
    throw Error("synthetic generator: bad topic/cue layout");
  }
  if (cfg.cue_noise < 0.0 || cfg.cue_noise > 1.0) throw Error("cue_noise must lie in [0, 1]");
  if (cfg.topic_tokens + cfg.cue_tokens > cfg.words_per_article) throw Error("synthetic generator: article too short");
  const int reserved = cfg.n_topics * cfg.topic_words + cfg.cue_ring;
  if (cfg.vocab_size < reserved + 16) {
    throw Error("vocab_size must be at least " + std::to_string(reserved + 16) + " for this layout");
  }
}

std::string word(int id) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "w%04d", id);
  return buf;
}

}  // namespace

nlohmann::ordered_json to_json(const SyntheticDriftConfig& c) {
  return {{"n_periods", c.n_periods},
          {"per_period_count", c.per_period_count},
          {"vocab_size", c.vocab_size},
          {"drift_amplitude", c.drift_amplitude},
          {"label_flip_topics", c.label_flip_topics},
          {"seed", c.seed},
          {"n_topics", c.n_topics},
          {"topic_words", c.topic_words},
          {"cue_ring", c.cue_ring},
          {"words_per_article", c.words_per_article},
          {"topic_tokens", c.topic_tokens},
          {"cue_tokens", c.cue_tokens},
          {"flip_logit", c.flip_logit},
          {"cue_rotation", c.cue_rotation},
          {"prior_swing", c.prior_swing},
          {"cue_noise", c.cue_noise},
          {"base_year", c.base_year}};
}

SyntheticDriftConfig drift_config_from_json(const nlohmann::json& j) {
  SyntheticDriftConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("n_periods", c.n_periods);
  get("per_period_count", c.per_period_count);
  get("vocab_size", c.vocab_size);
  get("drift_amplitude", c.drift_amplitude);
  get("label_flip_topics", c.label_flip_topics);
  get("seed", c.seed);
  get("n_topics", c.n_topics);
  get("topic_words", c.topic_words);
  get("cue_ring", c.cue_ring);
  get("words_per_article", c.words_per_article);
  get("topic_tokens", c.topic_tokens);
  get("cue_tokens", c.cue_tokens);
  get("flip_logit", c.flip_logit);
  get("cue_rotation", c.cue_rotation);
  get("prior_swing", c.prior_swing);
  get("cue_noise", c.cue_noise);
  get("base_year", c.base_year);
  return c;
}

double synthetic_fake_rate(const SyntheticDriftConfig& cfg, int topic, int period) {
  validate(cfg);
  const TopicModel m = topic_model(cfg);
  const auto k = static_cast<std::size_t>(topic);
  const double s = horizon_fraction(cfg, period);
  return 1.0 / (1.0 + std::exp(-fake_logit(cfg, m, k, s)));
}

std::vector<NewsArticle> gen_synthetic_drift(const SyntheticDriftConfig& cfg) {
  validate(cfg);
  const TopicModel model = topic_model(cfg);
  const int topic_base = 0;
  const int cue_base = cfg.n_topics * cfg.topic_words;
  const int filler_base = cue_base + cfg.cue_ring;
  const int filler_count = cfg.vocab_size - filler_base;

  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<int> pick_topic(0, cfg.n_topics - 1);
  std::uniform_int_distribution<int> pick_topic_word(0, cfg.topic_words - 1);
  std::uniform_int_distribution<int> pick_filler(0, filler_count - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double window = cfg.cue_ring / 4.0;

  std::vector<NewsArticle> out;
  out.reserve(static_cast<std::size_t>(cfg.n_periods * cfg.per_period_count));
  for (int p = 0; p < cfg.n_periods; ++p) {
    const double s = horizon_fraction(cfg, p);
    const int year = cfg.base_year + p;
    const Date first{std::chrono::year{year} / std::chrono::January / 1};
    const Date next{std::chrono::year{year + 1} / std::chrono::January / 1};
    std::uniform_int_distribution<int> pick_day(0, static_cast<int>((next - first).count()) - 1);
    const double centre = cfg.drift_amplitude * cfg.cue_rotation * s * cfg.cue_ring;
    for (int i = 0; i < cfg.per_period_count; ++i) {
      const int k = pick_topic(rng);
      const auto ku = static_cast<std::size_t>(k);
      const double fake_rate = 1.0 / (1.0 + std::exp(-fake_logit(cfg, model, ku, s)));
      const int label = unit(rng) < fake_rate ? 1 : 0;

      std::vector<int> words;
      for (int t = 0; t < cfg.topic_tokens; ++t) words.push_back(topic_base + k * cfg.topic_words + pick_topic_word(rng));
      for (int t = 0; t < cfg.cue_tokens; ++t) {
        const bool fake_window = (label == 1) != (unit(rng) < cfg.cue_noise);
        const double class_centre = centre + (fake_window ? 0.0 : cfg.cue_ring / 2.0);
        const int pos = static_cast<int>(std::floor(class_centre + unit(rng) * window));
        words.push_back(cue_base + ((pos % cfg.cue_ring) + cfg.cue_ring) % cfg.cue_ring);
      }
      while (static_cast<int>(words.size()) < cfg.words_per_article) words.push_back(filler_base + pick_filler(rng));
      std::shuffle(words.begin(), words.end(), rng);

      NewsArticle a;
      a.id = "syn-" + std::to_string(p) + "-" + std::to_string(i);
      for (std::size_t w = 0; w < words.size(); ++w) {
        if (w != 0) a.text += ' ';
        a.text += word(words[w]);
      }
      a.label = label;
      a.timestamp = first + std::chrono::days{pick_day(rng)};
      out.push_back(std::move(a));
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const NewsArticle& a, const NewsArticle& b) { return a.timestamp < b.timestamp; });
  return out;
}

double linear_decay(double z0, double rate, double t) { return z0 * std::exp(-rate * t); }

double logistic_curve(double z0, double rate, double capacity, double t) {
  return capacity / (1.0 + (capacity - z0) / z0 * std::exp(-rate * t));
}

std::pair<double, double> damped_oscillator(double x0, double v0, double omega, double gamma, double t) {
  if (gamma >= omega) throw Error("damped_oscillator: only the underdamped regime is supported");
  const double wd = std::sqrt(omega * omega - gamma * gamma);
  const double a = x0;
  const double b = (v0 + gamma * x0) / wd;
  const double e = std::exp(-gamma * t);
  const double c = std::cos(wd * t);
  const double s = std::sin(wd * t);
  const double x = e * (a * c + b * s);
  const double v = -gamma * x + e * (-a * wd * s + b * wd * c);
  return {x, v};
}

nlohmann::ordered_json to_json(const DynamicsCorpusConfig& c) {
  return {{"families", c.families}, {"n_traj", c.n_traj},       {"grid_len", c.grid_len}, {"split_frac", c.split_frac},
          {"state_dim", c.state_dim}, {"t_max", c.t_max}, {"seed", c.seed}};
}

DynamicsCorpusConfig dynamics_config_from_json(const nlohmann::json& j) {
  DynamicsCorpusConfig c;
  if (j.contains("families")) c.families = j.at("families").get<std::vector<std::string>>();
  if (j.contains("n_traj")) c.n_traj = j.at("n_traj").get<int>();
  if (j.contains("grid_len")) c.grid_len = j.at("grid_len").get<int>();
  if (j.contains("split_frac")) c.split_frac = j.at("split_frac").get<double>();
  if (j.contains("state_dim")) c.state_dim = j.at("state_dim").get<int>();
  if (j.contains("t_max")) c.t_max = j.at("t_max").get<double>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

TrajectoryCorpus gen_dynamics_corpus(const DynamicsCorpusConfig& cfg) {
  if (cfg.n_traj <= 0) throw Error("dynamics corpus: n_traj must be positive (empty corpus)");
  if (cfg.grid_len < 4) throw Error("dynamics corpus: grid_len must be at least 4");
  if (!(cfg.split_frac > 0.0 && cfg.split_frac < 1.0)) throw Error("dynamics corpus: split_frac must lie in (0, 1)");
  if (cfg.state_dim < 1) throw Error("dynamics corpus: state_dim must be positive");
  if (cfg.families.empty()) throw Error("dynamics corpus: no families");
  for (const auto& f : cfg.families) {
    if (f != "damped_oscillator" && f != "logistic" && f != "linear_decay") {
      throw Error("dynamics corpus: unknown family '" + f + "'");
    }
  }
  TrajectoryCorpus corpus;
  corpus.split = static_cast<int>(std::lround(cfg.split_frac * cfg.grid_len));
  if (corpus.split < 1 || corpus.split >= cfg.grid_len) {
    throw Error("dynamics corpus: split must leave both input and output parts non-empty");
  }
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_family(0, cfg.families.size() - 1);
  for (int n = 0; n < cfg.n_traj; ++n) {
    Trajectory tr;
    tr.family = cfg.families[pick_family(rng)];
    for (int i = 0; i < cfg.grid_len; ++i) tr.times.push_back(cfg.t_max * i / (cfg.grid_len - 1));
    tr.states = Matrix::Zero(cfg.grid_len, cfg.state_dim);
    for (int c = 0; c < cfg.state_dim;) {
      if (tr.family == "damped_oscillator") {
        const double x0 = 2.0 * unit(rng) - 1.0;
        const double v0 = 2.0 * unit(rng) - 1.0;
        const double omega = 2.0 + 6.0 * unit(rng);
        const double gamma = 0.5 * omega * unit(rng);
        for (int i = 0; i < cfg.grid_len; ++i) {
          const auto [x, v] = damped_oscillator(x0, v0, omega, gamma, tr.times[static_cast<std::size_t>(i)]);
          tr.states(i, c) = x;
          if (c + 1 < cfg.state_dim) tr.states(i, c + 1) = v / omega;
        }
        c += 2;
      } else if (tr.family == "logistic") {
        const double z0 = 0.05 + 0.45 * unit(rng);
        const double rate = 1.0 + 5.0 * unit(rng);
        const double sign = unit(rng) < 0.5 ? -1.0 : 1.0;
        for (int i = 0; i < cfg.grid_len; ++i) {
          tr.states(i, c) = sign * logistic_curve(z0, rate, 1.0, tr.times[static_cast<std::size_t>(i)]);
        }
        c += 1;
      } else {
        const double z0 = 2.0 * unit(rng) - 1.0;
        const double rate = 0.2 + 1.8 * unit(rng);
        for (int i = 0; i < cfg.grid_len; ++i) tr.states(i, c) = linear_decay(z0, rate, tr.times[static_cast<std::size_t>(i)]);
        c += 1;
      }
    }
    corpus.trajectories.push_back(std::move(tr));
  }
  return corpus;
}

nlohmann::ordered_json to_json(const TrajectoryCorpus& corpus) {
  nlohmann::ordered_json j;
  j["split"] = corpus.split;
  j["trajectories"] = nlohmann::ordered_json::array();
  for (const auto& tr : corpus.trajectories) {
    nlohmann::ordered_json t;
    t["family"] = tr.family;
    t["times"] = tr.times;
    std::vector<std::vector<double>> rows;
    for (Eigen::Index r = 0; r < tr.states.rows(); ++r) {
      rows.emplace_back(tr.states.row(r).data(), tr.states.row(r).data() + tr.states.cols());
    }
    t["states"] = rows;
    j["trajectories"].push_back(std::move(t));
  }
  return j;
}

TrajectoryCorpus corpus_from_json(const nlohmann::json& j) {
  TrajectoryCorpus c;
  c.split = j.at("split").get<int>();
  for (const auto& t : j.at("trajectories")) {
    Trajectory tr;
    tr.family = t.at("family").get<std::string>();
    tr.times = t.at("times").get<std::vector<double>>();
    const auto rows = t.at("states").get<std::vector<std::vector<double>>>();
    if (rows.size() != tr.times.size() || rows.empty()) throw Error("trajectory corpus: state/time count mismatch");
    tr.states.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t col = 0; col < rows[r].size(); ++col) {
        tr.states(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(col)) = rows[r][col];
      }
    }
    for (std::size_t i = 1; i < tr.times.size(); ++i) {
      if (!(tr.times[i] > tr.times[i - 1])) throw Error("trajectory corpus: time grid not strictly increasing");
    }
    if (!tr.states.allFinite()) throw Error("trajectory corpus: non-finite state");
    c.trajectories.push_back(std::move(tr));
  }
  return c;
}

}  // namespace misder::data
