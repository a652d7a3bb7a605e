#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "misder/autodiff.hpp"
#include "misder/data.hpp"

namespace misder::data {

/// Drifting misinformation corpus. Each article mixes words from one topic,
/// class cue words and filler. Over periods, a fraction of topics move their
/// fake-rate across 0.5, the overall fake share trends, and the cue
/// vocabulary of each class rotates around a ring; every effect scales with
/// drift_amplitude and vanishes at 0.
struct SyntheticDriftConfig {
  int n_periods = 8;
  int per_period_count = 500;
  int vocab_size = 2000;
  double drift_amplitude = 0.8;
  double label_flip_topics = 0.5;
  std::uint64_t seed = 0;

  int n_topics = 8;
  int topic_words = 24;        // words per topic
  int cue_ring = 32;           // cue words, half fake-leaning at any time
  int words_per_article = 12;
  int topic_tokens = 5;
  int cue_tokens = 2;
  double flip_logit = 3.0;     // fake-rate logit swing of a flipping topic at full drift
  double cue_rotation = 0.25;  // ring turns (fraction of the ring) over the horizon at full drift
  double prior_swing = 0.0;    // fake-rate logit swing shared by every topic at full drift
  double cue_noise = 0.0;      // chance that a cue word comes from the other class's window
  int base_year = 2010;
};

nlohmann::ordered_json to_json(const SyntheticDriftConfig& cfg);
SyntheticDriftConfig drift_config_from_json(const nlohmann::json& j);

std::vector<NewsArticle> gen_synthetic_drift(const SyntheticDriftConfig& cfg);

/// Fake-rate of topic k in period p under the generator's label model.
double synthetic_fake_rate(const SyntheticDriftConfig& cfg, int topic, int period);

struct Trajectory {
  std::string family;
  std::vector<double> times;  // strictly increasing
  Matrix states;              // times.size() × state_dim
};

struct TrajectoryCorpus {
  std::vector<Trajectory> trajectories;
  int split = 1;  // number of leading states forming the input part z_p^I
  int state_dim() const { return trajectories.empty() ? 0 : static_cast<int>(trajectories.front().states.cols()); }
};

struct DynamicsCorpusConfig {
  std::vector<std::string> families = {"damped_oscillator", "logistic", "linear_decay"};
  int n_traj = 64;
  int grid_len = 10;
  double split_frac = 0.7;
  int state_dim = 2;
  double t_max = 1.0;
  std::uint64_t seed = 0;
};

nlohmann::ordered_json to_json(const DynamicsCorpusConfig& cfg);
DynamicsCorpusConfig dynamics_config_from_json(const nlohmann::json& j);

/// Closed-form trajectories (no ODE solver involved).
TrajectoryCorpus gen_dynamics_corpus(const DynamicsCorpusConfig& cfg);

nlohmann::ordered_json to_json(const TrajectoryCorpus& corpus);
TrajectoryCorpus corpus_from_json(const nlohmann::json& j);

// Closed-form solutions used by the generator.
double linear_decay(double z0, double rate, double t);
double logistic_curve(double z0, double rate, double capacity, double t);
/// Underdamped x'' + 2γx' + ω²x = 0 from (x0, v0); returns (x(t), v(t)).
std::pair<double, double> damped_oscillator(double x0, double v0, double omega, double gamma, double t);

}  // namespace misder::data
