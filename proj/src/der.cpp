#include "misder/der.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "misder/ops.hpp"

namespace misder {
namespace {

void require_frozen(Detector& detector) {
  for (ParamTensor* p : detector.params()) {
    if (!p->frozen) throw Error("DER training requires a frozen detector (" + p->name + " is trainable)");
  }
}

}  // namespace

LabeledSequences encode_articles(const std::vector<data::NewsArticle>& articles, const data::Vocabulary& vocab) {
  LabeledSequences out;
  out.sequences.reserve(articles.size());
  for (const auto& a : articles) {
    out.sequences.push_back(data::tokenize(a, vocab));
    out.labels.push_back(a.label);
  }
  return out;
}

LabeledSequences encode_period(const data::TemporalDataset& ds, const data::Period& period,
                               const data::Vocabulary& vocab) {
  LabeledSequences out;
  for (std::size_t i : period.articles) {
    out.sequences.push_back(data::tokenize(ds.articles[i], vocab));
    out.labels.push_back(ds.articles[i].label);
  }
  return out;
}

SeriesInput DerSeries::as_series() const {
  SeriesInput s;
  s.ders.push_back(z0);
  s.times.push_back(0.0);
  for (const DerPeriod& p : periods) {
    s.ders.push_back(p.der);
    s.times.push_back(p.calendar_offset + 1.0);
  }
  return s;
}

double DerSeries::next_time() const {
  if (periods.empty()) throw Error("DER series is empty");
  return periods.back().calendar_offset + 2.0;
}

nlohmann::ordered_json DerSeries::save_to(Checkpoint& ck) const {
  nlohmann::ordered_json index = nlohmann::ordered_json::array();
  for (const DerPeriod& p : periods) {
    const std::string name = "der." + std::to_string(p.index);
    ck.put(name, p.der);
    index.push_back({{"group", name},
                     {"index", p.index},
                     {"calendar_offset", p.calendar_offset},
                     {"begin", data::format_date(p.begin)},
                     {"end", data::format_date(p.end)},
                     {"steps", p.losses.size()},
                     {"final_loss", p.losses.empty() ? 0.0 : p.losses.back()}});
  }
  return index;
}

DerSeries DerSeries::load_from(const Checkpoint& ck, const nlohmann::json& index, const Matrix& z0) {
  DerSeries s;
  s.z0 = z0;
  for (const auto& entry : index) {
    DerPeriod p;
    p.index = entry.at("index").get<int>();
    p.calendar_offset = entry.at("calendar_offset").get<int>();
    p.begin = data::parse_date(entry.at("begin").get<std::string>());
    p.end = data::parse_date(entry.at("end").get<std::string>());
    p.der = ck.get(entry.at("group").get<std::string>());
    if (p.der.rows() != z0.rows() || p.der.cols() != z0.cols()) throw Error("DER series: stored DER has wrong shape");
    s.periods.push_back(std::move(p));
  }
  for (std::size_t i = 0; i < s.periods.size(); ++i) {
    if (s.periods[i].index != static_cast<int>(i) + 1) throw Error("DER series: period indices must run 1..T");
  }
  return s;
}

Matrix init_der(const std::vector<std::string>& events, const data::Vocabulary& vocab, Detector& detector,
                const Matrix& fallback, std::uint64_t noise_seed, std::vector<std::string>* warnings) {
  const int k = detector.config().der_len;
  const int d = detector.config().dim;
  if (fallback.rows() != k || fallback.cols() != d) throw Error("init_der: fallback DER must be K x D");
  RowVector total = RowVector::Zero(d);
  int used = 0;
  Graph g(false);
  for (const std::string& event : events) {
    std::vector<std::int32_t> ids;
    for (std::int32_t id : vocab.encode(event)) {
      if (id != data::Vocabulary::kPad && id != data::Vocabulary::kCls) ids.push_back(id);
    }
    if (ids.empty()) continue;
    total += detector.embed(g, ids).value().colwise().mean();
    ++used;
  }
  if (used == 0) {
    if (warnings != nullptr) warnings->push_back("init_der: no usable event tokens, copying z^0");
    return fallback;
  }
  const RowVector mean = total / used;
  std::mt19937_64 rng(noise_seed);
  return mean.replicate(k, 1) + normal_matrix(k, d, 0.01, rng);
}

Matrix init_period_der(const data::TemporalDataset& ds, const data::Period& period,
                       const data::ExtractorConfig& extractor, const data::Vocabulary& vocab, Detector& detector,
                       const Matrix& fallback, std::uint64_t noise_seed, std::vector<std::string>* warnings) {
  std::vector<const data::NewsArticle*> articles;
  for (std::size_t i : period.articles) articles.push_back(&ds.articles[i]);
  const data::EventExtraction ex = data::extract_events(articles, extractor);
  if (warnings != nullptr) warnings->insert(warnings->end(), ex.log.begin(), ex.log.end());
  return init_der(ex.events, vocab, detector, fallback, noise_seed, warnings);
}

int der_step_budget(std::size_t n, int batch, double epochs, int floor) {
  if (batch < 1) throw Error("batch size must be positive");
  const double per_epoch = std::ceil(static_cast<double>(n) / batch);
  return std::max(floor, static_cast<int>(std::lround(epochs * per_epoch)));
}

PeriodDerTrainer::PeriodDerTrainer(Detector& detector, const LabeledSequences& data, Matrix init, int index,
                                   double lr, int batch, std::uint64_t seed, AdamConfig adam)
    : detector_(&detector),
      data_(&data),
      der_("der." + std::to_string(index), std::move(init)),
      batch_(batch),
      rng_(seed) {
  if (data.empty()) throw Error("period " + std::to_string(index) + " has no articles");
  if (batch < 1) throw Error("batch size must be positive");
  opt_ = Adam({&der_}, lr, adam);
  order_.resize(data.size());
  std::iota(order_.begin(), order_.end(), 0);
  std::shuffle(order_.begin(), order_.end(), rng_);
}

double PeriodDerTrainer::step() {
  require_frozen(*detector_);
  std::vector<std::vector<std::int32_t>> seqs;
  std::vector<int> labels;
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(batch_), order_.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (cursor_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    const std::size_t at = order_[cursor_++];
    seqs.push_back(data_->sequences[at]);
    labels.push_back(data_->labels[at]);
  }
  opt_.zero_grad();
  Graph g;
  Var loss = detector_->batch_loss(g, g.param(der_), make_batch(seqs, labels));
  const double value = loss.scalar();
  g.backward(loss);
  opt_.step();
  losses_.push_back(value);
  return value;
}

double PeriodDerTrainer::period_loss() const {
  Graph g(false);
  return detector_->batch_loss(g, g.constant(der_.values), make_batch(data_->sequences, data_->labels)).scalar();
}

PeriodDerResult train_period_der(Detector& detector, const LabeledSequences& data, const Matrix& init, int steps,
                                 double lr, int batch, std::uint64_t seed) {
  if (steps < 0) throw Error("train_period_der: negative step count");
  require_frozen(detector);
  PeriodDerTrainer trainer(detector, data, init, 0, lr, batch, seed);
  for (int i = 0; i < steps; ++i) trainer.step();
  PeriodDerResult out;
  out.der = trainer.der();
  out.losses = trainer.losses();
  out.final_loss = trainer.period_loss();
  return out;
}

Var der_objective(Graph& g, Detector& detector, const std::vector<Var>& ders,
                  const std::vector<const LabeledSequences*>& periods) {
  if (ders.empty() || ders.size() != periods.size()) throw Error("der_objective: one DER per period required");
  std::vector<Var> terms;
  for (std::size_t i = 0; i < ders.size(); ++i) {
    const LabeledSequences& p = *periods[i];
    terms.push_back(detector.batch_loss(g, ders[i], make_batch(p.sequences, p.labels)));
  }
  const std::vector<double> weights(terms.size(), 1.0 / static_cast<double>(terms.size()));
  return ops::lincomb(terms, weights);
}

}  // namespace misder
