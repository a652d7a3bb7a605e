#include <doctest.h>

#include <cmath>
#include <random>

#include "misder/der.hpp"
#include "misder/ops.hpp"
#include "misder/synthetic.hpp"
#include "misder/train.hpp"

using namespace misder;

namespace {

data::NewsArticle article(const std::string& id, const std::string& date, const std::string& text, int label = 0) {
  return {id, text, label, data::parse_date(date)};
}

DetectorConfig small_config(int vocab_size, std::uint64_t seed) {
  DetectorConfig cfg;
  cfg.vocab_size = vocab_size;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.layers = 1;
  cfg.der_len = 4;
  cfg.max_len = 8;
  cfg.seed = seed;
  return cfg;
}

RunConfig tiny_run(std::uint64_t seed) {
  RunConfig c;
  c.der_len = 4;
  c.dim = 16;
  c.heads = 2;
  c.layers = 1;
  c.max_len = 16;
  c.warmup_epochs = 3;
  c.batch = 32;
  c.lr_detector = 3e-3;
  c.lr_der = 1e-2;
  c.variant = "static";
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("init_der of a single-word event repeats that word's embedding") {
  const std::vector<data::NewsArticle> arts{article("1", "2010-01-01", "storm storm"),
                                            article("2", "2010-01-01", "calm storm")};
  const data::Vocabulary vocab = data::Vocabulary::build(arts, 8, 1);
  Detector det(small_config(static_cast<int>(vocab.size()), 1));
  const Matrix fallback = Matrix::Zero(4, 8);
  const Matrix z = init_der({"storm storm storm"}, vocab, det, fallback, 3);
  const RowVector v = det.embedding_params().front()->values.row(vocab.id_of("storm"));
  REQUIRE(z.rows() == 4);
  for (Eigen::Index r = 0; r < z.rows(); ++r) CHECK((z.row(r) - v).cwiseAbs().maxCoeff() < 0.05);
  CHECK((z.row(0) - z.row(1)).norm() > 0.0);
}

TEST_CASE("init_der averages article embeddings and is seed-deterministic") {
  const std::vector<data::NewsArticle> arts{article("1", "2010-01-01", "alpha beta"),
                                            article("2", "2010-01-01", "gamma")};
  const data::Vocabulary vocab = data::Vocabulary::build(arts, 8, 1);
  Detector det(small_config(static_cast<int>(vocab.size()), 2));
  const Matrix& table = det.embedding_params().front()->values;
  const RowVector first = 0.5 * (table.row(vocab.id_of("alpha")) + table.row(vocab.id_of("beta")));
  const RowVector expected = 0.5 * (first + table.row(vocab.id_of("gamma")));
  const Matrix fallback = Matrix::Zero(4, 8);
  const Matrix z = init_der({"alpha beta", "gamma"}, vocab, det, fallback, 5);
  CHECK((z.colwise().mean() - expected).cwiseAbs().maxCoeff() < 0.03);

  CHECK(init_der({"alpha beta", "gamma"}, vocab, det, fallback, 5) == z);
  const Matrix other = init_der({"alpha beta", "gamma"}, vocab, det, fallback, 6);
  CHECK(other != z);
  CHECK((other - z).cwiseAbs().maxCoeff() < 0.1);

  // Two periods holding identical articles start from the same point.
  const data::TemporalDataset ds = data::make_dataset(
      {article("a", "2010-03-01", "alpha beta"), article("b", "2011-03-01", "alpha beta")}, data::Interval::yearly);
  const data::ExtractorConfig offline;
  CHECK(init_period_der(ds, ds.periods[0], offline, vocab, det, fallback, 9) ==
        init_period_der(ds, ds.periods[1], offline, vocab, det, fallback, 9));
}

TEST_CASE("init_der without usable events copies the fallback with a warning") {
  const std::vector<data::NewsArticle> arts{article("1", "2010-01-01", "x")};
  const data::Vocabulary vocab = data::Vocabulary::build(arts, 8, 1);
  Detector det(small_config(static_cast<int>(vocab.size()), 3));
  std::mt19937_64 rng(3);
  const Matrix fallback = normal_matrix(4, 8, 1.0, rng);
  std::vector<std::string> warnings;
  CHECK(init_der({}, vocab, det, fallback, 1, &warnings) == fallback);
  CHECK(init_der({"", " ,"}, vocab, det, fallback, 1, &warnings) == fallback);
  CHECK(warnings.size() == 2);
  CHECK_THROWS(init_der({"x"}, vocab, det, Matrix::Zero(3, 8), 1));
}

TEST_CASE("step budget honours the floor") {
  CHECK(der_step_budget(500, 64, 3.0, 50) == 50);
  CHECK(der_step_budget(5000, 64, 3.0, 50) == 237);
  CHECK(der_step_budget(1, 64, 3.0, 0) == 3);
  CHECK_THROWS(der_step_budget(10, 0, 3.0, 0));
}

TEST_CASE("period DER training needs a frozen detector and zero steps change nothing") {
  std::mt19937_64 rng(4);
  Detector det(small_config(30, 4));
  LabeledSequences data;
  for (int i = 0; i < 10; ++i) {
    data.sequences.push_back({2, 3 + i, 5, 0, 0, 0, 0, 0});
    data.labels.push_back(i % 2);
  }
  const Matrix init = normal_matrix(4, 8, 1.0, rng);
  CHECK_THROWS(train_period_der(det, data, init, 1, 1e-2, 4, 0));
  det.set_frozen(true);
  const PeriodDerResult zero = train_period_der(det, data, init, 0, 1e-2, 4, 0);
  CHECK(zero.der == init);
  CHECK(zero.losses.empty());
  CHECK_THROWS(train_period_der(det, LabeledSequences{}, init, 1, 1e-2, 4, 0));

  Checkpoint before;
  det.save_to(before);
  const PeriodDerResult some = train_period_der(det, data, init, 20, 1e-2, 4, 0);
  Checkpoint after;
  det.save_to(after);
  CHECK(before.serialize() == after.serialize());
  CHECK(some.losses.size() == 20);
  CHECK(some.der != init);
  // Same seed, same trajectory.
  CHECK(train_period_der(det, data, init, 20, 1e-2, 4, 0).der == some.der);
}

TEST_CASE("the aggregate objective equals a direct two-loop mean") {
  std::mt19937_64 rng(5);
  Detector det(small_config(30, 5));
  det.set_frozen(true);
  std::vector<LabeledSequences> periods(3);
  std::uniform_int_distribution<int> token(3, 29);
  for (std::size_t p = 0; p < periods.size(); ++p) {
    for (std::size_t i = 0; i < 3 + 2 * p; ++i) {
      periods[p].sequences.push_back({2, token(rng), token(rng), token(rng), 0, 0, 0, 0});
      periods[p].labels.push_back(static_cast<int>(rng() % 2));
    }
  }
  std::vector<Matrix> ders;
  for (int p = 0; p < 3; ++p) ders.push_back(normal_matrix(4, 8, 1.0, rng));

  Graph g(false);
  std::vector<Var> vars;
  std::vector<const LabeledSequences*> ptrs;
  for (std::size_t p = 0; p < ders.size(); ++p) {
    vars.push_back(g.constant(ders[p]));
    ptrs.push_back(&periods[p]);
  }
  const double aggregate = der_objective(g, det, vars, ptrs).scalar();

  double direct = 0.0;
  for (std::size_t p = 0; p < periods.size(); ++p) {
    const auto probs = det.score(ders[p], periods[p].sequences);
    double sum = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) sum += bce_loss(probs[i], periods[p].labels[i]);
    direct += sum / static_cast<double>(probs.size());
  }
  direct /= static_cast<double>(periods.size());
  CHECK(std::abs(aggregate - direct) < 1e-9);
}

TEST_CASE("DER training lowers each period's loss on the drift benchmark") {
  int seeds_ok = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    data::SyntheticDriftConfig sc;
    sc.per_period_count = 100;
    sc.seed = seed;
    const RunConfig cfg = tiny_run(seed);
    const WarmState warm = run_warmup(data::gen_synthetic_drift(sc), cfg);
    Detector det(cfg.detector_config(static_cast<int>(warm.data.vocab.size())));
    det.load_from(warm.detector);
    det.set_frozen(true);
    bool all = true;
    for (std::size_t p = 0; p < warm.data.periods.size(); ++p) {
      const LabeledSequences& period = warm.data.periods[p];
      const Matrix init = init_period_der(warm.data.train, warm.data.train.periods[p], cfg.extractor_config(),
                                          warm.data.vocab, det, warm.detector.get("der.0"), seed);
      const PeriodDerTrainer start(det, period, init, 1, cfg.lr_der, cfg.batch, seed);
      const double before = start.period_loss();
      const PeriodDerResult r =
          train_period_der(det, period, init, 200, cfg.lr_der, cfg.batch, derive_seed(seed, "test", p));
      all = all && r.final_loss <= before;
    }
    if (all) ++seeds_ok;
  }
  CHECK(seeds_ok >= 4);
}

TEST_CASE("DER series survive a checkpoint round-trip") {
  std::mt19937_64 rng(6);
  DerSeries s;
  s.z0 = normal_matrix(2, 3, 1.0, rng);
  for (int i = 1; i <= 3; ++i) {
    DerPeriod p;
    p.index = i;
    p.calendar_offset = i == 3 ? 3 : i - 1;
    p.begin = data::parse_date("201" + std::to_string(i) + "-01-01");
    p.end = data::parse_date("201" + std::to_string(i + 1) + "-01-01");
    p.der = normal_matrix(2, 3, 1.0, rng);
    p.losses = {0.5, 0.4};
    s.periods.push_back(p);
  }
  Checkpoint ck;
  const auto index = s.save_to(ck);
  CHECK(ck.contains("der.3"));
  const DerSeries back = DerSeries::load_from(Checkpoint::deserialize(ck.serialize()), index, s.z0);
  REQUIRE(back.length() == 3);
  CHECK(back.periods[2].calendar_offset == 3);
  CHECK(back.periods[1].der.isApprox(s.periods[1].der, 1e-6));
  const SeriesInput in = s.as_series();
  CHECK(in.times == std::vector<double>{0.0, 1.0, 2.0, 4.0});
  CHECK(s.next_time() == 5.0);
}
