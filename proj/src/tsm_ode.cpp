#include "misder/ops.hpp"
#include "misder/tsm.hpp"

namespace misder {

OdeForecaster::OdeForecaster(const OdeConfig& cfg) : cfg_(cfg) {
  if (cfg.state < 1 || cfg.latent < 1 || cfg.field_hidden < 1) throw Error("ode: bad sizes");
  std::mt19937_64 rng(cfg.seed);
  enc1_ = nn::Linear("tsm.ode.encoder.fc1", cfg.state, cfg.latent, rng);
  enc2_ = nn::Linear("tsm.ode.encoder.fc2", cfg.latent, cfg.latent, rng);
  field1_ = nn::Linear("tsm.ode.field.fc1", cfg.latent + 1, cfg.field_hidden, rng);
  field2_ = nn::Linear("tsm.ode.field.fc2", cfg.field_hidden, cfg.field_hidden, rng);
  field3_ = nn::Linear("tsm.ode.field.fc3", cfg.field_hidden, cfg.latent, rng);
  if (cfg.zero_field) field3_.weight.values.setZero();
  dec1_ = nn::Linear("tsm.ode.decoder.fc1", cfg.latent, cfg.latent, rng);
  dec2_ = nn::Linear("tsm.ode.decoder.fc2", cfg.latent, cfg.state, rng);
}

Var OdeForecaster::encode(Graph& g, Var z) {
  Var flat = ops::reshape(z, 1, z.rows() * z.cols());
  return enc2_(g, ops::tanh(enc1_(g, flat)));
}

Var OdeForecaster::decode(Graph& g, Var h) { return dec2_(g, ops::tanh(dec1_(g, h))); }

ode::Field OdeForecaster::field() {
  return [this](Graph& g, Var h, double t) {
    const Var parts[] = {h, g.constant(Matrix::Constant(h.rows(), 1, t))};
    Var x = ops::tanh(field1_(g, ops::concat_cols(parts)));
    x = ops::tanh(field2_(g, x));
    return field3_(g, x);
  };
}

std::vector<Var> OdeForecaster::trajectory(Graph& g, Var z0, const std::vector<double>& times) {
  if (times.empty()) return {};
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] < 0.0 || (i > 0 && times[i] < times[i - 1])) throw Error("ode: times must be non-decreasing and >= 0");
  }
  Var h0 = encode(g, z0);
  ode::Solution sol;
  try {
    sol = ode::dopri5(g, field(), h0, 0.0, times.back(), cfg_.solver, times, replay_);
  } catch (const Error& e) {
    throw Error(std::string(e.what()) + " (integrating to normalized time " + std::to_string(times.back()) + ")");
  }
  last_trace_ = sol.trace;
  Var decoded = decode(g, ops::concat_rows(sol.dense));
  std::vector<Var> out;
  for (Eigen::Index i = 0; i < decoded.rows(); ++i) {
    out.push_back(ops::reshape(ops::slice_rows(decoded, i, 1), z0.rows(), z0.cols()));
  }
  return out;
}

Var OdeForecaster::fit_loss(Graph& g, const SeriesInput& s) {
  s.validate();
  const double scale = s.times.back();
  std::vector<double> times;
  for (std::size_t i = 1; i < s.times.size(); ++i) times.push_back(s.times[i] / scale);
  Var z0 = g.constant(s.ders[0]);
  Var h0 = encode(g, z0);
  ode::Solution sol = ode::dopri5(g, field(), h0, 0.0, times.back(), cfg_.solver, times, replay_);
  last_trace_ = sol.trace;
  Var pred = decode(g, ops::concat_rows(sol.dense));
  Matrix targets(static_cast<Eigen::Index>(times.size()), s.ders[0].size());
  for (std::size_t i = 1; i < s.ders.size(); ++i) {
    targets.row(static_cast<Eigen::Index>(i - 1)) = Eigen::Map<const RowVector>(s.ders[i].data(), s.ders[i].size());
  }
  return ops::l1_loss(pred, g.constant(targets));
}

Var OdeForecaster::forecast(Graph& g, const SeriesInput& s, double time) {
  s.validate();
  if (time < 0.0) throw Error("ode: forecast time must be non-negative");
  return trajectory(g, g.constant(s.ders[0]), {time / s.times.back()}).front();
}

std::vector<ParamTensor*> OdeForecaster::params() {
  std::vector<ParamTensor*> out;
  for (nn::Linear* l : {&enc1_, &enc2_, &field1_, &field2_, &field3_, &dec1_, &dec2_}) l->collect(out);
  return out;
}

}  // namespace misder
