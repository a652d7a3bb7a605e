#include "misder/tsm.hpp"

namespace misder {

Variant parse_variant(const std::string& name) {
  if (name == "static") return Variant::static_der;
  if (name == "lstm") return Variant::lstm;
  if (name == "ode") return Variant::ode;
  if (name == "pt") return Variant::pt;
  throw Error("unknown variant '" + name + "' (expected static, lstm, ode or pt)");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::static_der:
      return "static";
    case Variant::lstm:
      return "lstm";
    case Variant::ode:
      return "ode";
    case Variant::pt:
      return "pt";
  }
  return "unknown";
}

void SeriesInput::validate() const {
  if (ders.size() < 2) throw Error("DER series needs z^0 and at least one period");
  if (times.size() != ders.size()) throw Error("DER series: one time per DER required");
  if (times[0] != 0.0) throw Error("DER series: z^0 must sit at time 0");
  for (std::size_t i = 1; i < ders.size(); ++i) {
    if (ders[i].rows() != ders[0].rows() || ders[i].cols() != ders[0].cols()) {
      throw Error("DER series: shape mismatch at period " + std::to_string(i));
    }
    if (!(times[i] > times[i - 1])) throw Error("DER series: times must increase");
  }
}

Matrix Forecaster::forecast_value(const SeriesInput& s, double time) {
  Graph g(false);
  return forecast(g, s, time).value();
}

double fit_step(Forecaster& model, Adam& opt, const SeriesInput& s) {
  opt.zero_grad();
  Graph g;
  Var loss = model.fit_loss(g, s);
  const double value = loss.scalar();
  if (!std::isfinite(value)) throw Error("forecaster loss is not finite");
  g.backward(loss);
  opt.step();
  return value;
}

}  // namespace misder
