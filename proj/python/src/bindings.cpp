#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "misder/dopri5.hpp"
#include "misder/experiments.hpp"
#include "misder/metrics.hpp"
#include "misder/synthetic.hpp"
#include "misder/train.hpp"

namespace py = pybind11;
using namespace misder;
using ojson = nlohmann::ordered_json;

namespace {

py::dict article_dict(const data::NewsArticle& a) {
  py::dict d;
  d["id"] = a.id;
  d["text"] = a.text;
  d["label"] = a.label;
  d["timestamp"] = data::format_date(a.timestamp);
  return d;
}

py::list article_list(const std::vector<data::NewsArticle>& articles) {
  py::list out;
  for (const auto& a : articles) out.append(article_dict(a));
  return out;
}

std::vector<data::NewsArticle> articles_from(const py::iterable& items) {
  std::vector<data::NewsArticle> out;
  for (const py::handle item : items) {
    const py::dict d = py::reinterpret_borrow<py::dict>(item);
    data::NewsArticle a;
    a.id = d["id"].cast<std::string>();
    a.text = d["text"].cast<std::string>();
    a.label = d["label"].cast<int>();
    a.timestamp = data::parse_date(d["timestamp"].cast<std::string>());
    out.push_back(std::move(a));
  }
  return out;
}

std::string report_json(const eval::MetricReport& r) { return eval::to_json(r).dump(); }

py::dict run_pipeline_py(const py::iterable& items, const std::string& config_json) {
  const RunConfig cfg = run_config_from_json(nlohmann::json::parse(config_json));
  cfg.validate();
  const auto articles = articles_from(items);
  RunArtifacts a;
  {
    py::gil_scoped_release release;
    a = run_pipeline(articles, cfg);
  }
  py::dict out;
  out["variant"] = a.variant;
  out["report"] = report_json(a.report);
  out["report_z0"] = report_json(a.report_z0);
  out["z0"] = a.learn.series.z0;
  py::list ders;
  py::list times;
  for (const DerPeriod& p : a.learn.series.periods) {
    ders.append(p.der);
    times.append(static_cast<double>(p.calendar_offset + 1));
  }
  out["ders"] = ders;
  out["times"] = times;
  out["iterations"] = a.learn.iterations;
  out["final_tsm_loss"] = a.learn.final_tsm_loss;
  if (a.future_der) out["future_der"] = *a.future_der;
  out["detector_checkpoint"] = py::bytes(a.detector.serialize());
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bindings for the misder C++ library";

  m.def("default_run_config", [] { return to_json(RunConfig{}).dump(); });
  m.def(
      "resolve_run_config",
      [](const std::string& overrides) {
        const RunConfig cfg = run_config_from_json(nlohmann::json::parse(overrides));
        cfg.validate();
        return to_json(cfg).dump();
      },
      py::arg("overrides"));
  m.def(
      "gen_synthetic_drift",
      [](const std::string& config_json) {
        ojson j = data::to_json(data::SyntheticDriftConfig{});
        j.update(ojson::parse(config_json));
        return article_list(data::gen_synthetic_drift(data::drift_config_from_json(j)));
      },
      py::arg("config"));
  m.def(
      "load_jsonl", [](const std::string& path) { return article_list(data::load_jsonl(path).articles); },
      py::arg("path"));
  m.def(
      "save_jsonl",
      [](const std::string& path, const py::iterable& items) { data::save_jsonl(path, articles_from(items)); },
      py::arg("path"), py::arg("articles"));

  m.def(
      "auc", [](const std::vector<double>& s, const std::vector<int>& y) { return eval::auc(s, y); }, py::arg("scores"),
      py::arg("labels"));
  m.def(
      "sp_auc",
      [](const std::vector<double>& s, const std::vector<int>& y, double max_fpr) { return eval::sp_auc(s, y, max_fpr); },
      py::arg("scores"), py::arg("labels"), py::arg("max_fpr") = 0.1);
  m.def(
      "metric_report",
      [](const std::vector<double>& s, const std::vector<int>& y, std::uint64_t seed) {
        return report_json(eval::metric_report(s, y, seed));
      },
      py::arg("scores"), py::arg("labels"), py::arg("seed") = 0);

  m.def(
      "integrate",
      [](const py::function& f, const Matrix& z0, double t0, double t1, double rtol, double atol) {
        ode::IntegrationConfig cfg;
        cfg.rtol = rtol;
        cfg.atol = atol;
        const auto field = [&f](const Matrix& z, double t) {
          Matrix dz = f(Matrix(z), t).cast<Matrix>();
          if (dz.rows() != z.rows() || dz.cols() != z.cols()) throw Error("integrate: field changed the state shape");
          return dz;
        };
        return ode::integrate(field, z0, t0, t1, cfg);
      },
      py::arg("field"), py::arg("z0"), py::arg("t0"), py::arg("t1"), py::arg("rtol") = 1e-6, py::arg("atol") = 1e-8);

  m.def("run_pipeline", &run_pipeline_py, py::arg("articles"), py::arg("config"));

  py::register_exception<Error>(m, "MisderError", PyExc_RuntimeError);
}
