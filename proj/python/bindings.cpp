#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cli.hpp"
#include "speedmode/container.hpp"
#include "speedmode/dataset.hpp"
#include "speedmode/dataset_io.hpp"
#include "speedmode/error.hpp"
#include "speedmode/geo.hpp"
#include "speedmode/metrics.hpp"
#include "speedmode/model.hpp"
#include "speedmode/rules.hpp"
#include "speedmode/synth.hpp"

namespace py = pybind11;
using namespace speedmode;

namespace {

py::object to_python(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json from_python(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

Mode mode_arg(const std::string& name) {
  const auto m = mode_from_name(name);
  if (!m) throw std::invalid_argument("unknown mode '" + name + "'");
  return *m;
}

std::vector<std::string> mode_names(std::span<const Mode> modes) {
  std::vector<std::string> out;
  out.reserve(modes.size());
  for (auto m : modes) out.emplace_back(mode_name(m));
  return out;
}

std::vector<Mode> modes_of(const std::vector<std::string>& names) {
  std::vector<Mode> out;
  out.reserve(names.size());
  for (const auto& n : names) out.push_back(mode_arg(n));
  return out;
}

/// speeds [N, T] km/h plus valid counts -> windows.
std::vector<data::SpeedWindow> windows_of(py::array_t<float, py::array::c_style | py::array::forcecast> speeds,
                                          const std::vector<std::size_t>& valid) {
  if (speeds.ndim() != 2) throw ShapeError("speeds must be a 2-D array [windows, length]");
  const auto n = static_cast<std::size_t>(speeds.shape(0)), T = static_cast<std::size_t>(speeds.shape(1));
  if (valid.size() != n) throw ShapeError("one valid count per window required");
  std::vector<data::SpeedWindow> out(n);
  const float* p = speeds.data();
  for (std::size_t i = 0; i < n; ++i) {
    out[i].trip_id = std::to_string(i);
    out[i].index = i;
    out[i].valid_count = valid[i];
    out[i].speeds.assign(p + i * T, p + (i + 1) * T);
  }
  return out;
}

py::dict window_dict(const data::SpeedWindow& w) {
  py::dict d;
  d["trip_id"] = w.trip_id;
  d["label"] = std::string(mode_name(w.label));
  d["start"] = w.start;
  d["index"] = w.index;
  d["valid_count"] = w.valid_count;
  d["speeds"] = py::array_t<float>(static_cast<py::ssize_t>(w.speeds.size()), w.speeds.data());
  return d;
}

struct Model {
  container::Checkpoint ckpt;

  py::array_t<float> predict_proba(py::array_t<float, py::array::c_style | py::array::forcecast> speeds,
                                   const std::vector<std::size_t>& valid) const {
    const auto windows = windows_of(std::move(speeds), valid);
    nn::Tensor<float> p;
    {
      py::gil_scoped_release release;
      p = model::predict_proba(ckpt.params, ckpt.config, windows);
    }
    py::array_t<float> out({static_cast<py::ssize_t>(windows.size()), static_cast<py::ssize_t>(kNumModes)});
    std::copy(p.values().begin(), p.values().end(), out.mutable_data());
    return out;
  }

  std::vector<std::string> predict(py::array_t<float, py::array::c_style | py::array::forcecast> speeds,
                                   const std::vector<std::size_t>& valid) const {
    const auto p = predict_proba(std::move(speeds), valid);
    std::vector<std::string> out;
    const float* v = p.data();
    for (py::ssize_t i = 0; i < p.shape(0); ++i) {
      const std::vector<double> row(v + i * kNumModes, v + (i + 1) * kNumModes);
      out.emplace_back(mode_name(*mode_from_ordinal(model::argmax(row))));
    }
    return out;
  }
};

}  // namespace

PYBIND11_MODULE(_speedmode, m) {
  m.doc() = "Speed-only transportation mode detection";
  m.attr("__version__") = SPEEDMODE_VERSION;
  m.attr("MODES") = mode_names(kAllModes);

  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("run_cli", [](std::vector<std::string> args) {
    args.insert(args.begin(), "speedmode");
    py::gil_scoped_release release;
    return cli::run(args);
  }, py::arg("args"), "Runs a command-line invocation in-process and returns its exit code.");

  m.def("harmonize_label", [](const std::string& raw) -> std::optional<std::string> {
    const auto mode = harmonize_label(raw);
    if (!mode) return std::nullopt;
    return std::string(mode_name(*mode));
  }, py::arg("raw"), "Harmonized mode name, or None when the label is dropped.");

  m.def("haversine_distance", [](double lat1, double lon1, double lat2, double lon2) {
    return geo::haversine_distance({lat1, lon1}, {lat2, lon2});
  }, py::arg("lat1"), py::arg("lon1"), py::arg("lat2"), py::arg("lon2"), "Great-circle distance in meters.");

  m.def("derive_speeds", [](const std::vector<std::tuple<double, double, double>>& points) {
    std::vector<geo::TimedPoint> trip;
    for (const auto& [lat, lon, t] : points) trip.push_back({{lat, lon}, t});
    const auto r = geo::derive_speeds(trip);
    std::vector<double> speeds, intervals;
    for (const auto& s : r.samples) {
      speeds.push_back(s.speed_kmh);
      intervals.push_back(s.interval);
    }
    return py::make_tuple(speeds, intervals, r.dropped_nonpositive_dt);
  }, py::arg("points"), "(lat, lon, timestamp) points -> (speeds km/h, intervals s, dropped pairs).");

  m.def("segment_windows", [](const std::vector<double>& speeds, std::size_t T, std::size_t stride,
                              std::size_t min_tail) {
    py::list out;
    for (const auto& w : data::segment_windows(speeds, T, stride, min_tail)) out.append(window_dict(w));
    return out;
  }, py::arg("speeds"), py::arg("T") = data::kDefaultWindow, py::arg("stride") = data::kDefaultStride,
     py::arg("min_tail") = data::kDefaultMinTail);

  m.def("synth_trips", [](std::size_t n_trips, std::uint64_t seed, double speed_scale) {
    auto spec = data::SynthSpec::defaults();
    spec.speed_scale = speed_scale;
    py::list out;
    for (const auto& t : data::synth_dataset(spec, n_trips, seed)) {
      std::vector<double> v;
      for (const auto& s : t.samples) v.push_back(s.speed_kmh);
      out.append(py::make_tuple(t.trip_id, std::string(mode_name(t.mode)), v));
    }
    return out;
  }, py::arg("n_trips"), py::arg("seed") = 42, py::arg("speed_scale") = 1.0,
     "Seeded synthetic trips as (trip_id, mode, speeds km/h).");

  m.def("read_windows", [](const std::string& path) {
    py::list out;
    for (const auto& w : data::read_windows(path)) out.append(window_dict(w));
    return out;
  }, py::arg("path"), "Windows from a CSV or binary archive.");

  m.def("base_config", [](std::size_t d_model, std::size_t n_layers) {
    return to_python(model::config_to_json(model::ModelConfig::base(d_model, n_layers)));
  }, py::arg("d_model") = 128, py::arg("n_layers") = 4);
  m.def("legacy_config", [](std::size_t d_model, std::size_t n_layers) {
    return to_python(model::config_to_json(model::ModelConfig::legacy(d_model, n_layers)));
  }, py::arg("d_model") = 128, py::arg("n_layers") = 4);
  m.def("count_parameters", [](const py::object& config) {
    return model::count_parameters(model::config_from_json(from_python(config)));
  }, py::arg("config"));

  py::class_<Model>(m, "Model")
      .def_static("init", [](const py::object& config, std::uint64_t seed) {
        const auto c = model::config_from_json(from_python(config));
        c.validate();
        return Model{{c, model::init_model(c, seed), nlohmann::json::object()}};
      }, py::arg("config"), py::arg("seed") = 42)
      .def_static("load", [](const std::string& path) { return Model{container::load_checkpoint(path)}; },
                  py::arg("path"))
      .def("save", [](const Model& self, const std::string& path) { container::save_checkpoint(path, self.ckpt); },
           py::arg("path"))
      .def_property_readonly("config", [](const Model& self) { return to_python(model::config_to_json(self.ckpt.config)); })
      .def_property_readonly("metadata", [](const Model& self) { return to_python(self.ckpt.metadata); })
      .def_property_readonly("parameter_count", [](const Model& self) {
        std::size_t n = 0;
        for (const auto& [name, t] : self.ckpt.params) n += t.size();
        return n;
      })
      .def("parameter", [](const Model& self, const std::string& name) {
        const auto& t = self.ckpt.params.at(name);
        std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
        py::array_t<float> out(shape);
        std::copy(t.values().begin(), t.values().end(), out.mutable_data());
        return out;
      }, py::arg("name"))
      .def("parameter_names", [](const Model& self) {
        std::vector<std::string> names;
        for (const auto& [name, t] : self.ckpt.params) names.push_back(name);
        return names;
      })
      .def("predict_proba", &Model::predict_proba, py::arg("speeds"), py::arg("valid_counts"),
           "Class probabilities [N, 5] for zero-padded km/h windows [N, T].")
      .def("predict", &Model::predict, py::arg("speeds"), py::arg("valid_counts"));

  m.def("rule_thresholds", [](const std::string& preset) {
    if (preset != "default" && preset != "geolife") throw std::invalid_argument("preset must be default or geolife");
    return to_python(rules::to_json(preset == "geolife" ? rules::RuleThresholds::geolife()
                                                        : rules::RuleThresholds::defaults()));
  }, py::arg("preset") = "default");

  m.def("window_features", [](const std::vector<double>& speeds_kmh, const std::vector<double>& intervals,
                              double stop_thresh) {
    const auto f = rules::window_features(speeds_kmh, intervals, stop_thresh);
    py::dict d;
    d["p95_speed"] = f.p95_speed;
    d["stop_ratio"] = f.stop_ratio;
    d["accel_std"] = f.accel_std;
    return d;
  }, py::arg("speeds_kmh"), py::arg("intervals") = std::vector<double>{}, py::arg("stop_thresh") = 0.5,
     "Rule features in m/s from km/h speeds.");

  m.def("classify_rules", [](const std::vector<double>& speeds_kmh, const std::vector<double>& intervals,
                             const py::object& thresholds) {
    const auto t = thresholds.is_none() ? rules::RuleThresholds::defaults()
                                        : rules::thresholds_from_json(from_python(thresholds));
    return std::string(mode_name(rules::classify_window(rules::window_features(speeds_kmh, intervals, t.stop_thresh), t)));
  }, py::arg("speeds_kmh"), py::arg("intervals") = std::vector<double>{}, py::arg("thresholds") = py::none());

  m.def("metrics", [](const std::vector<std::string>& truth, const std::vector<std::string>& predictions) {
    const auto t = modes_of(truth), p = modes_of(predictions);
    return to_python(eval::to_json(eval::metrics_from_confusion(eval::confusion_matrix(t, p))));
  }, py::arg("truth"), py::arg("predictions"), "Confusion matrix and per-class/averaged metrics.");

  m.def("cv_summary", [](const std::vector<double>& values) {
    return to_python(eval::to_json(eval::cv_summary(values)));
  }, py::arg("values"));

  m.def("privacy_report", [](double area_km2, double resolution_m, double speed_states) {
    return to_python(eval::to_json(eval::location_speed_report(area_km2, resolution_m, speed_states)));
  }, py::arg("area_km2") = 1000.0, py::arg("resolution_m") = 10.0, py::arg("speed_states") = 121.0);
}
