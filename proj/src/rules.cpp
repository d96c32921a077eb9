#include "speedmode/rules.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

#include <spdlog/spdlog.h>

#include "speedmode/error.hpp"
#include "speedmode/geo.hpp"
#include "speedmode/metrics.hpp"
#include "speedmode/util.hpp"

namespace speedmode::rules {

RuleThresholds RuleThresholds::geolife() {
  RuleThresholds t;
  t.road_p95_min = 18.0;
  t.rail_p95_min = 40.0;
  return t;
}

bool RuleThresholds::valid() const {
  const double all[] = {walk_p95_max, bike_p95_max,       road_p95_min,   rail_p95_min,
                        stop_thresh,  bus_stop_ratio_min, accel_std_split};
  for (double v : all)
    if (!(v > 0.0) || !std::isfinite(v)) return false;
  return walk_p95_max < bike_p95_max && bike_p95_max < road_p95_min && road_p95_min < rail_p95_min;
}

nlohmann::json to_json(const RuleThresholds& t) {
  return {{"walk_p95_max", t.walk_p95_max},   {"bike_p95_max", t.bike_p95_max},
          {"road_p95_min", t.road_p95_min},   {"rail_p95_min", t.rail_p95_min},
          {"stop_thresh", t.stop_thresh},     {"bus_stop_ratio_min", t.bus_stop_ratio_min},
          {"accel_std_split", t.accel_std_split}};
}

RuleThresholds thresholds_from_json(const nlohmann::json& j) {
  RuleThresholds t;
  try {
    t.walk_p95_max = j.value("walk_p95_max", t.walk_p95_max);
    t.bike_p95_max = j.value("bike_p95_max", t.bike_p95_max);
    t.road_p95_min = j.value("road_p95_min", t.road_p95_min);
    t.rail_p95_min = j.value("rail_p95_min", t.rail_p95_min);
    t.stop_thresh = j.value("stop_thresh", t.stop_thresh);
    t.bus_stop_ratio_min = j.value("bus_stop_ratio_min", t.bus_stop_ratio_min);
    t.accel_std_split = j.value("accel_std_split", t.accel_std_split);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("rule thresholds: ") + e.what());
  }
  if (!t.valid()) throw FormatError("rule thresholds violate walk < bike < road < rail or positivity");
  return t;
}

RuleThresholds read_thresholds(const std::filesystem::path& file) {
  try {
    return thresholds_from_json(nlohmann::json::parse(read_file(file)));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(file.string() + ": " + e.what());
  }
}

WindowFeatures features_mps(std::span<const double> speeds, std::span<const double> intervals,
                            double stop_thresh) {
  if (speeds.empty()) throw std::invalid_argument("window_features: no valid samples");
  if (!intervals.empty() && intervals.size() != speeds.size())
    throw std::invalid_argument("window_features: one interval per sample required");
  WindowFeatures f;
  std::vector<double> sorted(speeds.begin(), speeds.end());
  std::sort(sorted.begin(), sorted.end());
  f.p95_speed = percentile_sorted(sorted, 0.95);
  std::size_t stopped = 0;
  for (double v : speeds) stopped += v < stop_thresh ? 1 : 0;
  f.stop_ratio = static_cast<double>(stopped) / static_cast<double>(speeds.size());

  std::vector<geo::SpeedSample> samples(speeds.size());
  for (std::size_t i = 0; i < speeds.size(); ++i)
    samples[i] = {speeds[i] * geo::kMpsToKmh, 0.0, intervals.empty() ? 1.0 : intervals[i]};
  const auto acc = geo::compute_accelerations(samples);
  if (!acc.empty()) {
    double mean = 0.0;
    for (double a : acc) mean += a;
    mean /= static_cast<double>(acc.size());
    double sq = 0.0;
    for (double a : acc) sq += (a - mean) * (a - mean);
    f.accel_std = std::sqrt(sq / static_cast<double>(acc.size()));
  }
  return f;
}

WindowFeatures window_features(std::span<const double> speeds_kmh,
                               std::span<const double> intervals, double stop_thresh) {
  std::vector<double> mps(speeds_kmh.size());
  for (std::size_t i = 0; i < mps.size(); ++i) mps[i] = speeds_kmh[i] / geo::kMpsToKmh;
  return features_mps(mps, intervals, stop_thresh);
}

RuleSample to_rule_sample(const data::SpeedWindow& w) {
  RuleSample s;
  s.label = w.label;
  s.speeds_mps.resize(w.valid_count);
  for (std::size_t i = 0; i < w.valid_count; ++i)
    s.speeds_mps[i] = static_cast<double>(w.speeds[i]) / geo::kMpsToKmh;
  if (w.intervals.size() == w.valid_count) s.intervals = w.intervals;
  return s;
}

WindowFeatures window_features(const data::SpeedWindow& window, double stop_thresh) {
  const auto s = to_rule_sample(window);
  return features_mps(s.speeds_mps, s.intervals, stop_thresh);
}

Mode classify_window(const WindowFeatures& f, const RuleThresholds& t) {
  if (f.p95_speed <= t.walk_p95_max) return Mode::Walk;
  if (f.p95_speed <= t.bike_p95_max) return Mode::Bike;
  if (f.p95_speed >= t.rail_p95_min) return Mode::Train;
  if (f.stop_ratio >= t.bus_stop_ratio_min && f.accel_std < t.accel_std_split) return Mode::Bus;
  return Mode::Car;
}

std::vector<Mode> classify_all(std::span<const RuleSample> samples, const RuleThresholds& t) {
  std::vector<Mode> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(classify_window(features_mps(s.speeds_mps, s.intervals, t.stop_thresh), t));
  return out;
}

CandidateGrid CandidateGrid::around(const RuleThresholds& c) {
  const double centre[] = {c.walk_p95_max, c.bike_p95_max,       c.road_p95_min,   c.rail_p95_min,
                           c.stop_thresh,  c.bus_stop_ratio_min, c.accel_std_split};
  CandidateGrid g;
  for (std::size_t k = 0; k < 7; ++k)
    for (double m : {0.8, 0.9, 1.0, 1.1, 1.2}) g.values[k].push_back(m == 1.0 ? centre[k] : centre[k] * m);
  return g;
}

CandidateGrid CandidateGrid::single(const RuleThresholds& c) {
  CandidateGrid g;
  g.values = {std::vector<double>{c.walk_p95_max}, {c.bike_p95_max},       {c.road_p95_min},
              {c.rail_p95_min},                    {c.stop_thresh},        {c.bus_stop_ratio_min},
              {c.accel_std_split}};
  return g;
}

namespace {

auto as_tuple(const RuleThresholds& t) {
  return std::tuple(t.walk_p95_max, t.bike_p95_max, t.road_p95_min, t.rail_p95_min, t.stop_thresh,
                    t.bus_stop_ratio_min, t.accel_std_split);
}

}  // namespace

CalibrationResult calibrate(std::span<const RuleSample> samples, const CandidateGrid& input) {
  CandidateGrid grid = input;
  for (auto& axis : grid.values) {
    if (axis.empty()) throw std::invalid_argument("calibrate: empty candidate axis");
    std::sort(axis.begin(), axis.end());
    axis.erase(std::unique(axis.begin(), axis.end()), axis.end());
  }
  {
    std::array<bool, kNumModes> seen{};
    for (const auto& s : samples) seen[static_cast<std::size_t>(ordinal(s.label))] = true;
    for (auto m : kAllModes)
      if (!seen[static_cast<std::size_t>(ordinal(m))])
        spdlog::warn("calibrate: no training windows for {}; its F1 counts as 0", mode_name(m));
  }

  // Threshold-independent features, plus stop ratios per stop candidate.
  const auto& stops = grid.values[4];
  std::vector<WindowFeatures> base(samples.size());
  std::vector<std::vector<double>> ratios(stops.size(), std::vector<double>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    base[i] = features_mps(samples[i].speeds_mps, samples[i].intervals, stops[0]);
    for (std::size_t s = 0; s < stops.size(); ++s) {
      std::size_t stopped = 0;
      for (double v : samples[i].speeds_mps) stopped += v < stops[s] ? 1 : 0;
      ratios[s][i] = static_cast<double>(stopped) / static_cast<double>(samples[i].speeds_mps.size());
    }
  }
  std::vector<Mode> truth;
  for (const auto& s : samples) truth.push_back(s.label);

  auto centre = [&](std::size_t k) { return (grid.values[k].size() - 1) / 2; };
  auto dist = [](std::size_t a, std::size_t b) { return a > b ? a - b : b - a; };

  CalibrationResult best;
  double best_score = -1.0;
  std::size_t best_distance = std::numeric_limits<std::size_t>::max();
  std::vector<Mode> pred(samples.size());
  std::array<std::size_t, 7> ix{};
  const auto& V = grid.values;
  for (ix[0] = 0; ix[0] < V[0].size(); ++ix[0])
    for (ix[1] = 0; ix[1] < V[1].size(); ++ix[1])
      for (ix[3] = 0; ix[3] < V[3].size(); ++ix[3])
        for (ix[4] = 0; ix[4] < V[4].size(); ++ix[4])
          for (ix[5] = 0; ix[5] < V[5].size(); ++ix[5])
            for (ix[6] = 0; ix[6] < V[6].size(); ++ix[6]) {
              RuleThresholds t{V[0][ix[0]], V[1][ix[1]], 0.0,         V[3][ix[3]],
                               V[4][ix[4]], V[5][ix[5]], V[6][ix[6]]};
              // The road cutoff does not enter the decision, so one score
              // serves every road candidate.
              bool scored = false;
              double score = 0.0;
              for (ix[2] = 0; ix[2] < V[2].size(); ++ix[2]) {
                t.road_p95_min = V[2][ix[2]];
                if (!t.valid()) continue;
                ++best.evaluated;
                if (!scored) {
                  for (std::size_t i = 0; i < samples.size(); ++i) {
                    WindowFeatures f = base[i];
                    f.stop_ratio = ratios[ix[4]][i];
                    pred[i] = classify_window(f, t);
                  }
                  score = eval::metrics_from_confusion(eval::confusion_matrix(truth, pred)).macro.f1;
                  scored = true;
                }
                std::size_t d = 0;
                for (std::size_t k = 0; k < 7; ++k) d += dist(ix[k], centre(k));
                const bool better =
                    score > best_score ||
                    (score == best_score &&
                     (d < best_distance || (d == best_distance && as_tuple(t) < as_tuple(best.thresholds))));
                if (better) {
                  best_score = score;
                  best_distance = d;
                  best.thresholds = t;
                }
              }
            }
  if (best.evaluated == 0)
    throw std::invalid_argument("calibrate: no lattice point satisfies walk < bike < road < rail");
  best.macro_f1 = best_score;
  return best;
}

}  // namespace speedmode::rules
