#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "speedmode/dataset.hpp"
#include "speedmode/modes.hpp"

namespace speedmode::rules {

/// Cutoffs of the hierarchical speed classifier. Speeds in m/s,
/// accelerations in m/s^2.
struct RuleThresholds {
  double walk_p95_max = 3.0;
  double bike_p95_max = 8.0;
  /// Lower edge of the road band. The decision order never consults it
  /// (everything between bike_p95_max and rail_p95_min is motorized road).
  double road_p95_min = 17.4;
  double rail_p95_min = 27.5;
  double stop_thresh = 0.5;
  double bus_stop_ratio_min = 0.05;
  double accel_std_split = 2.0;

  static RuleThresholds defaults() { return {}; }
  /// Road 18.0 m/s and rail 40.0 m/s.
  static RuleThresholds geolife();
  /// walk < bike < road < rail and all positive.
  bool valid() const;
  bool operator==(const RuleThresholds&) const = default;
};

nlohmann::json to_json(const RuleThresholds& t);
/// Missing keys keep their defaults. Throws FormatError on an invalid set.
RuleThresholds thresholds_from_json(const nlohmann::json& j);
RuleThresholds read_thresholds(const std::filesystem::path& file);

struct WindowFeatures {
  double p95_speed = 0.0;   // m/s
  double stop_ratio = 0.0;  // fraction below stop_thresh
  double accel_std = 0.0;   // m/s^2, population std
};

/// Speeds in m/s with the sampling interval (s) of each sample; an empty
/// interval list means 1 s spacing. Needs at least one sample.
WindowFeatures features_mps(std::span<const double> speeds_mps,
                            std::span<const double> intervals, double stop_thresh);
/// Same, from km/h.
WindowFeatures window_features(std::span<const double> speeds_kmh,
                               std::span<const double> intervals, double stop_thresh = 0.5);
/// Features over the valid prefix of a window.
WindowFeatures window_features(const data::SpeedWindow& window, double stop_thresh = 0.5);

Mode classify_window(const WindowFeatures& f, const RuleThresholds& t);

/// A labeled window reduced to what the rules need.
struct RuleSample {
  std::vector<double> speeds_mps;
  std::vector<double> intervals;
  Mode label = Mode::Walk;
};

RuleSample to_rule_sample(const data::SpeedWindow& window);

/// Candidate values per threshold, in RuleThresholds field order.
struct CandidateGrid {
  std::array<std::vector<double>, 7> values;

  /// {0.8, 0.9, 1.0, 1.1, 1.2} times each field of the centre.
  static CandidateGrid around(const RuleThresholds& centre);
  static CandidateGrid single(const RuleThresholds& t);
};

struct CalibrationResult {
  RuleThresholds thresholds;
  double macro_f1 = 0.0;
  std::size_t evaluated = 0;  // lattice points satisfying the ordering invariant
};

/// Exhaustive search over the lattice for the highest macro-F1 on the
/// samples. Among equal scores the point closest to the grid centre (sum of
/// index distances) wins, then the lexicographically smallest threshold
/// vector. Missing classes only produce a warning.
CalibrationResult calibrate(std::span<const RuleSample> samples, const CandidateGrid& grid);

std::vector<Mode> classify_all(std::span<const RuleSample> samples, const RuleThresholds& t);

}  // namespace speedmode::rules
