#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "speedmode/modes.hpp"

namespace speedmode::geo {

inline constexpr double kEarthRadiusMeters = 6'371'000.0;
inline constexpr double kMpsToKmh = 3.6;

/// Latitude/longitude in degrees; ranges are checked on construction.
class GeoCoordinate {
 public:
  GeoCoordinate(double latitude, double longitude);

  double latitude() const { return latitude_; }
  double longitude() const { return longitude_; }

 private:
  double latitude_;
  double longitude_;
};

struct TimedPoint {
  GeoCoordinate coordinate;
  double timestamp;  // seconds since the Unix epoch
};

/// Speed between two consecutive fixes, stamped with the later fix's time.
struct SpeedSample {
  double speed_kmh;
  double timestamp;
  double interval;  // seconds, > 0
};

/// Great-circle distance in meters (haversine on a 6,371 km sphere).
double haversine_distance(const GeoCoordinate& a, const GeoCoordinate& b);

struct SpeedDerivation {
  std::vector<SpeedSample> samples;
  /// Pairs skipped because their time difference was zero or negative.
  std::size_t dropped_nonpositive_dt = 0;
};

/// One sample per consecutive pair of points, v = d / dt * 3.6.
/// Throws DataError for fewer than two points.
SpeedDerivation derive_speeds(std::span<const TimedPoint> trip);

/// Per-mode plausible speed range in km/h, bounds inclusive.
class ThresholdTable {
 public:
  struct Bounds {
    double min_kmh;
    double max_kmh;
  };

  /// The published per-mode table.
  static ThresholdTable defaults();

  explicit ThresholdTable(std::array<Bounds, kNumModes> bounds);

  const Bounds& bounds(Mode m) const { return bounds_[static_cast<std::size_t>(ordinal(m))]; }
  bool admits(Mode m, double speed_kmh) const {
    const auto& b = bounds(m);
    return speed_kmh >= b.min_kmh && speed_kmh <= b.max_kmh;
  }

 private:
  std::array<Bounds, kNumModes> bounds_;
};

std::vector<SpeedSample> filter_speed_bounds(std::span<const SpeedSample> samples, Mode mode,
                                             const ThresholdTable& table);

/// Forward differences a_i = (v_{i+1} - v_i) / dt_{i+1} in m/s^2, where
/// dt_{i+1} is the interval attached to sample i+1. Fewer than two samples
/// yields an empty result.
std::vector<double> compute_accelerations(std::span<const SpeedSample> samples);

}  // namespace speedmode::geo
