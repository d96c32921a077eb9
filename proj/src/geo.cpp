#include "speedmode/geo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "speedmode/error.hpp"

namespace speedmode::geo {
namespace {

constexpr double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }

}  // namespace

GeoCoordinate::GeoCoordinate(double latitude, double longitude)
    : latitude_(latitude), longitude_(longitude) {
  if (!std::isfinite(latitude) || !std::isfinite(longitude))
    throw std::invalid_argument("coordinate must be finite");
  if (latitude < -90.0 || latitude > 90.0)
    throw std::invalid_argument("latitude out of range: " + std::to_string(latitude));
  if (longitude < -180.0 || longitude > 180.0)
    throw std::invalid_argument("longitude out of range: " + std::to_string(longitude));
}

double haversine_distance(const GeoCoordinate& a, const GeoCoordinate& b) {
  const double phi1 = deg2rad(a.latitude());
  const double phi2 = deg2rad(b.latitude());
  const double dphi = phi2 - phi1;
  const double dlambda = deg2rad(b.longitude() - a.longitude());
  const double s1 = std::sin(dphi / 2.0);
  const double s2 = std::sin(dlambda / 2.0);
  double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  h = std::min(1.0, std::max(0.0, h));
  return 2.0 * kEarthRadiusMeters * std::asin(std::sqrt(h));
}

SpeedDerivation derive_speeds(std::span<const TimedPoint> trip) {
  if (trip.size() < 2) throw DataError("derive_speeds: trip needs at least two points");
  SpeedDerivation out;
  out.samples.reserve(trip.size() - 1);
  for (std::size_t i = 0; i + 1 < trip.size(); ++i) {
    const auto& p = trip[i];
    const auto& q = trip[i + 1];
    if (!std::isfinite(p.timestamp) || !std::isfinite(q.timestamp))
      throw DataError("derive_speeds: non-finite timestamp");
    const double dt = q.timestamp - p.timestamp;
    if (dt <= 0.0) {
      ++out.dropped_nonpositive_dt;
      continue;
    }
    const double d = haversine_distance(p.coordinate, q.coordinate);
    out.samples.push_back({d / dt * kMpsToKmh, q.timestamp, dt});
  }
  return out;
}

ThresholdTable ThresholdTable::defaults() {
  // Bike, Bus, Car, Train, Walk
  return ThresholdTable({{{0.5, 50.0}, {1.0, 120.0}, {3.0, 180.0}, {3.0, 350.0}, {0.1, 15.0}}});
}

ThresholdTable::ThresholdTable(std::array<Bounds, kNumModes> bounds) : bounds_(bounds) {
  for (std::size_t i = 0; i < kNumModes; ++i) {
    const auto& b = bounds_[i];
    if (!(b.min_kmh >= 0.0 && b.min_kmh < b.max_kmh))
      throw std::invalid_argument("threshold table requires 0 <= min < max for " +
                                  std::string(mode_name(static_cast<Mode>(i))));
  }
}

std::vector<SpeedSample> filter_speed_bounds(std::span<const SpeedSample> samples, Mode mode,
                                             const ThresholdTable& table) {
  std::vector<SpeedSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    if (table.admits(mode, s.speed_kmh)) out.push_back(s);
  }
  return out;
}

std::vector<double> compute_accelerations(std::span<const SpeedSample> samples) {
  std::vector<double> out;
  if (samples.size() < 2) return out;
  out.reserve(samples.size() - 1);
  for (std::size_t i = 0; i + 1 < samples.size(); ++i) {
    const double dv = (samples[i + 1].speed_kmh - samples[i].speed_kmh) / kMpsToKmh;
    out.push_back(dv / samples[i + 1].interval);
  }
  return out;
}

}  // namespace speedmode::geo
