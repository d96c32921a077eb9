#include "speedmode/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

#include "speedmode/util.hpp"

namespace speedmode::data {
namespace {

// Generated speeds keep this relative distance from the table bounds so
// that recomputation from coordinates cannot cross them.
constexpr double kBoundMargin = 0.02;

std::string synth_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "synth_%06zu", i);
  return buf;
}

std::vector<geo::SpeedSample> generate(const SynthSpec& spec, Mode mode, Rng& rng) {
  const auto& m = spec.modes[static_cast<std::size_t>(ordinal(mode))];
  const auto& b = spec.table.bounds(mode);
  const double lo = b.min_kmh * (1.0 + kBoundMargin) + 0.01;
  const double hi = b.max_kmh * (1.0 - kBoundMargin);
  const double mean = m.mean_kmh * spec.speed_scale;
  const double sd = m.stddev_kmh * spec.speed_scale;
  const double innovation = sd * std::sqrt(1.0 - m.persistence * m.persistence);

  const std::size_t n =
      spec.min_length + static_cast<std::size_t>(rng.below(spec.max_length - spec.min_length + 1));
  const double dt = spec.intervals[static_cast<std::size_t>(rng.below(spec.intervals.size()))];
  std::vector<geo::SpeedSample> out;
  out.reserve(n);
  double deviation = rng.normal(0.0, sd);
  std::size_t stop_left = 0;
  double t = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    deviation = m.persistence * deviation + rng.normal(0.0, innovation);
    double v;
    if (stop_left > 0) {
      --stop_left;
      v = rng.uniform(m.stop_lo_kmh, m.stop_hi_kmh) * spec.speed_scale;
    } else if (m.stop_probability > 0.0 && rng.uniform() < m.stop_probability) {
      stop_left = m.stop_min + static_cast<std::size_t>(rng.below(m.stop_max - m.stop_min + 1)) - 1;
      v = rng.uniform(m.stop_lo_kmh, m.stop_hi_kmh) * spec.speed_scale;
    } else {
      v = mean + deviation;
    }
    t += dt;
    out.push_back({std::clamp(v, lo, hi), t, dt});
  }
  return out;
}

}  // namespace

SynthSpec SynthSpec::defaults() {
  SynthSpec s;
  auto& m = s.modes;
  m[ordinal(Mode::Walk)] = {5.0, 1.2, 0.8, 0.01, 3, 15, 0.2, 1.0};
  m[ordinal(Mode::Bike)] = {15.0, 3.0, 0.85, 0.01, 3, 10, 0.6, 2.0};
  m[ordinal(Mode::Bus)] = {28.0, 6.0, 0.9, 0.04, 5, 20, 1.05, 1.7};
  m[ordinal(Mode::Car)] = {45.0, 12.0, 0.9, 0.01, 3, 10, 3.1, 5.0};
  m[ordinal(Mode::Train)] = {90.0, 8.0, 0.97, 0.005, 5, 20, 3.1, 10.0};
  return s;
}

std::vector<SpeedTrip> synth_dataset(const SynthSpec& spec, std::size_t n_trips,
                                     std::uint64_t seed) {
  if (spec.min_length < 1 || spec.max_length < spec.min_length || spec.intervals.empty())
    throw std::invalid_argument("synth: invalid trip length range or interval set");
  std::vector<SpeedTrip> trips;
  trips.reserve(n_trips);
  for (std::size_t i = 0; i < n_trips; ++i) {
    Rng rng(derive_seed(derive_seed(seed, "synth"), static_cast<std::uint64_t>(i)));
    const Mode mode = kAllModes[i % kNumModes];
    trips.push_back({synth_id(i), mode, generate(spec, mode, rng)});
  }
  return trips;
}

std::vector<RawTrip> synth_raw_trips(const SynthSpec& spec, std::size_t n_trips,
                                     std::uint64_t seed) {
  const auto speed_trips = synth_dataset(spec, n_trips, seed);
  std::vector<RawTrip> out;
  out.reserve(speed_trips.size());
  constexpr double deg = 180.0 / std::numbers::pi;
  for (std::size_t i = 0; i < speed_trips.size(); ++i) {
    const auto& st = speed_trips[i];
    Rng rng(derive_seed(derive_seed(seed, "synth.path"), static_cast<std::uint64_t>(i)));
    double lat = 39.9 + rng.uniform(-0.1, 0.1);
    double lon = 116.4 + rng.uniform(-0.1, 0.1);
    double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
    double t = 1.2e9 + 1e4 * static_cast<double>(i);
    RawTrip raw{st.trip_id, std::string(mode_name(st.mode)), {}};
    raw.points.push_back({geo::GeoCoordinate(lat, lon), t});
    for (const auto& s : st.samples) {
      heading += rng.normal(0.0, 0.05);
      // Angular step along the great circle from the current fix.
      const double delta = s.speed_kmh / geo::kMpsToKmh * s.interval / geo::kEarthRadiusMeters;
      const double phi1 = lat / deg, lam1 = lon / deg;
      const double phi2 = std::asin(std::sin(phi1) * std::cos(delta) +
                                    std::cos(phi1) * std::sin(delta) * std::cos(heading));
      const double lam2 = lam1 + std::atan2(std::sin(heading) * std::sin(delta) * std::cos(phi1),
                                            std::cos(delta) - std::sin(phi1) * std::sin(phi2));
      lat = phi2 * deg;
      lon = lam2 * deg;
      t += s.interval;
      raw.points.push_back({geo::GeoCoordinate(lat, lon), t});
    }
    out.push_back(std::move(raw));
  }
  return out;
}

}  // namespace speedmode::data
