#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "speedmode/dataset.hpp"
#include "speedmode/geo.hpp"

namespace speedmode::data {

/// AR(1) speed process around a mean with occasional stop episodes.
struct ModeDynamics {
  double mean_kmh = 0.0;
  double stddev_kmh = 0.0;  // stationary standard deviation
  double persistence = 0.9;  // AR(1) coefficient
  double stop_probability = 0.0;  // per sample, chance a stop episode starts
  std::size_t stop_min = 1;
  std::size_t stop_max = 1;
  double stop_lo_kmh = 0.0;
  double stop_hi_kmh = 0.0;
};

struct SynthSpec {
  std::array<ModeDynamics, kNumModes> modes;  // indexed by ordinal
  std::size_t min_length = 60;                // speed samples per trip
  std::size_t max_length = 300;
  std::vector<double> intervals{1.0, 2.0, 5.0};  // per-trip sampling interval (s)
  /// Multiplies every mean and spread; < 1 models a slower target domain.
  double speed_scale = 1.0;
  geo::ThresholdTable table = geo::ThresholdTable::defaults();

  static SynthSpec defaults();
};

/// Trip i gets mode ordinal i % 5, so n trips are balanced to within one per
/// mode. Speeds stay strictly inside the table bounds of their mode.
/// Trip ids are "synth_<i>" zero-padded to sort in generation order.
std::vector<SpeedTrip> synth_dataset(const SynthSpec& spec, std::size_t n_trips,
                                     std::uint64_t seed);

/// The same trips as point sequences: each speed sample is integrated into
/// a step along a slowly turning heading, so derive_speeds recovers the
/// generated speeds up to rounding.
std::vector<RawTrip> synth_raw_trips(const SynthSpec& spec, std::size_t n_trips,
                                     std::uint64_t seed);

}  // namespace speedmode::data
