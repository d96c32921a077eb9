#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "speedmode/geo.hpp"
#include "speedmode/modes.hpp"

namespace speedmode::data {

/// A labeled trip as ingested, before harmonization.
struct RawTrip {
  std::string trip_id;
  std::string raw_mode;
  std::vector<geo::TimedPoint> points;  // time-ordered
};

/// A harmonized trip reduced to its speed series.
struct SpeedTrip {
  std::string trip_id;
  Mode mode;
  std::vector<geo::SpeedSample> samples;
};

inline constexpr std::size_t kDefaultWindow = 200;
inline constexpr std::size_t kDefaultStride = 50;
inline constexpr std::size_t kDefaultMinTail = 10;

/// Fixed-length model input: the first valid_count entries are real speeds
/// (km/h), the rest are zero padding.
struct SpeedWindow {
  std::string trip_id;
  Mode label = Mode::Bike;
  std::size_t start = 0;        // index of the first sample within the trip
  std::size_t index = 0;        // position among the trip's windows
  std::size_t valid_count = 0;  // in [1, length()]
  std::vector<float> speeds;
  /// Sampling intervals (s) of the valid samples; empty when unknown
  /// (e.g. windows read back from an archive).
  std::vector<double> intervals;

  std::size_t length() const { return speeds.size(); }
  bool valid(std::size_t t) const { return t < valid_count; }
  std::vector<std::uint8_t> mask() const;
};

/// Drop iff the trip has fewer than three points.
bool quality_filter(const RawTrip& trip);

struct WindowSpan {
  std::size_t start;
  std::size_t valid;
  bool operator==(const WindowSpan&) const = default;
};

/// Window placement for a series of n samples: full windows at 0, stride,
/// 2*stride, ... while start + T <= n; then one zero-padded window over the
/// uncovered tail if it holds at least min_tail samples. A series shorter
/// than T yields exactly one padded window. Empty series yield none.
std::vector<WindowSpan> window_spans(std::size_t n, std::size_t T, std::size_t stride,
                                     std::size_t min_tail);

std::vector<SpeedWindow> segment_windows(const SpeedTrip& trip, std::size_t T = kDefaultWindow,
                                         std::size_t stride = kDefaultStride,
                                         std::size_t min_tail = kDefaultMinTail);
std::vector<SpeedWindow> segment_windows(std::span<const double> speeds_kmh, std::size_t T,
                                         std::size_t stride, std::size_t min_tail);

/// Segments every trip; output ordered by trip_id, then window start.
std::vector<SpeedWindow> segment_all(std::span<const SpeedTrip> trips, std::size_t T,
                                     std::size_t stride, std::size_t min_tail);

struct PreprocessAudit {
  std::size_t trips_in = 0;
  std::size_t trips_out = 0;
  std::size_t label_drops = 0;
  std::map<std::string, std::size_t> label_drops_by_label;
  std::size_t qc_drops = 0;
  std::size_t threshold_sample_drops = 0;
  std::size_t zero_dt_drops = 0;
};

struct PreprocessResult {
  std::vector<SpeedTrip> trips;
  PreprocessAudit audit;
};

/// Harmonize labels, apply trip QC, derive speeds, remove out-of-range
/// samples, then re-apply QC on what survived (a trip must keep at least
/// two speed samples, i.e. the equivalent of three points).
PreprocessResult preprocess(std::span<const RawTrip> trips,
                            const geo::ThresholdTable& table = geo::ThresholdTable::defaults());

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

/// Trip-granular split. Trip ids are sorted and shuffled with the seed;
/// partition sizes use largest-remainder rounding. Throws DataError when a
/// partition would be empty.
DatasetSplit split_by_trip(std::vector<std::string> trip_ids, SplitRatios ratios,
                           std::uint64_t seed);

/// k trip-disjoint folds whose sizes differ by at most one.
std::vector<std::vector<std::string>> kfold_by_trip(std::vector<std::string> trip_ids,
                                                    std::size_t k, std::uint64_t seed);

std::vector<std::string> unique_trip_ids(std::span<const SpeedWindow> windows);
std::vector<SpeedWindow> select_trips(std::span<const SpeedWindow> windows,
                                      std::span<const std::string> trip_ids);

struct SamplingProfile {
  std::vector<double> intervals;
  double median = 0.0;
  double p5 = 0.0;
  double p95 = 0.0;
  double bin_width = 1.0;
  std::vector<std::size_t> histogram;  // bin i covers [i*w, (i+1)*w)

  bool empty() const { return intervals.empty(); }
};

/// Statistics of consecutive timestamp differences. Fewer than two
/// timestamps gives an empty profile.
SamplingProfile sampling_profile(std::span<const double> timestamps, double bin_width = 1.0);

}  // namespace speedmode::data
