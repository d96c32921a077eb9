#include "speedmode/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include "speedmode/error.hpp"
#include "speedmode/util.hpp"

namespace speedmode::data {

std::vector<std::uint8_t> SpeedWindow::mask() const {
  std::vector<std::uint8_t> m(speeds.size(), 0);
  std::fill_n(m.begin(), std::min(valid_count, m.size()), std::uint8_t{1});
  return m;
}

bool quality_filter(const RawTrip& trip) { return trip.points.size() >= 3; }

std::vector<WindowSpan> window_spans(std::size_t n, std::size_t T, std::size_t stride,
                                     std::size_t min_tail) {
  if (T == 0) throw std::invalid_argument("window length must be >= 1");
  if (stride == 0 || stride > T) throw std::invalid_argument("stride must be in [1, T]");
  std::vector<WindowSpan> out;
  if (n == 0) return out;
  if (n < T) {
    out.push_back({0, n});
    return out;
  }
  std::size_t start = 0;
  for (; start + T <= n; start += stride) out.push_back({start, T});
  const std::size_t covered = out.back().start + T;
  const std::size_t tail = n - covered;
  if (tail > 0 && tail >= min_tail) out.push_back({covered, tail});
  return out;
}

namespace {

SpeedWindow make_window(std::span<const double> speeds, std::span<const double> intervals,
                        const WindowSpan& span, std::size_t T) {
  SpeedWindow w;
  w.start = span.start;
  w.valid_count = span.valid;
  w.speeds.assign(T, 0.0f);
  for (std::size_t t = 0; t < span.valid; ++t)
    w.speeds[t] = static_cast<float>(speeds[span.start + t]);
  if (!intervals.empty())
    w.intervals.assign(intervals.begin() + static_cast<std::ptrdiff_t>(span.start),
                       intervals.begin() + static_cast<std::ptrdiff_t>(span.start + span.valid));
  return w;
}

}  // namespace

std::vector<SpeedWindow> segment_windows(std::span<const double> speeds_kmh, std::size_t T,
                                         std::size_t stride, std::size_t min_tail) {
  std::vector<SpeedWindow> out;
  for (const auto& span : window_spans(speeds_kmh.size(), T, stride, min_tail)) {
    out.push_back(make_window(speeds_kmh, {}, span, T));
    out.back().index = out.size() - 1;
  }
  return out;
}

std::vector<SpeedWindow> segment_windows(const SpeedTrip& trip, std::size_t T,
                                         std::size_t stride, std::size_t min_tail) {
  std::vector<double> speeds, intervals;
  speeds.reserve(trip.samples.size());
  intervals.reserve(trip.samples.size());
  for (const auto& s : trip.samples) {
    speeds.push_back(s.speed_kmh);
    intervals.push_back(s.interval);
  }
  std::vector<SpeedWindow> out;
  for (const auto& span : window_spans(speeds.size(), T, stride, min_tail)) {
    auto w = make_window(speeds, intervals, span, T);
    w.index = out.size();
    w.trip_id = trip.trip_id;
    w.label = trip.mode;
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<SpeedWindow> segment_all(std::span<const SpeedTrip> trips, std::size_t T,
                                     std::size_t stride, std::size_t min_tail) {
  std::vector<const SpeedTrip*> order;
  for (const auto& t : trips) order.push_back(&t);
  std::stable_sort(order.begin(), order.end(),
                   [](const SpeedTrip* a, const SpeedTrip* b) { return a->trip_id < b->trip_id; });
  std::vector<SpeedWindow> out;
  for (const auto* t : order) {
    auto ws = segment_windows(*t, T, stride, min_tail);
    std::move(ws.begin(), ws.end(), std::back_inserter(out));
  }
  return out;
}

PreprocessResult preprocess(std::span<const RawTrip> trips, const geo::ThresholdTable& table) {
  PreprocessResult result;
  auto& audit = result.audit;
  LabelAudit labels;
  audit.trips_in = trips.size();
  for (const auto& raw : trips) {
    auto mode = labels.harmonize(raw.raw_mode);
    if (!mode) continue;
    if (!quality_filter(raw)) {
      ++audit.qc_drops;
      continue;
    }
    auto derived = geo::derive_speeds(raw.points);
    audit.zero_dt_drops += derived.dropped_nonpositive_dt;
    auto kept = geo::filter_speed_bounds(derived.samples, *mode, table);
    audit.threshold_sample_drops += derived.samples.size() - kept.size();
    if (kept.size() < 2) {
      ++audit.qc_drops;
      continue;
    }
    result.trips.push_back({raw.trip_id, *mode, std::move(kept)});
  }
  audit.label_drops = labels.total_dropped();
  audit.label_drops_by_label = labels.dropped();
  audit.trips_out = result.trips.size();
  return result;
}

namespace {

std::vector<std::string> sorted_unique(std::vector<std::string> ids) {
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

}  // namespace

DatasetSplit split_by_trip(std::vector<std::string> trip_ids, SplitRatios ratios,
                           std::uint64_t seed) {
  const std::array<double, 3> r = {ratios.train, ratios.val, ratios.test};
  for (double x : r)
    if (!(x > 0.0)) throw std::invalid_argument("split ratios must be positive");
  if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9)
    throw std::invalid_argument("split ratios must sum to 1");

  auto ids = sorted_unique(std::move(trip_ids));
  const std::size_t n = ids.size();
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(ids.begin(), ids.end());

  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = r[i] * static_cast<double>(n);
    sizes[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    frac[i] = exact - static_cast<double>(sizes[i]);
    assigned += sizes[i];
  }
  std::array<std::size_t, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[order[k % 3]];

  if (sizes[0] == 0 || sizes[1] == 0 || sizes[2] == 0)
    throw DataError("split_by_trip: " + std::to_string(n) +
                    " trips cannot fill every partition with the given ratios");

  DatasetSplit split;
  auto it = ids.begin();
  split.train.assign(it, it + static_cast<std::ptrdiff_t>(sizes[0]));
  it += static_cast<std::ptrdiff_t>(sizes[0]);
  split.val.assign(it, it + static_cast<std::ptrdiff_t>(sizes[1]));
  it += static_cast<std::ptrdiff_t>(sizes[1]);
  split.test.assign(it, ids.end());
  return split;
}

std::vector<std::vector<std::string>> kfold_by_trip(std::vector<std::string> trip_ids,
                                                    std::size_t k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("kfold_by_trip: k must be >= 2");
  auto ids = sorted_unique(std::move(trip_ids));
  if (k > ids.size())
    throw DataError("kfold_by_trip: k=" + std::to_string(k) + " exceeds trip count " +
                    std::to_string(ids.size()));
  Rng rng(derive_seed(seed, "kfold"));
  rng.shuffle(ids.begin(), ids.end());
  std::vector<std::vector<std::string>> folds(k);
  const std::size_t base = ids.size() / k;
  const std::size_t extra = ids.size() % k;
  auto it = ids.begin();
  for (std::size_t f = 0; f < k; ++f) {
    const auto len = static_cast<std::ptrdiff_t>(base + (f < extra ? 1 : 0));
    folds[f].assign(it, it + len);
    it += len;
  }
  return folds;
}

std::vector<std::string> unique_trip_ids(std::span<const SpeedWindow> windows) {
  std::vector<std::string> ids;
  ids.reserve(windows.size());
  for (const auto& w : windows) ids.push_back(w.trip_id);
  return sorted_unique(std::move(ids));
}

std::vector<SpeedWindow> select_trips(std::span<const SpeedWindow> windows,
                                      std::span<const std::string> trip_ids) {
  std::unordered_set<std::string> keep(trip_ids.begin(), trip_ids.end());
  std::vector<SpeedWindow> out;
  for (const auto& w : windows)
    if (keep.contains(w.trip_id)) out.push_back(w);
  return out;
}

SamplingProfile sampling_profile(std::span<const double> timestamps, double bin_width) {
  if (!(bin_width > 0.0)) throw std::invalid_argument("bin width must be positive");
  SamplingProfile p;
  p.bin_width = bin_width;
  if (timestamps.size() < 2) return p;
  for (std::size_t i = 0; i + 1 < timestamps.size(); ++i)
    p.intervals.push_back(timestamps[i + 1] - timestamps[i]);
  std::vector<double> sorted = p.intervals;
  std::sort(sorted.begin(), sorted.end());
  p.median = percentile_sorted(sorted, 0.5);
  p.p5 = percentile_sorted(sorted, 0.05);
  p.p95 = percentile_sorted(sorted, 0.95);
  for (double dt : p.intervals) {
    const auto bin = static_cast<std::size_t>(std::max(0.0, std::floor(dt / bin_width)));
    if (bin >= p.histogram.size()) p.histogram.resize(bin + 1, 0);
    ++p.histogram[bin];
  }
  return p;
}

}  // namespace speedmode::data
