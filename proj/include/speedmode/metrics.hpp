#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "speedmode/modes.hpp"

namespace speedmode::eval {

/// Rows are true classes, columns predicted classes, indexed by ordinal.
struct ConfusionMatrix {
  std::array<std::array<std::uint64_t, kNumModes>, kNumModes> counts{};

  std::uint64_t total() const;
  std::uint64_t trace() const;
  std::uint64_t row_sum(std::size_t c) const;
  std::uint64_t col_sum(std::size_t c) const;
  bool operator==(const ConfusionMatrix&) const = default;
};

/// Throws std::invalid_argument when lengths differ.
ConfusionMatrix confusion_matrix(std::span<const Mode> truth, std::span<const Mode> predictions);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;
};

struct Averages {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct MetricsReport {
  ConfusionMatrix confusion;
  double accuracy = 0.0;
  std::array<ClassMetrics, kNumModes> per_class;
  /// Unweighted mean over classes that occur in the truth or the
  /// predictions; absent classes are skipped.
  Averages macro;
  /// Mean weighted by true-class support.
  Averages weighted;
  /// Pooled counts over all classes.
  Averages micro;
};

/// Zero denominators give 0, never NaN.
MetricsReport metrics_from_confusion(const ConfusionMatrix& cm);

struct CvSummary {
  std::vector<double> values;
  double mean = 0.0;
  double stddev = 0.0;  // population (divisor k)
};

CvSummary cv_summary(std::span<const double> fold_values);

/// log2(n_states); n_states must be positive.
double privacy_entropy(double n_states);

struct PrivacyReport {
  double area_km2 = 0.0;
  double resolution_m = 0.0;
  double spatial_states = 0.0;
  double location_bits = 0.0;
  double speed_states = 0.0;
  double speed_bits = 0.0;
  double ratio = 0.0;  // location_bits / speed_bits
};

/// Spatial states = area / resolution^2.
PrivacyReport location_speed_report(double area_km2, double resolution_m, double speed_states);

nlohmann::json to_json(const MetricsReport& report);
nlohmann::json to_json(const CvSummary& summary);
nlohmann::json to_json(const PrivacyReport& report);
/// One row per class plus macro/weighted rows:
/// class,precision,recall,f1,support
std::string per_class_csv(const MetricsReport& report);
/// Header row of predicted names, one row per true class.
std::string confusion_csv(const ConfusionMatrix& cm);

}  // namespace speedmode::eval
