#include "speedmode/metrics.hpp"

#include <cmath>
#include <stdexcept>

#include "speedmode/util.hpp"

namespace speedmode::eval {
namespace {

double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }
double harmonic(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

}  // namespace

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t n = 0;
  for (const auto& row : counts)
    for (auto v : row) n += v;
  return n;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t n = 0;
  for (std::size_t c = 0; c < kNumModes; ++c) n += counts[c][c];
  return n;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t c) const {
  std::uint64_t n = 0;
  for (auto v : counts.at(c)) n += v;
  return n;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t c) const {
  std::uint64_t n = 0;
  for (const auto& row : counts) n += row.at(c);
  return n;
}

ConfusionMatrix confusion_matrix(std::span<const Mode> truth, std::span<const Mode> predictions) {
  if (truth.size() != predictions.size())
    throw std::invalid_argument("confusion_matrix: " + std::to_string(truth.size()) +
                                " labels vs " + std::to_string(predictions.size()) +
                                " predictions");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < truth.size(); ++i)
    ++cm.counts[static_cast<std::size_t>(ordinal(truth[i]))]
               [static_cast<std::size_t>(ordinal(predictions[i]))];
  return cm;
}

MetricsReport metrics_from_confusion(const ConfusionMatrix& cm) {
  MetricsReport r;
  r.confusion = cm;
  const double total = static_cast<double>(cm.total());
  r.accuracy = ratio(static_cast<double>(cm.trace()), total);
  std::size_t present = 0;
  for (std::size_t c = 0; c < kNumModes; ++c) {
    auto& m = r.per_class[c];
    const double tp = static_cast<double>(cm.counts[c][c]);
    const double rows = static_cast<double>(cm.row_sum(c));
    const double cols = static_cast<double>(cm.col_sum(c));
    m.support = cm.row_sum(c);
    m.precision = ratio(tp, cols);
    m.recall = ratio(tp, rows);
    m.f1 = harmonic(m.precision, m.recall);
    if (rows > 0.0 || cols > 0.0) {
      ++present;
      r.macro.precision += m.precision;
      r.macro.recall += m.recall;
      r.macro.f1 += m.f1;
    }
    r.weighted.precision += rows * m.precision;
    r.weighted.f1 += rows * m.f1;
  }
  r.weighted.precision = ratio(r.weighted.precision, total);
  r.weighted.f1 = ratio(r.weighted.f1, total);
  // support_c * recall_c is tp_c, so the weighted recall is summed from
  // integer counts and equals accuracy exactly.
  r.weighted.recall = r.accuracy;
  if (present > 0) {
    r.macro.precision /= static_cast<double>(present);
    r.macro.recall /= static_cast<double>(present);
    r.macro.f1 /= static_cast<double>(present);
  }
  // Single-label classification: pooled TP = trace, pooled FP = FN = total - trace.
  r.micro.precision = r.accuracy;
  r.micro.recall = r.accuracy;
  r.micro.f1 = r.accuracy;
  return r;
}

CvSummary cv_summary(std::span<const double> fold_values) {
  CvSummary s;
  s.values.assign(fold_values.begin(), fold_values.end());
  if (s.values.empty()) return s;
  const double k = static_cast<double>(s.values.size());
  for (double v : s.values) s.mean += v;
  s.mean /= k;
  // One correction pass removes the rounding of the first sum, so identical
  // folds give their own value back and a zero spread.
  double residual = 0.0;
  for (double v : s.values) residual += v - s.mean;
  s.mean += residual / k;
  double sq = 0.0;
  for (double v : s.values) sq += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(sq / k);
  return s;
}

double privacy_entropy(double n_states) {
  if (!(n_states >= 1.0) || !std::isfinite(n_states))
    throw std::invalid_argument("privacy_entropy: state count must be >= 1");
  return std::log2(n_states);
}

PrivacyReport location_speed_report(double area_km2, double resolution_m, double speed_states) {
  if (!(area_km2 > 0.0) || !(resolution_m > 0.0))
    throw std::invalid_argument("location_speed_report: area and resolution must be positive");
  PrivacyReport r;
  r.area_km2 = area_km2;
  r.resolution_m = resolution_m;
  r.spatial_states = area_km2 * 1e6 / (resolution_m * resolution_m);
  r.location_bits = privacy_entropy(r.spatial_states);
  r.speed_states = speed_states;
  r.speed_bits = privacy_entropy(speed_states);
  r.ratio = r.speed_bits > 0.0 ? r.location_bits / r.speed_bits : 0.0;
  return r;
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json per_class = nlohmann::json::object();
  for (auto m : kAllModes) {
    const auto& c = r.per_class[static_cast<std::size_t>(ordinal(m))];
    per_class[std::string(mode_name(m))] = {
        {"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}, {"support", c.support}};
  }
  auto avg = [](const Averages& a) {
    return nlohmann::json{{"precision", a.precision}, {"recall", a.recall}, {"f1", a.f1}};
  };
  nlohmann::json labels = nlohmann::json::array();
  for (auto m : kAllModes) labels.push_back(mode_name(m));
  return {{"accuracy", r.accuracy},
          {"labels", labels},
          {"confusion", r.confusion.counts},
          {"per_class", per_class},
          {"macro", avg(r.macro)},
          {"weighted", avg(r.weighted)},
          {"micro", avg(r.micro)},
          {"total", r.confusion.total()}};
}

nlohmann::json to_json(const CvSummary& s) {
  return {{"values", s.values}, {"mean", s.mean}, {"std", s.stddev}};
}

nlohmann::json to_json(const PrivacyReport& r) {
  return {{"area_km2", r.area_km2},         {"resolution_m", r.resolution_m},
          {"spatial_states", r.spatial_states}, {"location_bits", r.location_bits},
          {"speed_states", r.speed_states}, {"speed_bits", r.speed_bits},
          {"ratio", r.ratio}};
}

std::string per_class_csv(const MetricsReport& r) {
  std::string out = "class,precision,recall,f1,support\n";
  for (auto m : kAllModes) {
    const auto& c = r.per_class[static_cast<std::size_t>(ordinal(m))];
    out += std::string(mode_name(m)) + "," + format_double(c.precision) + "," +
           format_double(c.recall) + "," + format_double(c.f1) + "," + std::to_string(c.support) +
           "\n";
  }
  const auto total = std::to_string(r.confusion.total());
  out += "macro," + format_double(r.macro.precision) + "," + format_double(r.macro.recall) + "," +
         format_double(r.macro.f1) + "," + total + "\n";
  out += "weighted," + format_double(r.weighted.precision) + "," +
         format_double(r.weighted.recall) + "," + format_double(r.weighted.f1) + "," + total + "\n";
  return out;
}

std::string confusion_csv(const ConfusionMatrix& cm) {
  std::string out = "true\\pred";
  for (auto m : kAllModes) out += "," + std::string(mode_name(m));
  out += "\n";
  for (auto t : kAllModes) {
    out += mode_name(t);
    for (auto p : kAllModes)
      out += "," + std::to_string(cm.counts[static_cast<std::size_t>(ordinal(t))]
                                           [static_cast<std::size_t>(ordinal(p))]);
    out += "\n";
  }
  return out;
}

}  // namespace speedmode::eval
