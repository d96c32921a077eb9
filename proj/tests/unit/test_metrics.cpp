#include <algorithm>
#include <cmath>
#include <random>

#include "speedmode/metrics.hpp"
#include "unit/support.hpp"

using namespace speedmode;
using namespace speedmode::eval;

namespace {

constexpr auto W = Mode::Walk, B = Mode::Bus, C = Mode::Car, K = Mode::Bike, R = Mode::Train;

std::size_t ix(Mode m) { return static_cast<std::size_t>(ordinal(m)); }

std::vector<Mode> random_labels(std::size_t n, std::mt19937_64& rng) {
  std::vector<Mode> v(n);
  for (auto& m : v) m = kAllModes[rng() % kNumModes];
  return v;
}

}  // namespace

TEST_CASE("hand-counted confusion matrix") {
  const std::vector<Mode> truth{W, W, B, C, C}, pred{W, K, B, C, W};
  const auto cm = confusion_matrix(truth, pred);
  CHECK(cm.counts[ix(W)][ix(W)] == 1);
  CHECK(cm.counts[ix(W)][ix(K)] == 1);
  CHECK(cm.counts[ix(B)][ix(B)] == 1);
  CHECK(cm.counts[ix(C)][ix(C)] == 1);
  CHECK(cm.counts[ix(C)][ix(W)] == 1);
  CHECK(cm.total() == 5);
  CHECK(cm.trace() == 3);
  const auto r = metrics_from_confusion(cm);
  CHECK(r.accuracy == 3.0 / 5.0);
  // Walk: tp 1, predicted twice, true twice.
  CHECK(r.per_class[ix(W)].precision == 0.5);
  CHECK(r.per_class[ix(W)].recall == 0.5);
  // Bike never occurs in the truth but is predicted once.
  CHECK(r.per_class[ix(K)].precision == 0.0);
  CHECK(r.per_class[ix(K)].support == 0);
  CHECK_THROWS_AS(confusion_matrix(truth, std::vector<Mode>{W}), std::invalid_argument);
}

TEST_CASE("degenerate matrices") {
  const auto empty = metrics_from_confusion(confusion_matrix({}, {}));
  CHECK(empty.confusion.total() == 0);
  CHECK(empty.accuracy == 0.0);
  CHECK(empty.macro.f1 == 0.0);

  std::vector<Mode> all;
  for (auto m : kAllModes)
    for (int i = 0; i < 3; ++i) all.push_back(m);
  const auto perfect = metrics_from_confusion(confusion_matrix(all, all));
  CHECK(perfect.confusion.trace() == all.size());
  CHECK(perfect.accuracy == 1.0);
  for (const auto& c : perfect.per_class) {
    CHECK(c.precision == 1.0);
    CHECK(c.recall == 1.0);
    CHECK(c.f1 == 1.0);
  }
  CHECK(perfect.macro.f1 == 1.0);
  CHECK(perfect.weighted.precision == 1.0);

  // Train neither occurs nor is predicted: zeros by convention, and it is
  // left out of the macro mean.
  const std::vector<Mode> t{W, B}, p{W, B};
  const auto r = metrics_from_confusion(confusion_matrix(t, p));
  CHECK(r.per_class[ix(R)].precision == 0.0);
  CHECK(r.per_class[ix(R)].recall == 0.0);
  CHECK(r.per_class[ix(R)].f1 == 0.0);
  CHECK(r.macro.f1 == 1.0);
}

TEST_CASE("three-class matrix against manual arithmetic") {
  ConfusionMatrix cm;
  // rows: Bike, Bus, Car
  cm.counts[0] = {5, 2, 1, 0, 0};
  cm.counts[1] = {1, 6, 3, 0, 0};
  cm.counts[2] = {0, 2, 8, 0, 0};
  const auto r = metrics_from_confusion(cm);
  const double p[] = {5.0 / 6.0, 6.0 / 10.0, 8.0 / 12.0};
  const double rc[] = {5.0 / 8.0, 6.0 / 10.0, 8.0 / 10.0};
  const double sup[] = {8, 10, 10};
  double macro_f1 = 0, weighted_f1 = 0, weighted_p = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    const double f1 = 2 * p[c] * rc[c] / (p[c] + rc[c]);
    CHECK(std::abs(r.per_class[c].precision - p[c]) <= 1e-12);
    CHECK(std::abs(r.per_class[c].recall - rc[c]) <= 1e-12);
    CHECK(std::abs(r.per_class[c].f1 - f1) <= 1e-12);
    CHECK(r.per_class[c].support == sup[c]);
    macro_f1 += f1 / 3;
    weighted_f1 += f1 * sup[c] / 28;
    weighted_p += p[c] * sup[c] / 28;
  }
  CHECK(std::abs(r.accuracy - 19.0 / 28.0) <= 1e-12);
  CHECK(std::abs(r.macro.f1 - macro_f1) <= 1e-12);
  CHECK(std::abs(r.weighted.f1 - weighted_f1) <= 1e-12);
  CHECK(std::abs(r.weighted.precision - weighted_p) <= 1e-12);
}

TEST_CASE("accuracy identities on random labelings") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 60;
    const auto truth = random_labels(n, rng), pred = random_labels(n, rng);
    const auto r = metrics_from_confusion(confusion_matrix(truth, pred));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) hits += truth[i] == pred[i] ? 1 : 0;
    CHECK(r.accuracy == static_cast<double>(hits) / static_cast<double>(n));
    CHECK(r.micro.recall == r.accuracy);
    CHECK(r.weighted.recall == r.accuracy);
    // Weighted recall recomputed the long way agrees to rounding.
    double wr = 0;
    for (const auto& c : r.per_class) wr += c.recall * static_cast<double>(c.support);
    CHECK(std::abs(wr / static_cast<double>(n) - r.accuracy) <= 1e-12);
    for (const auto& c : r.per_class) {
      CHECK(c.precision >= 0.0);
      CHECK(c.precision <= 1.0);
      CHECK(c.f1 <= 1.0);
    }

    // Shuffling the pairs changes nothing.
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Mode> t2, p2;
    for (auto i : order) {
      t2.push_back(truth[i]);
      p2.push_back(pred[i]);
    }
    CHECK(confusion_matrix(t2, p2) == r.confusion);
  }
}

TEST_CASE("cross-validation summary") {
  const std::vector<double> two{88, 92};
  const auto s = cv_summary(two);
  CHECK(s.mean == 90.0);
  CHECK(s.stddev == 2.0);
  const std::vector<double> same{0.7, 0.7, 0.7};
  CHECK(cv_summary(same).stddev == 0.0);

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.5, 1.0);
  std::vector<double> five(5);
  for (auto& v : five) v = u(rng);
  double mean = 0;
  for (double v : five) mean += v / 5;
  double var = 0;
  for (double v : five) var += (v - mean) * (v - mean) / 5;
  const auto r = cv_summary(five);
  CHECK(std::abs(r.mean - mean) <= 1e-12);
  CHECK(std::abs(r.stddev - std::sqrt(var)) <= 1e-12);
  CHECK(to_json(r)["values"].size() == 5);
}

TEST_CASE("privacy entropy") {
  CHECK(privacy_entropy(1) == 0.0);
  CHECK(privacy_entropy(1024) == 10.0);
  CHECK(std::abs(privacy_entropy(121) - 6.918863237274595) <= 1e-12);
  const auto r = location_speed_report(1000, 10, 121);
  CHECK(r.spatial_states == 1e7);
  CHECK(std::abs(r.location_bits - std::log2(1e7)) <= 1e-12);
  CHECK(std::abs(r.ratio - r.location_bits / r.speed_bits) <= 1e-12);
  CHECK_THROWS_AS(privacy_entropy(0), std::invalid_argument);
  CHECK_THROWS_AS(location_speed_report(-1, 10, 121), std::invalid_argument);
}

TEST_CASE("serializations") {
  const std::vector<Mode> truth{W, W, B, C, C}, pred{W, K, B, C, W};
  const auto r = metrics_from_confusion(confusion_matrix(truth, pred));
  const auto j = to_json(r);
  CHECK(j["accuracy"] == 0.6);
  CHECK(j["confusion"][ix(C)][ix(W)] == 1);
  CHECK(j["per_class"]["Walk"]["support"] == 2);
  const auto csv = per_class_csv(r);
  CHECK(csv.starts_with("class,precision,recall,f1,support\nBike,"));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 8);
  const auto conf = confusion_csv(r.confusion);
  CHECK(conf.starts_with("true\\pred,Bike,Bus,Car,Train,Walk\n"));
  CHECK(conf.find("\nCar,0,0,1,0,1\n") != std::string::npos);
}
