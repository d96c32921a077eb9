#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "speedmode/error.hpp"
#include "speedmode/geo.hpp"
#include "unit/support.hpp"

using namespace speedmode;
using geo::GeoCoordinate;
using geo::TimedPoint;

namespace {

// Central angle via the atan2 (Vincenty sphere) form, evaluated in long double.
double great_circle_oracle(double lat1, double lon1, double lat2, double lon2) {
  const long double k = std::numbers::pi_v<long double> / 180.0L;
  const long double p1 = lat1 * k, p2 = lat2 * k, dl = (lon2 - lon1) * k;
  const long double y = std::hypot(std::cos(p2) * std::sin(dl),
                                   std::cos(p1) * std::sin(p2) - std::sin(p1) * std::cos(p2) * std::cos(dl));
  const long double x = std::sin(p1) * std::sin(p2) + std::cos(p1) * std::cos(p2) * std::cos(dl);
  return static_cast<double>(geo::kEarthRadiusMeters * std::atan2(y, x));
}

// Point d meters due north of (lat, lon).
GeoCoordinate north_of(double lat, double lon, double d) {
  return {lat + d / geo::kEarthRadiusMeters * 180.0 / std::numbers::pi, lon};
}

}  // namespace

TEST_CASE("haversine reference distances") {
  GeoCoordinate beijing(39.9042, 116.4074);
  CHECK(geo::haversine_distance(beijing, beijing) == 0.0);
  CHECK(geo::haversine_distance({0, 0}, {0, 180}) ==
        doctest::Approx(std::numbers::pi * 6'371'000.0).epsilon(1e-12));
  const double d = geo::haversine_distance(beijing, {39.9142, 116.4074});
  CHECK(std::abs(d - great_circle_oracle(39.9042, 116.4074, 39.9142, 116.4074)) / d <= 1e-9);
}

TEST_CASE("haversine agrees with the great-circle oracle and is a metric") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> lat(-80, 80), lon(-180, 180);
  for (int i = 0; i < 500; ++i) {
    GeoCoordinate a(lat(rng), lon(rng)), b(lat(rng), lon(rng)), c(lat(rng), lon(rng));
    const double ab = geo::haversine_distance(a, b);
    const double oracle = great_circle_oracle(a.latitude(), a.longitude(), b.latitude(), b.longitude());
    CHECK(std::abs(ab - oracle) <= 1e-9 * std::max(oracle, 1.0) + 1e-6);
    CHECK(ab == doctest::Approx(geo::haversine_distance(b, a)).epsilon(1e-12));
    CHECK(ab <= geo::haversine_distance(a, c) + geo::haversine_distance(c, b) + 1e-6);
  }
}

TEST_CASE("coordinates are range checked") {
  CHECK_THROWS(GeoCoordinate(91, 0));
  CHECK_THROWS(GeoCoordinate(0, 181));
  CHECK_THROWS(GeoCoordinate(std::nan(""), 0));
  CHECK_NOTHROW(GeoCoordinate(-90, -180));
}

TEST_CASE("derive_speeds") {
  SUBCASE("100 m in 10 s is 36 km/h") {
    std::vector<TimedPoint> pts{{{40, 116}, 0}, {north_of(40, 116, 100), 10}};
    auto r = geo::derive_speeds(pts);
    REQUIRE(r.samples.size() == 1);
    CHECK(r.samples[0].speed_kmh == doctest::Approx(36.0).epsilon(1e-9));
    CHECK(r.samples[0].interval == 10.0);
    CHECK(r.samples[0].timestamp == 10.0);
  }
  SUBCASE("identical points give 0 km/h") {
    std::vector<TimedPoint> pts{{{40, 116}, 0}, {{40, 116}, 5}};
    CHECK(geo::derive_speeds(pts).samples.at(0).speed_kmh == 0.0);
  }
  SUBCASE("four points match a pairwise oracle") {
    std::vector<TimedPoint> pts{{{39.90, 116.40}, 100}, {{39.901, 116.402}, 103},
                                {{39.903, 116.401}, 108}, {{39.903, 116.405}, 109}};
    auto r = geo::derive_speeds(pts);
    REQUIRE(r.samples.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      const auto& a = pts[i].coordinate;
      const auto& b = pts[i + 1].coordinate;
      const double oracle = great_circle_oracle(a.latitude(), a.longitude(), b.latitude(), b.longitude()) /
                            (pts[i + 1].timestamp - pts[i].timestamp) * 3.6;
      CHECK(std::abs(r.samples[i].speed_kmh - oracle) / oracle <= 1e-9);
    }
  }
  SUBCASE("non-positive time steps are skipped and counted") {
    std::vector<TimedPoint> pts{{{40, 116}, 0}, {{40.001, 116}, 0}, {{40.002, 116}, 10}};
    auto r = geo::derive_speeds(pts);
    CHECK(r.samples.size() == 1);
    CHECK(r.dropped_nonpositive_dt == 1);
  }
  SUBCASE("fewer than two points is an error") {
    std::vector<TimedPoint> one{{{40, 116}, 0}};
    CHECK_THROWS_AS(geo::derive_speeds(one), DataError);
    CHECK_THROWS_AS(geo::derive_speeds({}), DataError);
  }
}

TEST_CASE("speed threshold table") {
  const auto t = geo::ThresholdTable::defaults();
  CHECK(t.bounds(Mode::Walk).max_kmh == 15.0);
  CHECK(t.bounds(Mode::Walk).min_kmh == 0.1);
  CHECK(t.bounds(Mode::Bike).min_kmh == 0.5);
  CHECK(t.bounds(Mode::Bike).max_kmh == 50.0);
  CHECK(t.bounds(Mode::Bus).max_kmh == 120.0);
  CHECK(t.bounds(Mode::Car).min_kmh == 3.0);
  CHECK(t.bounds(Mode::Train).max_kmh == 350.0);

  std::vector<geo::SpeedSample> s{{20.0, 1, 1}, {5.0, 2, 1}};
  auto kept = geo::filter_speed_bounds(s, Mode::Walk, t);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].speed_kmh == 5.0);

  std::vector<geo::SpeedSample> car{{3.0, 1, 1}, {2.999, 2, 1}};
  CHECK(geo::filter_speed_bounds(car, Mode::Car, t).size() == 1);
  CHECK(geo::filter_speed_bounds({}, Mode::Car, t).empty());
  CHECK_THROWS(geo::ThresholdTable({{{1, 0}, {0, 1}, {0, 1}, {0, 1}, {0, 1}}}));
}

TEST_CASE("accelerations") {
  std::vector<geo::SpeedSample> flat{{20, 1, 1}, {20, 2, 1}, {20, 3, 1}};
  for (double a : geo::compute_accelerations(flat)) CHECK(a == 0.0);
  std::vector<geo::SpeedSample> ramp{{0, 0, 1}, {36, 10, 10}};
  auto a = geo::compute_accelerations(ramp);
  REQUIRE(a.size() == 1);
  CHECK(a[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(geo::compute_accelerations(std::vector<geo::SpeedSample>{{5, 0, 1}}).empty());

  std::vector<geo::SpeedSample> irregular{{0, 0, 1}, {7.2, 2, 2}, {3.6, 3, 1}, {18, 8, 5}, {18, 9, 1}};
  auto b = geo::compute_accelerations(irregular);
  const std::vector<double> oracle{1.0, -1.0, 0.8, 0.0};  // (m/s delta) / dt by hand
  REQUIRE(b.size() == oracle.size());
  for (std::size_t i = 0; i < oracle.size(); ++i) CHECK(b[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
}
