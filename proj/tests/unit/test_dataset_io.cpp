#include <cmath>

#include "speedmode/container.hpp"
#include "speedmode/dataset_io.hpp"
#include "speedmode/error.hpp"
#include "speedmode/synth.hpp"
#include "speedmode/util.hpp"
#include "unit/support.hpp"

using namespace speedmode;
using testing::data_path;

TEST_CASE("calendar conversion") {
  CHECK(data::civil_to_epoch(1970, 1, 1, 0, 0, 0) == 0.0);
  CHECK(data::civil_to_epoch(2000, 3, 1, 0, 0, 0) == 951868800.0);
  CHECK(data::parse_datetime("2008-10-24", "02:09:59") == 1224814199.0);
  CHECK(data::parse_datetime("2008/10/24", "02:09:59") == 1224814199.0);
  CHECK_THROWS_AS(data::parse_datetime("2008-13-01", "00:00:00"), FormatError);
}

TEST_CASE("PLT line parsing") {
  geo::TimedPoint p{geo::GeoCoordinate(0, 0), 0};
  REQUIRE(data::parse_plt_line("39.906631,116.385564,0,492,39745.09,2008-10-24,02:09:59", p));
  CHECK(p.coordinate.latitude() == 39.906631);
  CHECK(p.coordinate.longitude() == 116.385564);
  CHECK(p.timestamp == 1224814199.0);
  CHECK_FALSE(data::parse_plt_line("39.9,116.3,0,492", p));
  CHECK_FALSE(data::parse_plt_line("139.9,116.3,0,492,39745.09,2008-10-24,02:09:59", p));
  CHECK_FALSE(data::parse_plt_line("abc,116.3,0,492,39745.09,2008-10-24,02:09:59", p));
  CHECK(p.coordinate.latitude() == 39.906631);
}

TEST_CASE("Geolife fixture directory") {
  const auto r = data::parse_geolife(data_path("geolife"));
  // Ranges: walk (3 points), bus (2), airplane (3), bike (4), car (none).
  REQUIRE(r.trips.size() == 4);
  CHECK(r.trips[0].raw_mode == "walk");
  CHECK(r.trips[0].points.size() == 3);
  CHECK(r.trips[0].trip_id == "010_1224814199");
  CHECK(r.trips[0].points[0].coordinate.latitude() == 39.906631);
  CHECK(r.trips[0].points[2].timestamp == 1224814219.0);
  CHECK(r.trips[1].points.size() == 2);
  CHECK(r.trips[3].points.size() == 4);
  CHECK(r.rejected_rows == 1);
  REQUIRE(r.warnings.size() == 1);  // user 011 has no labels.txt
  CHECK(r.warnings[0].find("011") != std::string::npos);

  const auto single = data::parse_geolife(data_path("geolife/010"));
  CHECK(single.trips.size() == 4);
  CHECK_THROWS_AS(data::parse_geolife(data_path("does_not_exist")), DataError);
}

TEST_CASE("point CSV") {
  const auto r = data::parse_trip_csv(data_path("trips.csv"));
  REQUIRE(r.trips.size() == 2);
  CHECK(r.trips[0].trip_id == "a");
  CHECK(r.trips[0].points.size() == 3);
  CHECK(r.trips[1].raw_mode == "taxi");
  for (const auto& t : r.trips)
    for (std::size_t i = 1; i < t.points.size(); ++i)
      CHECK(t.points[i - 1].timestamp <= t.points[i].timestamp);

  const auto bad = data::parse_trip_csv(data_path("trips_bad_rows.csv"));
  CHECK(bad.rejected_rows == 2);
  REQUIRE(bad.trips.size() == 1);
  CHECK(bad.trips[0].points.size() == 3);

  CHECK_THROWS_AS(data::parse_trip_csv(data_path("trips_missing_column.csv")), FormatError);
  CHECK(data::parse_trip_csv_text("trip_id,mode,timestamp,lat,lon\n").trips.empty());
}

TEST_CASE("point CSV order does not matter") {
  const std::string sorted = "trip_id,mode,timestamp,lat,lon\nx,bus,0,40,116\nx,bus,5,40.001,116\nx,bus,9,40.002,116\n";
  const std::string shuffled = "trip_id,mode,timestamp,lat,lon\nx,bus,9,40.002,116\nx,bus,0,40,116\nx,bus,5,40.001,116\n";
  CHECK(data::format_trip_csv(data::parse_trip_csv_text(sorted).trips) ==
        data::format_trip_csv(data::parse_trip_csv_text(shuffled).trips));
}

TEST_CASE("speed CSV round-trip") {
  const auto trips = data::synth_dataset(data::SynthSpec::defaults(), 10, 5);
  const auto text = data::format_speed_csv(trips);
  const auto back = data::parse_speed_csv_text(text);
  REQUIRE(back.size() == trips.size());
  for (std::size_t i = 0; i < trips.size(); ++i) {
    CHECK(back[i].trip_id == trips[i].trip_id);
    CHECK(back[i].mode == trips[i].mode);
    REQUIRE(back[i].samples.size() == trips[i].samples.size());
    for (std::size_t j = 0; j < trips[i].samples.size(); ++j)
      CHECK(back[i].samples[j].speed_kmh == trips[i].samples[j].speed_kmh);
  }
  CHECK(data::format_speed_csv(back) == text);
  CHECK_THROWS_AS(data::parse_speed_csv_text("a,b\n"), FormatError);
  CHECK_THROWS_AS(data::parse_speed_csv_text("trip_id,mode,timestamp,interval_s,speed_kmh\nx,Plane,1,1,1\n"),
                  FormatError);
}

TEST_CASE("window archives in CSV and binary form agree") {
  const auto trips = data::synth_dataset(data::SynthSpec::defaults(), 12, 9);
  const auto windows = data::segment_all(trips, 50, 25, 10);
  testing::TempDir dir("io");
  data::write_windows_csv(dir.path() / "w.csv", windows);
  container::write_windows_binary(dir.path() / "w.spmt", windows);
  const auto from_csv = data::read_windows(dir.path() / "w.csv");
  const auto from_bin = data::read_windows(dir.path() / "w.spmt");
  REQUIRE(from_csv.size() == windows.size());
  REQUIRE(from_bin.size() == windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    CHECK(from_csv[i].speeds == windows[i].speeds);
    CHECK(from_bin[i].speeds == windows[i].speeds);
    CHECK(from_csv[i].label == windows[i].label);
    CHECK(from_csv[i].valid_count == windows[i].valid_count);
    CHECK(from_csv[i].index == windows[i].index);
    CHECK(from_bin[i].index == windows[i].index);
    CHECK(from_bin[i].start == windows[i].start);
    CHECK(from_bin[i].trip_id == windows[i].trip_id);
  }
  CHECK_THROWS_AS(data::parse_window_csv_text("trip_id,label,valid_count,s0\nx,9,1,1\n"), FormatError);
  CHECK_THROWS_AS(data::parse_window_csv_text("trip_id,label,valid_count,s0,s1\nx,1,1,1,2\n"), FormatError);
}
