#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "speedmode/dataset.hpp"

namespace speedmode::data {

/// Seconds since the Unix epoch for a UTC calendar date and time of day.
double civil_to_epoch(int year, int month, int day, int hour, int minute, double second);

/// Parses "YYYY-MM-DD" / "YYYY/MM/DD" plus "HH:MM:SS" into epoch seconds.
double parse_datetime(std::string_view date, std::string_view time);

struct ParseReport {
  std::vector<RawTrip> trips;
  std::size_t rejected_rows = 0;
  std::vector<std::string> warnings;
};

/// Geolife layout: <root>/<user>/Trajectory/*.plt and <root>/<user>/labels.txt
/// (a single user directory is accepted as well). One trip per labeled time
/// range that covers at least one point; unlabeled points are dropped.
/// Users without labels.txt are skipped with a warning.
ParseReport parse_geolife(const std::filesystem::path& directory);

/// Parses one PLT data line: lat,lon,0,altitude_ft,days,date,time.
/// Returns false (and leaves `out` untouched) on malformed lines.
bool parse_plt_line(std::string_view line, geo::TimedPoint& out);

/// Canonical point CSV: header trip_id,mode,timestamp,lat,lon (any column
/// order). Rows are grouped by trip_id and time-sorted; rows with
/// non-numeric or out-of-range fields are rejected and counted.
ParseReport parse_trip_csv(const std::filesystem::path& file);
ParseReport parse_trip_csv_text(std::string_view text);
std::string format_trip_csv(std::span<const RawTrip> trips);

/// Speed CSV: trip_id,mode,timestamp,interval_s,speed_kmh.
std::string format_speed_csv(std::span<const SpeedTrip> trips);
std::vector<SpeedTrip> parse_speed_csv_text(std::string_view text);
std::vector<SpeedTrip> read_speed_csv(const std::filesystem::path& file);

/// Window archive CSV: trip_id,label,valid_count,s0..s{T-1}.
std::string format_window_csv(std::span<const SpeedWindow> windows);
std::vector<SpeedWindow> parse_window_csv_text(std::string_view text);

/// Reads a window archive in CSV or binary container form (by content).
std::vector<SpeedWindow> read_windows(const std::filesystem::path& file);
void write_windows_csv(const std::filesystem::path& file, std::span<const SpeedWindow> windows);

}  // namespace speedmode::data
