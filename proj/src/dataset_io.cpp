#include "speedmode/dataset_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <sstream>

#include <spdlog/spdlog.h>

#include "speedmode/container.hpp"
#include "speedmode/error.hpp"
#include "speedmode/util.hpp"

namespace speedmode::data {
namespace fs = std::filesystem;

namespace {

// Days since 1970-01-01 for a proleptic Gregorian date (H. Hinnant).
long long days_from_civil(long long y, unsigned m, unsigned d) {
  y -= m <= 2;
  const long long era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<long long>(doe) - 719468;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  const auto t = trim(s);
  if (t.empty()) return false;
  const char* b = t.data();
  const char* e = b + t.size();
  if constexpr (std::is_floating_point_v<T>) {
    if (*b == '+') ++b;
  }
  auto [ptr, ec] = std::from_chars(b, e, out);
  if (ec != std::errc{} || ptr != e) return false;
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(out)) return false;
  }
  return true;
}

std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::istringstream ss{std::string(line)};
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (start < text.size()) {
    auto pos = text.find('\n', start);
    if (pos == std::string_view::npos) pos = text.size();
    auto line = text.substr(start, pos - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    out.push_back(line);
    start = pos + 1;
  }
  return out;
}

std::string to_chars_float(float v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw std::runtime_error("float formatting failed");
  return std::string(buf, ptr);
}

struct LabelRange {
  double start;
  double end;
  std::string mode;
};

}  // namespace

double civil_to_epoch(int year, int month, int day, int hour, int minute, double second) {
  const auto days = days_from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day));
  return static_cast<double>(days) * 86400.0 + hour * 3600.0 + minute * 60.0 + second;
}

double parse_datetime(std::string_view date, std::string_view time) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0;
  double s = 0.0;
  std::string ds(trim(date)), ts(trim(time));
  std::replace(ds.begin(), ds.end(), '/', '-');
  {
    std::size_t a = ds.find('-'), b = ds.rfind('-');
    if (a == std::string::npos || a == b) throw FormatError("bad date: " + std::string(date));
    if (!parse_number(std::string_view(ds).substr(0, a), y) ||
        !parse_number(std::string_view(ds).substr(a + 1, b - a - 1), mo) ||
        !parse_number(std::string_view(ds).substr(b + 1), d))
      throw FormatError("bad date: " + std::string(date));
  }
  {
    std::size_t a = ts.find(':'), b = ts.rfind(':');
    if (a == std::string::npos || a == b) throw FormatError("bad time: " + std::string(time));
    if (!parse_number(std::string_view(ts).substr(0, a), h) ||
        !parse_number(std::string_view(ts).substr(a + 1, b - a - 1), mi) ||
        !parse_number(std::string_view(ts).substr(b + 1), s))
      throw FormatError("bad time: " + std::string(time));
  }
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h < 0 || h > 23 || mi < 0 || mi > 59 || s < 0 ||
      s >= 61)
    throw FormatError("date/time out of range: " + std::string(date) + " " + std::string(time));
  return civil_to_epoch(y, mo, d, h, mi, s);
}

bool parse_plt_line(std::string_view line, geo::TimedPoint& out) {
  const auto f = split_csv_line(line);
  if (f.size() != 7) return false;
  double lat = 0, lon = 0;
  if (!parse_number(f[0], lat) || !parse_number(f[1], lon)) return false;
  if (lat < -90 || lat > 90 || lon < -180 || lon > 180) return false;
  try {
    const double t = parse_datetime(f[5], f[6]);
    out = geo::TimedPoint{geo::GeoCoordinate(lat, lon), t};
  } catch (const std::exception&) {
    return false;
  }
  return true;
}

ParseReport parse_geolife(const fs::path& directory) {
  if (!fs::is_directory(directory)) throw DataError("not a directory: " + directory.string());
  std::vector<fs::path> users;
  if (fs::is_directory(directory / "Trajectory")) {
    users.push_back(directory);
  } else {
    for (const auto& e : fs::directory_iterator(directory))
      if (e.is_directory() && fs::is_directory(e.path() / "Trajectory")) users.push_back(e.path());
  }
  std::sort(users.begin(), users.end());

  ParseReport report;
  for (const auto& user : users) {
    const auto user_id = user.filename().string();
    const auto labels_path = user / "labels.txt";
    if (!fs::exists(labels_path)) {
      report.warnings.push_back("user " + user_id + ": no labels.txt, skipped");
      continue;
    }
    std::vector<LabelRange> ranges;
    for (auto line : lines_of(read_file(labels_path))) {
      auto tok = split_ws(line);
      if (tok.size() < 5) continue;
      try {
        ranges.push_back({parse_datetime(tok[0], tok[1]), parse_datetime(tok[2], tok[3]), tok[4]});
      } catch (const FormatError&) {
        // header line or garbage
      }
    }

    std::vector<fs::path> plts;
    for (const auto& e : fs::directory_iterator(user / "Trajectory"))
      if (e.path().extension() == ".plt") plts.push_back(e.path());
    std::sort(plts.begin(), plts.end());

    std::vector<geo::TimedPoint> points;
    for (const auto& plt : plts) {
      const auto lines = lines_of(read_file(plt));
      for (std::size_t i = 6; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) continue;
        geo::TimedPoint p{geo::GeoCoordinate(0, 0), 0};
        if (parse_plt_line(lines[i], p)) {
          points.push_back(p);
        } else {
          ++report.rejected_rows;
          spdlog::warn("geolife: malformed line {} in {}", i + 1, plt.string());
        }
      }
    }
    std::stable_sort(points.begin(), points.end(),
                     [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });

    for (std::size_t r = 0; r < ranges.size(); ++r) {
      const auto& range = ranges[r];
      auto lo = std::lower_bound(points.begin(), points.end(), range.start,
                                 [](const auto& p, double t) { return p.timestamp < t; });
      auto hi = std::upper_bound(points.begin(), points.end(), range.end,
                                 [](double t, const auto& p) { return t < p.timestamp; });
      if (lo >= hi) continue;
      RawTrip trip;
      trip.trip_id = user_id + "_" + std::to_string(static_cast<long long>(range.start));
      trip.raw_mode = range.mode;
      trip.points.assign(lo, hi);
      report.trips.push_back(std::move(trip));
    }
  }
  return report;
}

ParseReport parse_trip_csv_text(std::string_view text) {
  const auto lines = lines_of(text);
  if (lines.empty()) throw FormatError("trip CSV: missing header");
  const auto header = split_csv_line(lines[0]);
  auto col = [&](std::string_view name) -> std::size_t {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (trim(header[i]) == name) return i;
    throw FormatError("trip CSV: missing column '" + std::string(name) + "'");
  };
  const std::size_t c_id = col("trip_id"), c_mode = col("mode"), c_t = col("timestamp"),
                    c_lat = col("lat"), c_lon = col("lon");

  ParseReport report;
  std::map<std::string, RawTrip> by_id;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const auto f = split_csv_line(lines[i]);
    double t = 0, lat = 0, lon = 0;
    if (f.size() != header.size() || trim(f[c_id]).empty() || !parse_number(f[c_t], t) ||
        !parse_number(f[c_lat], lat) || !parse_number(f[c_lon], lon) || lat < -90 || lat > 90 ||
        lon < -180 || lon > 180) {
      ++report.rejected_rows;
      continue;
    }
    const auto id = trim(f[c_id]);
    auto& trip = by_id[id];
    if (trip.trip_id.empty()) {
      trip.trip_id = id;
      trip.raw_mode = trim(f[c_mode]);
    }
    trip.points.push_back({geo::GeoCoordinate(lat, lon), t});
  }
  for (auto& [_, trip] : by_id) {
    std::stable_sort(trip.points.begin(), trip.points.end(),
                     [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
    report.trips.push_back(std::move(trip));
  }
  return report;
}

ParseReport parse_trip_csv(const fs::path& file) { return parse_trip_csv_text(read_file(file)); }

std::string format_trip_csv(std::span<const RawTrip> trips) {
  std::string out = "trip_id,mode,timestamp,lat,lon\n";
  for (const auto& t : trips) {
    for (const auto& p : t.points) {
      out += t.trip_id + ',' + t.raw_mode + ',' + format_double(p.timestamp) + ',' +
             format_double(p.coordinate.latitude()) + ',' +
             format_double(p.coordinate.longitude()) + '\n';
    }
  }
  return out;
}

std::string format_speed_csv(std::span<const SpeedTrip> trips) {
  std::string out = "trip_id,mode,timestamp,interval_s,speed_kmh\n";
  for (const auto& t : trips) {
    const auto mode = std::string(mode_name(t.mode));
    for (const auto& s : t.samples) {
      out += t.trip_id + ',' + mode + ',' + format_double(s.timestamp) + ',' +
             format_double(s.interval) + ',' + format_double(s.speed_kmh) + '\n';
    }
  }
  return out;
}

std::vector<SpeedTrip> parse_speed_csv_text(std::string_view text) {
  const auto lines = lines_of(text);
  if (lines.empty() || trim(lines[0]) != "trip_id,mode,timestamp,interval_s,speed_kmh")
    throw FormatError("speed CSV: unexpected header");
  std::vector<SpeedTrip> trips;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const auto f = split_csv_line(lines[i]);
    geo::SpeedSample s{};
    if (f.size() != 5 || !parse_number(f[2], s.timestamp) || !parse_number(f[3], s.interval) ||
        !parse_number(f[4], s.speed_kmh))
      throw FormatError("speed CSV: malformed row " + std::to_string(i + 1));
    auto mode = mode_from_name(f[1]);
    if (!mode) throw FormatError("speed CSV: unknown mode '" + f[1] + "'");
    auto [it, inserted] = index.try_emplace(f[0], trips.size());
    if (inserted) trips.push_back({f[0], *mode, {}});
    trips[it->second].samples.push_back(s);
  }
  return trips;
}

std::vector<SpeedTrip> read_speed_csv(const fs::path& file) {
  return parse_speed_csv_text(read_file(file));
}

std::string format_window_csv(std::span<const SpeedWindow> windows) {
  std::string out = "trip_id,label,valid_count";
  const std::size_t T = windows.empty() ? 0 : windows.front().length();
  for (std::size_t t = 0; t < T; ++t) out += ",s" + std::to_string(t);
  out += '\n';
  for (const auto& w : windows) {
    if (w.length() != T) throw std::invalid_argument("window archive requires a uniform length");
    out += w.trip_id + ',' + std::to_string(ordinal(w.label)) + ',' + std::to_string(w.valid_count);
    for (float s : w.speeds) out += ',' + to_chars_float(s);
    out += '\n';
  }
  return out;
}

std::vector<SpeedWindow> parse_window_csv_text(std::string_view text) {
  const auto lines = lines_of(text);
  if (lines.empty()) throw FormatError("window CSV: missing header");
  const auto header = split_csv_line(lines[0]);
  if (header.size() < 3 || header[0] != "trip_id" || header[1] != "label" ||
      header[2] != "valid_count")
    throw FormatError("window CSV: unexpected header");
  const std::size_t T = header.size() - 3;
  std::vector<SpeedWindow> out;
  std::map<std::string, std::size_t> per_trip;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const auto f = split_csv_line(lines[i]);
    if (f.size() != header.size())
      throw FormatError("window CSV: wrong field count on line " + std::to_string(i + 1));
    SpeedWindow w;
    w.trip_id = f[0];
    long long label = -1;
    std::size_t valid = 0;
    if (!parse_number(f[1], label) || !mode_from_ordinal(label) || !parse_number(f[2], valid) ||
        valid < 1 || valid > T)
      throw FormatError("window CSV: bad label/valid_count on line " + std::to_string(i + 1));
    w.label = *mode_from_ordinal(label);
    w.valid_count = valid;
    w.speeds.resize(T);
    for (std::size_t t = 0; t < T; ++t) {
      if (!parse_number(f[3 + t], w.speeds[t]))
        throw FormatError("window CSV: bad speed on line " + std::to_string(i + 1));
      if (t >= valid && w.speeds[t] != 0.0f)
        throw FormatError("window CSV: non-zero padding on line " + std::to_string(i + 1));
    }
    w.index = per_trip[w.trip_id]++;
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<SpeedWindow> read_windows(const fs::path& file) {
  const auto bytes = read_file(file);
  if (bytes.starts_with(container::kMagic)) return container::decode_windows(bytes);
  return parse_window_csv_text(bytes);
}

void write_windows_csv(const fs::path& file, std::span<const SpeedWindow> windows) {
  write_file_atomic(file, format_window_csv(windows));
}

}  // namespace speedmode::data
