#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

#include "stormloop/core/errors.hpp"

namespace stormloop {

/// Milliseconds since the Unix epoch, UTC. The simulation clock uses the same unit.
using TimeMs = std::int64_t;

inline constexpr TimeMs kMsPerSecond = 1000;
inline constexpr TimeMs kMsPerMinute = 60 * kMsPerSecond;
inline constexpr TimeMs kMsPerHour = 60 * kMsPerMinute;
inline constexpr TimeMs kMsPerDay = 24 * kMsPerHour;

inline TimeMs minutes_to_ms(double minutes) { return std::llround(minutes * kMsPerMinute); }
inline TimeMs hours_to_ms(double hours) { return std::llround(hours * kMsPerHour); }
inline TimeMs seconds_to_ms(double seconds) { return std::llround(seconds * kMsPerSecond); }
inline double ms_to_minutes(TimeMs t) { return static_cast<double>(t) / kMsPerMinute; }
inline double ms_to_hours(TimeMs t) { return static_cast<double>(t) / kMsPerHour; }
inline double ms_to_seconds(TimeMs t) { return static_cast<double>(t) / kMsPerSecond; }

/// Formats as `YYYY-MM-DDTHH:MM:SSZ` (sub-second part dropped when zero).
inline std::string format_iso8601(TimeMs t) {
  using namespace std::chrono;
  const auto tp = sys_time<milliseconds>{milliseconds{t}};
  const auto day = floor<days>(tp);
  const year_month_day ymd{day};
  const hh_mm_ss hms{tp - day};
  char buf[40];
  const auto ms = hms.subseconds().count();
  if (ms == 0) {
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                  static_cast<int>(hms.seconds().count()));
  } else {
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d.%03dZ", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                  static_cast<int>(hms.seconds().count()), static_cast<int>(ms));
  }
  return buf;
}

/// Parses `YYYY-MM-DDTHH:MM[:SS[.fff]]Z`. A trailing `Z` (or `+00:00`) is required.
inline TimeMs parse_iso8601(std::string_view text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, consumed = 0;
  double sec = 0.0;
  const std::string s{text};
  int n = std::sscanf(s.c_str(), "%4d-%2d-%2dT%2d:%2d%n", &y, &mo, &d, &h, &mi, &consumed);
  if (n != 5) throw ParseError(0, "bad ISO-8601 timestamp '" + s + "'");
  std::string_view rest = text.substr(static_cast<std::size_t>(consumed));
  if (!rest.empty() && rest.front() == ':') {
    int used = 0;
    const std::string tail{rest.substr(1)};
    if (std::sscanf(tail.c_str(), "%lf%n", &sec, &used) != 1 || sec < 0 || sec >= 61) {
      throw ParseError(0, "bad seconds in timestamp '" + s + "'");
    }
    rest = rest.substr(1 + static_cast<std::size_t>(used));
  }
  if (rest != "Z" && rest != "+00:00") throw ParseError(0, "timestamp must be UTC: '" + s + "'");
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59) throw ParseError(0, "invalid date in '" + s + "'");
  const auto base = duration_cast<milliseconds>(sys_days{ymd}.time_since_epoch()).count();
  return base + h * kMsPerHour + mi * kMsPerMinute + std::llround(sec * 1000.0);
}

}  // namespace stormloop
