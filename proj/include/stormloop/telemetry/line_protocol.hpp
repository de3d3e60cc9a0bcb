#pragma once

// Point upload format, one point per LF-terminated line:
//
//   <sensor>,node=<node_id> value=<decimal> <timestamp_ms>
//
// Names match [a-zA-Z0-9_]+, decimals are rendered shortest-roundtrip and
// timestamps are integer milliseconds UTC.

#include <charconv>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "stormloop/core/errors.hpp"
#include "stormloop/datastore/types.hpp"

namespace stormloop::telemetry {

inline bool is_valid_name(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
    if (!ok) return false;
  }
  return true;
}

inline std::string format_decimal(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline void append_line(std::string& out, const Point& p) {
  if (!is_valid_name(p.series.sensor) || !is_valid_name(p.series.node)) {
    throw DomainError("series names must match [a-zA-Z0-9_]+: '" + p.series.str() + "'");
  }
  if (!std::isfinite(p.value)) throw DomainError("cannot encode non-finite value for " + p.series.str());
  out += p.series.sensor;
  out += ",node=";
  out += p.series.node;
  out += " value=";
  out += format_decimal(p.value);
  out += ' ';
  out += std::to_string(p.timestamp);
  out += '\n';
}

inline std::string encode_points(std::span<const Point> points) {
  std::string out;
  out.reserve(points.size() * 48);
  for (const Point& p : points) append_line(out, p);
  return out;
}

namespace detail {

inline Point parse_line(std::string_view line, std::size_t lineno) {
  auto fail = [&](const std::string& why) -> ParseError { return ParseError(lineno, why); };

  const auto comma = line.find(',');
  if (comma == std::string_view::npos) throw fail("missing ',node=' tag");
  const std::string_view sensor = line.substr(0, comma);
  if (!is_valid_name(sensor)) throw fail("bad character in sensor name");
  std::string_view rest = line.substr(comma + 1);

  constexpr std::string_view kNode = "node=";
  if (rest.substr(0, kNode.size()) != kNode) throw fail("missing 'node=' tag");
  rest.remove_prefix(kNode.size());
  const auto sp1 = rest.find(' ');
  if (sp1 == std::string_view::npos) throw fail("missing value field");
  const std::string_view node = rest.substr(0, sp1);
  if (!is_valid_name(node)) throw fail("bad character in node id");
  rest.remove_prefix(sp1 + 1);

  constexpr std::string_view kValue = "value=";
  if (rest.substr(0, kValue.size()) != kValue) throw fail("missing 'value=' field");
  rest.remove_prefix(kValue.size());
  const auto sp2 = rest.find(' ');
  if (sp2 == std::string_view::npos) throw fail("missing timestamp");
  const std::string_view value_text = rest.substr(0, sp2);
  const std::string_view ts_text = rest.substr(sp2 + 1);

  double value = 0.0;
  {
    auto [ptr, ec] = std::from_chars(value_text.data(), value_text.data() + value_text.size(), value);
    if (value_text.empty() || ec != std::errc{} || ptr != value_text.data() + value_text.size() ||
        !std::isfinite(value)) {
      throw fail("non-numeric value '" + std::string(value_text) + "'");
    }
  }
  TimeMs ts = 0;
  {
    auto [ptr, ec] = std::from_chars(ts_text.data(), ts_text.data() + ts_text.size(), ts);
    if (ts_text.empty() || ec != std::errc{} || ptr != ts_text.data() + ts_text.size()) {
      throw fail("non-integer timestamp '" + std::string(ts_text) + "'");
    }
  }
  return Point{{std::string(node), std::string(sensor)}, ts, value};
}

}  // namespace detail

/// Parses a payload. Throws ParseError naming the first bad line.
inline std::vector<Point> decode_points(std::string_view text) {
  std::vector<Point> points;
  std::size_t lineno = 0;
  while (!text.empty()) {
    ++lineno;
    const auto nl = text.find('\n');
    const std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (line.empty()) throw ParseError(lineno, "empty line");
    points.push_back(detail::parse_line(line, lineno));
  }
  return points;
}

}  // namespace stormloop::telemetry
