#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "stormloop/core/errors.hpp"
#include "stormloop/core/time.hpp"

namespace stormloop {

/// Identifies one time series: a sensor on a node.
struct SeriesKey {
  std::string node;
  std::string sensor;

  auto operator<=>(const SeriesKey&) const = default;
  bool operator==(const SeriesKey&) const = default;

  /// `node.sensor`, the form used in query strings and file names.
  std::string str() const { return node + "." + sensor; }

  static SeriesKey parse(const std::string& text) {
    const auto dot = text.find('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == text.size()) {
      throw ParseError(0, "series must be 'node.sensor', got '" + text + "'");
    }
    return {text.substr(0, dot), text.substr(dot + 1)};
  }
};

struct Point {
  SeriesKey series;
  TimeMs timestamp = 0;
  double value = 0.0;

  bool operator==(const Point&) const = default;
};

enum class CommandKind { set_valve, set_sampling_interval, set_sensor_enabled };

inline std::string to_string(CommandKind k) {
  switch (k) {
    case CommandKind::set_valve: return "SetValve";
    case CommandKind::set_sampling_interval: return "SetSamplingInterval";
    case CommandKind::set_sensor_enabled: return "SetSensorEnabled";
  }
  return "?";
}

inline CommandKind command_kind_from_string(const std::string& s) {
  if (s == "SetValve") return CommandKind::set_valve;
  if (s == "SetSamplingInterval") return CommandKind::set_sampling_interval;
  if (s == "SetSensorEnabled") return CommandKind::set_sensor_enabled;
  throw ParseError(0, "unknown command kind '" + s + "'");
}

enum class CommandState { pending, delivered, acked, rejected };

inline std::string to_string(CommandState s) {
  switch (s) {
    case CommandState::pending: return "pending";
    case CommandState::delivered: return "delivered";
    case CommandState::acked: return "acked";
    case CommandState::rejected: return "rejected";
  }
  return "?";
}

/// A server-issued instruction for one node. `value` carries the valve
/// opening, the sampling interval in minutes, or 0/1 for sensor enable;
/// `sensor` names the target of SetSensorEnabled.
struct Command {
  std::uint64_t id = 0;
  std::string node;
  CommandKind kind = CommandKind::set_valve;
  double value = 0.0;
  std::string sensor;
  TimeMs issued_at = 0;
  CommandState state = CommandState::pending;

  bool operator==(const Command&) const = default;
};

/// Result reported by a node after handling a command.
enum class AckOutcome { applied, rejected };

struct Ack {
  std::uint64_t id = 0;
  AckOutcome outcome = AckOutcome::applied;
  std::string note;  // "clamped", "superseded", "duplicate", reason for rejection

  bool operator==(const Ack&) const = default;
};

}  // namespace stormloop

template <>
struct std::hash<stormloop::SeriesKey> {
  std::size_t operator()(const stormloop::SeriesKey& k) const noexcept {
    return std::hash<std::string>{}(k.node) * 31 ^ std::hash<std::string>{}(k.sensor);
  }
};
