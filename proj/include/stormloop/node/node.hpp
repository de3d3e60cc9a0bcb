#pragma once

// Sensor node firmware emulation. Each wake cycle runs, in order:
//   1. fetch pending commands from the server
//   2. apply configuration changes and valve actuation, ack each command
//   3. sample enabled sensors plus health statistics into the buffer
//   4. transmit the buffer; points stay buffered until the server confirms
//   5. schedule the next wake and go back to sleep

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stormloop/core/errors.hpp"
#include "stormloop/core/time.hpp"
#include "stormloop/datastore/types.hpp"
#include "stormloop/hydro/watershed.hpp"
#include "stormloop/node/power.hpp"
#include "stormloop/telemetry/wire.hpp"

namespace stormloop::node {

inline constexpr const char* kBatterySeries = "battery_v";
inline constexpr const char* kSignalSeries = "signal_db";
inline constexpr const char* kAttemptsSeries = "conn_attempts";

struct SensorBinding {
  std::string sensor_id;
  hydro::Binding binding;
  bool enabled = true;
};

struct IntervalBounds {
  double min_minutes = 3.0;
  double max_minutes = 15.0;
};

struct NodeConfig {
  std::string node_id;
  double sampling_interval_min = 15.0;
  double awake_window_s = 10.0;
  std::vector<SensorBinding> sensors;
  std::optional<std::string> valve_element;
  telemetry::Credentials credentials;
  IntervalBounds bounds;
  std::size_t buffer_capacity = 1024;
  PowerModel power;

  void validate() const {
    if (!telemetry::is_valid_name(node_id)) throw ConfigError("invalid node id '" + node_id + "'");
    if (bounds.min_minutes <= 0.0 || bounds.min_minutes > bounds.max_minutes) {
      throw ConfigError("node '" + node_id + "': invalid sampling interval bounds");
    }
    if (sampling_interval_min < bounds.min_minutes || sampling_interval_min > bounds.max_minutes) {
      throw ConfigError("node '" + node_id + "': sampling interval outside bounds");
    }
    if (!(awake_window_s > 0.0) || awake_window_s >= sampling_interval_min * 60.0) {
      throw ConfigError("node '" + node_id + "': awake window must be positive and shorter than the interval");
    }
    if (std::none_of(sensors.begin(), sensors.end(), [](const auto& s) { return s.enabled; })) {
      throw ConfigError("node '" + node_id + "': at least one sensor must be enabled");
    }
    for (const auto& s : sensors) {
      if (!telemetry::is_valid_name(s.sensor_id)) throw ConfigError("invalid sensor id '" + s.sensor_id + "'");
    }
    if (buffer_capacity == 0) throw ConfigError("node '" + node_id + "': buffer capacity must be > 0");
    power.validate();
  }
};

enum class NodeMode { sleeping, awake };

struct Health {
  double signal_db = 0.0;
  std::uint64_t connection_attempts = 0;  // cumulative failed exchanges
  bool operator==(const Health&) const = default;
};

struct NodeState {
  NodeMode mode = NodeMode::sleeping;
  TimeMs next_wake = 0;
  TimeMs last_power_update = 0;
  Battery battery;
  std::deque<Point> buffer;
  std::uint64_t dropped_points = 0;
  std::uint64_t last_command_seq = 0;
  std::optional<double> valve_target;
  Health health;
  std::uint64_t cycles = 0;
  std::uint64_t skipped_cycles = 0;
  TimeMs awake_ms = 0;

  bool operator==(const NodeState&) const = default;
};

inline NodeState make_node_state(const NodeConfig& cfg, TimeMs first_wake, double initial_charge_fraction = 1.0) {
  NodeState s;
  s.next_wake = first_wake;
  s.last_power_update = first_wake;
  s.battery = cfg.power.battery_at(cfg.power.capacity_mah * std::clamp(initial_charge_fraction, 0.0, 1.0));
  return s;
}

/// What the node's sensors can see and whether its panel is lit.
class Plant {
 public:
  virtual ~Plant() = default;
  virtual double observe(const hydro::Binding& binding) const = 0;
  virtual bool daylight(TimeMs /*t*/) const { return false; }
};

struct Actuation {
  std::string element;
  double target = 0.0;
  std::uint64_t command_id = 0;
  bool operator==(const Actuation&) const = default;
};

struct ApplyResult {
  NodeState state;
  NodeConfig config;
  std::optional<Actuation> actuation;
  Ack ack;
};

/// Applies one command. Commands at or below last_command_seq are duplicates
/// and change nothing, so redelivery is harmless.
inline ApplyResult apply_command(NodeState state, NodeConfig config, const Command& cmd) {
  ApplyResult r{std::move(state), std::move(config), std::nullopt, {cmd.id, AckOutcome::applied, {}}};
  if (cmd.id <= r.state.last_command_seq) {
    r.ack.note = "duplicate";
    return r;
  }
  r.state.last_command_seq = cmd.id;
  auto reject = [&](std::string why) {
    r.ack.outcome = AckOutcome::rejected;
    r.ack.note = std::move(why);
  };

  switch (cmd.kind) {
    case CommandKind::set_valve: {
      if (!r.config.valve_element) return reject("node has no valve"), r;
      if (std::isnan(cmd.value)) return reject("valve target is not a number"), r;
      const double target = std::clamp(cmd.value, 0.0, 1.0);
      if (target != cmd.value) r.ack.note = "clamped";
      r.state.valve_target = target;
      r.actuation = Actuation{*r.config.valve_element, target, cmd.id};
      break;
    }
    case CommandKind::set_sampling_interval: {
      if (!(cmd.value > 0.0) || !std::isfinite(cmd.value)) return reject("interval must be positive"), r;
      const auto& b = r.config.bounds;
      const double minutes = std::clamp(cmd.value, b.min_minutes, b.max_minutes);
      if (minutes != cmd.value) r.ack.note = "clamped";
      r.config.sampling_interval_min = minutes;
      break;
    }
    case CommandKind::set_sensor_enabled: {
      auto it = std::find_if(r.config.sensors.begin(), r.config.sensors.end(),
                             [&](const auto& s) { return s.sensor_id == cmd.sensor; });
      if (it == r.config.sensors.end()) return reject("unknown sensor '" + cmd.sensor + "'"), r;
      const bool enable = cmd.value != 0.0;
      if (!enable) {
        const auto enabled = std::count_if(r.config.sensors.begin(), r.config.sensors.end(),
                                           [](const auto& s) { return s.enabled; });
        if (it->enabled && enabled == 1) return reject("cannot disable the last enabled sensor"), r;
      }
      it->enabled = enable;
      break;
    }
  }
  return r;
}

struct WakeResult {
  NodeState state;
  NodeConfig config;
  std::vector<Point> sampled;      // taken this cycle
  std::vector<Point> transmitted;  // confirmed stored by the server this cycle
  std::vector<Actuation> actions;
  std::vector<Ack> acks;           // acks the server confirmed
  std::vector<std::uint64_t> applied_commands;  // ids whose effect was applied this cycle
  bool skipped = false;
};

namespace detail {

/// One request with a single retry. Counts failed attempts.
inline std::optional<telemetry::WireMessage> exchange_with_retry(telemetry::Transport& transport,
                                                                 const telemetry::WireMessage& req, TimeMs now,
                                                                 NodeState& state) {
  for (int attempt = 0; attempt < 2; ++attempt) {
    auto resp = transport.exchange(req, now);
    if (resp && resp->kind != telemetry::MessageKind::auth_error && resp->kind != telemetry::MessageKind::error) {
      return resp;
    }
    ++state.health.connection_attempts;
    if (resp && resp->kind == telemetry::MessageKind::auth_error) break;
  }
  return std::nullopt;
}

inline void push_bounded(NodeState& s, std::size_t capacity, Point p) {
  if (s.buffer.size() >= capacity) {
    s.buffer.pop_front();
    ++s.dropped_points;
  }
  s.buffer.push_back(std::move(p));
}

}  // namespace detail

/// Runs one wake cycle at `now`.
inline WakeResult wake_cycle(NodeState state, NodeConfig config, TimeMs now, telemetry::Transport& transport,
                             const Plant& plant) {
  if (now < state.next_wake) throw DomainError("wake_cycle before next_wake for node " + config.node_id);
  WakeResult out;
  const auto& power = config.power;
  auto daylight = [&plant](TimeMs t) { return plant.daylight(t); };
  if (now > state.last_power_update) {
    state.battery = sleep_between(power, state.battery, state.last_power_update, now, daylight);
  }

  if (state.battery.voltage < power.cutoff_voltage) {
    ++state.skipped_cycles;
    state.next_wake = now + minutes_to_ms(config.sampling_interval_min);
    state.last_power_update = now;
    out.state = std::move(state);
    out.config = std::move(config);
    out.skipped = true;
    return out;
  }

  state.mode = NodeMode::awake;
  ++state.cycles;
  state.health.signal_db = transport.signal_db(config.node_id);
  const auto& creds = config.credentials;

  // 1. Fetch.
  std::vector<Command> commands;
  if (auto resp = detail::exchange_with_retry(transport, telemetry::make_fetch(config.node_id, creds), now, state)) {
    if (resp->kind == telemetry::MessageKind::command_list) {
      try {
        commands = telemetry::decode_command_list(resp->body);
      } catch (const ParseError&) {
        commands.clear();
      }
    }
  }

  // 2. Apply: only the newest fresh command per kind (and per sensor) takes effect.
  std::sort(commands.begin(), commands.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  std::map<std::pair<CommandKind, std::string>, std::uint64_t> newest;
  for (const auto& c : commands) {
    if (c.id > state.last_command_seq) newest[{c.kind, c.sensor}] = c.id;
  }
  std::vector<Ack> acks;
  for (const auto& c : commands) {
    if (c.id <= state.last_command_seq) {
      acks.push_back({c.id, AckOutcome::applied, "duplicate"});
      continue;
    }
    if (newest[{c.kind, c.sensor}] != c.id) {
      acks.push_back({c.id, AckOutcome::applied, "superseded"});
      continue;
    }
    ApplyResult r = apply_command(std::move(state), std::move(config), c);
    state = std::move(r.state);
    config = std::move(r.config);
    if (r.actuation) out.actions.push_back(*r.actuation);
    if (r.ack.outcome == AckOutcome::applied) out.applied_commands.push_back(c.id);
    acks.push_back(r.ack);
  }
  if (!commands.empty()) {
    state.last_command_seq = std::max(state.last_command_seq, commands.back().id);
  }
  for (const auto& ack : acks) {
    if (detail::exchange_with_retry(transport, telemetry::make_ack(config.node_id, creds, ack), now, state)) {
      out.acks.push_back(ack);
    }
  }

  // 3. Sample.
  for (const auto& s : config.sensors) {
    if (!s.enabled) continue;
    out.sampled.push_back({{config.node_id, s.sensor_id}, now, plant.observe(s.binding)});
  }
  out.sampled.push_back({{config.node_id, kBatterySeries}, now, state.battery.voltage});
  out.sampled.push_back({{config.node_id, kSignalSeries}, now, state.health.signal_db});
  out.sampled.push_back(
      {{config.node_id, kAttemptsSeries}, now, static_cast<double>(state.health.connection_attempts)});
  for (const auto& p : out.sampled) detail::push_bounded(state, config.buffer_capacity, p);

  // 4. Transmit everything buffered, oldest first.
  if (!state.buffer.empty()) {
    std::vector<Point> batch(state.buffer.begin(), state.buffer.end());
    auto resp = detail::exchange_with_retry(transport, telemetry::make_write(config.node_id, creds, batch), now, state);
    if (resp && resp->kind == telemetry::MessageKind::write_ack) {
      state.buffer.erase(state.buffer.begin(), state.buffer.begin() + static_cast<std::ptrdiff_t>(batch.size()));
      out.transmitted = std::move(batch);
    }
  }

  // 5. Sleep.
  const TimeMs awake = seconds_to_ms(config.awake_window_s);
  state.battery = power_step(power, state.battery, config.awake_window_s / 60.0, PowerMode::awake, plant.daylight(now));
  state.awake_ms += awake;
  state.last_power_update = now + awake;
  state.next_wake = now + minutes_to_ms(config.sampling_interval_min);
  state.mode = NodeMode::sleeping;

  out.state = std::move(state);
  out.config = std::move(config);
  return out;
}

}  // namespace stormloop::node
