#pragma once

// Transport-independent request handling for the /api/v1 endpoints. The HTTP
// server and the in-process simulated link both call ApiService::handle, so
// nodes, the dashboard and tests all see identical behaviour.
//
// Applications never touch node state: config and valve requests only queue
// commands that the node picks up on its next wake.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "stormloop/core/errors.hpp"
#include "stormloop/core/time.hpp"
#include "stormloop/datastore/datastore.hpp"
#include "stormloop/node/node.hpp"
#include "stormloop/server/event_bus.hpp"
#include "stormloop/subscription/alerts.hpp"
#include "stormloop/telemetry/auth.hpp"
#include "stormloop/telemetry/line_protocol.hpp"
#include "stormloop/telemetry/wire.hpp"

namespace stormloop::api {

using nlohmann::json;

struct NodeRegistryEntry {
  std::string node_id;
  std::string description;
  double lat = 0.0;
  double lon = 0.0;
  std::optional<TimeMs> last_seen;
  std::optional<double> battery_v;
  std::optional<double> signal_db;
  node::IntervalBounds bounds;
  bool has_valve = false;
};

enum class NodeStatus { healthy, warning, offline };

inline std::string to_string(NodeStatus s) {
  switch (s) {
    case NodeStatus::healthy: return "healthy";
    case NodeStatus::warning: return "warning";
    case NodeStatus::offline: return "offline";
  }
  return "?";
}

/// Status from the alert history: a critical alert newer than the last report
/// means offline; any warning or critical alert within `window` means warning.
inline NodeStatus derive_status(const NodeRegistryEntry& e, const std::vector<subs::Alert>& alerts, TimeMs now,
                                TimeMs window) {
  NodeStatus status = NodeStatus::healthy;
  for (const auto& a : alerts) {
    if (a.subject != e.node_id) continue;
    if (a.severity == subs::Severity::critical && (!e.last_seen || a.fired_at > *e.last_seen)) {
      return NodeStatus::offline;
    }
    if (a.severity != subs::Severity::info && now - a.fired_at <= window) status = NodeStatus::warning;
  }
  return status;
}

class NodeRegistry {
 public:
  void add(NodeRegistryEntry e) {
    std::lock_guard lock(mu_);
    entries_[e.node_id] = std::move(e);
  }

  bool contains(const std::string& node) const {
    std::lock_guard lock(mu_);
    return entries_.count(node) > 0;
  }

  std::optional<NodeRegistryEntry> get(const std::string& node) const {
    std::lock_guard lock(mu_);
    auto it = entries_.find(node);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  void record_points(const std::vector<Point>& points, TimeMs now) {
    std::lock_guard lock(mu_);
    std::map<std::string, TimeMs> newest_battery, newest_signal;
    for (const auto& p : points) {
      auto it = entries_.find(p.series.node);
      if (it == entries_.end()) continue;
      auto& e = it->second;
      e.last_seen = std::max(e.last_seen.value_or(now), now);
      if (p.series.sensor == node::kBatterySeries && p.timestamp >= newest_battery[e.node_id]) {
        newest_battery[e.node_id] = p.timestamp;
        e.battery_v = p.value;
      } else if (p.series.sensor == node::kSignalSeries && p.timestamp >= newest_signal[e.node_id]) {
        newest_signal[e.node_id] = p.timestamp;
        e.signal_db = p.value;
      }
    }
  }

  std::vector<NodeRegistryEntry> entries() const {
    std::lock_guard lock(mu_);
    std::vector<NodeRegistryEntry> out;
    for (const auto& [_, e] : entries_) out.push_back(e);
    return out;
  }

 private:
  mutable std::mutex mu_;
  std::map<std::string, NodeRegistryEntry> entries_;
};

struct Request {
  std::string method;
  std::string path;
  std::map<std::string, std::string> params;
  std::string authorization;  // raw Authorization header value
  std::string body;
  TimeMs now = 0;
};

struct Response {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

inline json point_to_json(const Point& p) {
  return {{"series", p.series.str()}, {"node", p.series.node}, {"sensor", p.series.sensor},
          {"t", p.timestamp},         {"value", p.value}};
}

inline json registry_entry_to_json(const NodeRegistryEntry& e, NodeStatus status) {
  json j{{"node_id", e.node_id},
         {"description", e.description},
         {"location", {{"lat", e.lat}, {"lon", e.lon}}},
         {"last_seen", e.last_seen ? json(*e.last_seen) : json(nullptr)},
         {"battery_v", e.battery_v ? json(*e.battery_v) : json(nullptr)},
         {"signal_db", e.signal_db ? json(*e.signal_db) : json(nullptr)},
         {"status", to_string(status)},
         {"has_valve", e.has_valve},
         {"interval_bounds_min", {e.bounds.min_minutes, e.bounds.max_minutes}}};
  return j;
}

struct ApiOptions {
  TimeMs status_window = 60 * kMsPerMinute;
};

class ApiService {
 public:
  ApiService(store::Datastore& ds, subs::AlertLog& alerts, telemetry::CredentialStore credentials,
             ApiOptions opts = {})
      : ds_(ds), alerts_(alerts), credentials_(std::move(credentials)), opts_(opts) {
    ds_.on_points([this](std::span<const Point> pts) {
      for (const auto& p : pts) bus_.publish("point", point_to_json(p).dump());
    });
    alerts_.add_sink([this](const subs::Alert& a) { bus_.publish("alert", subs::alert_to_json(a).dump()); });
  }

  ApiService(const ApiService&) = delete;
  ApiService& operator=(const ApiService&) = delete;

  NodeRegistry& registry() noexcept { return registry_; }
  EventBus& bus() noexcept { return bus_; }
  store::Datastore& datastore() noexcept { return ds_; }

  bool authorized(const std::string& header) const {
    return credentials_.authenticate_header(header) == telemetry::AuthResult::ok;
  }

  Response handle(const Request& req) { return dispatch(req); }

 private:
  static Response error(int status, const std::string& msg, json extra = json::object()) {
    extra["error"] = msg;
    return {status, extra.dump()};
  }

  Response dispatch(const Request& req) {
    if (!authorized(req.authorization)) return error(401, "unauthorized");
    static const std::regex kCommands(R"(^/api/v1/commands/([A-Za-z0-9_]+)$)");
    static const std::regex kNodeAction(R"(^/api/v1/nodes/([A-Za-z0-9_]+)/(config|valve)$)");
    std::smatch m;
    try {
      if (req.method == "POST" && req.path == "/api/v1/write") return write(req);
      if (req.method == "GET" && std::regex_match(req.path, m, kCommands)) return commands(req, m[1]);
      if (req.method == "POST" && req.path == "/api/v1/ack") return ack(req);
      if (req.method == "GET" && req.path == "/api/v1/query") return query(req);
      if (req.method == "GET" && req.path == "/api/v1/nodes") return nodes(req);
      if (req.method == "POST" && std::regex_match(req.path, m, kNodeAction)) {
        return m[2] == "valve" ? valve(req, m[1]) : config(req, m[1]);
      }
      if (req.method == "GET" && req.path == "/api/v1/alerts") return alerts(req);
    } catch (const ParseError& e) {
      return error(400, e.what());
    } catch (const DomainError& e) {
      return error(400, e.what());
    } catch (const ConfigError& e) {
      return error(404, e.what());
    }
    return error(404, "no such endpoint");
  }

  Response write(const Request& req) {
    std::vector<Point> points;
    try {
      points = telemetry::decode_points(req.body);
    } catch (const ParseError& e) {
      return error(400, e.what(), {{"line", e.line()}});
    }
    const auto res = ds_.write_points(points);
    registry_.record_points(points, req.now);
    return {200, json{{"written", res.written}}.dump()};
  }

  Response commands(const Request& req, const std::string& node) {
    if (!registry_.contains(node)) return error(404, "unknown node '" + node + "'");
    auto it = req.params.find("view");
    const bool view_all = it != req.params.end() && it->second == "all";
    const auto cmds = view_all ? ds_.list_commands(node) : ds_.fetch_pending(node, req.now);
    return {200, telemetry::encode_command_list(node, cmds)};
  }

  Response ack(const Request& req) {
    const auto a = telemetry::decode_ack(req.body);
    if (!registry_.contains(a.node)) return error(404, "unknown node '" + a.node + "'");
    const CommandState s = ds_.ack(a.node, a.ack.id, a.ack.outcome);
    return {200, json{{"node", a.node}, {"id", a.ack.id}, {"state", to_string(s)}}.dump()};
  }

  static TimeMs param_time(const Request& req, const std::string& key, TimeMs fallback) {
    auto it = req.params.find(key);
    if (it == req.params.end() || it->second.empty()) return fallback;
    try {
      std::size_t used = 0;
      const long long v = std::stoll(it->second, &used);
      if (used == it->second.size()) return v;
    } catch (const std::exception&) {
    }
    return parse_iso8601(it->second);
  }

  Response query(const Request& req) {
    auto it = req.params.find("series");
    if (it == req.params.end()) throw ParseError(0, "missing 'series' parameter");
    const SeriesKey key = SeriesKey::parse(it->second);
    const TimeMs start = param_time(req, "start", std::numeric_limits<TimeMs>::min());
    const TimeMs end = param_time(req, "end", std::numeric_limits<TimeMs>::max());
    json pts = json::array();
    for (const auto& p : ds_.query_range(key, start, end)) pts.push_back({p.timestamp, p.value});
    return {200, json{{"series", key.str()}, {"points", std::move(pts)}}.dump()};
  }

  Response nodes(const Request& req) {
    const auto all_alerts = alerts_.all();
    json arr = json::array();
    for (const auto& e : registry_.entries()) {
      arr.push_back(registry_entry_to_json(e, derive_status(e, all_alerts, req.now, opts_.status_window)));
    }
    return {200, arr.dump()};
  }

  Response config(const Request& req, const std::string& node) {
    const auto entry = registry_.get(node);
    if (!entry) return error(404, "unknown node '" + node + "'");
    const json body = json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object()) throw ParseError(0, "config body must be a JSON object");
    std::vector<Command> cmds;
    if (body.contains("sampling_interval_min")) {
      const json& v = body["sampling_interval_min"];
      if (!v.is_number()) return error(422, "sampling_interval_min must be a number");
      const double minutes = v.get<double>();
      if (!(minutes >= entry->bounds.min_minutes && minutes <= entry->bounds.max_minutes)) {
        return error(422, "sampling interval outside [" + telemetry::format_decimal(entry->bounds.min_minutes) + ", " +
                              telemetry::format_decimal(entry->bounds.max_minutes) + "] minutes");
      }
      cmds.push_back({0, node, CommandKind::set_sampling_interval, minutes, {}, req.now});
    }
    if (body.contains("sensor")) {
      if (!body["sensor"].is_string() || !body.contains("enabled") || !body["enabled"].is_boolean()) {
        return error(422, "sensor toggle needs 'sensor' (string) and 'enabled' (bool)");
      }
      cmds.push_back({0, node, CommandKind::set_sensor_enabled, body["enabled"].get<bool>() ? 1.0 : 0.0,
                      body["sensor"].get<std::string>(), req.now});
    }
    if (cmds.empty()) return error(422, "nothing to configure");
    json ids = json::array();
    for (auto& c : cmds) ids.push_back(ds_.enqueue_command(c));
    return {202, json{{"node", node}, {"command_ids", std::move(ids)}}.dump()};
  }

  Response valve(const Request& req, const std::string& node) {
    if (!registry_.contains(node)) return error(404, "unknown node '" + node + "'");
    const json body = json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object() || !body.contains("opening") || !body["opening"].is_number()) {
      return error(422, "body must be {\"opening\": <0..1>}");
    }
    const double opening = body["opening"].get<double>();
    if (!(opening >= 0.0 && opening <= 1.0)) return error(422, "opening must be within [0, 1]");
    const auto id = ds_.enqueue_command({0, node, CommandKind::set_valve, opening, {}, req.now});
    return {202, json{{"node", node}, {"command_ids", json::array({id})}}.dump()};
  }

  Response alerts(const Request& req) {
    const TimeMs since = param_time(req, "since", std::numeric_limits<TimeMs>::min());
    json arr = json::array();
    for (const auto& a : alerts_.since(since)) arr.push_back(subs::alert_to_json(a));
    return {200, arr.dump()};
  }

  store::Datastore& ds_;
  subs::AlertLog& alerts_;
  telemetry::CredentialStore credentials_;
  ApiOptions opts_;
  NodeRegistry registry_;
  EventBus bus_;
};

/// Maps a node's wire message onto an API request.
inline Request to_request(const telemetry::WireMessage& msg, TimeMs now) {
  Request r;
  r.authorization = telemetry::basic_auth_header(msg.auth);
  r.now = now;
  r.body = msg.body;
  switch (msg.kind) {
    case telemetry::MessageKind::write_points: r.method = "POST"; r.path = "/api/v1/write"; break;
    case telemetry::MessageKind::fetch_commands: r.method = "GET"; r.path = "/api/v1/commands/" + msg.node_id; break;
    case telemetry::MessageKind::ack_command: r.method = "POST"; r.path = "/api/v1/ack"; break;
    default: throw DomainError("not a request message kind");
  }
  if (msg.auth.empty()) r.authorization.clear();
  return r;
}

/// Maps an API response back onto the wire message the node expects.
inline telemetry::WireMessage to_wire_response(const telemetry::WireMessage& req, const Response& resp) {
  telemetry::WireMessage out{telemetry::MessageKind::error, req.node_id, {}, resp.body};
  if (resp.status == 401) {
    out.kind = telemetry::MessageKind::auth_error;
  } else if (resp.status / 100 == 2) {
    switch (req.kind) {
      case telemetry::MessageKind::write_points: out.kind = telemetry::MessageKind::write_ack; break;
      case telemetry::MessageKind::fetch_commands: out.kind = telemetry::MessageKind::command_list; break;
      case telemetry::MessageKind::ack_command: out.kind = telemetry::MessageKind::write_ack; break;
      default: break;
    }
  }
  return out;
}

}  // namespace stormloop::api
