#pragma once

// Scenario files: one JSON document describing the watershed, the node fleet,
// the link, subscriptions, scripted rain and forecasts, and the calibration
// block. Times inside the file are minute offsets from `start` unless a field
// name says otherwise. Every cross reference is resolved at load time.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "stormloop/core/errors.hpp"
#include "stormloop/core/time.hpp"
#include "stormloop/hydro/watershed.hpp"
#include "stormloop/ingest/ingest.hpp"
#include "stormloop/node/node.hpp"
#include "stormloop/subscription/engine.hpp"
#include "stormloop/telemetry/link.hpp"

namespace stormloop::scenario {

using nlohmann::json;

struct RainStep {
  TimeMs at = 0;
  std::map<std::string, double> mmh;  // catchments not listed get no rain
};

struct NodeSpec {
  node::NodeConfig config;
  std::string description;
  double lat = 0.0;
  double lon = 0.0;
  double initial_charge = 1.0;  // fraction of capacity
  TimeMs first_wake_offset = 0;
};

struct Calibration {
  double storm_scale = 1.0;
  std::map<std::string, double> reach_delays_min;
  std::optional<double> safe_release_depth_m;
};

struct MetricsConfig {
  std::optional<std::string> pond;
  std::optional<std::string> wetland;
  std::optional<std::string> outlet;
  double retention_tolerance = 0.05;
  double pond_drop_epsilon_m = 0.002;
  double wetland_rise_epsilon_m = 0.002;
  double outlet_rise_epsilon_cms = 1e-4;
};

struct ReferenceFixture {
  std::string station;
  std::string element;  // simulated element compared against the gauge
  std::string path;
  ingest::ReferenceGauge gauge;
};

/// Hydro-only comparison run with some valves pinned and no control.
struct Counterfactual {
  std::map<std::string, double> valve_openings;
};

/// An operator action injected through the API at a scripted time.
struct OperatorCommand {
  TimeMs at = 0;
  std::string node;
  CommandKind kind = CommandKind::set_valve;
  double value = 0.0;
  std::string sensor;
};

struct ScenarioConfig {
  std::string name;
  TimeMs start = 0;
  double duration_hours = 24.0;
  double hydro_dt_min = 1.0;
  std::uint64_t seed = 0;
  Calibration calibration;
  hydro::WatershedGraph graph;
  std::vector<NodeSpec> nodes;
  telemetry::LinkModel link;
  std::vector<subs::Subscription> subscriptions;
  std::vector<RainStep> rainfall;
  std::vector<ingest::ForecastRecord> forecast;
  std::optional<ReferenceFixture> reference;
  MetricsConfig metrics;
  std::optional<Counterfactual> counterfactual;
  std::vector<OperatorCommand> operator_commands;
  double daylight_start_hour = 7.0;  // UTC
  double daylight_end_hour = 17.0;
  double subscription_tick_min = 1.0;
  std::optional<double> redelivery_timeout_min;
  double debounce_min = 60.0;
  telemetry::Credentials operator_credentials{"operator", "operator"};
  json document;  // effective document (seed applied); hashed into the manifest

  TimeMs end() const { return start + hours_to_ms(duration_hours); }

  /// Rain intensity per catchment in force at `t`, storm scale applied.
  hydro::RainfallMap rain_at(TimeMs t) const {
    hydro::RainfallMap out;
    const RainStep* current = nullptr;
    for (const auto& s : rainfall) {
      if (s.at > t) break;
      current = &s;
    }
    if (current) {
      for (const auto& [id, v] : current->mmh) out[id] = v * calibration.storm_scale;
    }
    return out;
  }

  /// End of the last step with any rain, or nullopt for a dry scenario.
  std::optional<TimeMs> storm_end() const {
    std::optional<TimeMs> end;
    for (std::size_t i = 0; i < rainfall.size(); ++i) {
      bool wet = false;
      for (const auto& [_, v] : rainfall[i].mmh) wet = wet || v > 0.0;
      if (wet) end = i + 1 < rainfall.size() ? rainfall[i + 1].at : this->end();
    }
    return end;
  }

  std::optional<TimeMs> storm_start() const {
    for (const auto& s : rainfall) {
      for (const auto& [_, v] : s.mmh) {
        if (v > 0.0) return s.at;
      }
    }
    return std::nullopt;
  }

  const NodeSpec* find_node(const std::string& id) const {
    for (const auto& n : nodes) {
      if (n.config.node_id == id) return &n;
    }
    return nullptr;
  }
};

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

namespace detail {

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("expected an object");
  }

  [[noreturn]] void fail(const std::string& msg) const { throw ConfigError(path_ + ": " + msg); }

  bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  const json& at(const char* key) const {
    if (!has(key)) fail(std::string("missing field '") + key + "'");
    return j_.at(key);
  }

  Reader obj(const char* key) const { return Reader(at(key), path_ + "." + key); }

  template <class T>
  T get(const char* key) const {
    try {
      return at(key).get<T>();
    } catch (const json::exception&) {
      fail(std::string("field '") + key + "' has the wrong type");
    }
  }

  template <class T>
  T get(const char* key, T fallback) const {
    return has(key) ? get<T>(key) : fallback;
  }

  double number(const char* key) const { return get<double>(key); }
  double number(const char* key, double fallback) const { return get<double>(key, fallback); }
  std::string str(const char* key) const { return get<std::string>(key); }
  std::string str(const char* key, std::string fallback) const { return get<std::string>(key, std::move(fallback)); }

  const json& raw() const noexcept { return j_; }
  const std::string& path() const noexcept { return path_; }

  std::vector<Reader> list(const char* key) const {
    std::vector<Reader> out;
    if (!has(key)) return out;
    const json& arr = j_.at(key);
    if (!arr.is_array()) fail(std::string("field '") + key + "' must be an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      out.emplace_back(arr[i], path_ + "." + key + "[" + std::to_string(i) + "]");
    }
    return out;
  }

 private:
  const json& j_;
  std::string path_;
};

inline TimeMs offset(const Reader& r, const char* key, TimeMs start) {
  return start + minutes_to_ms(r.number(key));
}

inline hydro::RatingCurve rating(const Reader& r) {
  return {r.number("coefficient"), r.number("exponent")};
}

inline hydro::StageStorageCurve stage_storage(const Reader& r) {
  if (r.has("area_m2")) return hydro::StageStorageCurve::prismatic(r.number("area_m2"));
  std::vector<std::pair<double, double>> pts;
  try {
    for (const auto& p : r.at("stage_storage")) pts.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
  } catch (const json::exception&) {
    r.fail("stage_storage must be a list of [depth_m, volume_l] pairs");
  }
  return hydro::StageStorageCurve(std::move(pts));
}

inline void load_watershed(const Reader& w, ScenarioConfig& cfg) {
  for (const auto& c : w.list("catchments")) {
    cfg.graph.add(hydro::Catchment{c.str("id"), c.number("area_km2"), c.number("runoff_coefficient"),
                                   c.number("reservoir_k_hours"), c.str("downstream")});
  }
  for (const auto& s : w.list("storages")) {
    hydro::StorageUnit su;
    su.id = s.str("id");
    const std::string kind = s.str("kind", "pond");
    if (kind == "pond") {
      su.kind = hydro::StorageKind::pond;
    } else if (kind == "wetland") {
      su.kind = hydro::StorageKind::wetland;
    } else {
      s.fail("kind must be pond or wetland");
    }
    su.stage_storage = stage_storage(s);
    su.capacity_l = s.number("capacity_l", 0.0);
    su.initial_volume_l = s.number("initial_volume_l", 0.0);
    su.downstream = s.str("downstream");
    if (s.has("valve")) {
      const auto v = s.obj("valve");
      su.outlet.diameter_m = v.number("diameter_m");
      su.outlet.discharge_coefficient = v.number("discharge_coefficient", 0.6);
      su.outlet.count = v.get<int>("count", 1);
      su.outlet.travel_rate_per_min = v.number("travel_rate_per_min", 0.10);
      su.outlet.initial_opening = v.number("initial_opening", 1.0);
    } else {
      su.outlet.count = 0;
    }
    if (s.has("overflow")) {
      const auto o = s.obj("overflow");
      su.overflow = hydro::OverflowWeir{o.number("crest_depth_m"), o.number("coefficient", 1.7), o.number("length_m")};
    }
    cfg.graph.add(std::move(su));
  }
  for (const auto& r : w.list("reaches")) {
    hydro::Reach reach{r.str("id"), r.number("pure_delay_min", 0.0), r.number("attenuation_k_hours"), std::nullopt,
                       r.str("downstream")};
    if (r.has("rating")) reach.rating = rating(r.obj("rating"));
    cfg.graph.add(std::move(reach));
  }
  for (const auto& o : w.list("outlets")) {
    hydro::Outlet out{o.str("id"), std::nullopt};
    if (o.has("rating")) out.rating = rating(o.obj("rating"));
    cfg.graph.add(std::move(out));
  }
  if (w.has("sediment")) {
    const auto s = w.obj("sediment");
    const auto pts = s.at("points");
    if (!pts.is_array() || pts.size() != 2) s.fail("points must hold two [flow_cms, mg_l] pairs");
    cfg.graph.set_sediment(hydro::SedimentModel::through(pts[0].at(0).get<double>(), pts[0].at(1).get<double>(),
                                                         pts[1].at(0).get<double>(), pts[1].at(1).get<double>()));
  }
}

inline node::PowerModel power(const Reader& p) {
  node::PowerModel m;
  m.capacity_mah = p.number("capacity_mah", m.capacity_mah);
  m.sleep_current_ma = p.number("sleep_current_ma", m.sleep_current_ma);
  m.awake_current_ma = p.number("awake_current_ma", m.awake_current_ma);
  m.solar_charge_ma = p.number("solar_charge_ma", m.solar_charge_ma);
  m.cutoff_voltage = p.number("cutoff_voltage", m.cutoff_voltage);
  if (p.has("voltage_curve")) {
    m.voltage_curve.clear();
    for (const auto& pt : p.at("voltage_curve")) m.voltage_curve.emplace_back(pt.at(0).get<double>(), pt.at(1).get<double>());
  }
  return m;
}

inline NodeSpec load_node(const Reader& n, const Reader* defaults) {
  auto pick = [&](const char* key, double fallback) {
    if (n.has(key)) return n.number(key);
    if (defaults && defaults->has(key)) return defaults->number(key);
    return fallback;
  };
  NodeSpec spec;
  auto& c = spec.config;
  c.node_id = n.str("id");
  spec.description = n.str("description", "");
  if (n.has("location")) {
    const auto& loc = n.at("location");
    spec.lat = loc.at(0).get<double>();
    spec.lon = loc.at(1).get<double>();
  }
  c.sampling_interval_min = pick("sampling_interval_min", 15.0);
  c.awake_window_s = pick("awake_window_s", 10.0);
  c.buffer_capacity = static_cast<std::size_t>(pick("buffer_capacity", 1024.0));
  spec.initial_charge = pick("initial_charge", 1.0);
  spec.first_wake_offset = seconds_to_ms(pick("first_wake_offset_s", 0.0));
  if (n.has("interval_bounds_min")) {
    c.bounds = {n.at("interval_bounds_min").at(0).get<double>(), n.at("interval_bounds_min").at(1).get<double>()};
  } else if (defaults && defaults->has("interval_bounds_min")) {
    c.bounds = {defaults->at("interval_bounds_min").at(0).get<double>(),
                defaults->at("interval_bounds_min").at(1).get<double>()};
  }
  for (const auto& s : n.list("sensors")) {
    c.sensors.push_back({s.str("id"), {s.str("element"), hydro::quantity_from_string(s.str("quantity"))},
                         s.get<bool>("enabled", true)});
  }
  if (n.has("valve_element")) c.valve_element = n.str("valve_element");
  c.credentials = {c.node_id, n.str("password", "pw-" + c.node_id)};
  if (n.has("power")) {
    c.power = power(n.obj("power"));
  } else if (defaults && defaults->has("power")) {
    c.power = power(defaults->obj("power"));
  }
  return spec;
}

inline SeriesKey series_key(const Reader& r, const char* key) {
  try {
    return SeriesKey::parse(r.str(key));
  } catch (const Error& e) {
    r.fail(e.what());
  }
}

inline subs::Subscription load_subscription(const Reader& s, const ScenarioConfig& cfg) {
  subs::Subscription sub;
  sub.id = s.str("id");
  const std::string kind = s.str("kind", "trigger");
  if (kind == "read") {
    sub.kind = subs::SubscriptionKind::read;
  } else if (kind == "write") {
    sub.kind = subs::SubscriptionKind::write;
  } else if (kind == "trigger") {
    sub.kind = subs::SubscriptionKind::trigger;
  } else {
    s.fail("kind must be read, write or trigger");
  }
  if (s.has("series")) {
    const std::string sel = s.str("series");
    const auto dot = sel.find('.');
    if (dot == std::string::npos) s.fail("series must be node.sensor (node may be *)");
    sub.series = {sel.substr(0, dot), sel.substr(dot + 1)};
  }
  sub.window_min = s.number("window_min", 60.0);
  sub.evaluation_interval_min = s.number("evaluation_interval_min", 5.0);
  sub.on_write = s.get<bool>("on_write", false);
  if (s.has("predicate")) {
    const auto p = s.obj("predicate");
    subs::Predicate pred;
    const std::string type = p.str("type");
    if (type == "above") {
      pred.type = subs::Predicate::Type::above;
    } else if (type == "below") {
      pred.type = subs::Predicate::Type::below;
    } else if (type == "silence") {
      pred.type = subs::Predicate::Type::silence;
    } else {
      p.fail("type must be above, below or silence");
    }
    pred.threshold = p.number("threshold", 0.0);
    pred.windows = p.get<int>("windows", 3);
    sub.predicate = pred;
  }
  if (s.has("alert")) {
    const auto a = s.obj("alert");
    sub.alert.severity = subs::severity_from_string(a.str("severity", "warning"));
    sub.alert.message = a.str("message", "");
  }
  if (s.has("rule")) {
    const auto r = s.obj("rule");
    const std::string type = r.str("type");
    if (type == "pid") {
      subs::PidRule pid;
      pid.measurement = series_key(r, "measurement");
      pid.valve_node = r.str("valve_node");
      pid.params.kp = r.number("kp");
      pid.params.ki = r.number("ki", 0.0);
      pid.params.kd = r.number("kd", 0.0);
      pid.params.setpoint = r.number("setpoint");
      pid.params.output_min = r.number("output_min", 0.0);
      pid.params.output_max = r.number("output_max", 1.0);
      pid.params.integral_min = r.number("integral_min", pid.params.integral_min);
      pid.params.integral_max = r.number("integral_max", pid.params.integral_max);
      pid.deadband = r.number("deadband", pid.deadband);
      pid.staleness_window_min = r.number("staleness_window_min", pid.staleness_window_min);
      sub.rule = pid;
    } else if (type == "adaptive_sampling") {
      subs::AdaptiveRule ad;
      if (r.has("forecast_series")) ad.policy.forecast_series = series_key(r, "forecast_series");
      ad.policy.rain_probability_threshold = r.number("threshold", ad.policy.rain_probability_threshold);
      ad.policy.fast_interval_min = r.number("fast_interval_min", ad.policy.fast_interval_min);
      ad.policy.slow_interval_min = r.number("slow_interval_min", ad.policy.slow_interval_min);
      ad.policy.lookahead_min = r.number("lookahead_min", ad.policy.lookahead_min);
      ad.policy.nodes = r.get<std::vector<std::string>>("nodes");
      sub.rule = ad;
    } else if (type == "hold_release") {
      subs::ReleaseConfig rel;
      rel.pond_depth = series_key(r, "pond_depth");
      rel.wetland_depth = series_key(r, "wetland_depth");
      rel.valve_node = r.str("valve_node");
      rel.safe_release_depth = cfg.calibration.safe_release_depth_m.value_or(r.number("safe_release_depth_m", 1.0));
      rel.hysteresis = r.number("hysteresis_m", rel.hysteresis);
      rel.release_opening = r.number("release_opening", rel.release_opening);
      rel.staleness_window_min = r.number("staleness_window_min", rel.staleness_window_min);
      rel.arm_on_rise = r.get<bool>("arm_on_rise", true);
      sub.rule = rel;
    } else {
      r.fail("unknown rule type '" + type + "'");
    }
  }
  return sub;
}

inline void check_node_ref(const ScenarioConfig& cfg, const std::string& node, const std::string& where) {
  if (!cfg.find_node(node)) throw ConfigError(where + ": unknown node '" + node + "'");
}

inline void check_series_ref(const ScenarioConfig& cfg, const SeriesKey& key, const std::string& where) {
  if (key.node == "ext" || key.node == "ctl") return;
  const NodeSpec* n = cfg.find_node(key.node);
  if (!n) throw ConfigError(where + ": unknown node '" + key.node + "'");
  const auto& sensors = n->config.sensors;
  const bool health = key.sensor == node::kBatterySeries || key.sensor == node::kSignalSeries ||
                      key.sensor == node::kAttemptsSeries;
  if (!health && std::none_of(sensors.begin(), sensors.end(), [&](const auto& s) { return s.sensor_id == key.sensor; })) {
    throw ConfigError(where + ": node '" + key.node + "' has no sensor '" + key.sensor + "'");
  }
}

inline void cross_check(const ScenarioConfig& cfg) {
  std::set<std::string> ids;
  for (const auto& n : cfg.nodes) {
    const auto& c = n.config;
    if (!ids.insert(c.node_id).second) throw ConfigError("duplicate node id '" + c.node_id + "'");
    if (c.node_id == "ext" || c.node_id == "ctl") throw ConfigError("node id '" + c.node_id + "' is reserved");
    c.validate();
    for (const auto& s : c.sensors) {
      try {
        hydro::check_binding(cfg.graph, s.binding);
      } catch (const ConfigError& e) {
        throw ConfigError("node '" + c.node_id + "' sensor '" + s.sensor_id + "': " + e.what());
      }
    }
    if (c.valve_element) {
      const auto ref = cfg.graph.find(*c.valve_element);
      if (!ref || ref->kind != hydro::ElementKind::storage) {
        throw ConfigError("node '" + c.node_id + "': valve element '" + *c.valve_element + "' is not a storage");
      }
    }
  }
  for (const auto& s : cfg.subscriptions) {
    const std::string where = "subscription '" + s.id + "'";
    if (!s.series.node.empty() && s.series.node != "*") check_series_ref(cfg, {s.series.node, s.series.sensor}, where);
    if (const auto* pid = std::get_if<subs::PidRule>(&s.rule)) {
      check_series_ref(cfg, pid->measurement, where);
      check_node_ref(cfg, pid->valve_node, where);
    } else if (const auto* ad = std::get_if<subs::AdaptiveRule>(&s.rule)) {
      for (const auto& n : ad->policy.nodes) check_node_ref(cfg, n, where);
    } else if (const auto* rel = std::get_if<subs::ReleaseConfig>(&s.rule)) {
      check_series_ref(cfg, rel->pond_depth, where);
      check_series_ref(cfg, rel->wetland_depth, where);
      check_node_ref(cfg, rel->valve_node, where);
    }
  }
  for (const auto& step : cfg.rainfall) {
    for (const auto& [id, v] : step.mmh) {
      const auto ref = cfg.graph.find(id);
      if (!ref || ref->kind != hydro::ElementKind::catchment) throw ConfigError("rainfall: unknown catchment '" + id + "'");
      if (!(v >= 0.0)) throw ConfigError("rainfall: negative intensity for '" + id + "'");
    }
  }
  for (const auto& oc : cfg.operator_commands) check_node_ref(cfg, oc.node, "operator command");
  for (const auto& w : cfg.link.outages) {
    for (const auto& n : w.nodes) check_node_ref(cfg, n, "link outage");
  }
  for (const auto& [n, _] : cfg.link.signal_strength_db) check_node_ref(cfg, n, "link signal");
  const auto& m = cfg.metrics;
  for (const auto* id : {&m.pond, &m.wetland}) {
    if (*id) {
      const auto ref = cfg.graph.find(**id);
      if (!ref || ref->kind != hydro::ElementKind::storage) throw ConfigError("metrics: '" + **id + "' is not a storage");
    }
  }
  if (m.outlet) (void)cfg.graph.resolve(*m.outlet);
  if (cfg.reference) (void)cfg.graph.resolve(cfg.reference->element);
  if (cfg.counterfactual) {
    for (const auto& [id, v] : cfg.counterfactual->valve_openings) {
      const auto ref = cfg.graph.find(id);
      if (!ref || ref->kind != hydro::ElementKind::storage) throw ConfigError("counterfactual: '" + id + "' has no valve");
      if (v < 0.0 || v > 1.0) throw ConfigError("counterfactual: opening for '" + id + "' outside [0,1]");
    }
  }
}

}  // namespace detail

/// Builds a scenario from a parsed document. `base_dir` resolves fixture paths.
/// `seed_override` replaces the file's seed. Throws ConfigError on any problem.
inline ScenarioConfig load_scenario(json doc, const std::filesystem::path& base_dir = {},
                                    std::optional<std::uint64_t> seed_override = std::nullopt) {
  if (seed_override) doc["seed"] = *seed_override;
  const detail::Reader r(doc, "scenario");
  ScenarioConfig cfg;
  cfg.name = r.str("name");
  try {
    cfg.start = parse_iso8601(r.str("start", "2016-12-02T00:00:00Z"));
  } catch (const ParseError& e) {
    r.fail(std::string("start: ") + e.what());
  }
  cfg.duration_hours = r.number("duration_hours");
  cfg.hydro_dt_min = r.number("hydro_dt_min", 1.0);
  if (!(cfg.duration_hours > 0.0)) r.fail("duration_hours must be > 0");
  if (!(cfg.hydro_dt_min > 0.0)) r.fail("hydro_dt_min must be > 0");
  if (!r.has("seed")) r.fail("seed is required");
  cfg.seed = r.get<std::uint64_t>("seed");

  if (r.has("calibration")) {
    const auto c = r.obj("calibration");
    cfg.calibration.storm_scale = c.number("storm_scale", 1.0);
    if (!(cfg.calibration.storm_scale >= 0.0)) c.fail("storm_scale must be >= 0");
    cfg.calibration.reach_delays_min = c.get<std::map<std::string, double>>("reach_delays_min", {});
    if (c.has("safe_release_depth_m")) cfg.calibration.safe_release_depth_m = c.number("safe_release_depth_m");
  }

  if (r.has("watershed")) detail::load_watershed(r.obj("watershed"), cfg);
  // Calibrated reach delays replace the nominal ones before the graph is frozen.
  if (!cfg.calibration.reach_delays_min.empty()) {
    hydro::WatershedGraph g;
    std::set<std::string> used;
    for (auto c : cfg.graph.catchments()) g.add(std::move(c));
    for (auto s : cfg.graph.storages()) g.add(std::move(s));
    for (auto reach : cfg.graph.reaches()) {
      if (auto it = cfg.calibration.reach_delays_min.find(reach.id); it != cfg.calibration.reach_delays_min.end()) {
        reach.pure_delay_min = it->second;
        used.insert(reach.id);
      }
      g.add(std::move(reach));
    }
    for (auto o : cfg.graph.outlets()) g.add(std::move(o));
    g.set_sediment(cfg.graph.sediment());
    for (const auto& [id, _] : cfg.calibration.reach_delays_min) {
      if (!used.count(id)) throw ConfigError("calibration: unknown reach '" + id + "'");
    }
    cfg.graph = std::move(g);
  }
  cfg.graph.finalize();

  std::optional<detail::Reader> defaults;
  if (r.has("node_defaults")) defaults.emplace(r.obj("node_defaults"));
  for (const auto& n : r.list("nodes")) cfg.nodes.push_back(detail::load_node(n, defaults ? &*defaults : nullptr));

  if (r.has("link")) {
    const auto l = r.obj("link");
    cfg.link.base_latency_ms = l.number("base_latency_ms", cfg.link.base_latency_ms);
    cfg.link.latency_jitter_ms = l.number("jitter_ms", cfg.link.latency_jitter_ms);
    cfg.link.loss_probability = l.number("loss_probability", 0.0);
    cfg.link.default_signal_db = l.number("default_signal_db", cfg.link.default_signal_db);
    cfg.link.signal_strength_db = l.get<std::map<std::string, double>>("signal_db", {});
    for (const auto& w : l.list("outages")) {
      cfg.link.outages.push_back({detail::offset(w, "start_min", cfg.start), detail::offset(w, "end_min", cfg.start),
                                  w.get<std::vector<std::string>>("nodes", {})});
    }
    try {
      cfg.link.validate();
    } catch (const ConfigError& e) {
      l.fail(e.what());
    }
  }

  for (const auto& s : r.list("subscriptions")) cfg.subscriptions.push_back(detail::load_subscription(s, cfg));

  for (const auto& step : r.list("rainfall")) {
    cfg.rainfall.push_back({detail::offset(step, "at_min", cfg.start), step.get<std::map<std::string, double>>("mmh")});
  }
  for (std::size_t i = 1; i < cfg.rainfall.size(); ++i) {
    if (cfg.rainfall[i].at <= cfg.rainfall[i - 1].at) throw ConfigError("rainfall steps must be in increasing time order");
  }

  if (r.has("forecast")) {
    const auto f = r.obj("forecast");
    if (f.has("file")) {
      const auto path = base_dir / f.str("file");
      std::ifstream in(path);
      if (!in) f.fail("cannot open '" + path.string() + "'");
      std::size_t rejected = 0;
      cfg.forecast = ingest::read_forecast_csv(in, &rejected);
      if (rejected) f.fail(std::to_string(rejected) + " malformed forecast rows");
    }
    for (const auto& rec : f.list("records")) {
      cfg.forecast.push_back({detail::offset(rec, "at_min", cfg.start), rec.number("probability"),
                              rec.number("intensity_mmh", 0.0), rec.number("horizon_min", 60.0)});
    }
  }

  if (r.has("fixtures")) {
    const auto fx = r.obj("fixtures");
    if (fx.has("reference_gauge")) {
      const auto g = fx.obj("reference_gauge");
      ReferenceFixture ref;
      ref.station = g.str("station");
      ref.element = g.str("element");
      ref.path = (base_dir / g.str("file")).string();
      try {
        ref.gauge = ingest::read_gauge_file(ref.path, ref.station);
      } catch (const ParseError& e) {
        g.fail(e.what());
      }
      cfg.reference = std::move(ref);
    }
  }

  if (r.has("metrics")) {
    const auto m = r.obj("metrics");
    if (m.has("pond")) cfg.metrics.pond = m.str("pond");
    if (m.has("wetland")) cfg.metrics.wetland = m.str("wetland");
    if (m.has("outlet")) cfg.metrics.outlet = m.str("outlet");
    cfg.metrics.retention_tolerance = m.number("retention_tolerance", cfg.metrics.retention_tolerance);
    cfg.metrics.pond_drop_epsilon_m = m.number("pond_drop_epsilon_m", cfg.metrics.pond_drop_epsilon_m);
    cfg.metrics.wetland_rise_epsilon_m = m.number("wetland_rise_epsilon_m", cfg.metrics.wetland_rise_epsilon_m);
    cfg.metrics.outlet_rise_epsilon_cms = m.number("outlet_rise_epsilon_cms", cfg.metrics.outlet_rise_epsilon_cms);
  }
  if (!cfg.metrics.outlet && cfg.graph.outlets().size() == 1) cfg.metrics.outlet = cfg.graph.outlets().front().id;

  if (r.has("counterfactual")) {
    cfg.counterfactual = Counterfactual{r.obj("counterfactual").get<std::map<std::string, double>>("valve_openings")};
  }

  for (const auto& oc : r.list("operator_commands")) {
    OperatorCommand c;
    c.at = detail::offset(oc, "at_min", cfg.start);
    c.node = oc.str("node");
    try {
      c.kind = command_kind_from_string(oc.str("kind"));
    } catch (const Error& e) {
      oc.fail(e.what());
    }
    c.value = oc.number("value");
    c.sensor = oc.str("sensor", "");
    cfg.operator_commands.push_back(std::move(c));
  }

  if (r.has("daylight_utc_hours")) {
    const auto& d = r.at("daylight_utc_hours");
    cfg.daylight_start_hour = d.at(0).get<double>();
    cfg.daylight_end_hour = d.at(1).get<double>();
  }
  cfg.subscription_tick_min = r.number("subscription_tick_min", 1.0);
  if (!(cfg.subscription_tick_min > 0.0)) r.fail("subscription_tick_min must be > 0");
  if (r.has("redelivery_timeout_min")) cfg.redelivery_timeout_min = r.number("redelivery_timeout_min");
  cfg.debounce_min = r.number("alert_debounce_min", cfg.debounce_min);
  if (r.has("operator")) {
    const auto op = r.obj("operator");
    cfg.operator_credentials = {op.str("username"), op.str("password")};
  }

  detail::cross_check(cfg);
  cfg.document = std::move(doc);
  return cfg;
}

inline ScenarioConfig load_scenario_file(const std::filesystem::path& path,
                                         std::optional<std::uint64_t> seed_override = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("scenario '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return load_scenario(std::move(doc), path.parent_path(), seed_override);
}

inline std::string config_hash(const ScenarioConfig& cfg) { return hex64(fnv1a64(cfg.document.dump())); }

}  // namespace stormloop::scenario
