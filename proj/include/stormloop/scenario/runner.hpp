#pragma once

// Discrete-event orchestration of one scenario. Events run in order of
// (time, kind priority, insertion sequence) with
//   hydro step < link delivery < node wake < subscription evaluation.
// A node's exchanges with the server are resolved inside its wake event; the
// server sees each request at its simulated arrival time, and writes schedule
// a link-delivery event that triggers on-write subscriptions at that time.

#include <atomic>
#include <chrono>
#include <memory>
#include <optional>
#include <queue>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "stormloop/core/errors.hpp"
#include "stormloop/core/time.hpp"
#include "stormloop/datastore/datastore.hpp"
#include "stormloop/hydro/watershed.hpp"
#include "stormloop/ingest/ingest.hpp"
#include "stormloop/node/node.hpp"
#include "stormloop/scenario/config.hpp"
#include "stormloop/scenario/metrics.hpp"
#include "stormloop/server/api.hpp"
#include "stormloop/server/http_server.hpp"
#include "stormloop/server/transport.hpp"
#include "stormloop/subscription/alerts.hpp"
#include "stormloop/subscription/engine.hpp"
#include "stormloop/telemetry/auth.hpp"
#include "stormloop/telemetry/line_protocol.hpp"
#include "stormloop/telemetry/link.hpp"

namespace stormloop::scenario {

enum class EventKind { hydro_step = 0, link_delivery = 1, node_wake = 2, subscription_eval = 3, operator_command = 4 };

/// Tiebreak priority within one timestamp. Operator commands come from the
/// application side and share the subscription slot.
inline int priority(EventKind k) {
  switch (k) {
    case EventKind::hydro_step: return 0;
    case EventKind::link_delivery: return 1;
    case EventKind::node_wake: return 2;
    case EventKind::subscription_eval:
    case EventKind::operator_command: return 3;
  }
  return 4;
}

struct Event {
  TimeMs t = 0;
  EventKind kind = EventKind::hydro_step;
  std::uint64_t seq = 0;
  std::size_t index = 0;          // node or operator-command index
  std::vector<SeriesKey> written;  // link delivery of a write

  /// Heap order: the smallest (t, priority, seq) on top.
  bool operator>(const Event& o) const {
    if (t != o.t) return t > o.t;
    if (priority(kind) != priority(o.kind)) return priority(kind) > priority(o.kind);
    return seq > o.seq;
  }
};

/// Seeds the per-run link RNG; documented so other tools can reproduce draws.
inline std::uint64_t link_seed(std::uint64_t scenario_seed) { return scenario_seed ^ 0x9e3779b97f4a7c15ULL; }

struct ActuationRecord {
  TimeMs at = 0;
  std::string node;
  node::Actuation actuation;
};

struct OperatorRecord {
  TimeMs at = 0;
  std::string node;
  int status = 0;
  std::vector<std::uint64_t> command_ids;
};

struct NodeSummary {
  std::string node_id;
  std::uint64_t cycles = 0;
  std::uint64_t skipped_cycles = 0;
  double charge_mah = 0.0;
  double voltage = 0.0;
  std::uint64_t dropped_points = 0;
  std::uint64_t failed_exchanges = 0;
  std::size_t buffered_points = 0;
  double sampling_interval_min = 0.0;
};

struct RunMetrics {
  Metrics controlled;
  std::optional<Metrics> counterfactual;
  std::optional<double> retention_increase_h;
  std::optional<ingest::ValidationMetrics> validation;
  std::vector<NodeSummary> nodes;
  std::size_t alerts = 0;
  std::size_t commands = 0;
  std::uint64_t events = 0;
};

inline nlohmann::json run_metrics_to_json(const RunMetrics& m) {
  nlohmann::json j;
  j["controlled"] = metrics_to_json(m.controlled);
  j["counterfactual"] = m.counterfactual ? metrics_to_json(*m.counterfactual) : nlohmann::json(nullptr);
  j["retention_increase_h"] = detail::opt(m.retention_increase_h);
  if (m.validation) {
    j["validation"] = {{"rmse_cms", m.validation->rmse},
                       {"peak_error", m.validation->peak_error},
                       {"volume_error", m.validation->volume_error},
                       {"samples", m.validation->samples}};
  } else {
    j["validation"] = nullptr;
  }
  j["nodes"] = nlohmann::json::array();
  for (const auto& n : m.nodes) {
    j["nodes"].push_back({{"node_id", n.node_id},
                          {"cycles", n.cycles},
                          {"skipped_cycles", n.skipped_cycles},
                          {"charge_mah", n.charge_mah},
                          {"voltage", n.voltage},
                          {"dropped_points", n.dropped_points},
                          {"failed_exchanges", n.failed_exchanges},
                          {"buffered_points", n.buffered_points},
                          {"sampling_interval_min", n.sampling_interval_min}});
  }
  j["alerts"] = m.alerts;
  j["commands"] = m.commands;
  j["events"] = m.events;
  return j;
}

/// Hydro-only run with the counterfactual's valves pinned; no nodes, no control.
inline std::pair<PlantTrace, hydro::HydroState> run_counterfactual(const ScenarioConfig& cfg) {
  hydro::HydroState state = hydro::make_initial_state(cfg.graph, cfg.start);
  if (cfg.counterfactual) {
    for (const auto& [id, opening] : cfg.counterfactual->valve_openings) {
      const auto ref = cfg.graph.resolve(id);
      state.valves[ref.index] = {opening, opening};
    }
  }
  PlantTrace trace(cfg.graph);
  trace.record(cfg.graph, state);
  const TimeMs dt = minutes_to_ms(cfg.hydro_dt_min);
  for (TimeMs t = cfg.start + dt; t <= cfg.end(); t += dt) {
    state = hydro::step_watershed(cfg.graph, std::move(state), cfg.rain_at(t - dt), cfg.hydro_dt_min);
    trace.record(cfg.graph, state);
  }
  return {std::move(trace), std::move(state)};
}

struct RunOptions {
  bool serve = false;
  double compress = 60.0;  // simulated seconds per wall second in serve mode
  api::HttpOptions http;
  bool counterfactual = true;
};

class Simulation {
 public:
  explicit Simulation(ScenarioConfig cfg, RunOptions opts = {})
      : cfg_(std::move(cfg)),
        opts_(std::move(opts)),
        link_(cfg_.link, link_seed(cfg_.seed)),
        api_(ds_, alerts_, credentials(cfg_)),
        transport_(api_, link_),
        engine_(ds_, alerts_, subs::EngineOptions{minutes_to_ms(cfg_.debounce_min)}),
        hydro_(hydro::make_initial_state(cfg_.graph, cfg_.start)),
        trace_(cfg_.graph),
        plant_(*this),
        now_(cfg_.start) {
    if (opts_.serve && !(opts_.compress > 0.0)) throw ConfigError("time compression must be > 0");
    ds_.on_command_event([this](const store::CommandEvent& ev) { command_events_.push_back(ev); });
    std::vector<std::string> ids;
    for (const auto& n : cfg_.nodes) {
      const auto& c = n.config;
      ids.push_back(c.node_id);
      api_.registry().add({c.node_id, n.description, n.lat, n.lon, std::nullopt, std::nullopt, std::nullopt, c.bounds,
                           c.valve_element.has_value()});
      engine_.set_interval_hint(c.node_id, c.sampling_interval_min);
      if (cfg_.redelivery_timeout_min) ds_.set_redelivery_timeout(c.node_id, minutes_to_ms(*cfg_.redelivery_timeout_min));
      configs_.push_back(c);
      states_.push_back(node::make_node_state(c, cfg_.start + n.first_wake_offset, n.initial_charge));
    }
    engine_.set_known_nodes(ids);
    for (const auto& s : cfg_.subscriptions) engine_.add(s);
    transport_.on_delivery([this](TimeMs at, const telemetry::WireMessage& req, const api::Response& resp) {
      if (req.kind != telemetry::MessageKind::write_points || resp.status != 200) return;
      std::vector<SeriesKey> keys;
      for (const auto& p : telemetry::decode_points(req.body)) {
        if (std::find(keys.begin(), keys.end(), p.series) == keys.end()) keys.push_back(p.series);
      }
      push(at, EventKind::link_delivery, 0, std::move(keys));
    });
  }

  Simulation(const Simulation&) = delete;
  Simulation& operator=(const Simulation&) = delete;

  ~Simulation() {
    if (http_) http_->stop();
  }

  /// Processes every event up to the scenario end. In serve mode the API is
  /// listening for the whole run and events are paced against the wall clock.
  void run() {
    if (ran_) throw Error("simulation already ran");
    ran_ = true;
    if (!cfg_.forecast.empty()) ingest::ingest_forecast(cfg_.forecast, ds_);
    if (cfg_.reference) ingest::ingest_gauge(cfg_.reference->gauge, ds_);
    trace_.record(cfg_.graph, hydro_);

    const TimeMs dt = minutes_to_ms(cfg_.hydro_dt_min);
    if (cfg_.start + dt <= cfg_.end()) push(cfg_.start + dt, EventKind::hydro_step);
    push(cfg_.start, EventKind::subscription_eval);
    for (std::size_t i = 0; i < states_.size(); ++i) {
      if (states_[i].next_wake < cfg_.end()) push(states_[i].next_wake, EventKind::node_wake, i);
    }
    for (std::size_t i = 0; i < cfg_.operator_commands.size(); ++i) {
      if (cfg_.operator_commands[i].at <= cfg_.end()) push(cfg_.operator_commands[i].at, EventKind::operator_command, i);
    }

    const auto wall0 = std::chrono::steady_clock::now();
    if (opts_.serve) {
      http_ = std::make_unique<api::HttpServer>(api_, [this] { return now_.load(); }, opts_.http);
      http_->start();
    }

    while (!queue_.empty()) {
      Event ev = queue_.top();
      queue_.pop();
      if (opts_.serve) {
        const double wall_ms = static_cast<double>(ev.t - cfg_.start) / opts_.compress;
        std::this_thread::sleep_until(wall0 + std::chrono::microseconds(static_cast<std::int64_t>(wall_ms * 1000.0)));
      }
      now_.store(ev.t);
      ++events_;
      dispatch(ev);
    }
    now_.store(cfg_.end());

    if (opts_.counterfactual && cfg_.counterfactual) {
      auto [trace, state] = run_counterfactual(cfg_);
      cf_trace_ = std::move(trace);
      cf_state_ = std::move(state);
    }
  }

  /// Port the API listens on in serve mode (-1 otherwise).
  int port() const { return http_ ? http_->port() : -1; }

  /// Stops the HTTP listener (serve mode keeps it up after run() until this or destruction).
  void stop_serving() {
    if (http_) http_->stop();
  }

  RunMetrics metrics() const {
    RunMetrics m;
    MetricsInput in;
    in.pond = cfg_.metrics.pond;
    in.wetland = cfg_.metrics.wetland;
    in.outlet = cfg_.metrics.outlet;
    in.storm_start = cfg_.storm_start();
    in.storm_end = cfg_.storm_end();
    in.retention_tolerance = cfg_.metrics.retention_tolerance;
    in.pond_drop_epsilon = cfg_.metrics.pond_drop_epsilon_m;
    in.wetland_rise_epsilon = cfg_.metrics.wetland_rise_epsilon_m;
    in.outlet_rise_epsilon = cfg_.metrics.outlet_rise_epsilon_cms;
    m.controlled = compute_metrics(trace_, cfg_.graph, hydro_, in);
    if (cf_trace_) {
      m.counterfactual = compute_metrics(*cf_trace_, cfg_.graph, *cf_state_, in);
      if (m.controlled.pond_retention_h && m.counterfactual->pond_retention_h) {
        m.retention_increase_h = *m.controlled.pond_retention_h - *m.counterfactual->pond_retention_h;
      }
    }
    if (cfg_.reference && trace_.rows() > 1) {
      try {
        m.validation = ingest::validate_against_reference(trace_.as_samples(cfg_.reference->element + ".flow"),
                                                          cfg_.reference->gauge.samples, cfg_.start, cfg_.end());
      } catch (const DomainError&) {
        m.validation.reset();
      }
    }
    for (std::size_t i = 0; i < states_.size(); ++i) {
      const auto& s = states_[i];
      m.nodes.push_back({configs_[i].node_id, s.cycles, s.skipped_cycles, s.battery.charge_mah, s.battery.voltage,
                         s.dropped_points, s.health.connection_attempts, s.buffer.size(),
                         configs_[i].sampling_interval_min});
    }
    m.alerts = alerts_.all().size();
    m.commands = ds_.all_commands().size();
    m.events = events_;
    return m;
  }

  const ScenarioConfig& config() const noexcept { return cfg_; }
  store::Datastore& datastore() noexcept { return ds_; }
  const store::Datastore& datastore() const noexcept { return ds_; }
  const subs::AlertLog& alerts() const noexcept { return alerts_; }
  api::ApiService& api() noexcept { return api_; }
  const subs::SubscriptionEngine& engine() const noexcept { return engine_; }
  const PlantTrace& trace() const noexcept { return trace_; }
  const std::optional<PlantTrace>& counterfactual_trace() const noexcept { return cf_trace_; }
  const hydro::HydroState& hydro_state() const noexcept { return hydro_; }
  const std::vector<node::NodeState>& node_states() const noexcept { return states_; }
  const std::vector<node::NodeConfig>& node_configs() const noexcept { return configs_; }
  /// Every value a node sampled, in sampling order: the ground truth for delivery checks.
  const std::vector<Point>& samples() const noexcept { return samples_; }
  const std::vector<ActuationRecord>& actuations() const noexcept { return actuations_; }
  const std::vector<OperatorRecord>& operator_records() const noexcept { return operator_records_; }
  const std::vector<store::CommandEvent>& command_events() const noexcept { return command_events_; }
  std::uint64_t events_processed() const noexcept { return events_; }
  TimeMs now() const noexcept { return now_.load(); }

 private:
  class HydroPlant final : public node::Plant {
   public:
    explicit HydroPlant(const Simulation& sim) : sim_(sim) {}
    double observe(const hydro::Binding& b) const override { return hydro::observe(sim_.cfg_.graph, sim_.hydro_, b); }
    bool daylight(TimeMs t) const override {
      const double hour = static_cast<double>(((t % kMsPerDay) + kMsPerDay) % kMsPerDay) / kMsPerHour;
      return hour >= sim_.cfg_.daylight_start_hour && hour < sim_.cfg_.daylight_end_hour;
    }

   private:
    const Simulation& sim_;
  };

  static telemetry::CredentialStore credentials(const ScenarioConfig& cfg) {
    telemetry::CredentialStore store;
    for (const auto& n : cfg.nodes) store.add(n.config.credentials);
    store.add(cfg.operator_credentials);
    return store;
  }

  void push(TimeMs t, EventKind kind, std::size_t index = 0, std::vector<SeriesKey> written = {}) {
    queue_.push(Event{t, kind, ++seq_, index, std::move(written)});
  }

  void dispatch(const Event& ev) {
    switch (ev.kind) {
      case EventKind::hydro_step: {
        const TimeMs dt = minutes_to_ms(cfg_.hydro_dt_min);
        hydro_ = hydro::step_watershed(cfg_.graph, std::move(hydro_), cfg_.rain_at(ev.t - dt), cfg_.hydro_dt_min);
        trace_.record(cfg_.graph, hydro_);
        if (ev.t + dt <= cfg_.end()) push(ev.t + dt, EventKind::hydro_step);
        break;
      }
      case EventKind::link_delivery:
        engine_.on_write(ev.t, ev.written);
        break;
      case EventKind::node_wake: wake(ev.index, ev.t); break;
      case EventKind::subscription_eval: {
        ds_.advance_clock(ev.t);
        engine_.evaluate(ev.t);
        const TimeMs next = ev.t + minutes_to_ms(cfg_.subscription_tick_min);
        if (next <= cfg_.end()) push(next, EventKind::subscription_eval);
        break;
      }
      case EventKind::operator_command: operator_command(ev.index, ev.t); break;
    }
  }

  void wake(std::size_t i, TimeMs t) {
    node::WakeResult r = node::wake_cycle(std::move(states_[i]), std::move(configs_[i]), t, transport_, plant_);
    states_[i] = std::move(r.state);
    configs_[i] = std::move(r.config);
    samples_.insert(samples_.end(), r.sampled.begin(), r.sampled.end());
    for (const auto& a : r.actions) {
      hydro::set_valve_target(cfg_.graph, hydro_, a.element, a.target);
      actuations_.push_back({t, configs_[i].node_id, a});
    }
    if (states_[i].next_wake < cfg_.end()) push(states_[i].next_wake, EventKind::node_wake, i);
  }

  void operator_command(std::size_t i, TimeMs t) {
    const auto& oc = cfg_.operator_commands[i];
    api::Request req;
    req.method = "POST";
    req.authorization = telemetry::basic_auth_header(cfg_.operator_credentials);
    req.now = t;
    nlohmann::json body;
    switch (oc.kind) {
      case CommandKind::set_valve:
        req.path = "/api/v1/nodes/" + oc.node + "/valve";
        body["opening"] = oc.value;
        break;
      case CommandKind::set_sampling_interval:
        req.path = "/api/v1/nodes/" + oc.node + "/config";
        body["sampling_interval_min"] = oc.value;
        break;
      case CommandKind::set_sensor_enabled:
        req.path = "/api/v1/nodes/" + oc.node + "/config";
        body["sensor"] = oc.sensor;
        body["enabled"] = oc.value != 0.0;
        break;
    }
    req.body = body.dump();
    const api::Response resp = api_.handle(req);
    OperatorRecord rec{t, oc.node, resp.status, {}};
    if (resp.status == 202) {
      rec.command_ids = nlohmann::json::parse(resp.body).at("command_ids").get<std::vector<std::uint64_t>>();
    }
    operator_records_.push_back(std::move(rec));
  }

  ScenarioConfig cfg_;
  RunOptions opts_;
  store::Datastore ds_;
  subs::AlertLog alerts_;
  telemetry::SimulatedLink link_;
  api::ApiService api_;
  api::SimulatedTransport transport_;
  subs::SubscriptionEngine engine_;
  hydro::HydroState hydro_;
  PlantTrace trace_;
  HydroPlant plant_;
  std::vector<node::NodeConfig> configs_;
  std::vector<node::NodeState> states_;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> queue_;
  std::uint64_t seq_ = 0;
  std::uint64_t events_ = 0;
  std::atomic<TimeMs> now_;
  bool ran_ = false;
  std::unique_ptr<api::HttpServer> http_;
  std::vector<Point> samples_;
  std::vector<ActuationRecord> actuations_;
  std::vector<OperatorRecord> operator_records_;
  std::vector<store::CommandEvent> command_events_;
  std::optional<PlantTrace> cf_trace_;
  std::optional<hydro::HydroState> cf_state_;
};

}  // namespace stormloop::scenario
