#pragma once

// Subscriptions read from the datastore, write derived series, or trigger
// actions (alerts and queued node commands) when their condition holds.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "stormloop/core/errors.hpp"
#include "stormloop/core/time.hpp"
#include "stormloop/datastore/datastore.hpp"
#include "stormloop/subscription/alerts.hpp"
#include "stormloop/subscription/pid.hpp"

namespace stormloop::subs {

// ---- adaptive sampling ------------------------------------------------

struct AdaptiveSamplingPolicy {
  SeriesKey forecast_series{"ext", "precip_prob"};
  double rain_probability_threshold = 0.5;
  double fast_interval_min = 3.0;
  double slow_interval_min = 15.0;
  double lookahead_min = 60.0;
  std::vector<std::string> nodes;

  void validate() const {
    if (!(fast_interval_min < slow_interval_min)) throw ConfigError("adaptive sampling: fast must be < slow");
    if (rain_probability_threshold < 0.0 || rain_probability_threshold > 1.0) {
      throw ConfigError("adaptive sampling: threshold must be in [0,1]");
    }
  }
};

struct AdaptiveDecision {
  std::optional<double> interval_min;  // set only when it differs from the current one
  bool forecast_missing = false;
  double probability = 0.0;
};

/// Picks the fast interval when the highest forecast rain probability in
/// [now, now + lookahead) reaches the threshold, else the slow one. Falls back
/// to the latest forecast at or before `now` when nothing is in the window.
inline AdaptiveDecision adaptive_sampling(const AdaptiveSamplingPolicy& policy, const store::Datastore& ds,
                                          TimeMs now, double current_interval_min) {
  AdaptiveDecision d;
  const auto ahead = ds.query_range(policy.forecast_series, now, now + minutes_to_ms(policy.lookahead_min));
  if (!ahead.empty()) {
    for (const auto& p : ahead) d.probability = std::max(d.probability, p.value);
  } else if (auto last = ds.query_at_or_before(policy.forecast_series, now)) {
    d.probability = last->value;
  } else {
    d.forecast_missing = true;
    return d;
  }
  const double target = d.probability >= policy.rain_probability_threshold ? policy.fast_interval_min
                                                                            : policy.slow_interval_min;
  if (target != current_interval_min) d.interval_min = target;
  return d;
}

// ---- hold-and-release -------------------------------------------------

struct ReleaseConfig {
  SeriesKey pond_depth;
  SeriesKey wetland_depth;
  std::string valve_node;
  double safe_release_depth = 1.0;
  double hysteresis = 0.1;
  double release_opening = 1.0;
  double staleness_window_min = 45.0;
  bool arm_on_rise = true;  // release only after the wetland has been above the safe depth once
};

struct ReleaseState {
  bool armed = false;
  std::optional<double> commanded;
  bool operator==(const ReleaseState&) const = default;
};

struct ReleaseDecision {
  std::optional<double> valve_command;  // new opening, only on change
  bool stale = false;
  ReleaseState state;
};

/// Holds the valve shut while the downstream wetland is above the safe depth
/// and opens it once the wetland has receded below safe depth minus the
/// hysteresis band. Inside the band the previous command stands. Missing or
/// stale data fails closed.
inline ReleaseDecision setpoint_release(const ReleaseConfig& cfg, ReleaseState state, const store::Datastore& ds,
                                        TimeMs now) {
  ReleaseDecision d;
  const auto wet = ds.query_at_or_before(cfg.wetland_depth, now);
  const auto pond = ds.query_at_or_before(cfg.pond_depth, now);
  const TimeMs limit = minutes_to_ms(cfg.staleness_window_min);
  double desired = state.commanded.value_or(0.0);
  if (!wet || !pond || now - wet->timestamp > limit) {
    d.stale = true;
    desired = 0.0;
  } else if (wet->value > cfg.safe_release_depth) {
    state.armed = true;
    desired = 0.0;
  } else if (wet->value < cfg.safe_release_depth - cfg.hysteresis) {
    desired = (state.armed || !cfg.arm_on_rise) ? cfg.release_opening : 0.0;
  }
  if (!state.commanded || *state.commanded != desired) {
    d.valve_command = desired;
    state.commanded = desired;
  }
  d.state = state;
  return d;
}

// ---- subscriptions ----------------------------------------------------

enum class SubscriptionKind { read, write, trigger };

/// `node == "*"` matches every node that has the sensor (or is known to the engine).
struct SeriesSelector {
  std::string node;
  std::string sensor;
};

struct Predicate {
  enum class Type { above, below, silence } type = Type::above;
  double threshold = 0.0;
  int windows = 3;  // silence: evaluation intervals without data
};

struct AlertAction {
  Severity severity = Severity::warning;
  std::string message;
};

struct PidRule {
  SeriesKey measurement;
  std::string valve_node;
  PidParams params;
  double deadband = 0.005;
  double staleness_window_min = 45.0;
};

struct AdaptiveRule {
  AdaptiveSamplingPolicy policy;
};

using Rule = std::variant<std::monostate, PidRule, AdaptiveRule, ReleaseConfig>;

struct Subscription {
  std::string id;
  SubscriptionKind kind = SubscriptionKind::trigger;
  SeriesSelector series;
  double window_min = 60.0;
  std::optional<Predicate> predicate;
  AlertAction alert;
  Rule rule;
  double evaluation_interval_min = 5.0;
  bool on_write = false;  // also evaluate whenever one of its series is written

  // Runtime memory.
  TimeMs next_due = 0;
  TimeMs last_evaluated = 0;
  std::map<std::string, TimeMs> last_fired;
  PidState pid_state;
  std::optional<double> last_output;
  ReleaseState release_state;
  bool errored = false;
  std::string error;
  std::uint64_t evaluations = 0;
};

struct SeriesWrite {
  std::vector<Point> points;
};

struct ReadResult {
  std::string subscription;
  std::vector<Point> points;
};

using Action = std::variant<Alert, Command, SeriesWrite, ReadResult>;

struct EngineOptions {
  TimeMs debounce_window = 60 * kMsPerMinute;
};

class SubscriptionEngine {
 public:
  SubscriptionEngine(store::Datastore& ds, AlertLog& alerts, EngineOptions opts = {})
      : ds_(ds), alerts_(alerts), opts_(opts) {}

  void add(Subscription s) {
    if (s.id.empty()) throw ConfigError("subscription without id");
    if (!(s.evaluation_interval_min > 0.0)) throw ConfigError("subscription '" + s.id + "': bad interval");
    if (s.kind == SubscriptionKind::trigger && !s.predicate) {
      throw ConfigError("trigger subscription '" + s.id + "' needs a predicate");
    }
    if (s.kind == SubscriptionKind::write && std::holds_alternative<std::monostate>(s.rule)) {
      throw ConfigError("write subscription '" + s.id + "' needs a rule");
    }
    if (auto* a = std::get_if<AdaptiveRule>(&s.rule)) a->policy.validate();
    for (const auto& existing : subs_) {
      if (existing.id == s.id) throw ConfigError("duplicate subscription id '" + s.id + "'");
    }
    subs_.push_back(std::move(s));
  }

  /// Nodes that exist even if they have not reported yet (for wildcard silence checks).
  void set_known_nodes(std::vector<std::string> nodes) { known_nodes_ = std::move(nodes); }

  /// Last interval the engine believes each node runs at; used to avoid re-sending the same command.
  void set_interval_hint(const std::string& node, double minutes) { interval_hint_[node] = minutes; }
  std::optional<double> interval_hint(const std::string& node) const {
    auto it = interval_hint_.find(node);
    return it == interval_hint_.end() ? std::nullopt : std::optional<double>(it->second);
  }

  /// Evaluates every subscription whose time has come. Each is evaluated once.
  std::vector<Action> evaluate(TimeMs now) {
    if (!started_) {
      started_ = true;
      start_ = now;
    }
    std::vector<Action> actions;
    for (auto& s : subs_) {
      if (now < s.next_due) continue;
      run_one(s, now, actions);
      s.next_due = now + minutes_to_ms(s.evaluation_interval_min);
    }
    return actions;
  }

  /// Evaluates on-write subscriptions whose selector matches one of `written`.
  std::vector<Action> on_write(TimeMs now, std::span<const SeriesKey> written) {
    if (!started_) {
      started_ = true;
      start_ = now;
    }
    std::vector<Action> actions;
    for (auto& s : subs_) {
      if (!s.on_write) continue;
      const bool hit = std::any_of(written.begin(), written.end(), [&](const SeriesKey& k) {
        return k.sensor == s.series.sensor && (s.series.node == "*" || s.series.node == k.node);
      });
      if (hit) run_one(s, now, actions);
    }
    return actions;
  }

  const std::vector<Subscription>& subscriptions() const noexcept { return subs_; }
  const std::vector<Command>& issued_commands() const noexcept { return issued_; }

 private:
  std::vector<SeriesKey> expand(const SeriesSelector& sel) const {
    if (sel.node != "*") return {{sel.node, sel.sensor}};
    std::set<SeriesKey> keys;
    for (const auto& k : ds_.list_series()) {
      if (k.sensor == sel.sensor) keys.insert(k);
    }
    for (const auto& n : known_nodes_) keys.insert({n, sel.sensor});
    return {keys.begin(), keys.end()};
  }

  void run_one(Subscription& s, TimeMs now, std::vector<Action>& actions) {
    ++s.evaluations;
    std::vector<Action> local;
    try {
      switch (s.kind) {
        case SubscriptionKind::read: run_read(s, now, local); break;
        case SubscriptionKind::trigger: run_trigger(s, now, local); break;
        case SubscriptionKind::write: run_rule(s, now, local); break;
      }
      s.errored = false;
      s.error.clear();
    } catch (const std::exception& e) {
      s.errored = true;
      s.error = e.what();
      return;
    }
    s.last_evaluated = now;
    for (auto& a : local) actions.push_back(apply(std::move(a)));
  }

  Action apply(Action a) {
    if (auto* alert = std::get_if<Alert>(&a)) {
      *alert = alerts_.persist(std::move(*alert));
    } else if (auto* cmd = std::get_if<Command>(&a)) {
      cmd->id = ds_.enqueue_command(*cmd);
      cmd->state = CommandState::pending;
      if (cmd->kind == CommandKind::set_sampling_interval) interval_hint_[cmd->node] = cmd->value;
      issued_.push_back(*cmd);
    } else if (auto* w = std::get_if<SeriesWrite>(&a)) {
      ds_.write_points(w->points);
    }
    return a;
  }

  bool debounced(Subscription& s, const std::string& subject, TimeMs now) {
    auto it = s.last_fired.find(subject);
    if (it != s.last_fired.end() && now - it->second < opts_.debounce_window) return true;
    s.last_fired[subject] = now;
    return false;
  }

  void run_read(Subscription& s, TimeMs now, std::vector<Action>& out) {
    ReadResult r{s.id, {}};
    for (const auto& key : expand(s.series)) {
      auto pts = ds_.query_range(key, now - minutes_to_ms(s.window_min), now + 1);
      r.points.insert(r.points.end(), pts.begin(), pts.end());
    }
    out.emplace_back(std::move(r));
  }

  void run_trigger(Subscription& s, TimeMs now, std::vector<Action>& out) {
    const Predicate& pred = *s.predicate;
    for (const auto& key : expand(s.series)) {
      std::string detail;
      bool fire = false;
      if (pred.type == Predicate::Type::silence) {
        const auto last = ds_.query_at_or_before(key, now);
        const TimeMs since = last ? last->timestamp : start_;
        const TimeMs limit = pred.windows * minutes_to_ms(s.evaluation_interval_min);
        fire = now - since > limit;
        detail = "no data since " + format_iso8601(since);
      } else {
        const auto last = ds_.query_at_or_before(key, now);
        if (!last || now - last->timestamp > minutes_to_ms(s.window_min)) continue;
        fire = pred.type == Predicate::Type::above ? last->value > pred.threshold : last->value < pred.threshold;
        detail = key.str() + "=" + telemetry::format_decimal(last->value) +
                 (pred.type == Predicate::Type::above ? " above " : " below ") +
                 telemetry::format_decimal(pred.threshold);
      }
      if (!fire || debounced(s, key.node, now)) continue;
      const std::string msg = s.alert.message.empty() ? detail : s.alert.message + ": " + detail;
      out.emplace_back(Alert{0, s.alert.severity, key.node, msg, now, s.id});
    }
  }

  void run_rule(Subscription& s, TimeMs now, std::vector<Action>& out) {
    if (auto* pid = std::get_if<PidRule>(&s.rule)) {
      const auto m = ds_.query_at_or_before(pid->measurement, now);
      if (!m || now - m->timestamp > minutes_to_ms(pid->staleness_window_min)) return;
      const double dt = s.evaluations > 1 && s.last_evaluated < now ? ms_to_minutes(now - s.last_evaluated)
                                                                     : s.evaluation_interval_min;
      const PidOutput r = pid_step(pid->params, m->value, s.pid_state, dt);
      s.pid_state = r.state;
      out.emplace_back(SeriesWrite{{Point{{"ctl", s.id}, now, r.output}}});
      if (!s.last_output || std::abs(*s.last_output - r.output) >= pid->deadband) {
        s.last_output = r.output;
        out.emplace_back(Command{0, pid->valve_node, CommandKind::set_valve, r.output, {}, now});
      }
    } else if (auto* ad = std::get_if<AdaptiveRule>(&s.rule)) {
      const auto& policy = ad->policy;
      for (const auto& node : policy.nodes) {
        const double current = interval_hint(node).value_or(policy.slow_interval_min);
        const AdaptiveDecision d = adaptive_sampling(policy, ds_, now, current);
        if (d.forecast_missing) {
          if (!debounced(s, node, now)) {
            out.emplace_back(Alert{0, Severity::info, node, "forecast series " + policy.forecast_series.str() +
                                                               " missing; sampling unchanged", now, s.id});
          }
          continue;
        }
        if (d.interval_min) {
          interval_hint_[node] = *d.interval_min;
          out.emplace_back(Command{0, node, CommandKind::set_sampling_interval, *d.interval_min, {}, now});
        }
      }
    } else if (auto* rel = std::get_if<ReleaseConfig>(&s.rule)) {
      const ReleaseDecision d = setpoint_release(*rel, s.release_state, ds_, now);
      s.release_state = d.state;
      if (d.stale && !debounced(s, rel->valve_node, now)) {
        out.emplace_back(Alert{0, Severity::warning, rel->valve_node,
                               "wetland depth data stale; holding valve closed", now, s.id});
      }
      if (d.valve_command) {
        out.emplace_back(Command{0, rel->valve_node, CommandKind::set_valve, *d.valve_command, {}, now});
      }
    }
  }

  store::Datastore& ds_;
  AlertLog& alerts_;
  EngineOptions opts_;
  std::vector<Subscription> subs_;
  std::vector<std::string> known_nodes_;
  std::map<std::string, double> interval_hint_;
  std::vector<Command> issued_;
  bool started_ = false;
  TimeMs start_ = 0;
};

}  // namespace stormloop::subs
