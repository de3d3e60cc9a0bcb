#pragma once

// Plant traces and the report metrics computed from them.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stormloop/core/errors.hpp"
#include "stormloop/core/time.hpp"
#include "stormloop/hydro/watershed.hpp"
#include "stormloop/ingest/ingest.hpp"

namespace stormloop::scenario {

/// True plant state sampled after every hydro step, one column per observable.
class PlantTrace {
 public:
  PlantTrace() = default;

  explicit PlantTrace(const hydro::WatershedGraph& g) {
    for (const auto& c : g.catchments()) {
      add(c.id, hydro::Quantity::rainfall);
      add(c.id, hydro::Quantity::flow);
    }
    for (const auto& s : g.storages()) {
      for (auto q : {hydro::Quantity::depth, hydro::Quantity::volume, hydro::Quantity::flow, hydro::Quantity::overflow,
                     hydro::Quantity::opening}) {
        add(s.id, q);
      }
      valve_flow_.push_back(columns_.size());
      names_.push_back(s.id + ".valve_flow");
      columns_.emplace_back();
    }
    for (const auto& r : g.reaches()) {
      add(r.id, hydro::Quantity::flow);
      if (r.rating) add(r.id, hydro::Quantity::depth);
    }
    for (const auto& o : g.outlets()) {
      add(o.id, hydro::Quantity::flow);
      add(o.id, hydro::Quantity::concentration);
      if (o.rating) add(o.id, hydro::Quantity::depth);
    }
  }

  void record(const hydro::WatershedGraph& g, const hydro::HydroState& s) {
    times_.push_back(s.time);
    for (std::size_t i = 0; i < bindings_.size(); ++i) columns_[bindings_[i].first].push_back(hydro::observe(g, s, bindings_[i].second));
    for (std::size_t i = 0; i < valve_flow_.size(); ++i) columns_[valve_flow_[i]].push_back(s.valve_flow_cms[i]);
  }

  const std::vector<TimeMs>& times() const noexcept { return times_; }
  const std::vector<std::string>& names() const noexcept { return names_; }

  bool has(const std::string& name) const { return std::find(names_.begin(), names_.end(), name) != names_.end(); }

  const std::vector<double>& column(const std::string& name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) throw ConfigError("plant trace has no column '" + name + "'");
    return columns_[static_cast<std::size_t>(it - names_.begin())];
  }

  /// Value at or before `t` (first row if `t` precedes the trace).
  double value_at(const std::string& name, TimeMs t) const {
    const auto& col = column(name);
    auto it = std::upper_bound(times_.begin(), times_.end(), t);
    const std::size_t i = it == times_.begin() ? 0 : static_cast<std::size_t>(it - times_.begin()) - 1;
    return col.at(i);
  }

  std::size_t rows() const noexcept { return times_.size(); }

  std::vector<ingest::GaugeSample> as_samples(const std::string& name) const {
    const auto& col = column(name);
    std::vector<ingest::GaugeSample> out(times_.size());
    for (std::size_t i = 0; i < times_.size(); ++i) out[i] = {times_[i], col[i]};
    return out;
  }

 private:
  void add(const std::string& id, hydro::Quantity q) {
    bindings_.emplace_back(columns_.size(), hydro::Binding{id, q});
    names_.push_back(id + "." + hydro::to_string(q));
    columns_.emplace_back();
  }

  std::vector<TimeMs> times_;
  std::vector<std::string> names_;
  std::vector<std::vector<double>> columns_;
  std::vector<std::pair<std::size_t, hydro::Binding>> bindings_;
  std::vector<std::size_t> valve_flow_;
};

// ---- series arithmetic ------------------------------------------------

/// Trapezoidal integral of v over t, in value-seconds, restricted to [from, to].
inline double trapezoid(const std::vector<TimeMs>& t, const std::vector<double>& v, TimeMs from, TimeMs to) {
  if (t.size() != v.size()) throw DomainError("trapezoid: length mismatch");
  double total = 0.0;
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (t[i - 1] < from || t[i] > to) continue;
    total += 0.5 * (v[i] + v[i - 1]) * ms_to_seconds(t[i] - t[i - 1]);
  }
  return total;
}

inline double trapezoid(const std::vector<TimeMs>& t, const std::vector<double>& v) {
  if (t.empty()) return 0.0;
  return trapezoid(t, v, t.front(), t.back());
}

struct Peak {
  double value = 0.0;
  TimeMs at = 0;
};

inline Peak peak_of(const std::vector<TimeMs>& t, const std::vector<double>& v) {
  Peak p;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i == 0 || v[i] > p.value) p = {v[i], t[i]};
  }
  return p;
}

/// First time at or after `from` when v exceeds its running minimum since
/// `from` by more than `eps`.
inline std::optional<TimeMs> first_rise(const std::vector<TimeMs>& t, const std::vector<double>& v, TimeMs from,
                                        double eps) {
  std::optional<double> low;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] < from) continue;
    if (!low || v[i] < *low) low = v[i];
    if (v[i] > *low + eps) return t[i];
  }
  return std::nullopt;
}

/// First time at or after `from` when v falls below its running maximum since `from` by more than `eps`.
inline std::optional<TimeMs> first_drop(const std::vector<TimeMs>& t, const std::vector<double>& v, TimeMs from,
                                        double eps) {
  std::vector<double> neg(v.size());
  std::transform(v.begin(), v.end(), neg.begin(), [](double x) { return -x; });
  return first_rise(t, neg, from, eps);
}

/// Hours from `storm_end` until the volume, after its storm peak, is back
/// within `tolerance` of the excess over the pre-storm volume. Nullopt if it
/// never returns within the trace.
inline std::optional<double> retention_hours(const std::vector<TimeMs>& t, const std::vector<double>& volume,
                                             TimeMs storm_start, TimeMs storm_end, double tolerance) {
  if (t.empty()) return std::nullopt;
  auto it = std::upper_bound(t.begin(), t.end(), storm_start);
  const std::size_t pre_idx = it == t.begin() ? 0 : static_cast<std::size_t>(it - t.begin()) - 1;
  const double pre = volume[pre_idx];
  std::size_t peak_idx = pre_idx;
  for (std::size_t i = pre_idx; i < t.size(); ++i) {
    if (volume[i] > volume[peak_idx]) peak_idx = i;
  }
  const double excess = volume[peak_idx] - pre;
  if (excess <= 0.0) return 0.0;
  const double target = pre + tolerance * excess;
  for (std::size_t i = peak_idx; i < t.size(); ++i) {
    if (t[i] < storm_end) continue;
    if (volume[i] <= target) return ms_to_hours(t[i] - storm_end);
  }
  return std::nullopt;
}

// ---- report metrics ---------------------------------------------------

struct Sequencing {
  std::optional<TimeMs> release_start;
  std::optional<TimeMs> pond_drop;
  std::optional<TimeMs> wetland_rise;
  std::optional<TimeMs> outlet_rise;

  std::optional<double> pond_to_wetland_h() const {
    if (!pond_drop || !wetland_rise) return std::nullopt;
    return ms_to_hours(*wetland_rise - *pond_drop);
  }
  std::optional<double> wetland_to_outlet_h() const {
    if (!wetland_rise || !outlet_rise) return std::nullopt;
    return ms_to_hours(*outlet_rise - *wetland_rise);
  }
};

struct MassBalance {
  double in_l = 0.0;
  double out_l = 0.0;
  double storage_change_l = 0.0;
  double residual_l = 0.0;
  double relative = 0.0;  // |residual| / max(in, initial storage, 1 L)
};

inline MassBalance mass_balance(const hydro::HydroState& s) {
  MassBalance m;
  m.in_l = s.runoff_in_l;
  m.out_l = s.outlet_out_l;
  m.storage_change_l = hydro::total_storage_l(s) - s.initial_storage_l;
  m.residual_l = m.in_l - m.out_l - m.storage_change_l;
  m.relative = std::abs(m.residual_l) / std::max({m.in_l, s.initial_storage_l, 1.0});
  return m;
}

struct Metrics {
  double peak_outlet_flow_cms = 0.0;
  TimeMs peak_outlet_at = 0;
  double outlet_volume_l = 0.0;
  std::optional<double> pond_retention_h;
  double wetland_overflow_l = 0.0;
  std::map<std::string, double> overflow_l;  // every storage with a weir
  double peak_sediment_mg_l = 0.0;
  double release_volume_l = 0.0;
  Sequencing sequencing;
  MassBalance mass;
};

struct MetricsInput {
  std::optional<std::string> pond;
  std::optional<std::string> wetland;
  std::optional<std::string> outlet;
  std::optional<TimeMs> storm_start;
  std::optional<TimeMs> storm_end;
  double retention_tolerance = 0.05;
  double pond_drop_epsilon = 0.002;
  double wetland_rise_epsilon = 0.002;
  double outlet_rise_epsilon = 1e-4;
};

/// Release start: the beginning of the first step after `after` in which a
/// valve that was shut at `after` starts to open. Nullopt if it was already open.
inline std::optional<TimeMs> release_start(const PlantTrace& trace, const std::string& pond, TimeMs after) {
  if (trace.rows() == 0 || trace.value_at(pond + ".opening", after) > 0.0) return std::nullopt;
  const auto& t = trace.times();
  const auto& opening = trace.column(pond + ".opening");
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (t[i] > after && opening[i] > 0.0) return std::max(t[i - 1], after);
  }
  return std::nullopt;
}

inline Metrics compute_metrics(const PlantTrace& trace, const hydro::WatershedGraph& graph, const hydro::HydroState& final_state,
                               const MetricsInput& in) {
  Metrics m;
  const auto& t = trace.times();
  if (in.outlet) {
    const auto& q = trace.column(*in.outlet + ".flow");
    const Peak p = peak_of(t, q);
    m.peak_outlet_flow_cms = p.value;
    m.peak_outlet_at = p.at;
    m.outlet_volume_l = trapezoid(t, q) * hydro::kLitersPerCubicMeter;
    m.peak_sediment_mg_l = hydro::sediment_concentration(graph.sediment(), p.value);
  }
  for (const auto& s : graph.storages()) {
    if (!s.overflow) continue;
    m.overflow_l[s.id] = trapezoid(t, trace.column(s.id + ".overflow")) * hydro::kLitersPerCubicMeter;
  }
  if (in.wetland && m.overflow_l.count(*in.wetland)) m.wetland_overflow_l = m.overflow_l.at(*in.wetland);

  if (in.pond && in.storm_start && in.storm_end) {
    m.pond_retention_h =
        retention_hours(t, trace.column(*in.pond + ".volume"), *in.storm_start, *in.storm_end, in.retention_tolerance);
    auto& seq = m.sequencing;
    seq.release_start = release_start(trace, *in.pond, *in.storm_end);
    if (seq.release_start) {
      m.release_volume_l =
          trapezoid(t, trace.column(*in.pond + ".valve_flow"), *seq.release_start, t.back()) * hydro::kLitersPerCubicMeter;
      seq.pond_drop = first_drop(t, trace.column(*in.pond + ".depth"), *seq.release_start, in.pond_drop_epsilon);
      if (seq.pond_drop && in.wetland) {
        seq.wetland_rise = first_rise(t, trace.column(*in.wetland + ".depth"), *seq.pond_drop, in.wetland_rise_epsilon);
      }
      if (seq.wetland_rise && in.outlet) {
        seq.outlet_rise = first_rise(t, trace.column(*in.outlet + ".flow"), *seq.wetland_rise, in.outlet_rise_epsilon);
      }
    }
  }
  m.mass = mass_balance(final_state);
  return m;
}

namespace detail {
inline nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }
inline nlohmann::json opt_time(const std::optional<TimeMs>& v) {
  return v ? nlohmann::json(format_iso8601(*v)) : nlohmann::json(nullptr);
}
}  // namespace detail

inline nlohmann::json metrics_to_json(const Metrics& m) {
  nlohmann::json j;
  j["peak_outlet_flow_cms"] = m.peak_outlet_flow_cms;
  j["peak_outlet_at"] = format_iso8601(m.peak_outlet_at);
  j["cumulative_outlet_volume_l"] = m.outlet_volume_l;
  j["pond_retention_h"] = detail::opt(m.pond_retention_h);
  j["wetland_overflow_volume_l"] = m.wetland_overflow_l;
  j["overflow_volume_l"] = m.overflow_l;
  j["peak_sediment_mg_l"] = m.peak_sediment_mg_l;
  j["release_volume_l"] = m.release_volume_l;
  const auto& s = m.sequencing;
  j["sequencing"] = {{"release_start", detail::opt_time(s.release_start)},
                     {"pond_drop", detail::opt_time(s.pond_drop)},
                     {"wetland_rise", detail::opt_time(s.wetland_rise)},
                     {"outlet_rise", detail::opt_time(s.outlet_rise)},
                     {"pond_to_wetland_h", detail::opt(s.pond_to_wetland_h())},
                     {"wetland_to_outlet_h", detail::opt(s.wetland_to_outlet_h())}};
  j["mass_balance"] = {{"in_l", m.mass.in_l},
                       {"out_l", m.mass.out_l},
                       {"storage_change_l", m.mass.storage_change_l},
                       {"residual_l", m.mass.residual_l},
                       {"relative", m.mass.relative}};
  return j;
}

}  // namespace stormloop::scenario
