#pragma once

// Lumped watershed model: linear-reservoir catchments feed valved storage
// units and delay+reservoir reaches, which drain to one or more outlets.
// All state lives in HydroState; WatershedGraph is immutable once finalized.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "stormloop/core/errors.hpp"
#include "stormloop/core/time.hpp"
#include "stormloop/hydro/hydraulics.hpp"

namespace stormloop::hydro {

struct Catchment {
  std::string id;
  double area_km2 = 1.0;
  double runoff_coefficient = 0.5;
  double reservoir_k_hours = 1.0;
  std::string downstream;
};

struct ValveOutlet {
  double diameter_m = 0.3;
  double discharge_coefficient = 0.6;
  int count = 1;                     // identical valves operated together
  double travel_rate_per_min = 0.10;  // max change in opening per minute
  double initial_opening = 1.0;
};

struct OverflowWeir {
  double crest_depth_m = 1.0;
  double coefficient = 1.7;
  double length_m = 5.0;
};

enum class StorageKind { pond, wetland };

struct StorageUnit {
  std::string id;
  StorageKind kind = StorageKind::pond;
  StageStorageCurve stage_storage;
  double capacity_l = 0.0;
  ValveOutlet outlet;
  std::optional<OverflowWeir> overflow;
  double initial_volume_l = 0.0;
  std::string downstream;
};

struct Reach {
  std::string id;
  double pure_delay_min = 0.0;
  double attenuation_k_hours = 0.5;
  std::optional<RatingCurve> rating;
  std::string downstream;
};

struct Outlet {
  std::string id;
  std::optional<RatingCurve> rating;
};

enum class ElementKind { catchment, storage, reach, outlet };

struct ElementRef {
  ElementKind kind;
  std::size_t index;
};

enum class Quantity { depth, flow, rainfall, concentration, volume, overflow, opening };

inline std::string to_string(Quantity q) {
  switch (q) {
    case Quantity::depth: return "depth";
    case Quantity::flow: return "flow";
    case Quantity::rainfall: return "rainfall";
    case Quantity::concentration: return "concentration";
    case Quantity::volume: return "volume";
    case Quantity::overflow: return "overflow";
    case Quantity::opening: return "opening";
  }
  return "?";
}

inline Quantity quantity_from_string(const std::string& s) {
  static const std::map<std::string, Quantity> table{
      {"depth", Quantity::depth},       {"flow", Quantity::flow},
      {"rainfall", Quantity::rainfall}, {"concentration", Quantity::concentration},
      {"volume", Quantity::volume},     {"overflow", Quantity::overflow},
      {"opening", Quantity::opening}};
  auto it = table.find(s);
  if (it == table.end()) throw ConfigError("unknown observable quantity '" + s + "'");
  return it->second;
}

/// What a sensor reads: one quantity at one element.
struct Binding {
  std::string element;
  Quantity quantity = Quantity::depth;
};

class WatershedGraph {
 public:
  void add(Catchment c) { catchments_.push_back(std::move(c)); finalized_ = false; }
  void add(StorageUnit s) { storages_.push_back(std::move(s)); finalized_ = false; }
  void add(Reach r) { reaches_.push_back(std::move(r)); finalized_ = false; }
  void add(Outlet o) { outlets_.push_back(std::move(o)); finalized_ = false; }

  void set_sediment(SedimentModel m) { sediment_ = m; }
  const SedimentModel& sediment() const noexcept { return sediment_; }

  /// Validates parameters and cross references and computes the routing order.
  /// Throws ConfigError on duplicate ids, dangling references, or cycles.
  void finalize() {
    index_.clear();
    auto put = [&](const std::string& id, ElementRef ref) {
      if (id.empty()) throw ConfigError("element with empty id");
      if (!index_.emplace(id, ref).second) throw ConfigError("duplicate element id '" + id + "'");
    };
    for (std::size_t i = 0; i < catchments_.size(); ++i) put(catchments_[i].id, {ElementKind::catchment, i});
    for (std::size_t i = 0; i < storages_.size(); ++i) put(storages_[i].id, {ElementKind::storage, i});
    for (std::size_t i = 0; i < reaches_.size(); ++i) put(reaches_[i].id, {ElementKind::reach, i});
    for (std::size_t i = 0; i < outlets_.size(); ++i) put(outlets_[i].id, {ElementKind::outlet, i});

    for (const auto& c : catchments_) {
      if (!(c.area_km2 > 0.0)) throw ConfigError("catchment '" + c.id + "': area must be > 0");
      if (c.runoff_coefficient < 0.0 || c.runoff_coefficient > 1.0) {
        throw ConfigError("catchment '" + c.id + "': runoff coefficient must be in [0,1]");
      }
      if (!(c.reservoir_k_hours > 0.0)) throw ConfigError("catchment '" + c.id + "': k must be > 0");
      routed_target(c.id, c.downstream);
    }
    for (const auto& s : storages_) {
      if (s.outlet.diameter_m < 0.0 || s.outlet.discharge_coefficient < 0.0 || s.outlet.count < 0 ||
          !(s.outlet.travel_rate_per_min > 0.0)) {
        throw ConfigError("storage '" + s.id + "': invalid valve outlet");
      }
      if (s.outlet.initial_opening < 0.0 || s.outlet.initial_opening > 1.0) {
        throw ConfigError("storage '" + s.id + "': initial opening must be in [0,1]");
      }
      if (s.initial_volume_l < 0.0) throw ConfigError("storage '" + s.id + "': negative initial volume");
      routed_target(s.id, s.downstream);
    }
    for (const auto& r : reaches_) {
      if (r.pure_delay_min < 0.0) throw ConfigError("reach '" + r.id + "': negative delay");
      if (!(r.attenuation_k_hours > 0.0)) throw ConfigError("reach '" + r.id + "': k must be > 0");
      routed_target(r.id, r.downstream);
    }

    // Kahn's algorithm over storages and reaches; outlets are sinks.
    order_.clear();
    std::unordered_map<std::string, int> indegree;
    for (const auto& s : storages_) indegree[s.id];
    for (const auto& r : reaches_) indegree[r.id];
    auto bump = [&](const std::string& ds) {
      if (index_.at(ds).kind != ElementKind::outlet) ++indegree[ds];
    };
    for (const auto& s : storages_) bump(s.downstream);
    for (const auto& r : reaches_) bump(r.downstream);
    std::deque<ElementRef> ready;
    for (std::size_t i = 0; i < storages_.size(); ++i) {
      if (indegree[storages_[i].id] == 0) ready.push_back({ElementKind::storage, i});
    }
    for (std::size_t i = 0; i < reaches_.size(); ++i) {
      if (indegree[reaches_[i].id] == 0) ready.push_back({ElementKind::reach, i});
    }
    while (!ready.empty()) {
      const ElementRef ref = ready.front();
      ready.pop_front();
      order_.push_back(ref);
      const std::string& ds = downstream_of(ref);
      const ElementRef next = index_.at(ds);
      if (next.kind == ElementKind::outlet) continue;
      if (--indegree[ds] == 0) ready.push_back(next);
    }
    if (order_.size() != storages_.size() + reaches_.size()) {
      throw ConfigError("watershed graph contains a routing cycle");
    }
    finalized_ = true;
  }

  bool finalized() const noexcept { return finalized_; }

  std::optional<ElementRef> find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  ElementRef resolve(const std::string& id) const {
    auto ref = find(id);
    if (!ref) throw ConfigError("unknown watershed element '" + id + "'");
    return *ref;
  }

  const std::vector<Catchment>& catchments() const noexcept { return catchments_; }
  const std::vector<StorageUnit>& storages() const noexcept { return storages_; }
  const std::vector<Reach>& reaches() const noexcept { return reaches_; }
  const std::vector<Outlet>& outlets() const noexcept { return outlets_; }
  const std::vector<ElementRef>& routing_order() const noexcept { return order_; }

  std::size_t slot(ElementRef ref) const noexcept {
    switch (ref.kind) {
      case ElementKind::catchment: return ref.index;
      case ElementKind::storage: return catchments_.size() + ref.index;
      case ElementKind::reach: return catchments_.size() + storages_.size() + ref.index;
      case ElementKind::outlet: return catchments_.size() + storages_.size() + reaches_.size() + ref.index;
    }
    return 0;
  }
  std::size_t element_count() const noexcept {
    return catchments_.size() + storages_.size() + reaches_.size() + outlets_.size();
  }

 private:
  void routed_target(const std::string& from, const std::string& to) const {
    auto it = index_.find(to);
    if (it == index_.end()) {
      throw ConfigError("element '" + from + "' drains to unknown element '" + to + "'");
    }
    if (it->second.kind == ElementKind::catchment) {
      throw ConfigError("element '" + from + "' cannot drain into catchment '" + to + "'");
    }
  }

  const std::string& downstream_of(ElementRef ref) const {
    return ref.kind == ElementKind::storage ? storages_[ref.index].downstream : reaches_[ref.index].downstream;
  }

  std::vector<Catchment> catchments_;
  std::vector<StorageUnit> storages_;
  std::vector<Reach> reaches_;
  std::vector<Outlet> outlets_;
  SedimentModel sediment_ = SedimentModel::through(0.28, 60.0, 0.60, 110.0);
  std::unordered_map<std::string, ElementRef> index_;
  std::vector<ElementRef> order_;
  bool finalized_ = false;
};

struct ValveState {
  double opening = 1.0;
  double target = 1.0;
  bool operator==(const ValveState&) const = default;
};

/// Water in transit through a reach's pure delay.
struct Parcel {
  TimeMs entered_at = 0;
  double liters = 0.0;
  bool operator==(const Parcel&) const = default;
};

struct ReachState {
  std::deque<Parcel> in_transit;
  double storage_l = 0.0;
  bool operator==(const ReachState&) const = default;
};

/// Per-element cumulative volumes, liters.
struct FluxLedger {
  double in_l = 0.0;
  double out_l = 0.0;
  bool operator==(const FluxLedger&) const = default;
};

struct HydroState {
  TimeMs time = 0;
  std::vector<double> catchment_storage_l;
  std::vector<double> storage_volume_l;
  std::vector<ValveState> valves;
  std::vector<ReachState> reaches;

  // Observables from the most recent step, indexed by WatershedGraph::slot().
  std::vector<double> flow_cms;
  std::vector<double> rainfall_mmh;     // catchments only
  std::vector<double> overflow_cms;     // storages only (weir part of flow_cms)
  std::vector<double> valve_flow_cms;   // storages only (orifice part of flow_cms)

  std::vector<FluxLedger> ledger;       // per element slot
  std::vector<double> overflow_volume_l;  // cumulative weir volume per storage
  std::vector<double> valve_volume_l;     // cumulative orifice volume per storage
  double runoff_in_l = 0.0;   // effective rainfall entering the system
  double outlet_out_l = 0.0;  // water that left through outlets
  double initial_storage_l = 0.0;

  bool operator==(const HydroState&) const = default;
};

inline double total_storage_l(const HydroState& s) {
  double total = 0.0;
  for (double v : s.catchment_storage_l) total += v;
  for (double v : s.storage_volume_l) total += v;
  for (const auto& r : s.reaches) {
    total += r.storage_l;
    for (const auto& p : r.in_transit) total += p.liters;
  }
  return total;
}

/// in - out - (storage - initial storage), liters.
inline double mass_balance_residual_l(const HydroState& s) {
  return s.runoff_in_l - s.outlet_out_l - (total_storage_l(s) - s.initial_storage_l);
}

inline HydroState make_initial_state(const WatershedGraph& graph, TimeMs start) {
  if (!graph.finalized()) throw ConfigError("watershed graph must be finalized before use");
  HydroState s;
  s.time = start;
  s.catchment_storage_l.assign(graph.catchments().size(), 0.0);
  for (const auto& su : graph.storages()) {
    s.storage_volume_l.push_back(su.initial_volume_l);
    s.valves.push_back({su.outlet.initial_opening, su.outlet.initial_opening});
  }
  s.reaches.assign(graph.reaches().size(), {});
  const std::size_t n = graph.element_count();
  s.flow_cms.assign(n, 0.0);
  s.rainfall_mmh.assign(graph.catchments().size(), 0.0);
  s.overflow_cms.assign(graph.storages().size(), 0.0);
  s.valve_flow_cms.assign(graph.storages().size(), 0.0);
  s.ledger.assign(n, {});
  s.overflow_volume_l.assign(graph.storages().size(), 0.0);
  s.valve_volume_l.assign(graph.storages().size(), 0.0);
  s.initial_storage_l = total_storage_l(s);
  return s;
}

/// Sets the commanded opening of a storage unit's valve; the stepper moves the
/// actual opening toward it at the valve's travel rate.
inline void set_valve_target(const WatershedGraph& graph, HydroState& state, const std::string& storage_id,
                             double target) {
  const ElementRef ref = graph.resolve(storage_id);
  if (ref.kind != ElementKind::storage) throw ConfigError("'" + storage_id + "' has no valve");
  state.valves[ref.index].target = std::clamp(target, 0.0, 1.0);
}

/// Per-catchment rainfall intensity, mm/h. Missing catchments receive no rain.
using RainfallMap = std::map<std::string, double>;

/// Advances the watershed by one explicit-Euler step of `dt_min` minutes.
/// Outflow from every element is limited to the water it holds, so storages
/// never go negative and the flux ledger balances exactly.
inline HydroState step_watershed(const WatershedGraph& graph, HydroState state, const RainfallMap& rainfall,
                                 double dt_min) {
  if (!(dt_min > 0.0)) throw DomainError("step_watershed: dt must be positive");
  if (!graph.finalized()) throw ConfigError("watershed graph must be finalized before use");
  for (const auto& [id, intensity] : rainfall) {
    auto ref = graph.find(id);
    if (!ref || ref->kind != ElementKind::catchment) {
      throw ConfigError("rainfall given for unknown catchment '" + id + "'");
    }
    if (!(intensity >= 0.0)) throw DomainError("rainfall intensity must be >= 0 for '" + id + "'");
  }

  const TimeMs dt_ms = minutes_to_ms(dt_min);
  const double dt_s = ms_to_seconds(dt_ms);
  const TimeMs t0 = state.time;
  std::vector<double> inflow_l(graph.element_count(), 0.0);

  const auto& catchments = graph.catchments();
  for (std::size_t i = 0; i < catchments.size(); ++i) {
    const Catchment& c = catchments[i];
    auto it = rainfall.find(c.id);
    const double intensity = it == rainfall.end() ? 0.0 : it->second;
    // mm/h over km^2 -> m^3/s is a factor of 1/3.6.
    const double runoff_l = c.runoff_coefficient * intensity * c.area_km2 / 3.6 * kLitersPerCubicMeter * dt_s;
    double& store = state.catchment_storage_l[i];
    double out_l = store / (c.reservoir_k_hours * 3600.0) * dt_s;
    out_l = std::min(out_l, store + runoff_l);
    store = std::max(0.0, store + runoff_l - out_l);

    const std::size_t slot = graph.slot({ElementKind::catchment, i});
    state.rainfall_mmh[i] = intensity;
    state.flow_cms[slot] = out_l / kLitersPerCubicMeter / dt_s;
    state.ledger[slot].in_l += runoff_l;
    state.ledger[slot].out_l += out_l;
    state.runoff_in_l += runoff_l;
    inflow_l[graph.slot(graph.resolve(c.downstream))] += out_l;
  }

  for (const ElementRef ref : graph.routing_order()) {
    const std::size_t slot = graph.slot(ref);
    const double in_l = inflow_l[slot];
    double out_l = 0.0;
    std::string_view downstream;

    if (ref.kind == ElementKind::storage) {
      const StorageUnit& su = graph.storages()[ref.index];
      ValveState& valve = state.valves[ref.index];
      const double max_move = su.outlet.travel_rate_per_min * dt_min;
      valve.opening = std::clamp(valve.opening + std::clamp(valve.target - valve.opening, -max_move, max_move),
                                 0.0, 1.0);

      double& volume = state.storage_volume_l[ref.index];
      const double depth = su.stage_storage.depth_at(volume);
      double q_valve = su.outlet.count *
                       valve_discharge(valve.opening, depth, su.outlet.diameter_m, su.outlet.discharge_coefficient);
      double q_weir = su.overflow ? weir_discharge(depth, su.overflow->crest_depth_m, su.overflow->coefficient,
                                                   su.overflow->length_m)
                                  : 0.0;
      const double wanted_l = (q_valve + q_weir) * kLitersPerCubicMeter * dt_s;
      const double available_l = volume + in_l;
      if (wanted_l > available_l && wanted_l > 0.0) {
        const double scale = available_l / wanted_l;
        q_valve *= scale;
        q_weir *= scale;
      }
      const double valve_l = std::min(q_valve * kLitersPerCubicMeter * dt_s, available_l);
      const double weir_l = std::min(q_weir * kLitersPerCubicMeter * dt_s, available_l - valve_l);
      out_l = valve_l + weir_l;
      volume = std::max(0.0, available_l - out_l);

      state.valve_flow_cms[ref.index] = valve_l / kLitersPerCubicMeter / dt_s;
      state.overflow_cms[ref.index] = weir_l / kLitersPerCubicMeter / dt_s;
      state.valve_volume_l[ref.index] += valve_l;
      state.overflow_volume_l[ref.index] += weir_l;
      downstream = su.downstream;
    } else {
      const Reach& r = graph.reaches()[ref.index];
      ReachState& rs = state.reaches[ref.index];
      if (in_l > 0.0) rs.in_transit.push_back({t0, in_l});
      const TimeMs delay_ms = minutes_to_ms(r.pure_delay_min);
      double released_l = 0.0;
      while (!rs.in_transit.empty() && rs.in_transit.front().entered_at + delay_ms <= t0) {
        released_l += rs.in_transit.front().liters;
        rs.in_transit.pop_front();
      }
      out_l = rs.storage_l / (r.attenuation_k_hours * 3600.0) * dt_s;
      out_l = std::min(out_l, rs.storage_l + released_l);
      rs.storage_l = std::max(0.0, rs.storage_l + released_l - out_l);
      downstream = r.downstream;
    }

    state.flow_cms[slot] = out_l / kLitersPerCubicMeter / dt_s;
    state.ledger[slot].in_l += in_l;
    state.ledger[slot].out_l += out_l;
    inflow_l[graph.slot(graph.resolve(std::string{downstream}))] += out_l;
  }

  for (std::size_t i = 0; i < graph.outlets().size(); ++i) {
    const std::size_t slot = graph.slot({ElementKind::outlet, i});
    state.flow_cms[slot] = inflow_l[slot] / kLitersPerCubicMeter / dt_s;
    state.ledger[slot].in_l += inflow_l[slot];
    state.ledger[slot].out_l += inflow_l[slot];
    state.outlet_out_l += inflow_l[slot];
  }

  state.time = t0 + dt_ms;
  return state;
}

/// Reads one observable from the current state. Pure.
inline double observe(const WatershedGraph& graph, const HydroState& state, const Binding& binding) {
  const ElementRef ref = graph.resolve(binding.element);
  const std::size_t slot = graph.slot(ref);
  auto bad = [&]() -> double {
    throw ConfigError("element '" + binding.element + "' has no observable '" + to_string(binding.quantity) + "'");
  };
  switch (binding.quantity) {
    case Quantity::flow: return state.flow_cms[slot];
    case Quantity::concentration: return sediment_concentration(graph.sediment(), state.flow_cms[slot]);
    case Quantity::rainfall:
      return ref.kind == ElementKind::catchment ? state.rainfall_mmh[ref.index] : bad();
    case Quantity::volume:
      return ref.kind == ElementKind::storage ? state.storage_volume_l[ref.index] : bad();
    case Quantity::overflow:
      return ref.kind == ElementKind::storage ? state.overflow_cms[ref.index] : bad();
    case Quantity::opening:
      return ref.kind == ElementKind::storage ? state.valves[ref.index].opening : bad();
    case Quantity::depth:
      switch (ref.kind) {
        case ElementKind::storage:
          return graph.storages()[ref.index].stage_storage.depth_at(state.storage_volume_l[ref.index]);
        case ElementKind::reach:
          if (const auto& rating = graph.reaches()[ref.index].rating) return rating->depth_for(state.flow_cms[slot]);
          return bad();
        case ElementKind::outlet:
          if (const auto& rating = graph.outlets()[ref.index].rating) return rating->depth_for(state.flow_cms[slot]);
          return bad();
        case ElementKind::catchment: return bad();
      }
  }
  return bad();
}

/// Throws ConfigError unless `binding` can be observed on `graph`.
inline void check_binding(const WatershedGraph& graph, const Binding& binding) {
  (void)observe(graph, make_initial_state(graph, 0), binding);
}

}  // namespace stormloop::hydro
