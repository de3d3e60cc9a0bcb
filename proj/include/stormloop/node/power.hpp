#pragma once

#include <algorithm>
#include <functional>
#include <utility>
#include <vector>

#include "stormloop/core/errors.hpp"
#include "stormloop/core/time.hpp"

namespace stormloop::node {

enum class PowerMode { sleeping, awake };

struct Battery {
  double charge_mah = 0.0;
  double voltage = 0.0;
  bool operator==(const Battery&) const = default;
};

/// Battery, load and solar charger of one node. The voltage curve maps the
/// state of charge (0..1) to terminal voltage; the default is the 3.7 V
/// lithium-ion profile, 3.0 V empty to 4.2 V full.
struct PowerModel {
  double capacity_mah = 2000.0;
  double sleep_current_ma = 0.5;
  double awake_current_ma = 120.0;
  double solar_charge_ma = 0.0;
  double cutoff_voltage = 3.2;
  std::vector<std::pair<double, double>> voltage_curve{{0.0, 3.0}, {1.0, 4.2}};

  void validate() const {
    if (!(capacity_mah > 0.0)) throw ConfigError("battery capacity must be > 0");
    if (sleep_current_ma < 0.0 || awake_current_ma < 0.0 || solar_charge_ma < 0.0) {
      throw ConfigError("power currents must be >= 0");
    }
    if (voltage_curve.size() < 2) throw ConfigError("voltage curve needs two points");
    for (std::size_t i = 1; i < voltage_curve.size(); ++i) {
      if (!(voltage_curve[i].first > voltage_curve[i - 1].first)) {
        throw ConfigError("voltage curve must be increasing in state of charge");
      }
    }
  }

  double voltage_at(double charge_mah) const {
    const double soc = std::clamp(charge_mah / capacity_mah, 0.0, 1.0);
    const auto& c = voltage_curve;
    if (soc <= c.front().first) return c.front().second;
    for (std::size_t i = 1; i < c.size(); ++i) {
      if (soc <= c[i].first) {
        const auto [s0, v0] = c[i - 1];
        const auto [s1, v1] = c[i];
        return v0 + (soc - s0) * (v1 - v0) / (s1 - s0);
      }
    }
    return c.back().second;
  }

  Battery battery_at(double charge_mah) const {
    const double q = std::clamp(charge_mah, 0.0, capacity_mah);
    return {q, voltage_at(q)};
  }
};

/// Net charge change over `dt_min` minutes in one mode. Solar input only
/// counts in daylight; the result is clamped to [0, capacity].
inline Battery power_step(const PowerModel& model, const Battery& battery, double dt_min, PowerMode mode,
                          bool daylight) {
  if (!(dt_min > 0.0)) throw DomainError("power_step: dt must be positive");
  const double draw = mode == PowerMode::awake ? model.awake_current_ma : model.sleep_current_ma;
  const double solar = daylight ? model.solar_charge_ma : 0.0;
  return model.battery_at(battery.charge_mah - (draw - solar) * dt_min / 60.0);
}

/// Sleeps from `from` to `to`, re-evaluating daylight at most every minute.
inline Battery sleep_between(const PowerModel& model, Battery battery, TimeMs from, TimeMs to,
                             const std::function<bool(TimeMs)>& daylight) {
  TimeMs t = from;
  while (t < to) {
    const TimeMs next = std::min(to, (t / kMsPerMinute + 1) * kMsPerMinute);
    battery = power_step(model, battery, ms_to_minutes(next - t), PowerMode::sleeping, daylight(t));
    t = next;
  }
  return battery;
}

}  // namespace stormloop::node
