#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "stormloop/scenario/runner.hpp"
#include "stormloop/telemetry/line_protocol.hpp"

namespace stormloop::scenario {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

/// Field targets for the hold-and-release experiment.
struct HoldReleaseTargets {
  double uncontrolled_peak_cms = 0.60;
  double uncontrolled_peak_tolerance = 0.05;  // relative
  double controlled_peak_max_cms = 0.30;
  double release_volume_l = 19e6;
  double release_volume_tolerance = 0.10;  // relative
  double retention_increase_min_h = 48.0;
  double sediment_max_mg_l = 60.0;
  double pond_to_wetland_h = 2.0;
  double wetland_to_outlet_h = 3.0;
  double sequencing_tolerance_h = 0.5;
  double mass_balance_max = 1e-6;
};

namespace detail {
inline std::string num(double v) { return telemetry::format_decimal(v); }
inline std::string num(const std::optional<double>& v) { return v ? num(*v) : std::string("none"); }
}  // namespace detail

inline std::vector<CheckResult> mass_balance_checks(const RunMetrics& m, double limit = 1e-6) {
  std::vector<CheckResult> out;
  out.push_back({"mass balance (controlled)", m.controlled.mass.relative <= limit,
                 "relative residual " + detail::num(m.controlled.mass.relative)});
  if (m.counterfactual) {
    out.push_back({"mass balance (uncontrolled)", m.counterfactual->mass.relative <= limit,
                   "relative residual " + detail::num(m.counterfactual->mass.relative)});
  }
  return out;
}

inline std::vector<CheckResult> hold_release_checks(const RunMetrics& m, const HoldReleaseTargets& t = {}) {
  std::vector<CheckResult> out;
  if (!m.counterfactual) {
    out.push_back({"counterfactual present", false, "scenario has no counterfactual block"});
    return out;
  }
  const auto& c = m.controlled;
  const auto& u = *m.counterfactual;
  out.push_back({"uncontrolled peak calibrated",
                 std::abs(u.peak_outlet_flow_cms - t.uncontrolled_peak_cms) <= t.uncontrolled_peak_tolerance * t.uncontrolled_peak_cms,
                 detail::num(u.peak_outlet_flow_cms) + " m3/s"});
  out.push_back({"controlled outlet peak", c.peak_outlet_flow_cms <= t.controlled_peak_max_cms,
                 detail::num(c.peak_outlet_flow_cms) + " m3/s"});
  out.push_back({"controlled release volume",
                 std::abs(c.release_volume_l - t.release_volume_l) <= t.release_volume_tolerance * t.release_volume_l,
                 detail::num(c.release_volume_l) + " L"});
  out.push_back({"retention increase", m.retention_increase_h && *m.retention_increase_h >= t.retention_increase_min_h,
                 detail::num(m.retention_increase_h) + " h"});
  out.push_back({"wetland overflow", c.wetland_overflow_l == 0.0 && u.wetland_overflow_l > 0.0,
                 detail::num(c.wetland_overflow_l) + " L controlled, " + detail::num(u.wetland_overflow_l) + " L uncontrolled"});
  out.push_back({"peak sediment", c.peak_sediment_mg_l <= t.sediment_max_mg_l,
                 detail::num(c.peak_sediment_mg_l) + " mg/L controlled, " + detail::num(u.peak_sediment_mg_l) + " mg/L uncontrolled"});
  const auto pw = c.sequencing.pond_to_wetland_h();
  const auto wo = c.sequencing.wetland_to_outlet_h();
  out.push_back({"pond drop precedes wetland rise", pw && std::abs(*pw - t.pond_to_wetland_h) <= t.sequencing_tolerance_h,
                 detail::num(pw) + " h"});
  out.push_back({"wetland rise precedes outlet rise", wo && std::abs(*wo - t.wetland_to_outlet_h) <= t.sequencing_tolerance_h,
                 detail::num(wo) + " h"});
  for (auto& r : mass_balance_checks(m, t.mass_balance_max)) out.push_back(std::move(r));
  return out;
}

}  // namespace stormloop::scenario
