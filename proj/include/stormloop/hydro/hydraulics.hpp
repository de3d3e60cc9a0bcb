#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "stormloop/core/errors.hpp"

namespace stormloop::hydro {

inline constexpr double kGravity = 9.81;  // m/s^2
inline constexpr double kLitersPerCubicMeter = 1000.0;

/// Orifice flow through a (partially) opened valve, m^3/s.
///
/// Q = opening * cd * (pi d^2 / 4) * sqrt(2 g head). The opening scales the
/// flow area linearly.
inline double valve_discharge(double opening, double head_m, double diameter_m, double cd) {
  if (opening < 0.0 || head_m < 0.0 || diameter_m < 0.0 || cd < 0.0) {
    throw DomainError("valve_discharge: inputs must be non-negative");
  }
  if (opening > 1.0) throw DomainError("valve_discharge: opening must be <= 1");
  const double area = std::numbers::pi * diameter_m * diameter_m / 4.0;
  return opening * cd * area * std::sqrt(2.0 * kGravity * head_m);
}

/// Rectangular weir, Q = C L h^1.5 for h above the crest, m^3/s.
inline double weir_discharge(double depth_m, double crest_depth_m, double coefficient, double length_m) {
  const double over = depth_m - crest_depth_m;
  if (over <= 0.0) return 0.0;
  return coefficient * length_m * over * std::sqrt(over);
}

/// Suspended sediment proxy, affine in flow.
struct SedimentModel {
  double c0_mg_l = 0.0;
  double slope_mg_l_per_cms = 0.0;

  /// The line through two (flow, concentration) observations.
  static SedimentModel through(double flow_a, double conc_a, double flow_b, double conc_b) {
    if (flow_a == flow_b) throw DomainError("SedimentModel::through: flows must differ");
    const double slope = (conc_b - conc_a) / (flow_b - flow_a);
    return {conc_a - slope * flow_a, slope};
  }
};

inline double sediment_concentration(const SedimentModel& model, double flow_cms) {
  return std::max(0.0, model.c0_mg_l + model.slope_mg_l_per_cms * flow_cms);
}

/// Strictly increasing piecewise-linear depth (m) -> volume (L) curve anchored at (0, 0).
/// Beyond the last breakpoint the final segment is extrapolated.
class StageStorageCurve {
 public:
  StageStorageCurve() : StageStorageCurve(prismatic(1.0)) {}

  explicit StageStorageCurve(std::vector<std::pair<double, double>> depth_volume)
      : pts_(std::move(depth_volume)) {
    if (pts_.empty() || pts_.front().first != 0.0 || pts_.front().second != 0.0) {
      pts_.insert(pts_.begin(), {0.0, 0.0});
    }
    if (pts_.size() < 2) throw ConfigError("stage-storage curve needs at least one non-zero breakpoint");
    for (std::size_t i = 1; i < pts_.size(); ++i) {
      if (!(pts_[i].first > pts_[i - 1].first) || !(pts_[i].second > pts_[i - 1].second)) {
        throw ConfigError("stage-storage curve must be strictly increasing in depth and volume");
      }
    }
  }

  /// Vertical walls: volume = area * depth.
  static StageStorageCurve prismatic(double area_m2) {
    if (!(area_m2 > 0.0)) throw ConfigError("prismatic storage area must be positive");
    return StageStorageCurve({{0.0, 0.0}, {1.0, area_m2 * kLitersPerCubicMeter}});
  }

  double volume_at(double depth_m) const {
    if (depth_m <= 0.0) return 0.0;
    const std::size_t i = segment_by(depth_m, [](const auto& p) { return p.first; });
    const auto& [d0, v0] = pts_[i];
    const auto& [d1, v1] = pts_[i + 1];
    return v0 + (depth_m - d0) * (v1 - v0) / (d1 - d0);
  }

  double depth_at(double volume_l) const {
    if (volume_l <= 0.0) return 0.0;
    const std::size_t i = segment_by(volume_l, [](const auto& p) { return p.second; });
    const auto& [d0, v0] = pts_[i];
    const auto& [d1, v1] = pts_[i + 1];
    return d0 + (volume_l - v0) * (d1 - d0) / (v1 - v0);
  }

  const std::vector<std::pair<double, double>>& points() const noexcept { return pts_; }

 private:
  template <class Key>
  std::size_t segment_by(double x, Key key) const {
    auto it = std::upper_bound(pts_.begin(), pts_.end(), x,
                               [&](double v, const auto& p) { return v < key(p); });
    std::size_t idx = static_cast<std::size_t>(std::distance(pts_.begin(), it));
    if (idx == 0) return 0;
    return std::min(idx - 1, pts_.size() - 2);
  }

  std::vector<std::pair<double, double>> pts_;
};

/// Power-law stage rating for open channels: depth = coefficient * Q^exponent.
struct RatingCurve {
  double coefficient = 0.5;
  double exponent = 0.6;

  double depth_for(double flow_cms) const {
    return flow_cms <= 0.0 ? 0.0 : coefficient * std::pow(flow_cms, exponent);
  }
};

}  // namespace stormloop::hydro
