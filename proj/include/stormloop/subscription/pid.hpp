#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "stormloop/core/errors.hpp"

namespace stormloop::subs {

struct PidParams {
  double kp = 1.0;
  double ki = 0.0;
  double kd = 0.0;
  double setpoint = 0.0;
  double output_min = 0.0;
  double output_max = 1.0;
  double integral_min = -std::numeric_limits<double>::infinity();
  double integral_max = std::numeric_limits<double>::infinity();
};

struct PidState {
  double integral = 0.0;
  double prev_error = 0.0;
  bool operator==(const PidState&) const = default;
};

struct PidOutput {
  double output = 0.0;
  PidState state;
};

/// One controller update with error e = setpoint - measurement and dt in minutes.
///
/// The derivative acts on the error. The integrator is clamped to
/// [integral_min, integral_max] and frozen whenever integrating would push an
/// already saturated output further out of range.
inline PidOutput pid_step(const PidParams& p, double measurement, const PidState& state, double dt_min) {
  if (!(dt_min > 0.0)) throw DomainError("pid_step: dt must be positive");
  if (!std::isfinite(measurement)) throw DomainError("pid_step: measurement must be finite");
  const double error = p.setpoint - measurement;
  const double derivative = p.kd * (error - state.prev_error) / dt_min;
  const double proportional = p.kp * error;

  const double candidate = std::clamp(state.integral + error * dt_min, p.integral_min, p.integral_max);
  const double unclamped = proportional + p.ki * candidate + derivative;
  const bool winding_up = (unclamped > p.output_max && p.ki * error > 0.0) ||
                          (unclamped < p.output_min && p.ki * error < 0.0);
  const double integral = winding_up ? std::clamp(state.integral, p.integral_min, p.integral_max) : candidate;

  const double output = std::clamp(proportional + p.ki * integral + derivative, p.output_min, p.output_max);
  return {output, {integral, error}};
}

}  // namespace stormloop::subs
