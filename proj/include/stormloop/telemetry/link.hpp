#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "stormloop/core/errors.hpp"
#include "stormloop/core/time.hpp"

namespace stormloop::telemetry {

struct OutageWindow {
  TimeMs start = 0;
  TimeMs end = 0;  // exclusive
  std::vector<std::string> nodes;  // empty: every node

  bool covers(const std::string& node, TimeMs t) const {
    if (t < start || t >= end) return false;
    if (nodes.empty()) return true;
    for (const auto& n : nodes) {
      if (n == node) return true;
    }
    return false;
  }
};

/// Fault characteristics of the simulated cellular link.
struct LinkModel {
  double base_latency_ms = 250.0;
  double latency_jitter_ms = 500.0;  // uniform in [0, jitter)
  double loss_probability = 0.0;
  std::vector<OutageWindow> outages;
  std::map<std::string, double> signal_strength_db;
  double default_signal_db = -75.0;

  void validate() const {
    if (loss_probability < 0.0 || loss_probability >= 1.0) {
      throw ConfigError("link loss probability must be in [0, 1)");
    }
    if (base_latency_ms < 0.0 || latency_jitter_ms < 0.0) throw ConfigError("link latency must be >= 0");
    for (const auto& w : outages) {
      if (w.end < w.start) throw ConfigError("outage window ends before it starts");
    }
  }

  double signal_for(const std::string& node) const {
    auto it = signal_strength_db.find(node);
    return it == signal_strength_db.end() ? default_signal_db : it->second;
  }

  bool in_outage(const std::string& node, TimeMs t) const {
    for (const auto& w : outages) {
      if (w.covers(node, t)) return true;
    }
    return false;
  }
};

/// Uniform [0,1) from the raw 64-bit engine output. Avoids the
/// implementation-defined std::uniform_real_distribution so a seed reproduces
/// the same draws on every standard library.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

struct LinkOutcome {
  bool delivered = false;
  TimeMs at = 0;  // arrival time when delivered

  static LinkOutcome dropped() { return {}; }
  bool operator==(const LinkOutcome&) const = default;
};

/// One traversal of the link by a message from/to `node` sent at `now`.
inline LinkOutcome link_transmit(const std::string& node, const LinkModel& link, std::mt19937_64& rng, TimeMs now) {
  if (link.in_outage(node, now)) return LinkOutcome::dropped();
  if (uniform01(rng) < link.loss_probability) return LinkOutcome::dropped();
  const double latency = link.base_latency_ms + link.latency_jitter_ms * uniform01(rng);
  return {true, now + static_cast<TimeMs>(latency)};
}

enum class Direction { uplink, downlink };

/// A seeded link shared by all nodes. Keeps delivery FIFO per (node, direction):
/// a message never arrives before one sent earlier on the same path.
class SimulatedLink {
 public:
  SimulatedLink(LinkModel model, std::uint64_t seed) : model_(std::move(model)), rng_(seed) { model_.validate(); }

  LinkOutcome transmit(const std::string& node, Direction dir, TimeMs now) {
    LinkOutcome out = link_transmit(node, model_, rng_, now);
    if (out.delivered) {
      TimeMs& last = last_arrival_[{node, dir}];
      if (out.at < last) out.at = last;
      last = out.at;
    }
    return out;
  }

  const LinkModel& model() const noexcept { return model_; }

 private:
  LinkModel model_;
  std::mt19937_64 rng_;
  std::map<std::pair<std::string, Direction>, TimeMs> last_arrival_;
};

}  // namespace stormloop::telemetry
