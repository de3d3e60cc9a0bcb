#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stormloop/core/errors.hpp"
#include "stormloop/core/time.hpp"

namespace stormloop::subs {

enum class Severity { info, warning, critical };

inline std::string to_string(Severity s) {
  switch (s) {
    case Severity::info: return "info";
    case Severity::warning: return "warning";
    case Severity::critical: return "critical";
  }
  return "?";
}

inline Severity severity_from_string(const std::string& s) {
  if (s == "info") return Severity::info;
  if (s == "warning") return Severity::warning;
  if (s == "critical") return Severity::critical;
  throw ConfigError("unknown alert severity '" + s + "'");
}

struct Alert {
  std::uint64_t seq = 0;
  Severity severity = Severity::info;
  std::string subject;  // node id or series
  std::string message;
  TimeMs fired_at = 0;
  std::string subscription;

  bool operator==(const Alert&) const = default;
};

inline nlohmann::json alert_to_json(const Alert& a) {
  return {{"seq", a.seq},
          {"fired_at", a.fired_at},
          {"fired_at_iso", format_iso8601(a.fired_at)},
          {"severity", to_string(a.severity)},
          {"subject", a.subject},
          {"message", a.message},
          {"subscription", a.subscription}};
}

/// Persistent alert log. An alert is stored (and appended to the outbox file,
/// when one is attached) before any sink sees it.
class AlertLog {
 public:
  using Sink = std::function<void(const Alert&)>;

  void attach_outbox(const std::string& path) {
    std::lock_guard lock(mu_);
    outbox_.emplace(path, std::ios::app);
    if (!*outbox_) throw ConfigError("cannot open alert outbox '" + path + "'");
  }

  void add_sink(Sink sink) {
    std::lock_guard lock(mu_);
    sinks_.push_back(std::move(sink));
  }

  Alert persist(Alert alert) {
    std::vector<Sink> sinks;
    {
      std::lock_guard lock(mu_);
      alert.seq = alerts_.size() + 1;
      alerts_.push_back(alert);
      if (outbox_) {
        *outbox_ << alert_to_json(alert).dump() << '\n';
        outbox_->flush();
      }
      sinks = sinks_;
    }
    for (const auto& s : sinks) s(alert);
    return alert;
  }

  std::vector<Alert> since(TimeMs t) const {
    std::lock_guard lock(mu_);
    std::vector<Alert> out;
    for (const auto& a : alerts_) {
      if (a.fired_at >= t) out.push_back(a);
    }
    return out;
  }

  std::vector<Alert> all() const {
    std::lock_guard lock(mu_);
    return alerts_;
  }

 private:
  mutable std::mutex mu_;
  std::vector<Alert> alerts_;
  std::optional<std::ofstream> outbox_;
  std::vector<Sink> sinks_;
};

}  // namespace stormloop::subs
