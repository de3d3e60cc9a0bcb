#pragma once

#include <functional>
#include <optional>
#include <utility>

#include "stormloop/server/api.hpp"
#include "stormloop/telemetry/link.hpp"
#include "stormloop/telemetry/wire.hpp"

namespace stormloop::api {

/// Node-to-server path for in-process runs: each request crosses the
/// simulated link, is handled by the ApiService at its arrival time, and the
/// response crosses the link back. A response that arrives after `timeout`
/// counts as lost even though the server already acted on the request.
class SimulatedTransport final : public telemetry::Transport {
 public:
  using DeliveryHook = std::function<void(TimeMs at, const telemetry::WireMessage&, const Response&)>;

  SimulatedTransport(ApiService& api, telemetry::SimulatedLink& link, TimeMs timeout = 10 * kMsPerSecond)
      : api_(api), link_(link), timeout_(timeout) {}

  void on_delivery(DeliveryHook hook) { hook_ = std::move(hook); }

  std::optional<telemetry::WireMessage> exchange(const telemetry::WireMessage& req, TimeMs now) override {
    const auto up = link_.transmit(req.node_id, telemetry::Direction::uplink, now);
    if (!up.delivered) {
      ++lost_;
      return std::nullopt;
    }
    const Response resp = api_.handle(to_request(req, up.at));
    if (hook_) hook_(up.at, req, resp);
    const auto down = link_.transmit(req.node_id, telemetry::Direction::downlink, up.at);
    if (!down.delivered || down.at - now > timeout_) {
      ++lost_;
      return std::nullopt;
    }
    return to_wire_response(req, resp);
  }

  double signal_db(const std::string& node) const override { return link_.model().signal_for(node); }

  std::uint64_t lost() const noexcept { return lost_; }

 private:
  ApiService& api_;
  telemetry::SimulatedLink& link_;
  TimeMs timeout_;
  DeliveryHook hook_;
  std::uint64_t lost_ = 0;
};

}  // namespace stormloop::api
