#pragma once

// Messages exchanged between a node and the server. Requests carry Basic
// credentials; bodies are the line grammar (WritePoints) or JSON
// (command lists and acks).

#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stormloop/core/errors.hpp"
#include "stormloop/datastore/types.hpp"
#include "stormloop/telemetry/auth.hpp"
#include "stormloop/telemetry/line_protocol.hpp"
#include "stormloop/telemetry/link.hpp"

namespace stormloop::telemetry {

enum class MessageKind { write_points, fetch_commands, ack_command, command_list, write_ack, auth_error, error };

struct WireMessage {
  MessageKind kind = MessageKind::write_points;
  std::string node_id;
  Credentials auth;
  std::string body;

  bool operator==(const WireMessage&) const = default;
};

inline LinkOutcome link_transmit(const WireMessage& msg, const LinkModel& link, std::mt19937_64& rng, TimeMs now) {
  return link_transmit(msg.node_id, link, rng, now);
}

/// How a node reaches the server. `exchange` returns the response, or nullopt
/// when the request or the response was lost.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual std::optional<WireMessage> exchange(const WireMessage& request, TimeMs now) = 0;
  /// Reception strength the modem reports for this node.
  virtual double signal_db(const std::string& /*node*/) const { return 0.0; }
};

inline WireMessage make_write(const std::string& node, const Credentials& auth, std::span<const Point> points) {
  return {MessageKind::write_points, node, auth, encode_points(points)};
}

inline WireMessage make_fetch(const std::string& node, const Credentials& auth) {
  return {MessageKind::fetch_commands, node, auth, {}};
}

inline nlohmann::json command_to_json(const Command& c) {
  nlohmann::json j{{"id", c.id},           {"node", c.node},           {"kind", to_string(c.kind)},
                   {"value", c.value},     {"issued_at", c.issued_at}, {"state", to_string(c.state)}};
  if (!c.sensor.empty()) j["sensor"] = c.sensor;
  return j;
}

inline Command command_from_json(const nlohmann::json& j) {
  try {
    Command c;
    c.id = j.at("id").get<std::uint64_t>();
    c.node = j.value("node", std::string{});
    c.kind = command_kind_from_string(j.at("kind").get<std::string>());
    c.value = j.at("value").get<double>();
    c.sensor = j.value("sensor", std::string{});
    c.issued_at = j.value("issued_at", TimeMs{0});
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, std::string("bad command record: ") + e.what());
  }
}

inline std::string encode_command_list(const std::string& node, std::span<const Command> cmds) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : cmds) arr.push_back(command_to_json(c));
  return nlohmann::json{{"node", node}, {"commands", std::move(arr)}}.dump();
}

inline std::vector<Command> decode_command_list(const std::string& body) {
  auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.contains("commands")) throw ParseError(0, "malformed command list");
  std::vector<Command> out;
  for (const auto& item : j.at("commands")) out.push_back(command_from_json(item));
  return out;
}

inline std::string encode_ack(const std::string& node, const Ack& ack) {
  return nlohmann::json{{"node", node},
                        {"id", ack.id},
                        {"outcome", ack.outcome == AckOutcome::applied ? "applied" : "rejected"},
                        {"note", ack.note}}
      .dump();
}

struct AckRequest {
  std::string node;
  Ack ack;
};

inline AckRequest decode_ack(const std::string& body) {
  auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ParseError(0, "malformed ack body");
  try {
    AckRequest r;
    r.node = j.at("node").get<std::string>();
    r.ack.id = j.at("id").get<std::uint64_t>();
    const auto outcome = j.value("outcome", std::string{"applied"});
    if (outcome != "applied" && outcome != "rejected") throw ParseError(0, "ack outcome must be applied|rejected");
    r.ack.outcome = outcome == "applied" ? AckOutcome::applied : AckOutcome::rejected;
    r.ack.note = j.value("note", std::string{});
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, std::string("malformed ack body: ") + e.what());
  }
}

inline WireMessage make_ack(const std::string& node, const Credentials& auth, const Ack& ack) {
  return {MessageKind::ack_command, node, auth, encode_ack(node, ack)};
}

}  // namespace stormloop::telemetry
