#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <deque>
#include <functional>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "stormloop/node/node.hpp"
#include "stormloop/server/api.hpp"
#include "stormloop/server/http_server.hpp"
#include "stormloop/server/transport.hpp"
#include "support/oracles.hpp"

using namespace stormloop;
namespace oracle = stormloop::testing;
using nlohmann::json;

namespace {

const telemetry::Credentials kNode{"n1", "secret"};
const telemetry::Credentials kOperator{"operator", "op-pass"};

struct Service {
  store::Datastore ds;
  subs::AlertLog alerts;
  api::ApiService api;

  Service() : api(ds, alerts, credentials()) {
    api.registry().add({"n1", "pond controller", 42.0, -83.6, std::nullopt, std::nullopt, std::nullopt, {3.0, 15.0}, true});
    api.registry().add({"n2", "stream gauge", 42.1, -83.7, std::nullopt, std::nullopt, std::nullopt, {3.0, 15.0}, false});
  }

  static telemetry::CredentialStore credentials() {
    telemetry::CredentialStore c;
    c.add(kNode);
    c.add(kOperator);
    return c;
  }

  api::Response call(const std::string& method, const std::string& path, const std::string& body = {},
                     std::map<std::string, std::string> params = {}, TimeMs now = 0,
                     const telemetry::Credentials& who = kOperator) {
    return api.handle({method, path, std::move(params), telemetry::basic_auth_header(who), body, now});
  }
};

}  // namespace

// ---- API ------------------------------------------------------------------

TEST(Api, EveryRouteRequiresAuth) {
  Service s;
  for (const auto& [method, path] : std::vector<std::pair<std::string, std::string>>{
           {"POST", "/api/v1/write"},
           {"GET", "/api/v1/commands/n1"},
           {"POST", "/api/v1/ack"},
           {"GET", "/api/v1/query"},
           {"GET", "/api/v1/nodes"},
           {"POST", "/api/v1/nodes/n1/config"},
           {"POST", "/api/v1/nodes/n1/valve"},
           {"GET", "/api/v1/alerts"},
           {"GET", "/api/v1/nope"}}) {
    const auto r = s.api.handle({method, path, {}, "", "", 0});
    EXPECT_EQ(r.status, 401) << method << " " << path;
  }
}

TEST(Api, UnauthorizedWriteLeavesStoreUntouched) { EXPECT_TRUE(oracle::unauthorized_write_is_side_effect_free()); }

TEST(Api, MalformedBatchIsRejectedAtomically) { EXPECT_TRUE(oracle::malformed_batch_is_atomic()); }

TEST(Api, WriteThenQuery) {
  Service s;
  const auto w = s.call("POST", "/api/v1/write",
                        "depth,node=n1 value=0.42 1000\ndepth,node=n1 value=0.5 2000\nbattery_v,node=n1 value=3.9 2000\n",
                        {}, 2500, kNode);
  ASSERT_EQ(w.status, 200);
  EXPECT_EQ(json::parse(w.body)["written"], 3);
  const auto q = s.call("GET", "/api/v1/query", {}, {{"series", "n1.depth"}, {"start", "1000"}, {"end", "2000"}});
  ASSERT_EQ(q.status, 200);
  EXPECT_EQ(json::parse(q.body)["points"], json::parse("[[1000, 0.42]]"));
  const auto iso = s.call("GET", "/api/v1/query", {},
                          {{"series", "n1.depth"}, {"start", "1970-01-01T00:00:01Z"}, {"end", "1970-01-01T00:00:03Z"}});
  EXPECT_EQ(json::parse(iso.body)["points"].size(), 2u);
  EXPECT_EQ(s.call("GET", "/api/v1/query", {}, {{"series", "nodot"}}).status, 400);
  EXPECT_EQ(s.call("GET", "/api/v1/query").status, 400);
}

TEST(Api, NodesReportRegistryAndStatus) {
  Service s;
  s.call("POST", "/api/v1/write", "battery_v,node=n1 value=3.8 100\nsignal_db,node=n1 value=-71 100\n", {}, 100, kNode);
  s.alerts.persist({0, subs::Severity::warning, "n2", "low battery", 50, "low_battery"});
  const auto r = s.call("GET", "/api/v1/nodes", {}, {}, 200);
  ASSERT_EQ(r.status, 200);
  const auto arr = json::parse(r.body);
  ASSERT_EQ(arr.size(), 2u);
  EXPECT_EQ(arr[0]["node_id"], "n1");
  EXPECT_EQ(arr[0]["battery_v"], 3.8);
  EXPECT_EQ(arr[0]["signal_db"], -71.0);
  EXPECT_EQ(arr[0]["last_seen"], 100);
  EXPECT_EQ(arr[0]["status"], "healthy");
  EXPECT_EQ(arr[0]["has_valve"], true);
  EXPECT_EQ(arr[0]["interval_bounds_min"], json::parse("[3.0, 15.0]"));
  EXPECT_EQ(arr[1]["status"], "warning");
}

TEST(Api, CriticalAlertAfterLastReportMeansOffline) {
  api::NodeRegistryEntry e;
  e.node_id = "n";
  e.last_seen = 100;
  const std::vector<subs::Alert> a{{1, subs::Severity::critical, "n", "silent", 200, "s"}};
  EXPECT_EQ(api::derive_status(e, a, 300, kMsPerHour), api::NodeStatus::offline);
  e.last_seen = 250;
  EXPECT_EQ(api::derive_status(e, a, 300, kMsPerHour), api::NodeStatus::warning);
  EXPECT_EQ(api::derive_status(e, a, 300 + 2 * kMsPerHour, kMsPerHour), api::NodeStatus::healthy);
}

TEST(Api, ValveCommandLifecycle) {
  Service s;
  const auto v = s.call("POST", "/api/v1/nodes/n1/valve", R"({"opening":0.4})", {}, 10);
  ASSERT_EQ(v.status, 202);
  const auto id = json::parse(v.body)["command_ids"][0].get<std::uint64_t>();

  // The read-only view does not deliver.
  const auto view = s.call("GET", "/api/v1/commands/n1", {}, {{"view", "all"}}, 20);
  EXPECT_EQ(json::parse(view.body)["commands"][0]["state"], "pending");
  EXPECT_EQ(s.ds.list_commands("n1")[0].state, CommandState::pending);

  const auto fetched = s.call("GET", "/api/v1/commands/n1", {}, {}, 30, kNode);
  ASSERT_EQ(fetched.status, 200);
  const auto cmds = telemetry::decode_command_list(fetched.body);
  ASSERT_EQ(cmds.size(), 1u);
  EXPECT_EQ(cmds[0].kind, CommandKind::set_valve);
  EXPECT_EQ(cmds[0].value, 0.4);

  const auto ack = s.call("POST", "/api/v1/ack", telemetry::encode_ack("n1", {id, AckOutcome::applied, {}}), {}, 40, kNode);
  ASSERT_EQ(ack.status, 200);
  EXPECT_EQ(json::parse(ack.body)["state"], "acked");
  EXPECT_EQ(json::parse(s.call("GET", "/api/v1/commands/n1", {}, {{"view", "all"}}).body)["commands"][0]["state"],
            "acked");
}

TEST(Api, ValidationErrors) {
  Service s;
  EXPECT_EQ(s.call("POST", "/api/v1/nodes/n1/config", R"({"sampling_interval_min":60})").status, 422);
  EXPECT_EQ(s.call("POST", "/api/v1/nodes/n1/config", R"({"sampling_interval_min":2.9})").status, 422);
  EXPECT_EQ(s.call("POST", "/api/v1/nodes/n1/config", R"({"sampling_interval_min":"5"})").status, 422);
  EXPECT_EQ(s.call("POST", "/api/v1/nodes/n1/config", R"({})").status, 422);
  EXPECT_EQ(s.call("POST", "/api/v1/nodes/n1/config", R"({"sensor":"depth"})").status, 422);
  EXPECT_EQ(s.call("POST", "/api/v1/nodes/n1/config", "not json").status, 400);
  EXPECT_EQ(s.call("POST", "/api/v1/nodes/n1/valve", R"({"opening":1.5})").status, 422);
  EXPECT_EQ(s.call("POST", "/api/v1/nodes/n1/valve", R"({"open":1})").status, 422);
  EXPECT_TRUE(s.ds.all_commands().empty());

  EXPECT_EQ(s.call("POST", "/api/v1/nodes/ghost/valve", R"({"opening":0.5})").status, 404);
  EXPECT_EQ(s.call("POST", "/api/v1/nodes/ghost/config", R"({"sampling_interval_min":5})").status, 404);
  EXPECT_EQ(s.call("GET", "/api/v1/commands/ghost").status, 404);
  EXPECT_EQ(s.call("GET", "/api/v1/unknown").status, 404);
  EXPECT_EQ(s.call("POST", "/api/v1/ack", R"({"node":"n1","id":7})").status, 404);
  EXPECT_EQ(s.call("POST", "/api/v1/ack", "{").status, 400);
}

TEST(Api, ConfigQueuesIntervalAndSensorToggle) {
  Service s;
  const auto r = s.call("POST", "/api/v1/nodes/n1/config", R"({"sampling_interval_min":5,"sensor":"depth","enabled":false})");
  ASSERT_EQ(r.status, 202);
  EXPECT_EQ(json::parse(r.body)["command_ids"], json::parse("[1, 2]"));
  const auto cmds = s.ds.list_commands("n1");
  EXPECT_EQ(cmds[0].kind, CommandKind::set_sampling_interval);
  EXPECT_EQ(cmds[1].kind, CommandKind::set_sensor_enabled);
  EXPECT_EQ(cmds[1].sensor, "depth");
  EXPECT_EQ(cmds[1].value, 0.0);
}

TEST(Api, AlertsSince) {
  Service s;
  s.alerts.persist({0, subs::Severity::info, "n1", "a", 100, "x"});
  s.alerts.persist({0, subs::Severity::critical, "n2", "b", 200, "y"});
  const auto all = json::parse(s.call("GET", "/api/v1/alerts").body);
  ASSERT_EQ(all.size(), 2u);
  EXPECT_EQ(all[1]["severity"], "critical");
  EXPECT_EQ(all[1]["seq"], 2);
  EXPECT_EQ(json::parse(s.call("GET", "/api/v1/alerts", {}, {{"since", "150"}}).body).size(), 1u);
}

TEST(Api, EventBusSeesPointsAndAlerts) {
  Service s;
  auto listener = s.api.bus().subscribe();
  s.call("POST", "/api/v1/write", "depth,node=n1 value=1 5\n", {}, 5, kNode);
  s.alerts.persist({0, subs::Severity::warning, "n1", "high", 6, "t"});
  const auto evs = listener->drain();
  ASSERT_EQ(evs.size(), 2u);
  EXPECT_EQ(evs[0].type, "point");
  EXPECT_EQ(json::parse(evs[0].data)["series"], "n1.depth");
  EXPECT_EQ(evs[1].type, "alert");
  EXPECT_LT(evs[0].seq, evs[1].seq);
}

// ---- node wake cycle ------------------------------------------------------

namespace {

/// Forwards straight into the API, dropping whichever exchanges `drop` selects.
class DirectTransport final : public telemetry::Transport {
 public:
  explicit DirectTransport(api::ApiService& api) : api_(api) {}
  std::function<bool(const telemetry::WireMessage&, int)> drop = [](const auto&, int) { return false; };
  int calls = 0;

  std::optional<telemetry::WireMessage> exchange(const telemetry::WireMessage& req, TimeMs now) override {
    const int n = calls++;
    if (drop(req, n)) return std::nullopt;
    return api::to_wire_response(req, api_.handle(api::to_request(req, now)));
  }

 private:
  api::ApiService& api_;
};

class FixedPlant final : public node::Plant {
 public:
  double value = 0.75;
  double observe(const hydro::Binding&) const override { return value; }
};

node::NodeConfig node_config() {
  node::NodeConfig c;
  c.node_id = "n1";
  c.sampling_interval_min = 10.0;
  c.sensors = {{"depth", {"pond", hydro::Quantity::depth}, true}, {"flow", {"pond", hydro::Quantity::flow}, true}};
  c.valve_element = "pond";
  c.credentials = kNode;
  c.buffer_capacity = 8;
  return c;
}

}  // namespace

TEST(WakeCycle, SamplesTransmitsAndSleeps) {
  Service s;
  DirectTransport t(s.api);
  FixedPlant plant;
  const auto cfg = node_config();
  auto st = node::make_node_state(cfg, 0);
  const auto r = node::wake_cycle(st, cfg, 0, t, plant);
  EXPECT_EQ(r.sampled.size(), 5u);  // two sensors + battery, signal, attempts
  EXPECT_EQ(r.transmitted.size(), 5u);
  EXPECT_TRUE(r.state.buffer.empty());
  EXPECT_EQ(r.state.next_wake, 10 * kMsPerMinute);
  EXPECT_EQ(s.ds.query_last({"n1", "depth"})->value, 0.75);
  EXPECT_NEAR(r.state.battery.charge_mah, cfg.power.capacity_mah - 120.0 * 10.0 / 3600.0, 1e-9);
  EXPECT_THROW(node::wake_cycle(r.state, r.config, 1, t, plant), DomainError);
}

TEST(WakeCycle, NewestCommandWinsAndOthersAreSuperseded) {
  Service s;
  DirectTransport t(s.api);
  FixedPlant plant;
  for (double v : {0.2, 0.4, 0.6}) s.ds.enqueue_command({0, "n1", CommandKind::set_valve, v, {}, 0});
  s.ds.enqueue_command({0, "n1", CommandKind::set_sampling_interval, 5.0, {}, 0});
  const auto cfg = node_config();
  const auto r = node::wake_cycle(node::make_node_state(cfg, 0), cfg, 0, t, plant);
  ASSERT_EQ(r.actions.size(), 1u);
  EXPECT_EQ(r.actions[0].target, 0.6);
  EXPECT_EQ(r.actions[0].command_id, 3u);
  EXPECT_EQ(r.config.sampling_interval_min, 5.0);
  ASSERT_EQ(r.acks.size(), 4u);
  EXPECT_EQ(r.acks[0].note, "superseded");
  EXPECT_EQ(r.acks[1].note, "superseded");
  for (const auto& c : s.ds.all_commands()) EXPECT_EQ(c.state, CommandState::acked);
  EXPECT_EQ(r.state.next_wake, 5 * kMsPerMinute);
}

TEST(WakeCycle, RedeliveredCommandIsNotReapplied) {
  Service s;
  s.ds.set_redelivery_timeout("n1", 0);
  DirectTransport t(s.api);
  FixedPlant plant;
  s.ds.enqueue_command({0, "n1", CommandKind::set_valve, 0.3, {}, 0});
  // Every ack is lost, so the command comes back on the next wake.
  t.drop = [](const telemetry::WireMessage& m, int) { return m.kind == telemetry::MessageKind::ack_command; };
  const auto cfg = node_config();
  auto r1 = node::wake_cycle(node::make_node_state(cfg, 0), cfg, 0, t, plant);
  ASSERT_EQ(r1.actions.size(), 1u);
  t.drop = [](const auto&, int) { return false; };
  const auto r2 = node::wake_cycle(r1.state, r1.config, r1.state.next_wake, t, plant);
  EXPECT_TRUE(r2.actions.empty());
  ASSERT_EQ(r2.acks.size(), 1u);
  EXPECT_EQ(r2.acks[0].note, "duplicate");
  EXPECT_EQ(s.ds.all_commands()[0].state, CommandState::acked);
}

TEST(WakeCycle, RetriesOnceAndBuffersOnFailure) {
  Service s;
  DirectTransport t(s.api);
  FixedPlant plant;
  t.drop = [](const auto&, int) { return true; };
  const auto cfg = node_config();
  const auto r = node::wake_cycle(node::make_node_state(cfg, 0), cfg, 0, t, plant);
  EXPECT_EQ(t.calls, 4);  // fetch x2, write x2
  EXPECT_EQ(r.state.health.connection_attempts, 4u);
  EXPECT_EQ(r.state.buffer.size(), 5u);
  EXPECT_TRUE(r.transmitted.empty());

  // A single loss is absorbed by the retry.
  t.drop = [](const auto&, int n) { return n == 4; };
  const auto r2 = node::wake_cycle(r.state, r.config, r.state.next_wake, t, plant);
  EXPECT_EQ(r2.state.health.connection_attempts, 5u);
  EXPECT_TRUE(r2.state.buffer.empty());
  EXPECT_EQ(r2.transmitted.size(), 8u);  // capacity 8: two oldest of the ten were dropped
  EXPECT_EQ(r2.state.dropped_points, 2u);
}

TEST(WakeCycle, BadCredentialsAreNotRetried) {
  Service s;
  DirectTransport t(s.api);
  FixedPlant plant;
  auto cfg = node_config();
  cfg.credentials.password = "wrong";
  const auto r = node::wake_cycle(node::make_node_state(cfg, 0), cfg, 0, t, plant);
  EXPECT_EQ(t.calls, 2);
  EXPECT_EQ(r.state.health.connection_attempts, 2u);
  EXPECT_EQ(s.ds.point_count(), 0u);
}

TEST(WakeCycle, FlatBatterySkipsTheCycle) {
  Service s;
  DirectTransport t(s.api);
  FixedPlant plant;
  const auto cfg = node_config();
  const auto r = node::wake_cycle(node::make_node_state(cfg, 0, 0.0), cfg, 0, t, plant);
  EXPECT_TRUE(r.skipped);
  EXPECT_EQ(t.calls, 0);
  EXPECT_EQ(r.state.skipped_cycles, 1u);
}

TEST(WakeCycle, ApplyCommandRejectsWhatTheNodeCannotDo) {
  auto cfg = node_config();
  cfg.valve_element.reset();
  auto r = node::apply_command(node::NodeState{}, cfg, {1, "n1", CommandKind::set_valve, 0.5, {}, 0});
  EXPECT_EQ(r.ack.outcome, AckOutcome::rejected);
  r = node::apply_command(node::NodeState{}, node_config(), {1, "n1", CommandKind::set_valve, 7.0, {}, 0});
  EXPECT_EQ(r.ack.note, "clamped");
  EXPECT_EQ(r.actuation->target, 1.0);
  r = node::apply_command(node::NodeState{}, node_config(), {1, "n1", CommandKind::set_sampling_interval, 60.0, {}, 0});
  EXPECT_EQ(r.config.sampling_interval_min, 15.0);
  r = node::apply_command(node::NodeState{}, node_config(), {1, "n1", CommandKind::set_sensor_enabled, 0.0, "nope", 0});
  EXPECT_EQ(r.ack.outcome, AckOutcome::rejected);
}

// ---- simulated transport --------------------------------------------------

TEST(Transport, LateResponseCountsAsLostButServerActed) {
  Service s;
  telemetry::LinkModel m;
  m.base_latency_ms = 6000;
  m.latency_jitter_ms = 0;
  telemetry::SimulatedLink link(m, 1);
  api::SimulatedTransport t(s.api, link);
  const std::vector<Point> pts{{{"n1", "depth"}, 0, 1.0}};
  EXPECT_FALSE(t.exchange(telemetry::make_write("n1", kNode, pts), 0));
  EXPECT_EQ(s.ds.point_count(), 1u);
  EXPECT_EQ(t.lost(), 1u);
}

TEST(Transport, DeliversAtArrivalTime) {
  Service s;
  telemetry::LinkModel m;
  m.base_latency_ms = 1000;
  m.latency_jitter_ms = 0;
  telemetry::SimulatedLink link(m, 1);
  api::SimulatedTransport t(s.api, link);
  TimeMs seen = -1;
  t.on_delivery([&](TimeMs at, const auto&, const auto&) { seen = at; });
  const std::vector<Point> pts{{{"n1", "depth"}, 0, 1.0}};
  const auto r = t.exchange(telemetry::make_write("n1", kNode, pts), 5000);
  ASSERT_TRUE(r);
  EXPECT_EQ(r->kind, telemetry::MessageKind::write_ack);
  EXPECT_EQ(seen, 6000);
  EXPECT_EQ(s.api.registry().get("n1")->last_seen, 6000);
}

// ---- HTTP -----------------------------------------------------------------

TEST(Http, ServesApiAndStream) {
  Service s;
  api::HttpServer server(s.api, [] { return TimeMs{1000}; }, {"127.0.0.1", 0, "*"});
  const int port = server.start();
  ASSERT_GT(port, 0);
  httplib::Client cli("127.0.0.1", port);
  cli.set_basic_auth(kNode.username, kNode.password);

  const auto w = cli.Post("/api/v1/write", "depth,node=n1 value=0.5 900\n", "text/plain");
  ASSERT_TRUE(w);
  EXPECT_EQ(w->status, 200);
  EXPECT_EQ(w->get_header_value("Access-Control-Allow-Origin"), "*");

  const auto q = cli.Get("/api/v1/query?series=n1.depth");
  ASSERT_TRUE(q);
  EXPECT_EQ(json::parse(q->body)["points"], json::parse("[[900, 0.5]]"));

  httplib::Client anon("127.0.0.1", port);
  const auto denied = anon.Get("/api/v1/nodes");
  ASSERT_TRUE(denied);
  EXPECT_EQ(denied->status, 401);
  EXPECT_EQ(denied->get_header_value("WWW-Authenticate"), "Basic realm=\"stormloop\"");
  EXPECT_EQ(anon.Get("/api/v1/stream")->status, 401);

  const auto pre = anon.Options("/api/v1/write");
  ASSERT_TRUE(pre);
  EXPECT_EQ(pre->status, 204);

  // Stream: read until the first event block arrives.
  std::string received;
  std::atomic<bool> got{false};
  std::thread reader([&] {
    httplib::Client sse("127.0.0.1", port);
    sse.set_basic_auth(kOperator.username, kOperator.password);
    sse.set_read_timeout(5, 0);
    sse.Get("/api/v1/stream", [&](const char* data, std::size_t n) {
      received.append(data, n);
      got = received.find("event: point") != std::string::npos;
      return !got.load();
    });
  });
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(5);
  while (!got && std::chrono::steady_clock::now() < deadline) {
    cli.Post("/api/v1/write", "depth,node=n1 value=0.6 950\n", "text/plain");
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  reader.join();
  EXPECT_NE(received.find("event: point"), std::string::npos);
  EXPECT_NE(received.find("\"series\":\"n1.depth\""), std::string::npos);
  server.stop();
}
