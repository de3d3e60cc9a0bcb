#pragma once

// Networked mode: cpp-httplib in front of ApiService. Plain HTTP; put a TLS
// proxy in front for anything beyond a desk.

#include <atomic>
#include <chrono>
#include <functional>
#include <memory>
#include <string>
#include <thread>
#include <utility>

#include <httplib.h>

#include "stormloop/server/api.hpp"

namespace stormloop::api {

struct HttpOptions {
  std::string host = "127.0.0.1";
  int port = 8086;  // 0 picks a free port
  std::string cors_origin = "*";
};

class HttpServer {
 public:
  using Clock = std::function<TimeMs()>;

  HttpServer(ApiService& api, Clock clock, HttpOptions opts = {})
      : api_(api), clock_(std::move(clock)), opts_(std::move(opts)) {
    install_routes();
  }

  ~HttpServer() { stop(); }

  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds and serves on a background thread. Returns the bound port.
  int start() {
    if (opts_.port == 0) {
      port_ = server_.bind_to_any_port(opts_.host);
    } else {
      port_ = server_.bind_to_port(opts_.host, opts_.port) ? opts_.port : -1;
    }
    if (port_ < 0) throw ConfigError("cannot listen on " + opts_.host + ":" + std::to_string(opts_.port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  void stop() {
    if (stopping_.exchange(true)) return;
    api_.bus().close_all();
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const noexcept { return port_; }

 private:
  void install_routes() {
    server_.set_default_headers({{"Access-Control-Allow-Origin", opts_.cors_origin},
                                 {"Access-Control-Allow-Headers", "Authorization, Content-Type"},
                                 {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    server_.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    server_.Get("/api/v1/stream", [this](const httplib::Request& req, httplib::Response& res) { stream(req, res); });
    auto forward = [this](const httplib::Request& req, httplib::Response& res) {
      Request r;
      r.method = req.method;
      r.path = req.path;
      for (const auto& [k, v] : req.params) r.params[k] = v;
      r.authorization = req.get_header_value("Authorization");
      r.body = req.body;
      r.now = clock_();
      const Response out = api_.handle(r);
      res.status = out.status;
      res.set_content(out.body, out.content_type);
      if (out.status == 401) res.set_header("WWW-Authenticate", "Basic realm=\"stormloop\"");
    };
    server_.Get(".*", forward);
    server_.Post(".*", forward);
  }

  // Server-sent events: one `event:`/`id:`/`data:` block per stored point or alert.
  void stream(const httplib::Request& req, httplib::Response& res) {
    if (!api_.authorized(req.get_header_value("Authorization"))) {
      res.status = 401;
      res.set_header("WWW-Authenticate", "Basic realm=\"stormloop\"");
      res.set_content(R"({"error":"unauthorized"})", "application/json");
      return;
    }
    auto listener = api_.bus().subscribe();
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider(
        "text/event-stream",
        [this, listener](std::size_t, httplib::DataSink& sink) {
          auto ev = listener->next(std::chrono::milliseconds(500));
          if (!ev) {
            if (listener->closed() || stopping_) return false;
            const std::string ping = ": keepalive\n\n";
            return sink.write(ping.data(), ping.size());
          }
          std::string block = "event: " + ev->type + "\nid: " + std::to_string(ev->seq) + "\ndata: " + ev->data + "\n\n";
          return sink.write(block.data(), block.size());
        },
        [this, listener](bool) { api_.bus().unsubscribe(listener); });
  }

  ApiService& api_;
  Clock clock_;
  HttpOptions opts_;
  httplib::Server server_;
  std::thread thread_;
  std::atomic<bool> stopping_{false};
  int port_ = -1;
};

}  // namespace stormloop::api
