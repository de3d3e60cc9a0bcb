#pragma once

// In-memory time-series store plus the per-node command queue. Every public
// operation takes the store lock, so operations are linearizable.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "stormloop/core/errors.hpp"
#include "stormloop/core/time.hpp"
#include "stormloop/datastore/types.hpp"
#include "stormloop/telemetry/line_protocol.hpp"

namespace stormloop::store {

struct WriteResult {
  std::size_t written = 0;
  std::vector<std::size_t> rejected;  // indices of non-finite points

  bool ok() const noexcept { return rejected.empty(); }
};

/// Emitted under the store lock for every command-queue mutation, in
/// linearization order.
struct CommandEvent {
  enum class Op { enqueue, fetch, ack } op;
  std::string node;
  std::vector<std::uint64_t> ids;
  CommandState result = CommandState::pending;
  TimeMs at = 0;                             // fetch: delivery time
  AckOutcome outcome = AckOutcome::applied;  // ack: what the node reported
};

struct DatastoreOptions {
  TimeMs retention_window = std::numeric_limits<TimeMs>::max();
  TimeMs default_redelivery_timeout = 30 * kMsPerMinute;
};

class Datastore {
 public:
  using PointObserver = std::function<void(std::span<const Point>)>;
  using CommandObserver = std::function<void(const CommandEvent&)>;

  Datastore() = default;
  explicit Datastore(DatastoreOptions opts) : opts_(opts) {}

  Datastore(const Datastore&) = delete;
  Datastore& operator=(const Datastore&) = delete;

  // ---- points ---------------------------------------------------------

  /// Stores every finite point (last writer wins per series and timestamp).
  WriteResult write_points(std::span<const Point> points) {
    WriteResult res;
    std::vector<Point> accepted;
    {
      std::unique_lock lock(mu_);
      for (std::size_t i = 0; i < points.size(); ++i) {
        const Point& p = points[i];
        if (!std::isfinite(p.value)) {
          res.rejected.push_back(i);
          continue;
        }
        if (retention_floor_locked() > p.timestamp) continue;
        series_[p.series][p.timestamp] = p.value;
        accepted.push_back(p);
        ++res.written;
      }
      if (log_ && !accepted.empty()) {
        *log_ << telemetry::encode_points(accepted);
        log_->flush();
      }
    }
    if (!accepted.empty()) {
      for (const auto& obs : point_observers_) obs(accepted);
    }
    return res;
  }

  /// Points in [t_start, t_end), ascending. Unknown series yield an empty result.
  std::vector<Point> query_range(const SeriesKey& key, TimeMs t_start, TimeMs t_end) const {
    if (t_start > t_end) throw DomainError("query_range: t_start > t_end");
    std::shared_lock lock(mu_);
    std::vector<Point> out;
    auto it = series_.find(key);
    if (it == series_.end()) return out;
    const TimeMs lo = std::max(t_start, retention_floor_locked());
    for (auto p = it->second.lower_bound(lo); p != it->second.end() && p->first < t_end; ++p) {
      out.push_back({key, p->first, p->second});
    }
    return out;
  }

  std::optional<Point> query_last(const SeriesKey& key) const {
    std::shared_lock lock(mu_);
    auto it = series_.find(key);
    if (it == series_.end() || it->second.empty()) return std::nullopt;
    const auto& [t, v] = *it->second.rbegin();
    if (t < retention_floor_locked()) return std::nullopt;
    return Point{key, t, v};
  }

  /// Latest point at or before `t`.
  std::optional<Point> query_at_or_before(const SeriesKey& key, TimeMs t) const {
    std::shared_lock lock(mu_);
    auto it = series_.find(key);
    if (it == series_.end()) return std::nullopt;
    auto p = it->second.upper_bound(t);
    if (p == it->second.begin()) return std::nullopt;
    --p;
    if (p->first < retention_floor_locked()) return std::nullopt;
    return Point{key, p->first, p->second};
  }

  std::vector<SeriesKey> list_series() const {
    std::shared_lock lock(mu_);
    std::vector<SeriesKey> keys;
    keys.reserve(series_.size());
    for (const auto& [k, _] : series_) keys.push_back(k);
    return keys;
  }

  std::size_t point_count() const {
    std::shared_lock lock(mu_);
    std::size_t n = 0;
    for (const auto& [_, s] : series_) n += s.size();
    return n;
  }

  /// Advances the store's notion of time and drops points that fell out of the retention window.
  void advance_clock(TimeMs now) {
    std::unique_lock lock(mu_);
    clock_ = std::max(clock_, now);
    const TimeMs floor = retention_floor_locked();
    for (auto& [_, s] : series_) s.erase(s.begin(), s.lower_bound(floor));
  }

  /// Text image of every stored point in the line grammar, series-major. Used
  /// for byte-level before/after comparisons and exports.
  std::string snapshot() const {
    std::shared_lock lock(mu_);
    std::string out;
    for (const auto& [k, s] : series_) {
      for (const auto& [t, v] : s) telemetry::append_line(out, {k, t, v});
    }
    for (const auto& [node, q] : queues_) {
      for (const auto& c : q.commands) {
        out += "#cmd " + node + " " + std::to_string(c.id) + " " + to_string(c.kind) + " " +
               telemetry::format_decimal(c.value) + " " + to_string(c.state) + "\n";
      }
    }
    return out;
  }

  // ---- persistence ----------------------------------------------------

  /// Appends every accepted point to `path` in the line grammar. Existing
  /// content is replayed first, so a restarted store resumes where it left off.
  void attach_log(const std::string& path) {
    std::vector<Point> replay;
    if (std::ifstream in{path}; in) {
      std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      replay = telemetry::decode_points(text);
    }
    std::unique_lock lock(mu_);
    for (const auto& p : replay) series_[p.series][p.timestamp] = p.value;
    log_.emplace(path, std::ios::app);
    if (!*log_) throw ConfigError("cannot open datastore log '" + path + "'");
  }

  // ---- command queue --------------------------------------------------

  void set_redelivery_timeout(const std::string& node, TimeMs timeout) {
    std::unique_lock lock(mu_);
    queues_[node].redelivery_timeout = timeout;
  }

  /// Assigns the next id for the node and queues the command as pending.
  std::uint64_t enqueue_command(Command cmd) {
    CommandEvent ev;
    {
      std::unique_lock lock(mu_);
      NodeQueue& q = queue_locked(cmd.node);
      cmd.id = ++q.last_id;
      cmd.state = CommandState::pending;
      q.commands.push_back(cmd);
      ev = {CommandEvent::Op::enqueue, cmd.node, {cmd.id}, CommandState::pending, cmd.issued_at};
      if (command_observer_) command_observer_(ev);
    }
    return cmd.id;
  }

  /// Returns pending commands (and delivered ones whose redelivery timeout
  /// expired) in id order, marking them delivered at `now`.
  std::vector<Command> fetch_pending(const std::string& node, TimeMs now) {
    std::unique_lock lock(mu_);
    std::vector<Command> out;
    auto it = queues_.find(node);
    if (it == queues_.end()) return out;
    NodeQueue& q = it->second;
    const TimeMs timeout = q.redelivery_timeout.value_or(opts_.default_redelivery_timeout);
    CommandEvent ev{CommandEvent::Op::fetch, node, {}, CommandState::delivered, now};
    for (Entry& c : q.commands) {
      const bool due = c.state == CommandState::pending ||
                       (c.state == CommandState::delivered && now - c.delivered_at >= timeout);
      if (!due) continue;
      c.state = CommandState::delivered;
      c.delivered_at = now;
      out.push_back(c);
      ev.ids.push_back(c.id);
    }
    if (command_observer_) command_observer_(ev);
    return out;
  }

  /// Records the node's outcome. Acking an already-final command is a no-op
  /// that returns its state; acking an unknown or never-delivered id throws.
  CommandState ack(const std::string& node, std::uint64_t id, AckOutcome outcome) {
    std::unique_lock lock(mu_);
    Entry* c = find_locked(node, id);
    if (!c) throw ConfigError("ack for unknown command " + node + "#" + std::to_string(id));
    if (c->state == CommandState::pending) {
      throw DomainError("ack for undelivered command " + node + "#" + std::to_string(id));
    }
    if (c->state == CommandState::delivered) {
      c->state = outcome == AckOutcome::applied ? CommandState::acked : CommandState::rejected;
    }
    if (command_observer_) command_observer_({CommandEvent::Op::ack, node, {id}, c->state, 0, outcome});
    return c->state;
  }

  /// Every command for the node, any state, without marking anything delivered.
  std::vector<Command> list_commands(const std::string& node) const {
    std::shared_lock lock(mu_);
    auto it = queues_.find(node);
    if (it == queues_.end()) return {};
    return {it->second.commands.begin(), it->second.commands.end()};
  }

  std::vector<Command> all_commands() const {
    std::shared_lock lock(mu_);
    std::vector<Command> out;
    for (const auto& [_, q] : queues_) out.insert(out.end(), q.commands.begin(), q.commands.end());
    return out;
  }

  // ---- observers ------------------------------------------------------

  /// Registers a callback run after each write with the accepted points (outside the lock).
  /// Register observers before sharing the store between threads.
  void on_points(PointObserver f) { point_observers_.push_back(std::move(f)); }
  /// Called under the lock for each command-queue mutation.
  void on_command_event(CommandObserver f) { command_observer_ = std::move(f); }

 private:
  struct Entry : Command {
    TimeMs delivered_at = 0;
    Entry(const Command& c) : Command(c) {}  // NOLINT(google-explicit-constructor)
  };

  struct NodeQueue {
    std::uint64_t last_id = 0;
    std::vector<Entry> commands;
    std::optional<TimeMs> redelivery_timeout;
  };

  TimeMs retention_floor_locked() const {
    if (opts_.retention_window == std::numeric_limits<TimeMs>::max() ||
        clock_ == std::numeric_limits<TimeMs>::min()) {
      return std::numeric_limits<TimeMs>::min();
    }
    return clock_ - opts_.retention_window;
  }

  NodeQueue& queue_locked(const std::string& node) { return queues_[node]; }

  Entry* find_locked(const std::string& node, std::uint64_t id) {
    auto it = queues_.find(node);
    if (it == queues_.end()) return nullptr;
    for (auto& c : it->second.commands) {
      if (c.id == id) return &c;
    }
    return nullptr;
  }

  DatastoreOptions opts_;
  mutable std::shared_mutex mu_;
  std::map<SeriesKey, std::map<TimeMs, double>> series_;
  std::map<std::string, NodeQueue> queues_;
  std::optional<std::ofstream> log_;
  TimeMs clock_ = std::numeric_limits<TimeMs>::min();
  std::vector<PointObserver> point_observers_;
  CommandObserver command_observer_;
};

}  // namespace stormloop::store
