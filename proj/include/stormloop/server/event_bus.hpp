#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace stormloop::api {

struct StreamEvent {
  std::uint64_t seq = 0;
  std::string type;  // "point" or "alert"
  std::string data;  // JSON
};

/// Fan-out of new points and alerts to stream listeners. Publishing only
/// appends to per-listener queues, so a slow listener never blocks a writer.
class EventBus {
 public:
  class Listener {
   public:
    std::optional<StreamEvent> next(std::chrono::milliseconds timeout) {
      std::unique_lock lock(mu_);
      cv_.wait_for(lock, timeout, [&] { return !queue_.empty() || closed_; });
      if (queue_.empty()) return std::nullopt;
      StreamEvent ev = std::move(queue_.front());
      queue_.pop_front();
      return ev;
    }

    std::vector<StreamEvent> drain() {
      std::lock_guard lock(mu_);
      std::vector<StreamEvent> out(queue_.begin(), queue_.end());
      queue_.clear();
      return out;
    }

    bool closed() const {
      std::lock_guard lock(mu_);
      return closed_;
    }

   private:
    friend class EventBus;
    void push(const StreamEvent& ev) {
      {
        std::lock_guard lock(mu_);
        if (closed_) return;
        queue_.push_back(ev);
      }
      cv_.notify_one();
    }
    void close() {
      {
        std::lock_guard lock(mu_);
        closed_ = true;
      }
      cv_.notify_all();
    }

    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<StreamEvent> queue_;
    bool closed_ = false;
  };

  std::shared_ptr<Listener> subscribe() {
    auto l = std::make_shared<Listener>();
    std::lock_guard lock(mu_);
    listeners_.push_back(l);
    return l;
  }

  void unsubscribe(const std::shared_ptr<Listener>& l) {
    l->close();
    std::lock_guard lock(mu_);
    std::erase(listeners_, l);
  }

  void publish(std::string type, std::string data) {
    std::vector<std::shared_ptr<Listener>> targets;
    StreamEvent ev;
    {
      std::lock_guard lock(mu_);
      ev = {++seq_, std::move(type), std::move(data)};
      targets = listeners_;
    }
    for (auto& l : targets) l->push(ev);
  }

  void close_all() {
    std::lock_guard lock(mu_);
    for (auto& l : listeners_) l->close();
    listeners_.clear();
  }

 private:
  std::mutex mu_;
  std::uint64_t seq_ = 0;
  std::vector<std::shared_ptr<Listener>> listeners_;
};

}  // namespace stormloop::api
