#pragma once

#include <cstddef>
#include <optional>
#include <utility>

namespace ussim::service {

// Latest-wins gate for one streaming session: at most one message in flight and at most
// one waiting. A newer arrival replaces the waiting one. Not thread safe; the owning
// session calls it from a single strand.
template <class T>
class LatestWins {
 public:
  // Returns the message to start now if nothing is in flight.
  std::optional<T> offer(T msg) {
    ++received_;
    if (!busy_) {
      busy_ = true;
      return std::optional<T>(std::move(msg));
    }
    if (pending_) ++dropped_;
    pending_ = std::move(msg);
    return std::nullopt;
  }

  // The in-flight message is done; returns the next one to start, if any.
  std::optional<T> finish() {
    if (pending_) {
      std::optional<T> next = std::move(pending_);
      pending_.reset();
      return next;
    }
    busy_ = false;
    return std::nullopt;
  }

  bool busy() const noexcept { return busy_; }
  bool has_pending() const noexcept { return pending_.has_value(); }
  std::size_t received() const noexcept { return received_; }
  std::size_t dropped() const noexcept { return dropped_; }

 private:
  bool busy_ = false;
  std::optional<T> pending_;
  std::size_t received_ = 0, dropped_ = 0;
};

}  // namespace ussim::service
