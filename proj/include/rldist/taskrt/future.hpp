#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <exception>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include "rldist/common/error.hpp"

namespace rldist::taskrt {

using TaskId = std::uint64_t;

enum class FutureState { pending, ready, failed };

namespace detail {

// Shared by a wait() call and every future it watches.
struct Waiter {
  std::mutex mu;
  std::condition_variable cv;
  std::size_t completed = 0;
};

std::uint64_t next_completion_stamp();

class SharedStateBase {
 public:
  virtual ~SharedStateBase() = default;

  FutureState state() const {
    std::lock_guard lock(mu_);
    return state_;
  }

  void wait() const {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return state_ != FutureState::pending; });
  }

  template <class Rep, class Period>
  bool wait_for(std::chrono::duration<Rep, Period> d) const {
    std::unique_lock lock(mu_);
    return cv_.wait_for(lock, d, [&] { return state_ != FutureState::pending; });
  }

  // Monotone across the process; orders completions for wait().
  std::uint64_t completion_stamp() const {
    std::lock_guard lock(mu_);
    return stamp_;
  }

  void add_waiter(const std::shared_ptr<Waiter>& w) {
    {
      std::lock_guard lock(mu_);
      if (state_ == FutureState::pending) {
        waiters_.push_back(w);
        return;
      }
    }
    std::lock_guard wl(w->mu);
    ++w->completed;
    w->cv.notify_all();
  }

  void set_error(std::exception_ptr e) {
    std::vector<std::weak_ptr<Waiter>> waiters;
    {
      std::lock_guard lock(mu_);
      if (state_ != FutureState::pending) return;
      error_ = std::move(e);
      finish_locked(FutureState::failed, waiters);
    }
    notify(waiters);
  }

 protected:
  void finish_locked(FutureState s, std::vector<std::weak_ptr<Waiter>>& out) {
    state_ = s;
    stamp_ = next_completion_stamp();
    out.swap(waiters_);
    cv_.notify_all();
  }

  static void notify(const std::vector<std::weak_ptr<Waiter>>& waiters) {
    for (const auto& weak : waiters) {
      if (auto w = weak.lock()) {
        std::lock_guard wl(w->mu);
        ++w->completed;
        w->cv.notify_all();
      }
    }
  }

  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  FutureState state_ = FutureState::pending;
  std::uint64_t stamp_ = 0;
  std::exception_ptr error_;
  std::vector<std::weak_ptr<Waiter>> waiters_;
};

template <class T>
class SharedState final : public SharedStateBase {
 public:
  void set_value(T v) {
    std::vector<std::weak_ptr<Waiter>> waiters;
    {
      std::lock_guard lock(mu_);
      if (state_ != FutureState::pending) return;
      value_.emplace(std::move(v));
      finish_locked(FutureState::ready, waiters);
    }
    notify(waiters);
  }

  // Blocks until resolved. The reference stays valid for the state's life.
  const T& get() const {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return state_ != FutureState::pending; });
    if (state_ == FutureState::failed) std::rethrow_exception(error_);
    return *value_;
  }

  // Set by the first successful Future::get() (driver byte accounting).
  std::atomic<bool> observed{false};
  // Driver-inbound byte counter of the runtime that issued the task.
  std::atomic<std::uint64_t>* driver_bytes_in = nullptr;

 private:
  std::optional<T> value_;
};

}  // namespace detail

// Placeholder for the result of an actor method. Copies share one state.
template <class T>
class Future {
 public:
  Future() = default;
  Future(TaskId id, std::shared_ptr<detail::SharedState<T>> state) : id_(id), state_(std::move(state)) {}

  TaskId task_id() const { return id_; }
  FutureState state() const { return state_->state(); }
  bool is_ready() const { return state() != FutureState::pending; }
  bool valid() const { return static_cast<bool>(state_); }

  // Throws the stored error (ActorUnavailable, MethodError, ...) on failure.
  const T& get() const;

  template <class Rep, class Period>
  bool wait_for(std::chrono::duration<Rep, Period> d) const {
    return state_->wait_for(d);
  }

  const std::shared_ptr<detail::SharedState<T>>& shared_state() const { return state_; }

 private:
  TaskId id_ = 0;
  std::shared_ptr<detail::SharedState<T>> state_;
};

template <class T>
struct WaitResult {
  std::vector<Future<T>> ready;    // completion order
  std::vector<Future<T>> pending;  // input order
};

// Returns once `k` of `futures` have resolved (ready or failed) or `timeout`
// elapsed. `ready` + `pending` is a permutation of the input.
template <class T, class Rep, class Period>
WaitResult<T> wait(const std::vector<Future<T>>& futures, std::size_t k,
                   std::chrono::duration<Rep, Period> timeout);

}  // namespace rldist::taskrt
