#pragma once

// In-process hierarchical actor runtime.
//
// Every actor owns a dedicated thread and a FIFO mailbox; distinct actors run
// concurrently while each processes its own tasks serially. Actors may spawn
// child actors and invoke them (hierarchical delegation); terminating an actor
// terminates its subtree. Actor placement is limited by a pool of logical
// slots: a spawn that does not fit is queued FIFO and its actor is constructed
// once enough slots are released.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <concepts>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <type_traits>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rldist/taskrt/framing.hpp"
#include "rldist/taskrt/future.hpp"

namespace rldist::taskrt {

using ActorId = std::uint64_t;
using ObjectId = std::uint64_t;

inline constexpr ActorId kDriverId = 0;

struct ResourceClaim {
  int cpu_slots = 1;
  std::size_t memory_hint = 0;
};

// Fails the actor right before its n-th task (1-based) for each n listed.
struct FailureSchedule {
  std::vector<std::uint64_t> fail_on_calls;
  bool recoverable = true;
};

struct RuntimeConfig {
  int slot_capacity = 64;
  std::uint64_t seed = 0;
  std::map<ActorId, double> straggler_injection;
  std::map<ActorId, FailureSchedule> failure_injection;
  bool record_trace = false;

  // RLDIST_SLOTS, when set, overrides slot_capacity.
  RuntimeConfig with_environment() const;
};

enum class ActorStatus { queued, running, failed, terminated };

class Runtime;

// Passed to actor constructors that accept it; gives access to the runtime
// for hierarchical spawning and nested invocation.
struct ActorContext {
  Runtime& runtime;
  ActorId self;
};

// Counters read by tests and benchmarks.
struct Instrumentation {
  std::atomic<std::uint64_t> serializations{0};
  std::atomic<std::uint64_t> driver_bytes_in{0};
  std::atomic<std::uint64_t> driver_bytes_out{0};
  std::atomic<std::uint64_t> tasks_executed{0};
  std::atomic<std::uint64_t> actors_spawned{0};
  std::atomic<std::uint64_t> actor_restarts{0};
};

struct TraceEntry {
  ActorId actor;
  std::string method;
  friend bool operator==(const TraceEntry&, const TraceEntry&) = default;
};

namespace detail {

struct ThreadContext {
  Runtime* runtime = nullptr;
  ActorId actor = kDriverId;
};

ThreadContext& this_thread_context();

struct ObjectEntry {
  ObjectId id = 0;
  std::uint32_t tag = 0;
  std::shared_ptr<const void> value;
  Bytes framed;
};

struct Task {
  TaskId id = 0;
  std::string method;
  // Runs the method and returns a closure that publishes its result, so the
  // runtime can hold the result back for injected straggler delays.
  std::function<std::function<void()>(void* instance)> run;
  std::function<void(std::exception_ptr)> fail;
};

class ActorCellBase {
 public:
  ActorCellBase(Runtime& rt, ActorId id, ResourceClaim claim, ActorId parent)
      : runtime_(rt), id_(id), claim_(claim), parent_(parent) {}
  virtual ~ActorCellBase() = default;

  ActorId id() const { return id_; }
  ActorId parent() const { return parent_; }
  const ResourceClaim& claim() const { return claim_; }

  ActorStatus status() const {
    std::lock_guard lock(mu_);
    return status_;
  }

  // Enqueues a task, or fails it immediately when the actor is gone.
  void post(Task task);

  void start();      // called by the runtime once slots are granted
  void terminate();  // fails queued tasks, joins the thread

  void set_straggler(double multiplier) { straggler_.store(multiplier); }
  void set_failures(FailureSchedule schedule);

 protected:
  virtual void construct(ActorContext& ctx) = 0;
  virtual void destroy() = 0;
  virtual void* instance() = 0;

 private:
  void loop();
  void fail_queued_locked(const std::string& reason);

  Runtime& runtime_;
  const ActorId id_;
  const ResourceClaim claim_;
  const ActorId parent_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Task> mailbox_;
  ActorStatus status_ = ActorStatus::queued;
  bool needs_restart_ = false;
  bool stop_ = false;
  std::uint64_t calls_ = 0;
  FailureSchedule failures_;
  std::atomic<double> straggler_{1.0};
  std::thread thread_;
};

template <class T>
class ActorCell final : public ActorCellBase {
 public:
  using Factory = std::function<std::unique_ptr<T>(ActorContext&)>;

  ActorCell(Runtime& rt, ActorId id, ResourceClaim claim, ActorId parent, Factory factory)
      : ActorCellBase(rt, id, claim, parent), factory_(std::move(factory)) {}

 protected:
  void construct(ActorContext& ctx) override { instance_ = factory_(ctx); }
  void destroy() override { instance_.reset(); }
  void* instance() override { return instance_.get(); }

 private:
  Factory factory_;
  std::unique_ptr<T> instance_;
};

}  // namespace detail

// Handle to an actor. Cheap to copy and safe to hand to other actors.
class ActorRefBase {
 public:
  ActorRefBase() = default;
  explicit ActorRefBase(std::shared_ptr<detail::ActorCellBase> cell) : cell_(std::move(cell)) {}

  ActorId id() const { return cell_ ? cell_->id() : kDriverId; }
  ActorId parent_id() const { return cell_->parent(); }
  const ResourceClaim& claim() const { return cell_->claim(); }
  ActorStatus status() const { return cell_->status(); }
  bool valid() const { return static_cast<bool>(cell_); }

  const std::shared_ptr<detail::ActorCellBase>& cell() const { return cell_; }

 private:
  std::shared_ptr<detail::ActorCellBase> cell_;
};

template <class T>
class ActorRef : public ActorRefBase {
 public:
  using ActorType = T;
  using ActorRefBase::ActorRefBase;
};

// Handle to an immutable object in the store. Holding a ref keeps the
// payload alive; the store itself only keeps weak references.
template <class T>
class ObjectRef {
 public:
  ObjectRef() = default;
  explicit ObjectRef(std::shared_ptr<const detail::ObjectEntry> entry) : entry_(std::move(entry)) {}

  ObjectId id() const { return entry_ ? entry_->id : 0; }
  std::size_t size_bytes() const { return entry_ ? entry_->framed.size() : 0; }
  bool valid() const { return static_cast<bool>(entry_); }

  const std::shared_ptr<const detail::ObjectEntry>& entry() const { return entry_; }

 private:
  std::shared_ptr<const detail::ObjectEntry> entry_;
};

// Bytes a value would occupy on the wire. Object refs travel as handles.
inline constexpr std::size_t kHandleBytes = 16;

template <class T>
struct WireSize {
  static std::size_t of(const T& v) {
    if constexpr (Encodable<T>) {
      if constexpr (requires { Codec<T>::size(v); }) {
        return kFrameHeaderBytes + Codec<T>::size(v);
      } else {
        return encode_framed(v).size();
      }
    } else {
      return sizeof(T);
    }
  }
};

template <class T>
struct WireSize<ObjectRef<T>> {
  static std::size_t of(const ObjectRef<T>&) { return kHandleBytes; }
};

template <class T>
struct WireSize<ActorRef<T>> {
  static std::size_t of(const ActorRef<T>&) { return kHandleBytes; }
};

template <class T>
struct WireSize<std::vector<ObjectRef<T>>> {
  static std::size_t of(const std::vector<ObjectRef<T>>& v) { return kHandleBytes * v.size(); }
};

template <class T>
struct WireSize<std::vector<ActorRef<T>>> {
  static std::size_t of(const std::vector<ActorRef<T>>& v) { return kHandleBytes * v.size(); }
};

template <class T>
std::size_t wire_size(const T& v) {
  return WireSize<std::remove_cvref_t<T>>::of(v);
}

namespace detail {

template <class T>
struct IsObjectRef : std::false_type {};
template <class T>
struct IsObjectRef<ObjectRef<T>> : std::true_type {};

template <class A>
struct Resolved {
  using type = A&;
};
template <class U>
struct Resolved<ObjectRef<U>> {
  using type = const U&;
};

template <class R>
using ResultOf = std::conditional_t<std::is_void_v<R>, Unit, R>;

}  // namespace detail

class Runtime {
 public:
  explicit Runtime(RuntimeConfig config = {});
  ~Runtime();

  Runtime(const Runtime&) = delete;
  Runtime& operator=(const Runtime&) = delete;

  const RuntimeConfig& config() const { return config_; }
  Instrumentation& stats() { return *stats_; }

  // Constructs T from (ActorContext&, args...) when it accepts a context,
  // otherwise from (args...). Arguments are copied so a recoverable actor can
  // be rebuilt from its constructor after an injected failure.
  template <class T, class... Args>
  ActorRef<T> spawn(ResourceClaim claim, Args... args) {
    typename detail::ActorCell<T>::Factory factory = [... captured = std::move(args)](ActorContext& ctx) {
      if constexpr (std::is_constructible_v<T, ActorContext&, const Args&...>) {
        return std::make_unique<T>(ctx, captured...);
      } else {
        return std::make_unique<T>(captured...);
      }
    };
    return spawn_with<T>(claim, std::move(factory));
  }

  template <class T>
  ActorRef<T> spawn_with(ResourceClaim claim, typename detail::ActorCell<T>::Factory factory) {
    validate_claim(claim);
    const ActorId id = next_actor_id_.fetch_add(1);
    auto cell = std::make_shared<detail::ActorCell<T>>(*this, id, claim, current_actor(), std::move(factory));
    admit(cell);
    return ActorRef<T>(cell);
  }

  // Runs `fn(T&, resolved args...)` on the actor's mailbox. ObjectRef<U>
  // arguments are resolved to `const U&` on the actor before `fn` runs.
  template <class T, class F, class... Args>
  auto invoke(const ActorRef<T>& actor, std::string method, F fn, Args... args)
      -> Future<detail::ResultOf<std::invoke_result_t<F, T&, typename detail::Resolved<Args>::type...>>>;

  void terminate(const ActorRefBase& actor);

  template <class T>
  ObjectRef<T> put(T value);

  // Zero-copy: the returned pointer aliases the stored object.
  template <class T>
  std::shared_ptr<const T> fetch(const ObjectRef<T>& ref);

  // Lookup by id for refs that crossed a boundary as a bare id.
  template <class T>
  std::shared_ptr<const T> fetch(ObjectId id);

  // The framed bytes exactly as produced by put().
  std::shared_ptr<const Bytes> fetch_bytes(ObjectId id);

  int free_slots() const;
  std::size_t queued_spawns() const;

  ActorStatus status(ActorId id) const;
  std::vector<ActorId> children_of(ActorId id) const;
  ActorId parent_of(ActorId id) const;
  // 1 for actors spawned by the driver, 2 for their children, ...
  int depth_of(ActorId id) const;
  int max_depth_seen() const { return max_depth_.load(); }
  std::size_t live_actor_count() const;

  void set_straggler(ActorId id, double multiplier);
  void inject_failure(ActorId id, FailureSchedule schedule);

  std::vector<TraceEntry> trace() const;

  bool on_driver() const { return current_actor() == kDriverId; }
  static ActorId current_actor();

  // Internal hooks used by actor cells.
  void record_trace(ActorId actor, const std::string& method);
  void on_actor_failed(ActorId id);
  std::uint64_t next_task_id() { return next_task_id_.fetch_add(1); }
  void account_driver_in(std::size_t n) {
    if (on_driver()) stats_->driver_bytes_in += n;
  }
  void account_driver_out(std::size_t n) {
    if (on_driver()) stats_->driver_bytes_out += n;
  }

 private:
  template <class Arg>
  static typename detail::Resolved<Arg>::type resolve_arg(Arg& a);

  void validate_claim(const ResourceClaim& claim) const;
  void admit(std::shared_ptr<detail::ActorCellBase> cell);
  void release_slots(int n);
  std::shared_ptr<const detail::ObjectEntry> lookup(ObjectId id);
  std::shared_ptr<const detail::ObjectEntry> insert_object(std::uint32_t tag, std::shared_ptr<const void> value,
                                                           Bytes framed);

  RuntimeConfig config_;
  std::unique_ptr<Instrumentation> stats_;
  std::atomic<ActorId> next_actor_id_{1};
  std::atomic<TaskId> next_task_id_{1};
  std::atomic<ObjectId> next_object_id_{1};
  std::atomic<int> max_depth_{0};

  mutable std::mutex mu_;
  bool shutdown_ = false;
  int free_slots_ = 0;
  std::deque<std::shared_ptr<detail::ActorCellBase>> spawn_queue_;
  std::map<ActorId, std::shared_ptr<detail::ActorCellBase>> actors_;
  std::map<ActorId, int> holding_slots_;
  std::multimap<ActorId, ActorId> children_;

  mutable std::mutex objects_mu_;
  std::unordered_map<ObjectId, std::weak_ptr<const detail::ObjectEntry>> objects_;

  mutable std::mutex trace_mu_;
  std::vector<TraceEntry> trace_;
};

// ---------------------------------------------------------------------------

template <class T>
const T& Future<T>::get() const {
  const T& v = state_->get();
  if (!state_->observed.exchange(true)) {
    if (state_->driver_bytes_in != nullptr && detail::this_thread_context().actor == kDriverId) {
      *state_->driver_bytes_in += wire_size(v);
    }
  }
  return v;
}

template <class T, class Rep, class Period>
WaitResult<T> wait(const std::vector<Future<T>>& futures, std::size_t k, std::chrono::duration<Rep, Period> timeout) {
  k = std::min(k, futures.size());
  if (k > 0) {
    auto waiter = std::make_shared<detail::Waiter>();
    for (const auto& f : futures) f.shared_state()->add_waiter(waiter);
    std::unique_lock lock(waiter->mu);
    waiter->cv.wait_for(lock, timeout, [&] { return waiter->completed >= k; });
  }
  WaitResult<T> out;
  std::vector<std::pair<std::uint64_t, std::size_t>> done;
  for (std::size_t i = 0; i < futures.size(); ++i) {
    if (futures[i].is_ready()) done.emplace_back(futures[i].shared_state()->completion_stamp(), i);
  }
  std::sort(done.begin(), done.end());
  if (done.size() > k) done.resize(k);
  std::vector<bool> taken(futures.size(), false);
  for (const auto& [stamp, i] : done) {
    out.ready.push_back(futures[i]);
    taken[i] = true;
  }
  for (std::size_t i = 0; i < futures.size(); ++i) {
    if (!taken[i]) out.pending.push_back(futures[i]);
  }
  return out;
}

template <class Arg>
typename detail::Resolved<Arg>::type Runtime::resolve_arg(Arg& a) {
  if constexpr (detail::IsObjectRef<Arg>::value) {
    auto& ctx = detail::this_thread_context();
    // Resolved payloads are borrowed from the store for the duration of the call.
    return *ctx.runtime->fetch(a);
  } else {
    return a;
  }
}

template <class T, class F, class... Args>
auto Runtime::invoke(const ActorRef<T>& actor, std::string method, F fn, Args... args)
    -> Future<detail::ResultOf<std::invoke_result_t<F, T&, typename detail::Resolved<Args>::type...>>> {
  using Raw = std::invoke_result_t<F, T&, typename detail::Resolved<Args>::type...>;
  using R = detail::ResultOf<Raw>;
  auto state = std::make_shared<detail::SharedState<R>>();
  state->driver_bytes_in = &stats_->driver_bytes_in;
  const TaskId id = next_task_id();
  if (on_driver()) {
    std::size_t out = 0;
    ((out += wire_size(args)), ...);
    stats_->driver_bytes_out += out;
  }
  detail::Task task;
  task.id = id;
  task.method = std::move(method);
  task.run = [state, fn = std::move(fn), ... captured = std::move(args)](void* instance) mutable {
    auto& self = *static_cast<T*>(instance);
    if constexpr (std::is_void_v<Raw>) {
      std::invoke(fn, self, resolve_arg(captured)...);
      return std::function<void()>([state] { state->set_value(Unit{}); });
    } else {
      auto result = std::make_shared<R>(std::invoke(fn, self, resolve_arg(captured)...));
      return std::function<void()>([state, result] { state->set_value(std::move(*result)); });
    }
  };
  task.fail = [state](std::exception_ptr e) { state->set_error(std::move(e)); };
  actor.cell()->post(std::move(task));
  return Future<R>(id, state);
}

template <class T>
ObjectRef<T> Runtime::put(T value) {
  static_assert(Encodable<T>, "object store payloads need a Codec");
  Bytes framed = encode_framed(value);
  stats_->serializations += 1;
  account_driver_out(kHandleBytes);
  auto stored = std::make_shared<const T>(std::move(value));
  return ObjectRef<T>(insert_object(Codec<T>::tag, std::move(stored), std::move(framed)));
}

template <class T>
std::shared_ptr<const T> Runtime::fetch(const ObjectRef<T>& ref) {
  if (!ref.valid()) throw UnknownObject("null object ref");
  account_driver_in(ref.size_bytes());
  return std::shared_ptr<const T>(ref.entry(), static_cast<const T*>(ref.entry()->value.get()));
}

template <class T>
std::shared_ptr<const T> Runtime::fetch(ObjectId id) {
  auto entry = lookup(id);
  if (entry->tag != Codec<T>::tag) throw UnknownObject("object " + std::to_string(id) + " has a different type");
  account_driver_in(entry->framed.size());
  return std::shared_ptr<const T>(entry, static_cast<const T*>(entry->value.get()));
}

}  // namespace rldist::taskrt
