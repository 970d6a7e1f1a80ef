#include "rldist/taskrt/runtime.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>

namespace rldist::taskrt {

namespace detail {

ThreadContext& this_thread_context() {
  thread_local ThreadContext ctx;
  return ctx;
}

std::uint64_t next_completion_stamp() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

void ActorCellBase::post(Task task) {
  {
    std::lock_guard lock(mu_);
    const bool alive = status_ == ActorStatus::queued || status_ == ActorStatus::running ||
                       (status_ == ActorStatus::failed && needs_restart_);
    if (alive && !stop_) {
      mailbox_.push_back(std::move(task));
      cv_.notify_one();
      return;
    }
  }
  task.fail(std::make_exception_ptr(ActorUnavailable("actor " + std::to_string(id_) + " is not live")));
}

void ActorCellBase::set_failures(FailureSchedule schedule) {
  std::lock_guard lock(mu_);
  failures_ = std::move(schedule);
}

void ActorCellBase::start() {
  std::lock_guard lock(mu_);
  if (stop_) return;
  thread_ = std::thread([this] { loop(); });
}

void ActorCellBase::fail_queued_locked(const std::string& reason) {
  auto err = std::make_exception_ptr(ActorUnavailable(reason));
  for (auto& t : mailbox_) t.fail(err);
  mailbox_.clear();
}

void ActorCellBase::terminate() {
  {
    std::lock_guard lock(mu_);
    if (status_ == ActorStatus::terminated && stop_) return;
    stop_ = true;
    status_ = ActorStatus::terminated;
    fail_queued_locked("actor " + std::to_string(id_) + " terminated");
    cv_.notify_all();
  }
  if (thread_.joinable()) {
    if (thread_.get_id() == std::this_thread::get_id()) {
      thread_.detach();
    } else {
      thread_.join();
    }
  }
}

void ActorCellBase::loop() {
  auto& tctx = this_thread_context();
  tctx.runtime = &runtime_;
  tctx.actor = id_;
  ActorContext ctx{runtime_, id_};

  try {
    construct(ctx);
    std::lock_guard lock(mu_);
    if (!stop_) status_ = ActorStatus::running;
  } catch (...) {
    std::lock_guard lock(mu_);
    status_ = ActorStatus::failed;
    needs_restart_ = false;
    fail_queued_locked("actor " + std::to_string(id_) + " constructor failed");
  }

  for (;;) {
    Task task;
    bool restart = false;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return stop_ || !mailbox_.empty(); });
      if (stop_) break;
      task = std::move(mailbox_.front());
      mailbox_.pop_front();
      ++calls_;
      const auto& plan = failures_.fail_on_calls;
      if (std::find(plan.begin(), plan.end(), calls_) != plan.end()) {
        status_ = ActorStatus::failed;
        needs_restart_ = failures_.recoverable;
        const std::string reason = "actor " + std::to_string(id_) + " failed (injected)";
        task.fail(std::make_exception_ptr(ActorUnavailable(reason)));
        fail_queued_locked(reason);
        lock.unlock();
        destroy();
        runtime_.on_actor_failed(id_);
        continue;
      }
      restart = status_ == ActorStatus::failed;
    }
    if (restart) {
      try {
        construct(ctx);
        runtime_.stats().actor_restarts += 1;
        std::lock_guard lock(mu_);
        if (!stop_) status_ = ActorStatus::running;
      } catch (...) {
        std::lock_guard lock(mu_);
        needs_restart_ = false;
        task.fail(std::make_exception_ptr(ActorUnavailable("actor restart failed")));
        fail_queued_locked("actor restart failed");
        continue;
      }
    }

    if (runtime_.config().record_trace) runtime_.record_trace(id_, task.method);
    const auto begin = std::chrono::steady_clock::now();
    std::function<void()> publish;
    try {
      publish = task.run(instance());
    } catch (const rldist::Error&) {
      // Library errors keep their type across the actor boundary.
      auto err = std::current_exception();
      publish = [&task, err] { task.fail(err); };
    } catch (const std::exception& e) {
      auto err = std::make_exception_ptr(MethodError(task.method + ": " + e.what()));
      publish = [&task, err] { task.fail(err); };
    } catch (...) {
      auto err = std::make_exception_ptr(MethodError(task.method + ": unknown error"));
      publish = [&task, err] { task.fail(err); };
    }
    runtime_.stats().tasks_executed += 1;
    const double slow = straggler_.load();
    if (slow > 1.0) {
      const auto spent = std::chrono::steady_clock::now() - begin;
      std::this_thread::sleep_for(std::chrono::duration_cast<std::chrono::nanoseconds>(spent * (slow - 1.0)));
    }
    publish();
  }
  destroy();
}

}  // namespace detail

RuntimeConfig RuntimeConfig::with_environment() const {
  RuntimeConfig out = *this;
  if (const char* env = std::getenv("RLDIST_SLOTS"); env != nullptr && *env != '\0') {
    const int slots = std::atoi(env);
    if (slots >= 1) out.slot_capacity = slots;
  }
  return out;
}

Runtime::Runtime(RuntimeConfig config)
    : config_(config.with_environment()), stats_(std::make_unique<Instrumentation>()) {
  if (config_.slot_capacity < 1) throw InvalidClaim("slot_capacity must be >= 1");
  free_slots_ = config_.slot_capacity;
  auto& ctx = detail::this_thread_context();
  if (ctx.runtime == nullptr) ctx.runtime = this;
}

Runtime::~Runtime() {
  std::vector<std::shared_ptr<detail::ActorCellBase>> roots;
  {
    std::lock_guard lock(mu_);
    shutdown_ = true;
    for (auto& [id, cell] : actors_) {
      if (cell->parent() == kDriverId) roots.push_back(cell);
    }
  }
  for (auto it = roots.rbegin(); it != roots.rend(); ++it) terminate(ActorRefBase(*it));
  std::vector<std::shared_ptr<detail::ActorCellBase>> rest;
  {
    std::lock_guard lock(mu_);
    for (auto& [id, cell] : actors_) rest.push_back(cell);
  }
  for (auto& cell : rest) cell->terminate();
  auto& ctx = detail::this_thread_context();
  if (ctx.runtime == this) ctx.runtime = nullptr;
}

ActorId Runtime::current_actor() { return detail::this_thread_context().actor; }

void Runtime::validate_claim(const ResourceClaim& claim) const {
  if (claim.cpu_slots < 1) throw InvalidClaim("cpu_slots must be >= 1");
  if (claim.cpu_slots > config_.slot_capacity) {
    throw InvalidClaim("cpu_slots " + std::to_string(claim.cpu_slots) + " exceeds capacity " +
                       std::to_string(config_.slot_capacity));
  }
  std::lock_guard lock(mu_);
  if (shutdown_) throw RuntimeShutdown("runtime is shutting down");
}

void Runtime::admit(std::shared_ptr<detail::ActorCellBase> cell) {
  // The driver thread of a runtime is whichever thread is not an actor; make
  // sure it can find us for byte accounting.
  auto& tctx = detail::this_thread_context();
  if (tctx.runtime == nullptr) tctx.runtime = this;

  const ActorId id = cell->id();
  if (auto it = config_.straggler_injection.find(id); it != config_.straggler_injection.end()) {
    cell->set_straggler(it->second);
  }
  if (auto it = config_.failure_injection.find(id); it != config_.failure_injection.end()) {
    cell->set_failures(it->second);
  }
  bool start_now = false;
  {
    std::lock_guard lock(mu_);
    if (shutdown_) throw RuntimeShutdown("runtime is shutting down");
    actors_[id] = cell;
    children_.emplace(cell->parent(), id);
    if (spawn_queue_.empty() && free_slots_ >= cell->claim().cpu_slots) {
      free_slots_ -= cell->claim().cpu_slots;
      holding_slots_[id] = cell->claim().cpu_slots;
      start_now = true;
    } else {
      spawn_queue_.push_back(cell);
    }
  }
  stats_->actors_spawned += 1;
  const int depth = depth_of(id);
  int seen = max_depth_.load();
  while (depth > seen && !max_depth_.compare_exchange_weak(seen, depth)) {
  }
  if (start_now) cell->start();
}

void Runtime::release_slots(int n) {
  std::vector<std::shared_ptr<detail::ActorCellBase>> to_start;
  {
    std::lock_guard lock(mu_);
    free_slots_ += n;
    while (!spawn_queue_.empty() && spawn_queue_.front()->claim().cpu_slots <= free_slots_) {
      auto cell = spawn_queue_.front();
      spawn_queue_.pop_front();
      free_slots_ -= cell->claim().cpu_slots;
      holding_slots_[cell->id()] = cell->claim().cpu_slots;
      to_start.push_back(std::move(cell));
    }
  }
  for (auto& cell : to_start) cell->start();
}

void Runtime::terminate(const ActorRefBase& actor) {
  if (!actor.valid()) return;
  // Post-order over the subtree so parents observe their children going away.
  std::vector<ActorId> order;
  std::vector<std::pair<ActorId, bool>> stack{{actor.id(), false}};
  {
    std::lock_guard lock(mu_);
    while (!stack.empty()) {
      auto [id, expanded] = stack.back();
      stack.pop_back();
      if (expanded) {
        order.push_back(id);
        continue;
      }
      stack.emplace_back(id, true);
      auto range = children_.equal_range(id);
      for (auto it = range.first; it != range.second; ++it) stack.emplace_back(it->second, false);
    }
  }
  for (ActorId id : order) {
    std::shared_ptr<detail::ActorCellBase> cell;
    int held = 0;
    {
      std::lock_guard lock(mu_);
      auto it = actors_.find(id);
      if (it == actors_.end()) continue;
      cell = it->second;
      std::erase(spawn_queue_, cell);
      if (auto h = holding_slots_.find(id); h != holding_slots_.end()) {
        held = h->second;
        holding_slots_.erase(h);
      }
    }
    cell->terminate();
    if (held > 0) release_slots(held);
  }
}

int Runtime::free_slots() const {
  std::lock_guard lock(mu_);
  return free_slots_;
}

std::size_t Runtime::queued_spawns() const {
  std::lock_guard lock(mu_);
  return spawn_queue_.size();
}

ActorStatus Runtime::status(ActorId id) const {
  std::lock_guard lock(mu_);
  auto it = actors_.find(id);
  if (it == actors_.end()) throw ActorUnavailable("unknown actor " + std::to_string(id));
  return it->second->status();
}

std::vector<ActorId> Runtime::children_of(ActorId id) const {
  std::lock_guard lock(mu_);
  std::vector<ActorId> out;
  auto range = children_.equal_range(id);
  for (auto it = range.first; it != range.second; ++it) out.push_back(it->second);
  std::sort(out.begin(), out.end());
  return out;
}

ActorId Runtime::parent_of(ActorId id) const {
  std::lock_guard lock(mu_);
  auto it = actors_.find(id);
  if (it == actors_.end()) throw ActorUnavailable("unknown actor " + std::to_string(id));
  return it->second->parent();
}

int Runtime::depth_of(ActorId id) const {
  int depth = 0;
  std::lock_guard lock(mu_);
  while (id != kDriverId) {
    auto it = actors_.find(id);
    if (it == actors_.end()) throw ActorUnavailable("unknown actor " + std::to_string(id));
    id = it->second->parent();
    ++depth;
  }
  return depth;
}

std::size_t Runtime::live_actor_count() const {
  std::lock_guard lock(mu_);
  return static_cast<std::size_t>(
      std::count_if(actors_.begin(), actors_.end(), [](const auto& kv) {
        const auto s = kv.second->status();
        return s == ActorStatus::running || s == ActorStatus::queued;
      }));
}

void Runtime::set_straggler(ActorId id, double multiplier) {
  std::lock_guard lock(mu_);
  auto it = actors_.find(id);
  if (it == actors_.end()) throw ActorUnavailable("unknown actor " + std::to_string(id));
  it->second->set_straggler(multiplier);
}

void Runtime::inject_failure(ActorId id, FailureSchedule schedule) {
  std::lock_guard lock(mu_);
  auto it = actors_.find(id);
  if (it == actors_.end()) throw ActorUnavailable("unknown actor " + std::to_string(id));
  it->second->set_failures(std::move(schedule));
}

std::vector<TraceEntry> Runtime::trace() const {
  std::lock_guard lock(trace_mu_);
  return trace_;
}

void Runtime::record_trace(ActorId actor, const std::string& method) {
  std::lock_guard lock(trace_mu_);
  trace_.push_back({actor, method});
}

void Runtime::on_actor_failed(ActorId) {}

std::shared_ptr<const detail::ObjectEntry> Runtime::insert_object(std::uint32_t tag, std::shared_ptr<const void> value,
                                                                  Bytes framed) {
  auto entry = std::make_shared<detail::ObjectEntry>();
  entry->id = next_object_id_.fetch_add(1);
  entry->tag = tag;
  entry->value = std::move(value);
  entry->framed = std::move(framed);
  std::lock_guard lock(objects_mu_);
  if (objects_.size() > 4096) std::erase_if(objects_, [](const auto& kv) { return kv.second.expired(); });
  objects_[entry->id] = entry;
  return entry;
}

std::shared_ptr<const detail::ObjectEntry> Runtime::lookup(ObjectId id) {
  std::lock_guard lock(objects_mu_);
  auto it = objects_.find(id);
  if (it == objects_.end()) throw UnknownObject("object " + std::to_string(id));
  auto entry = it->second.lock();
  if (!entry) {
    objects_.erase(it);
    throw UnknownObject("object " + std::to_string(id) + " was released");
  }
  return entry;
}

std::shared_ptr<const Bytes> Runtime::fetch_bytes(ObjectId id) {
  auto entry = lookup(id);
  account_driver_in(entry->framed.size());
  return std::shared_ptr<const Bytes>(entry, &entry->framed);
}

}  // namespace rldist::taskrt
