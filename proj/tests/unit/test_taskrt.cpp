#include <chrono>
#include <cstdlib>
#include <numeric>
#include <thread>

#include "doctest.h"
#include "rldist/taskrt/runtime.hpp"

using namespace rldist;
using namespace rldist::taskrt;
using namespace std::chrono_literals;

namespace {

struct Echo {
  int echo(int v) const { return v; }
};

struct Counter {
  std::vector<int> seen;
  void push(int v) { seen.push_back(v); }
};

struct Sleeper {
  int nap(int ms) {
    std::this_thread::sleep_for(std::chrono::milliseconds(ms));
    return ms;
  }
};

// Spawns `fanout` children on construction and sums their answers.
struct FanOut {
  FanOut(ActorContext& ctx, int fanout) : ctx_(ctx) {
    for (int i = 0; i < fanout; ++i) children_.push_back(ctx.runtime.spawn<Echo>({1}));
  }
  int sum() {
    std::vector<Future<int>> futures;
    for (auto& c : children_) futures.push_back(ctx_.runtime.invoke(c, "echo", &Echo::echo, 1));
    int total = 0;
    for (auto& f : futures) total += f.get();
    return total;
  }
  ActorContext ctx_;
  std::vector<ActorRef<Echo>> children_;
};

struct Reader {
  double sum(const std::vector<double>& v) const { return std::accumulate(v.begin(), v.end(), 0.0); }
};

struct Producer {
  explicit Producer(ActorContext& ctx) : ctx_(ctx) {}
  ObjectRef<std::vector<double>> make(int n) {
    return ctx_.runtime.put(std::vector<double>(static_cast<std::size_t>(n), 1.0));
  }
  ActorContext ctx_;
};

struct Thrower {
  int boom() { throw std::runtime_error("kaboom"); }
};

void wait_until(const std::function<bool()>& pred) {
  for (int i = 0; i < 2000 && !pred(); ++i) std::this_thread::sleep_for(1ms);
}

}  // namespace

TEST_CASE("spawn consumes slots and rejects empty claims") {
  Runtime rt({.slot_capacity = 4});
  CHECK(rt.free_slots() == 4);
  auto a = rt.spawn<Echo>({1});
  CHECK(rt.free_slots() == 3);
  CHECK(a.parent_id() == kDriverId);
  CHECK_THROWS_AS(rt.spawn<Echo>({0}), InvalidClaim);
}

TEST_CASE("spawns beyond capacity queue until a slot is released") {
  Runtime rt({.slot_capacity = 4});
  std::vector<ActorRef<Echo>> actors;
  for (int i = 0; i < 5; ++i) actors.push_back(rt.spawn<Echo>({1}));
  CHECK(rt.queued_spawns() == 1);
  CHECK(actors[4].status() == ActorStatus::queued);

  // Work sent to the queued actor waits for it to start.
  auto pending = rt.invoke(actors[4], "echo", &Echo::echo, 5);
  CHECK_FALSE(pending.wait_for(50ms));

  rt.terminate(actors[0]);
  CHECK(pending.get() == 5);
  CHECK(actors[4].status() == ActorStatus::running);
  CHECK(rt.queued_spawns() == 0);
  CHECK(rt.free_slots() == 0);
}

TEST_CASE("invoke returns the method result") {
  Runtime rt;
  auto a = rt.spawn<Echo>({1});
  CHECK(rt.invoke(a, "echo", &Echo::echo, 42).get() == 42);
  CHECK(rt.invoke(a, "echo", [](Echo& e) { return e.echo(7); }).get() == 7);
}

TEST_CASE("nested fan-out through a child tier") {
  Runtime rt;
  auto parent = rt.spawn<FanOut>({1}, 3);
  CHECK(rt.invoke(parent, "sum", &FanOut::sum).get() == 3);
  CHECK(rt.children_of(parent.id()).size() == 3);
  CHECK(rt.max_depth_seen() == 2);
  for (ActorId child : rt.children_of(parent.id())) {
    CHECK(rt.parent_of(child) == parent.id());
    CHECK(rt.depth_of(child) == 2);
  }
}

TEST_CASE("terminated actors reject work and cascade to children") {
  Runtime rt;
  auto parent = rt.spawn<FanOut>({1}, 2);
  rt.invoke(parent, "sum", &FanOut::sum).get();
  const auto kids = rt.children_of(parent.id());
  rt.terminate(parent);
  CHECK(parent.status() == ActorStatus::terminated);
  for (ActorId k : kids) CHECK(rt.status(k) == ActorStatus::terminated);
  CHECK_THROWS_AS(rt.invoke(parent, "sum", &FanOut::sum).get(), ActorUnavailable);
  CHECK(rt.free_slots() == rt.config().slot_capacity);
}

TEST_CASE("actor-side exceptions surface as MethodError") {
  Runtime rt;
  auto a = rt.spawn<Thrower>({1});
  auto f = rt.invoke(a, "boom", &Thrower::boom);
  CHECK_THROWS_WITH_AS(f.get(), doctest::Contains("kaboom"), MethodError);
  CHECK(f.state() == FutureState::failed);
  // The actor survives its own method errors.
  CHECK(a.status() == ActorStatus::running);
}

TEST_CASE("mailboxes are FIFO per caller") {
  Runtime rt;
  auto c = rt.spawn<Counter>({1});
  for (int i = 0; i < 200; ++i) rt.invoke(c, "push", &Counter::push, i);
  auto seen = rt.invoke(c, "read", [](Counter& self) { return self.seen; }).get();
  std::vector<int> expected(200);
  std::iota(expected.begin(), expected.end(), 0);
  CHECK(seen == expected);
}

TEST_CASE("wait returns k ready futures") {
  Runtime rt;
  auto a = rt.spawn<Echo>({1});
  std::vector<Future<int>> fs;
  for (int i = 0; i < 3; ++i) fs.push_back(rt.invoke(a, "echo", &Echo::echo, i));
  for (auto& f : fs) f.get();

  auto two = wait(fs, 2, 1s);
  CHECK(two.ready.size() == 2);
  CHECK(two.pending.size() == 1);
  // Completion order: the FIFO actor resolved them in submission order.
  CHECK(two.ready[0].task_id() == fs[0].task_id());
  CHECK(two.ready[1].task_id() == fs[1].task_id());

  auto none = wait(fs, 0, 1s);
  CHECK(none.ready.empty());
  CHECK(none.pending.size() == 3);
}

TEST_CASE("wait gives up at the timeout") {
  Runtime rt;
  std::vector<ActorRef<Sleeper>> actors;
  for (int i = 0; i < 3; ++i) actors.push_back(rt.spawn<Sleeper>({1}));
  std::vector<Future<int>> fs;
  fs.push_back(rt.invoke(actors[0], "nap", &Sleeper::nap, 1));
  fs.push_back(rt.invoke(actors[1], "nap", &Sleeper::nap, 1));
  fs.push_back(rt.invoke(actors[2], "nap", &Sleeper::nap, 1000));
  const auto t0 = std::chrono::steady_clock::now();
  auto r = wait(fs, 3, 200ms);
  const auto elapsed = std::chrono::steady_clock::now() - t0;
  CHECK(r.ready.size() == 2);
  CHECK(r.pending.size() == 1);
  CHECK(r.pending[0].task_id() == fs[2].task_id());
  CHECK(elapsed >= 190ms);
  CHECK(elapsed < 900ms);
}

TEST_CASE("futures resolve once and get is idempotent") {
  Runtime rt;
  auto a = rt.spawn<Echo>({1});
  auto f = rt.invoke(a, "echo", &Echo::echo, 3);
  CHECK(f.get() == 3);
  CHECK(f.get() == 3);
  CHECK(f.state() == FutureState::ready);
}

TEST_CASE("object store round trip and unknown ids") {
  Runtime rt;
  auto ref = rt.put(std::vector<double>{1.0, 2.0, 3.0});
  CHECK(*rt.fetch(ref) == std::vector<double>{1.0, 2.0, 3.0});
  CHECK(*rt.fetch<std::vector<double>>(ref.id()) == std::vector<double>{1.0, 2.0, 3.0});
  CHECK_THROWS_AS(rt.fetch<std::vector<double>>(ObjectId{987654}), UnknownObject);
  CHECK_THROWS_AS(rt.fetch<std::string>(ref.id()), UnknownObject);

  auto bytes = rt.fetch_bytes(ref.id());
  CHECK(*bytes == encode_framed(std::vector<double>{1.0, 2.0, 3.0}));
}

TEST_CASE("one put is serialized once regardless of readers") {
  Runtime rt;
  auto ref = rt.put(std::vector<double>(1000, 0.5));
  CHECK(rt.stats().serializations == 1);
  std::vector<ActorRef<Reader>> readers;
  for (int i = 0; i < 4; ++i) readers.push_back(rt.spawn<Reader>({1}));
  std::vector<Future<double>> sums;
  for (auto& r : readers) sums.push_back(rt.invoke(r, "sum", &Reader::sum, ref));
  for (auto& s : sums) CHECK(s.get() == doctest::Approx(500.0));
  CHECK(rt.stats().serializations == 1);
}

TEST_CASE("payloads passed by ref between actors bypass the driver") {
  Runtime rt;
  auto producer = rt.spawn<Producer>({1});
  auto reader = rt.spawn<Reader>({1});
  const auto in0 = rt.stats().driver_bytes_in.load();
  const auto out0 = rt.stats().driver_bytes_out.load();
  auto ref = rt.invoke(producer, "make", &Producer::make, 100000).get();
  CHECK(ref.size_bytes() > 800000);
  CHECK(rt.invoke(reader, "sum", &Reader::sum, ref).get() == doctest::Approx(100000.0));
  const auto in = rt.stats().driver_bytes_in.load() - in0;
  const auto out = rt.stats().driver_bytes_out.load() - out0;
  CHECK(in < 64);
  CHECK(out < 64);
}

TEST_CASE("injected failure fails in-flight work and restarts a recoverable actor") {
  Runtime rt;
  auto a = rt.spawn<Counter>({1});
  rt.inject_failure(a.id(), {.fail_on_calls = {2}, .recoverable = true});
  rt.invoke(a, "push", &Counter::push, 1).get();
  auto failed = rt.invoke(a, "push", &Counter::push, 2);
  CHECK_THROWS_AS(failed.get(), ActorUnavailable);
  // Restarted from its constructor: earlier state is gone.
  auto seen = rt.invoke(a, "read", [](Counter& c) { return c.seen; }).get();
  CHECK(seen.empty());
  CHECK(rt.stats().actor_restarts == 1);
}

TEST_CASE("unrecoverable failure leaves the actor unavailable") {
  Runtime rt;
  auto a = rt.spawn<Echo>({1});
  rt.inject_failure(a.id(), {.fail_on_calls = {1}, .recoverable = false});
  CHECK_THROWS_AS(rt.invoke(a, "echo", &Echo::echo, 1).get(), ActorUnavailable);
  CHECK_THROWS_AS(rt.invoke(a, "echo", &Echo::echo, 1).get(), ActorUnavailable);
  CHECK(a.status() == ActorStatus::failed);
}

TEST_CASE("straggler injection stretches service time") {
  Runtime rt;
  auto a = rt.spawn<Sleeper>({1});
  rt.set_straggler(a.id(), 5.0);
  const auto t0 = std::chrono::steady_clock::now();
  rt.invoke(a, "nap", &Sleeper::nap, 20).get();
  CHECK(std::chrono::steady_clock::now() - t0 >= 95ms);
}

TEST_CASE("single-slot execution order is reproducible") {
  auto run = [] {
    Runtime rt({.slot_capacity = 1, .seed = 3, .record_trace = true});
    for (int round = 0; round < 3; ++round) {
      auto a = rt.spawn<Counter>({1});
      for (int i = 0; i < 5; ++i) rt.invoke(a, "push" + std::to_string(i), &Counter::push, i);
      auto b = rt.spawn<Echo>({1});  // queued behind `a`
      auto f = rt.invoke(b, "echo", &Echo::echo, round);
      rt.invoke(a, "read", [](Counter& c) { return c.seen.size(); }).get();
      rt.terminate(a);
      f.get();
      rt.terminate(b);
    }
    return rt.trace();
  };
  const auto first = run();
  CHECK(first.size() == 3 * 7);
  CHECK(first == run());
}

TEST_CASE("RLDIST_SLOTS overrides the configured capacity") {
  ::setenv("RLDIST_SLOTS", "3", 1);
  {
    Runtime rt({.slot_capacity = 10});
    CHECK(rt.config().slot_capacity == 3);
  }
  ::unsetenv("RLDIST_SLOTS");
  Runtime rt({.slot_capacity = 10});
  CHECK(rt.config().slot_capacity == 10);
}
