#include "rldist/optimizers/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <thread>

#include "rldist/optimizers/gather.hpp"

namespace rldist::optimizers {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double now_seconds() { return std::chrono::duration<double>(Clock::now().time_since_epoch()).count(); }

// Gets a future, swallowing the failure kinds that mean "this worker is
// gone". Returns false on such a failure.
template <class T>
bool try_get(const taskrt::Future<T>& f) {
  try {
    f.get();
    return true;
  } catch (const ActorUnavailable&) {
    return false;
  } catch (const MethodError&) {
    return false;
  }
}

std::vector<double> mean_of(const std::vector<GradientPacket>& packets) {
  std::vector<double> mean(packets.front().grads.size(), 0.0);
  for (const auto& p : packets) {
    if (p.grads.size() != mean.size()) throw ShapeMismatch("evaluators returned gradients of different lengths");
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += p.grads[i];
  }
  const double n = static_cast<double>(packets.size());
  for (double& v : mean) v /= n;
  return mean;
}

}  // namespace

void OptimizerStats::accumulate(const OptimizerStats& s) {
  samples_collected += s.samples_collected;
  grad_steps_applied += s.grad_steps_applied;
  dropped_task_count += s.dropped_task_count;
  wall_time += s.wall_time;
  for (const auto& [k, v] : s.timings) timings[k] += v;
  if (!s.learner.empty()) learner = s.learner;
}

nlohmann::json to_json(const OptimizerStats& s) {
  nlohmann::json j;
  j["samples_collected"] = s.samples_collected;
  j["grad_steps_applied"] = s.grad_steps_applied;
  j["dropped_task_count"] = s.dropped_task_count;
  j["wall_time"] = s.wall_time;
  j["phase_wall_time"] = s.timings;
  j["learner"] = s.learner;
  return j;
}

PhaseTimer::PhaseTimer(OptimizerStats& stats, std::string phase)
    : stats_(stats), phase_(std::move(phase)), start_(Clock::now()) {}

PhaseTimer::~PhaseTimer() { stats_.timings[phase_] += seconds_since(start_); }

// --- base ----------------------------------------------------------------------

PolicyOptimizer::PolicyOptimizer(taskrt::Runtime& rt, policy::PolicyGraph& local,
                                 std::vector<EvaluatorRef> evaluators)
    : rt_(rt), local_(local), evaluators_(std::move(evaluators)) {
  if (evaluators_.empty()) throw ConfigError("an optimizer needs at least one evaluator");
}

OptimizerStats PolicyOptimizer::step() {
  OptimizerStats s;
  const auto t0 = Clock::now();
  do_step(s);
  s.wall_time = seconds_since(t0);
  totals_.accumulate(s);
  return s;
}

void PolicyOptimizer::foreach_policy(const std::function<void(policy::PolicyGraph&)>& visitor) {
  visitor(local_);
  std::vector<taskrt::Future<taskrt::Unit>> futures;
  for (const auto& ev : evaluators_) {
    futures.push_back(rt_.invoke(ev, "foreach_policy", [visitor](PolicyEvaluator& e) { visitor(e.graph()); }));
  }
  for (const auto& f : futures) f.get();
}

std::vector<taskrt::Future<taskrt::Unit>> PolicyOptimizer::send_weights(const std::vector<std::size_t>& targets) {
  auto ref = rt_.put(local_.get_weights());
  const std::uint64_t version = version_;
  const std::int64_t t = global_timestep();
  std::vector<taskrt::Future<taskrt::Unit>> futures;
  for (std::size_t i : targets) {
    futures.push_back(rt_.invoke(
        evaluators_.at(i), "set_weights",
        [version, t](PolicyEvaluator& e, const std::vector<double>& w) {
          e.set_weights(w, version);
          e.set_global_timestep(t);
        },
        ref));
  }
  return futures;
}

void PolicyOptimizer::broadcast_weights() {
  std::vector<std::size_t> all(evaluators_.size());
  std::iota(all.begin(), all.end(), 0);
  for (const auto& f : send_weights(all)) try_get(f);
}

void PolicyOptimizer::ensure_synced() {
  if (synced_) return;
  broadcast_weights();
  synced_ = true;
}

policy::GradOutput PolicyOptimizer::driver_gradients(const SampleBatch& batch, OptimizerStats& out) {
  PhaseTimer timer(out, "grad");
  const auto t0 = Clock::now();
  policy::GradOutput g = local_.compute_gradients(batch);
  if (driver_slowdown_ > 1.0) {
    std::this_thread::sleep_for(std::chrono::duration<double>((driver_slowdown_ - 1.0) * seconds_since(t0)));
  }
  out.learner = g.stats;
  return g;
}

void PolicyOptimizer::apply(std::span<const double> grads, OptimizerStats& out) {
  PhaseTimer timer(out, "apply");
  local_.apply_gradients(grads);
  ++version_;
  ++out.grad_steps_applied;
}

// --- sync ----------------------------------------------------------------------

SyncOptimizer::SyncOptimizer(taskrt::Runtime& rt, policy::PolicyGraph& local, std::vector<EvaluatorRef> evaluators,
                             SyncConfig cfg)
    : PolicyOptimizer(rt, local, std::move(evaluators)), cfg_(cfg), outstanding_(evaluators_.size()) {
  keep_count(evaluators_.size(), cfg_.keep_fraction);
}

void SyncOptimizer::do_step(OptimizerStats& out) {
  ensure_synced();
  auto idle = [&] {
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < evaluators_.size(); ++i) {
      if (!outstanding_[i].valid() || outstanding_[i].is_ready()) ids.push_back(i);
    }
    return ids;
  };
  std::vector<std::size_t> workers = idle();
  if (workers.empty()) {
    taskrt::wait(outstanding_, 1, cfg_.timeout);
    workers = idle();
  }

  GatherResult<GradientPacket> gathered;
  {
    PhaseTimer timer(out, "sample_grad");
    std::vector<taskrt::Future<GradientPacket>> futures;
    for (std::size_t i : workers) {
      outstanding_[i] = rt_.invoke(evaluators_[i], "sample_and_compute_gradients",
                                   [](PolicyEvaluator& e) { return e.sample_and_compute_gradients(); });
      futures.push_back(outstanding_[i]);
    }
    gathered = straggler_tolerant_gather(futures, cfg_.keep_fraction, cfg_.timeout);
  }
  out.dropped_task_count += gathered.dropped;
  if (gathered.values.empty()) throw AllEvaluatorsFailed("no evaluator returned a gradient");

  for (const auto& p : gathered.values) out.samples_collected += p.rows;
  out.learner = gathered.values.back().stats;
  apply(mean_of(gathered.values), out);

  PhaseTimer timer(out, "broadcast");
  std::vector<std::size_t> all(evaluators_.size());
  std::iota(all.begin(), all.end(), 0);
  auto acks = send_weights(all);
  // Evaluators still running a dropped task pick the weights up afterwards.
  for (std::size_t i = 0; i < acks.size(); ++i) {
    if (outstanding_[i].is_ready()) try_get(acks[i]);
  }
}

// --- local multi-pass --------------------------------------------------------------

MultiPassOptimizer::MultiPassOptimizer(taskrt::Runtime& rt, policy::PolicyGraph& local,
                                       std::vector<EvaluatorRef> evaluators, MultiPassConfig cfg)
    : PolicyOptimizer(rt, local, std::move(evaluators)), cfg_(cfg), rng_(cfg.seed) {
  if (cfg_.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (cfg_.minibatch_size < 1) throw ConfigError("minibatch_size must be >= 1");
}

void MultiPassOptimizer::do_step(OptimizerStats& out) {
  ensure_synced();
  SampleBatch pool;
  {
    PhaseTimer timer(out, "sample");
    std::vector<taskrt::Future<SampleBatch>> futures;
    for (const auto& ev : evaluators_) {
      futures.push_back(rt_.invoke(ev, "sample", [](PolicyEvaluator& e) { return e.sample(); }));
    }
    auto gathered = straggler_tolerant_gather(futures, 1.0, std::chrono::hours(24));
    out.dropped_task_count += gathered.dropped;
    if (gathered.values.empty()) throw AllEvaluatorsFailed("no evaluator returned a batch");
    pool = concat_batches(gathered.values);
  }
  if (pool.byte_size() > cfg_.memory_budget) {
    throw OutOfMemoryBudget("pooled batch of " + std::to_string(pool.byte_size()) + " bytes exceeds budget of " +
                            std::to_string(cfg_.memory_budget));
  }
  out.samples_collected += pool.rows();
  const std::size_t rows = pool.rows();
  if (rows > 0) {
    std::vector<std::size_t> order(rows);
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      std::iota(order.begin(), order.end(), 0);
      if (cfg_.minibatch_size >= rows) {
        auto g = driver_gradients(pool, out);
        apply(g.grads, out);
        continue;
      }
      if (cfg_.shuffle) std::shuffle(order.begin(), order.end(), rng_);
      for (std::size_t b = 0; b < rows; b += cfg_.minibatch_size) {
        const std::size_t e = std::min(rows, b + cfg_.minibatch_size);
        SampleBatch mb = pool.gather(std::span<const std::size_t>(order.data() + b, e - b));
        auto g = driver_gradients(mb, out);
        apply(g.grads, out);
      }
    }
  }
  PhaseTimer timer(out, "broadcast");
  broadcast_weights();
}

// --- async -----------------------------------------------------------------------

AsyncOptimizer::AsyncOptimizer(taskrt::Runtime& rt, policy::PolicyGraph& local, std::vector<EvaluatorRef> evaluators,
                               AsyncConfig cfg)
    : PolicyOptimizer(rt, local, std::move(evaluators)), cfg_(cfg) {
  if (cfg_.max_in_flight < 1) throw ConfigError("max_in_flight must be >= 1");
}

void AsyncOptimizer::do_step(OptimizerStats& out) {
  if (cfg_.grads_to_apply == 0) return;
  ensure_synced();
  struct InFlight {
    taskrt::Future<GradientPacket> future;
    std::size_t evaluator;
  };
  const std::size_t n = evaluators_.size();
  std::deque<InFlight> queue;
  std::size_t submitted = 0;
  std::size_t applied = 0;
  std::size_t failures = 0;
  std::optional<taskrt::ObjectRef<std::vector<double>>> ref;
  std::uint64_t ref_version = 0;

  auto submit = [&](std::size_t ev) {
    if (!ref || ref_version != version_) {
      ref = rt_.put(local_.get_weights());
      ref_version = version_;
    }
    const std::uint64_t v = version_;
    const std::int64_t t = global_timestep() + static_cast<std::int64_t>(out.samples_collected);
    auto f = rt_.invoke(
        evaluators_[ev], "sample_and_compute_gradients",
        [v, t](PolicyEvaluator& e, const std::vector<double>& w) {
          e.set_weights(w, v);
          e.set_global_timestep(t);
          return e.sample_and_compute_gradients();
        },
        *ref);
    queue.push_back({std::move(f), ev});
    ++submitted;
  };

  std::size_t next = 0;
  while (queue.size() < cfg_.max_in_flight && submitted < cfg_.grads_to_apply) submit(next++ % n);

  while (applied < cfg_.grads_to_apply) {
    InFlight item = queue.front();
    queue.pop_front();
    GradientPacket packet;
    {
      PhaseTimer timer(out, "wait");
      try {
        packet = item.future.get();
      } catch (const ActorUnavailable&) {
      } catch (const MethodError&) {
      }
    }
    if (item.future.state() == taskrt::FutureState::failed) {
      ++out.dropped_task_count;
      if (++failures > 2 * n + cfg_.max_in_flight) throw AllEvaluatorsFailed("every evaluator keeps failing");
      --submitted;
      submit(next++ % n);
      continue;
    }
    failures = 0;
    staleness_.push_back(version_ - packet.weights_version);
    out.samples_collected += packet.rows;
    out.learner = packet.stats;
    apply(packet.grads, out);
    ++applied;
    if (submitted < cfg_.grads_to_apply) submit(next++ % n);
  }
}

// --- parameter server ------------------------------------------------------------

std::vector<std::pair<std::size_t, std::size_t>> shard_ranges(std::size_t n, std::size_t shards) {
  if (shards < 1) throw ConfigError("num_shards must be >= 1");
  if (n < shards) throw ConfigError("fewer weights than shards");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  const std::size_t base = n / shards;
  for (std::size_t s = 0; s < shards; ++s) out.emplace_back(s * base, s + 1 == shards ? n : (s + 1) * base);
  return out;
}

ParamShard::ParamShard(std::size_t index, std::vector<double> weights, std::string rule, double lr)
    : index_(index), weights_(std::move(weights)), rule_(std::move(rule)), lr_(lr),
      adam_(tensor::AdamState::zeros(weights_.size())) {}

void ParamShard::push(const std::vector<double>& grads) {
  if (grads.size() != weights_.size()) throw ShapeMismatch("shard gradient slice has the wrong length");
  if (rule_ == "sgd") {
    tensor::sgd_update(weights_, grads, lr_);
  } else {
    tensor::AdamConfig ac;
    ac.stepsize = lr_;
    tensor::adam_update(weights_, grads, adam_, ac);
  }
  ++pushes_;
}

ParamServerOptimizer::ParamServerOptimizer(taskrt::Runtime& rt, policy::PolicyGraph& local,
                                           std::vector<EvaluatorRef> evaluators, ParamServerConfig cfg)
    : PolicyOptimizer(rt, local, std::move(evaluators)), cfg_(cfg) {
  if (cfg_.rounds < 1) throw ConfigError("rounds must be >= 1");
  const auto w = local_.get_weights();
  const auto ranges = shard_ranges(w.size(), cfg_.num_shards);
  for (std::size_t s = 0; s < ranges.size(); ++s) {
    std::vector<double> slice(w.begin() + static_cast<std::ptrdiff_t>(ranges[s].first),
                              w.begin() + static_cast<std::ptrdiff_t>(ranges[s].second));
    shards_.push_back(rt_.spawn<ParamShard>(taskrt::ResourceClaim{}, s, std::move(slice),
                                            local_.config().optimizer, local_.config().lr));
  }
}

ParamServerOptimizer::~ParamServerOptimizer() {
  for (const auto& s : shards_) {
    try {
      rt_.terminate(s);
    } catch (const Error&) {
    }
  }
}

std::vector<double> ParamServerOptimizer::shard_weights() {
  std::vector<taskrt::Future<std::vector<double>>> pulls;
  for (const auto& s : shards_) pulls.push_back(rt_.invoke(s, "pull", [](ParamShard& p) { return p.weights(); }));
  std::vector<double> w;
  for (std::size_t k = 0; k < pulls.size(); ++k) {
    if (!try_get(pulls[k])) throw ShardUnavailable("shard " + std::to_string(k) + " is not reachable");
    const auto& part = pulls[k].get();
    w.insert(w.end(), part.begin(), part.end());
  }
  return w;
}

void ParamServerOptimizer::do_step(OptimizerStats& out) {
  const auto shards = shards_;
  const auto ranges = shard_ranges(local_.num_weights(), shards.size());
  const std::size_t rounds = cfg_.rounds;
  const bool prefetch = cfg_.prefetch;

  auto worker = [shards, ranges, rounds, prefetch](PolicyEvaluator& e) {
    taskrt::Runtime* rt = e.runtime();
    if (rt == nullptr) throw ConfigError("param_server needs evaluators spawned as actors");
    auto pull = [&] {
      std::vector<taskrt::Future<std::vector<double>>> f;
      for (const auto& s : shards) f.push_back(rt->invoke(s, "pull", [](ParamShard& p) { return p.weights(); }));
      return f;
    };
    auto check = [](const auto& f, std::size_t k) {
      if (!try_get(f)) throw ShardUnavailable("shard " + std::to_string(k) + " is not reachable");
    };
    PsWorkerResult res;
    auto pulls = pull();
    for (std::size_t r = 0; r < rounds; ++r) {
      std::vector<double> w;
      for (std::size_t k = 0; k < pulls.size(); ++k) {
        check(pulls[k], k);
        const auto& part = pulls[k].get();
        w.insert(w.end(), part.begin(), part.end());
      }
      e.set_weights(w, e.weights_version() + 1);
      GradientPacket g = e.sample_and_compute_gradients();
      std::vector<taskrt::Future<taskrt::Unit>> acks;
      for (std::size_t k = 0; k < shards.size(); ++k) {
        std::vector<double> slice(g.grads.begin() + static_cast<std::ptrdiff_t>(ranges[k].first),
                                  g.grads.begin() + static_cast<std::ptrdiff_t>(ranges[k].second));
        acks.push_back(rt->invoke(
            shards[k], "push", [](ParamShard& p, const std::vector<double>& s) { p.push(s); }, std::move(slice)));
      }
      const bool more = r + 1 < rounds;
      // Pulls queue behind the pushes in each shard's mailbox, so they see
      // this round's update without waiting for the acks first.
      if (more && prefetch) pulls = pull();
      for (std::size_t k = 0; k < acks.size(); ++k) check(acks[k], k);
      if (more && !prefetch) pulls = pull();
      res.rows += g.rows;
      ++res.rounds;
      res.stats = std::move(g.stats);
    }
    return res;
  };

  std::vector<taskrt::Future<PsWorkerResult>> futures;
  {
    PhaseTimer timer(out, "rounds");
    for (const auto& ev : evaluators_) futures.push_back(rt_.invoke(ev, "param_server_rounds", worker));
    bool any = false;
    for (const auto& f : futures) {
      try {
        const PsWorkerResult& r = f.get();
        out.samples_collected += r.rows;
        out.grad_steps_applied += r.rounds;
        out.learner = r.stats;
        any = true;
      } catch (const ActorUnavailable&) {
        ++out.dropped_task_count;
      } catch (const MethodError&) {
        ++out.dropped_task_count;
      }
    }
    if (!any) throw AllEvaluatorsFailed("no evaluator completed its rounds");
  }
  PhaseTimer timer(out, "pull");
  local_.set_weights(shard_weights());
  version_ += out.grad_steps_applied;
}

// --- replay ------------------------------------------------------------------------

ReplayOptimizer::ReplayOptimizer(taskrt::Runtime& rt, policy::PolicyGraph& local,
                                 std::vector<EvaluatorRef> evaluators, ReplayOptimizerConfig cfg)
    : PolicyOptimizer(rt, local, std::move(evaluators)), cfg_(cfg) {
  if (cfg_.train_batch_size < 1) throw ConfigError("train_batch_size must be >= 1");
  replay_ = rt_.spawn<ReplayBuffer>(taskrt::ResourceClaim{}, cfg_.buffer);
}

ReplayOptimizer::~ReplayOptimizer() {
  try {
    rt_.terminate(replay_);
  } catch (const Error&) {
  }
}

void ReplayOptimizer::do_step(OptimizerStats& out) {
  ensure_synced();
  {
    PhaseTimer timer(out, "sample");
    std::vector<taskrt::Future<taskrt::ObjectRef<SampleBatch>>> futures;
    for (const auto& ev : evaluators_) {
      futures.push_back(rt_.invoke(ev, "sample_to_store", [](PolicyEvaluator& e) { return e.sample_to_store(); }));
    }
    auto gathered = straggler_tolerant_gather(futures, 1.0, std::chrono::hours(24));
    out.dropped_task_count += gathered.dropped;
    if (gathered.values.empty()) throw AllEvaluatorsFailed("no evaluator returned a batch");
    std::vector<taskrt::Future<std::uint64_t>> adds;
    for (const auto& ref : gathered.values) {
      adds.push_back(rt_.invoke(
          replay_, "add",
          [](ReplayBuffer& b, const SampleBatch& batch) {
            b.add(batch);
            return static_cast<std::uint64_t>(batch.rows());
          },
          ref));
    }
    for (const auto& f : adds) out.samples_collected += f.get();
  }
  buffered_ += out.samples_collected;
  if (buffered_ == 0) throw BufferEmpty("no rows were inserted into the replay buffer");
  if (buffered_ < cfg_.learning_starts) return;

  std::vector<taskrt::Future<taskrt::Unit>> acks;
  const std::size_t n = cfg_.train_batch_size;
  for (std::size_t r = 0; r < cfg_.rounds; ++r) {
    SampleBatch mb;
    {
      PhaseTimer timer(out, "replay");
      mb = rt_.invoke(replay_, "sample", [n](ReplayBuffer& b) { return b.sample(n); }).get();
    }
    auto g = driver_gradients(mb, out);
    apply(g.grads, out);
    if (!g.td_errors.empty()) {
      acks.push_back(rt_.invoke(
          replay_, "update_priorities",
          [](ReplayBuffer& b, const std::vector<std::int64_t>& idx, const std::vector<double>& td) {
            b.update_priorities(idx, td);
          },
          mb.i64(kBatchIndexes), std::move(g.td_errors)));
    }
  }
  for (const auto& f : acks) f.get();
  PhaseTimer timer(out, "broadcast");
  broadcast_weights();
}

// --- Ape-X ---------------------------------------------------------------------------

double apex_epsilon(std::size_t i, std::size_t n, double base) {
  if (n <= 1) return base;
  return std::pow(base, 1.0 + 7.0 * static_cast<double>(i) / static_cast<double>(n - 1));
}

namespace {

double covered_fraction(const std::vector<Interval>& learning, std::vector<Interval> busy) {
  std::sort(busy.begin(), busy.end(), [](const Interval& a, const Interval& b) { return a.begin < b.begin; });
  std::vector<Interval> merged;
  for (const auto& iv : busy) {
    if (!merged.empty() && iv.begin <= merged.back().end) {
      merged.back().end = std::max(merged.back().end, iv.end);
    } else {
      merged.push_back(iv);
    }
  }
  double total = 0.0;
  double covered = 0.0;
  for (const auto& l : learning) {
    total += l.end - l.begin;
    for (const auto& m : merged) covered += std::max(0.0, std::min(l.end, m.end) - std::max(l.begin, m.begin));
  }
  return total > 0.0 ? covered / total : 0.0;
}

}  // namespace

double PipelineTrace::overlap_fraction() const { return covered_fraction(learning, in_flight); }

double PipelineTrace::execution_overlap_fraction() const { return covered_fraction(learning, sampling); }

ApexOptimizer::ApexOptimizer(taskrt::Runtime& rt, policy::PolicyGraph& local, std::vector<EvaluatorRef> evaluators,
                             ApexConfig cfg)
    : PolicyOptimizer(rt, local, std::move(evaluators)), cfg_(cfg) {
  if (cfg_.num_replay_actors < 1) throw ConfigError("num_replay_actors must be >= 1");
  if (cfg_.train_batch_size < 1) throw ConfigError("train_batch_size must be >= 1");
  for (std::size_t j = 0; j < cfg_.num_replay_actors; ++j) {
    ReplayConfig rc = cfg_.buffer;
    rc.seed = cfg_.buffer.seed + j;
    replay_.push_back(rt_.spawn<ReplayBuffer>(taskrt::ResourceClaim{}, rc));
  }
  prefetch_.resize(replay_.size());
  replay_rows_.assign(replay_.size(), 0);
  sampling_.resize(evaluators_.size());
  submitted_at_.resize(evaluators_.size());
}

ApexOptimizer::~ApexOptimizer() {
  for (const auto& r : replay_) {
    try {
      rt_.terminate(r);
    } catch (const Error&) {
    }
  }
}

void ApexOptimizer::submit_sample(std::size_t i) {
  submitted_at_[i] = now_seconds();
  sampling_[i] = rt_.invoke(evaluators_[i], "sample_to_store", [](PolicyEvaluator& e) {
    SampleResult r;
    r.when.begin = now_seconds();
    r.batch = e.sample_to_store();
    r.rows = e.runtime() != nullptr ? e.runtime()->fetch(r.batch)->rows() : 0;
    r.when.end = now_seconds();
    return r;
  });
}

void ApexOptimizer::do_step(OptimizerStats& out) {
  const std::size_t n = evaluators_.size();
  const std::size_t R = replay_.size();
  if (!synced_) {
    broadcast_weights();
    synced_ = true;
    for (std::size_t i = 0; i < n; ++i) submit_sample(i);
  }
  const std::size_t tb = cfg_.train_batch_size;
  std::size_t learned = 0;
  std::size_t failures = 0;
  while (learned < cfg_.learner_steps) {
    const std::size_t i = next_sampler_++ % n;
    try {
      const SampleResult& res = sampling_[i].get();
      trace_.sampling.push_back(res.when);
      trace_.in_flight.push_back({submitted_at_[i], res.when.end});
      const std::size_t j = next_insert_++ % R;
      pending_acks_.push_back(rt_.invoke(
          replay_[j], "add", [](ReplayBuffer& b, const SampleBatch& batch) { b.add(batch); }, res.batch));
      replay_rows_[j] += res.rows;
      out.samples_collected += res.rows;
      failures = 0;
    } catch (const ActorUnavailable&) {
      ++out.dropped_task_count;
      if (++failures > 2 * n) throw AllEvaluatorsFailed("every evaluator keeps failing");
    } catch (const MethodError&) {
      ++out.dropped_task_count;
      if (++failures > 2 * n) throw AllEvaluatorsFailed("every evaluator keeps failing");
    }
    submit_sample(i);

    const std::uint64_t total = std::accumulate(replay_rows_.begin(), replay_rows_.end(), std::uint64_t{0});
    const bool ready = total >= std::max<std::uint64_t>(cfg_.learning_starts, tb) &&
                       std::all_of(replay_rows_.begin(), replay_rows_.end(), [](std::uint64_t r) { return r > 0; });
    if (!ready) continue;

    auto request = [&](std::size_t k) {
      return rt_.invoke(replay_[k], "sample", [tb](ReplayBuffer& b) { return b.sample(tb); });
    };
    for (std::size_t k = 0; k < R; ++k) {
      if (!prefetch_[k]) prefetch_[k] = request(k);
    }
    const std::size_t k = next_learn_++ % R;
    SampleBatch mb = prefetch_[k]->get();
    prefetch_[k] = request(k);

    Interval learn;
    learn.begin = now_seconds();
    auto g = driver_gradients(mb, out);
    apply(g.grads, out);
    learn.end = now_seconds();
    trace_.learning.push_back(learn);
    if (!g.td_errors.empty()) {
      pending_acks_.push_back(rt_.invoke(
          replay_[k], "update_priorities",
          [](ReplayBuffer& b, const std::vector<std::int64_t>& idx, const std::vector<double>& td) {
            b.update_priorities(idx, td);
          },
          mb.i64(kBatchIndexes), std::move(g.td_errors)));
      ++trace_.priority_updates;
    }
    ++learned;
    ++applications_;
    if (cfg_.broadcast_interval > 0 && applications_ % cfg_.broadcast_interval == 0) {
      std::vector<std::size_t> all(n);
      std::iota(all.begin(), all.end(), 0);
      for (auto& f : send_weights(all)) pending_acks_.push_back(std::move(f));
      ++trace_.broadcasts;
    }
    std::erase_if(pending_acks_, [&](const taskrt::Future<taskrt::Unit>& f) {
      if (!f.is_ready()) return false;
      if (!try_get(f)) ++out.dropped_task_count;
      return true;
    });
  }
}

// --- strategy selection -------------------------------------------------------------

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

StrategyChoice select_strategy(const std::map<std::string, std::vector<double>>& step_times,
                               const std::string& current) {
  if (step_times.empty()) throw InsufficientHistory("no candidate strategies were probed");
  StrategyChoice out;
  std::map<std::string, double> medians;
  for (const auto& [name, times] : step_times) {
    if (times.size() < 2) {
      throw InsufficientHistory(name + " has " + std::to_string(times.size()) + " probe steps, need 2");
    }
    medians[name] = median(times);
    out.log.push_back("probe " + name + " median=" + std::to_string(medians[name]));
  }
  double best = std::numeric_limits<double>::infinity();
  for (const auto& [name, m] : medians) {
    if (m < best) {
      best = m;
      out.choice = name;
    }
  }
  if (medians.count(current) != 0 && medians.at(current) == best) out.choice = current;
  out.log.push_back(out.choice == current ? "keep " + current : "switch " + current + " -> " + out.choice);
  return out;
}

AdaptiveOptimizer::AdaptiveOptimizer(taskrt::Runtime& rt, policy::PolicyGraph& local,
                                     std::vector<EvaluatorRef> evaluators,
                                     std::vector<std::unique_ptr<PolicyOptimizer>> candidates, std::size_t probe_steps)
    : PolicyOptimizer(rt, local, std::move(evaluators)), candidates_(std::move(candidates)),
      probe_steps_(std::max<std::size_t>(probe_steps, 2)) {
  if (candidates_.empty()) throw ConfigError("adaptive optimizer needs at least one candidate");
  for (const auto& c : candidates_) {
    if (history_.count(c->name()) != 0) throw ConfigError("duplicate candidate " + c->name());
    history_[c->name()];
  }
  current_ = candidates_.front()->name();
}

PolicyOptimizer& AdaptiveOptimizer::candidate(const std::string& name) {
  for (auto& c : candidates_) {
    if (c->name() == name) return *c;
  }
  throw ConfigError("no candidate named " + name);
}

void AdaptiveOptimizer::do_step(OptimizerStats& out) {
  if (committed_) {
    out = candidate(current_).step();
    return;
  }
  PolicyOptimizer& c = *candidates_[probed_ % candidates_.size()];
  out = c.step();
  history_[c.name()].push_back(out.wall_time);
  log_.push_back("probe step " + c.name());
  if (++probed_ == probe_steps_ * candidates_.size()) {
    StrategyChoice choice = select_strategy(history_, current_);
    log_.insert(log_.end(), choice.log.begin(), choice.log.end());
    current_ = choice.choice;
    committed_ = true;
  }
}

// --- config ------------------------------------------------------------------------------

namespace {

using Check = std::function<std::optional<std::string>(const nlohmann::json&)>;

Check int_at_least(std::int64_t lo) {
  return [lo](const nlohmann::json& v) -> std::optional<std::string> {
    if (!v.is_number_integer()) return "must be an integer";
    if (v.get<std::int64_t>() < lo) return "must be >= " + std::to_string(lo);
    return std::nullopt;
  };
}

Check number_in(double lo, double hi, bool lo_open) {
  return [=](const nlohmann::json& v) -> std::optional<std::string> {
    if (!v.is_number()) return "must be a number";
    const double x = v.get<double>();
    if ((lo_open ? x <= lo : x < lo) || x > hi) {
      return "must be in " + std::string(lo_open ? "(" : "[") + std::to_string(lo) + ", " + std::to_string(hi) + "]";
    }
    return std::nullopt;
  };
}

Check boolean() {
  return [](const nlohmann::json& v) -> std::optional<std::string> {
    if (!v.is_boolean()) return "must be true or false";
    return std::nullopt;
  };
}

const std::map<std::string, std::map<std::string, Check>>& schema() {
  static const auto* s = [] {
    const double inf = std::numeric_limits<double>::infinity();
    auto* m = new std::map<std::string, std::map<std::string, Check>>;
    const std::map<std::string, Check> replay_keys = {
        {"capacity", int_at_least(1)},         {"alpha", number_in(0, inf, false)},
        {"train_batch_size", int_at_least(1)}, {"learning_starts", int_at_least(0)},
        {"seed", int_at_least(0)},
    };
    (*m)["sync"] = {{"keep_fraction", number_in(0, 1, true)}, {"timeout_ms", int_at_least(1)}};
    (*m)["local_multipass"] = {{"epochs", int_at_least(1)},
                               {"minibatch_size", int_at_least(1)},
                               {"memory_budget_mb", number_in(0, inf, true)},
                               {"shuffle", boolean()},
                               {"seed", int_at_least(0)}};
    (*m)["async"] = {{"grads_to_apply", int_at_least(0)}, {"max_in_flight", int_at_least(1)}};
    (*m)["param_server"] = {{"num_shards", int_at_least(1)}, {"rounds", int_at_least(1)}, {"prefetch", boolean()}};
    (*m)["replay"] = replay_keys;
    (*m)["replay"]["rounds"] = int_at_least(1);
    (*m)["apex"] = replay_keys;
    (*m)["apex"]["num_replay_actors"] = int_at_least(1);
    (*m)["apex"]["learner_steps"] = int_at_least(1);
    (*m)["apex"]["broadcast_interval"] = int_at_least(0);
    return m;
  }();
  return *s;
}

template <class T>
T value_or(const nlohmann::json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

}  // namespace

std::vector<std::string> optimizer_kinds() {
  std::vector<std::string> out;
  for (const auto& [k, v] : schema()) out.push_back(k);
  return out;
}

std::vector<std::string> validate_optimizer_config(const std::string& kind, const nlohmann::json& params) {
  const auto it = schema().find(kind);
  if (it == schema().end()) return {"kind: unknown optimizer '" + kind + "'"};
  if (params.is_null()) return {};
  if (!params.is_object()) return {"params: must be an object"};
  std::vector<std::string> out;
  for (const auto& [key, value] : params.items()) {
    const auto c = it->second.find(key);
    if (c == it->second.end()) {
      out.push_back("params." + key + ": unknown key for " + kind);
    } else if (auto why = c->second(value)) {
      out.push_back("params." + key + ": " + *why);
    }
  }
  return out;
}

std::unique_ptr<PolicyOptimizer> make_optimizer(const std::string& type, const nlohmann::json& params,
                                                taskrt::Runtime& rt, policy::PolicyGraph& local,
                                                std::vector<EvaluatorRef> evaluators) {
  const auto violations = validate_optimizer_config(type, params);
  if (!violations.empty()) throw ConfigError("optimizer." + violations.front());
  const nlohmann::json j = params.is_null() ? nlohmann::json::object() : params;
  auto replay_cfg = [&] {
    ReplayConfig rc;
    rc.capacity = value_or<std::size_t>(j, "capacity", rc.capacity);
    rc.alpha = value_or<double>(j, "alpha", rc.alpha);
    rc.seed = value_or<std::uint64_t>(j, "seed", rc.seed);
    return rc;
  };
  if (type == "sync") {
    SyncConfig c;
    c.keep_fraction = value_or<double>(j, "keep_fraction", c.keep_fraction);
    c.timeout = std::chrono::milliseconds(value_or<std::int64_t>(j, "timeout_ms", c.timeout.count()));
    return std::make_unique<SyncOptimizer>(rt, local, std::move(evaluators), c);
  }
  if (type == "local_multipass") {
    MultiPassConfig c;
    c.epochs = value_or<int>(j, "epochs", c.epochs);
    c.minibatch_size = value_or<std::size_t>(j, "minibatch_size", c.minibatch_size);
    if (j.contains("memory_budget_mb")) {
      c.memory_budget = static_cast<std::size_t>(j.at("memory_budget_mb").get<double>() * 1024.0 * 1024.0);
    }
    c.shuffle = value_or<bool>(j, "shuffle", c.shuffle);
    c.seed = value_or<std::uint64_t>(j, "seed", c.seed);
    return std::make_unique<MultiPassOptimizer>(rt, local, std::move(evaluators), c);
  }
  if (type == "async") {
    AsyncConfig c;
    c.grads_to_apply = value_or<std::size_t>(j, "grads_to_apply", c.grads_to_apply);
    c.max_in_flight = value_or<std::size_t>(j, "max_in_flight", c.max_in_flight);
    return std::make_unique<AsyncOptimizer>(rt, local, std::move(evaluators), c);
  }
  if (type == "param_server") {
    ParamServerConfig c;
    c.num_shards = value_or<std::size_t>(j, "num_shards", c.num_shards);
    c.rounds = value_or<std::size_t>(j, "rounds", c.rounds);
    c.prefetch = value_or<bool>(j, "prefetch", c.prefetch);
    return std::make_unique<ParamServerOptimizer>(rt, local, std::move(evaluators), c);
  }
  if (type == "replay") {
    ReplayOptimizerConfig c;
    c.buffer = replay_cfg();
    c.train_batch_size = value_or<std::size_t>(j, "train_batch_size", c.train_batch_size);
    c.learning_starts = value_or<std::size_t>(j, "learning_starts", c.learning_starts);
    c.rounds = value_or<std::size_t>(j, "rounds", c.rounds);
    return std::make_unique<ReplayOptimizer>(rt, local, std::move(evaluators), c);
  }
  ApexConfig c;
  c.buffer = replay_cfg();
  c.num_replay_actors = value_or<std::size_t>(j, "num_replay_actors", c.num_replay_actors);
  c.train_batch_size = value_or<std::size_t>(j, "train_batch_size", c.train_batch_size);
  c.learning_starts = value_or<std::size_t>(j, "learning_starts", c.learning_starts);
  c.learner_steps = value_or<std::size_t>(j, "learner_steps", c.learner_steps);
  c.broadcast_interval = value_or<std::size_t>(j, "broadcast_interval", c.broadcast_interval);
  return std::make_unique<ApexOptimizer>(rt, local, std::move(evaluators), c);
}

}  // namespace rldist::optimizers
