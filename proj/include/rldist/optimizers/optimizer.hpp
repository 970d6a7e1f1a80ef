#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rldist/evaluation/evaluator.hpp"
#include "rldist/optimizers/replay_buffer.hpp"
#include "rldist/policy/graph.hpp"
#include "rldist/taskrt/runtime.hpp"

namespace rldist::optimizers {

using evaluation::GradientPacket;
using evaluation::PolicyEvaluator;
using EvaluatorRef = taskrt::ActorRef<PolicyEvaluator>;

struct OptimizerStats {
  std::uint64_t samples_collected = 0;
  std::uint64_t grad_steps_applied = 0;
  std::uint64_t dropped_task_count = 0;
  double wall_time = 0.0;
  std::map<std::string, double> timings;  // seconds per phase
  policy::Stats learner;                  // from the most recent gradient

  // Counters and timings add up; learner stats are replaced when present.
  void accumulate(const OptimizerStats& step);
};

// Per-phase timings appear under "phase_wall_time".
nlohmann::json to_json(const OptimizerStats& s);

// Common driver-side state of every optimizer: the local graph, the
// evaluator handles and the totals across steps.
class PolicyOptimizer {
 public:
  PolicyOptimizer(taskrt::Runtime& rt, policy::PolicyGraph& local, std::vector<EvaluatorRef> evaluators);
  virtual ~PolicyOptimizer() = default;
  PolicyOptimizer(const PolicyOptimizer&) = delete;
  PolicyOptimizer& operator=(const PolicyOptimizer&) = delete;

  virtual std::string name() const = 0;

  // One optimizer step. Returns the stats of this step; totals() keeps the
  // running sums.
  OptimizerStats step();
  const OptimizerStats& totals() const { return totals_; }

  // Runs `visitor` on the local graph, then on every evaluator's graph.
  void foreach_policy(const std::function<void(policy::PolicyGraph&)>& visitor);

  policy::PolicyGraph& local_graph() { return local_; }
  const std::vector<EvaluatorRef>& evaluators() const { return evaluators_; }
  taskrt::Runtime& runtime() { return rt_; }
  // Incremented on every local weight update.
  std::uint64_t weights_version() const { return version_; }

  // Sends the local weights and global timestep to every evaluator and waits
  // for them to be applied.
  void broadcast_weights();

  // Sleeps (factor - 1) times the duration of each driver-side gradient
  // computation. Models a slow learner process.
  void set_driver_slowdown(double factor) { driver_slowdown_ = factor; }

 protected:
  virtual void do_step(OptimizerStats& out) = 0;

  // Weight broadcast without waiting; one future per target evaluator.
  std::vector<taskrt::Future<taskrt::Unit>> send_weights(const std::vector<std::size_t>& targets);
  void ensure_synced();

  policy::GradOutput driver_gradients(const SampleBatch& batch, OptimizerStats& out);
  void apply(std::span<const double> grads, OptimizerStats& out);
  std::int64_t global_timestep() const { return static_cast<std::int64_t>(totals_.samples_collected); }

  taskrt::Runtime& rt_;
  policy::PolicyGraph& local_;
  std::vector<EvaluatorRef> evaluators_;
  OptimizerStats totals_;
  std::uint64_t version_ = 0;
  bool synced_ = false;
  double driver_slowdown_ = 1.0;
};

// Adds the elapsed time of a scope to stats.timings[phase].
class PhaseTimer {
 public:
  PhaseTimer(OptimizerStats& stats, std::string phase);
  ~PhaseTimer();
  PhaseTimer(const PhaseTimer&) = delete;
  PhaseTimer& operator=(const PhaseTimer&) = delete;

 private:
  OptimizerStats& stats_;
  std::string phase_;
  std::chrono::steady_clock::time_point start_;
};

// --- synchronous gradient averaging ------------------------------------------

struct SyncConfig {
  double keep_fraction = 1.0;
  std::chrono::milliseconds timeout{600000};
};

// Every evaluator samples and computes a gradient on its own batch; the
// driver applies their mean once and broadcasts the result. With
// keep_fraction < 1 only the fastest results are used, and evaluators still
// busy with a dropped task sit out the next round.
class SyncOptimizer final : public PolicyOptimizer {
 public:
  SyncOptimizer(taskrt::Runtime& rt, policy::PolicyGraph& local, std::vector<EvaluatorRef> evaluators,
                SyncConfig cfg = {});
  std::string name() const override { return "sync"; }

 protected:
  void do_step(OptimizerStats& out) override;

 private:
  SyncConfig cfg_;
  std::vector<taskrt::Future<GradientPacket>> outstanding_;  // per evaluator
};

// --- local multi-pass SGD ----------------------------------------------------

struct MultiPassConfig {
  int epochs = 20;
  std::size_t minibatch_size = 512;
  std::size_t memory_budget = std::size_t{256} << 20;  // bytes
  bool shuffle = true;
  std::uint64_t seed = 0;
};

// Gathers one pooled batch on the driver and runs several epochs of
// minibatch SGD there.
class MultiPassOptimizer final : public PolicyOptimizer {
 public:
  MultiPassOptimizer(taskrt::Runtime& rt, policy::PolicyGraph& local, std::vector<EvaluatorRef> evaluators,
                     MultiPassConfig cfg = {});
  std::string name() const override { return "local_multipass"; }

 protected:
  void do_step(OptimizerStats& out) override;

 private:
  MultiPassConfig cfg_;
  std::mt19937_64 rng_;
};

// --- asynchronous gradients --------------------------------------------------

struct AsyncConfig {
  std::size_t grads_to_apply = 10;
  std::size_t max_in_flight = 2;
};

// Gradients are computed on evaluators with the weights current at
// submission and applied one at a time on the driver, oldest submission
// first. Each freed slot is refilled with fresh weights on the next evaluator
// in round-robin order.
class AsyncOptimizer final : public PolicyOptimizer {
 public:
  AsyncOptimizer(taskrt::Runtime& rt, policy::PolicyGraph& local, std::vector<EvaluatorRef> evaluators,
                 AsyncConfig cfg = {});
  std::string name() const override { return "async"; }

  // Version gap of every applied gradient, in application order.
  const std::vector<std::uint64_t>& staleness_log() const { return staleness_; }

 protected:
  void do_step(OptimizerStats& out) override;

 private:
  AsyncConfig cfg_;
  std::vector<std::uint64_t> staleness_;
};

// --- sharded parameter server --------------------------------------------------

// [begin, end) of each shard over a flat vector of length n.
std::vector<std::pair<std::size_t, std::size_t>> shard_ranges(std::size_t n, std::size_t shards);

// Actor holding one contiguous slice of the weights. Pushed gradients are
// applied in arrival order with the graph's update rule.
class ParamShard {
 public:
  ParamShard(std::size_t index, std::vector<double> weights, std::string rule, double lr);

  std::size_t index() const { return index_; }
  const std::vector<double>& weights() const { return weights_; }
  void push(const std::vector<double>& grads);
  std::uint64_t pushes() const { return pushes_; }

 private:
  std::size_t index_;
  std::vector<double> weights_;
  std::string rule_;
  double lr_;
  tensor::AdamState adam_;
  std::uint64_t pushes_ = 0;
};

using ShardRef = taskrt::ActorRef<ParamShard>;

struct ParamServerConfig {
  std::size_t num_shards = 2;
  std::size_t rounds = 1;  // per evaluator per step
  // Issue the pulls for the next round right behind this round's pushes.
  bool prefetch = true;
};

struct PsWorkerResult {
  std::size_t rows = 0;
  std::size_t rounds = 0;
  policy::Stats stats;
};

// Evaluators pull weights from the shards, compute a gradient and push its
// slices back, with no driver involvement inside a step.
class ParamServerOptimizer final : public PolicyOptimizer {
 public:
  ParamServerOptimizer(taskrt::Runtime& rt, policy::PolicyGraph& local, std::vector<EvaluatorRef> evaluators,
                       ParamServerConfig cfg = {});
  ~ParamServerOptimizer() override;
  std::string name() const override { return "param_server"; }

  const std::vector<ShardRef>& shards() const { return shards_; }
  // Concatenation of the shard slices in index order.
  std::vector<double> shard_weights();

 protected:
  void do_step(OptimizerStats& out) override;

 private:
  ParamServerConfig cfg_;
  std::vector<ShardRef> shards_;
};

// --- replay --------------------------------------------------------------------

struct ReplayOptimizerConfig {
  ReplayConfig buffer;
  std::size_t train_batch_size = 32;
  std::size_t learning_starts = 1000;
  std::size_t rounds = 1;  // learner steps per step()
};

using ReplayRef = taskrt::ActorRef<ReplayBuffer>;

// Evaluators write batches to the object store, the replay actor ingests
// them by reference, and the driver learns from prioritized minibatches.
class ReplayOptimizer final : public PolicyOptimizer {
 public:
  ReplayOptimizer(taskrt::Runtime& rt, policy::PolicyGraph& local, std::vector<EvaluatorRef> evaluators,
                  ReplayOptimizerConfig cfg = {});
  ~ReplayOptimizer() override;
  std::string name() const override { return "replay"; }
  const ReplayRef& replay_actor() const { return replay_; }

 protected:
  void do_step(OptimizerStats& out) override;

 private:
  ReplayOptimizerConfig cfg_;
  ReplayRef replay_;
  std::uint64_t buffered_ = 0;
};

// --- Ape-X style pipeline --------------------------------------------------------

// Exploration rate of worker i out of n: base^(1 + 7 i / (n - 1)).
double apex_epsilon(std::size_t i, std::size_t n, double base = 0.4);

struct ApexConfig {
  std::size_t num_replay_actors = 2;
  ReplayConfig buffer;  // per replay actor
  std::size_t train_batch_size = 32;
  std::size_t learning_starts = 500;  // rows across all replay actors
  std::size_t learner_steps = 16;     // per step()
  std::size_t broadcast_interval = 16;
};

struct Interval {
  double begin = 0.0;
  double end = 0.0;
};

// Timestamps (seconds on the steady clock) of sampling tasks and learner
// steps. A sampling task is in flight from submission to completion and
// executing from its start on the evaluator to completion.
struct PipelineTrace {
  std::vector<Interval> in_flight;
  std::vector<Interval> sampling;
  std::vector<Interval> learning;
  std::uint64_t priority_updates = 0;
  std::uint64_t broadcasts = 0;
  // Fraction of learner time during which some sampling task was in flight.
  double overlap_fraction() const;
  // Same, counting only time a sampling task was executing.
  double execution_overlap_fraction() const;
};

// Sampling, replay insertion and minibatch prefetch stay in flight while
// the driver computes gradients. Tasks are consumed round-robin so runs are
// reproducible.
class ApexOptimizer final : public PolicyOptimizer {
 public:
  ApexOptimizer(taskrt::Runtime& rt, policy::PolicyGraph& local, std::vector<EvaluatorRef> evaluators,
                ApexConfig cfg = {});
  ~ApexOptimizer() override;
  std::string name() const override { return "apex"; }

  const PipelineTrace& trace() const { return trace_; }
  const std::vector<ReplayRef>& replay_actors() const { return replay_; }

 protected:
  void do_step(OptimizerStats& out) override;

 public:
  struct SampleResult {
    taskrt::ObjectRef<SampleBatch> batch;
    std::size_t rows = 0;
    Interval when;
  };

 private:
  void submit_sample(std::size_t i);

  ApexConfig cfg_;
  std::vector<ReplayRef> replay_;
  std::vector<taskrt::Future<SampleResult>> sampling_;
  std::vector<double> submitted_at_;
  std::vector<std::optional<taskrt::Future<SampleBatch>>> prefetch_;
  std::vector<taskrt::Future<taskrt::Unit>> pending_acks_;
  std::vector<std::uint64_t> replay_rows_;
  std::size_t next_sampler_ = 0;
  std::size_t next_insert_ = 0;
  std::size_t next_learn_ = 0;
  std::uint64_t applications_ = 0;
  PipelineTrace trace_;
};

// --- strategy selection ----------------------------------------------------------

struct StrategyChoice {
  std::string choice;
  std::vector<std::string> log;
};

// Lowest median step time wins; a tie with `current` keeps `current`.
// Throws InsufficientHistory when a candidate has fewer than two samples.
StrategyChoice select_strategy(const std::map<std::string, std::vector<double>>& step_times,
                               const std::string& current);

// Probes each candidate for `probe_steps` steps in turn, then commits to the
// one select_strategy() picks.
class AdaptiveOptimizer final : public PolicyOptimizer {
 public:
  AdaptiveOptimizer(taskrt::Runtime& rt, policy::PolicyGraph& local, std::vector<EvaluatorRef> evaluators,
                    std::vector<std::unique_ptr<PolicyOptimizer>> candidates, std::size_t probe_steps = 2);
  std::string name() const override { return "adaptive"; }

  const std::string& current() const { return current_; }
  const std::vector<std::string>& log() const { return log_; }
  PolicyOptimizer& candidate(const std::string& name);

 protected:
  void do_step(OptimizerStats& out) override;

 private:
  std::vector<std::unique_ptr<PolicyOptimizer>> candidates_;
  std::size_t probe_steps_;
  std::size_t probed_ = 0;
  bool committed_ = false;
  std::string current_;
  std::map<std::string, std::vector<double>> history_;
  std::vector<std::string> log_;
};

// --- construction from config --------------------------------------------------

// Kinds: "sync", "local_multipass", "async", "param_server", "replay",
// "apex". Violations as "kind: reason" or "params.<key>: reason".
std::vector<std::string> optimizer_kinds();
std::vector<std::string> validate_optimizer_config(const std::string& kind, const nlohmann::json& params);
std::unique_ptr<PolicyOptimizer> make_optimizer(const std::string& kind, const nlohmann::json& params,
                                                taskrt::Runtime& rt, policy::PolicyGraph& local,
                                                std::vector<EvaluatorRef> evaluators);

}  // namespace rldist::optimizers
