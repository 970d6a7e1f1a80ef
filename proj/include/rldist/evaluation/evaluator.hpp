#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "rldist/envs/env.hpp"
#include "rldist/evaluation/sample_batch.hpp"
#include "rldist/policy/graph.hpp"
#include "rldist/taskrt/runtime.hpp"

namespace rldist::evaluation {

enum class BatchMode { truncate_episodes, complete_episodes };

BatchMode parse_batch_mode(const std::string& s);
std::string to_string(BatchMode m);

struct EvaluatorConfig {
  std::string env = "cartpole";
  nlohmann::json env_config = nlohmann::json::object();
  std::string graph = "pg";
  policy::GraphConfig graph_config;
  std::size_t batch_size = 200;
  BatchMode mode = BatchMode::truncate_episodes;
  std::size_t num_envs = 1;
  // Env slot i uses env_seeds[i] when given, else seed + i.
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> env_seeds;
  // Fixed exploration rate replacing the graph's schedule (per-worker epsilon).
  std::optional<double> epsilon;
  std::int64_t worker_index = 0;
};

struct EpisodeStats {
  std::vector<double> returns;
  std::vector<std::int64_t> lengths;
};

struct GradientPacket {
  std::vector<double> grads;
  policy::Stats stats;
  std::size_t rows = 0;
  std::uint64_t weights_version = 0;  // version the gradient was computed at
};

// Agent-local batch plus the time-aligned batches of the other agents.
struct AgentBatch {
  SampleBatch own;
  std::vector<SampleBatch> peers;
};

// Pairs each agent's trajectory with its peers'. All batches must cover the
// same steps (row count, eps_id runs and t_index).
std::map<std::int64_t, AgentBatch> collate_multiagent(const std::map<std::int64_t, SampleBatch>& per_agent);

// The agent's batch with rewards replaced by the elementwise sum of its own
// and every peer's rewards.
SampleBatch shared_reward_postprocess(const AgentBatch& agent);

// Wraps one policy graph and one or more environment copies and produces
// postprocessed sample batches. Runs as a taskrt actor; every method executes
// on the actor's own thread.
class PolicyEvaluator {
 public:
  explicit PolicyEvaluator(EvaluatorConfig cfg);
  PolicyEvaluator(taskrt::ActorContext& ctx, EvaluatorConfig cfg);

  // truncate_episodes: exactly batch_size rows, partial episodes carried to
  // the next call. complete_episodes: whole episodes totalling at least
  // batch_size rows. Multi-agent environments count env steps, and return
  // one block of rows per agent.
  SampleBatch sample();
  // Stores the batch in the object store from the evaluator thread.
  taskrt::ObjectRef<SampleBatch> sample_to_store();

  GradientPacket compute_gradients(const SampleBatch& batch) const;
  GradientPacket sample_and_compute_gradients();

  void set_weights(const std::vector<double>& weights, std::uint64_t version = 0);
  std::vector<double> get_weights() const { return graph_->get_weights(); }
  std::uint64_t weights_version() const { return weights_version_; }
  void set_global_timestep(std::int64_t t) { graph_->set_global_timestep(t); }

  // Episodes completed since the previous call.
  EpisodeStats pop_episode_stats();

  std::uint64_t forward_passes() const { return forward_passes_; }
  std::uint64_t steps_sampled() const { return steps_sampled_; }
  const EvaluatorConfig& config() const { return cfg_; }
  policy::PolicyGraph& graph() { return *graph_; }
  const policy::PolicyGraph& graph() const { return *graph_; }
  taskrt::Runtime* runtime() const { return runtime_; }
  std::optional<double> epsilon() const;

 private:
  struct Segment {
    std::vector<double> obs, actions, rewards, dones, new_obs;
    std::vector<std::int64_t> eps_id, t_index, agent_id;
    std::map<std::string, std::vector<double>> aux;
    std::size_t rows = 0;
    void clear();
  };

  struct Slot {
    std::unique_ptr<envs::Env> env;
    std::unique_ptr<envs::MultiAgentEnv> multi;
    std::uint64_t seed = 0;
    std::int64_t episodes_started = 0;
    std::int64_t eps_id = 0;
    std::int64_t t = 0;
    double episode_return = 0.0;
    std::vector<std::vector<double>> obs;  // one entry per agent
    std::vector<Segment> segments;         // one per agent, current episode
  };

  void reset_slot(std::size_t index);
  // One forward pass over the first `active` slots; returns the episodes that
  // finished, tagged with their slot.
  std::vector<std::pair<std::size_t, std::vector<Segment>>> step_slots(std::size_t active);
  SampleBatch segment_batch(const Segment& s) const;
  SampleBatch finish(const std::vector<std::vector<Segment>>& pieces) const;

  EvaluatorConfig cfg_;
  taskrt::Runtime* runtime_ = nullptr;
  std::unique_ptr<policy::PolicyGraph> graph_;
  envs::EnvSpec spec_;
  std::size_t num_agents_ = 1;
  std::vector<Slot> slots_;
  std::vector<std::mt19937_64> rngs_;  // action sampling, one per (slot, agent)
  std::vector<std::vector<Segment>> completed_;  // complete mode carry-over
  EpisodeStats stats_;
  std::uint64_t forward_passes_ = 0;
  std::uint64_t steps_sampled_ = 0;
  std::uint64_t weights_version_ = 0;
};

// Runs `episodes` episodes of a graph in a fresh environment and returns
// their undiscounted returns. explore=false acts greedily.
std::vector<double> rollout_returns(policy::PolicyGraph& graph, const std::string& env,
                                    const nlohmann::json& env_config, int episodes, std::uint64_t seed,
                                    bool explore);

}  // namespace rldist::evaluation

namespace rldist::taskrt {

template <>
struct Codec<evaluation::GradientPacket> {
  static constexpr std::uint32_t tag = tags::kGradientPacket;
  static void encode(const evaluation::GradientPacket& g, ByteWriter& w) {
    w.put_array<double>(g.grads);
    w.put<std::uint64_t>(g.stats.size());
    for (const auto& [k, v] : g.stats) {
      w.put_string(k);
      w.put<double>(v);
    }
    w.put<std::uint64_t>(g.rows);
    w.put<std::uint64_t>(g.weights_version);
  }
  static evaluation::GradientPacket decode(ByteReader& r) {
    evaluation::GradientPacket g;
    g.grads = r.get_array<double>();
    const auto n = r.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < n; ++i) {
      auto k = r.get_string();
      g.stats[k] = r.get<double>();
    }
    g.rows = r.get<std::uint64_t>();
    g.weights_version = r.get<std::uint64_t>();
    return g;
  }
  static std::size_t size(const evaluation::GradientPacket& g) {
    std::size_t n = 8 + 8 * g.grads.size() + 8 + 16;
    for (const auto& [k, v] : g.stats) n += 16 + k.size();
    return n;
  }
};

template <>
struct Codec<evaluation::EpisodeStats> {
  static constexpr std::uint32_t tag = tags::kEpisodeStats;
  static void encode(const evaluation::EpisodeStats& s, ByteWriter& w) {
    w.put_array<double>(s.returns);
    w.put_array<std::int64_t>(s.lengths);
  }
  static evaluation::EpisodeStats decode(ByteReader& r) {
    evaluation::EpisodeStats s;
    s.returns = r.get_array<double>();
    s.lengths = r.get_array<std::int64_t>();
    return s;
  }
  static std::size_t size(const evaluation::EpisodeStats& s) { return 16 + 8 * (s.returns.size() + s.lengths.size()); }
};

}  // namespace rldist::taskrt
