#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rldist/envs/env.hpp"
#include "rldist/evaluation/sample_batch.hpp"
#include "rldist/policy/losses.hpp"
#include "rldist/policy/postprocessing.hpp"
#include "rldist/tensor/optim.hpp"

namespace rldist::policy {

using Stats = std::map<std::string, double>;

// Hyperparameters shared by the reference graphs. Each graph reads the
// subset it needs.
struct GraphConfig {
  std::vector<std::size_t> hidden = {64, 64};
  double gamma = 0.99;
  double lambda = 0.95;
  std::string optimizer = "adam";  // "adam" | "sgd"
  double lr = 0.01;
  bool normalize_advantages = true;
  // PPO
  double clip = 0.2;
  double vf_coeff = 0.5;
  double entropy_coeff = 0.0;
  // DQN
  int n_step = 1;
  double huber_delta = 1.0;
  ExplorationSchedule exploration;
  // Multi-agent demo: add peer rewards to the agent's own before advantages.
  bool shared_reward = false;
  std::uint64_t seed = 0;
};

// Violations as "key: reason"; empty when valid.
std::vector<std::string> validate_graph_config(const nlohmann::json& j);
GraphConfig parse_graph_config(const nlohmann::json& j);
nlohmann::json to_json(const GraphConfig& cfg);

struct ActOutput {
  std::vector<double> actions;  // rows x action_dim
  std::map<std::string, std::vector<double>> aux;
  tensor::Matrix h_next;  // rows x 0 for the reference graphs
};

struct GradOutput {
  std::vector<double> grads;  // flat, layout of get_weights()
  Stats stats;
  std::vector<double> td_errors;  // filled by graphs that produce them
};

struct UtilityResult {
  enum class Kind { stats, weights };
  Kind kind = Kind::stats;
  Stats stats;  // empty for weight-mutating utilities
};

// The bundle of policy, postprocessor, loss and utilities for one algorithm.
class PolicyGraph {
 public:
  PolicyGraph(envs::EnvSpec spec, GraphConfig cfg);
  virtual ~PolicyGraph() = default;

  virtual std::string kind() const = 0;
  const envs::EnvSpec& spec() const { return spec_; }
  const GraphConfig& config() const { return cfg_; }

  // Per-row aux columns written by act(), in a fixed order.
  virtual std::vector<std::string> aux_names() const = 0;

  // rngs holds either one generator per row or a single generator shared by
  // all rows in order. explore=false picks the greedy action (lowest index
  // on ties).
  virtual ActOutput act(const tensor::Matrix& obs, std::span<std::mt19937_64> rngs, bool explore = true) = 0;
  ActOutput act(const tensor::Matrix& obs, bool explore = true);

  // Runs on one agent's trajectory segment(s). Never reorders or drops rows.
  virtual SampleBatch postprocess(const SampleBatch& batch, std::span<const SampleBatch> peers) const = 0;

  virtual GradOutput compute_gradients(const SampleBatch& batch) const = 0;
  // Applies the configured update rule (SGD or Adam) to the weights.
  void apply_gradients(std::span<const double> grads);

  virtual std::vector<double> get_weights() const = 0;
  virtual void set_weights(std::span<const double> weights) = 0;
  std::size_t num_weights() const { return get_weights().size(); }

  // Exploration schedules and similar state driven by global progress.
  virtual void set_global_timestep(std::int64_t) {}

  virtual std::vector<std::string> utility_names() const { return {}; }
  virtual UtilityResult call_utility(const std::string& name);

  tensor::AdamState& adam_state() { return adam_; }
  const tensor::AdamState& adam_state() const { return adam_; }

 protected:
  envs::EnvSpec spec_;
  GraphConfig cfg_;
  std::mt19937_64 rng_;

 private:
  tensor::AdamState adam_;
};

// Categorical policy gradient with reward-to-go advantages.
class PgGraph final : public PolicyGraph {
 public:
  PgGraph(envs::EnvSpec spec, GraphConfig cfg);
  std::string kind() const override { return "pg"; }
  std::vector<std::string> aux_names() const override { return {col::kLogp}; }
  ActOutput act(const tensor::Matrix& obs, std::span<std::mt19937_64> rngs, bool explore = true) override;
  using PolicyGraph::act;
  SampleBatch postprocess(const SampleBatch& batch, std::span<const SampleBatch> peers) const override;
  GradOutput compute_gradients(const SampleBatch& batch) const override;
  std::vector<double> get_weights() const override { return policy_.flatten(); }
  void set_weights(std::span<const double> weights) override;

  const tensor::MlpParams& policy() const { return policy_; }

 private:
  tensor::MlpParams policy_;
};

// Clipped-surrogate PPO with a separate value network and GAE.
class PpoGraph final : public PolicyGraph {
 public:
  PpoGraph(envs::EnvSpec spec, GraphConfig cfg);
  std::string kind() const override { return "ppo"; }
  std::vector<std::string> aux_names() const override { return {col::kLogp, col::kVfPreds}; }
  ActOutput act(const tensor::Matrix& obs, std::span<std::mt19937_64> rngs, bool explore = true) override;
  using PolicyGraph::act;
  SampleBatch postprocess(const SampleBatch& batch, std::span<const SampleBatch> peers) const override;
  GradOutput compute_gradients(const SampleBatch& batch) const override;
  std::vector<double> get_weights() const override;
  void set_weights(std::span<const double> weights) override;

  const tensor::MlpParams& policy() const { return policy_; }
  const tensor::MlpParams& value() const { return value_; }

 private:
  tensor::MlpParams policy_;
  tensor::MlpParams value_;
};

// Q-learning with a target network, n-step targets and epsilon-greedy
// exploration.
class DqnGraph final : public PolicyGraph {
 public:
  DqnGraph(envs::EnvSpec spec, GraphConfig cfg);
  std::string kind() const override { return "dqn"; }
  std::vector<std::string> aux_names() const override { return {}; }
  ActOutput act(const tensor::Matrix& obs, std::span<std::mt19937_64> rngs, bool explore = true) override;
  using PolicyGraph::act;
  SampleBatch postprocess(const SampleBatch& batch, std::span<const SampleBatch> peers) const override;
  GradOutput compute_gradients(const SampleBatch& batch) const override;
  std::vector<double> get_weights() const override { return q_.flatten(); }
  void set_weights(std::span<const double> weights) override;

  void set_global_timestep(std::int64_t t) override { timestep_ = t; }
  std::vector<std::string> utility_names() const override { return {"target_sync", "exploration"}; }
  UtilityResult call_utility(const std::string& name) override;

  // theta_target <- theta
  void target_sync();
  std::vector<double> get_target_weights() const { return q_target_.flatten(); }
  std::int64_t target_sync_count() const { return target_syncs_; }

  double epsilon() const;
  // A fixed epsilon that replaces the schedule (per-worker exploration).
  void set_epsilon_override(std::optional<double> eps) { eps_override_ = eps; }

  const tensor::MlpParams& q() const { return q_; }
  const tensor::MlpParams& q_target() const { return q_target_; }

 private:
  tensor::MlpParams q_;
  tensor::MlpParams q_target_;
  std::int64_t timestep_ = 0;
  std::int64_t target_syncs_ = 0;
  std::optional<double> eps_override_;
};

// kind: "pg" | "ppo" | "dqn". Throws ConfigError for unknown kinds or a
// continuous action space.
std::unique_ptr<PolicyGraph> make_graph(const std::string& kind, const envs::EnvSpec& spec, const GraphConfig& cfg);
bool is_known_graph(const std::string& kind);

// Samples from a categorical distribution given log-probabilities.
std::size_t sample_categorical(std::span<const double> logp, std::mt19937_64& rng);
std::size_t argmax_lowest(std::span<const double> values);

}  // namespace rldist::policy
