#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "rldist/algorithms/config.hpp"
#include "rldist/evaluation/evaluator.hpp"
#include "rldist/optimizers/optimizer.hpp"
#include "rldist/taskrt/runtime.hpp"

namespace rldist::algorithms {

struct IterationResult {
  std::int64_t iteration = 0;  // 1-based
  // Mean return over the last 100 completed episodes; NaN before the first.
  double episode_reward_mean = 0.0;
  double episode_len_mean = 0.0;
  std::int64_t episodes_this_iter = 0;
  std::int64_t episodes_total = 0;
  std::int64_t timesteps_total = 0;
  optimizers::OptimizerStats optimizer;  // this iteration only
  double wall_time = 0.0;                // seconds
  nlohmann::json info = nlohmann::json::object();
};

// One metrics record. NaN means are written as null.
nlohmann::json to_json(const IterationResult& r);

// Drops every key containing "wall_time", at any depth.
nlohmann::json strip_wall_time(const nlohmann::json& record);

struct TrainerCheckpoint {
  std::string config;  // canonical JSON
  std::int64_t iteration = 0;
  std::int64_t timesteps_total = 0;
  std::int64_t episodes_total = 0;
  std::vector<double> weights;
};

// The contract every algorithm implements. Callers (the CLI, tune, PPO-ES)
// use nothing else.
class Trainer {
 public:
  Trainer(taskrt::Runtime& rt, TrainerConfig cfg);
  virtual ~Trainer() = default;
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  IterationResult train();

  virtual std::vector<double> get_weights() = 0;
  // Also pushes the weights to any remote workers.
  virtual void set_weights(const std::vector<double>& weights) = 0;
  // Undiscounted returns of the current policy acting greedily in a fresh
  // environment.
  virtual std::vector<double> evaluate(int episodes, std::uint64_t seed) = 0;

  TrainerCheckpoint checkpoint();
  // Restores weights and counters. The config must match.
  void restore(const TrainerCheckpoint& ckpt);
  void save(const std::string& path);
  void load(const std::string& path);

  const TrainerConfig& config() const { return cfg_; }
  std::int64_t iteration() const { return iteration_; }
  std::int64_t timesteps_total() const { return timesteps_; }
  taskrt::Runtime& runtime() { return rt_; }

 protected:
  struct StepOutput {
    optimizers::OptimizerStats stats;
    std::uint64_t timesteps = 0;  // new environment steps
    evaluation::EpisodeStats episodes;
    nlohmann::json info = nlohmann::json::object();
  };
  virtual StepOutput step() = 0;

  taskrt::Runtime& rt_;
  TrainerConfig cfg_;

 private:
  std::int64_t iteration_ = 0;
  std::int64_t timesteps_ = 0;
  std::int64_t episodes_ = 0;
  std::deque<double> returns_;
  std::deque<double> lengths_;
};

// pg, ppo, dqn, a3c and apex: a local policy graph, remote evaluators and a
// policy optimizer chosen by config.
class GraphTrainer final : public Trainer {
 public:
  GraphTrainer(taskrt::Runtime& rt, TrainerConfig cfg);
  ~GraphTrainer() override;

  std::vector<double> get_weights() override { return local_->get_weights(); }
  void set_weights(const std::vector<double>& weights) override;
  std::vector<double> evaluate(int episodes, std::uint64_t seed) override;

  policy::PolicyGraph& local_graph() { return *local_; }
  optimizers::PolicyOptimizer& optimizer() { return *optimizer_; }
  const std::vector<optimizers::EvaluatorRef>& evaluators() const { return evaluators_; }

 protected:
  StepOutput step() override;

 private:
  std::unique_ptr<policy::PolicyGraph> local_;
  std::vector<optimizers::EvaluatorRef> evaluators_;
  std::unique_ptr<optimizers::PolicyOptimizer> optimizer_;
};

// Config of evaluator `index` of a graph trainer.
evaluation::EvaluatorConfig evaluator_config(const TrainerConfig& cfg, std::size_t index);

std::unique_ptr<Trainer> make_trainer(taskrt::Runtime& rt, const TrainerConfig& cfg);

// Hosts a trainer on its own actor thread, so its evaluators become the
// actor's children. Used for nested trainers.
class TrainerActor {
 public:
  TrainerActor(taskrt::ActorContext& ctx, TrainerConfig cfg);

  Trainer& trainer() { return *trainer_; }
  std::vector<IterationResult> train(int iterations);
  // Replaces the trainer with one built from `cfg`, keeping `weights`.
  void rebuild(const TrainerConfig& cfg, const std::vector<double>& weights);

 private:
  taskrt::Runtime& rt_;
  std::unique_ptr<Trainer> trainer_;
};

using TrainerRef = taskrt::ActorRef<TrainerActor>;

}  // namespace rldist::algorithms

namespace rldist::taskrt {

template <>
struct Codec<algorithms::TrainerCheckpoint> {
  static constexpr std::uint32_t tag = tags::kTrainerCheckpoint;
  static void encode(const algorithms::TrainerCheckpoint& c, ByteWriter& w) {
    w.put_string(c.config);
    w.put<std::int64_t>(c.iteration);
    w.put<std::int64_t>(c.timesteps_total);
    w.put<std::int64_t>(c.episodes_total);
    w.put_array<double>(c.weights);
  }
  static algorithms::TrainerCheckpoint decode(ByteReader& r) {
    algorithms::TrainerCheckpoint c;
    c.config = r.get_string();
    c.iteration = r.get<std::int64_t>();
    c.timesteps_total = r.get<std::int64_t>();
    c.episodes_total = r.get<std::int64_t>();
    c.weights = r.get_array<double>();
    return c;
  }
};

}  // namespace rldist::taskrt
