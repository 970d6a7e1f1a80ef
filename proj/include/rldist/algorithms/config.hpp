#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "rldist/evaluation/evaluator.hpp"
#include "rldist/policy/graph.hpp"

namespace rldist::algorithms {

struct EsConfig {
  double sigma = 0.02;
  std::size_t num_perturbations = 200;  // even; antithetic pairs
  double stepsize = 0.01;
  double l2 = 0.005;
  int episodes_per_perturbation = 1;
  // Intermediate aggregation actors, used once there are more workers.
  std::size_t aggregators = 4;
};

struct PpoEsConfig {
  std::size_t population = 4;
  int inner_iterations = 2;
  double sigma_outer = 0.02;
  int eval_episodes = 5;
};

// Everything needed to build a trainer. Missing keys take algorithm-specific
// defaults when parsed.
struct TrainerConfig {
  std::string algorithm = "pg";  // pg | ppo | dqn | a3c | apex | es | ppo_es
  std::string env = "cartpole";
  nlohmann::json env_config = nlohmann::json::object();
  std::size_t num_evaluators = 2;
  std::uint64_t seed = 0;
  std::size_t batch_size = 200;  // rows per evaluator per sample
  evaluation::BatchMode batch_mode = evaluation::BatchMode::truncate_episodes;
  std::size_t num_envs = 1;
  std::string optimizer;  // empty for es and ppo_es
  nlohmann::json optimizer_params = nlohmann::json::object();
  nlohmann::json graph = nlohmann::json::object();  // as given, before defaults
  int target_interval = 5;
  EsConfig es;
  PpoEsConfig ppo_es;

  std::string graph_kind() const;
  policy::GraphConfig graph_config() const;
};

std::vector<std::string> algorithm_names();

// Violations as "<key path>: reason"; empty when the config is valid.
std::vector<std::string> validate_trainer_config(const nlohmann::json& j);
// Throws ConfigError naming the first violation.
TrainerConfig parse_trainer_config(const nlohmann::json& j);
// Canonical form with all defaults filled in; parses back to the same config.
nlohmann::json to_json(const TrainerConfig& cfg);

// Applies {"a.b": value, ...} overrides to a config document. Throws
// ConfigError when a path does not name a known config key.
nlohmann::json apply_overrides(const nlohmann::json& base, const nlohmann::json& overrides);

}  // namespace rldist::algorithms
