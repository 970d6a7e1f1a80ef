#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "rldist/algorithms/trainer.hpp"

namespace rldist::tune {

using algorithms::IterationResult;
using algorithms::TrainerRef;

struct TrialSpec {
  std::string trial_id;
  nlohmann::json overrides = nlohmann::json::object();  // {"graph.lr": 0.01, ...}
};

// Cartesian product of {"key.path": [values...]} in key order; trial ids are
// "trial_000", "trial_001", ...
std::vector<TrialSpec> expand_grid(const nlohmann::json& grid);

struct TrialResult {
  std::string trial_id;
  nlohmann::json overrides = nlohmann::json::object();
  bool failed = false;
  std::string error;
  // Final episode_reward_mean; NaN when no episode finished or the trial failed.
  double score = 0.0;
  std::vector<IterationResult> history;
};

struct GridOptions {
  // Called once per trial right after its actor is spawned.
  std::function<void(const TrialSpec&, const TrainerRef&)> on_spawn;
};

// Runs every trial as a trainer actor for `iterations` iterations, all
// concurrently. Results are ranked by score (descending, NaN last, ties by
// trial_id); failed trials follow, in trial_id order. Throws ConfigError for
// an empty spec list or overrides that do not validate.
std::vector<TrialResult> grid_search(taskrt::Runtime& rt, const nlohmann::json& base,
                                     const std::vector<TrialSpec>& specs, int iterations,
                                     const GridOptions& options = {});

// trial_id, status, score, then one column per override key.
std::string results_csv(const std::vector<TrialResult>& results);

// --- population based training ----------------------------------------------------

struct PbtMember {
  std::string trial_id;
  nlohmann::json hyperparams = nlohmann::json::object();  // {"graph.lr": 0.01}
  double score = 0.0;
  std::vector<double> weights;
};

struct ExploitRecord {
  std::int64_t generation = 0;
  std::size_t target = 0;
  std::size_t source = 0;
  nlohmann::json source_hyperparams;
  nlohmann::json new_hyperparams;
  std::vector<double> factors;  // one per hyperparameter, in key order
};

struct PopulationState {
  std::vector<PbtMember> members;
  std::int64_t generation = 0;
  std::vector<ExploitRecord> exploits;  // every copy made so far
};

struct PbtConfig {
  double exploit_fraction = 0.25;
  std::vector<double> perturb_factors = {0.8, 1.2};
  std::uint64_t seed = 0;
};

// The bottom exploit_fraction of members (by score, ties to the higher
// index) copy weights and hyperparameters from a uniformly chosen member of
// the top exploit_fraction, then scale each copied hyperparameter by a factor
// drawn from perturb_factors. Integer hyperparameters are rounded, minimum 1.
PopulationState pbt_step(PopulationState state, const PbtConfig& cfg, std::mt19937_64& rng);

struct PbtRun {
  PopulationState state;
  std::vector<double> best_per_generation;
  // Per exploit: the target actor reported the source's weights and the
  // perturbed hyperparameters right after the copy.
  std::vector<bool> verified;
  int hierarchy_levels = 0;  // counting the driver
};

// Synchronous PBT: every member trains `iterations_per_generation`
// iterations, then pbt_step runs and copied members are rebuilt in place.
PbtRun run_pbt(taskrt::Runtime& rt, const nlohmann::json& base, const std::vector<nlohmann::json>& hyperparams,
               int generations, int iterations_per_generation, const PbtConfig& cfg);

}  // namespace rldist::tune
