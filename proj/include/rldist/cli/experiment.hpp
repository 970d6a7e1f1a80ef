#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rldist/algorithms/trainer.hpp"

namespace rldist::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 2;
inline constexpr int kExitRuntime = 3;

struct StopConditions {
  std::optional<std::int64_t> max_iterations;
  std::optional<double> episode_reward_mean;
  std::optional<std::int64_t> timesteps_total;

  bool reached(const algorithms::IterationResult& r) const;
};

// A config file holds the trainer keys plus "mode", "stop" and, for tune
// mode, "tune".
struct ExperimentConfig {
  std::string mode = "train";  // train | tune
  nlohmann::json trainer = nlohmann::json::object();
  StopConditions stop;
  nlohmann::json tune = nlohmann::json::object();
};

// Throws ConfigError when the file is missing or is not valid JSON.
nlohmann::json load_config(const std::string& path);

// Violations as "<key path>: reason".
std::vector<std::string> validate_experiment(const nlohmann::json& j);
ExperimentConfig parse_experiment(const nlohmann::json& j);

struct RunOptions {
  std::string config_path;
  std::string out_dir = "rldist_out";
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> max_iters;
  std::optional<std::size_t> workers;
  bool csv = false;
};

// The config document with command-line overrides applied.
nlohmann::json apply_flags(nlohmann::json j, const RunOptions& opts);

// Returns kExitOk, kExitInvalid or kExitRuntime. Progress goes to `out`,
// errors to `err`.
int run_experiment(const RunOptions& opts, std::ostream& out, std::ostream& err);
int validate_command(const std::string& config_path, std::ostream& out);

// Nested objects flattened to dotted keys; arrays stay as JSON text.
nlohmann::json flatten(const nlohmann::json& record);
// Header from the union of keys in first-seen order.
std::string records_csv(const std::vector<nlohmann::json>& records);

}  // namespace rldist::cli
