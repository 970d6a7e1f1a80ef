#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "rldist/common/error.hpp"

namespace rldist::envs {

struct DiscreteSpace {
  int n = 2;
};

struct BoxSpace {
  std::size_t dim = 1;
  double low = -1.0;
  double high = 1.0;
};

using ActionSpace = std::variant<DiscreteSpace, BoxSpace>;

struct EnvSpec {
  std::size_t obs_dim = 0;
  ActionSpace action_space;
  int horizon = 1;

  bool discrete() const { return std::holds_alternative<DiscreteSpace>(action_space); }
  int num_actions() const { return std::get<DiscreteSpace>(action_space).n; }
  // Width of one action row in a sample batch.
  std::size_t action_dim() const { return discrete() ? 1 : std::get<BoxSpace>(action_space).dim; }
};

struct StepResult {
  std::vector<double> obs;
  double reward = 0.0;
  bool done = false;
};

// Gym-shaped single-agent environment. The base class owns the step counter
// and enforces the episode contract: stepping after done throws
// EpisodeFinished, and done is forced once the horizon is reached.
class Env {
 public:
  virtual ~Env() = default;

  const EnvSpec& spec() const { return spec_; }
  virtual std::string name() const = 0;

  std::vector<double> reset(std::uint64_t seed);
  StepResult step(std::span<const double> action);
  StepResult step(int action);

  int steps() const { return steps_; }
  bool done() const { return done_; }

  // Simulated per-step latency of an external simulator. Zero by default.
  void set_step_latency(std::chrono::microseconds latency) { latency_ = latency; }

 protected:
  explicit Env(EnvSpec spec) : spec_(std::move(spec)) {}

  virtual std::vector<double> do_reset() = 0;
  virtual StepResult do_step(std::span<const double> action) = 0;

  std::mt19937_64& rng() { return rng_; }
  EnvSpec spec_;

 private:
  std::mt19937_64 rng_;
  int steps_ = 0;
  bool done_ = true;
  bool was_reset_ = false;
  std::chrono::microseconds latency_{0};
};

// 5x5 grid; actions 0=Up 1=Down 2=Left 3=Right; walls clip; reaching the goal
// pays +1 and ends the episode; every other step pays 0.
class GridWorld final : public Env {
 public:
  struct Config {
    int size = 5;
    int horizon = 100;
    bool image_obs = false;  // 84x84 byte-valued rendering instead of one-hot
  };

  GridWorld() : GridWorld(Config{}) {}
  explicit GridWorld(Config cfg);
  std::string name() const override { return "gridworld"; }

  int x() const { return x_; }
  int y() const { return y_; }
  void set_position(int x, int y);

  static constexpr std::size_t kImageSide = 84;

 protected:
  std::vector<double> do_reset() override;
  StepResult do_step(std::span<const double> action) override;

 private:
  std::vector<double> observe() const;

  Config cfg_;
  int x_ = 0;
  int y_ = 0;
};

// Cart-pole balancing with explicit Euler integration.
class CartPoleLite final : public Env {
 public:
  struct Config {
    int horizon = 200;
    double gravity = 9.8;
    double cart_mass = 1.0;
    double pole_mass = 0.1;
    double half_pole_length = 0.5;
    double force = 10.0;
    double dt = 0.02;
    double angle_limit_rad = 12.0 * 2.0 * 3.14159265358979323846 / 360.0;
    double x_limit = 2.4;
  };

  CartPoleLite() : CartPoleLite(Config{}) {}
  explicit CartPoleLite(Config cfg);
  std::string name() const override { return "cartpole"; }

  // (x, x_dot, theta, theta_dot)
  const std::array<double, 4>& state() const { return state_; }
  void set_state(const std::array<double, 4>& s) { state_ = s; }
  const Config& config() const { return cfg_; }

 protected:
  std::vector<double> do_reset() override;
  StepResult do_step(std::span<const double> action) override;

 private:
  Config cfg_;
  std::array<double, 4> state_{};
};

// Pendulum swing-up with a continuous torque in [-2, 2].
class PendulumLite final : public Env {
 public:
  struct Config {
    int horizon = 200;
    double max_speed = 8.0;
    double max_torque = 2.0;
    double dt = 0.05;
    double gravity = 10.0;
    double mass = 1.0;
    double length = 1.0;
  };

  PendulumLite() : PendulumLite(Config{}) {}
  explicit PendulumLite(Config cfg);
  std::string name() const override { return "pendulum"; }

  double angle() const { return theta_; }
  double velocity() const { return theta_dot_; }

 protected:
  std::vector<double> do_reset() override;
  StepResult do_step(std::span<const double> action) override;

 private:
  Config cfg_;
  double theta_ = 0.0;
  double theta_dot_ = 0.0;
};

// One-step contextual bandit with a fixed linear labeling: the context is
// uniform in [-1, 1]^4 and action label(obs) pays 1, the other 0. Acting on
// it is supervised classification, so the cross-entropy to the label is a
// clean progress measure.
class ContextualBandit final : public Env {
 public:
  ContextualBandit() : Env(EnvSpec{4, DiscreteSpace{2}, 1}) {}
  std::string name() const override { return "bandit"; }
  static int label(std::span<const double> obs);

 protected:
  std::vector<double> do_reset() override;
  StepResult do_step(std::span<const double> action) override;

 private:
  std::array<double, 4> ctx_{};
};

// Environments with several simultaneously acting agents.
class MultiAgentEnv {
 public:
  virtual ~MultiAgentEnv() = default;
  virtual std::string name() const = 0;
  virtual std::size_t num_agents() const = 0;
  virtual const EnvSpec& agent_spec() const = 0;
  virtual std::vector<std::vector<double>> reset(std::uint64_t seed) = 0;
  virtual std::vector<StepResult> step(std::span<const int> actions) = 0;
};

// Two agents each pick 0 or 1; both receive 1 iff the picks match. Each
// agent observes (own last pick, peer's last pick), 0.5 before the first step.
class TwoAgentCoin final : public MultiAgentEnv {
 public:
  explicit TwoAgentCoin(int horizon = 10);
  std::string name() const override { return "twoagentcoin"; }
  std::size_t num_agents() const override { return 2; }
  const EnvSpec& agent_spec() const override { return spec_; }
  std::vector<std::vector<double>> reset(std::uint64_t seed) override;
  std::vector<StepResult> step(std::span<const int> actions) override;

 private:
  EnvSpec spec_;
  int steps_ = 0;
  bool done_ = true;
  std::array<double, 2> last_{0.5, 0.5};
};

// Names: "gridworld", "cartpole", "pendulum", "bandit". Keys in `overrides` replace the
// matching Config fields; "step_latency_us" applies to any environment.
std::unique_ptr<Env> make_env(const std::string& name, const nlohmann::json& overrides = {});
std::unique_ptr<MultiAgentEnv> make_multiagent_env(const std::string& name, const nlohmann::json& overrides = {});
bool is_multiagent(const std::string& name);
bool is_known_env(const std::string& name);
EnvSpec env_spec(const std::string& name, const nlohmann::json& overrides = {});

// A standalone 84x84 frame with a few large constant rectangles on a flat
// background, values in [0, 255]. Deterministic in `seed`.
std::vector<double> synthetic_image(std::uint64_t seed);

}  // namespace rldist::envs
