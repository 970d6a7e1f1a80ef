#include "rldist/envs/env.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <thread>

namespace rldist::envs {

std::vector<double> Env::reset(std::uint64_t seed) {
  rng_.seed(seed);
  steps_ = 0;
  done_ = false;
  was_reset_ = true;
  return do_reset();
}

StepResult Env::step(std::span<const double> action) {
  if (!was_reset_ || done_) throw EpisodeFinished(name() + ": reset before stepping");
  if (spec_.discrete()) {
    if (action.size() != 1) throw InvalidAction(name() + ": expected one discrete action");
    const double a = action[0];
    if (a != std::floor(a) || a < 0 || a >= spec_.num_actions()) {
      throw InvalidAction(name() + ": action " + std::to_string(a) + " out of range");
    }
  } else {
    if (action.size() != spec_.action_dim()) throw InvalidAction(name() + ": wrong action width");
    for (double a : action) {
      if (!std::isfinite(a)) throw InvalidAction(name() + ": non-finite action");
    }
  }
  if (latency_.count() > 0) std::this_thread::sleep_for(latency_);
  StepResult r = do_step(action);
  ++steps_;
  if (steps_ >= spec_.horizon) r.done = true;
  done_ = r.done;
  return r;
}

StepResult Env::step(int action) {
  const double a = action;
  return step(std::span<const double>(&a, 1));
}

// --- GridWorld ---------------------------------------------------------------

GridWorld::GridWorld(Config cfg)
    : Env(EnvSpec{cfg.image_obs ? kImageSide * kImageSide : static_cast<std::size_t>(cfg.size * cfg.size),
                  DiscreteSpace{4}, cfg.horizon}),
      cfg_(cfg) {
  if (cfg.size < 2) throw EnvError("gridworld size must be >= 2");
  if (cfg.horizon < 1) throw EnvError("horizon must be >= 1");
}

void GridWorld::set_position(int x, int y) {
  x_ = std::clamp(x, 0, cfg_.size - 1);
  y_ = std::clamp(y, 0, cfg_.size - 1);
}

std::vector<double> GridWorld::do_reset() {
  x_ = 0;
  y_ = 0;
  return observe();
}

StepResult GridWorld::do_step(std::span<const double> action) {
  switch (static_cast<int>(action[0])) {
    case 0: y_ = std::max(0, y_ - 1); break;
    case 1: y_ = std::min(cfg_.size - 1, y_ + 1); break;
    case 2: x_ = std::max(0, x_ - 1); break;
    default: x_ = std::min(cfg_.size - 1, x_ + 1); break;
  }
  const bool goal = x_ == cfg_.size - 1 && y_ == cfg_.size - 1;
  return {observe(), goal ? 1.0 : 0.0, goal};
}

std::vector<double> GridWorld::observe() const {
  if (!cfg_.image_obs) {
    std::vector<double> obs(static_cast<std::size_t>(cfg_.size * cfg_.size), 0.0);
    obs[static_cast<std::size_t>(y_ * cfg_.size + x_)] = 1.0;
    return obs;
  }
  // Board drawn as square cells on a flat background: frame 64, goal 128,
  // agent 255.
  std::vector<double> img(kImageSide * kImageSide, 0.0);
  const int cell = static_cast<int>(kImageSide - 4) / cfg_.size;
  const int side = static_cast<int>(kImageSide);
  auto fill = [&](int x0, int y0, int w, int h, double v) {
    for (int yy = y0; yy < y0 + h && yy < side; ++yy)
      for (int xx = x0; xx < x0 + w && xx < side; ++xx) img[static_cast<std::size_t>(yy * side + xx)] = v;
  };
  fill(0, 0, side, 2, 64.0);
  fill(0, side - 2, side, 2, 64.0);
  fill(0, 0, 2, side, 64.0);
  fill(side - 2, 0, 2, side, 64.0);
  fill(2 + (cfg_.size - 1) * cell, 2 + (cfg_.size - 1) * cell, cell, cell, 128.0);
  fill(2 + x_ * cell, 2 + y_ * cell, cell, cell, 255.0);
  return img;
}

// --- CartPoleLite ------------------------------------------------------------

CartPoleLite::CartPoleLite(Config cfg) : Env(EnvSpec{4, DiscreteSpace{2}, cfg.horizon}), cfg_(cfg) {
  if (cfg.horizon < 1) throw EnvError("horizon must be >= 1");
}

std::vector<double> CartPoleLite::do_reset() {
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  for (auto& s : state_) s = u(rng());
  return {state_.begin(), state_.end()};
}

StepResult CartPoleLite::do_step(std::span<const double> action) {
  auto& [x, x_dot, theta, theta_dot] = state_;
  const double force = action[0] == 1.0 ? cfg_.force : -cfg_.force;
  const double total_mass = cfg_.cart_mass + cfg_.pole_mass;
  const double pole_ml = cfg_.pole_mass * cfg_.half_pole_length;
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);
  const double temp = (force + pole_ml * theta_dot * theta_dot * sin_t) / total_mass;
  const double theta_acc = (cfg_.gravity * sin_t - cos_t * temp) /
                           (cfg_.half_pole_length * (4.0 / 3.0 - cfg_.pole_mass * cos_t * cos_t / total_mass));
  const double x_acc = temp - pole_ml * theta_acc * cos_t / total_mass;
  x += cfg_.dt * x_dot;
  x_dot += cfg_.dt * x_acc;
  theta += cfg_.dt * theta_dot;
  theta_dot += cfg_.dt * theta_acc;
  const bool failed = x < -cfg_.x_limit || x > cfg_.x_limit || theta < -cfg_.angle_limit_rad ||
                      theta > cfg_.angle_limit_rad;
  return {{state_.begin(), state_.end()}, 1.0, failed};
}

// --- PendulumLite ------------------------------------------------------------

PendulumLite::PendulumLite(Config cfg)
    : Env(EnvSpec{3, BoxSpace{1, -cfg.max_torque, cfg.max_torque}, cfg.horizon}), cfg_(cfg) {
  if (cfg.horizon < 1) throw EnvError("horizon must be >= 1");
}

std::vector<double> PendulumLite::do_reset() {
  std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
  std::uniform_real_distribution<double> speed(-1.0, 1.0);
  theta_ = angle(rng());
  theta_dot_ = speed(rng());
  return {std::cos(theta_), std::sin(theta_), theta_dot_};
}

StepResult PendulumLite::do_step(std::span<const double> action) {
  const double u = std::clamp(action[0], -cfg_.max_torque, cfg_.max_torque);
  const double normalized = std::remainder(theta_, 2.0 * std::numbers::pi);
  const double cost = normalized * normalized + 0.1 * theta_dot_ * theta_dot_ + 0.001 * u * u;
  const double g = cfg_.gravity;
  const double m = cfg_.mass;
  const double l = cfg_.length;
  double new_dot = theta_dot_ + (3.0 * g / (2.0 * l) * std::sin(theta_) + 3.0 / (m * l * l) * u) * cfg_.dt;
  new_dot = std::clamp(new_dot, -cfg_.max_speed, cfg_.max_speed);
  theta_ += new_dot * cfg_.dt;
  theta_dot_ = new_dot;
  return {{std::cos(theta_), std::sin(theta_), theta_dot_}, -cost, false};
}

// --- ContextualBandit -----------------------------------------------------------

int ContextualBandit::label(std::span<const double> obs) {
  return obs[0] + obs[1] - obs[2] + 0.5 * obs[3] > 0.0 ? 1 : 0;
}

std::vector<double> ContextualBandit::do_reset() {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& c : ctx_) c = u(rng());
  return {ctx_.begin(), ctx_.end()};
}

StepResult ContextualBandit::do_step(std::span<const double> action) {
  const bool right = static_cast<int>(action[0]) == label(ctx_);
  return {{ctx_.begin(), ctx_.end()}, right ? 1.0 : 0.0, true};
}

// --- TwoAgentCoin --------------------------------------------------------------

TwoAgentCoin::TwoAgentCoin(int horizon) : spec_{2, DiscreteSpace{2}, horizon} {
  if (horizon < 1) throw EnvError("horizon must be >= 1");
}

std::vector<std::vector<double>> TwoAgentCoin::reset(std::uint64_t) {
  steps_ = 0;
  done_ = false;
  last_ = {0.5, 0.5};
  return {{last_[0], last_[1]}, {last_[1], last_[0]}};
}

std::vector<StepResult> TwoAgentCoin::step(std::span<const int> actions) {
  if (done_) throw EpisodeFinished("twoagentcoin: reset before stepping");
  if (actions.size() != 2) throw InvalidAction("twoagentcoin: need one action per agent");
  for (int a : actions) {
    if (a != 0 && a != 1) throw InvalidAction("twoagentcoin: actions are 0 or 1");
  }
  last_ = {static_cast<double>(actions[0]), static_cast<double>(actions[1])};
  const double r = actions[0] == actions[1] ? 1.0 : 0.0;
  ++steps_;
  done_ = steps_ >= spec_.horizon;
  return {{{last_[0], last_[1]}, r, done_}, {{last_[1], last_[0]}, r, done_}};
}

// --- registry ----------------------------------------------------------------

namespace {

template <class Cfg>
void read_field(const nlohmann::json& j, const char* key, Cfg& field) {
  if (j.contains(key)) field = j.at(key).get<Cfg>();
}

void apply_latency(Env& env, const nlohmann::json& overrides) {
  if (overrides.contains("step_latency_us")) {
    env.set_step_latency(std::chrono::microseconds(overrides.at("step_latency_us").get<std::int64_t>()));
  }
}

}  // namespace

bool is_multiagent(const std::string& name) { return name == "twoagentcoin"; }

bool is_known_env(const std::string& name) {
  return name == "gridworld" || name == "cartpole" || name == "pendulum" || name == "bandit" ||
         name == "twoagentcoin";
}

std::unique_ptr<Env> make_env(const std::string& name, const nlohmann::json& overrides) {
  const nlohmann::json j = overrides.is_null() ? nlohmann::json::object() : overrides;
  std::unique_ptr<Env> env;
  if (name == "gridworld") {
    GridWorld::Config c;
    read_field(j, "size", c.size);
    read_field(j, "horizon", c.horizon);
    read_field(j, "image_obs", c.image_obs);
    env = std::make_unique<GridWorld>(c);
  } else if (name == "cartpole") {
    CartPoleLite::Config c;
    read_field(j, "horizon", c.horizon);
    read_field(j, "force", c.force);
    read_field(j, "dt", c.dt);
    env = std::make_unique<CartPoleLite>(c);
  } else if (name == "pendulum") {
    PendulumLite::Config c;
    read_field(j, "horizon", c.horizon);
    env = std::make_unique<PendulumLite>(c);
  } else if (name == "bandit") {
    env = std::make_unique<ContextualBandit>();
  } else {
    throw EnvError("unknown single-agent environment '" + name + "'");
  }
  apply_latency(*env, j);
  return env;
}

std::unique_ptr<MultiAgentEnv> make_multiagent_env(const std::string& name, const nlohmann::json& overrides) {
  if (name != "twoagentcoin") throw EnvError("unknown multi-agent environment '" + name + "'");
  int horizon = 10;
  if (overrides.is_object()) read_field(overrides, "horizon", horizon);
  return std::make_unique<TwoAgentCoin>(horizon);
}

EnvSpec env_spec(const std::string& name, const nlohmann::json& overrides) {
  if (is_multiagent(name)) return make_multiagent_env(name, overrides)->agent_spec();
  return make_env(name, overrides)->spec();
}

std::vector<double> synthetic_image(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int side = static_cast<int>(GridWorld::kImageSide);
  std::vector<double> img(static_cast<std::size_t>(side * side), 32.0);
  std::uniform_int_distribution<int> pos(0, side - 20);
  std::uniform_int_distribution<int> extent(10, 30);
  std::uniform_int_distribution<int> shade(0, 255);
  for (int rect = 0; rect < 4; ++rect) {
    const int x0 = pos(rng), y0 = pos(rng), w = extent(rng), h = extent(rng);
    const double v = shade(rng);
    for (int y = y0; y < std::min(side, y0 + h); ++y)
      for (int x = x0; x < std::min(side, x0 + w); ++x) img[static_cast<std::size_t>(y * side + x)] = v;
  }
  return img;
}

}  // namespace rldist::envs
