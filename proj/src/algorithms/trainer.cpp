#include "rldist/algorithms/trainer.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "rldist/algorithms/es.hpp"
#include "rldist/algorithms/ppo_es.hpp"
#include "rldist/common/error.hpp"
#include "rldist/common/seeds.hpp"

namespace rldist::algorithms {

namespace {

constexpr std::size_t kRewardWindow = 100;

double mean_or_nan(const std::deque<double>& xs) {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

nlohmann::json number_or_null(double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); }

}  // namespace

nlohmann::json to_json(const IterationResult& r) {
  return {{"iter", r.iteration},
          {"timesteps_total", r.timesteps_total},
          {"episodes_total", r.episodes_total},
          {"episodes_this_iter", r.episodes_this_iter},
          {"episode_reward_mean", number_or_null(r.episode_reward_mean)},
          {"episode_len_mean", number_or_null(r.episode_len_mean)},
          {"wall_time", r.wall_time},
          {"optimizer", optimizers::to_json(r.optimizer)},
          {"info", r.info}};
}

nlohmann::json strip_wall_time(const nlohmann::json& record) {
  if (record.is_object()) {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& [k, v] : record.items()) {
      if (k.find("wall_time") == std::string::npos) out[k] = strip_wall_time(v);
    }
    return out;
  }
  if (record.is_array()) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& v : record) out.push_back(strip_wall_time(v));
    return out;
  }
  return record;
}

// --- Trainer -------------------------------------------------------------------

Trainer::Trainer(taskrt::Runtime& rt, TrainerConfig cfg) : rt_(rt), cfg_(std::move(cfg)) {}

IterationResult Trainer::train() {
  const auto t0 = std::chrono::steady_clock::now();
  StepOutput out = step();
  ++iteration_;
  timesteps_ += static_cast<std::int64_t>(out.timesteps);
  episodes_ += static_cast<std::int64_t>(out.episodes.returns.size());
  for (double r : out.episodes.returns) {
    returns_.push_back(r);
    if (returns_.size() > kRewardWindow) returns_.pop_front();
  }
  for (auto l : out.episodes.lengths) {
    lengths_.push_back(static_cast<double>(l));
    if (lengths_.size() > kRewardWindow) lengths_.pop_front();
  }
  IterationResult r;
  r.iteration = iteration_;
  r.episode_reward_mean = mean_or_nan(returns_);
  r.episode_len_mean = mean_or_nan(lengths_);
  r.episodes_this_iter = static_cast<std::int64_t>(out.episodes.returns.size());
  r.episodes_total = episodes_;
  r.timesteps_total = timesteps_;
  r.optimizer = std::move(out.stats);
  r.info = std::move(out.info);
  r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

TrainerCheckpoint Trainer::checkpoint() {
  TrainerCheckpoint c;
  c.config = to_json(cfg_).dump();
  c.iteration = iteration_;
  c.timesteps_total = timesteps_;
  c.episodes_total = episodes_;
  c.weights = get_weights();
  return c;
}

void Trainer::restore(const TrainerCheckpoint& ckpt) {
  if (nlohmann::json::parse(ckpt.config) != to_json(cfg_)) {
    throw ConfigError("checkpoint was written by a trainer with a different config");
  }
  set_weights(ckpt.weights);
  iteration_ = ckpt.iteration;
  timesteps_ = ckpt.timesteps_total;
  episodes_ = ckpt.episodes_total;
  returns_.clear();
  lengths_.clear();
}

void Trainer::save(const std::string& path) { taskrt::write_file(path, taskrt::encode_framed(checkpoint())); }

void Trainer::load(const std::string& path) {
  restore(taskrt::decode_framed<TrainerCheckpoint>(taskrt::read_file(path)));
}

// --- GraphTrainer ----------------------------------------------------------------

evaluation::EvaluatorConfig evaluator_config(const TrainerConfig& cfg, std::size_t index) {
  evaluation::EvaluatorConfig e;
  e.env = cfg.env;
  e.env_config = cfg.env_config;
  e.graph = cfg.graph_kind();
  e.graph_config = cfg.graph_config();
  e.batch_size = cfg.batch_size;
  e.mode = cfg.batch_mode;
  e.num_envs = cfg.num_envs;
  e.seed = derive_seed(cfg.seed, index + 1);
  e.worker_index = static_cast<std::int64_t>(index);
  if (cfg.algorithm == "apex") e.epsilon = optimizers::apex_epsilon(index, cfg.num_evaluators);
  return e;
}

GraphTrainer::GraphTrainer(taskrt::Runtime& rt, TrainerConfig cfg) : Trainer(rt, std::move(cfg)) {
  const envs::EnvSpec spec = envs::is_multiagent(cfg_.env)
                                 ? envs::make_multiagent_env(cfg_.env, cfg_.env_config)->agent_spec()
                                 : envs::env_spec(cfg_.env, cfg_.env_config);
  local_ = policy::make_graph(cfg_.graph_kind(), spec, cfg_.graph_config());
  for (std::size_t i = 0; i < cfg_.num_evaluators; ++i) {
    evaluators_.push_back(rt_.spawn<evaluation::PolicyEvaluator>(taskrt::ResourceClaim{}, evaluator_config(cfg_, i)));
  }
  optimizer_ = optimizers::make_optimizer(cfg_.optimizer, cfg_.optimizer_params, rt_, *local_, evaluators_);
}

GraphTrainer::~GraphTrainer() {
  optimizer_.reset();
  for (const auto& e : evaluators_) rt_.terminate(e);
}

void GraphTrainer::set_weights(const std::vector<double>& weights) {
  local_->set_weights(weights);
  optimizer_->broadcast_weights();
}

std::vector<double> GraphTrainer::evaluate(int episodes, std::uint64_t seed) {
  return evaluation::rollout_returns(*local_, cfg_.env, cfg_.env_config, episodes, seed, false);
}

Trainer::StepOutput GraphTrainer::step() {
  StepOutput out;
  out.stats = optimizer_->step();
  out.timesteps = out.stats.samples_collected;
  local_->set_global_timestep(static_cast<std::int64_t>(optimizer_->totals().samples_collected));

  const std::int64_t iter = iteration() + 1;
  if (auto* dqn = dynamic_cast<policy::DqnGraph*>(local_.get())) {
    if (iter % cfg_.target_interval == 0) {
      optimizer_->foreach_policy([](policy::PolicyGraph& g) { g.call_utility("target_sync"); });
    }
    out.info["target_syncs"] = dqn->target_sync_count();
    out.info["epsilon"] = dqn->epsilon();
  }
  out.info["weights_version"] = optimizer_->weights_version();

  std::vector<taskrt::Future<evaluation::EpisodeStats>> stats;
  for (const auto& e : evaluators_) {
    stats.push_back(rt_.invoke(e, "pop_episode_stats", [](evaluation::PolicyEvaluator& ev) {
      return ev.pop_episode_stats();
    }));
  }
  for (const auto& f : stats) {
    const auto& s = f.get();
    out.episodes.returns.insert(out.episodes.returns.end(), s.returns.begin(), s.returns.end());
    out.episodes.lengths.insert(out.episodes.lengths.end(), s.lengths.begin(), s.lengths.end());
  }
  return out;
}

// --- construction ------------------------------------------------------------------

std::unique_ptr<Trainer> make_trainer(taskrt::Runtime& rt, const TrainerConfig& cfg) {
  if (cfg.algorithm == "es") return std::make_unique<EsTrainer>(rt, cfg);
  if (cfg.algorithm == "ppo_es") return std::make_unique<PpoEsTrainer>(rt, cfg);
  const auto names = algorithm_names();
  if (std::find(names.begin(), names.end(), cfg.algorithm) == names.end()) {
    throw ConfigError("algorithm: unknown algorithm '" + cfg.algorithm + "'");
  }
  return std::make_unique<GraphTrainer>(rt, cfg);
}

TrainerActor::TrainerActor(taskrt::ActorContext& ctx, TrainerConfig cfg)
    : rt_(ctx.runtime), trainer_(make_trainer(ctx.runtime, cfg)) {}

std::vector<IterationResult> TrainerActor::train(int iterations) {
  std::vector<IterationResult> out;
  for (int i = 0; i < iterations; ++i) out.push_back(trainer_->train());
  return out;
}

void TrainerActor::rebuild(const TrainerConfig& cfg, const std::vector<double>& weights) {
  trainer_.reset();
  trainer_ = make_trainer(rt_, cfg);
  trainer_->set_weights(weights);
}

}  // namespace rldist::algorithms
