#include "rldist/evaluation/evaluator.hpp"

#include <algorithm>

namespace rldist::evaluation {

BatchMode parse_batch_mode(const std::string& s) {
  if (s == "truncate_episodes") return BatchMode::truncate_episodes;
  if (s == "complete_episodes") return BatchMode::complete_episodes;
  throw ConfigError("batch_mode: unknown mode '" + s + "'");
}

std::string to_string(BatchMode m) {
  return m == BatchMode::truncate_episodes ? "truncate_episodes" : "complete_episodes";
}

// --- multi-agent ---------------------------------------------------------------

std::map<std::int64_t, AgentBatch> collate_multiagent(const std::map<std::int64_t, SampleBatch>& per_agent) {
  std::map<std::int64_t, AgentBatch> out;
  if (per_agent.empty()) return out;
  const SampleBatch& ref = per_agent.begin()->second;
  for (const auto& [id, b] : per_agent) {
    if (b.rows() != ref.rows()) throw MisalignedEpisodes("agent " + std::to_string(id) + " has a different row count");
    if (b.has(col::kTIndex) && ref.has(col::kTIndex) && b.i64(col::kTIndex) != ref.i64(col::kTIndex)) {
      throw MisalignedEpisodes("agent " + std::to_string(id) + " is not time-aligned");
    }
    if (b.has(col::kEpsId) && ref.has(col::kEpsId) && episode_starts(b) != episode_starts(ref)) {
      throw MisalignedEpisodes("agent " + std::to_string(id) + " has different episode boundaries");
    }
  }
  for (const auto& [id, b] : per_agent) {
    AgentBatch ab{b, {}};
    for (const auto& [other, ob] : per_agent) {
      if (other != id) ab.peers.push_back(ob);
    }
    out.emplace(id, std::move(ab));
  }
  return out;
}

SampleBatch shared_reward_postprocess(const AgentBatch& agent) {
  SampleBatch out = agent.own;
  std::vector<double> r = agent.own.f64(col::kRewards);
  for (const auto& p : agent.peers) {
    if (p.rows() != agent.own.rows()) throw MisalignedEpisodes("peer batch has a different row count");
    const auto& pr = p.f64(col::kRewards);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] += pr[i];
  }
  out.set_f64(col::kRewards, 1, std::move(r));
  return out;
}

// --- evaluator -----------------------------------------------------------------

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

void PolicyEvaluator::Segment::clear() { *this = Segment{}; }

PolicyEvaluator::PolicyEvaluator(taskrt::ActorContext& ctx, EvaluatorConfig cfg) : PolicyEvaluator(std::move(cfg)) {
  runtime_ = &ctx.runtime;
}

PolicyEvaluator::PolicyEvaluator(EvaluatorConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.batch_size < 1) throw ConfigError("batch_size: must be >= 1");
  if (cfg_.num_envs < 1) throw ConfigError("num_envs: must be >= 1");
  if (!cfg_.env_seeds.empty() && cfg_.env_seeds.size() != cfg_.num_envs) {
    throw ConfigError("env_seeds: need one seed per environment");
  }
  const bool multi = envs::is_multiagent(cfg_.env);
  spec_ = envs::env_spec(cfg_.env, cfg_.env_config);
  graph_ = policy::make_graph(cfg_.graph, spec_, cfg_.graph_config);
  if (cfg_.epsilon) {
    if (auto* dqn = dynamic_cast<policy::DqnGraph*>(graph_.get())) dqn->set_epsilon_override(cfg_.epsilon);
  }
  slots_.resize(cfg_.num_envs);
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    Slot& s = slots_[i];
    s.seed = cfg_.env_seeds.empty() ? cfg_.seed + i : cfg_.env_seeds[i];
    if (multi) {
      s.multi = envs::make_multiagent_env(cfg_.env, cfg_.env_config);
      num_agents_ = s.multi->num_agents();
    } else {
      s.env = envs::make_env(cfg_.env, cfg_.env_config);
    }
  }
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    for (std::size_t a = 0; a < num_agents_; ++a) {
      rngs_.emplace_back(splitmix(slots_[i].seed * 131 + a));
    }
    reset_slot(i);
  }
}

std::optional<double> PolicyEvaluator::epsilon() const {
  if (auto* dqn = dynamic_cast<const policy::DqnGraph*>(graph_.get())) return dqn->epsilon();
  return std::nullopt;
}

void PolicyEvaluator::reset_slot(std::size_t index) {
  Slot& s = slots_[index];
  const std::uint64_t reset_seed = splitmix(s.seed ^ (static_cast<std::uint64_t>(s.episodes_started) << 32));
  if (s.multi) {
    s.obs = s.multi->reset(reset_seed);
  } else {
    s.obs = {s.env->reset(reset_seed)};
  }
  s.eps_id = (cfg_.worker_index << 40) + static_cast<std::int64_t>(index << 28) + (s.episodes_started << 4);
  ++s.episodes_started;
  s.t = 0;
  s.episode_return = 0.0;
  s.segments.assign(num_agents_, Segment{});
}

std::vector<std::pair<std::size_t, std::vector<PolicyEvaluator::Segment>>> PolicyEvaluator::step_slots(
    std::size_t active) {
  const std::size_t rows = active * num_agents_;
  tensor::Matrix obs(rows, spec_.obs_dim);
  for (std::size_t s = 0; s < active; ++s) {
    for (std::size_t a = 0; a < num_agents_; ++a) {
      std::copy(slots_[s].obs[a].begin(), slots_[s].obs[a].end(), obs.row(s * num_agents_ + a).begin());
    }
  }
  const policy::ActOutput out = graph_->act(obs, std::span(rngs_.data(), rows), true);
  ++forward_passes_;
  const std::size_t adim = spec_.action_dim();

  std::vector<std::pair<std::size_t, std::vector<Segment>>> finished;
  for (std::size_t s = 0; s < active; ++s) {
    Slot& slot = slots_[s];
    std::vector<envs::StepResult> results;
    if (slot.multi) {
      std::vector<int> acts(num_agents_);
      for (std::size_t a = 0; a < num_agents_; ++a) acts[a] = static_cast<int>(out.actions[s * num_agents_ + a]);
      results = slot.multi->step(acts);
    } else {
      results.push_back(slot.env->step(std::span(out.actions).subspan(s * adim, adim)));
    }
    bool done = false;
    double reward_sum = 0.0;
    for (std::size_t a = 0; a < num_agents_; ++a) {
      const std::size_t row = s * num_agents_ + a;
      const auto& r = results[a];
      Segment& seg = slot.segments[a];
      seg.obs.insert(seg.obs.end(), slot.obs[a].begin(), slot.obs[a].end());
      seg.actions.insert(seg.actions.end(), out.actions.begin() + static_cast<std::ptrdiff_t>(row * adim),
                         out.actions.begin() + static_cast<std::ptrdiff_t>((row + 1) * adim));
      seg.rewards.push_back(r.reward);
      seg.dones.push_back(r.done ? 1.0 : 0.0);
      seg.new_obs.insert(seg.new_obs.end(), r.obs.begin(), r.obs.end());
      seg.eps_id.push_back(slot.eps_id + static_cast<std::int64_t>(a));
      seg.t_index.push_back(slot.t);
      seg.agent_id.push_back(static_cast<std::int64_t>(a));
      for (const auto& [name, values] : out.aux) seg.aux[name].push_back(values[row]);
      ++seg.rows;
      slot.obs[a] = r.obs;
      reward_sum += r.reward;
      done = done || r.done;
    }
    slot.episode_return += reward_sum / static_cast<double>(num_agents_);
    ++slot.t;
    ++steps_sampled_;
    if (done) {
      stats_.returns.push_back(slot.episode_return);
      stats_.lengths.push_back(slot.t);
      finished.emplace_back(s, std::move(slot.segments));
      reset_slot(s);
    }
  }
  return finished;
}

SampleBatch PolicyEvaluator::segment_batch(const Segment& s) const {
  SampleBatch b;
  if (s.rows == 0) return b;
  b.set_f64(col::kObs, spec_.obs_dim, s.obs);
  if (spec_.discrete()) {
    std::vector<std::int64_t> a(s.actions.size());
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = static_cast<std::int64_t>(s.actions[i]);
    b.set_i64(col::kActions, 1, std::move(a));
  } else {
    b.set_f64(col::kActions, spec_.action_dim(), s.actions);
  }
  b.set_f64(col::kRewards, 1, s.rewards);
  b.set_f64(col::kDones, 1, s.dones);
  b.set_f64(col::kNewObs, spec_.obs_dim, s.new_obs);
  b.set_i64(col::kEpsId, 1, s.eps_id);
  b.set_i64(col::kTIndex, 1, s.t_index);
  if (num_agents_ > 1) b.set_i64(col::kAgentId, 1, s.agent_id);
  for (const auto& name : graph_->aux_names()) b.set_f64(name, 1, s.aux.at(name));
  return b;
}

SampleBatch PolicyEvaluator::finish(const std::vector<std::vector<Segment>>& pieces) const {
  std::map<std::int64_t, SampleBatch> per_agent;
  for (std::size_t a = 0; a < num_agents_; ++a) {
    std::vector<SampleBatch> parts;
    for (const auto& piece : pieces) parts.push_back(segment_batch(piece[a]));
    per_agent[static_cast<std::int64_t>(a)] = concat_batches(parts);
  }
  if (num_agents_ == 1) return graph_->postprocess(per_agent[0], {});
  std::vector<SampleBatch> blocks;
  for (const auto& [id, ab] : collate_multiagent(per_agent)) blocks.push_back(graph_->postprocess(ab.own, ab.peers));
  return concat_batches(blocks);
}

SampleBatch PolicyEvaluator::sample() {
  const std::size_t k = cfg_.batch_size;
  const std::size_t e = slots_.size();
  std::vector<std::vector<Segment>> pieces;
  if (cfg_.mode == BatchMode::truncate_episodes) {
    std::vector<std::vector<std::vector<Segment>>> by_slot(e);
    const std::size_t passes = (k + e - 1) / e;
    for (std::size_t p = 0; p < passes; ++p) {
      const std::size_t active = p + 1 < passes ? e : k - e * (passes - 1);
      for (auto& [slot, segs] : step_slots(active)) by_slot[slot].push_back(std::move(segs));
    }
    for (std::size_t s = 0; s < e; ++s) {
      for (auto& segs : by_slot[s]) pieces.push_back(std::move(segs));
      if (slots_[s].segments[0].rows > 0) {
        pieces.push_back(slots_[s].segments);
        for (auto& seg : slots_[s].segments) seg.clear();
      }
    }
  } else {
    auto completed_rows = [&] {
      std::size_t n = 0;
      for (const auto& c : completed_) n += c[0].rows;
      return n;
    };
    while (completed_rows() < k) {
      for (auto& [slot, segs] : step_slots(e)) completed_.push_back(std::move(segs));
    }
    pieces = std::move(completed_);
    completed_.clear();
  }
  return finish(pieces);
}

taskrt::ObjectRef<SampleBatch> PolicyEvaluator::sample_to_store() {
  if (runtime_ == nullptr) throw ConfigError("evaluator is not running inside a runtime");
  return runtime_->put(sample());
}

GradientPacket PolicyEvaluator::compute_gradients(const SampleBatch& batch) const {
  policy::GradOutput g = graph_->compute_gradients(batch);
  return {std::move(g.grads), std::move(g.stats), batch.rows(), weights_version_};
}

GradientPacket PolicyEvaluator::sample_and_compute_gradients() { return compute_gradients(sample()); }

void PolicyEvaluator::set_weights(const std::vector<double>& weights, std::uint64_t version) {
  graph_->set_weights(weights);
  weights_version_ = version;
}

EpisodeStats PolicyEvaluator::pop_episode_stats() {
  EpisodeStats out = std::move(stats_);
  stats_ = {};
  return out;
}

std::vector<double> rollout_returns(policy::PolicyGraph& graph, const std::string& env_name,
                                    const nlohmann::json& env_config, int episodes, std::uint64_t seed,
                                    bool explore) {
  auto env = envs::make_env(env_name, env_config);
  std::vector<double> returns;
  std::mt19937_64 rng(seed);
  for (int ep = 0; ep < episodes; ++ep) {
    auto obs = env->reset(seed + static_cast<std::uint64_t>(ep));
    double total = 0.0;
    for (;;) {
      const auto out = graph.act(tensor::Matrix(1, obs.size(), obs), std::span(&rng, 1), explore);
      auto r = env->step(std::span<const double>(out.actions));
      total += r.reward;
      if (r.done) break;
      obs = std::move(r.obs);
    }
    returns.push_back(total);
  }
  return returns;
}

}  // namespace rldist::evaluation
