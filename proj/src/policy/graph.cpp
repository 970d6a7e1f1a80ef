#include "rldist/policy/graph.hpp"

#include <algorithm>
#include <cmath>
#include <set>


namespace rldist::policy {

// --- config ------------------------------------------------------------------

namespace {

const std::set<std::string> kGraphKeys = {
    "hidden",   "gamma",       "lambda",    "optimizer", "lr",              "normalize_advantages",
    "clip",     "vf_coeff",    "entropy_coeff", "n_step", "huber_delta", "eps_start",
    "eps_end",  "eps_decay_steps", "shared_reward", "seed"};

bool is_number(const nlohmann::json& v) { return v.is_number(); }

}  // namespace

std::vector<std::string> validate_graph_config(const nlohmann::json& j) {
  std::vector<std::string> out;
  if (j.is_null()) return out;
  if (!j.is_object()) return {"graph: must be an object"};
  for (const auto& [key, v] : j.items()) {
    if (!kGraphKeys.count(key)) out.push_back(key + ": unknown key");
  }
  auto num_in = [&](const char* key, double lo, double hi, bool lo_open) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!is_number(v)) {
      out.push_back(std::string(key) + ": must be a number");
      return;
    }
    const double x = v.get<double>();
    const bool ok = (lo_open ? x > lo : x >= lo) && x <= hi && std::isfinite(x);
    if (!ok) {
      out.push_back(std::string(key) + ": must be in " + (lo_open ? "(" : "[") + std::to_string(lo) + ", " +
                    std::to_string(hi) + "]");
    }
  };
  auto boolean = [&](const char* key) {
    if (j.contains(key) && !j.at(key).is_boolean()) out.push_back(std::string(key) + ": must be true or false");
  };
  auto integer_min = [&](const char* key, std::int64_t lo) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_number_integer() || v.get<std::int64_t>() < lo) {
      out.push_back(std::string(key) + ": must be an integer >= " + std::to_string(lo));
    }
  };
  const double inf = INFINITY;
  num_in("gamma", 0.0, 1.0, true);
  num_in("lambda", 0.0, 1.0, false);
  num_in("lr", 0.0, inf, true);
  num_in("clip", 0.0, inf, true);
  num_in("vf_coeff", 0.0, inf, false);
  num_in("entropy_coeff", 0.0, inf, false);
  num_in("huber_delta", 0.0, inf, true);
  num_in("eps_start", 0.0, 1.0, false);
  num_in("eps_end", 0.0, 1.0, false);
  integer_min("n_step", 1);
  integer_min("eps_decay_steps", 0);
  integer_min("seed", 0);
  boolean("normalize_advantages");
  boolean("shared_reward");
  if (j.contains("optimizer")) {
    const auto& v = j.at("optimizer");
    if (!v.is_string() || (v.get<std::string>() != "adam" && v.get<std::string>() != "sgd")) {
      out.push_back("optimizer: must be \"adam\" or \"sgd\"");
    }
  }
  if (j.contains("hidden")) {
    const auto& v = j.at("hidden");
    bool ok = v.is_array();
    if (ok) {
      for (const auto& h : v) ok = ok && h.is_number_integer() && h.get<std::int64_t>() >= 1;
    }
    if (!ok) out.push_back("hidden: must be a list of positive integers");
  }
  return out;
}

GraphConfig parse_graph_config(const nlohmann::json& j) {
  const auto violations = validate_graph_config(j);
  if (!violations.empty()) throw ConfigError("graph." + violations.front());
  GraphConfig c;
  if (j.is_null()) return c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("hidden", c.hidden);
  get("gamma", c.gamma);
  get("lambda", c.lambda);
  get("optimizer", c.optimizer);
  get("lr", c.lr);
  get("normalize_advantages", c.normalize_advantages);
  get("clip", c.clip);
  get("vf_coeff", c.vf_coeff);
  get("entropy_coeff", c.entropy_coeff);
  get("n_step", c.n_step);
  get("huber_delta", c.huber_delta);
  get("eps_start", c.exploration.eps_start);
  get("eps_end", c.exploration.eps_end);
  get("eps_decay_steps", c.exploration.decay_steps);
  get("shared_reward", c.shared_reward);
  get("seed", c.seed);
  return c;
}

nlohmann::json to_json(const GraphConfig& c) {
  return {{"hidden", c.hidden},
          {"gamma", c.gamma},
          {"lambda", c.lambda},
          {"optimizer", c.optimizer},
          {"lr", c.lr},
          {"normalize_advantages", c.normalize_advantages},
          {"clip", c.clip},
          {"vf_coeff", c.vf_coeff},
          {"entropy_coeff", c.entropy_coeff},
          {"n_step", c.n_step},
          {"huber_delta", c.huber_delta},
          {"eps_start", c.exploration.eps_start},
          {"eps_end", c.exploration.eps_end},
          {"eps_decay_steps", c.exploration.decay_steps},
          {"shared_reward", c.shared_reward},
          {"seed", c.seed}};
}

// --- helpers -------------------------------------------------------------------

std::size_t sample_categorical(std::span<const double> logp, std::mt19937_64& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double cum = 0.0;
  for (std::size_t j = 0; j < logp.size(); ++j) {
    cum += std::exp(logp[j]);
    if (u < cum) return j;
  }
  return logp.size() - 1;
}

std::size_t argmax_lowest(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < values.size(); ++j) {
    if (values[j] > values[best]) best = j;
  }
  return best;
}

namespace {

std::vector<std::size_t> net_dims(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  std::vector<std::size_t> dims{in};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out);
  return dims;
}

std::mt19937_64& row_rng(std::span<std::mt19937_64> rngs, std::size_t row) {
  return rngs.size() == 1 ? rngs[0] : rngs[row];
}

void check_act_inputs(const envs::EnvSpec& spec, const tensor::Matrix& obs, std::span<std::mt19937_64> rngs) {
  if (obs.cols != spec.obs_dim) throw ShapeMismatch("obs width does not match the environment");
  if (rngs.empty() || (rngs.size() != 1 && rngs.size() != obs.rows)) {
    throw ShapeMismatch("act needs one generator or one per row");
  }
}

void check_peers(const SampleBatch& batch, std::span<const SampleBatch> peers) {
  for (const auto& p : peers) {
    if (p.rows() != batch.rows()) throw MisalignedEpisodes("peer batch has a different row count");
  }
}

// Rewards, optionally summed with each peer's rewards row by row.
std::vector<double> own_or_shared_rewards(const SampleBatch& batch, std::span<const SampleBatch> peers,
                                          bool shared) {
  std::vector<double> r = batch.f64(col::kRewards);
  if (!shared) return r;
  check_peers(batch, peers);
  for (const auto& p : peers) {
    const auto& pr = p.f64(col::kRewards);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] += pr[i];
  }
  return r;
}

}  // namespace

// --- base ----------------------------------------------------------------------

PolicyGraph::PolicyGraph(envs::EnvSpec spec, GraphConfig cfg)
    : spec_(std::move(spec)), cfg_(std::move(cfg)), rng_(cfg_.seed) {
  if (!spec_.discrete()) throw ConfigError("reference policy graphs need a discrete action space");
}

ActOutput PolicyGraph::act(const tensor::Matrix& obs, bool explore) {
  return act(obs, std::span<std::mt19937_64>(&rng_, 1), explore);
}

void PolicyGraph::apply_gradients(std::span<const double> grads) {
  std::vector<double> w = get_weights();
  if (grads.size() != w.size()) throw ShapeMismatch("gradient length does not match weights");
  if (cfg_.optimizer == "sgd") {
    tensor::sgd_update(w, grads, cfg_.lr);
  } else {
    if (adam_.m.size() != w.size()) adam_ = tensor::AdamState::zeros(w.size());
    tensor::AdamConfig ac;
    ac.stepsize = cfg_.lr;
    tensor::adam_update(w, grads, adam_, ac);
  }
  set_weights(w);
}

UtilityResult PolicyGraph::call_utility(const std::string& name) {
  throw ConfigError("graph '" + kind() + "' has no utility '" + name + "'");
}

// --- PG ------------------------------------------------------------------------

PgGraph::PgGraph(envs::EnvSpec spec, GraphConfig cfg) : PolicyGraph(std::move(spec), std::move(cfg)) {
  const auto dims = net_dims(spec_.obs_dim, cfg_.hidden, static_cast<std::size_t>(spec_.num_actions()));
  policy_ = tensor::init_mlp(dims, cfg_.seed);
}

ActOutput PgGraph::act(const tensor::Matrix& obs, std::span<std::mt19937_64> rngs, bool explore) {
  check_act_inputs(spec_, obs, rngs);
  const tensor::Matrix logp = tensor::log_softmax_rows(tensor::mlp_predict(policy_, obs));
  ActOutput out;
  out.actions.resize(obs.rows);
  auto& lp = out.aux[col::kLogp];
  lp.resize(obs.rows);
  for (std::size_t i = 0; i < obs.rows; ++i) {
    const std::size_t a = explore ? sample_categorical(logp.row(i), row_rng(rngs, i)) : argmax_lowest(logp.row(i));
    out.actions[i] = static_cast<double>(a);
    lp[i] = logp(i, a);
  }
  out.h_next = tensor::Matrix(obs.rows, 0);
  return out;
}

SampleBatch PgGraph::postprocess(const SampleBatch& batch, std::span<const SampleBatch> peers) const {
  SampleBatch out = batch;
  if (batch.empty()) return out;
  const auto rewards = own_or_shared_rewards(batch, peers, cfg_.shared_reward);
  const auto& dones = batch.f64(col::kDones);
  std::vector<double> returns(batch.rows());
  const AdvantageConfig ac{cfg_.gamma, 1.0};
  for (const auto& [b, e] : episode_segments(batch)) {
    const std::vector<double> zeros(e - b, 0.0);
    const auto g = compute_gae(std::span(rewards).subspan(b, e - b), zeros, std::span(dones).subspan(b, e - b),
                               0.0, ac);
    std::copy(g.advantages.begin(), g.advantages.end(), returns.begin() + static_cast<std::ptrdiff_t>(b));
  }
  std::vector<double> adv = returns;
  if (cfg_.normalize_advantages) standardize(adv);
  if (cfg_.shared_reward) out.set_f64(col::kRewards, 1, rewards);
  out.set_f64(col::kValueTargets, 1, std::move(returns));
  out.set_f64(col::kAdvantages, 1, std::move(adv));
  return out;
}

GradOutput PgGraph::compute_gradients(const SampleBatch& batch) const {
  const PgLoss l = pg_loss(policy_, batch);
  return {l.grads.flatten(), {{"loss", l.loss}}, {}};
}

void PgGraph::set_weights(std::span<const double> weights) {
  if (weights.size() != policy_.parameter_count()) throw ShapeMismatch("weight vector has the wrong length");
  policy_.assign_flat(weights);
}

// --- PPO -----------------------------------------------------------------------

PpoGraph::PpoGraph(envs::EnvSpec spec, GraphConfig cfg) : PolicyGraph(std::move(spec), std::move(cfg)) {
  policy_ = tensor::init_mlp(net_dims(spec_.obs_dim, cfg_.hidden, static_cast<std::size_t>(spec_.num_actions())),
                             cfg_.seed);
  value_ = tensor::init_mlp(net_dims(spec_.obs_dim, cfg_.hidden, 1), cfg_.seed + 1);
}

ActOutput PpoGraph::act(const tensor::Matrix& obs, std::span<std::mt19937_64> rngs, bool explore) {
  check_act_inputs(spec_, obs, rngs);
  const tensor::Matrix logp = tensor::log_softmax_rows(tensor::mlp_predict(policy_, obs));
  const tensor::Matrix v = tensor::mlp_predict(value_, obs);
  ActOutput out;
  out.actions.resize(obs.rows);
  auto& lp = out.aux[col::kLogp];
  lp.resize(obs.rows);
  out.aux[col::kVfPreds] = v.data;
  for (std::size_t i = 0; i < obs.rows; ++i) {
    const std::size_t a = explore ? sample_categorical(logp.row(i), row_rng(rngs, i)) : argmax_lowest(logp.row(i));
    out.actions[i] = static_cast<double>(a);
    lp[i] = logp(i, a);
  }
  out.h_next = tensor::Matrix(obs.rows, 0);
  return out;
}

SampleBatch PpoGraph::postprocess(const SampleBatch& batch, std::span<const SampleBatch> peers) const {
  SampleBatch out = batch;
  if (batch.empty()) return out;
  const auto rewards = own_or_shared_rewards(batch, peers, cfg_.shared_reward);
  const auto& dones = batch.f64(col::kDones);
  const auto& vpred = batch.f64(col::kVfPreds);
  const auto& new_obs = batch.f64(col::kNewObs);
  const std::size_t w = batch.width(col::kNewObs);
  const auto segs = episode_segments(batch);

  // Bootstrap values for segments cut before a terminal, in one pass.
  std::vector<std::size_t> open;
  std::vector<double> boot_obs;
  for (std::size_t s = 0; s < segs.size(); ++s) {
    const std::size_t last = segs[s].second - 1;
    if (dones[last] == 0.0) {
      open.push_back(s);
      boot_obs.insert(boot_obs.end(), new_obs.begin() + static_cast<std::ptrdiff_t>(last * w),
                      new_obs.begin() + static_cast<std::ptrdiff_t>((last + 1) * w));
    }
  }
  std::vector<double> boot(segs.size(), 0.0);
  if (!open.empty()) {
    const auto v = tensor::mlp_predict(value_, tensor::Matrix(open.size(), w, std::move(boot_obs)));
    for (std::size_t k = 0; k < open.size(); ++k) boot[open[k]] = v(k, 0);
  }

  std::vector<double> adv(batch.rows()), targets(batch.rows());
  const AdvantageConfig ac{cfg_.gamma, cfg_.lambda};
  for (std::size_t s = 0; s < segs.size(); ++s) {
    const auto [b, e] = segs[s];
    const auto g = compute_gae(std::span(rewards).subspan(b, e - b), std::span(vpred).subspan(b, e - b),
                               std::span(dones).subspan(b, e - b), boot[s], ac);
    std::copy(g.advantages.begin(), g.advantages.end(), adv.begin() + static_cast<std::ptrdiff_t>(b));
    std::copy(g.value_targets.begin(), g.value_targets.end(), targets.begin() + static_cast<std::ptrdiff_t>(b));
  }
  if (cfg_.normalize_advantages) standardize(adv);
  if (cfg_.shared_reward) out.set_f64(col::kRewards, 1, rewards);
  out.set_f64(col::kAdvantages, 1, std::move(adv));
  out.set_f64(col::kValueTargets, 1, std::move(targets));
  return out;
}

GradOutput PpoGraph::compute_gradients(const SampleBatch& batch) const {
  const PpoLoss l =
      ppo_clip_loss(policy_, value_, batch, PpoLossConfig{cfg_.clip, cfg_.vf_coeff, cfg_.entropy_coeff});
  GradOutput out;
  out.grads = l.policy_grads.flatten();
  l.value_grads.append_flat(out.grads);
  out.stats = {{"loss", l.loss},
               {"surrogate", l.surrogate},
               {"vf_loss", l.vf_loss},
               {"entropy", l.entropy},
               {"kl", l.mean_kl}};
  return out;
}

std::vector<double> PpoGraph::get_weights() const {
  std::vector<double> w = policy_.flatten();
  value_.append_flat(w);
  return w;
}

void PpoGraph::set_weights(std::span<const double> weights) {
  if (weights.size() != policy_.parameter_count() + value_.parameter_count()) {
    throw ShapeMismatch("weight vector has the wrong length");
  }
  value_.assign_flat(policy_.assign_flat(weights));
}

// --- DQN -----------------------------------------------------------------------

DqnGraph::DqnGraph(envs::EnvSpec spec, GraphConfig cfg) : PolicyGraph(std::move(spec), std::move(cfg)) {
  q_ = tensor::init_mlp(net_dims(spec_.obs_dim, cfg_.hidden, static_cast<std::size_t>(spec_.num_actions())),
                        cfg_.seed);
  q_target_ = q_;
}

double DqnGraph::epsilon() const {
  return eps_override_ ? *eps_override_ : epsilon_at(cfg_.exploration, timestep_);
}

ActOutput DqnGraph::act(const tensor::Matrix& obs, std::span<std::mt19937_64> rngs, bool explore) {
  check_act_inputs(spec_, obs, rngs);
  const tensor::Matrix q = tensor::mlp_predict(q_, obs);
  const double eps = explore ? epsilon() : 0.0;
  const int n = spec_.num_actions();
  ActOutput out;
  out.actions.resize(obs.rows);
  for (std::size_t i = 0; i < obs.rows; ++i) {
    std::size_t a = argmax_lowest(q.row(i));
    if (explore) {
      auto& rng = row_rng(rngs, i);
      if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < eps) {
        a = static_cast<std::size_t>(std::uniform_int_distribution<int>(0, n - 1)(rng));
      }
    }
    out.actions[i] = static_cast<double>(a);
  }
  out.h_next = tensor::Matrix(obs.rows, 0);
  return out;
}

SampleBatch DqnGraph::postprocess(const SampleBatch& batch, std::span<const SampleBatch> peers) const {
  if (!cfg_.shared_reward) return n_step_transform(batch, cfg_.n_step, cfg_.gamma);
  SampleBatch shared = batch;
  shared.set_f64(col::kRewards, 1, own_or_shared_rewards(batch, peers, true));
  return n_step_transform(shared, cfg_.n_step, cfg_.gamma);
}

GradOutput DqnGraph::compute_gradients(const SampleBatch& batch) const {
  const auto targets = dqn_targets(q_target_, batch);
  DqnLoss l = dqn_loss(q_, batch, targets, cfg_.huber_delta);
  double abs_td = 0.0;
  for (double td : l.td_errors) abs_td += std::abs(td);
  const double mean_td = l.td_errors.empty() ? 0.0 : abs_td / static_cast<double>(l.td_errors.size());
  return {l.grads.flatten(), {{"loss", l.loss}, {"mean_abs_td", mean_td}}, std::move(l.td_errors)};
}

void DqnGraph::set_weights(std::span<const double> weights) {
  if (weights.size() != q_.parameter_count()) throw ShapeMismatch("weight vector has the wrong length");
  q_.assign_flat(weights);
}

void DqnGraph::target_sync() {
  q_target_ = q_;
  ++target_syncs_;
}

UtilityResult DqnGraph::call_utility(const std::string& name) {
  if (name == "target_sync") {
    target_sync();
    return {UtilityResult::Kind::weights, {}};
  }
  if (name == "exploration") return {UtilityResult::Kind::stats, {{"epsilon", epsilon()}}};
  return PolicyGraph::call_utility(name);
}

// --- factory -------------------------------------------------------------------

bool is_known_graph(const std::string& kind) { return kind == "pg" || kind == "ppo" || kind == "dqn"; }

std::unique_ptr<PolicyGraph> make_graph(const std::string& kind, const envs::EnvSpec& spec, const GraphConfig& cfg) {
  if (kind == "pg") return std::make_unique<PgGraph>(spec, cfg);
  if (kind == "ppo") return std::make_unique<PpoGraph>(spec, cfg);
  if (kind == "dqn") return std::make_unique<DqnGraph>(spec, cfg);
  throw ConfigError("unknown policy graph '" + kind + "'");
}

}  // namespace rldist::policy
