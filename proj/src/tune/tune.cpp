#include "rldist/tune/tune.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "rldist/common/error.hpp"

namespace rldist::tune {

namespace {

std::string trial_name(std::size_t i) {
  std::string digits = std::to_string(i);
  while (digits.size() < 3) digits.insert(digits.begin(), '0');
  return "trial_" + digits;
}

// Sort key treating NaN as the lowest score.
double rank_score(double s) { return std::isnan(s) ? -std::numeric_limits<double>::infinity() : s; }

const nlohmann::json* find_path(const nlohmann::json& j, const std::string& path) {
  const nlohmann::json* node = &j;
  std::size_t start = 0;
  for (;;) {
    const auto dot = path.find('.', start);
    const std::string part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) return nullptr;
    node = &node->at(part);
    if (dot == std::string::npos) return node;
    start = dot + 1;
  }
}

std::string csv_cell(const nlohmann::json& v) {
  std::string s = v.is_string() ? v.get<std::string>() : v.dump();
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string quoted = "\"";
  for (char c : s) {
    if (c == '"') quoted += '"';
    quoted += c;
  }
  return quoted + "\"";
}

algorithms::TrainerConfig trial_config(const nlohmann::json& base, const nlohmann::json& overrides) {
  return algorithms::parse_trainer_config(algorithms::apply_overrides(base, overrides));
}

}  // namespace

std::vector<TrialSpec> expand_grid(const nlohmann::json& grid) {
  if (!grid.is_object()) throw ConfigError("grid: must be an object of \"key.path\": [values]");
  std::vector<TrialSpec> out{TrialSpec{}};
  for (const auto& [key, values] : grid.items()) {
    if (!values.is_array() || values.empty()) throw ConfigError("grid." + key + ": must be a non-empty list");
    std::vector<TrialSpec> next;
    for (const auto& spec : out) {
      for (const auto& v : values) {
        TrialSpec s = spec;
        s.overrides[key] = v;
        next.push_back(std::move(s));
      }
    }
    out = std::move(next);
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i].trial_id = trial_name(i);
  return out;
}

std::vector<TrialResult> grid_search(taskrt::Runtime& rt, const nlohmann::json& base,
                                     const std::vector<TrialSpec>& specs, int iterations,
                                     const GridOptions& options) {
  if (specs.empty()) throw ConfigError("grid search needs at least one trial");
  std::vector<algorithms::TrainerConfig> configs;
  for (const auto& s : specs) configs.push_back(trial_config(base, s.overrides));

  std::vector<TrainerRef> trials;
  std::vector<taskrt::Future<std::vector<IterationResult>>> futures;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    trials.push_back(rt.spawn<algorithms::TrainerActor>(taskrt::ResourceClaim{}, configs[i]));
    if (options.on_spawn) options.on_spawn(specs[i], trials.back());
    futures.push_back(rt.invoke(trials.back(), "train",
                                [iterations](algorithms::TrainerActor& a) { return a.train(iterations); }));
  }

  std::vector<TrialResult> results;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    TrialResult r;
    r.trial_id = specs[i].trial_id;
    r.overrides = specs[i].overrides;
    try {
      r.history = futures[i].get();
      r.score = r.history.empty() ? std::numeric_limits<double>::quiet_NaN() : r.history.back().episode_reward_mean;
    } catch (const std::exception& e) {
      r.failed = true;
      r.error = TrialFailed(r.trial_id + ": " + e.what()).what();
      r.score = std::numeric_limits<double>::quiet_NaN();
    }
    results.push_back(std::move(r));
  }
  for (const auto& t : trials) rt.terminate(t);

  std::stable_sort(results.begin(), results.end(), [](const TrialResult& a, const TrialResult& b) {
    if (a.failed != b.failed) return !a.failed;
    if (!a.failed && rank_score(a.score) != rank_score(b.score)) return rank_score(a.score) > rank_score(b.score);
    return a.trial_id < b.trial_id;
  });
  return results;
}

std::string results_csv(const std::vector<TrialResult>& results) {
  std::set<std::string> keys;
  for (const auto& r : results) {
    for (const auto& [k, v] : r.overrides.items()) keys.insert(k);
  }
  std::ostringstream out;
  out << "trial_id,status,score";
  for (const auto& k : keys) out << ',' << csv_cell(k);
  out << '\n';
  for (const auto& r : results) {
    out << csv_cell(r.trial_id) << ',' << (r.failed ? "failed" : "ok") << ',';
    if (!std::isnan(r.score)) out << nlohmann::json(r.score).dump();
    for (const auto& k : keys) {
      out << ',';
      if (r.overrides.contains(k)) out << csv_cell(r.overrides.at(k));
    }
    out << '\n';
  }
  return out.str();
}

// --- population based training ----------------------------------------------------

PopulationState pbt_step(PopulationState state, const PbtConfig& cfg, std::mt19937_64& rng) {
  const std::size_t n = state.members.size();
  if (n < 4) throw ConfigError("population based training needs at least 4 members");
  if (!(cfg.exploit_fraction > 0.0 && cfg.exploit_fraction <= 0.5)) {
    throw ConfigError("exploit_fraction must be in (0, 0.5]");
  }
  if (cfg.perturb_factors.empty()) throw ConfigError("perturb_factors must not be empty");
  const std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.exploit_fraction * n));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return rank_score(state.members[a].score) > rank_score(state.members[b].score);
  });

  const std::vector<PbtMember> before = state.members;
  std::uniform_int_distribution<std::size_t> pick_top(0, k - 1);
  std::uniform_int_distribution<std::size_t> pick_factor(0, cfg.perturb_factors.size() - 1);
  for (std::size_t b = n - k; b < n; ++b) {
    const std::size_t target = order[b];
    const std::size_t source = order[pick_top(rng)];
    ExploitRecord rec;
    rec.generation = state.generation;
    rec.target = target;
    rec.source = source;
    rec.source_hyperparams = before[source].hyperparams;
    nlohmann::json hp = before[source].hyperparams;
    for (auto& [key, value] : hp.items()) {
      const double f = cfg.perturb_factors[pick_factor(rng)];
      rec.factors.push_back(f);
      if (value.is_number_integer()) {
        value = std::max<std::int64_t>(1, std::llround(value.get<double>() * f));
      } else if (value.is_number()) {
        value = value.get<double>() * f;
      }
    }
    rec.new_hyperparams = hp;
    PbtMember& m = state.members[target];
    m.hyperparams = std::move(hp);
    m.weights = before[source].weights;
    m.score = before[source].score;
    state.exploits.push_back(std::move(rec));
  }
  ++state.generation;
  return state;
}

PbtRun run_pbt(taskrt::Runtime& rt, const nlohmann::json& base, const std::vector<nlohmann::json>& hyperparams,
               int generations, int iterations_per_generation, const PbtConfig& cfg) {
  PbtRun run;
  auto& members = run.state.members;
  std::vector<TrainerRef> actors;
  for (std::size_t i = 0; i < hyperparams.size(); ++i) {
    PbtMember m;
    m.trial_id = trial_name(i);
    m.hyperparams = hyperparams[i];
    members.push_back(m);
    actors.push_back(rt.spawn<algorithms::TrainerActor>(taskrt::ResourceClaim{}, trial_config(base, m.hyperparams)));
  }
  std::mt19937_64 rng(cfg.seed);

  for (int g = 0; g < generations; ++g) {
    std::vector<taskrt::Future<std::pair<double, std::vector<double>>>> futures;
    for (const auto& a : actors) {
      futures.push_back(rt.invoke(a, "pbt_train", [iterations_per_generation](algorithms::TrainerActor& t) {
        const auto results = t.train(iterations_per_generation);
        return std::make_pair(results.back().episode_reward_mean, t.trainer().get_weights());
      }));
    }
    for (std::size_t i = 0; i < actors.size(); ++i) {
      const auto& [score, weights] = futures[i].get();
      members[i].score = score;
      members[i].weights = weights;
    }
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& m : members) best = std::max(best, rank_score(m.score));
    run.best_per_generation.push_back(best);
    if (g + 1 == generations) break;

    const std::size_t before = run.state.exploits.size();
    run.state = pbt_step(std::move(run.state), cfg, rng);
    for (std::size_t e = before; e < run.state.exploits.size(); ++e) {
      const ExploitRecord& rec = run.state.exploits[e];
      const PbtMember& m = members[rec.target];
      const auto next = trial_config(base, m.hyperparams);
      const auto check = rt.invoke(actors[rec.target], "pbt_exploit",
                                   [next, weights = m.weights](algorithms::TrainerActor& t) {
                                     t.rebuild(next, weights);
                                     return std::make_pair(t.trainer().get_weights(),
                                                           algorithms::to_json(t.trainer().config()).dump());
                                   });
      const auto& [weights, config] = check.get();
      bool ok = weights == m.weights;
      const auto doc = nlohmann::json::parse(config);
      std::size_t k = 0;
      for (const auto& [key, value] : rec.source_hyperparams.items()) {
        const nlohmann::json* now = find_path(doc, key);
        const double f = rec.factors[k++];
        ok = ok && now != nullptr && now->is_number() &&
             (value.is_number_integer()
                  ? now->get<std::int64_t>() == std::max<std::int64_t>(1, std::llround(value.get<double>() * f))
                  : std::abs(now->get<double>() - value.get<double>() * f) <= 1e-12 * std::abs(value.get<double>()));
      }
      run.verified.push_back(ok);
    }
  }
  run.hierarchy_levels = 1 + rt.max_depth_seen();
  for (const auto& a : actors) rt.terminate(a);
  return run;
}

}  // namespace rldist::tune
