#include "rldist/cli/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include "rldist/common/error.hpp"
#include "rldist/tune/tune.hpp"

namespace rldist::cli {

namespace {

const std::set<std::string> kExperimentKeys = {"mode", "stop", "tune"};

nlohmann::json trainer_part(const nlohmann::json& j) {
  nlohmann::json t = nlohmann::json::object();
  for (const auto& [k, v] : j.items()) {
    if (!kExperimentKeys.count(k)) t[k] = v;
  }
  return t;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  f << text;
  if (!f) throw Error("cannot write " + path.string());
}

std::string csv_cell(const nlohmann::json& v) {
  if (v.is_null()) return "";
  std::string s = v.is_string() ? v.get<std::string>() : v.dump();
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

void flatten_into(const nlohmann::json& j, const std::string& prefix, nlohmann::json& out) {
  for (const auto& [k, v] : j.items()) {
    const std::string key = prefix.empty() ? k : prefix + "." + k;
    if (v.is_object() && !v.empty()) {
      flatten_into(v, key, out);
    } else if (v.is_object() || v.is_array()) {
      out[key] = v.dump();
    } else {
      out[key] = v;
    }
  }
}

std::size_t slots_needed(const algorithms::TrainerConfig& c) {
  if (c.algorithm == "ppo_es") return c.ppo_es.population * (1 + c.num_evaluators);
  if (c.algorithm == "es" && c.num_evaluators > c.es.aggregators) return c.num_evaluators + c.es.aggregators;
  // Replay and parameter-server actors come on top of the evaluators.
  return c.num_evaluators + 8;
}

int run_train(const ExperimentConfig& exp, const algorithms::TrainerConfig& cfg, const RunOptions& opts,
              const std::filesystem::path& dir, std::ostream& out) {
  taskrt::RuntimeConfig rc = taskrt::RuntimeConfig{}.with_environment();
  rc.slot_capacity = std::max<int>(rc.slot_capacity, static_cast<int>(slots_needed(cfg)));
  taskrt::Runtime rt(rc);
  auto trainer = algorithms::make_trainer(rt, cfg);

  std::ofstream metrics(dir / "metrics.jsonl", std::ios::trunc);
  std::vector<nlohmann::json> records;
  for (;;) {
    const auto r = trainer->train();
    const auto record = algorithms::to_json(r);
    metrics << record.dump() << '\n';
    metrics.flush();
    if (opts.csv) records.push_back(record);
    out << "iter " << r.iteration << "  timesteps " << r.timesteps_total << "  reward_mean "
        << (std::isnan(r.episode_reward_mean) ? std::string("n/a") : std::to_string(r.episode_reward_mean))
        << '\n';
    if (exp.stop.reached(r)) break;
  }
  trainer->save((dir / "checkpoint.bin").string());
  if (opts.csv) write_text(dir / "metrics.csv", records_csv(records));
  return kExitOk;
}

int run_tune(const ExperimentConfig& exp, const RunOptions& opts, const std::filesystem::path& dir,
             std::ostream& out) {
  const auto& t = exp.tune;
  const auto iterations = static_cast<int>(*exp.stop.max_iterations);
  const auto base = algorithms::parse_trainer_config(exp.trainer);
  std::vector<nlohmann::json> records;
  std::ofstream metrics(dir / "metrics.jsonl", std::ios::trunc);
  auto emit = [&](const nlohmann::json& record) {
    metrics << record.dump() << '\n';
    metrics.flush();
    if (opts.csv) records.push_back(record);
  };

  const std::string search = t.value("search", "grid");
  std::vector<tune::TrialResult> results;
  if (search == "grid") {
    const auto specs = tune::expand_grid(t.value("grid", nlohmann::json::object()));
    taskrt::RuntimeConfig rc = taskrt::RuntimeConfig{}.with_environment();
    rc.slot_capacity = std::max<int>(rc.slot_capacity, static_cast<int>(specs.size() * (1 + slots_needed(base))));
    taskrt::Runtime rt(rc);
    results = tune::grid_search(rt, exp.trainer, specs, iterations);
    std::vector<const tune::TrialResult*> by_id;
    for (const auto& r : results) by_id.push_back(&r);
    std::sort(by_id.begin(), by_id.end(), [](auto* a, auto* b) { return a->trial_id < b->trial_id; });
    for (const auto* r : by_id) {
      for (const auto& it : r->history) {
        auto record = algorithms::to_json(it);
        record["trial_id"] = r->trial_id;
        emit(record);
      }
    }
  } else {
    std::vector<nlohmann::json> population = t.at("population").get<std::vector<nlohmann::json>>();
    tune::PbtConfig pc;
    pc.exploit_fraction = t.value("exploit_fraction", pc.exploit_fraction);
    pc.perturb_factors = t.value("perturb_factors", pc.perturb_factors);
    pc.seed = base.seed;
    taskrt::RuntimeConfig rc = taskrt::RuntimeConfig{}.with_environment();
    rc.slot_capacity =
        std::max<int>(rc.slot_capacity, static_cast<int>(population.size() * (1 + slots_needed(base))));
    taskrt::Runtime rt(rc);
    const auto run = tune::run_pbt(rt, exp.trainer, population, t.value("generations", 2), iterations, pc);
    for (std::size_t g = 0; g < run.best_per_generation.size(); ++g) {
      nlohmann::json copies = nlohmann::json::array();
      for (const auto& e : run.state.exploits) {
        if (e.generation == static_cast<std::int64_t>(g)) {
          copies.push_back({{"target", e.target}, {"source", e.source}, {"hyperparams", e.new_hyperparams}});
        }
      }
      const double best = run.best_per_generation[g];
      emit({{"generation", g}, {"population_best", std::isfinite(best) ? nlohmann::json(best) : nlohmann::json()},
            {"exploits", copies}});
    }
    for (const auto& m : run.state.members) {
      tune::TrialResult r;
      r.trial_id = m.trial_id;
      r.overrides = m.hyperparams;
      r.score = m.score;
      results.push_back(r);
    }
    std::sort(results.begin(), results.end(), [](const tune::TrialResult& a, const tune::TrialResult& b) {
      const double sa = std::isnan(a.score) ? -INFINITY : a.score;
      const double sb = std::isnan(b.score) ? -INFINITY : b.score;
      return sa != sb ? sa > sb : a.trial_id < b.trial_id;
    });
  }
  write_text(dir / "results.csv", tune::results_csv(results));
  if (opts.csv) write_text(dir / "metrics.csv", records_csv(records));
  for (const auto& r : results) {
    out << r.trial_id << "  " << (r.failed ? "failed: " + r.error : "score " + std::to_string(r.score)) << '\n';
  }
  return kExitOk;
}

}  // namespace

bool StopConditions::reached(const algorithms::IterationResult& r) const {
  if (max_iterations && r.iteration >= *max_iterations) return true;
  if (episode_reward_mean && !std::isnan(r.episode_reward_mean) && r.episode_reward_mean >= *episode_reward_mean) {
    return true;
  }
  return timesteps_total && r.timesteps_total >= *timesteps_total;
}

nlohmann::json load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(f, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
}

std::vector<std::string> validate_experiment(const nlohmann::json& j) {
  if (!j.is_object()) return {"config: must be a JSON object"};
  std::vector<std::string> out;
  const std::string mode = j.value("mode", "train");
  if (mode != "train" && mode != "tune") out.push_back("mode: must be \"train\" or \"tune\"");

  const auto stop = j.value("stop", nlohmann::json::object());
  if (!stop.is_object()) {
    out.push_back("stop: must be an object");
  } else {
    std::size_t set = 0;
    for (const auto& [k, v] : stop.items()) {
      if (k == "max_iterations" || k == "timesteps_total") {
        if (!v.is_number_integer() || v.get<std::int64_t>() < 1) out.push_back("stop." + k + ": must be an integer >= 1");
      } else if (k == "episode_reward_mean") {
        if (!v.is_number() || !std::isfinite(v.get<double>())) out.push_back("stop." + k + ": must be a number");
      } else {
        out.push_back("stop." + k + ": unknown key");
        continue;
      }
      ++set;
    }
    if (set == 0) out.push_back("stop: set max_iterations or another stop condition");
    if (mode == "tune" && (stop.contains("episode_reward_mean") || stop.contains("timesteps_total"))) {
      out.push_back("stop: tune mode runs a fixed max_iterations per trial");
    }
    if (mode == "tune" && !stop.contains("max_iterations")) out.push_back("stop.max_iterations: required in tune mode");
  }

  if (mode == "tune") {
    const auto t = j.value("tune", nlohmann::json::object());
    const std::string search = t.is_object() ? t.value("search", "grid") : "";
    if (search == "grid") {
      for (const auto& [k, v] : t.items()) {
        if (k != "search" && k != "grid") out.push_back("tune." + k + ": unknown key for grid search");
      }
      try {
        for (const auto& spec : tune::expand_grid(t.value("grid", nlohmann::json::object()))) {
          algorithms::apply_overrides(trainer_part(j), spec.overrides);
        }
      } catch (const ConfigError& e) {
        out.push_back(std::string("tune.grid: ") + e.what());
      }
    } else if (search == "pbt") {
      for (const auto& [k, v] : t.items()) {
        static const std::set<std::string> known = {"search", "population", "generations", "exploit_fraction",
                                                    "perturb_factors"};
        if (!known.count(k)) out.push_back("tune." + k + ": unknown key for pbt");
      }
      const auto pop = t.value("population", nlohmann::json::array());
      if (!pop.is_array() || pop.size() < 4) {
        out.push_back("tune.population: needs at least 4 hyperparameter sets");
      } else {
        for (const auto& hp : pop) {
          try {
            algorithms::apply_overrides(trainer_part(j), hp);
          } catch (const ConfigError& e) {
            out.push_back(std::string("tune.population: ") + e.what());
          }
        }
      }
      if (t.contains("generations") && (!t.at("generations").is_number_integer() || t.at("generations") < 1)) {
        out.push_back("tune.generations: must be an integer >= 1");
      }
      if (t.contains("exploit_fraction")) {
        const auto& f = t.at("exploit_fraction");
        if (!f.is_number() || !(f.get<double>() > 0.0 && f.get<double>() <= 0.5)) {
          out.push_back("tune.exploit_fraction: must be in (0, 0.5]");
        }
      }
      if (t.contains("perturb_factors")) {
        const auto& f = t.at("perturb_factors");
        bool ok = f.is_array() && !f.empty();
        if (ok) {
          for (const auto& x : f) ok = ok && x.is_number() && x.get<double>() > 0.0;
        }
        if (!ok) out.push_back("tune.perturb_factors: must be a non-empty list of positive numbers");
      }
    } else {
      out.push_back("tune.search: must be \"grid\" or \"pbt\"");
    }
  } else if (j.contains("tune")) {
    out.push_back("tune: only used in tune mode");
  }

  for (const auto& v : algorithms::validate_trainer_config(trainer_part(j))) out.push_back(v);
  return out;
}

ExperimentConfig parse_experiment(const nlohmann::json& j) {
  const auto violations = validate_experiment(j);
  if (!violations.empty()) throw ConfigError(violations.front());
  ExperimentConfig e;
  e.mode = j.value("mode", "train");
  e.trainer = trainer_part(j);
  const auto stop = j.value("stop", nlohmann::json::object());
  if (stop.contains("max_iterations")) e.stop.max_iterations = stop.at("max_iterations").get<std::int64_t>();
  if (stop.contains("episode_reward_mean")) e.stop.episode_reward_mean = stop.at("episode_reward_mean").get<double>();
  if (stop.contains("timesteps_total")) e.stop.timesteps_total = stop.at("timesteps_total").get<std::int64_t>();
  e.tune = j.value("tune", nlohmann::json::object());
  return e;
}

nlohmann::json apply_flags(nlohmann::json j, const RunOptions& opts) {
  if (!j.is_object()) return j;
  if (opts.seed) j["seed"] = *opts.seed;
  if (opts.workers) j["num_evaluators"] = *opts.workers;
  if (opts.max_iters) {
    if (!j.contains("stop") || !j["stop"].is_object()) j["stop"] = nlohmann::json::object();
    j["stop"]["max_iterations"] = *opts.max_iters;
  }
  return j;
}

int run_experiment(const RunOptions& opts, std::ostream& out, std::ostream& err) {
  ExperimentConfig exp;
  algorithms::TrainerConfig cfg;
  try {
    exp = parse_experiment(apply_flags(load_config(opts.config_path), opts));
    cfg = algorithms::parse_trainer_config(exp.trainer);
  } catch (const Error& e) {
    err << "invalid config: " << e.what() << '\n';
    return kExitInvalid;
  }
  try {
    const std::filesystem::path dir(opts.out_dir);
    std::filesystem::create_directories(dir);
    if (exp.mode == "tune") return run_tune(exp, opts, dir, out);
    return run_train(exp, cfg, opts, dir, out);
  } catch (const std::exception& e) {
    err << "run failed: " << e.what() << '\n';
    return kExitRuntime;
  }
}

int validate_command(const std::string& config_path, std::ostream& out) {
  std::vector<std::string> violations;
  try {
    violations = validate_experiment(load_config(config_path));
  } catch (const ConfigError& e) {
    violations.push_back(e.what());
  }
  for (const auto& v : violations) out << v << '\n';
  if (violations.empty()) out << "ok\n";
  return violations.empty() ? kExitOk : kExitInvalid;
}

nlohmann::json flatten(const nlohmann::json& record) {
  nlohmann::json out = nlohmann::json::object();
  flatten_into(record, "", out);
  return out;
}

std::string records_csv(const std::vector<nlohmann::json>& records) {
  std::vector<std::string> keys;
  std::set<std::string> seen;
  std::vector<nlohmann::json> flat;
  for (const auto& r : records) {
    flat.push_back(flatten(r));
    for (const auto& [k, v] : flat.back().items()) {
      if (seen.insert(k).second) keys.push_back(k);
    }
  }
  std::ostringstream out;
  for (std::size_t i = 0; i < keys.size(); ++i) out << (i ? "," : "") << csv_cell(keys[i]);
  out << '\n';
  for (const auto& f : flat) {
    for (std::size_t i = 0; i < keys.size(); ++i) {
      out << (i ? "," : "");
      if (f.contains(keys[i])) out << csv_cell(f.at(keys[i]));
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace rldist::cli
