#include "rldist/algorithms/config.hpp"

#include <cmath>
#include <set>

#include "rldist/common/error.hpp"
#include "rldist/envs/env.hpp"
#include "rldist/optimizers/optimizer.hpp"

namespace rldist::algorithms {

namespace {

const std::set<std::string> kTopKeys = {"algorithm",  "env",       "env_config", "num_evaluators",  "seed",
                                        "batch_size", "batch_mode", "num_envs",  "optimizer",       "graph",
                                        "es",         "ppo_es",    "target_interval"};
const std::set<std::string> kEsKeys = {"sigma", "num_perturbations", "stepsize", "l2", "episodes_per_perturbation",
                                       "aggregators"};
const std::set<std::string> kPpoEsKeys = {"population", "inner_iterations", "sigma_outer", "eval_episodes"};

bool uses_graph_optimizer(const std::string& algo) { return algo != "es" && algo != "ppo_es"; }

std::string default_optimizer(const std::string& algo) {
  if (algo == "pg") return "sync";
  if (algo == "ppo" || algo == "ppo_es") return "local_multipass";
  if (algo == "dqn") return "replay";
  if (algo == "a3c") return "async";
  if (algo == "apex") return "apex";
  return "";
}

std::size_t default_batch_size(const std::string& algo, std::size_t evaluators) {
  if (algo == "ppo" || algo == "ppo_es") return (4000 + evaluators - 1) / std::max<std::size_t>(evaluators, 1);
  if (algo == "dqn" || algo == "apex") return 50;
  return 200;
}

// Checks one section against a table of numeric rules.
class Checker {
 public:
  Checker(const nlohmann::json& j, std::string prefix, std::vector<std::string>& out)
      : j_(j), prefix_(std::move(prefix)), out_(out) {}

  void integer_min(const char* key, std::int64_t lo) {
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number_integer() || v.get<std::int64_t>() < lo) fail(key, "must be an integer >= " + std::to_string(lo));
  }
  void number(const char* key, double lo, bool lo_open) {
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    const bool ok = v.is_number() && std::isfinite(v.get<double>()) &&
                    (lo_open ? v.get<double>() > lo : v.get<double>() >= lo);
    if (!ok) fail(key, std::string("must be a number ") + (lo_open ? "> " : ">= ") + std::to_string(lo));
  }
  void unknown(const std::set<std::string>& known) {
    for (const auto& [key, v] : j_.items()) {
      if (!known.count(key)) fail(key.c_str(), "unknown key");
    }
  }
  void fail(const char* key, const std::string& why) { out_.push_back(prefix_ + key + ": " + why); }

 private:
  const nlohmann::json& j_;
  std::string prefix_;
  std::vector<std::string>& out_;
};

template <class T>
T value_or(const nlohmann::json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

}  // namespace

std::vector<std::string> algorithm_names() { return {"pg", "ppo", "dqn", "a3c", "apex", "es", "ppo_es"}; }

std::string TrainerConfig::graph_kind() const {
  if (algorithm == "ppo" || algorithm == "ppo_es") return "ppo";
  if (algorithm == "dqn" || algorithm == "apex") return "dqn";
  return "pg";
}

policy::GraphConfig TrainerConfig::graph_config() const {
  nlohmann::json g = graph;
  if (graph_kind() == "ppo") {
    if (!g.contains("gamma")) g["gamma"] = 0.995;
    if (!g.contains("lambda")) g["lambda"] = 0.95;
    if (!g.contains("clip")) g["clip"] = 0.2;
  }
  if (!g.contains("seed")) g["seed"] = seed;
  return policy::parse_graph_config(g);
}

std::vector<std::string> validate_trainer_config(const nlohmann::json& j) {
  if (!j.is_object()) return {"config: must be an object"};
  std::vector<std::string> out;
  Checker top(j, "", out);
  top.unknown(kTopKeys);

  std::string algo = "pg";
  if (j.contains("algorithm")) {
    const auto& a = j.at("algorithm");
    const auto names = algorithm_names();
    if (!a.is_string() || std::find(names.begin(), names.end(), a.get<std::string>()) == names.end()) {
      out.push_back("algorithm: unknown algorithm " + a.dump());
      algo.clear();
    } else {
      algo = a.get<std::string>();
    }
  }
  if (j.contains("env")) {
    const auto& e = j.at("env");
    if (!e.is_string() || !envs::is_known_env(e.get<std::string>())) {
      out.push_back("env: unknown environment " + e.dump());
    } else if (envs::is_multiagent(e.get<std::string>()) && (algo == "es" || algo == "ppo_es")) {
      out.push_back("env: " + algo + " needs a single-agent environment");
    } else if (!envs::is_multiagent(e.get<std::string>())) {
      try {
        if (!envs::env_spec(e.get<std::string>(), j.value("env_config", nlohmann::json::object())).discrete()) {
          out.push_back("env: the reference graphs need a discrete action space");
        }
      } catch (const Error& err) {
        out.push_back(std::string("env_config: ") + err.what());
      }
    }
  }
  if (j.contains("env_config") && !j.at("env_config").is_object()) out.push_back("env_config: must be an object");
  top.integer_min("num_evaluators", 1);
  top.integer_min("seed", 0);
  top.integer_min("batch_size", 1);
  top.integer_min("num_envs", 1);
  top.integer_min("target_interval", 1);
  if (j.contains("batch_mode")) {
    const auto& m = j.at("batch_mode");
    if (!m.is_string() || (m != "truncate_episodes" && m != "complete_episodes")) {
      out.push_back("batch_mode: must be \"truncate_episodes\" or \"complete_episodes\"");
    }
  }

  for (const auto& v : policy::validate_graph_config(j.value("graph", nlohmann::json::object()))) {
    out.push_back("graph." + v);
  }

  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    if (!o.is_object()) {
      out.push_back("optimizer: must be an object");
    } else if (!algo.empty()) {
      Checker oc(o, "optimizer.", out);
      oc.unknown({"kind", "params"});
      if (algo == "es") {
        out.push_back("optimizer: es does not use a gradient optimizer");
      } else {
        std::string kind = default_optimizer(algo);
        if (o.contains("kind")) {
          if (!o.at("kind").is_string()) {
            out.push_back("optimizer.kind: must be a string");
            kind.clear();
          } else {
            kind = o.at("kind").get<std::string>();
          }
        }
        if (!kind.empty()) {
          for (const auto& v : optimizers::validate_optimizer_config(kind, o.value("params", nlohmann::json()))) {
            out.push_back("optimizer." + v);
          }
          if (algo == "a3c" && kind != "async" && kind != "param_server") {
            out.push_back("optimizer.kind: a3c needs \"async\" or \"param_server\"");
          }
          if (algo == "apex" && kind != "apex") out.push_back("optimizer.kind: apex needs the \"apex\" optimizer");
          if ((kind == "replay" || kind == "apex") && algo != "dqn" && algo != "apex") {
            out.push_back("optimizer.kind: " + kind + " needs a dqn graph");
          }
        }
      }
    }
  }

  if (j.contains("es")) {
    const auto& e = j.at("es");
    if (!e.is_object()) {
      out.push_back("es: must be an object");
    } else {
      Checker ec(e, "es.", out);
      ec.unknown(kEsKeys);
      ec.number("sigma", 0.0, true);
      ec.integer_min("num_perturbations", 2);
      if (e.contains("num_perturbations") && e.at("num_perturbations").is_number_integer() &&
          e.at("num_perturbations").get<std::int64_t>() % 2 != 0) {
        ec.fail("num_perturbations", "must be even");
      }
      ec.number("stepsize", 0.0, true);
      ec.number("l2", 0.0, false);
      ec.integer_min("episodes_per_perturbation", 1);
      ec.integer_min("aggregators", 1);
    }
  }
  if (j.contains("ppo_es")) {
    const auto& p = j.at("ppo_es");
    if (!p.is_object()) {
      out.push_back("ppo_es: must be an object");
    } else {
      Checker pc(p, "ppo_es.", out);
      pc.unknown(kPpoEsKeys);
      pc.integer_min("population", 2);
      pc.integer_min("inner_iterations", 1);
      pc.number("sigma_outer", 0.0, false);
      pc.integer_min("eval_episodes", 1);
    }
  }
  return out;
}

TrainerConfig parse_trainer_config(const nlohmann::json& j) {
  const auto violations = validate_trainer_config(j);
  if (!violations.empty()) throw ConfigError(violations.front());
  TrainerConfig c;
  c.algorithm = value_or<std::string>(j, "algorithm", c.algorithm);
  c.env = value_or<std::string>(j, "env", c.env);
  c.env_config = j.value("env_config", nlohmann::json::object());
  c.num_evaluators = value_or<std::size_t>(j, "num_evaluators", c.num_evaluators);
  c.seed = value_or<std::uint64_t>(j, "seed", c.seed);
  c.batch_size = value_or<std::size_t>(j, "batch_size", default_batch_size(c.algorithm, c.num_evaluators));
  c.batch_mode = evaluation::parse_batch_mode(value_or<std::string>(j, "batch_mode", "truncate_episodes"));
  c.num_envs = value_or<std::size_t>(j, "num_envs", c.num_envs);
  c.target_interval = value_or<int>(j, "target_interval", c.target_interval);
  c.graph = j.value("graph", nlohmann::json::object());

  if (uses_graph_optimizer(c.algorithm) || c.algorithm == "ppo_es") {
    const auto o = j.value("optimizer", nlohmann::json::object());
    c.optimizer = value_or<std::string>(o, "kind", default_optimizer(c.algorithm));
    c.optimizer_params = o.value("params", nlohmann::json::object());
    // Optimizers with their own randomness follow the run seed unless told otherwise.
    if ((c.optimizer == "local_multipass" || c.optimizer == "replay" || c.optimizer == "apex") &&
        !c.optimizer_params.contains("seed")) {
      c.optimizer_params["seed"] = c.seed;
    }
  }

  const auto e = j.value("es", nlohmann::json::object());
  c.es.sigma = value_or<double>(e, "sigma", c.es.sigma);
  c.es.num_perturbations = value_or<std::size_t>(e, "num_perturbations", c.es.num_perturbations);
  c.es.stepsize = value_or<double>(e, "stepsize", c.es.stepsize);
  c.es.l2 = value_or<double>(e, "l2", c.es.l2);
  c.es.episodes_per_perturbation = value_or<int>(e, "episodes_per_perturbation", c.es.episodes_per_perturbation);
  c.es.aggregators = value_or<std::size_t>(e, "aggregators", c.es.aggregators);

  const auto p = j.value("ppo_es", nlohmann::json::object());
  c.ppo_es.population = value_or<std::size_t>(p, "population", c.ppo_es.population);
  c.ppo_es.inner_iterations = value_or<int>(p, "inner_iterations", c.ppo_es.inner_iterations);
  c.ppo_es.sigma_outer = value_or<double>(p, "sigma_outer", c.ppo_es.sigma_outer);
  c.ppo_es.eval_episodes = value_or<int>(p, "eval_episodes", c.ppo_es.eval_episodes);
  return c;
}

nlohmann::json to_json(const TrainerConfig& c) {
  nlohmann::json j = {{"algorithm", c.algorithm},
                      {"env", c.env},
                      {"env_config", c.env_config},
                      {"num_evaluators", c.num_evaluators},
                      {"seed", c.seed},
                      {"batch_size", c.batch_size},
                      {"batch_mode", evaluation::to_string(c.batch_mode)},
                      {"num_envs", c.num_envs},
                      {"graph", c.graph},
                      {"target_interval", c.target_interval},
                      {"es",
                       {{"sigma", c.es.sigma},
                        {"num_perturbations", c.es.num_perturbations},
                        {"stepsize", c.es.stepsize},
                        {"l2", c.es.l2},
                        {"episodes_per_perturbation", c.es.episodes_per_perturbation},
                        {"aggregators", c.es.aggregators}}},
                      {"ppo_es",
                       {{"population", c.ppo_es.population},
                        {"inner_iterations", c.ppo_es.inner_iterations},
                        {"sigma_outer", c.ppo_es.sigma_outer},
                        {"eval_episodes", c.ppo_es.eval_episodes}}}};
  if (!c.optimizer.empty()) j["optimizer"] = {{"kind", c.optimizer}, {"params", c.optimizer_params}};
  return j;
}

nlohmann::json apply_overrides(const nlohmann::json& base, const nlohmann::json& overrides) {
  if (!overrides.is_object()) throw ConfigError("overrides: must be an object of \"key.path\": value");
  nlohmann::json out = base;
  for (const auto& [path, value] : overrides.items()) {
    if (path.empty()) throw ConfigError("overrides: empty key path");
    nlohmann::json* node = &out;
    std::size_t start = 0;
    for (;;) {
      const auto dot = path.find('.', start);
      const std::string part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      if (!node->contains(part)) (*node)[part] = nlohmann::json::object();
      node = &(*node)[part];
      if (!node->is_object()) throw ConfigError(path + ": not a config section");
      start = dot + 1;
    }
  }
  const auto violations = validate_trainer_config(out);
  if (!violations.empty()) throw ConfigError(violations.front());
  return out;
}

}  // namespace rldist::algorithms
