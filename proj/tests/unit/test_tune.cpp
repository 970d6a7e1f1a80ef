#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "rldist/common/error.hpp"
#include "rldist/tune/tune.hpp"

using namespace rldist;
using namespace rldist::tune;
using nlohmann::json;

namespace {

const json kBase = {{"algorithm", "pg"},
                    {"env", "gridworld"},
                    {"num_evaluators", 1},
                    {"batch_size", 40},
                    {"graph", {{"hidden", {8}}}}};

PopulationState scripted(std::vector<double> scores) {
  PopulationState s;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    PbtMember m;
    m.trial_id = "t" + std::to_string(i);
    m.hyperparams = {{"graph.lr", 0.01 * (i + 1)}};
    m.score = scores[i];
    m.weights = std::vector<double>(3, static_cast<double>(i));
    s.members.push_back(m);
  }
  return s;
}

}  // namespace

TEST_CASE("grid expansion is a cartesian product with stable ids") {
  const auto specs = expand_grid(json{{"graph.lr", {0.1, 0.2}}, {"seed", {1, 2, 3}}});
  REQUIRE(specs.size() == 6);
  CHECK(specs[0].trial_id == "trial_000");
  CHECK(specs[5].trial_id == "trial_005");
  std::set<std::string> combos;
  for (const auto& s : specs) combos.insert(s.overrides.dump());
  CHECK(combos.size() == 6);
  CHECK(expand_grid(json::object()).size() == 1);
  CHECK_THROWS_AS(expand_grid(json{{"seed", json::array()}}), ConfigError);
}

TEST_CASE("a one-trial grid equals a plain trainer run") {
  taskrt::Runtime rt;
  const auto results = grid_search(rt, kBase, {TrialSpec{"only", json::object()}}, 3);
  REQUIRE(results.size() == 1);
  REQUIRE(results[0].history.size() == 3);
  auto plain = algorithms::make_trainer(rt, algorithms::parse_trainer_config(kBase));
  for (const auto& r : results[0].history) {
    CHECK(algorithms::strip_wall_time(algorithms::to_json(plain->train())) ==
          algorithms::strip_wall_time(algorithms::to_json(r)));
  }
}

TEST_CASE("four trials on a tight slot budget complete three levels deep") {
  taskrt::RuntimeConfig rc;
  rc.slot_capacity = 4 + 4;  // one slot per trial actor plus one per evaluator
  taskrt::Runtime rt(rc);
  const auto specs = expand_grid(json{{"graph.lr", {0.001, 0.01, 0.05, 0.1}}});
  const auto results = grid_search(rt, kBase, specs, 2);
  REQUIRE(results.size() == 4);
  for (const auto& r : results) CHECK_FALSE(r.failed);
  CHECK(1 + rt.max_depth_seen() == 3);
  for (std::size_t i = 1; i < results.size(); ++i) {
    const double a = std::isnan(results[i - 1].score) ? -INFINITY : results[i - 1].score;
    const double b = std::isnan(results[i].score) ? -INFINITY : results[i].score;
    CHECK(a >= b);
    if (a == b) CHECK(results[i - 1].trial_id < results[i].trial_id);
  }
}

TEST_CASE("an injected trial failure is recorded and the rest are ranked") {
  taskrt::Runtime rt;
  const auto specs = expand_grid(json{{"seed", {1, 2, 3}}});
  GridOptions opts;
  opts.on_spawn = [&](const TrialSpec& spec, const TrainerRef& ref) {
    if (spec.trial_id == "trial_001") rt.inject_failure(ref.id(), {{1}, false});
  };
  const auto results = grid_search(rt, kBase, specs, 2, opts);
  REQUIRE(results.size() == 3);
  CHECK_FALSE(results[0].failed);
  CHECK_FALSE(results[1].failed);
  CHECK(results[2].failed);
  CHECK(results[2].trial_id == "trial_001");
  CHECK(results[2].error.find("trial_001") != std::string::npos);
  CHECK(results[0].history.size() == 2);

  const auto csv = results_csv(results);
  CHECK(csv.find("trial_id,status,score,seed\n") == 0);
  CHECK(csv.find("trial_001,failed,,2\n") != std::string::npos);
}

TEST_CASE("grid search rejects overrides of unknown keys") {
  taskrt::Runtime rt;
  CHECK_THROWS_AS(grid_search(rt, kBase, {TrialSpec{"x", json{{"graph.not_a_key", 1}}}}, 1), ConfigError);
  CHECK_THROWS_AS(grid_search(rt, kBase, {}, 1), ConfigError);
}

TEST_CASE("the lowest scorer copies the highest") {
  std::mt19937_64 rng(0);
  PbtConfig cfg;
  const auto s = pbt_step(scripted({1, 2, 3, 4}), cfg, rng);
  REQUIRE(s.exploits.size() == 1);
  CHECK(s.exploits[0].target == 0);
  CHECK(s.exploits[0].source == 3);
  CHECK(s.members[0].weights == std::vector<double>(3, 3.0));
  CHECK(s.members[3].weights == std::vector<double>(3, 3.0));
  CHECK(s.members[1].weights == std::vector<double>(3, 1.0));
  CHECK(s.generation == 1);
}

TEST_CASE("copied hyperparameters are scaled by one of the perturb factors") {
  PbtConfig cfg;
  std::set<double> seen;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    std::mt19937_64 rng(seed);
    const auto s = pbt_step(scripted({4, 3, 2, 1, 0, 5, 6, 7}), cfg, rng);
    CHECK(s.exploits.size() == 2);
    for (const auto& e : s.exploits) {
      const double src = e.source_hyperparams["graph.lr"].get<double>();
      const double now = s.members[e.target].hyperparams["graph.lr"].get<double>();
      const double ratio = now / src;
      CHECK((std::abs(ratio - 0.8) < 1e-12 || std::abs(ratio - 1.2) < 1e-12));
      seen.insert(std::round(ratio * 10) / 10);
      CHECK(s.members[e.source].score >= 6.0);  // top quarter
    }
  }
  CHECK(seen.size() == 2);
}

TEST_CASE("integer hyperparameters stay integral and positive") {
  auto s = scripted({1, 2, 3, 4});
  for (auto& m : s.members) m.hyperparams = {{"batch_size", 1}};
  PbtConfig cfg;
  cfg.perturb_factors = {0.4};
  std::mt19937_64 rng(1);
  s = pbt_step(s, cfg, rng);
  CHECK(s.members[0].hyperparams["batch_size"] == 1);
  CHECK(s.members[0].hyperparams["batch_size"].is_number_integer());
}

TEST_CASE("population best never drops on a scripted landscape") {
  // Score is a fixed function of the learning rate alone.
  auto score = [](double lr) { return -std::pow(std::log10(lr) + 2.0, 2.0); };
  PopulationState s;
  for (double lr : {1e-4, 3e-4, 3e-3, 0.3, 1.0}) {
    PbtMember m;
    m.hyperparams = {{"graph.lr", lr}};
    m.score = score(lr);
    s.members.push_back(m);
  }
  PbtConfig cfg;
  std::mt19937_64 rng(7);
  double best = -INFINITY;
  for (int g = 0; g < 5; ++g) {
    s = pbt_step(s, cfg, rng);
    for (auto& m : s.members) m.score = score(m.hyperparams["graph.lr"].get<double>());
    double now = -INFINITY;
    for (const auto& m : s.members) now = std::max(now, m.score);
    CHECK(now >= best);
    best = now;
  }
  CHECK(s.exploits.size() == 5);
}

TEST_CASE("pbt rejects small populations") {
  std::mt19937_64 rng(0);
  CHECK_THROWS_AS(pbt_step(scripted({1, 2, 3}), PbtConfig{}, rng), ConfigError);
}

TEST_CASE("pbt over trainer actors copies weights and perturbs hyperparameters") {
  taskrt::Runtime rt;
  std::vector<json> pop;
  for (double lr : {0.001, 0.01, 0.03, 0.1}) pop.push_back(json{{"graph.lr", lr}});
  const auto run = run_pbt(rt, kBase, pop, 3, 2, PbtConfig{});
  CHECK(run.best_per_generation.size() == 3);
  CHECK(run.state.exploits.size() == 2);
  REQUIRE(run.verified.size() == 2);
  for (bool ok : run.verified) CHECK(ok);
  CHECK(run.hierarchy_levels == 3);
}
