#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "rldist/algorithms/es.hpp"
#include "rldist/algorithms/ppo_es.hpp"
#include "rldist/algorithms/trainer.hpp"
#include "rldist/common/error.hpp"
#include "support/check.hpp"

using namespace rldist;
using namespace rldist::algorithms;
using nlohmann::json;

namespace {

std::vector<json> run_records(const json& config, int iterations) {
  taskrt::Runtime rt;
  auto trainer = make_trainer(rt, parse_trainer_config(config));
  std::vector<json> out;
  for (int i = 0; i < iterations; ++i) out.push_back(strip_wall_time(to_json(trainer->train())));
  return out;
}

// Mean cross-entropy of the policy against the bandit's labels on a fixed
// set of contexts.
double bandit_loss(const policy::PolicyGraph& graph) {
  const auto& pg = dynamic_cast<const policy::PgGraph&>(graph);
  std::mt19937_64 rng(12345);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const std::size_t n = 500;
  tensor::Matrix obs(n, 4);
  for (auto& v : obs.data) v = u(rng);
  const tensor::Matrix logits = tensor::mlp_predict(pg.policy(), obs);
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double a = logits.data[2 * r];
    const double b = logits.data[2 * r + 1];
    const double m = std::max(a, b);
    const double lse = m + std::log(std::exp(a - m) + std::exp(b - m));
    const int label = envs::ContextualBandit::label(std::span<const double>(obs.data.data() + 4 * r, 4));
    loss += lse - (label == 0 ? a : b);
  }
  return loss / n;
}

}  // namespace

// --- config -------------------------------------------------------------------------

TEST_CASE("trainer config validation names the offending key") {
  CHECK(validate_trainer_config(json{{"algorithm", "pg"}, {"env", "gridworld"}}).empty());

  auto v = validate_trainer_config(json{{"algorithm", "pg"}, {"graph", {{"gamma", 1.5}}}});
  REQUIRE(v.size() == 1);
  CHECK(v[0].find("graph.gamma") == 0);

  v = validate_trainer_config(json{{"algorithm", "sarsa"}});
  REQUIRE(v.size() == 1);
  CHECK(v[0].find("algorithm") == 0);

  v = validate_trainer_config(json{{"num_evaluators", -2}});
  REQUIRE(v.size() == 1);
  CHECK(v[0].find("num_evaluators") == 0);

  v = validate_trainer_config(json{{"algorithm", "a3c"}, {"optimizer", {{"kind", "sync"}}}});
  REQUIRE(v.size() == 1);
  CHECK(v[0].find("optimizer.kind") == 0);

  v = validate_trainer_config(json{{"optimizer", {{"kind", "sync"}, {"params", {{"keep_fraction", 2.0}}}}}});
  REQUIRE(v.size() == 1);
  CHECK(v[0].find("optimizer.params.keep_fraction") == 0);

  v = validate_trainer_config(json{{"algorithm", "es"}, {"es", {{"num_perturbations", 7}}}});
  REQUIRE(v.size() == 1);
  CHECK(v[0].find("es.num_perturbations") == 0);

  CHECK(validate_trainer_config(json{{"bogus", 1}}).size() == 1);
  CHECK(validate_trainer_config(json{{"env", "atari"}}).size() == 1);
  CHECK_THROWS_AS(parse_trainer_config(json{{"graph", {{"lr", -1}}}}), ConfigError);
}

TEST_CASE("algorithm defaults fill in and survive a round trip") {
  const auto ppo = parse_trainer_config(json{{"algorithm", "ppo"}, {"num_evaluators", 3}});
  CHECK(ppo.optimizer == "local_multipass");
  CHECK(ppo.batch_size == 1334);
  CHECK(ppo.graph_config().gamma == 0.995);
  CHECK(ppo.graph_config().lambda == 0.95);
  CHECK(ppo.graph_config().clip == 0.2);
  CHECK(parse_trainer_config(json{{"algorithm", "dqn"}}).optimizer == "replay");
  CHECK(parse_trainer_config(json{{"algorithm", "a3c"}}).optimizer == "async");
  CHECK(parse_trainer_config(json{{"algorithm", "es"}}).optimizer.empty());

  for (const auto& name : algorithm_names()) {
    const auto c = parse_trainer_config(json{{"algorithm", name}, {"seed", 3}});
    CHECK(to_json(parse_trainer_config(to_json(c))) == to_json(c));
  }
}

TEST_CASE("overrides address nested keys and are validated") {
  const json base = {{"algorithm", "pg"}};
  const auto out = apply_overrides(base, json{{"graph.lr", 0.5}, {"optimizer.kind", "async"}});
  CHECK(out["graph"]["lr"] == 0.5);
  CHECK(out["optimizer"]["kind"] == "async");
  CHECK_THROWS_AS(apply_overrides(base, json{{"graph.learning_rate", 0.5}}), ConfigError);
  CHECK_THROWS_AS(apply_overrides(base, json{{"algorithm.x", 1}}), ConfigError);
}

// --- graph trainers -------------------------------------------------------------------

TEST_CASE("one PG iteration on GridWorld counts exactly one batch") {
  taskrt::Runtime rt;
  auto t = make_trainer(rt, parse_trainer_config(json{
                                {"algorithm", "pg"}, {"env", "gridworld"}, {"seed", 7}, {"num_evaluators", 2},
                                {"batch_size", 100}}));
  const auto r = t->train();
  CHECK(r.iteration == 1);
  CHECK(r.timesteps_total == 200);
  CHECK(r.optimizer.grad_steps_applied == 1);
  const auto r2 = t->train();
  CHECK(r2.timesteps_total == 400);
}

TEST_CASE("episode_reward_mean is null until an episode finishes") {
  taskrt::Runtime rt;
  auto t = make_trainer(rt, parse_trainer_config(json{{"algorithm", "pg"},
                                                      {"env", "gridworld"},
                                                      {"num_evaluators", 1},
                                                      {"batch_size", 5},
                                                      {"graph", {{"hidden", {8}}}}}));
  const auto r = t->train();
  CHECK(r.episodes_total == 0);
  CHECK(std::isnan(r.episode_reward_mean));
  CHECK(to_json(r)["episode_reward_mean"].is_null());
}

TEST_CASE("DQN target sync runs every target_interval iterations") {
  taskrt::Runtime rt;
  auto t = make_trainer(rt, parse_trainer_config(json{{"algorithm", "dqn"},
                                                      {"env", "gridworld"},
                                                      {"num_evaluators", 1},
                                                      {"batch_size", 20},
                                                      {"target_interval", 5},
                                                      {"graph", {{"hidden", {16}}}},
                                                      {"optimizer", {{"params", {{"learning_starts", 20}}}}}}));
  auto& g = dynamic_cast<GraphTrainer&>(*t);
  std::vector<std::int64_t> synced_at;
  std::int64_t before = 0;
  for (int i = 1; i <= 12; ++i) {
    const auto r = t->train();
    const auto now = r.info["target_syncs"].get<std::int64_t>();
    if (now != before) synced_at.push_back(i);
    before = now;
  }
  CHECK(synced_at == std::vector<std::int64_t>{5, 10});
  const auto remote = rt.invoke(g.evaluators()[0], "count", [](evaluation::PolicyEvaluator& e) {
                          return dynamic_cast<policy::DqnGraph&>(e.graph()).target_sync_count();
                        }).get();
  CHECK(remote == 2);
}

TEST_CASE("apex trainer gives every evaluator its own exploration rate") {
  taskrt::Runtime rt;
  auto t = make_trainer(rt, parse_trainer_config(json{
                                {"algorithm", "apex"},
                                {"env", "gridworld"},
                                {"num_evaluators", 4},
                                {"batch_size", 20},
                                {"graph", {{"hidden", {16}}}},
                                {"optimizer", {{"params", {{"learning_starts", 40}, {"learner_steps", 4}}}}}}));
  auto& g = dynamic_cast<GraphTrainer&>(*t);
  for (int i = 0; i < 3; ++i) t->train();
  std::set<double> eps;
  for (const auto& e : g.evaluators()) {
    eps.insert(rt.invoke(e, "eps", [](evaluation::PolicyEvaluator& ev) { return *ev.epsilon(); }).get());
  }
  CHECK(eps.size() == 4);
  auto& apex = dynamic_cast<optimizers::ApexOptimizer&>(g.optimizer());
  CHECK(apex.trace().priority_updates == g.optimizer().totals().grad_steps_applied);
}

TEST_CASE("same config and seed give identical metric streams") {
  const json base = {{"env", "cartpole"}, {"num_evaluators", 2}, {"seed", 11}, {"graph", {{"hidden", {16}}}}};
  for (const std::string algo : {"pg", "a3c", "dqn"}) {
    json c = base;
    c["algorithm"] = algo;
    c["batch_size"] = 50;
    if (algo == "dqn") c["optimizer"] = {{"params", {{"learning_starts", 100}}}};
    const auto a = run_records(c, 4);
    const auto b = run_records(c, 4);
    CHECK_MESSAGE(a == b, algo);
  }
  json es = base;
  es["algorithm"] = "es";
  es["es"] = {{"num_perturbations", 8}};
  es["env_config"] = {{"horizon", 50}};
  CHECK(run_records(es, 2) == run_records(es, 2));
  CHECK(run_records(json{{"algorithm", "pg"}, {"seed", 1}, {"batch_size", 50}}, 1) !=
        run_records(json{{"algorithm", "pg"}, {"seed", 2}, {"batch_size", 50}}, 1));
}

TEST_CASE("checkpoints restore weights and counters") {
  const auto cfg = parse_trainer_config(json{{"algorithm", "pg"}, {"env", "gridworld"}, {"num_evaluators", 1},
                                             {"batch_size", 50}, {"graph", {{"hidden", {8}}}}});
  taskrt::Runtime rt;
  auto a = make_trainer(rt, cfg);
  a->train();
  a->train();
  const auto bytes = taskrt::encode_framed(a->checkpoint());
  auto b = make_trainer(rt, cfg);
  b->restore(taskrt::decode_framed<TrainerCheckpoint>(bytes));
  CHECK(b->get_weights() == a->get_weights());
  CHECK(b->iteration() == 2);
  CHECK(b->timesteps_total() == 100);
  CHECK(b->train().iteration == 3);

  auto other = cfg;
  other.seed = 99;
  auto c = make_trainer(rt, other);
  CHECK_THROWS_AS(c->restore(taskrt::decode_framed<TrainerCheckpoint>(bytes)), ConfigError);
  CHECK_THROWS_AS(taskrt::decode_framed<std::vector<double>>(bytes), CorruptPayload);
}

TEST_CASE("optimizer swap: sync, async and param_server all learn the bandit") {
  const int grad_steps = 60;
  std::map<std::string, double> final_loss;
  double initial = 0.0;
  for (const std::string kind : {"sync", "async", "param_server"}) {
    json c = {{"algorithm", "pg"},
              {"env", "bandit"},
              {"num_evaluators", 2},
              {"batch_size", 32},
              {"seed", 4},
              {"graph", {{"hidden", {16}}, {"optimizer", "sgd"}, {"lr", 0.1}}},
              {"optimizer", {{"kind", kind}}}};
    if (kind == "async") c["optimizer"]["params"] = {{"grads_to_apply", 2}};
    if (kind == "param_server") c["optimizer"]["params"] = {{"num_shards", 2}};
    taskrt::Runtime rt;
    auto t = make_trainer(rt, parse_trainer_config(c));
    auto& g = dynamic_cast<GraphTrainer&>(*t);
    initial = bandit_loss(g.local_graph());
    while (g.optimizer().totals().grad_steps_applied < static_cast<std::uint64_t>(grad_steps)) t->train();
    CHECK(g.optimizer().totals().grad_steps_applied == static_cast<std::uint64_t>(grad_steps));
    final_loss[kind] = bandit_loss(g.local_graph());
  }
  double lo = INFINITY, hi = 0.0;
  for (const auto& [k, v] : final_loss) {
    CHECK(v < initial);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(hi <= 1.1 * lo);
}

TEST_CASE("a trainer hosted in an actor spawns its evaluators as children") {
  taskrt::Runtime rt;
  const auto cfg = parse_trainer_config(json{{"algorithm", "pg"}, {"env", "gridworld"}, {"num_evaluators", 2},
                                             {"batch_size", 20}, {"graph", {{"hidden", {8}}}}});
  auto actor = rt.spawn<TrainerActor>(taskrt::ResourceClaim{}, cfg);
  const auto results = rt.invoke(actor, "train", [](TrainerActor& a) { return a.train(2); }).get();
  CHECK(results.size() == 2);
  CHECK(rt.children_of(actor.id()).size() == 2);
  CHECK(rt.max_depth_seen() == 2);

  // Same stream as a trainer on the driver.
  auto direct = make_trainer(rt, cfg);
  for (const auto& r : results) CHECK(strip_wall_time(to_json(direct->train())) == strip_wall_time(to_json(r)));
}

// --- ES ----------------------------------------------------------------------------------

TEST_CASE("centered ranks sum to zero inside [-0.5, 0.5]") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 5.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(2 + trial * 7);
    for (auto& v : x) v = trial % 3 == 0 ? std::round(n(rng)) : n(rng);  // some with ties
    const auto r = centered_ranks(x);
    CHECK(std::abs(std::accumulate(r.begin(), r.end(), 0.0)) < 1e-12);
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(r[i] >= -0.5);
      CHECK(r[i] <= 0.5);
      for (std::size_t j = 0; j < x.size(); ++j) {
        if (x[i] < x[j]) CHECK(r[i] < r[j]);
        if (x[i] == x[j]) CHECK(r[i] == r[j]);
      }
    }
  }
  CHECK(centered_ranks(std::vector<double>{5.0, -1.0, 2.0}) == std::vector<double>{0.5, -0.5, 0.0});
}

TEST_CASE("perturbations come in antithetic pairs") {
  const auto t = make_perturbations(9, 6, 0.1);
  CHECK(t.size() == 6);
  const std::vector<double> theta(5, 1.0);
  for (std::size_t p = 0; p < 3; ++p) {
    const auto plus = t.perturbed(theta, 2 * p);
    const auto minus = t.perturbed(theta, 2 * p + 1);
    for (std::size_t k = 0; k < theta.size(); ++k) CHECK(plus[k] + minus[k] == doctest::Approx(2.0).epsilon(1e-15));
  }
  CHECK_THROWS_AS(make_perturbations(9, 5, 0.1), ConfigError);
  CHECK_THROWS_AS(make_perturbations(9, 4, 0.0), ConfigError);
}

TEST_CASE("antithetic pairs on a linear objective leave no orthogonal noise") {
  const std::size_t dim = 12;
  std::vector<double> a(dim);
  for (std::size_t k = 0; k < dim; ++k) a[k] = std::sin(1.0 + k);
  const std::vector<double> theta(dim, 0.3);
  auto f = [&](std::span<const double> x) { return std::inner_product(a.begin(), a.end(), x.begin(), 0.0); };
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto t = make_perturbations(seed, 2, 0.02);
    const std::vector<double> fit = {f(t.perturbed(theta, 0)), f(t.perturbed(theta, 1))};
    const auto g = es_gradient(t, fit, dim, false);
    // (F+ - F-) eps / (2 sigma) = (a . eps) eps
    const auto eps = noise_vector(t.seeds[0], dim);
    const double proj = std::inner_product(a.begin(), a.end(), eps.begin(), 0.0);
    for (std::size_t k = 0; k < dim; ++k) CHECK(std::abs(g[k] - proj * eps[k]) <= 1e-9 * (1.0 + std::abs(g[k])));
  }
}

TEST_CASE("ES gradient estimate aligns with the analytic gradient") {
  const std::size_t dim = 10;
  std::vector<double> target(dim);
  for (std::size_t k = 0; k < dim; ++k) target[k] = 0.3 * std::cos(0.7 * k);
  const std::vector<double> theta(dim, 0.0);
  auto f = [&](std::span<const double> x) {
    double s = 0.0;
    for (std::size_t k = 0; k < dim; ++k) s -= (x[k] - target[k]) * (x[k] - target[k]);
    return s;
  };
  const auto t = make_perturbations(1, 5000, 0.02);
  std::vector<double> fit;
  for (std::size_t i = 0; i < t.size(); ++i) fit.push_back(f(t.perturbed(theta, i)));
  const auto g = es_gradient(t, fit, dim);
  std::vector<double> analytic(dim);
  for (std::size_t k = 0; k < dim; ++k) analytic[k] = -2.0 * (theta[k] - target[k]);
  const double cos = std::inner_product(g.begin(), g.end(), analytic.begin(), 0.0) /
                     std::sqrt(std::inner_product(g.begin(), g.end(), g.begin(), 0.0) *
                               std::inner_product(analytic.begin(), analytic.end(), analytic.begin(), 0.0));
  CHECK(cos >= 0.9);
}

TEST_CASE("ES tree and flat workers produce the same update") {
  const json base = {{"algorithm", "es"},
                     {"env", "cartpole"},
                     {"env_config", {{"horizon", 40}}},
                     {"graph", {{"hidden", {8}}}},
                     {"es", {{"num_perturbations", 24}}}};
  json flat = base;
  flat["num_evaluators"] = 3;
  json tree = base;
  tree["num_evaluators"] = 6;

  taskrt::Runtime rt_flat;
  auto a = make_trainer(rt_flat, parse_trainer_config(flat));
  const auto ra = a->train();
  taskrt::Runtime rt_tree;
  auto b = make_trainer(rt_tree, parse_trainer_config(tree));
  const auto rb = b->train();

  CHECK_FALSE(dynamic_cast<EsTrainer&>(*a).uses_aggregation_tree());
  CHECK(dynamic_cast<EsTrainer&>(*b).uses_aggregation_tree());
  CHECK(ra.info["aggregation_levels"] == 1);
  CHECK(rb.info["aggregation_levels"] == 2);
  CHECK(rt_flat.max_depth_seen() == 1);
  CHECK(rt_tree.max_depth_seen() == 2);
  CHECK(a->get_weights() == b->get_weights());
  CHECK(ra.timesteps_total == rb.timesteps_total);
  CHECK(ra.episodes_total == 24);
}

// --- PPO-ES ------------------------------------------------------------------------------

TEST_CASE("outer selection takes the argmax with the lowest index on ties") {
  CHECK(select_best(std::vector<double>{3, 9, 5}) == 1);
  CHECK(select_best(std::vector<double>{4, 7, 7, 1}) == 1);
  CHECK(select_best(std::vector<double>{2}) == 0);
  CHECK_THROWS_AS(select_best(std::vector<double>{}), ShapeMismatch);
}

TEST_CASE("zero outer noise restarts every member from the parent") {
  const std::vector<double> parent = {0.5, -1.0, 2.0};
  for (const auto& m : perturb_population(parent, 4, 0.0, 3)) CHECK(m == parent);
  const auto noisy = perturb_population(parent, 4, 0.1, 3);
  CHECK(noisy[0] != parent);
  CHECK(noisy[0] != noisy[1]);
}

TEST_CASE("PPO-ES drives unmodified PPO trainers and keeps its best") {
  taskrt::Runtime rt;
  const auto cfg = parse_trainer_config(json{{"algorithm", "ppo_es"},
                                             {"env", "cartpole"},
                                             {"num_evaluators", 1},
                                             {"batch_size", 200},
                                             {"graph", {{"hidden", {16}}}},
                                             {"optimizer", {{"params", {{"epochs", 2}, {"minibatch_size", 100}}}}},
                                             {"ppo_es", {{"population", 3}, {"inner_iterations", 1},
                                                         {"eval_episodes", 2}}}});
  auto t = make_trainer(rt, cfg);
  auto& pe = dynamic_cast<PpoEsTrainer&>(*t);
  double best = -INFINITY;
  for (int i = 0; i < 3; ++i) {
    const auto r = t->train();
    const double now = r.info["population_best"].get<double>();
    CHECK(now >= best);
    const auto scores = r.info["scores"].get<std::vector<double>>();
    CHECK(scores.size() == 3);
    CHECK(now >= *std::max_element(scores.begin(), scores.end()));
    best = now;
  }
  // Members are plain PPO trainers built by the ordinary factory.
  for (std::size_t i = 0; i < pe.population().size(); ++i) {
    CHECK(pe.member_config(i).algorithm == "ppo");
    const bool plain = rt.invoke(pe.population()[i], "kind", [](TrainerActor& a) {
                           return dynamic_cast<GraphTrainer*>(&a.trainer()) != nullptr &&
                                  a.trainer().config().algorithm == "ppo";
                         }).get();
    CHECK(plain);
  }
  CHECK(1 + rt.max_depth_seen() >= 3);
}
