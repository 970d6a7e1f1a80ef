#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "rldist/policy/graph.hpp"
#include "support/oracles.hpp"
#include "support/stats.hpp"

using namespace rldist;
using namespace rldist::policy;
using rldist::testing::max_abs_diff;

namespace {

envs::EnvSpec small_spec(std::size_t obs_dim = 3, int actions = 4) {
  return envs::EnvSpec{obs_dim, envs::DiscreteSpace{actions}, 50};
}

tensor::MlpParams linear_net(std::vector<double> w, std::vector<double> b, std::size_t in, std::size_t out) {
  tensor::MlpParams p;
  p.layers.push_back({tensor::Matrix(in, out, std::move(w)), std::move(b)});
  return p;
}

// One-episode transition batch with obs = t and new_obs = t + 1.
SampleBatch chain_batch(std::size_t rows, bool terminal_at_end) {
  SampleBatch b;
  std::vector<double> obs(rows), next(rows), rew(rows), done(rows, 0.0);
  std::vector<std::int64_t> act(rows, 0), eps(rows, 0), t(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    obs[i] = static_cast<double>(i);
    next[i] = static_cast<double>(i + 1);
    rew[i] = static_cast<double>(i + 1);
    t[i] = static_cast<std::int64_t>(i);
  }
  if (terminal_at_end) done.back() = 1.0;
  b.set_f64(col::kObs, 1, obs);
  b.set_f64(col::kNewObs, 1, next);
  b.set_f64(col::kRewards, 1, rew);
  b.set_f64(col::kDones, 1, done);
  b.set_i64(col::kActions, 1, act);
  b.set_i64(col::kEpsId, 1, eps);
  b.set_i64(col::kTIndex, 1, t);
  return b;
}

}  // namespace

// --- postprocessing -------------------------------------------------------------

TEST_CASE("gae on a single terminal step") {
  std::vector<double> r{1.0}, v{0.5}, d{1.0};
  auto g = compute_gae(r, v, d, 123.0, {0.99, 0.95});
  CHECK(g.advantages[0] == doctest::Approx(0.5));
  CHECK(g.value_targets[0] == doctest::Approx(1.0));
}

TEST_CASE("gae with lambda zero is the one-step residual") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto tr = rldist::testing::random_trajectory(seed);
    auto g = compute_gae(tr.rewards, tr.values, tr.dones, tr.bootstrap.back(), {0.9, 0.0});
    for (std::size_t t = 0; t < tr.rewards.size(); ++t) {
      const double next = t + 1 < tr.rewards.size() ? tr.values[t + 1] : tr.bootstrap.back();
      const double delta = tr.rewards[t] + 0.9 * next * (1.0 - tr.dones[t]) - tr.values[t];
      CHECK(g.advantages[t] == delta);
    }
  }
}

TEST_CASE("gae matches the brute-force sum over random trajectories") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto tr = rldist::testing::random_trajectory(seed);
    auto g = compute_gae(tr.rewards, tr.values, tr.dones, tr.bootstrap.back(), {0.995, 0.95});
    CHECK(max_abs_diff(g.advantages, rldist::testing::gae_oracle(tr, 0.995, 0.95)) <= 1e-12);
  }
}

TEST_CASE("gae with lambda one is the Monte-Carlo advantage on terminal episodes") {
  std::vector<double> r{1, 2, 3}, v{0.3, -0.1, 0.7}, d{0, 0, 1};
  auto g = compute_gae(r, v, d, 0.0, {0.9, 1.0});
  const double ret0 = 1 + 0.9 * 2 + 0.81 * 3, ret1 = 2 + 0.9 * 3, ret2 = 3;
  CHECK(g.advantages[0] == doctest::Approx(ret0 - 0.3).epsilon(1e-14));
  CHECK(g.advantages[1] == doctest::Approx(ret1 + 0.1).epsilon(1e-14));
  CHECK(g.advantages[2] == doctest::Approx(ret2 - 0.7).epsilon(1e-14));
}

TEST_CASE("gae rejects misaligned inputs") {
  std::vector<double> r{1, 2}, v{0.5}, d{0, 1};
  CHECK_THROWS_AS(compute_gae(r, v, d, 0.0, {}), ShapeMismatch);
}

TEST_CASE("one-step returns bootstrap unless done") {
  std::vector<double> r{1, 2, 3}, d{0, 1, 0}, boot{10, 20, 30, 40};
  auto t = n_step_returns(r, d, boot, 1, 0.5);
  CHECK(t[0] == 1 + 0.5 * 20);
  CHECK(t[1] == 2);
  CHECK(t[2] == 3 + 0.5 * 40);
}

TEST_CASE("n at least the episode length gives the discounted return") {
  std::vector<double> r{1, 1, 1, 1}, d{0, 0, 0, 1}, boot{9, 9, 9, 9, 9};
  auto t = n_step_returns(r, d, boot, 10, 0.9);
  CHECK(t[0] == doctest::Approx(1 + 0.9 + 0.81 + 0.729));
  CHECK(t[3] == 1.0);
}

TEST_CASE("n-step returns match the brute-force oracle") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto tr = rldist::testing::random_trajectory(seed);
    for (int n : {1, 3, 5}) {
      auto t = n_step_returns(tr.rewards, tr.dones, tr.bootstrap, n, 0.99);
      CHECK(max_abs_diff(t, rldist::testing::n_step_oracle(tr, n, 0.99)) <= 1e-12);
    }
  }
  std::vector<double> r{1}, d{0}, boot{0};
  CHECK_THROWS_AS(n_step_returns(r, d, boot, 1, 0.9), ShapeMismatch);
}

TEST_CASE("n-step transform agrees with n_step_returns") {
  auto b = chain_batch(5, true);
  auto nb = n_step_transform(b, 3, 0.99);
  REQUIRE(nb.rows() == 5);
  // Value of obs k is 100 + k, so targets computed either way must agree.
  std::vector<double> boot;
  for (int k = 0; k <= 5; ++k) boot.push_back(100.0 + k);
  auto direct = n_step_returns(b.f64(col::kRewards), b.f64(col::kDones), boot, 3, 0.99);
  for (std::size_t t = 0; t < 5; ++t) {
    const double via = nb.f64(col::kRewards)[t] + nb.f64(col::kDiscount)[t] * (100.0 + nb.f64(col::kNewObs)[t]);
    CHECK(via == doctest::Approx(direct[t]).epsilon(1e-14));
  }
  CHECK(nb.f64(col::kDiscount)[4] == 0.0);
  CHECK(nb.f64(col::kDones)[3] == 1.0);
  CHECK(nb.f64(col::kNewObs)[0] == 3.0);
}

TEST_CASE("epsilon schedule interpolates and clamps") {
  ExplorationSchedule s{1.0, 0.1, 100};
  CHECK(epsilon_at(s, 0) == 1.0);
  CHECK(epsilon_at(s, 100) == 0.1);
  CHECK(epsilon_at(s, 1000) == 0.1);
  CHECK(epsilon_at(s, 50) == doctest::Approx(0.55));
}

// --- losses -------------------------------------------------------------------

TEST_CASE("pg loss is zero with zero advantages") {
  auto f = rldist::testing::random_loss_fixture(3, false);
  f.batch.set_f64(col::kAdvantages, 1, std::vector<double>(f.batch.rows(), 0.0));
  auto l = pg_loss(f.net, f.batch);
  CHECK(l.loss == 0.0);
  for (double g : l.grads.flatten()) CHECK(g == 0.0);
}

TEST_CASE("pg loss of a uniform two-action policy") {
  SampleBatch b;
  b.set_f64(col::kObs, 1, {1.0});
  b.set_i64(col::kActions, 1, {1});
  b.set_f64(col::kAdvantages, 1, {1.0});
  auto net = linear_net({0.0, 0.0}, {0.0, 0.0}, 1, 2);
  CHECK(pg_loss(net, b).loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  b.drop(col::kAdvantages);
  CHECK_THROWS_AS(pg_loss(net, b), MissingColumn);
}

TEST_CASE("loss gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    CHECK(rldist::testing::pg_gradient_error(seed) <= 1e-4);
    CHECK(rldist::testing::ppo_gradient_error(seed) <= 1e-4);
    CHECK(rldist::testing::dqn_gradient_error(seed) <= 1e-4);
  }
}

TEST_CASE("ppo surrogate at the sampling weights is minus the mean advantage") {
  auto f = rldist::testing::random_loss_fixture(5, true);
  const auto logp = tensor::log_softmax_rows(tensor::mlp_predict(f.net, f.batch.matrix(col::kObs)));
  std::vector<double> old(f.batch.rows());
  for (std::size_t i = 0; i < old.size(); ++i) old[i] = logp(i, static_cast<std::size_t>(f.batch.i64(col::kActions)[i]));
  f.batch.set_f64(col::kLogp, 1, old);
  auto l = ppo_clip_loss(f.net, f.value, f.batch, {});
  const auto& adv = f.batch.f64(col::kAdvantages);
  const double mean_adv = std::accumulate(adv.begin(), adv.end(), 0.0) / static_cast<double>(adv.size());
  CHECK(l.surrogate == doctest::Approx(-mean_adv).epsilon(1e-12));
  CHECK(std::abs(l.mean_kl) < 1e-15);
}

TEST_CASE("ppo clip branch caps the ratio") {
  // One row, uniform two-action policy: logp = log 0.5; logp_old chosen so
  // that rho = 1 + 2c.
  const double c = 0.2;
  SampleBatch b;
  b.set_f64(col::kObs, 1, {1.0});
  b.set_i64(col::kActions, 1, {0});
  b.set_f64(col::kAdvantages, 1, {2.0});
  b.set_f64(col::kValueTargets, 1, {0.0});
  b.set_f64(col::kLogp, 1, {std::log(0.5) - std::log(1.0 + 2.0 * c)});
  auto net = linear_net({0.0, 0.0}, {0.0, 0.0}, 1, 2);
  auto value = linear_net({0.0}, {0.0}, 1, 1);
  auto l = ppo_clip_loss(net, value, b, {c, 0.5, 0.0});
  CHECK(l.surrogate == doctest::Approx(-(1.0 + c) * 2.0).epsilon(1e-14));
  for (double g : l.policy_grads.flatten()) CHECK(g == 0.0);
}

TEST_CASE("dqn loss is zero when Q equals the targets") {
  auto f = rldist::testing::random_loss_fixture(2, false);
  const auto q = tensor::mlp_predict(f.net, f.batch.matrix(col::kObs));
  std::vector<double> targets(f.batch.rows());
  for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = q(i, static_cast<std::size_t>(f.batch.i64(col::kActions)[i]));
  auto l = dqn_loss(f.net, f.batch, targets);
  CHECK(l.loss == 0.0);
  for (double td : l.td_errors) CHECK(td == 0.0);
}

TEST_CASE("dqn loss on a single linear transition") {
  // Q(o) = W^T o + b with o = [2], W = [[0.5, -1]], b = [0.1, 0]; action 1:
  // Q = -2, reward 1, discount 0.9, target net max Q(o') at o' = [1]:
  // target Q = [0.25, 0.75] -> 0.75; target = 1 + 0.9*0.75 = 1.675;
  // td = -3.675, huber = 3.675 - 0.5 = 3.175.
  SampleBatch b;
  b.set_f64(col::kObs, 1, {2.0});
  b.set_f64(col::kNewObs, 1, {1.0});
  b.set_i64(col::kActions, 1, {1});
  b.set_f64(col::kRewards, 1, {1.0});
  b.set_f64(col::kDiscount, 1, {0.9});
  auto q = linear_net({0.5, -1.0}, {0.1, 0.0}, 1, 2);
  auto target = linear_net({0.25, 0.75}, {0.0, 0.0}, 1, 2);
  auto targets = dqn_targets(target, b);
  CHECK(targets[0] == doctest::Approx(1.675).epsilon(1e-15));
  auto l = dqn_loss(q, b, targets);
  CHECK(l.td_errors[0] == doctest::Approx(-3.675).epsilon(1e-15));
  CHECK(l.loss == doctest::Approx(3.175).epsilon(1e-15));
  // Gradient: clip(td) = -1 on Q[1]: dW[0][1] = -1 * o = -2, db[1] = -1.
  auto g = l.grads.flatten();
  CHECK(g == std::vector<double>{0.0, -2.0, 0.0, -1.0});
}

// --- graphs -------------------------------------------------------------------

TEST_CASE("zero-weight categorical head acts greedily on the lowest index") {
  GraphConfig cfg;
  cfg.hidden = {4};
  PgGraph g(small_spec(), cfg);
  g.set_weights(std::vector<double>(g.num_weights(), 0.0));
  tensor::Matrix obs(5, 3, 0.7);
  auto out = g.act(obs, false);
  for (double a : out.actions) CHECK(a == 0.0);
  for (double lp : out.aux.at(col::kLogp)) CHECK(lp == doctest::Approx(std::log(0.25)));
}

TEST_CASE("argmax is invariant under positive affine maps of a row") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> z(5);
    for (auto& v : z) v = std::round(n(rng) * 2.0);  // ties are common
    std::vector<double> y(5);
    const double a = std::exp(n(rng)), b = n(rng);
    for (int k = 0; k < 5; ++k) y[k] = a * z[k] + b;
    CHECK(argmax_lowest(z) == argmax_lowest(y));
  }
}

TEST_CASE("dqn with epsilon one picks uniformly") {
  GraphConfig cfg;
  cfg.hidden = {4};
  cfg.seed = 17;
  DqnGraph g(small_spec(), cfg);
  g.set_epsilon_override(1.0);
  tensor::Matrix obs(10000, 3, 0.3);
  auto out = g.act(obs);
  std::vector<long> counts(4, 0);
  for (double a : out.actions) ++counts[static_cast<std::size_t>(a)];
  const std::vector<double> probs(4, 0.25);
  CHECK(rldist::testing::chi_square_gof_p(counts, probs) > 0.01);
}

TEST_CASE("stochastic act is reproducible and weights round trip") {
  for (const char* kind : {"pg", "ppo", "dqn"}) {
    GraphConfig cfg;
    cfg.hidden = {8, 8};
    cfg.seed = 3;
    cfg.exploration = {0.5, 0.5, 1};
    auto a = make_graph(kind, small_spec(), cfg);
    auto b = make_graph(kind, small_spec(), cfg);
    tensor::Matrix obs(20, 3);
    for (std::size_t i = 0; i < obs.data.size(); ++i) obs.data[i] = std::sin(static_cast<double>(i));
    auto oa = a->act(obs);
    auto ob = b->act(obs);
    CHECK(oa.actions == ob.actions);
    CHECK(oa.aux == ob.aux);

    auto before = a->act(obs, false);
    a->set_weights(a->get_weights());
    CHECK(a->act(obs, false).actions == before.actions);
    CHECK(a->get_weights() == b->get_weights());
  }
}

TEST_CASE("per-row generators make vectorized sampling match row-by-row sampling") {
  GraphConfig cfg;
  cfg.hidden = {6};
  PpoGraph g(small_spec(), cfg);
  tensor::Matrix obs(3, 3);
  for (std::size_t i = 0; i < obs.data.size(); ++i) obs.data[i] = 0.1 * static_cast<double>(i);
  std::vector<std::mt19937_64> rngs = {std::mt19937_64(1), std::mt19937_64(2), std::mt19937_64(3)};
  auto together = g.act(obs, rngs);
  for (std::size_t i = 0; i < 3; ++i) {
    std::mt19937_64 single(i + 1);
    auto one = g.act(tensor::slice_rows(obs, i, i + 1), std::span(&single, 1));
    CHECK(one.actions[0] == together.actions[i]);
    CHECK(one.aux.at(col::kLogp)[0] == together.aux.at(col::kLogp)[i]);
  }
}

TEST_CASE("target sync copies weights exactly and changes later targets") {
  GraphConfig cfg;
  cfg.hidden = {5};
  cfg.optimizer = "sgd";
  cfg.lr = 0.5;
  DqnGraph g(envs::EnvSpec{1, envs::DiscreteSpace{2}, 10}, cfg);
  auto batch = g.postprocess(chain_batch(4, true), {});
  const auto target_before = g.get_target_weights();
  const auto loss0 = g.compute_gradients(batch).stats.at("loss");
  for (int k = 0; k < 3; ++k) g.apply_gradients(g.compute_gradients(batch).grads);
  CHECK(g.get_target_weights() == target_before);
  const auto targets_stale = dqn_targets(g.q_target(), batch);
  g.target_sync();
  CHECK(g.get_target_weights() == g.get_weights());
  g.call_utility("target_sync");
  CHECK(g.get_target_weights() == g.get_weights());
  CHECK(g.target_sync_count() == 2);
  const auto targets_fresh = dqn_targets(g.q_target(), batch);
  CHECK(targets_fresh != targets_stale);
  CHECK(g.compute_gradients(batch).stats.at("loss") != loss0);
}

TEST_CASE("utilities either report stats or mutate weights") {
  GraphConfig cfg;
  cfg.hidden = {4};
  cfg.exploration = {1.0, 0.0, 10};
  DqnGraph g(small_spec(), cfg);
  g.set_global_timestep(5);
  auto r = g.call_utility("exploration");
  CHECK(r.kind == UtilityResult::Kind::stats);
  CHECK(r.stats.at("epsilon") == doctest::Approx(0.5));
  CHECK(g.call_utility("target_sync").kind == UtilityResult::Kind::weights);
  CHECK_THROWS_AS(g.call_utility("nope"), ConfigError);
}

TEST_CASE("postprocess keeps row count and order") {
  GraphConfig cfg;
  cfg.hidden = {4};
  for (const char* kind : {"pg", "ppo", "dqn"}) {
    auto g = make_graph(kind, envs::EnvSpec{1, envs::DiscreteSpace{2}, 10}, cfg);
    auto b = chain_batch(7, false);
    b.set_f64(col::kLogp, 1, std::vector<double>(7, std::log(0.5)));
    b.set_f64(col::kVfPreds, 1, std::vector<double>(7, 0.0));
    auto p = g->postprocess(b, {});
    CHECK(p.rows() == 7);
    CHECK(p.i64(col::kTIndex) == b.i64(col::kTIndex));
    CHECK(p.f64(col::kObs) == b.f64(col::kObs));
  }
}

TEST_CASE("pg advantages are per-episode discounted returns") {
  GraphConfig cfg;
  cfg.hidden = {4};
  cfg.gamma = 0.5;
  cfg.normalize_advantages = false;
  PgGraph g(envs::EnvSpec{1, envs::DiscreteSpace{2}, 10}, cfg);
  auto b = chain_batch(3, true);  // rewards 1, 2, 3
  auto p = g.postprocess(b, {});
  CHECK(p.f64(col::kAdvantages) == std::vector<double>{1 + 0.5 * 2 + 0.25 * 3, 2 + 0.5 * 3, 3});
}

TEST_CASE("shared reward adds peer rewards") {
  GraphConfig cfg;
  cfg.hidden = {4};
  cfg.shared_reward = true;
  cfg.normalize_advantages = false;
  PgGraph g(envs::EnvSpec{1, envs::DiscreteSpace{2}, 10}, cfg);
  auto own = chain_batch(3, true);
  auto peer = chain_batch(3, true);
  peer.set_f64(col::kRewards, 1, {10, 20, 30});
  std::vector<SampleBatch> peers = {peer};
  auto p = g.postprocess(own, peers);
  CHECK(p.f64(col::kRewards) == std::vector<double>{11, 22, 33});
  peers[0] = chain_batch(2, true);
  CHECK_THROWS_AS(g.postprocess(own, peers), MisalignedEpisodes);
}

TEST_CASE("graph config validation names the key") {
  CHECK(validate_graph_config(nlohmann::json::object()).empty());
  auto v = validate_graph_config({{"gamma", 1.5}});
  REQUIRE(v.size() == 1);
  CHECK(v[0].find("gamma") == 0);
  CHECK(validate_graph_config({{"bogus", 1}}).size() == 1);
  CHECK_THROWS_AS(parse_graph_config({{"lr", -1}}), ConfigError);
  auto c = parse_graph_config({{"lambda", 0.9}, {"hidden", {16}}});
  CHECK(c.lambda == 0.9);
  CHECK(c.hidden == std::vector<std::size_t>{16});
  CHECK(parse_graph_config(to_json(c)).hidden == c.hidden);
}

TEST_CASE("continuous action spaces are rejected by the reference graphs") {
  envs::EnvSpec cont{3, envs::BoxSpace{1, -2, 2}, 10};
  CHECK_THROWS_AS(make_graph("pg", cont, {}), ConfigError);
  CHECK_THROWS_AS(make_graph("nope", small_spec(), {}), ConfigError);
}
