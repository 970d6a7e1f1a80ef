#include "rldist/algorithms/es.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "rldist/common/error.hpp"
#include "rldist/common/seeds.hpp"

namespace rldist::algorithms {

std::vector<double> centered_ranks(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<double> out(n, 0.0);
  if (n < 2) return out;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j);
    for (std::size_t k = i; k <= j; ++k) out[order[k]] = rank / static_cast<double>(n - 1) - 0.5;
    i = j + 1;
  }
  return out;
}

std::vector<double> noise_vector(std::uint64_t seed, std::size_t dim) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> eps(dim);
  for (auto& e : eps) e = n(rng);
  return eps;
}

std::vector<double> PerturbationTable::perturbed(std::span<const double> theta, std::size_t i) const {
  const auto eps = noise_vector(seed_of(i), theta.size());
  const double scale = sign_of(i) * sigma;
  std::vector<double> out(theta.begin(), theta.end());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += scale * eps[k];
  return out;
}

PerturbationTable make_perturbations(std::uint64_t seed, std::size_t n, double sigma) {
  if (n == 0 || n % 2 != 0) throw ConfigError("perturbation count must be even and positive");
  if (!(sigma > 0.0)) throw ConfigError("noise stddev must be > 0");
  PerturbationTable t;
  t.sigma = sigma;
  for (std::size_t p = 0; p < n / 2; ++p) t.seeds.push_back(derive_seed(seed, p));
  return t;
}

std::vector<double> es_gradient(const PerturbationTable& table, std::span<const double> fitness, std::size_t dim,
                                bool shape) {
  if (fitness.size() != table.size()) throw ShapeMismatch("one fitness value per perturbation expected");
  const std::vector<double> f = shape ? centered_ranks(fitness) : std::vector<double>(fitness.begin(), fitness.end());
  std::vector<double> g(dim, 0.0);
  // Pairs share their noise: add (F+ - F-) eps once per pair.
  for (std::size_t p = 0; p < table.seeds.size(); ++p) {
    const double w = f[2 * p] - f[2 * p + 1];
    if (w == 0.0) continue;
    tensor::axpy(g, noise_vector(table.seeds[p], dim), w);
  }
  const double scale = 1.0 / (static_cast<double>(table.size()) * table.sigma);
  for (auto& v : g) v *= scale;
  return g;
}

void es_update(std::vector<double>& theta, std::span<const double> g, tensor::AdamState& adam, const EsConfig& cfg) {
  std::vector<double> neg(g.begin(), g.end());
  for (auto& v : neg) v = -v;
  if (adam.m.size() != theta.size()) adam = tensor::AdamState::zeros(theta.size());
  tensor::AdamConfig ac;
  ac.stepsize = cfg.stepsize;
  ac.l2_coeff = cfg.l2;
  tensor::adam_update(theta, neg, adam, ac);
}

EsOptimizer::EsOptimizer(std::vector<double> theta, EsConfig cfg, std::uint64_t seed)
    : theta_(std::move(theta)), cfg_(cfg), seed_(seed), adam_(tensor::AdamState::zeros(theta_.size())) {}

EsOptimizer::StepInfo EsOptimizer::step(const FitnessFn& f) {
  const auto table = make_perturbations(derive_seed(seed_, static_cast<std::uint64_t>(steps_)),
                                        cfg_.num_perturbations, cfg_.sigma);
  StepInfo info;
  info.fitness.reserve(table.size());
  for (std::size_t i = 0; i < table.size(); ++i) info.fitness.push_back(f(table.perturbed(theta_, i)));
  info.gradient = es_gradient(table, info.fitness, theta_.size());
  es_update(theta_, info.gradient, adam_, cfg_);
  ++steps_;
  return info;
}

// --- actors -----------------------------------------------------------------------

namespace {

std::unique_ptr<policy::PolicyGraph> es_policy(const TrainerConfig& cfg) {
  return policy::make_graph("pg", envs::env_spec(cfg.env, cfg.env_config), cfg.graph_config());
}

void append(EsEpisodes& into, const EsEpisodes& part) {
  into.fitness.insert(into.fitness.end(), part.fitness.begin(), part.fitness.end());
  into.lengths.insert(into.lengths.end(), part.lengths.begin(), part.lengths.end());
  into.returns.insert(into.returns.end(), part.returns.begin(), part.returns.end());
}

}  // namespace

std::vector<std::vector<std::size_t>> split_indices(std::size_t n, std::size_t parts) {
  std::vector<std::vector<std::size_t>> out(parts);
  std::size_t next = 0;
  for (std::size_t p = 0; p < parts; ++p) {
    const std::size_t take = n / parts + (p < n % parts ? 1 : 0);
    for (std::size_t k = 0; k < take; ++k) out[p].push_back(next++);
  }
  return out;
}

EsWorker::EsWorker(TrainerConfig cfg)
    : cfg_(std::move(cfg)), graph_(es_policy(cfg_)), env_(envs::make_env(cfg_.env, cfg_.env_config)) {}

EsEpisodes EsWorker::evaluate(const std::vector<double>& theta, const PerturbationTable& table,
                              const std::vector<std::size_t>& indices, std::uint64_t episode_seed) {
  EsEpisodes out;
  for (std::size_t i : indices) {
    graph_->set_weights(table.perturbed(theta, i));
    double fitness = 0.0;
    for (int e = 0; e < cfg_.es.episodes_per_perturbation; ++e) {
      auto obs = env_->reset(episode_seed + static_cast<std::uint64_t>(e));
      double total = 0.0;
      std::int64_t len = 0;
      for (;;) {
        const auto act = graph_->act(tensor::Matrix(1, obs.size(), obs), false);
        auto r = env_->step(std::span<const double>(act.actions));
        total += r.reward;
        ++len;
        if (r.done) break;
        obs = std::move(r.obs);
      }
      fitness += total;
      out.returns.push_back(total);
      out.lengths.push_back(len);
    }
    out.fitness.push_back(fitness / cfg_.es.episodes_per_perturbation);
  }
  return out;
}

EsAggregator::EsAggregator(taskrt::ActorContext& ctx, TrainerConfig cfg, std::size_t workers) : rt_(ctx.runtime) {
  for (std::size_t w = 0; w < workers; ++w) workers_.push_back(rt_.spawn<EsWorker>(taskrt::ResourceClaim{}, cfg));
}

EsAggregator::~EsAggregator() {
  for (const auto& w : workers_) rt_.terminate(w);
}

EsEpisodes EsAggregator::evaluate(const ThetaHandle& theta, const PerturbationTable& table,
                                  const std::vector<std::size_t>& indices, std::uint64_t episode_seed) {
  const auto chunks = split_indices(indices.size(), workers_.size());
  std::vector<taskrt::Future<EsEpisodes>> futures;
  for (std::size_t w = 0; w < workers_.size(); ++w) {
    std::vector<std::size_t> mine;
    for (std::size_t k : chunks[w]) mine.push_back(indices[k]);
    futures.push_back(rt_.invoke(
        workers_[w], "es_evaluate",
        [table, mine, episode_seed](EsWorker& worker, const std::vector<double>& th) {
          return worker.evaluate(th, table, mine, episode_seed);
        },
        theta.ref));
  }
  EsEpisodes out;
  for (const auto& f : futures) append(out, f.get());
  return out;
}

// --- trainer ------------------------------------------------------------------------

EsTrainer::EsTrainer(taskrt::Runtime& rt, TrainerConfig cfg)
    : Trainer(rt, std::move(cfg)), graph_(es_policy(cfg_)), theta_(graph_->get_weights()) {
  adam_ = tensor::AdamState::zeros(theta_.size());
  const std::size_t n = cfg_.num_evaluators;
  if (n > cfg_.es.aggregators) {
    for (const auto& share : split_indices(n, cfg_.es.aggregators)) {
      aggregators_.push_back(rt_.spawn<EsAggregator>(taskrt::ResourceClaim{}, cfg_, share.size()));
    }
  } else {
    for (std::size_t w = 0; w < n; ++w) workers_.push_back(rt_.spawn<EsWorker>(taskrt::ResourceClaim{}, cfg_));
  }
}

EsTrainer::~EsTrainer() {
  for (const auto& a : aggregators_) rt_.terminate(a);
  for (const auto& w : workers_) rt_.terminate(w);
}

void EsTrainer::set_weights(const std::vector<double>& weights) {
  if (weights.size() != theta_.size()) throw ShapeMismatch("ES weight vector has the wrong length");
  theta_ = weights;
}

std::vector<double> EsTrainer::evaluate(int episodes, std::uint64_t seed) {
  graph_->set_weights(theta_);
  return evaluation::rollout_returns(*graph_, cfg_.env, cfg_.env_config, episodes, seed, false);
}

Trainer::StepOutput EsTrainer::step() {
  const auto iter = static_cast<std::uint64_t>(iteration() + 1);
  const auto table = make_perturbations(derive_seed(cfg_.seed, 2 * iter), cfg_.es.num_perturbations, cfg_.es.sigma);
  const std::uint64_t episode_seed = derive_seed(cfg_.seed, 2 * iter + 1);
  const ThetaHandle theta{rt_.put(theta_)};
  const std::size_t total_workers = cfg_.num_evaluators;
  const auto chunks = split_indices(table.size(), total_workers);

  std::vector<taskrt::Future<EsEpisodes>> futures;
  if (!aggregators_.empty()) {
    std::size_t w = 0;
    for (const auto& share : split_indices(total_workers, aggregators_.size())) {
      std::vector<std::size_t> mine;
      for (std::size_t k = 0; k < share.size(); ++k, ++w) mine.insert(mine.end(), chunks[w].begin(), chunks[w].end());
      futures.push_back(rt_.invoke(aggregators_[futures.size()], "es_evaluate",
                                   [theta, table, mine, episode_seed](EsAggregator& a) {
                                     return a.evaluate(theta, table, mine, episode_seed);
                                   }));
    }
  } else {
    for (std::size_t w = 0; w < workers_.size(); ++w) {
      futures.push_back(rt_.invoke(
          workers_[w], "es_evaluate",
          [table, mine = chunks[w], episode_seed](EsWorker& worker, const std::vector<double>& th) {
            return worker.evaluate(th, table, mine, episode_seed);
          },
          theta.ref));
    }
  }
  EsEpisodes all;
  for (const auto& f : futures) append(all, f.get());

  StepOutput out;
  const auto t0 = std::chrono::steady_clock::now();
  const auto g = es_gradient(table, all.fitness, theta_.size());
  es_update(theta_, g, adam_, cfg_.es);
  out.stats.timings["update"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.stats.grad_steps_applied = 1;
  for (auto l : all.lengths) out.timesteps += static_cast<std::uint64_t>(l);
  out.stats.samples_collected = out.timesteps;
  out.episodes.returns = all.returns;
  out.episodes.lengths = all.lengths;
  double norm = 0.0;
  for (double v : g) norm += v * v;
  out.info["grad_norm"] = std::sqrt(norm);
  out.info["fitness_mean"] = std::accumulate(all.fitness.begin(), all.fitness.end(), 0.0) /
                             static_cast<double>(all.fitness.size());
  out.info["aggregation_levels"] = aggregators_.empty() ? 1 : 2;
  return out;
}

}  // namespace rldist::algorithms
