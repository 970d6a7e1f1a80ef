#include "rldist/algorithms/ppo_es.hpp"

#include <numeric>

#include "rldist/algorithms/es.hpp"
#include "rldist/common/error.hpp"
#include "rldist/common/seeds.hpp"

namespace rldist::algorithms {

namespace {

struct MemberOutcome {
  std::vector<IterationResult> results;
  std::vector<double> returns;
  std::vector<double> weights;
};

double mean(const std::vector<double>& xs) {
  return xs.empty() ? 0.0 : std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

}  // namespace

std::size_t select_best(std::span<const double> scores) {
  if (scores.empty()) throw ShapeMismatch("no scores to select from");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

std::vector<std::vector<double>> perturb_population(std::span<const double> parent, std::size_t members,
                                                    double sigma, std::uint64_t seed) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < members; ++i) {
    std::vector<double> theta(parent.begin(), parent.end());
    if (sigma > 0.0) tensor::axpy(theta, noise_vector(derive_seed(seed, i), theta.size()), sigma);
    out.push_back(std::move(theta));
  }
  return out;
}

TrainerConfig PpoEsTrainer::member_config(std::size_t index) const {
  TrainerConfig m = cfg_;
  m.algorithm = "ppo";
  m.seed = derive_seed(cfg_.seed, 1000 + index) >> 1;
  m.optimizer_params["seed"] = m.seed;
  return m;
}

PpoEsTrainer::PpoEsTrainer(taskrt::Runtime& rt, TrainerConfig cfg) : Trainer(rt, std::move(cfg)) {
  graph_ = policy::make_graph("ppo", envs::env_spec(cfg_.env, cfg_.env_config), cfg_.graph_config());
  parent_ = graph_->get_weights();
  for (std::size_t i = 0; i < cfg_.ppo_es.population; ++i) {
    population_.push_back(rt_.spawn<TrainerActor>(taskrt::ResourceClaim{}, member_config(i)));
  }
}

PpoEsTrainer::~PpoEsTrainer() {
  for (const auto& m : population_) rt_.terminate(m);
}

std::vector<double> PpoEsTrainer::evaluate(int episodes, std::uint64_t seed) {
  graph_->set_weights(parent_);
  return evaluation::rollout_returns(*graph_, cfg_.env, cfg_.env_config, episodes, seed, false);
}

Trainer::StepOutput PpoEsTrainer::step() {
  const auto iter = static_cast<std::uint64_t>(iteration() + 1);
  const auto starts = perturb_population(parent_, population_.size(), cfg_.ppo_es.sigma_outer,
                                         derive_seed(cfg_.seed, 2 * iter));
  const std::uint64_t eval_seed = derive_seed(cfg_.seed, 2 * iter + 1);
  const int inner = cfg_.ppo_es.inner_iterations;
  const int episodes = cfg_.ppo_es.eval_episodes;

  std::vector<taskrt::Future<MemberOutcome>> futures;
  for (std::size_t i = 0; i < population_.size(); ++i) {
    futures.push_back(rt_.invoke(population_[i], "ppo_es_inner",
                                 [theta = starts[i], inner, episodes, eval_seed](TrainerActor& a) {
                                   Trainer& t = a.trainer();
                                   t.set_weights(theta);
                                   MemberOutcome o;
                                   o.results = a.train(inner);
                                   o.returns = t.evaluate(episodes, eval_seed);
                                   o.weights = t.get_weights();
                                   return o;
                                 }));
  }

  StepOutput out;
  std::vector<double> scores;
  std::vector<const MemberOutcome*> outcomes;
  for (const auto& f : futures) {
    const MemberOutcome& o = f.get();
    outcomes.push_back(&o);
    scores.push_back(mean(o.returns));
    for (const auto& r : o.results) {
      out.stats.accumulate(r.optimizer);
      out.timesteps += r.optimizer.samples_collected;
    }
    out.episodes.returns.insert(out.episodes.returns.end(), o.returns.begin(), o.returns.end());
  }
  const std::size_t best = select_best(scores);
  const bool improved = scores[best] > best_score_;
  if (improved) {
    best_score_ = scores[best];
    parent_ = outcomes[best]->weights;
  }
  out.info["scores"] = scores;
  out.info["best_index"] = best;
  out.info["recentered"] = improved;
  out.info["population_best"] = best_score_;
  return out;
}

}  // namespace rldist::algorithms
