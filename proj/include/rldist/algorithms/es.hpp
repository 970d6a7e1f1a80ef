#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "rldist/algorithms/trainer.hpp"
#include "rldist/tensor/optim.hpp"

namespace rldist::algorithms {

// rank / (n - 1) - 0.5 with ties sharing their average rank. Sums to zero and
// lies in [-0.5, 0.5]. A single value maps to 0.
std::vector<double> centered_ranks(std::span<const double> x);

// Standard normal noise for one perturbation seed.
std::vector<double> noise_vector(std::uint64_t seed, std::size_t dim);

// Perturbation i uses noise seeds[i / 2] with sign +1 for even i and -1 for
// odd i, so perturbations always come in antithetic pairs.
struct PerturbationTable {
  double sigma = 0.02;
  std::vector<std::uint64_t> seeds;

  std::size_t size() const { return 2 * seeds.size(); }
  std::uint64_t seed_of(std::size_t i) const { return seeds[i / 2]; }
  int sign_of(std::size_t i) const { return i % 2 == 0 ? 1 : -1; }
  // theta + sign * sigma * eps
  std::vector<double> perturbed(std::span<const double> theta, std::size_t i) const;
};

// Throws ConfigError unless n is even and positive and sigma > 0.
PerturbationTable make_perturbations(std::uint64_t seed, std::size_t n, double sigma);

// g = 1/(n sigma) * sum_i F_i sign_i eps_i, with F rank-shaped when `shape`.
std::vector<double> es_gradient(const PerturbationTable& table, std::span<const double> fitness, std::size_t dim,
                                bool shape = true);

// Ascent step: Adam on (-g + l2 * theta).
void es_update(std::vector<double>& theta, std::span<const double> g, tensor::AdamState& adam, const EsConfig& cfg);

using FitnessFn = std::function<double(std::span<const double>)>;

// ES over an arbitrary fitness function, evaluated in the calling thread.
class EsOptimizer {
 public:
  EsOptimizer(std::vector<double> theta, EsConfig cfg, std::uint64_t seed);

  struct StepInfo {
    std::vector<double> gradient;
    std::vector<double> fitness;
  };
  StepInfo step(const FitnessFn& f);

  const std::vector<double>& theta() const { return theta_; }
  std::int64_t steps() const { return steps_; }

 private:
  std::vector<double> theta_;
  EsConfig cfg_;
  std::uint64_t seed_;
  tensor::AdamState adam_;
  std::int64_t steps_ = 0;
};

struct EsEpisodes {
  std::vector<double> fitness;  // one per requested perturbation, in order
  std::vector<std::int64_t> lengths;
  std::vector<double> returns;  // every episode
};

// Handle to the shared parameter vector. Wrapped so an aggregator can pass
// the reference on to its workers instead of receiving the payload.
struct ThetaHandle {
  taskrt::ObjectRef<std::vector<double>> ref;
};

// Leaf of the ES tree: rolls out perturbed greedy policies.
class EsWorker {
 public:
  explicit EsWorker(TrainerConfig cfg);
  EsEpisodes evaluate(const std::vector<double>& theta, const PerturbationTable& table,
                      const std::vector<std::size_t>& indices, std::uint64_t episode_seed);

 private:
  TrainerConfig cfg_;
  std::unique_ptr<policy::PolicyGraph> graph_;
  std::unique_ptr<envs::Env> env_;
};

using EsWorkerRef = taskrt::ActorRef<EsWorker>;

// Intermediate node: spawns its own workers and fans a request out to them.
class EsAggregator {
 public:
  EsAggregator(taskrt::ActorContext& ctx, TrainerConfig cfg, std::size_t workers);
  ~EsAggregator();
  // indices are split into contiguous chunks, one per worker.
  EsEpisodes evaluate(const ThetaHandle& theta, const PerturbationTable& table,
                      const std::vector<std::size_t>& indices, std::uint64_t episode_seed);
  std::size_t num_workers() const { return workers_.size(); }

 private:
  taskrt::Runtime& rt_;
  std::vector<EsWorkerRef> workers_;
};

using EsAggregatorRef = taskrt::ActorRef<EsAggregator>;

// Splits [0, n) into `parts` contiguous chunks whose sizes differ by at most 1.
std::vector<std::vector<std::size_t>> split_indices(std::size_t n, std::size_t parts);

// ES on a policy network. num_evaluators workers; with more workers than
// es.aggregators the workers hang below es.aggregators intermediate actors.
class EsTrainer final : public Trainer {
 public:
  EsTrainer(taskrt::Runtime& rt, TrainerConfig cfg);
  ~EsTrainer() override;

  std::vector<double> get_weights() override { return theta_; }
  void set_weights(const std::vector<double>& weights) override;
  std::vector<double> evaluate(int episodes, std::uint64_t seed) override;

  bool uses_aggregation_tree() const { return !aggregators_.empty(); }

 protected:
  StepOutput step() override;

 private:
  std::unique_ptr<policy::PolicyGraph> graph_;
  std::vector<double> theta_;
  tensor::AdamState adam_;
  std::vector<EsWorkerRef> workers_;
  std::vector<EsAggregatorRef> aggregators_;
};

}  // namespace rldist::algorithms
