#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include "rldist/algorithms/trainer.hpp"

namespace rldist::algorithms {

// Index of the highest score; the lowest index wins ties.
std::size_t select_best(std::span<const double> scores);

// Starting points of one outer step: parent + sigma * eps_i per member.
std::vector<std::vector<double>> perturb_population(std::span<const double> parent, std::size_t members,
                                                    double sigma, std::uint64_t seed);

// ES outer loop over a population of PPO trainers hosted in actors. Each
// outer step perturbs the parent, runs inner PPO iterations on every member
// in parallel and re-centres on the best member. The best weights seen so
// far always survive as the parent.
class PpoEsTrainer final : public Trainer {
 public:
  PpoEsTrainer(taskrt::Runtime& rt, TrainerConfig cfg);
  ~PpoEsTrainer() override;

  std::vector<double> get_weights() override { return parent_; }
  void set_weights(const std::vector<double>& weights) override { parent_ = weights; }
  std::vector<double> evaluate(int episodes, std::uint64_t seed) override;

  const std::vector<TrainerRef>& population() const { return population_; }
  double best_score() const { return best_score_; }
  // Config every member trainer was built from.
  TrainerConfig member_config(std::size_t index) const;

 protected:
  StepOutput step() override;

 private:
  std::unique_ptr<policy::PolicyGraph> graph_;
  std::vector<TrainerRef> population_;
  std::vector<double> parent_;
  double best_score_ = -std::numeric_limits<double>::infinity();
};

}  // namespace rldist::algorithms
