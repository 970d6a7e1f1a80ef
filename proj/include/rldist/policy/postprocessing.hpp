#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "rldist/evaluation/sample_batch.hpp"

namespace rldist::policy {

struct AdvantageConfig {
  double gamma = 0.99;
  double lambda = 0.95;
};

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> value_targets;
};

// delta_t = r_t + gamma * V_{t+1} * (1 - done_t) - V_t, with V_{T} = bootstrap_value;
// A_t = sum_l (gamma*lambda)^l delta_{t+l}, restarted after every done.
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> value_preds,
                      std::span<const double> dones, double bootstrap_value, const AdvantageConfig& cfg);

// bootstrap[i] estimates the value of observation i; bootstrap has rows+1
// entries, the last one for the state after the final row.
// target_t = sum_{k<m} gamma^k r_{t+k} + gamma^m * bootstrap_{t+m}, where
// m = min(n, rows - t); the bootstrap term is dropped once a done is hit.
std::vector<double> n_step_returns(std::span<const double> rewards, std::span<const double> dones,
                                   std::span<const double> bootstrap, int n, double gamma);

struct ExplorationSchedule {
  double eps_start = 1.0;
  double eps_end = 0.02;
  std::int64_t decay_steps = 10000;
};

double epsilon_at(const ExplorationSchedule& schedule, std::int64_t t);

// [begin, end) row ranges of consecutive rows sharing an eps_id.
std::vector<std::pair<std::size_t, std::size_t>> episode_segments(const SampleBatch& batch);

// Rewrites one-step transitions into n-step form, per episode segment:
// rewards become discounted n-step sums, new_obs the observation after the
// last summed step, dones whether a terminal was reached, and the discount
// column the bootstrap factor (gamma^m, or 0 after a terminal).
SampleBatch n_step_transform(const SampleBatch& batch, int n, double gamma);

// Subtract the mean and divide by the standard deviation (no-op scale when
// the deviation is ~0).
void standardize(std::vector<double>& values);

}  // namespace rldist::policy
