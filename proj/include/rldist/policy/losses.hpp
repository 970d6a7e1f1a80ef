#pragma once

#include <span>
#include <vector>

#include "rldist/evaluation/sample_batch.hpp"
#include "rldist/tensor/mlp.hpp"

namespace rldist::policy {

using tensor::GradientSet;
using tensor::Matrix;
using tensor::MlpParams;

// Batch columns read: obs, actions, advantages.
// loss = -mean(log pi(a|o) * A)
struct PgLoss {
  double loss = 0.0;
  GradientSet grads;
};
PgLoss pg_loss(const MlpParams& policy, const SampleBatch& batch);

struct PpoLossConfig {
  double clip = 0.2;
  double vf_coeff = 0.5;
  double entropy_coeff = 0.0;
};

// Batch columns read: obs, actions, advantages, logp (at sampling time),
// value_targets.
// loss = -mean(min(rho*A, clip(rho, 1-c, 1+c)*A)) + vf_coeff*mean((V-target)^2)
//        - entropy_coeff*mean(H)
struct PpoLoss {
  double loss = 0.0;
  double surrogate = 0.0;
  double vf_loss = 0.0;  // mean squared error before vf_coeff
  double entropy = 0.0;
  double mean_kl = 0.0;  // sample estimate of KL(old || new)
  GradientSet policy_grads;
  GradientSet value_grads;
};
PpoLoss ppo_clip_loss(const MlpParams& policy, const MlpParams& value, const SampleBatch& batch,
                      const PpoLossConfig& cfg);

double huber(double x, double delta = 1.0);

// rewards + discount * max_a Q_target(new_obs, a). Batch columns read:
// rewards, new_obs, discount.
std::vector<double> dqn_targets(const MlpParams& target_q, const SampleBatch& batch);

// loss = mean(w * huber(Q(o, a) - target)); w is the optional weights column.
struct DqnLoss {
  double loss = 0.0;
  GradientSet grads;
  std::vector<double> td_errors;  // Q(o, a) - target per row
};
DqnLoss dqn_loss(const MlpParams& q, const SampleBatch& batch, std::span<const double> targets,
                 double huber_delta = 1.0);

}  // namespace rldist::policy
