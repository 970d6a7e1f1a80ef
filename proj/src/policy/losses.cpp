#include "rldist/policy/losses.hpp"

#include <algorithm>
#include <cmath>

namespace rldist::policy {

namespace {

std::size_t checked_action(std::int64_t a, std::size_t n) {
  if (a < 0 || static_cast<std::size_t>(a) >= n) throw ShapeMismatch("action index out of range for policy head");
  return static_cast<std::size_t>(a);
}

Matrix obs_matrix(const MlpParams& net, const SampleBatch& batch) {
  Matrix obs = batch.matrix(col::kObs);
  if (obs.cols != net.input_dim()) throw ShapeMismatch("obs width does not match network input");
  return obs;
}

}  // namespace

PgLoss pg_loss(const MlpParams& policy, const SampleBatch& batch) {
  const Matrix obs = obs_matrix(policy, batch);
  const auto& actions = batch.i64(col::kActions);
  const auto& adv = batch.f64(col::kAdvantages);
  const std::size_t n = batch.rows();
  PgLoss out;
  if (n == 0) {
    out.grads = tensor::zeros_like(policy);
    return out;
  }
  auto [logits, cache] = tensor::mlp_forward(policy, obs);
  const Matrix logp = tensor::log_softmax_rows(logits);
  Matrix upstream(n, logits.cols);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t a = checked_action(actions[i], logits.cols);
    out.loss -= logp(i, a) * adv[i] * inv_n;
    for (std::size_t j = 0; j < logits.cols; ++j) {
      const double p = std::exp(logp(i, j));
      upstream(i, j) = -adv[i] * inv_n * ((j == a ? 1.0 : 0.0) - p);
    }
  }
  out.grads = tensor::mlp_backward(policy, cache, upstream);
  return out;
}

PpoLoss ppo_clip_loss(const MlpParams& policy, const MlpParams& value, const SampleBatch& batch,
                      const PpoLossConfig& cfg) {
  const Matrix obs = obs_matrix(policy, batch);
  const auto& actions = batch.i64(col::kActions);
  const auto& adv = batch.f64(col::kAdvantages);
  const auto& logp_old = batch.f64(col::kLogp);
  const auto& targets = batch.f64(col::kValueTargets);
  const std::size_t n = batch.rows();
  PpoLoss out;
  if (n == 0) {
    out.policy_grads = tensor::zeros_like(policy);
    out.value_grads = tensor::zeros_like(value);
    return out;
  }
  const double inv_n = 1.0 / static_cast<double>(n);

  auto [logits, pcache] = tensor::mlp_forward(policy, obs);
  const Matrix logp = tensor::log_softmax_rows(logits);
  Matrix pup(n, logits.cols);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t a = checked_action(actions[i], logits.cols);
    const double ratio = std::exp(logp(i, a) - logp_old[i]);
    const double clipped = std::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
    const double unclipped_term = ratio * adv[i];
    const double clipped_term = clipped * adv[i];
    // d(surrogate)/d(logp_a): the unclipped branch carries ratio*A, the clipped one is flat.
    double dlogp = 0.0;
    if (unclipped_term <= clipped_term) {
      out.surrogate -= unclipped_term * inv_n;
      dlogp = -unclipped_term * inv_n;
    } else {
      out.surrogate -= clipped_term * inv_n;
    }
    out.mean_kl += (logp_old[i] - logp(i, a)) * inv_n;

    double entropy = 0.0;
    for (std::size_t j = 0; j < logits.cols; ++j) entropy -= std::exp(logp(i, j)) * logp(i, j);
    out.entropy += entropy * inv_n;
    for (std::size_t j = 0; j < logits.cols; ++j) {
      const double p = std::exp(logp(i, j));
      double g = dlogp * ((j == a ? 1.0 : 0.0) - p);
      g += cfg.entropy_coeff * inv_n * p * (logp(i, j) + entropy);
      pup(i, j) = g;
    }
  }
  out.policy_grads = tensor::mlp_backward(policy, pcache, pup);

  auto [v, vcache] = tensor::mlp_forward(value, obs);
  if (v.cols != 1) throw ShapeMismatch("value network must have one output");
  Matrix vup(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double err = v(i, 0) - targets[i];
    out.vf_loss += err * err * inv_n;
    vup(i, 0) = cfg.vf_coeff * 2.0 * err * inv_n;
  }
  out.value_grads = tensor::mlp_backward(value, vcache, vup);
  out.loss = out.surrogate + cfg.vf_coeff * out.vf_loss - cfg.entropy_coeff * out.entropy;
  return out;
}

double huber(double x, double delta) {
  const double ax = std::abs(x);
  return ax <= delta ? 0.5 * x * x : delta * (ax - 0.5 * delta);
}

std::vector<double> dqn_targets(const MlpParams& target_q, const SampleBatch& batch) {
  const auto& rewards = batch.f64(col::kRewards);
  const auto& discount = batch.f64(col::kDiscount);
  std::vector<double> out(batch.rows());
  if (batch.empty()) return out;
  Matrix next = batch.matrix(col::kNewObs);
  if (next.cols != target_q.input_dim()) throw ShapeMismatch("new_obs width does not match network input");
  const Matrix q = tensor::mlp_predict(target_q, next);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto row = q.row(i);
    out[i] = rewards[i] + discount[i] * *std::max_element(row.begin(), row.end());
  }
  return out;
}

DqnLoss dqn_loss(const MlpParams& q, const SampleBatch& batch, std::span<const double> targets, double huber_delta) {
  const Matrix obs = obs_matrix(q, batch);
  const auto& actions = batch.i64(col::kActions);
  const std::size_t n = batch.rows();
  if (targets.size() != n) throw ShapeMismatch("targets are not row-aligned");
  const std::vector<double>* weights = batch.has(col::kWeights) ? &batch.f64(col::kWeights) : nullptr;
  DqnLoss out;
  out.td_errors.resize(n);
  if (n == 0) {
    out.grads = tensor::zeros_like(q);
    return out;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  auto [values, cache] = tensor::mlp_forward(q, obs);
  Matrix up(n, values.cols, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t a = checked_action(actions[i], values.cols);
    const double td = values(i, a) - targets[i];
    const double w = weights ? (*weights)[i] : 1.0;
    out.td_errors[i] = td;
    out.loss += w * huber(td, huber_delta) * inv_n;
    up(i, a) = w * std::clamp(td, -huber_delta, huber_delta) * inv_n;
  }
  out.grads = tensor::mlp_backward(q, cache, up);
  return out;
}

}  // namespace rldist::policy
