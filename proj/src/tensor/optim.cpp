#include "rldist/tensor/optim.hpp"

#include <cmath>

namespace rldist::tensor {

void adam_update(std::span<double> params, std::span<const double> grads, AdamState& state, const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw ShapeMismatch("adam: gradient length differs from parameters");
  if (state.m.empty() && state.v.empty() && state.t == 0) state = AdamState::zeros(params.size());
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeMismatch("adam: moment length differs from parameters");
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i] + cfg.l2_coeff * params[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= cfg.stepsize * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
  }
}

void sgd_update(std::span<double> params, std::span<const double> grads, double stepsize) {
  if (params.size() != grads.size()) throw ShapeMismatch("sgd: gradient length differs from parameters");
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= stepsize * grads[i];
}

void axpy(std::span<double> acc, std::span<const double> x, double scale) {
  if (acc.size() != x.size()) throw ShapeMismatch("axpy length mismatch");
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += scale * x[i];
}

namespace {

void check_congruent(const MlpParams& a, const MlpParams& b) {
  if (a.layers.size() != b.layers.size()) throw ShapeMismatch("layer count differs");
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    if (a.layers[i].weight.rows != b.layers[i].weight.rows || a.layers[i].weight.cols != b.layers[i].weight.cols ||
        a.layers[i].bias.size() != b.layers[i].bias.size()) {
      throw ShapeMismatch("layer " + std::to_string(i) + " shape differs");
    }
  }
}

}  // namespace

std::pair<MlpParams, AdamState> adam_step(const MlpParams& params, const GradientSet& grads, AdamState state,
                                          const AdamConfig& cfg) {
  check_congruent(params, grads);
  auto flat = params.flatten();
  adam_update(flat, grads.flatten(), state, cfg);
  MlpParams out = params;
  out.assign_flat(flat);
  return {std::move(out), std::move(state)};
}

MlpParams sgd_step(const MlpParams& params, const GradientSet& grads, double stepsize) {
  check_congruent(params, grads);
  auto flat = params.flatten();
  sgd_update(flat, grads.flatten(), stepsize);
  MlpParams out = params;
  out.assign_flat(flat);
  return out;
}

}  // namespace rldist::tensor
