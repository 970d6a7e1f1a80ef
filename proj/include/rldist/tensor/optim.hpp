#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "rldist/tensor/mlp.hpp"

namespace rldist::tensor {

struct AdamConfig {
  double stepsize = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double l2_coeff = 0.0;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t t = 0;

  static AdamState zeros(std::size_t n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0}; }
};

// Bias-corrected Adam on l2_coeff * params + grads. Updates in place.
void adam_update(std::span<double> params, std::span<const double> grads, AdamState& state, const AdamConfig& cfg);

// theta -= stepsize * grads, in place.
void sgd_update(std::span<double> params, std::span<const double> grads, double stepsize);

// Value forms over MLP parameters.
std::pair<MlpParams, AdamState> adam_step(const MlpParams& params, const GradientSet& grads, AdamState state,
                                          const AdamConfig& cfg);
MlpParams sgd_step(const MlpParams& params, const GradientSet& grads, double stepsize);

// acc += scale * x
void axpy(std::span<double> acc, std::span<const double> x, double scale);

}  // namespace rldist::tensor
