#include "rldist/tensor/mlp.hpp"

#include <cmath>
#include <random>

#include "rldist/tensor/kernels.hpp"

namespace rldist::tensor {

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

void MlpParams::append_flat(std::vector<double>& out) const {
  out.reserve(out.size() + parameter_count());
  for (const auto& l : layers) {
    out.insert(out.end(), l.weight.data.begin(), l.weight.data.end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
}

std::vector<double> MlpParams::flatten() const {
  std::vector<double> out;
  append_flat(out);
  return out;
}

std::span<const double> MlpParams::assign_flat(std::span<const double> flat) {
  if (flat.size() < parameter_count()) throw ShapeMismatch("flat parameter vector too short");
  for (auto& l : layers) {
    std::copy_n(flat.begin(), l.weight.size(), l.weight.data.begin());
    flat = flat.subspan(l.weight.size());
    std::copy_n(flat.begin(), l.bias.size(), l.bias.begin());
    flat = flat.subspan(l.bias.size());
  }
  return flat;
}

MlpParams init_mlp(std::span<const std::size_t> dims, std::uint64_t seed) {
  if (dims.size() < 2) throw ShapeMismatch("an MLP needs at least input and output dims");
  std::mt19937_64 rng(seed);
  MlpParams p;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(dims[i]));
    std::uniform_real_distribution<double> u(-bound, bound);
    Layer l{Matrix(dims[i], dims[i + 1]), std::vector<double>(dims[i + 1], 0.0)};
    for (auto& w : l.weight.data) w = u(rng);
    p.layers.push_back(std::move(l));
  }
  return p;
}

MlpParams zeros_like(const MlpParams& params) {
  MlpParams z;
  for (const auto& l : params.layers) {
    z.layers.push_back({Matrix(l.weight.rows, l.weight.cols), std::vector<double>(l.bias.size(), 0.0)});
  }
  return z;
}

std::pair<Matrix, ForwardCache> mlp_forward(const MlpParams& params, const Matrix& inputs) {
  if (params.layers.empty()) throw ShapeMismatch("empty MLP");
  if (inputs.cols != params.input_dim()) {
    throw ShapeMismatch("input has " + std::to_string(inputs.cols) + " columns, network expects " +
                        std::to_string(params.input_dim()));
  }
  ForwardCache cache;
  cache.layer_inputs.reserve(params.layers.size());
  Matrix act = inputs;
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    const auto& layer = params.layers[li];
    Matrix z = kernels::matmul(act, layer.weight);
    const bool hidden = li + 1 < params.layers.size();
    for (std::size_t r = 0; r < z.rows; ++r) {
      auto row = z.row(r);
      for (std::size_t c = 0; c < z.cols; ++c) {
        row[c] += layer.bias[c];
        if (hidden) row[c] = std::tanh(row[c]);
      }
    }
    cache.layer_inputs.push_back(std::move(act));
    act = std::move(z);
  }
  return {std::move(act), std::move(cache)};
}

Matrix mlp_predict(const MlpParams& params, const Matrix& inputs) { return mlp_forward(params, inputs).first; }

GradientSet mlp_backward(const MlpParams& params, const ForwardCache& cache, const Matrix& upstream) {
  if (cache.layer_inputs.size() != params.layers.size()) throw ShapeMismatch("cache does not match network");
  const std::size_t batch = cache.layer_inputs.front().rows;
  if (upstream.rows != batch || upstream.cols != params.output_dim()) {
    throw ShapeMismatch("upstream gradient shape differs from forward output");
  }
  GradientSet grads = zeros_like(params);
  Matrix delta = upstream;  // d(objective)/d(pre-activation) of the current layer
  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const Matrix& in = cache.layer_inputs[li];
    grads.layers[li].weight = kernels::matmul_tn(in, delta);
    auto& gb = grads.layers[li].bias;
    for (std::size_t r = 0; r < delta.rows; ++r) {
      auto row = delta.row(r);
      for (std::size_t c = 0; c < delta.cols; ++c) gb[c] += row[c];
    }
    if (li == 0) break;
    Matrix prev = kernels::matmul_nt(delta, params.layers[li].weight);
    // `in` is the tanh output of the layer below.
    for (std::size_t i = 0; i < prev.data.size(); ++i) prev.data[i] *= 1.0 - in.data[i] * in.data[i];
    delta = std::move(prev);
  }
  return grads;
}

std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& loss,
                                     std::span<const double> params, double epsilon) {
  if (!(epsilon > 0.0)) throw ShapeMismatch("finite difference epsilon must be positive");
  std::vector<double> theta(params.begin(), params.end());
  std::vector<double> grad(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double saved = theta[i];
    theta[i] = saved + epsilon;
    const double up = loss(theta);
    theta[i] = saved - epsilon;
    const double down = loss(theta);
    theta[i] = saved;
    grad[i] = (up - down) / (2.0 * epsilon);
  }
  return grad;
}

GradientSet finite_diff_grad(const std::function<double(const MlpParams&)>& loss, const MlpParams& params,
                             double epsilon) {
  MlpParams scratch = params;
  auto flat = finite_diff_grad(
      [&](std::span<const double> theta) {
        scratch.assign_flat(theta);
        return loss(scratch);
      },
      params.flatten(), epsilon);
  GradientSet g = zeros_like(params);
  g.assign_flat(flat);
  return g;
}

}  // namespace rldist::tensor
