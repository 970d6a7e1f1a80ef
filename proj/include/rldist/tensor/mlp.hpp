#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "rldist/tensor/matrix.hpp"

namespace rldist::tensor {

struct Layer {
  Matrix weight;  // fan_in x fan_out
  std::vector<double> bias;
  friend bool operator==(const Layer&, const Layer&) = default;
};

// Fully connected net: tanh on hidden layers, linear output.
struct MlpParams {
  std::vector<Layer> layers;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().weight.rows; }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().weight.cols; }
  std::size_t parameter_count() const;

  // Layer by layer: weights row-major, then bias.
  std::vector<double> flatten() const;
  void append_flat(std::vector<double>& out) const;
  // Reads parameter_count() values starting at `flat`; returns the rest.
  std::span<const double> assign_flat(std::span<const double> flat);

  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

// Gradients share the parameter layout.
using GradientSet = MlpParams;

// dims = {input, hidden..., output}. Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
// biases zero.
MlpParams init_mlp(std::span<const std::size_t> dims, std::uint64_t seed);
MlpParams zeros_like(const MlpParams& params);

// Activation record: input to each layer plus the network output.
struct ForwardCache {
  std::vector<Matrix> layer_inputs;
};

std::pair<Matrix, ForwardCache> mlp_forward(const MlpParams& params, const Matrix& inputs);
Matrix mlp_predict(const MlpParams& params, const Matrix& inputs);

// Reverse-mode gradient of sum(outputs .* upstream) with respect to params.
GradientSet mlp_backward(const MlpParams& params, const ForwardCache& cache, const Matrix& upstream);

// Central differences, one coordinate at a time.
std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& loss,
                                     std::span<const double> params, double epsilon);
GradientSet finite_diff_grad(const std::function<double(const MlpParams&)>& loss, const MlpParams& params,
                             double epsilon);

}  // namespace rldist::tensor

namespace rldist::taskrt {

// Weight checkpoint: layer count, then per layer (rows, cols, weights, bias).
template <>
struct Codec<tensor::MlpParams> {
  static constexpr std::uint32_t tag = tags::kMlpParams;
  static void encode(const tensor::MlpParams& p, ByteWriter& w) {
    w.put<std::uint64_t>(p.layers.size());
    for (const auto& l : p.layers) {
      w.put<std::uint64_t>(l.weight.rows);
      w.put<std::uint64_t>(l.weight.cols);
      w.put_array<double>(l.weight.data);
      w.put_array<double>(l.bias);
    }
  }
  static tensor::MlpParams decode(ByteReader& r) {
    tensor::MlpParams p;
    const auto n = r.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < n; ++i) {
      const auto rows = r.get<std::uint64_t>();
      const auto cols = r.get<std::uint64_t>();
      auto w = r.get_array<double>();
      auto b = r.get_array<double>();
      if (w.size() != rows * cols || b.size() != cols) throw CorruptPayload("layer dimensions do not match data");
      if (!p.layers.empty() && p.layers.back().weight.cols != rows) throw CorruptPayload("layer dimensions do not chain");
      p.layers.push_back({tensor::Matrix(rows, cols, std::move(w)), std::move(b)});
    }
    return p;
  }
};

}  // namespace rldist::taskrt
