#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "rldist/taskrt/framing.hpp"

namespace rldist::tensor {

// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

// Rows [begin, end) as a new matrix.
Matrix slice_rows(const Matrix& m, std::size_t begin, std::size_t end);
// Selected rows, in the order given.
Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows);

// Numerically stabilized row-wise log-softmax (row max subtracted first).
Matrix log_softmax_rows(const Matrix& logits);

bool all_finite(std::span<const double> values);

}  // namespace rldist::tensor

namespace rldist::taskrt {

template <>
struct Codec<tensor::Matrix> {
  static constexpr std::uint32_t tag = tags::kMatrix;
  static void encode(const tensor::Matrix& m, ByteWriter& w) {
    w.put<std::uint64_t>(m.rows);
    w.put<std::uint64_t>(m.cols);
    w.put_array<double>(m.data);
  }
  static tensor::Matrix decode(ByteReader& r) {
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    auto data = r.get_array<double>();
    if (data.size() != rows * cols) throw CorruptPayload("matrix dimensions do not match data");
    return tensor::Matrix(rows, cols, std::move(data));
  }
  static std::size_t size(const tensor::Matrix& m) { return 24 + 8 * m.data.size(); }
};

}  // namespace rldist::taskrt
