#include "rldist/tensor/matrix.hpp"

#include <algorithm>
#include <cmath>

namespace rldist::tensor {

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != r * c) throw ShapeMismatch("matrix data length does not equal rows*cols");
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m;
  m.rows = rows.size();
  m.cols = rows.size() == 0 ? 0 : rows.begin()->size();
  for (const auto& r : rows) {
    if (r.size() != m.cols) throw ShapeMismatch("ragged rows");
    m.data.insert(m.data.end(), r.begin(), r.end());
  }
  return m;
}

Matrix slice_rows(const Matrix& m, std::size_t begin, std::size_t end) {
  if (begin > end || end > m.rows) throw ShapeMismatch("row slice out of range");
  Matrix out(end - begin, m.cols);
  std::copy(m.data.begin() + static_cast<std::ptrdiff_t>(begin * m.cols),
            m.data.begin() + static_cast<std::ptrdiff_t>(end * m.cols), out.data.begin());
  return out;
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), m.cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= m.rows) throw ShapeMismatch("row index out of range");
    std::copy_n(m.row(rows[i]).begin(), m.cols, out.row(i).begin());
  }
  return out;
}

Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows, logits.cols);
  for (std::size_t r = 0; r < logits.rows; ++r) {
    auto in = logits.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (double x : in) total += std::exp(x - mx);
    const double lse = mx + std::log(total);
    auto o = out.row(r);
    for (std::size_t c = 0; c < logits.cols; ++c) o[c] = in[c] - lse;
  }
  return out;
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace rldist::tensor
