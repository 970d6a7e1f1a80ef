#include "rldist/tensor/kernels.hpp"

#include <atomic>
#include <cstdint>

namespace rldist::tensor::kernels {

namespace {

std::atomic<bool> g_parallel{true};

void check_mm(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols != b.rows) throw ShapeMismatch("matmul inner dimensions differ");
  if (out.rows != a.rows || out.cols != b.cols) out = Matrix(a.rows, b.cols);
}

void check_tn(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.rows != b.rows) throw ShapeMismatch("matmul_tn row counts differ");
  if (out.rows != a.cols || out.cols != b.cols) out = Matrix(a.cols, b.cols);
}

void check_nt(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols != b.cols) throw ShapeMismatch("matmul_nt column counts differ");
  if (out.rows != a.rows || out.cols != b.rows) out = Matrix(a.rows, b.rows);
}

// One output row of a*b. Accumulates k in increasing order.
inline void mm_row(const Matrix& a, const Matrix& b, Matrix& out, std::size_t i) {
  double* o = out.data.data() + i * out.cols;
  for (std::size_t j = 0; j < out.cols; ++j) o[j] = 0.0;
  const double* ar = a.data.data() + i * a.cols;
  for (std::size_t k = 0; k < a.cols; ++k) {
    const double aik = ar[k];
    const double* br = b.data.data() + k * b.cols;
    for (std::size_t j = 0; j < out.cols; ++j) o[j] += aik * br[j];
  }
}

// Row i of a^T*b: sum over r of a[r][i] * b[r][:], r increasing.
inline void tn_row(const Matrix& a, const Matrix& b, Matrix& out, std::size_t i) {
  double* o = out.data.data() + i * out.cols;
  for (std::size_t j = 0; j < out.cols; ++j) o[j] = 0.0;
  for (std::size_t r = 0; r < a.rows; ++r) {
    const double ari = a.data[r * a.cols + i];
    const double* br = b.data.data() + r * b.cols;
    for (std::size_t j = 0; j < out.cols; ++j) o[j] += ari * br[j];
  }
}

inline void nt_row(const Matrix& a, const Matrix& b, Matrix& out, std::size_t i) {
  const double* ar = a.data.data() + i * a.cols;
  for (std::size_t j = 0; j < b.rows; ++j) {
    const double* br = b.data.data() + j * b.cols;
    double acc = 0.0;
    for (std::size_t k = 0; k < a.cols; ++k) acc += ar[k] * br[k];
    out.data[i * out.cols + j] = acc;
  }
}

}  // namespace

void matmul_serial(const Matrix& a, const Matrix& b, Matrix& out) {
  check_mm(a, b, out);
  for (std::size_t i = 0; i < a.rows; ++i) mm_row(a, b, out, i);
}

void matmul_omp(const Matrix& a, const Matrix& b, Matrix& out) {
  check_mm(a, b, out);
  const auto n = static_cast<std::int64_t>(a.rows);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) mm_row(a, b, out, static_cast<std::size_t>(i));
}

void matmul_tn_serial(const Matrix& a, const Matrix& b, Matrix& out) {
  check_tn(a, b, out);
  for (std::size_t i = 0; i < a.cols; ++i) tn_row(a, b, out, i);
}

void matmul_tn_omp(const Matrix& a, const Matrix& b, Matrix& out) {
  check_tn(a, b, out);
  const auto n = static_cast<std::int64_t>(a.cols);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) tn_row(a, b, out, static_cast<std::size_t>(i));
}

void matmul_nt_serial(const Matrix& a, const Matrix& b, Matrix& out) {
  check_nt(a, b, out);
  for (std::size_t i = 0; i < a.rows; ++i) nt_row(a, b, out, i);
}

void matmul_nt_omp(const Matrix& a, const Matrix& b, Matrix& out) {
  check_nt(a, b, out);
  const auto n = static_cast<std::int64_t>(a.rows);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) nt_row(a, b, out, static_cast<std::size_t>(i));
}

void set_parallel_enabled(bool enabled) { g_parallel.store(enabled); }
bool parallel_enabled() { return g_parallel.load(); }

Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix out;
  if (parallel_enabled() && a.rows * a.cols * b.cols >= kParallelThreshold) {
    matmul_omp(a, b, out);
  } else {
    matmul_serial(a, b, out);
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  Matrix out;
  if (parallel_enabled() && a.rows * a.cols * b.cols >= kParallelThreshold) {
    matmul_tn_omp(a, b, out);
  } else {
    matmul_tn_serial(a, b, out);
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  Matrix out;
  if (parallel_enabled() && a.rows * a.cols * b.rows >= kParallelThreshold) {
    matmul_nt_omp(a, b, out);
  } else {
    matmul_nt_serial(a, b, out);
  }
  return out;
}

}  // namespace rldist::tensor::kernels
