#pragma once

// Dense kernels behind the MLP. Each kernel has a serial reference and an
// OpenMP version parallel over output rows; both accumulate every output
// element in the same order, so results are bit-identical. The dispatching
// entry points pick the parallel path once the work is large enough to pay
// for a parallel region.

#include <cstddef>

#include "rldist/tensor/matrix.hpp"

namespace rldist::tensor::kernels {

// out = a * b                (a: n x k, b: k x m)
void matmul_serial(const Matrix& a, const Matrix& b, Matrix& out);
void matmul_omp(const Matrix& a, const Matrix& b, Matrix& out);

// out = a^T * b              (a: k x n, b: k x m)
void matmul_tn_serial(const Matrix& a, const Matrix& b, Matrix& out);
void matmul_tn_omp(const Matrix& a, const Matrix& b, Matrix& out);

// out = a * b^T              (a: n x k, b: m x k)
void matmul_nt_serial(const Matrix& a, const Matrix& b, Matrix& out);
void matmul_nt_omp(const Matrix& a, const Matrix& b, Matrix& out);

// Multiply-add count above which the dispatchers go parallel.
inline constexpr std::size_t kParallelThreshold = std::size_t{1} << 18;

void set_parallel_enabled(bool enabled);
bool parallel_enabled();

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);

}  // namespace rldist::tensor::kernels
