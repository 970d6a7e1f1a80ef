// Serial reference vs OpenMP kernels over square and MLP-shaped products.

#include <benchmark/benchmark.h>

#include <random>

#include "rldist/tensor/kernels.hpp"

namespace {

using rldist::tensor::Matrix;
namespace k = rldist::tensor::kernels;

Matrix random_matrix(std::size_t r, std::size_t c, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (auto& v : m.data) v = n(rng);
  return m;
}

template <void (*Kernel)(const Matrix&, const Matrix&, Matrix&)>
void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto inner = static_cast<std::size_t>(state.range(1));
  const Matrix a = random_matrix(n, inner, 1);
  const Matrix b = random_matrix(inner, inner, 2);
  Matrix out(n, inner);
  for (auto _ : state) {
    Kernel(a, b, out);
    benchmark::DoNotOptimize(out.data.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * inner * inner));
}

template <void (*Kernel)(const Matrix&, const Matrix&, Matrix&)>
void BM_MatmulTn(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto inner = static_cast<std::size_t>(state.range(1));
  const Matrix a = random_matrix(n, inner, 1);
  const Matrix b = random_matrix(n, inner, 2);
  Matrix out(inner, inner);
  for (auto _ : state) {
    Kernel(a, b, out);
    benchmark::DoNotOptimize(out.data.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * inner * inner));
}

// (batch rows, layer width)
void shapes(benchmark::internal::Benchmark* b) {
  b->Args({256, 64})->Args({512, 128})->Args({4000, 64})->Args({512, 512});
}

}  // namespace

BENCHMARK(BM_Matmul<k::matmul_serial>)->Apply(shapes);
BENCHMARK(BM_Matmul<k::matmul_omp>)->Apply(shapes);
BENCHMARK(BM_MatmulTn<k::matmul_tn_serial>)->Apply(shapes);
BENCHMARK(BM_MatmulTn<k::matmul_tn_omp>)->Apply(shapes);

BENCHMARK_MAIN();
