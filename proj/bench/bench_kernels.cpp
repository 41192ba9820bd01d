// Parallel kernels against their serial reference twins.

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "magma/kernels/parallel.hpp"
#include "magma/kernels/reference.hpp"

namespace {

using magma::kernels::AttentionDims;
using magma::kernels::ConvDims;

std::vector<float> random_vec(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> dist(-1.f, 1.f);
  std::vector<float> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

// args: m, k, n
template <bool Parallel>
void BM_MatmulNN(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0)), k = static_cast<std::size_t>(state.range(1)),
             n = static_cast<std::size_t>(state.range(2));
  auto a = random_vec(m * k, 1), b = random_vec(k * n, 2);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      magma::kernels::matmul_nn<float>(a, b, c, m, k, n, false);
    else
      magma::kernels::reference::matmul_nn<float>(a, b, c, m, k, n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOPS"] =
      benchmark::Counter(2.0 * static_cast<double>(m * k * n), benchmark::Counter::kIsIterationInvariantRate,
                         benchmark::Counter::kIs1000);
}

template <bool Parallel>
void BM_MatmulNT(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0)), k = static_cast<std::size_t>(state.range(1)),
             n = static_cast<std::size_t>(state.range(2));
  auto a = random_vec(m * k, 1), b = random_vec(n * k, 2);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      magma::kernels::matmul_nt<float>(a, b, c, m, k, n, false);
    else
      magma::kernels::reference::matmul_nt<float>(a, b, c, m, k, n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOPS"] =
      benchmark::Counter(2.0 * static_cast<double>(m * k * n), benchmark::Counter::kIsIterationInvariantRate,
                         benchmark::Counter::kIs1000);
}

template <bool Parallel>
void BM_MatmulTN(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0)), k = static_cast<std::size_t>(state.range(1)),
             n = static_cast<std::size_t>(state.range(2));
  auto a = random_vec(k * m, 1), b = random_vec(k * n, 2);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      magma::kernels::matmul_tn<float>(a, b, c, m, k, n, false);
    else
      magma::kernels::reference::matmul_tn<float>(a, b, c, m, k, n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOPS"] =
      benchmark::Counter(2.0 * static_cast<double>(m * k * n), benchmark::Counter::kIsIterationInvariantRate,
                         benchmark::Counter::kIs1000);
}

// args: batch, seq
template <bool Parallel>
void BM_Attention(benchmark::State& state) {
  const AttentionDims d{static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)), 4, 32};
  const std::size_t rows = d.batch * d.seq;
  auto q = random_vec(rows * d.width(), 1), k = random_vec(rows * d.width(), 2), v = random_vec(rows * d.width(), 3);
  std::vector<float> out(rows * d.width()), probs(d.batch * d.heads * d.seq * d.seq);
  for (auto _ : state) {
    if constexpr (Parallel)
      magma::kernels::causal_attention_forward<float>(q, k, v, out, probs, d);
    else
      magma::kernels::reference::causal_attention_forward<float>(q, k, v, out, probs, d);
    benchmark::DoNotOptimize(out.data());
  }
}

// args: batch, side
template <bool Parallel>
void BM_Conv(benchmark::State& state) {
  const ConvDims d{static_cast<std::size_t>(state.range(0)),
                   static_cast<std::size_t>(state.range(1)),
                   static_cast<std::size_t>(state.range(1)),
                   16, 32, 3, 2, 1};
  auto x = random_vec(d.batch * d.height * d.width * d.in_channels, 1);
  auto w = random_vec(d.out_channels * 9 * d.in_channels, 2), b = random_vec(d.out_channels, 3);
  std::vector<float> out(d.batch * d.out_height() * d.out_width() * d.out_channels);
  for (auto _ : state) {
    if constexpr (Parallel)
      magma::kernels::conv2d_forward<float>(x, w, b, out, d);
    else
      magma::kernels::reference::conv2d_forward<float>(x, w, b, out, d);
    benchmark::DoNotOptimize(out.data());
  }
}

const std::vector<std::vector<int64_t>> kMatmulShapes{{488, 128, 128}, {488, 128, 512}, {488, 512, 128}, {488, 128, 260}};

void matmul_args(benchmark::internal::Benchmark* b) {
  for (const auto& s : kMatmulShapes) b->Args(s);
}

}  // namespace

BENCHMARK(BM_MatmulNN<true>)->Apply(matmul_args);
BENCHMARK(BM_MatmulNN<false>)->Apply(matmul_args);
BENCHMARK(BM_MatmulNT<true>)->Apply(matmul_args);
BENCHMARK(BM_MatmulNT<false>)->Apply(matmul_args);
BENCHMARK(BM_MatmulTN<true>)->Apply(matmul_args);
BENCHMARK(BM_MatmulTN<false>)->Apply(matmul_args);
BENCHMARK(BM_Attention<true>)->Args({8, 64})->Args({4, 128});
BENCHMARK(BM_Attention<false>)->Args({8, 64})->Args({4, 128});
BENCHMARK(BM_Conv<true>)->Args({8, 32});
BENCHMARK(BM_Conv<false>)->Args({8, 32});

BENCHMARK_MAIN();
