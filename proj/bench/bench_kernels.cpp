// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Serial reference kernels against the OpenMP kernels on shapes taken from
// the 120 px head.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "fabricnet/kernels.hpp"

namespace {

using namespace fabricnet::kernels;

std::vector<float> random_buffer(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (float& x : v) x = u(rng);
  return v;
}

// Square GEMM of side range(0).
template <bool kParallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_buffer(n * n, 1), b = random_buffer(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    if constexpr (kParallel) {
      parallel::gemm(false, false, n, n, n, a.data(), n, b.data(), n, c.data(), n, false);
    } else {
      reference::gemm(false, false, n, n, n, a.data(), n, b.data(), n, c.data(), n, false);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

// First entry-flow convolution: 3x3, stride 2, 3 -> 32 channels at 120 px.
template <bool kParallel>
void BM_Conv2d(benchmark::State& state) {
  const std::size_t batch = static_cast<std::size_t>(state.range(0)), in_c = 3, out_c = 32;
  const SpatialGeometry g = same_geometry(batch, 120, 120, 3, 2);
  const auto x = random_buffer(batch * 120 * 120 * in_c, 3), w = random_buffer(9 * in_c * out_c, 4);
  std::vector<float> y(batch * g.out_h * g.out_w * out_c);
  for (auto _ : state) {
    if constexpr (kParallel) {
      parallel::conv2d_forward(g, in_c, out_c, x.data(), w.data(), y.data());
    } else {
      reference::conv2d_forward(g, in_c, out_c, x.data(), w.data(), y.data());
    }
    benchmark::DoNotOptimize(y.data());
  }
}

// Middle-flow depthwise step: 3x3 over 8x8x728.
template <bool kParallel>
void BM_Depthwise(benchmark::State& state) {
  const std::size_t batch = static_cast<std::size_t>(state.range(0)), c = 728;
  const SpatialGeometry g = same_geometry(batch, 8, 8, 3, 1);
  const auto x = random_buffer(batch * 64 * c, 5), w = random_buffer(9 * c, 6);
  std::vector<float> y(batch * 64 * c);
  for (auto _ : state) {
    if constexpr (kParallel) {
      parallel::depthwise_forward(g, c, x.data(), w.data(), y.data());
    } else {
      reference::depthwise_forward(g, c, x.data(), w.data(), y.data());
    }
    benchmark::DoNotOptimize(y.data());
  }
}

BENCHMARK(BM_Gemm<false>)->Name("gemm/reference")->Arg(64)->Arg(256);
BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_Conv2d<false>)->Name("conv2d/reference")->Arg(8);
BENCHMARK(BM_Conv2d<true>)->Name("conv2d/parallel")->Arg(8);
BENCHMARK(BM_Depthwise<false>)->Name("depthwise/reference")->Arg(32);
BENCHMARK(BM_Depthwise<true>)->Name("depthwise/parallel")->Arg(32);

}  // namespace

BENCHMARK_MAIN();
