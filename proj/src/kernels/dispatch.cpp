// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>

#include <omp.h>

#include "fabricnet/error.hpp"
#include "fabricnet/kernels.hpp"
#include "kernels/instantiate.hpp"

namespace fabricnet::kernels {

namespace {

std::atomic<Backend> g_backend{Backend::kParallel};

}  // namespace

SpatialGeometry same_geometry(std::size_t batch, std::size_t in_h, std::size_t in_w,
                              std::size_t kernel, std::size_t stride) {
  if (stride == 0 || kernel == 0) throw ValidationError("kernel and stride must be positive");
  SpatialGeometry g;
  g.batch = batch;
  g.in_h = in_h;
  g.in_w = in_w;
  g.kernel = kernel;
  g.stride = stride;
  g.out_h = same_output_extent(in_h, stride);
  g.out_w = same_output_extent(in_w, stride);
  const auto pad_total = [&](std::size_t in, std::size_t out) -> std::size_t {
    const std::size_t needed = (out - 1) * stride + kernel;
    return needed > in ? needed - in : 0;
  };
  g.pad_top = pad_total(in_h, g.out_h) / 2;
  g.pad_left = pad_total(in_w, g.out_w) / 2;
  return g;
}

Backend backend() noexcept { return g_backend.load(std::memory_order_relaxed); }

void set_backend(Backend b) noexcept { g_backend.store(b, std::memory_order_relaxed); }

void set_num_threads(int threads) {
  if (threads < 1) throw ValidationError("thread count must be at least 1");
  omp_set_num_threads(threads);
}

int num_threads() noexcept { return omp_get_max_threads(); }

#define FABRICNET_DISPATCH(name, ...)                                                              \
  do {                                                                                             \
    if (backend() == Backend::kReference) {                                                        \
      reference::name<T>(__VA_ARGS__);                                                             \
    } else {                                                                                       \
      parallel::name<T>(__VA_ARGS__);                                                              \
    }                                                                                              \
  } while (false)

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  FABRICNET_DISPATCH(gemm, trans_a, trans_b, m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

template <typename T>
void conv2d_forward(const SpatialGeometry& g, std::size_t in_c, std::size_t out_c, const T* x,
                    const T* w, T* y) {
  FABRICNET_DISPATCH(conv2d_forward, g, in_c, out_c, x, w, y);
}

template <typename T>
void conv2d_backward_data(const SpatialGeometry& g, std::size_t in_c, std::size_t out_c,
                          const T* dy, const T* w, T* dx) {
  FABRICNET_DISPATCH(conv2d_backward_data, g, in_c, out_c, dy, w, dx);
}

template <typename T>
void conv2d_backward_filter(const SpatialGeometry& g, std::size_t in_c, std::size_t out_c,
                            const T* x, const T* dy, T* dw) {
  FABRICNET_DISPATCH(conv2d_backward_filter, g, in_c, out_c, x, dy, dw);
}

template <typename T>
void depthwise_forward(const SpatialGeometry& g, std::size_t channels, const T* x, const T* w, T* y) {
  FABRICNET_DISPATCH(depthwise_forward, g, channels, x, w, y);
}

template <typename T>
void depthwise_backward_data(const SpatialGeometry& g, std::size_t channels, const T* dy,
                             const T* w, T* dx) {
  FABRICNET_DISPATCH(depthwise_backward_data, g, channels, dy, w, dx);
}

template <typename T>
void depthwise_backward_filter(const SpatialGeometry& g, std::size_t channels, const T* x,
                               const T* dy, T* dw) {
  FABRICNET_DISPATCH(depthwise_backward_filter, g, channels, x, dy, dw);
}

template <typename T>
void maxpool_forward(const SpatialGeometry& g, std::size_t channels, const T* x, T* y,
                     std::uint32_t* argmax) {
  FABRICNET_DISPATCH(maxpool_forward, g, channels, x, y, argmax);
}

template <typename T>
void maxpool_backward(std::size_t out_numel, const T* dy, const std::uint32_t* argmax, T* dx) {
  FABRICNET_DISPATCH(maxpool_backward, out_numel, dy, argmax, dx);
}

template <typename T>
void channel_moments(std::size_t rows, std::size_t channels, const T* x, T* mean, T* var) {
  FABRICNET_DISPATCH(channel_moments, rows, channels, x, mean, var);
}

template <typename T>
void batchnorm_forward(std::size_t rows, std::size_t channels, const T* x, const T* mean,
                       const T* inv_std, const T* gamma, const T* beta, T* y, T* xhat) {
  FABRICNET_DISPATCH(batchnorm_forward, rows, channels, x, mean, inv_std, gamma, beta, y, xhat);
}

template <typename T>
void batchnorm_backward(std::size_t rows, std::size_t channels, const T* dy, const T* xhat,
                        const T* gamma, const T* inv_std, bool batch_stats, T* dx, T* dgamma,
                        T* dbeta) {
  FABRICNET_DISPATCH(batchnorm_backward, rows, channels, dy, xhat, gamma, inv_std, batch_stats, dx,
                     dgamma, dbeta);
}

template <typename T>
void global_avg_pool_forward(std::size_t batch, std::size_t spatial, std::size_t channels,
                             const T* x, T* y) {
  FABRICNET_DISPATCH(global_avg_pool_forward, batch, spatial, channels, x, y);
}

template <typename T>
void global_avg_pool_backward(std::size_t batch, std::size_t spatial, std::size_t channels,
                              const T* dy, T* dx) {
  FABRICNET_DISPATCH(global_avg_pool_backward, batch, spatial, channels, dy, dx);
}

template <typename T>
void relu_forward(std::size_t n, const T* x, T* y) {
  FABRICNET_DISPATCH(relu_forward, n, x, y);
}

template <typename T>
void relu_backward(std::size_t n, const T* x, const T* dy, T* dx) {
  FABRICNET_DISPATCH(relu_backward, n, x, dy, dx);
}

template <typename T>
void sigmoid_forward(std::size_t n, const T* x, T* y) {
  FABRICNET_DISPATCH(sigmoid_forward, n, x, y);
}

template <typename T>
void sigmoid_backward(std::size_t n, const T* y, const T* dy, T* dx) {
  FABRICNET_DISPATCH(sigmoid_backward, n, y, dy, dx);
}

template <typename T>
void accumulate(std::size_t n, const T* src, T* dst) {
  FABRICNET_DISPATCH(accumulate, n, src, dst);
}

#undef FABRICNET_DISPATCH

FABRICNET_INSTANTIATE_GEMM(float)
FABRICNET_INSTANTIATE_GEMM(double)
FABRICNET_INSTANTIATE_KERNELS(float)
FABRICNET_INSTANTIATE_KERNELS(double)

}  // namespace fabricnet::kernels
