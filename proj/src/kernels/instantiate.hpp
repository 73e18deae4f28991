// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Explicit instantiation list (everything except gemm) for one backend
// namespace; must be expanded inside that namespace.
#define FABRICNET_INSTANTIATE_KERNELS(T)                                                           \
  template void conv2d_forward<T>(const SpatialGeometry&, std::size_t, std::size_t, const T*,      \
                                  const T*, T*);                                                    \
  template void conv2d_backward_data<T>(const SpatialGeometry&, std::size_t, std::size_t, const T*, \
                                        const T*, T*);                                              \
  template void conv2d_backward_filter<T>(const SpatialGeometry&, std::size_t, std::size_t,        \
                                          const T*, const T*, T*);                                  \
  template void depthwise_forward<T>(const SpatialGeometry&, std::size_t, const T*, const T*, T*); \
  template void depthwise_backward_data<T>(const SpatialGeometry&, std::size_t, const T*,          \
                                           const T*, T*);                                           \
  template void depthwise_backward_filter<T>(const SpatialGeometry&, std::size_t, const T*,        \
                                             const T*, T*);                                         \
  template void maxpool_forward<T>(const SpatialGeometry&, std::size_t, const T*, T*,              \
                                   std::uint32_t*);                                                 \
  template void maxpool_backward<T>(std::size_t, const T*, const std::uint32_t*, T*);              \
  template void channel_moments<T>(std::size_t, std::size_t, const T*, T*, T*);                    \
  template void batchnorm_forward<T>(std::size_t, std::size_t, const T*, const T*, const T*,       \
                                     const T*, const T*, T*, T*);                                   \
  template void batchnorm_backward<T>(std::size_t, std::size_t, const T*, const T*, const T*,      \
                                      const T*, bool, T*, T*, T*);                                  \
  template void global_avg_pool_forward<T>(std::size_t, std::size_t, std::size_t, const T*, T*);   \
  template void global_avg_pool_backward<T>(std::size_t, std::size_t, std::size_t, const T*, T*);  \
  template void relu_forward<T>(std::size_t, const T*, T*);                                        \
  template void relu_backward<T>(std::size_t, const T*, const T*, T*);                             \
  template void sigmoid_forward<T>(std::size_t, const T*, T*);                                     \
  template void sigmoid_backward<T>(std::size_t, const T*, const T*, T*);                          \
  template void accumulate<T>(std::size_t, const T*, T*);

#define FABRICNET_INSTANTIATE_GEMM(T)                                                              \
  template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, const T*, std::size_t,  \
                        const T*, std::size_t, T*, std::size_t, bool);
