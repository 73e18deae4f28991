// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>

namespace fabricnet::kernels {

// Geometry of a sliding-window op under the "same" padding rule:
// out = ceil(in / stride), padding split with the extra row/column at the
// bottom/right.
struct SpatialGeometry {
  std::size_t batch = 1;
  std::size_t in_h = 1;
  std::size_t in_w = 1;
  std::size_t out_h = 1;
  std::size_t out_w = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad_top = 0;
  std::size_t pad_left = 0;

  friend bool operator==(const SpatialGeometry&, const SpatialGeometry&) = default;
};

SpatialGeometry same_geometry(std::size_t batch, std::size_t in_h, std::size_t in_w,
                              std::size_t kernel, std::size_t stride);

constexpr std::size_t same_output_extent(std::size_t in, std::size_t stride) {
  return (in + stride - 1) / stride;
}

enum class Backend { kReference, kParallel };

Backend backend() noexcept;
void set_backend(Backend b) noexcept;

// Number of worker threads used by the parallel backend.
void set_num_threads(int threads);
int num_threads() noexcept;

class ScopedBackend {
 public:
  explicit ScopedBackend(Backend b) : previous_(backend()) { set_backend(b); }
  ~ScopedBackend() { set_backend(previous_); }
  ScopedBackend(const ScopedBackend&) = delete;
  ScopedBackend& operator=(const ScopedBackend&) = delete;

 private:
  Backend previous_;
};

// Serial loops written for clarity; the oracle for the parallel kernels.
namespace reference {
#include "fabricnet/detail/kernel_api.inc"
}  // namespace reference

// OpenMP-parallel, cache-blocked kernels. Reductions run in a fixed order
// so results do not depend on the thread count.
namespace parallel {
#include "fabricnet/detail/kernel_api.inc"
}  // namespace parallel

// Dispatches to the backend selected by set_backend().
#include "fabricnet/detail/kernel_api.inc"

}  // namespace fabricnet::kernels
