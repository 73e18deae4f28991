// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Packed, register-blocked GEMM. B is packed into NR-wide column panels and
// A into MR-tall row panels; a micro-kernel accumulates an MR x NR tile in
// vector registers. Only the M dimension is split across threads, so the
// K summation order for every C element is fixed.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <memory>

#include <omp.h>

#include "fabricnet/kernels.hpp"
#include "kernels/instantiate.hpp"

namespace fabricnet::kernels::parallel {

namespace {

template <typename T>
struct Blocking {
  static constexpr std::size_t kLanes = 64 / sizeof(T);
  static constexpr std::size_t kMr = 8;
  static constexpr std::size_t kNr = 2 * kLanes;
  static constexpr std::size_t kKc = 256;
  static constexpr std::size_t kMc = 96;
  static constexpr std::size_t kNc = 2048;
};

template <typename T>
struct VecOf;
template <>
struct VecOf<float> {
  typedef float type __attribute__((vector_size(64)));
};
template <>
struct VecOf<double> {
  typedef double type __attribute__((vector_size(64)));
};
template <typename T>
using Vec = typename VecOf<T>::type;

struct FreeDeleter {
  void operator()(void* p) const noexcept { std::free(p); }
};

template <typename T>
std::unique_ptr<T[], FreeDeleter> aligned_buffer(std::size_t count) {
  const std::size_t bytes = ((count * sizeof(T) + 63) / 64) * 64;
  return std::unique_ptr<T[], FreeDeleter>(static_cast<T*>(std::aligned_alloc(64, bytes == 0 ? 64 : bytes)));
}

template <typename T>
void pack_b(bool trans_b, const T* b, std::size_t ldb, std::size_t p0, std::size_t kc, std::size_t j0,
            std::size_t nc, T* packed) {
  constexpr std::size_t nr = Blocking<T>::kNr;
  for (std::size_t jr = 0; jr < nc; jr += nr) {
    const std::size_t cols = std::min(nr, nc - jr);
    T* dst = packed + jr * kc;
    for (std::size_t p = 0; p < kc; ++p) {
      T* row = dst + p * nr;
      if (!trans_b) {
        const T* src = b + (p0 + p) * ldb + j0 + jr;
        std::memcpy(row, src, cols * sizeof(T));
      } else {
        for (std::size_t j = 0; j < cols; ++j) row[j] = b[(j0 + jr + j) * ldb + p0 + p];
      }
      for (std::size_t j = cols; j < nr; ++j) row[j] = T{0};
    }
  }
}

template <typename T>
void pack_a(bool trans_a, const T* a, std::size_t lda, std::size_t i0, std::size_t mc, std::size_t p0,
            std::size_t kc, T* packed) {
  constexpr std::size_t mr = Blocking<T>::kMr;
  for (std::size_t ir = 0; ir < mc; ir += mr) {
    const std::size_t rows = std::min(mr, mc - ir);
    T* dst = packed + ir * kc;
    for (std::size_t p = 0; p < kc; ++p) {
      T* col = dst + p * mr;
      for (std::size_t i = 0; i < rows; ++i) {
        col[i] = trans_a ? a[(p0 + p) * lda + i0 + ir + i] : a[(i0 + ir + i) * lda + p0 + p];
      }
      for (std::size_t i = rows; i < mr; ++i) col[i] = T{0};
    }
  }
}

// acc = sum_p a[p, :] (x) b[p, :] for an MR x NR tile, then merge into C.
template <typename T>
void micro_kernel(std::size_t kc, const T* __restrict a, const T* __restrict b, T* c, std::size_t ldc,
                  std::size_t rows, std::size_t cols, bool overwrite) {
  constexpr std::size_t mr = Blocking<T>::kMr;
  constexpr std::size_t lanes = Blocking<T>::kLanes;
  using V = Vec<T>;
  V acc[mr][2];
  for (std::size_t i = 0; i < mr; ++i) {
    acc[i][0] = V{};
    acc[i][1] = V{};
  }
  for (std::size_t p = 0; p < kc; ++p) {
    V b0;
    V b1;
    std::memcpy(&b0, b + p * 2 * lanes, sizeof(V));
    std::memcpy(&b1, b + p * 2 * lanes + lanes, sizeof(V));
#pragma GCC unroll 8
    for (std::size_t i = 0; i < mr; ++i) {
      const T av = a[p * mr + i];
      acc[i][0] += av * b0;
      acc[i][1] += av * b1;
    }
  }
  if (rows == mr && cols == 2 * lanes) {
    for (std::size_t i = 0; i < mr; ++i) {
      T* out = c + i * ldc;
      if (overwrite) {
        std::memcpy(out, &acc[i][0], sizeof(V));
        std::memcpy(out + lanes, &acc[i][1], sizeof(V));
      } else {
        V c0;
        V c1;
        std::memcpy(&c0, out, sizeof(V));
        std::memcpy(&c1, out + lanes, sizeof(V));
        c0 += acc[i][0];
        c1 += acc[i][1];
        std::memcpy(out, &c0, sizeof(V));
        std::memcpy(out + lanes, &c1, sizeof(V));
      }
    }
    return;
  }
  alignas(64) T tile[mr][2 * lanes];
  std::memcpy(tile, acc, sizeof(tile));
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      c[i * ldc + j] = overwrite ? tile[i][j] : c[i * ldc + j] + tile[i][j];
    }
  }
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  using B = Blocking<T>;
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) {
      for (std::size_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, T{0});
    }
    return;
  }

  const std::size_t nc_max = std::min(B::kNc, ((n + B::kNr - 1) / B::kNr) * B::kNr);
  const std::size_t kc_max = std::min(B::kKc, k);
  auto packed_b = aligned_buffer<T>(nc_max * kc_max);

  for (std::size_t j0 = 0; j0 < n; j0 += B::kNc) {
    const std::size_t nc = std::min(B::kNc, n - j0);
    for (std::size_t p0 = 0; p0 < k; p0 += B::kKc) {
      const std::size_t kc = std::min(B::kKc, k - p0);
      const bool overwrite = !accumulate && p0 == 0;
      pack_b(trans_b, b, ldb, p0, kc, j0, nc, packed_b.get());
      const std::ptrdiff_t m_blocks = static_cast<std::ptrdiff_t>((m + B::kMc - 1) / B::kMc);
      const bool go_parallel = m_blocks > 1 && m * n * kc > 32768;
#pragma omp parallel if (go_parallel)
      {
        auto packed_a = aligned_buffer<T>(B::kMc * kc);
#pragma omp for schedule(static)
        for (std::ptrdiff_t block = 0; block < m_blocks; ++block) {
          const std::size_t i0 = static_cast<std::size_t>(block) * B::kMc;
          const std::size_t mc = std::min(B::kMc, m - i0);
          pack_a(trans_a, a, lda, i0, mc, p0, kc, packed_a.get());
          for (std::size_t jr = 0; jr < nc; jr += B::kNr) {
            const std::size_t cols = std::min(B::kNr, nc - jr);
            for (std::size_t ir = 0; ir < mc; ir += B::kMr) {
              const std::size_t rows = std::min(B::kMr, mc - ir);
              micro_kernel(kc, packed_a.get() + ir * kc, packed_b.get() + jr * kc,
                           c + (i0 + ir) * ldc + j0 + jr, ldc, rows, cols, overwrite);
            }
          }
        }
      }
    }
  }
}

FABRICNET_INSTANTIATE_GEMM(float)
FABRICNET_INSTANTIATE_GEMM(double)

}  // namespace fabricnet::kernels::parallel
