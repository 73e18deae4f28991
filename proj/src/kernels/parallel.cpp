// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

#include <omp.h>

#include "fabricnet/kernels.hpp"
#include "kernels/instantiate.hpp"

namespace fabricnet::kernels::parallel {

namespace {

using Index = std::ptrdiff_t;

// Rows of the im2col matrix materialized at once.
constexpr std::size_t kIm2colRows = 8192;
// Channel block width for per-channel reductions.
constexpr std::size_t kChannelBlock = 64;

struct TapRange {
  std::size_t first;  // first valid tap
  std::size_t last;   // one past the last valid tap
  std::ptrdiff_t origin;
};

inline TapRange tap_range(std::size_t out, std::size_t stride, std::size_t pad, std::size_t kernel,
                          std::size_t extent) {
  const std::ptrdiff_t origin = static_cast<std::ptrdiff_t>(out * stride) - static_cast<std::ptrdiff_t>(pad);
  const std::ptrdiff_t first = std::max<std::ptrdiff_t>(0, -origin);
  const std::ptrdiff_t last =
      std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(kernel), static_cast<std::ptrdiff_t>(extent) - origin);
  return {static_cast<std::size_t>(first), static_cast<std::size_t>(std::max(first, last)), origin};
}

bool is_pointwise(const SpatialGeometry& g) {
  return g.kernel == 1 && g.stride == 1 && g.pad_top == 0 && g.pad_left == 0 && g.in_h == g.out_h &&
         g.in_w == g.out_w;
}

// col[r, (kh, kw, ci)] for output rows [row0, row0 + rows) of the flattened
// (n, oh, ow) index space.
template <typename T>
void im2col(const SpatialGeometry& g, std::size_t in_c, const T* x, std::size_t row0, std::size_t rows, T* col) {
  const std::size_t width = g.kernel * g.kernel * in_c;
#pragma omp parallel for schedule(static)
  for (Index r = 0; r < static_cast<Index>(rows); ++r) {
    const std::size_t flat = row0 + static_cast<std::size_t>(r);
    const std::size_t ow = flat % g.out_w;
    const std::size_t oh = (flat / g.out_w) % g.out_h;
    const std::size_t n = flat / (g.out_w * g.out_h);
    T* dst = col + static_cast<std::size_t>(r) * width;
    const TapRange rh = tap_range(oh, g.stride, g.pad_top, g.kernel, g.in_h);
    const TapRange rw = tap_range(ow, g.stride, g.pad_left, g.kernel, g.in_w);
    for (std::size_t kh = 0; kh < g.kernel; ++kh) {
      for (std::size_t kw = 0; kw < g.kernel; ++kw) {
        T* out = dst + (kh * g.kernel + kw) * in_c;
        if (kh < rh.first || kh >= rh.last || kw < rw.first || kw >= rw.last) {
          std::fill(out, out + in_c, T{0});
          continue;
        }
        const std::size_t ih = static_cast<std::size_t>(rh.origin + static_cast<std::ptrdiff_t>(kh));
        const std::size_t iw = static_cast<std::size_t>(rw.origin + static_cast<std::ptrdiff_t>(kw));
        const T* src = x + ((n * g.in_h + ih) * g.in_w + iw) * in_c;
        std::copy(src, src + in_c, out);
      }
    }
  }
}

// dx += scatter(col). Rows are grouped by image so that threads never write
// the same dx element.
template <typename T>
void col2im(const SpatialGeometry& g, std::size_t in_c, const T* col, std::size_t row0, std::size_t rows, T* dx) {
  const std::size_t width = g.kernel * g.kernel * in_c;
  const std::size_t per_image = g.out_h * g.out_w;
  const std::size_t first_image = row0 / per_image;
  const std::size_t last_image = (row0 + rows - 1) / per_image;
#pragma omp parallel for schedule(static)
  for (Index img = static_cast<Index>(first_image); img <= static_cast<Index>(last_image); ++img) {
    const std::size_t n = static_cast<std::size_t>(img);
    const std::size_t begin = std::max(row0, n * per_image);
    const std::size_t end = std::min(row0 + rows, (n + 1) * per_image);
    for (std::size_t flat = begin; flat < end; ++flat) {
      const std::size_t ow = flat % g.out_w;
      const std::size_t oh = (flat / g.out_w) % g.out_h;
      const T* src = col + (flat - row0) * width;
      const TapRange rh = tap_range(oh, g.stride, g.pad_top, g.kernel, g.in_h);
      const TapRange rw = tap_range(ow, g.stride, g.pad_left, g.kernel, g.in_w);
      for (std::size_t kh = rh.first; kh < rh.last; ++kh) {
        const std::size_t ih = static_cast<std::size_t>(rh.origin + static_cast<std::ptrdiff_t>(kh));
        for (std::size_t kw = rw.first; kw < rw.last; ++kw) {
          const std::size_t iw = static_cast<std::size_t>(rw.origin + static_cast<std::ptrdiff_t>(kw));
          const T* s = src + (kh * g.kernel + kw) * in_c;
          T* d = dx + ((n * g.in_h + ih) * g.in_w + iw) * in_c;
#pragma omp simd
          for (std::size_t ci = 0; ci < in_c; ++ci) d[ci] += s[ci];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void conv2d_forward(const SpatialGeometry& g, std::size_t in_c, std::size_t out_c, const T* x,
                    const T* w, T* y) {
  const std::size_t total_rows = g.batch * g.out_h * g.out_w;
  const std::size_t width = g.kernel * g.kernel * in_c;
  if (is_pointwise(g)) {
    gemm<T>(false, false, total_rows, out_c, in_c, x, in_c, w, out_c, y, out_c, false);
    return;
  }
  std::vector<T> col(std::min(kIm2colRows, total_rows) * width);
  for (std::size_t row0 = 0; row0 < total_rows; row0 += kIm2colRows) {
    const std::size_t rows = std::min(kIm2colRows, total_rows - row0);
    im2col(g, in_c, x, row0, rows, col.data());
    gemm<T>(false, false, rows, out_c, width, col.data(), width, w, out_c, y + row0 * out_c, out_c, false);
  }
}

template <typename T>
void conv2d_backward_data(const SpatialGeometry& g, std::size_t in_c, std::size_t out_c,
                          const T* dy, const T* w, T* dx) {
  const std::size_t total_rows = g.batch * g.out_h * g.out_w;
  const std::size_t width = g.kernel * g.kernel * in_c;
  if (is_pointwise(g)) {
    gemm<T>(false, true, total_rows, in_c, out_c, dy, out_c, w, out_c, dx, in_c, true);
    return;
  }
  std::vector<T> col(std::min(kIm2colRows, total_rows) * width);
  for (std::size_t row0 = 0; row0 < total_rows; row0 += kIm2colRows) {
    const std::size_t rows = std::min(kIm2colRows, total_rows - row0);
    gemm<T>(false, true, rows, width, out_c, dy + row0 * out_c, out_c, w, out_c, col.data(), width, false);
    col2im(g, in_c, col.data(), row0, rows, dx);
  }
}

template <typename T>
void conv2d_backward_filter(const SpatialGeometry& g, std::size_t in_c, std::size_t out_c,
                            const T* x, const T* dy, T* dw) {
  const std::size_t total_rows = g.batch * g.out_h * g.out_w;
  const std::size_t width = g.kernel * g.kernel * in_c;
  if (is_pointwise(g)) {
    gemm<T>(true, false, in_c, out_c, total_rows, x, in_c, dy, out_c, dw, out_c, true);
    return;
  }
  std::vector<T> col(std::min(kIm2colRows, total_rows) * width);
  for (std::size_t row0 = 0; row0 < total_rows; row0 += kIm2colRows) {
    const std::size_t rows = std::min(kIm2colRows, total_rows - row0);
    im2col(g, in_c, x, row0, rows, col.data());
    gemm<T>(true, false, width, out_c, rows, col.data(), width, dy + row0 * out_c, out_c, dw, out_c, true);
  }
}

template <typename T>
void depthwise_forward(const SpatialGeometry& g, std::size_t channels, const T* x, const T* w, T* y) {
  const Index lines = static_cast<Index>(g.batch * g.out_h);
#pragma omp parallel for schedule(static)
  for (Index line = 0; line < lines; ++line) {
    const std::size_t n = static_cast<std::size_t>(line) / g.out_h;
    const std::size_t oh = static_cast<std::size_t>(line) % g.out_h;
    const TapRange rh = tap_range(oh, g.stride, g.pad_top, g.kernel, g.in_h);
    for (std::size_t ow = 0; ow < g.out_w; ++ow) {
      T* __restrict out = y + ((n * g.out_h + oh) * g.out_w + ow) * channels;
      std::fill(out, out + channels, T{0});
      const TapRange rw = tap_range(ow, g.stride, g.pad_left, g.kernel, g.in_w);
      for (std::size_t kh = rh.first; kh < rh.last; ++kh) {
        const std::size_t ih = static_cast<std::size_t>(rh.origin + static_cast<std::ptrdiff_t>(kh));
        for (std::size_t kw = rw.first; kw < rw.last; ++kw) {
          const std::size_t iw = static_cast<std::size_t>(rw.origin + static_cast<std::ptrdiff_t>(kw));
          const T* __restrict in = x + ((n * g.in_h + ih) * g.in_w + iw) * channels;
          const T* __restrict wk = w + (kh * g.kernel + kw) * channels;
#pragma omp simd
          for (std::size_t c = 0; c < channels; ++c) out[c] += in[c] * wk[c];
        }
      }
    }
  }
}

template <typename T>
void depthwise_backward_data(const SpatialGeometry& g, std::size_t channels, const T* dy,
                             const T* w, T* dx) {
#pragma omp parallel for schedule(static)
  for (Index img = 0; img < static_cast<Index>(g.batch); ++img) {
    const std::size_t n = static_cast<std::size_t>(img);
    for (std::size_t oh = 0; oh < g.out_h; ++oh) {
      const TapRange rh = tap_range(oh, g.stride, g.pad_top, g.kernel, g.in_h);
      for (std::size_t ow = 0; ow < g.out_w; ++ow) {
        const T* __restrict grad = dy + ((n * g.out_h + oh) * g.out_w + ow) * channels;
        const TapRange rw = tap_range(ow, g.stride, g.pad_left, g.kernel, g.in_w);
        for (std::size_t kh = rh.first; kh < rh.last; ++kh) {
          const std::size_t ih = static_cast<std::size_t>(rh.origin + static_cast<std::ptrdiff_t>(kh));
          for (std::size_t kw = rw.first; kw < rw.last; ++kw) {
            const std::size_t iw = static_cast<std::size_t>(rw.origin + static_cast<std::ptrdiff_t>(kw));
            T* __restrict din = dx + ((n * g.in_h + ih) * g.in_w + iw) * channels;
            const T* __restrict wk = w + (kh * g.kernel + kw) * channels;
#pragma omp simd
            for (std::size_t c = 0; c < channels; ++c) din[c] += grad[c] * wk[c];
          }
        }
      }
    }
  }
}

template <typename T>
void depthwise_backward_filter(const SpatialGeometry& g, std::size_t channels, const T* x,
                               const T* dy, T* dw) {
  const Index blocks = static_cast<Index>((channels + kChannelBlock - 1) / kChannelBlock);
#pragma omp parallel for schedule(static)
  for (Index block = 0; block < blocks; ++block) {
    const std::size_t c0 = static_cast<std::size_t>(block) * kChannelBlock;
    const std::size_t c1 = std::min(channels, c0 + kChannelBlock);
    for (std::size_t n = 0; n < g.batch; ++n) {
      for (std::size_t oh = 0; oh < g.out_h; ++oh) {
        const TapRange rh = tap_range(oh, g.stride, g.pad_top, g.kernel, g.in_h);
        for (std::size_t ow = 0; ow < g.out_w; ++ow) {
          const T* __restrict grad = dy + ((n * g.out_h + oh) * g.out_w + ow) * channels;
          const TapRange rw = tap_range(ow, g.stride, g.pad_left, g.kernel, g.in_w);
          for (std::size_t kh = rh.first; kh < rh.last; ++kh) {
            const std::size_t ih = static_cast<std::size_t>(rh.origin + static_cast<std::ptrdiff_t>(kh));
            for (std::size_t kw = rw.first; kw < rw.last; ++kw) {
              const std::size_t iw = static_cast<std::size_t>(rw.origin + static_cast<std::ptrdiff_t>(kw));
              const T* __restrict in = x + ((n * g.in_h + ih) * g.in_w + iw) * channels;
              T* __restrict dwk = dw + (kh * g.kernel + kw) * channels;
#pragma omp simd
              for (std::size_t c = c0; c < c1; ++c) dwk[c] += grad[c] * in[c];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void maxpool_forward(const SpatialGeometry& g, std::size_t channels, const T* x, T* y,
                     std::uint32_t* argmax) {
  const Index lines = static_cast<Index>(g.batch * g.out_h);
#pragma omp parallel for schedule(static)
  for (Index line = 0; line < lines; ++line) {
    const std::size_t n = static_cast<std::size_t>(line) / g.out_h;
    const std::size_t oh = static_cast<std::size_t>(line) % g.out_h;
    const TapRange rh = tap_range(oh, g.stride, g.pad_top, g.kernel, g.in_h);
    for (std::size_t ow = 0; ow < g.out_w; ++ow) {
      const std::size_t out_base = ((n * g.out_h + oh) * g.out_w + ow) * channels;
      const TapRange rw = tap_range(ow, g.stride, g.pad_left, g.kernel, g.in_w);
      bool first = true;
      // Taps are visited in increasing flat-index order, so a strict '>'
      // keeps the lowest index on ties.
      for (std::size_t kh = rh.first; kh < rh.last; ++kh) {
        const std::size_t ih = static_cast<std::size_t>(rh.origin + static_cast<std::ptrdiff_t>(kh));
        for (std::size_t kw = rw.first; kw < rw.last; ++kw) {
          const std::size_t iw = static_cast<std::size_t>(rw.origin + static_cast<std::ptrdiff_t>(kw));
          const std::size_t in_base = ((n * g.in_h + ih) * g.in_w + iw) * channels;
          if (first) {
            for (std::size_t c = 0; c < channels; ++c) {
              y[out_base + c] = x[in_base + c];
              argmax[out_base + c] = static_cast<std::uint32_t>(in_base + c);
            }
            first = false;
            continue;
          }
          for (std::size_t c = 0; c < channels; ++c) {
            if (x[in_base + c] > y[out_base + c]) {
              y[out_base + c] = x[in_base + c];
              argmax[out_base + c] = static_cast<std::uint32_t>(in_base + c);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void maxpool_backward(std::size_t out_numel, const T* dy, const std::uint32_t* argmax, T* dx) {
  // Windows overlap, so the scatter stays serial to keep a fixed order.
  for (std::size_t i = 0; i < out_numel; ++i) dx[argmax[i]] += dy[i];
}

template <typename T>
void channel_moments(std::size_t rows, std::size_t channels, const T* x, T* mean, T* var) {
  const Index blocks = static_cast<Index>((channels + kChannelBlock - 1) / kChannelBlock);
#pragma omp parallel for schedule(static)
  for (Index block = 0; block < blocks; ++block) {
    const std::size_t c0 = static_cast<std::size_t>(block) * kChannelBlock;
    const std::size_t c1 = std::min(channels, c0 + kChannelBlock);
    T sum[kChannelBlock] = {};
    for (std::size_t r = 0; r < rows; ++r) {
      const T* row = x + r * channels;
#pragma omp simd
      for (std::size_t c = c0; c < c1; ++c) sum[c - c0] += row[c];
    }
    for (std::size_t c = c0; c < c1; ++c) mean[c] = sum[c - c0] / static_cast<T>(rows);
    T sq[kChannelBlock] = {};
    for (std::size_t r = 0; r < rows; ++r) {
      const T* row = x + r * channels;
#pragma omp simd
      for (std::size_t c = c0; c < c1; ++c) {
        const T d = row[c] - mean[c];
        sq[c - c0] += d * d;
      }
    }
    for (std::size_t c = c0; c < c1; ++c) var[c] = sq[c - c0] / static_cast<T>(rows);
  }
}

template <typename T>
void batchnorm_forward(std::size_t rows, std::size_t channels, const T* x, const T* mean,
                       const T* inv_std, const T* gamma, const T* beta, T* y, T* xhat) {
#pragma omp parallel for schedule(static)
  for (Index r = 0; r < static_cast<Index>(rows); ++r) {
    const std::size_t base = static_cast<std::size_t>(r) * channels;
    if (xhat != nullptr) {
#pragma omp simd
      for (std::size_t c = 0; c < channels; ++c) {
        const T h = (x[base + c] - mean[c]) * inv_std[c];
        xhat[base + c] = h;
        y[base + c] = gamma[c] * h + beta[c];
      }
    } else {
#pragma omp simd
      for (std::size_t c = 0; c < channels; ++c) {
        y[base + c] = gamma[c] * ((x[base + c] - mean[c]) * inv_std[c]) + beta[c];
      }
    }
  }
}

template <typename T>
void batchnorm_backward(std::size_t rows, std::size_t channels, const T* dy, const T* xhat,
                        const T* gamma, const T* inv_std, bool batch_stats, T* dx, T* dgamma,
                        T* dbeta) {
  std::vector<T> sum_dy(channels, T{0});
  std::vector<T> sum_dy_xhat(channels, T{0});
  const Index blocks = static_cast<Index>((channels + kChannelBlock - 1) / kChannelBlock);
#pragma omp parallel for schedule(static)
  for (Index block = 0; block < blocks; ++block) {
    const std::size_t c0 = static_cast<std::size_t>(block) * kChannelBlock;
    const std::size_t c1 = std::min(channels, c0 + kChannelBlock);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * channels;
#pragma omp simd
      for (std::size_t c = c0; c < c1; ++c) {
        sum_dy[c] += dy[base + c];
        sum_dy_xhat[c] += dy[base + c] * xhat[base + c];
      }
    }
  }
  for (std::size_t c = 0; c < channels; ++c) {
    if (dgamma != nullptr) dgamma[c] += sum_dy_xhat[c];
    if (dbeta != nullptr) dbeta[c] += sum_dy[c];
  }
  if (dx == nullptr) return;
  std::vector<T> scale(channels);
  std::vector<T> mean_dy(channels);
  std::vector<T> mean_dy_xhat(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    scale[c] = gamma[c] * inv_std[c];
    mean_dy[c] = batch_stats ? sum_dy[c] / static_cast<T>(rows) : T{0};
    mean_dy_xhat[c] = batch_stats ? sum_dy_xhat[c] / static_cast<T>(rows) : T{0};
  }
#pragma omp parallel for schedule(static)
  for (Index r = 0; r < static_cast<Index>(rows); ++r) {
    const std::size_t base = static_cast<std::size_t>(r) * channels;
#pragma omp simd
    for (std::size_t c = 0; c < channels; ++c) {
      dx[base + c] += scale[c] * (dy[base + c] - mean_dy[c] - xhat[base + c] * mean_dy_xhat[c]);
    }
  }
}

template <typename T>
void global_avg_pool_forward(std::size_t batch, std::size_t spatial, std::size_t channels,
                             const T* x, T* y) {
#pragma omp parallel for schedule(static)
  for (Index img = 0; img < static_cast<Index>(batch); ++img) {
    const std::size_t n = static_cast<std::size_t>(img);
    T* out = y + n * channels;
    std::fill(out, out + channels, T{0});
    for (std::size_t s = 0; s < spatial; ++s) {
      const T* in = x + (n * spatial + s) * channels;
#pragma omp simd
      for (std::size_t c = 0; c < channels; ++c) out[c] += in[c];
    }
    for (std::size_t c = 0; c < channels; ++c) out[c] /= static_cast<T>(spatial);
  }
}

template <typename T>
void global_avg_pool_backward(std::size_t batch, std::size_t spatial, std::size_t channels,
                              const T* dy, T* dx) {
#pragma omp parallel for schedule(static)
  for (Index img = 0; img < static_cast<Index>(batch); ++img) {
    const std::size_t n = static_cast<std::size_t>(img);
    for (std::size_t s = 0; s < spatial; ++s) {
      T* d = dx + (n * spatial + s) * channels;
#pragma omp simd
      for (std::size_t c = 0; c < channels; ++c) d[c] += dy[n * channels + c] / static_cast<T>(spatial);
    }
  }
}

template <typename T>
void relu_forward(std::size_t n, const T* x, T* y) {
#pragma omp parallel for simd schedule(static)
  for (Index i = 0; i < static_cast<Index>(n); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
}

template <typename T>
void relu_backward(std::size_t n, const T* x, const T* dy, T* dx) {
#pragma omp parallel for simd schedule(static)
  for (Index i = 0; i < static_cast<Index>(n); ++i) dx[i] += x[i] > T{0} ? dy[i] : T{0};
}

// Largest value below 1; keeps saturated outputs inside the open interval.
template <typename T>
constexpr T kSigmoidHigh = T{1} - std::numeric_limits<T>::epsilon() / 2;

template <typename T>
void sigmoid_forward(std::size_t n, const T* x, T* y) {
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    if (x[i] >= T{0}) {
      y[i] = std::min(T{1} / (T{1} + std::exp(-x[i])), kSigmoidHigh<T>);
    } else {
      const T e = std::exp(x[i]);
      y[i] = std::max(e / (T{1} + e), std::numeric_limits<T>::denorm_min());
    }
  }
}

template <typename T>
void sigmoid_backward(std::size_t n, const T* y, const T* dy, T* dx) {
#pragma omp parallel for simd schedule(static)
  for (Index i = 0; i < static_cast<Index>(n); ++i) dx[i] += dy[i] * y[i] * (T{1} - y[i]);
}

template <typename T>
void accumulate(std::size_t n, const T* src, T* dst) {
#pragma omp parallel for simd schedule(static)
  for (Index i = 0; i < static_cast<Index>(n); ++i) dst[i] += src[i];
}

FABRICNET_INSTANTIATE_KERNELS(float)
FABRICNET_INSTANTIATE_KERNELS(double)

}  // namespace fabricnet::kernels::parallel
