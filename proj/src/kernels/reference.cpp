// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>

#include "fabricnet/kernels.hpp"
#include "kernels/instantiate.hpp"

namespace fabricnet::kernels::reference {

namespace {

// Maps an output coordinate and window offset to an input coordinate;
// returns false when the tap lands in the padding.
inline bool input_coord(std::size_t out, std::size_t tap, std::size_t stride, std::size_t pad,
                        std::size_t extent, std::size_t& in) {
  const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(out * stride + tap) - static_cast<std::ptrdiff_t>(pad);
  if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(extent)) return false;
  in = static_cast<std::size_t>(pos);
  return true;
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T sum = 0;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = trans_a ? a[p * lda + i] : a[i * lda + p];
        const T bv = trans_b ? b[j * ldb + p] : b[p * ldb + j];
        sum += av * bv;
      }
      c[i * ldc + j] = accumulate ? c[i * ldc + j] + sum : sum;
    }
  }
}

template <typename T>
void conv2d_forward(const SpatialGeometry& g, std::size_t in_c, std::size_t out_c, const T* x,
                    const T* w, T* y) {
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t oh = 0; oh < g.out_h; ++oh) {
      for (std::size_t ow = 0; ow < g.out_w; ++ow) {
        T* out = y + ((n * g.out_h + oh) * g.out_w + ow) * out_c;
        for (std::size_t co = 0; co < out_c; ++co) {
          T sum = 0;
          for (std::size_t kh = 0; kh < g.kernel; ++kh) {
            std::size_t ih;
            if (!input_coord(oh, kh, g.stride, g.pad_top, g.in_h, ih)) continue;
            for (std::size_t kw = 0; kw < g.kernel; ++kw) {
              std::size_t iw;
              if (!input_coord(ow, kw, g.stride, g.pad_left, g.in_w, iw)) continue;
              const T* in = x + ((n * g.in_h + ih) * g.in_w + iw) * in_c;
              const T* wk = w + (kh * g.kernel + kw) * in_c * out_c;
              for (std::size_t ci = 0; ci < in_c; ++ci) sum += in[ci] * wk[ci * out_c + co];
            }
          }
          out[co] = sum;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_data(const SpatialGeometry& g, std::size_t in_c, std::size_t out_c,
                          const T* dy, const T* w, T* dx) {
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t oh = 0; oh < g.out_h; ++oh) {
      for (std::size_t ow = 0; ow < g.out_w; ++ow) {
        const T* grad = dy + ((n * g.out_h + oh) * g.out_w + ow) * out_c;
        for (std::size_t kh = 0; kh < g.kernel; ++kh) {
          std::size_t ih;
          if (!input_coord(oh, kh, g.stride, g.pad_top, g.in_h, ih)) continue;
          for (std::size_t kw = 0; kw < g.kernel; ++kw) {
            std::size_t iw;
            if (!input_coord(ow, kw, g.stride, g.pad_left, g.in_w, iw)) continue;
            T* din = dx + ((n * g.in_h + ih) * g.in_w + iw) * in_c;
            const T* wk = w + (kh * g.kernel + kw) * in_c * out_c;
            for (std::size_t ci = 0; ci < in_c; ++ci) {
              T sum = 0;
              for (std::size_t co = 0; co < out_c; ++co) sum += grad[co] * wk[ci * out_c + co];
              din[ci] += sum;
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_filter(const SpatialGeometry& g, std::size_t in_c, std::size_t out_c,
                            const T* x, const T* dy, T* dw) {
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t oh = 0; oh < g.out_h; ++oh) {
      for (std::size_t ow = 0; ow < g.out_w; ++ow) {
        const T* grad = dy + ((n * g.out_h + oh) * g.out_w + ow) * out_c;
        for (std::size_t kh = 0; kh < g.kernel; ++kh) {
          std::size_t ih;
          if (!input_coord(oh, kh, g.stride, g.pad_top, g.in_h, ih)) continue;
          for (std::size_t kw = 0; kw < g.kernel; ++kw) {
            std::size_t iw;
            if (!input_coord(ow, kw, g.stride, g.pad_left, g.in_w, iw)) continue;
            const T* in = x + ((n * g.in_h + ih) * g.in_w + iw) * in_c;
            T* dwk = dw + (kh * g.kernel + kw) * in_c * out_c;
            for (std::size_t ci = 0; ci < in_c; ++ci) {
              for (std::size_t co = 0; co < out_c; ++co) dwk[ci * out_c + co] += in[ci] * grad[co];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void depthwise_forward(const SpatialGeometry& g, std::size_t channels, const T* x, const T* w, T* y) {
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t oh = 0; oh < g.out_h; ++oh) {
      for (std::size_t ow = 0; ow < g.out_w; ++ow) {
        T* out = y + ((n * g.out_h + oh) * g.out_w + ow) * channels;
        for (std::size_t c = 0; c < channels; ++c) {
          T sum = 0;
          for (std::size_t kh = 0; kh < g.kernel; ++kh) {
            std::size_t ih;
            if (!input_coord(oh, kh, g.stride, g.pad_top, g.in_h, ih)) continue;
            for (std::size_t kw = 0; kw < g.kernel; ++kw) {
              std::size_t iw;
              if (!input_coord(ow, kw, g.stride, g.pad_left, g.in_w, iw)) continue;
              sum += x[((n * g.in_h + ih) * g.in_w + iw) * channels + c] *
                     w[(kh * g.kernel + kw) * channels + c];
            }
          }
          out[c] = sum;
        }
      }
    }
  }
}

template <typename T>
void depthwise_backward_data(const SpatialGeometry& g, std::size_t channels, const T* dy,
                             const T* w, T* dx) {
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t oh = 0; oh < g.out_h; ++oh) {
      for (std::size_t ow = 0; ow < g.out_w; ++ow) {
        const T* grad = dy + ((n * g.out_h + oh) * g.out_w + ow) * channels;
        for (std::size_t kh = 0; kh < g.kernel; ++kh) {
          std::size_t ih;
          if (!input_coord(oh, kh, g.stride, g.pad_top, g.in_h, ih)) continue;
          for (std::size_t kw = 0; kw < g.kernel; ++kw) {
            std::size_t iw;
            if (!input_coord(ow, kw, g.stride, g.pad_left, g.in_w, iw)) continue;
            for (std::size_t c = 0; c < channels; ++c) {
              dx[((n * g.in_h + ih) * g.in_w + iw) * channels + c] +=
                  grad[c] * w[(kh * g.kernel + kw) * channels + c];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void depthwise_backward_filter(const SpatialGeometry& g, std::size_t channels, const T* x,
                               const T* dy, T* dw) {
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t oh = 0; oh < g.out_h; ++oh) {
      for (std::size_t ow = 0; ow < g.out_w; ++ow) {
        const T* grad = dy + ((n * g.out_h + oh) * g.out_w + ow) * channels;
        for (std::size_t kh = 0; kh < g.kernel; ++kh) {
          std::size_t ih;
          if (!input_coord(oh, kh, g.stride, g.pad_top, g.in_h, ih)) continue;
          for (std::size_t kw = 0; kw < g.kernel; ++kw) {
            std::size_t iw;
            if (!input_coord(ow, kw, g.stride, g.pad_left, g.in_w, iw)) continue;
            for (std::size_t c = 0; c < channels; ++c) {
              dw[(kh * g.kernel + kw) * channels + c] +=
                  grad[c] * x[((n * g.in_h + ih) * g.in_w + iw) * channels + c];
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
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t oh = 0; oh < g.out_h; ++oh) {
      for (std::size_t ow = 0; ow < g.out_w; ++ow) {
        const std::size_t out_base = ((n * g.out_h + oh) * g.out_w + ow) * channels;
        for (std::size_t c = 0; c < channels; ++c) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_index = 0;
          bool found = false;
          for (std::size_t kh = 0; kh < g.kernel; ++kh) {
            std::size_t ih;
            if (!input_coord(oh, kh, g.stride, g.pad_top, g.in_h, ih)) continue;
            for (std::size_t kw = 0; kw < g.kernel; ++kw) {
              std::size_t iw;
              if (!input_coord(ow, kw, g.stride, g.pad_left, g.in_w, iw)) continue;
              const std::size_t index = ((n * g.in_h + ih) * g.in_w + iw) * channels + c;
              if (!found || x[index] > best) {
                best = x[index];
                best_index = index;
                found = true;
              }
            }
          }
          y[out_base + c] = best;
          argmax[out_base + c] = static_cast<std::uint32_t>(best_index);
        }
      }
    }
  }
}

template <typename T>
void maxpool_backward(std::size_t out_numel, const T* dy, const std::uint32_t* argmax, T* dx) {
  for (std::size_t i = 0; i < out_numel; ++i) dx[argmax[i]] += dy[i];
}

template <typename T>
void channel_moments(std::size_t rows, std::size_t channels, const T* x, T* mean, T* var) {
  for (std::size_t c = 0; c < channels; ++c) {
    T sum = 0;
    for (std::size_t r = 0; r < rows; ++r) sum += x[r * channels + c];
    const T mu = sum / static_cast<T>(rows);
    T sq = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      const T d = x[r * channels + c] - mu;
      sq += d * d;
    }
    mean[c] = mu;
    var[c] = sq / static_cast<T>(rows);
  }
}

template <typename T>
void batchnorm_forward(std::size_t rows, std::size_t channels, const T* x, const T* mean,
                       const T* inv_std, const T* gamma, const T* beta, T* y, T* xhat) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t i = r * channels + c;
      const T h = (x[i] - mean[c]) * inv_std[c];
      if (xhat != nullptr) xhat[i] = h;
      y[i] = gamma[c] * h + beta[c];
    }
  }
}

template <typename T>
void batchnorm_backward(std::size_t rows, std::size_t channels, const T* dy, const T* xhat,
                        const T* gamma, const T* inv_std, bool batch_stats, T* dx, T* dgamma,
                        T* dbeta) {
  for (std::size_t c = 0; c < channels; ++c) {
    T sum_dy = 0;
    T sum_dy_xhat = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      sum_dy += dy[r * channels + c];
      sum_dy_xhat += dy[r * channels + c] * xhat[r * channels + c];
    }
    if (dgamma != nullptr) dgamma[c] += sum_dy_xhat;
    if (dbeta != nullptr) dbeta[c] += sum_dy;
    if (dx == nullptr) continue;
    const T scale = gamma[c] * inv_std[c];
    const T count = static_cast<T>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t i = r * channels + c;
      if (batch_stats) {
        dx[i] += scale * (dy[i] - sum_dy / count - xhat[i] * sum_dy_xhat / count);
      } else {
        dx[i] += scale * dy[i];
      }
    }
  }
}

template <typename T>
void global_avg_pool_forward(std::size_t batch, std::size_t spatial, std::size_t channels,
                             const T* x, T* y) {
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      T sum = 0;
      for (std::size_t s = 0; s < spatial; ++s) sum += x[(n * spatial + s) * channels + c];
      y[n * channels + c] = sum / static_cast<T>(spatial);
    }
  }
}

template <typename T>
void global_avg_pool_backward(std::size_t batch, std::size_t spatial, std::size_t channels,
                              const T* dy, T* dx) {
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t s = 0; s < spatial; ++s) {
      for (std::size_t c = 0; c < channels; ++c) {
        dx[(n * spatial + s) * channels + c] += dy[n * channels + c] / static_cast<T>(spatial);
      }
    }
  }
}

template <typename T>
void relu_forward(std::size_t n, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
}

template <typename T>
void relu_backward(std::size_t n, const T* x, const T* dy, T* dx) {
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i] > T{0}) dx[i] += dy[i];
  }
}

// Largest value below 1; keeps saturated outputs inside the open interval.
template <typename T>
constexpr T kSigmoidHigh = T{1} - std::numeric_limits<T>::epsilon() / 2;

template <typename T>
void sigmoid_forward(std::size_t n, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) {
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
  for (std::size_t i = 0; i < n; ++i) dx[i] += dy[i] * y[i] * (T{1} - y[i]);
}

template <typename T>
void accumulate(std::size_t n, const T* src, T* dst) {
  for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}

FABRICNET_INSTANTIATE_GEMM(float)
FABRICNET_INSTANTIATE_GEMM(double)
FABRICNET_INSTANTIATE_KERNELS(float)
FABRICNET_INSTANTIATE_KERNELS(double)

}  // namespace fabricnet::kernels::reference
