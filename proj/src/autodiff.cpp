// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0

#include "fabricnet/autodiff.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <unordered_set>
#include <utility>

#include "fabricnet/kernels.hpp"

namespace fabricnet {

namespace {

thread_local bool t_grad_enabled = true;

void require_rank(const Shape& shape, std::size_t rank, const char* op, const char* what) {
  if (shape.size() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                     shape_to_string(shape));
  }
}

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_to_string(a) + " and " + shape_to_string(b));
}

void require_stride(std::size_t stride, const char* op) {
  if (stride != 1 && stride != 2) {
    throw ValidationError(std::string(op) + ": stride must be 1 or 2, got " + std::to_string(stride));
  }
}

void require_odd_kernel(std::size_t k, const char* op) {
  if (k % 2 == 0) throw ValidationError(std::string(op) + ": kernel size must be odd, got " + std::to_string(k));
}

template <typename T>
kernels::SpatialGeometry geometry_for(const Var<T>& x, std::size_t kernel, std::size_t stride) {
  const Shape& s = x->value.shape();
  return kernels::same_geometry(s[0], s[1], s[2], kernel, stride);
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kDepthwiseConv2d: return "depthwise_conv2d";
    case OpKind::kPointwiseConv2d: return "pointwise_conv2d";
    case OpKind::kMaxPool2d: return "maxpool2d";
    case OpKind::kGlobalAvgPool: return "global_avg_pool";
    case OpKind::kDense: return "dense";
    case OpKind::kBatchNorm: return "batchnorm";
    case OpKind::kRelu: return "relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kAdd: return "add";
    case OpKind::kFlatten: return "flatten";
    case OpKind::kConcat: return "concat";
    case OpKind::kSum: return "sum";
    case OpKind::kWeightedSum: return "weighted_sum";
    case OpKind::kCustom: return "custom";
  }
  return "unknown";
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() noexcept { return t_grad_enabled; }

template <typename T>
Var<T> make_op_node(OpKind kind, BasicTensor<T> value, std::span<const Var<T>> inputs) {
  auto node = std::make_shared<Node<T>>();
  node->kind = kind;
  node->value = std::move(value);
  if (!t_grad_enabled) return node;
  for (const auto& in : inputs) {
    if (in && in->requires_grad) node->requires_grad = true;
  }
  if (node->requires_grad) {
    for (const auto& in : inputs) {
      if (in) node->inputs.push_back(in);
    }
  }
  return node;
}

template <typename T>
Var<T> make_op_node(OpKind kind, BasicTensor<T> value, std::initializer_list<Var<T>> inputs) {
  return make_op_node<T>(kind, std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()));
}

namespace ops {

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernel, std::size_t stride, const Var<T>& bias) {
  const Shape& xs = x->value.shape();
  const Shape& ks = kernel->value.shape();
  require_rank(xs, 4, "conv2d", "input");
  require_rank(ks, 4, "conv2d", "kernel");
  if (ks[0] != ks[1] || ks[2] != xs[3]) mismatch("conv2d", xs, ks);
  require_odd_kernel(ks[0], "conv2d");
  require_stride(stride, "conv2d");
  const std::size_t in_c = xs[3];
  const std::size_t out_c = ks[3];
  if (bias && bias->value.shape() != Shape{out_c}) mismatch("conv2d", ks, bias->value.shape());

  const auto g = geometry_for(x, ks[0], stride);
  BasicTensor<T> y(Shape{g.batch, g.out_h, g.out_w, out_c});
  kernels::conv2d_forward<T>(g, in_c, out_c, x->value.raw(), kernel->value.raw(), y.raw());
  const std::size_t rows = g.batch * g.out_h * g.out_w;
  if (bias) {
    T* out = y.raw();
    const T* b = bias->value.raw();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < out_c; ++c) out[r * out_c + c] += b[c];
    }
  }
  auto node = make_op_node<T>(OpKind::kConv2d, std::move(y), {x, kernel, bias});
  if (node->requires_grad) {
    node->backward_fn = [g, in_c, out_c, rows, x, kernel, bias](Node<T>& self) {
      const T* dy = self.grad.raw();
      if (x->requires_grad) {
        kernels::conv2d_backward_data<T>(g, in_c, out_c, dy, kernel->value.raw(), x->ensure_grad().raw());
      }
      if (kernel->requires_grad) {
        kernels::conv2d_backward_filter<T>(g, in_c, out_c, x->value.raw(), dy, kernel->ensure_grad().raw());
      }
      if (bias && bias->requires_grad) {
        T* db = bias->ensure_grad().raw();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < out_c; ++c) db[c] += dy[r * out_c + c];
        }
      }
    };
  }
  return node;
}

template <typename T>
Var<T> depthwise_conv2d(const Var<T>& x, const Var<T>& kernel, std::size_t stride) {
  const Shape& xs = x->value.shape();
  const Shape& ks = kernel->value.shape();
  require_rank(xs, 4, "depthwise_conv2d", "input");
  require_rank(ks, 3, "depthwise_conv2d", "kernel");
  if (ks[0] != ks[1] || ks[2] != xs[3]) mismatch("depthwise_conv2d", xs, ks);
  require_odd_kernel(ks[0], "depthwise_conv2d");
  require_stride(stride, "depthwise_conv2d");
  const std::size_t channels = xs[3];
  const auto g = geometry_for(x, ks[0], stride);
  BasicTensor<T> y(Shape{g.batch, g.out_h, g.out_w, channels});
  kernels::depthwise_forward<T>(g, channels, x->value.raw(), kernel->value.raw(), y.raw());
  auto node = make_op_node<T>(OpKind::kDepthwiseConv2d, std::move(y), {x, kernel});
  if (node->requires_grad) {
    node->backward_fn = [g, channels, x, kernel](Node<T>& self) {
      if (x->requires_grad) {
        kernels::depthwise_backward_data<T>(g, channels, self.grad.raw(), kernel->value.raw(),
                                            x->ensure_grad().raw());
      }
      if (kernel->requires_grad) {
        kernels::depthwise_backward_filter<T>(g, channels, x->value.raw(), self.grad.raw(),
                                              kernel->ensure_grad().raw());
      }
    };
  }
  return node;
}

template <typename T>
Var<T> pointwise_conv2d(const Var<T>& x, const Var<T>& kernel) {
  const Shape& xs = x->value.shape();
  const Shape& ks = kernel->value.shape();
  require_rank(xs, 4, "pointwise_conv2d", "input");
  require_rank(ks, 2, "pointwise_conv2d", "kernel");
  if (ks[0] != xs[3]) mismatch("pointwise_conv2d", xs, ks);
  const std::size_t rows = xs[0] * xs[1] * xs[2];
  const std::size_t in_c = ks[0];
  const std::size_t out_c = ks[1];
  BasicTensor<T> y(Shape{xs[0], xs[1], xs[2], out_c});
  kernels::gemm<T>(false, false, rows, out_c, in_c, x->value.raw(), in_c, kernel->value.raw(), out_c, y.raw(),
                   out_c, false);
  auto node = make_op_node<T>(OpKind::kPointwiseConv2d, std::move(y), {x, kernel});
  if (node->requires_grad) {
    node->backward_fn = [rows, in_c, out_c, x, kernel](Node<T>& self) {
      const T* dy = self.grad.raw();
      if (x->requires_grad) {
        kernels::gemm<T>(false, true, rows, in_c, out_c, dy, out_c, kernel->value.raw(), out_c,
                         x->ensure_grad().raw(), in_c, true);
      }
      if (kernel->requires_grad) {
        kernels::gemm<T>(true, false, in_c, out_c, rows, x->value.raw(), in_c, dy, out_c,
                         kernel->ensure_grad().raw(), out_c, true);
      }
    };
  }
  return node;
}

template <typename T>
Var<T> maxpool2d(const Var<T>& x, std::size_t window, std::size_t stride) {
  const Shape& xs = x->value.shape();
  require_rank(xs, 4, "maxpool2d", "input");
  require_odd_kernel(window, "maxpool2d");
  require_stride(stride, "maxpool2d");
  if (x->value.numel() > std::numeric_limits<std::uint32_t>::max()) {
    throw ShapeError("maxpool2d: input too large for 32-bit argmax indices");
  }
  const std::size_t channels = xs[3];
  const auto g = geometry_for(x, window, stride);
  BasicTensor<T> y(Shape{g.batch, g.out_h, g.out_w, channels});
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(y.numel());
  kernels::maxpool_forward<T>(g, channels, x->value.raw(), y.raw(), argmax->data());
  auto node = make_op_node<T>(OpKind::kMaxPool2d, std::move(y), {x});
  if (node->requires_grad) {
    node->backward_fn = [x, argmax](Node<T>& self) {
      kernels::maxpool_backward<T>(self.grad.numel(), self.grad.raw(), argmax->data(), x->ensure_grad().raw());
    };
  }
  return node;
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const Shape& xs = x->value.shape();
  require_rank(xs, 4, "global_avg_pool", "input");
  const std::size_t batch = xs[0];
  const std::size_t spatial = xs[1] * xs[2];
  const std::size_t channels = xs[3];
  BasicTensor<T> y(Shape{batch, channels});
  kernels::global_avg_pool_forward<T>(batch, spatial, channels, x->value.raw(), y.raw());
  auto node = make_op_node<T>(OpKind::kGlobalAvgPool, std::move(y), {x});
  if (node->requires_grad) {
    node->backward_fn = [batch, spatial, channels, x](Node<T>& self) {
      kernels::global_avg_pool_backward<T>(batch, spatial, channels, self.grad.raw(), x->ensure_grad().raw());
    };
  }
  return node;
}

template <typename T>
Var<T> dense(const Var<T>& x, const Var<T>& weights, const Var<T>& bias) {
  const Shape& xs = x->value.shape();
  const Shape& ws = weights->value.shape();
  require_rank(xs, 2, "dense", "input");
  require_rank(ws, 2, "dense", "weights");
  if (ws[0] != xs[1]) mismatch("dense", xs, ws);
  if (!bias || bias->value.shape() != Shape{ws[1]}) {
    mismatch("dense", ws, bias ? bias->value.shape() : Shape{});
  }
  const std::size_t rows = xs[0];
  const std::size_t in = ws[0];
  const std::size_t out = ws[1];
  BasicTensor<T> y(Shape{rows, out});
  kernels::gemm<T>(false, false, rows, out, in, x->value.raw(), in, weights->value.raw(), out, y.raw(), out, false);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < out; ++c) y[r * out + c] += bias->value[c];
  }
  auto node = make_op_node<T>(OpKind::kDense, std::move(y), {x, weights, bias});
  if (node->requires_grad) {
    node->backward_fn = [rows, in, out, x, weights, bias](Node<T>& self) {
      const T* dy = self.grad.raw();
      if (x->requires_grad) {
        kernels::gemm<T>(false, true, rows, in, out, dy, out, weights->value.raw(), out, x->ensure_grad().raw(),
                         in, true);
      }
      if (weights->requires_grad) {
        kernels::gemm<T>(true, false, in, out, rows, x->value.raw(), in, dy, out, weights->ensure_grad().raw(),
                         out, true);
      }
      if (bias->requires_grad) {
        T* db = bias->ensure_grad().raw();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < out; ++c) db[c] += dy[r * out + c];
        }
      }
    };
  }
  return node;
}

template <typename T>
Var<T> batchnorm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BasicTensor<T>& running_mean,
                 BasicTensor<T>& running_var, BatchNormMode mode, const BatchNormOptions& options) {
  const Shape& xs = x->value.shape();
  if (xs.size() < 2) throw ShapeError("batchnorm: input must have a batch axis, got " + shape_to_string(xs));
  const std::size_t channels = xs.back();
  const Shape channel_shape{channels};
  if (gamma->value.shape() != channel_shape) mismatch("batchnorm", xs, gamma->value.shape());
  if (beta->value.shape() != channel_shape) mismatch("batchnorm", xs, beta->value.shape());
  if (running_mean.shape() != channel_shape || running_var.shape() != channel_shape) {
    mismatch("batchnorm", xs, running_mean.shape());
  }
  const bool train = mode == BatchNormMode::kTrain;
  if (train && xs[0] < 2) {
    throw ValidationError("batchnorm: train mode needs a batch of at least 2 samples, got " +
                          std::to_string(xs[0]));
  }
  const std::size_t rows = x->value.numel() / channels;
  const T eps = static_cast<T>(options.epsilon);

  BasicTensor<T> mean(channel_shape);
  BasicTensor<T> var(channel_shape);
  if (train) {
    kernels::channel_moments<T>(rows, channels, x->value.raw(), mean.raw(), var.raw());
    if (options.update_running_stats) {
      const T m = static_cast<T>(options.momentum);
      const T unbias = rows > 1 ? static_cast<T>(rows) / static_cast<T>(rows - 1) : T{1};
      for (std::size_t c = 0; c < channels; ++c) {
        running_mean[c] = m * running_mean[c] + (T{1} - m) * mean[c];
        running_var[c] = m * running_var[c] + (T{1} - m) * var[c] * unbias;
      }
    }
  } else {
    mean = running_mean;
    var = running_var;
  }
  auto inv_std = std::make_shared<BasicTensor<T>>(channel_shape);
  for (std::size_t c = 0; c < channels; ++c) (*inv_std)[c] = T{1} / std::sqrt(var[c] + eps);

  BasicTensor<T> y(xs);
  const bool record = grad_enabled() && (x->requires_grad || gamma->requires_grad || beta->requires_grad);
  auto xhat = record ? std::make_shared<BasicTensor<T>>(xs) : nullptr;
  kernels::batchnorm_forward<T>(rows, channels, x->value.raw(), mean.raw(), inv_std->raw(), gamma->value.raw(),
                                beta->value.raw(), y.raw(), xhat ? xhat->raw() : nullptr);
  auto node = make_op_node<T>(OpKind::kBatchNorm, std::move(y), {x, gamma, beta});
  if (node->requires_grad) {
    node->backward_fn = [rows, channels, train, x, gamma, beta, xhat, inv_std](Node<T>& self) {
      kernels::batchnorm_backward<T>(rows, channels, self.grad.raw(), xhat->raw(), gamma->value.raw(),
                                     inv_std->raw(), train, x->requires_grad ? x->ensure_grad().raw() : nullptr,
                                     gamma->requires_grad ? gamma->ensure_grad().raw() : nullptr,
                                     beta->requires_grad ? beta->ensure_grad().raw() : nullptr);
    };
  }
  return node;
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  BasicTensor<T> y(x->value.shape());
  kernels::relu_forward<T>(y.numel(), x->value.raw(), y.raw());
  auto node = make_op_node<T>(OpKind::kRelu, std::move(y), {x});
  if (node->requires_grad) {
    node->backward_fn = [x](Node<T>& self) {
      kernels::relu_backward<T>(self.grad.numel(), x->value.raw(), self.grad.raw(), x->ensure_grad().raw());
    };
  }
  return node;
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  BasicTensor<T> y(x->value.shape());
  kernels::sigmoid_forward<T>(y.numel(), x->value.raw(), y.raw());
  auto node = make_op_node<T>(OpKind::kSigmoid, std::move(y), {x});
  if (node->requires_grad) {
    node->backward_fn = [x](Node<T>& self) {
      kernels::sigmoid_backward<T>(self.grad.numel(), self.value.raw(), self.grad.raw(), x->ensure_grad().raw());
    };
  }
  return node;
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a->value.shape() != b->value.shape()) mismatch("add", a->value.shape(), b->value.shape());
  BasicTensor<T> y = a->value;
  kernels::accumulate<T>(y.numel(), b->value.raw(), y.raw());
  auto node = make_op_node<T>(OpKind::kAdd, std::move(y), {a, b});
  if (node->requires_grad) {
    node->backward_fn = [a, b](Node<T>& self) {
      if (a->requires_grad) kernels::accumulate<T>(self.grad.numel(), self.grad.raw(), a->ensure_grad().raw());
      if (b->requires_grad) kernels::accumulate<T>(self.grad.numel(), self.grad.raw(), b->ensure_grad().raw());
    };
  }
  return node;
}

template <typename T>
Var<T> flatten(const Var<T>& x) {
  const Shape& xs = x->value.shape();
  if (xs.empty()) throw ShapeError("flatten: input must have a batch axis");
  BasicTensor<T> y = x->value.reshaped(Shape{xs[0], x->value.numel() / xs[0]});
  auto node = make_op_node<T>(OpKind::kFlatten, std::move(y), {x});
  if (node->requires_grad) {
    node->backward_fn = [x](Node<T>& self) {
      kernels::accumulate<T>(self.grad.numel(), self.grad.raw(), x->ensure_grad().raw());
    };
  }
  return node;
}

template <typename T>
Var<T> concat(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::size_t rows = parts.front()->value.dim(0);
  std::size_t width = 0;
  for (const auto& p : parts) {
    require_rank(p->value.shape(), 2, "concat", "input");
    if (p->value.dim(0) != rows) mismatch("concat", parts.front()->value.shape(), p->value.shape());
    width += p->value.dim(1);
  }
  BasicTensor<T> y(Shape{rows, width});
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    const std::size_t w = p->value.dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < w; ++c) y[r * width + offset + c] = p->value[r * w + c];
    }
    offsets.push_back(offset);
    offset += w;
  }
  auto node = make_op_node<T>(OpKind::kConcat, std::move(y), parts);
  if (node->requires_grad) {
    std::vector<Var<T>> inputs(parts.begin(), parts.end());
    node->backward_fn = [inputs, offsets, rows, width](Node<T>& self) {
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto& p = inputs[i];
        if (!p->requires_grad) continue;
        const std::size_t w = p->value.dim(1);
        T* dp = p->ensure_grad().raw();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < w; ++c) dp[r * w + c] += self.grad[r * width + offsets[i] + c];
        }
      }
    };
  }
  return node;
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T total = 0;
  for (T v : x->value.data()) total += v;
  auto node = make_op_node<T>(OpKind::kSum, BasicTensor<T>(Shape{1}, total), {x});
  if (node->requires_grad) {
    node->backward_fn = [x](Node<T>& self) {
      const T g = self.grad[0];
      for (T& d : x->ensure_grad().data()) d += g;
    };
  }
  return node;
}

template <typename T>
Var<T> weighted_sum(const Var<T>& x, const BasicTensor<T>& weights) {
  if (weights.shape() != x->value.shape()) mismatch("weighted_sum", x->value.shape(), weights.shape());
  T total = 0;
  for (std::size_t i = 0; i < weights.numel(); ++i) total += weights[i] * x->value[i];
  auto node = make_op_node<T>(OpKind::kWeightedSum, BasicTensor<T>(Shape{1}, total), {x});
  if (node->requires_grad) {
    node->backward_fn = [x, weights](Node<T>& self) {
      const T g = self.grad[0];
      T* dx = x->ensure_grad().raw();
      for (std::size_t i = 0; i < weights.numel(); ++i) dx[i] += g * weights[i];
    };
  }
  return node;
}

}  // namespace ops

template <typename T>
void backward(const Var<T>& loss) {
  if (!loss) throw ValidationError("backward: null loss");
  if (loss->value.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_to_string(loss->value.shape()));
  }
  if (!loss->requires_grad) return;

  // Iterative post-order DFS; reversed, it is a topological order from the loss.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(loss.get(), 0);
  visited.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  loss->ensure_grad().fill(T{1});
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward_fn && node->has_grad()) node->backward_fn(*node);
  }
}

#define FABRICNET_INSTANTIATE_AUTODIFF(T)                                                                 \
  template Var<T> make_op_node<T>(OpKind, BasicTensor<T>, std::span<const Var<T>>);                       \
  template Var<T> make_op_node<T>(OpKind, BasicTensor<T>, std::initializer_list<Var<T>>);                 \
  template Var<T> ops::conv2d<T>(const Var<T>&, const Var<T>&, std::size_t, const Var<T>&);              \
  template Var<T> ops::depthwise_conv2d<T>(const Var<T>&, const Var<T>&, std::size_t);                   \
  template Var<T> ops::pointwise_conv2d<T>(const Var<T>&, const Var<T>&);                                \
  template Var<T> ops::maxpool2d<T>(const Var<T>&, std::size_t, std::size_t);                            \
  template Var<T> ops::global_avg_pool<T>(const Var<T>&);                                                \
  template Var<T> ops::dense<T>(const Var<T>&, const Var<T>&, const Var<T>&);                            \
  template Var<T> ops::batchnorm<T>(const Var<T>&, const Var<T>&, const Var<T>&, BasicTensor<T>&,        \
                                    BasicTensor<T>&, BatchNormMode, const BatchNormOptions&);            \
  template Var<T> ops::relu<T>(const Var<T>&);                                                           \
  template Var<T> ops::sigmoid<T>(const Var<T>&);                                                        \
  template Var<T> ops::add<T>(const Var<T>&, const Var<T>&);                                             \
  template Var<T> ops::flatten<T>(const Var<T>&);                                                        \
  template Var<T> ops::concat<T>(std::span<const Var<T>>);                                               \
  template Var<T> ops::sum<T>(const Var<T>&);                                                            \
  template Var<T> ops::weighted_sum<T>(const Var<T>&, const BasicTensor<T>&);                            \
  template void backward<T>(const Var<T>&);

FABRICNET_INSTANTIATE_AUTODIFF(float)
FABRICNET_INSTANTIATE_AUTODIFF(double)

}  // namespace fabricnet
