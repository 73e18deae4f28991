// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Define-by-run reverse-mode differentiation. Every op returns a Var (a
// shared node holding the forward value); backward() walks the recorded
// graph in reverse topological order and accumulates gradients into every
// node that requires them. Spatial ops take NHWC tensors.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "fabricnet/tensor.hpp"

namespace fabricnet {

enum class OpKind {
  kLeaf,
  kConv2d,
  kDepthwiseConv2d,
  kPointwiseConv2d,
  kMaxPool2d,
  kGlobalAvgPool,
  kDense,
  kBatchNorm,
  kRelu,
  kSigmoid,
  kAdd,
  kFlatten,
  kConcat,
  kSum,
  kWeightedSum,
  kCustom,
};

std::string_view op_name(OpKind kind);

template <typename T>
struct Node {
  OpKind kind = OpKind::kLeaf;
  std::vector<std::shared_ptr<Node>> inputs;
  BasicTensor<T> value;
  BasicTensor<T> grad;
  bool requires_grad = false;
  // Reads this->grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward_fn;

  bool has_grad() const noexcept { return !grad.empty(); }

  BasicTensor<T>& ensure_grad() {
    if (grad.empty()) grad = BasicTensor<T>(value.shape(), T{0});
    return grad;
  }

  void zero_grad() {
    if (!grad.empty()) grad.fill(T{0});
  }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> constant(BasicTensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  return node;
}

template <typename T>
Var<T> parameter(BasicTensor<T> value) {
  auto node = constant(std::move(value));
  node->requires_grad = true;
  return node;
}

// While alive, ops on this thread do not record the graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled() noexcept;

// Builds a result node; the node records its inputs only when gradients are
// enabled and some input requires them. Callers attach backward_fn when
// result->requires_grad is true.
template <typename T>
Var<T> make_op_node(OpKind kind, BasicTensor<T> value, std::initializer_list<Var<T>> inputs);
template <typename T>
Var<T> make_op_node(OpKind kind, BasicTensor<T> value, std::span<const Var<T>> inputs);

enum class BatchNormMode { kTrain, kInfer };

struct BatchNormOptions {
  double epsilon = 1e-3;
  double momentum = 0.99;
  // Train mode only: fold batch statistics into the running estimates.
  bool update_running_stats = true;
};

namespace ops {

// x [N,H,W,Cin], kernel [k,k,Cin,Cout], optional bias [Cout].
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernel, std::size_t stride, const Var<T>& bias = nullptr);

// x [N,H,W,C], kernel [k,k,C].
template <typename T>
Var<T> depthwise_conv2d(const Var<T>& x, const Var<T>& kernel, std::size_t stride);

// x [N,H,W,Cin], kernel [Cin,Cout].
template <typename T>
Var<T> pointwise_conv2d(const Var<T>& x, const Var<T>& kernel);

template <typename T>
Var<T> maxpool2d(const Var<T>& x, std::size_t window = 3, std::size_t stride = 2);

// [N,H,W,C] -> [N,C]
template <typename T>
Var<T> global_avg_pool(const Var<T>& x);

// x [N,D], weights [D,M], bias [M].
template <typename T>
Var<T> dense(const Var<T>& x, const Var<T>& weights, const Var<T>& bias);

// Normalizes over every axis but the last. running_mean / running_var are
// updated in place in train mode (when enabled by options).
template <typename T>
Var<T> batchnorm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BasicTensor<T>& running_mean,
                 BasicTensor<T>& running_var, BatchNormMode mode, const BatchNormOptions& options = {});

template <typename T>
Var<T> relu(const Var<T>& x);

template <typename T>
Var<T> sigmoid(const Var<T>& x);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

// [N, ...] -> [N, prod(...)]
template <typename T>
Var<T> flatten(const Var<T>& x);

// Concatenates rank-2 tensors [N, d_i] along the last axis.
template <typename T>
Var<T> concat(std::span<const Var<T>> parts);

// Scalar ([1]) sum of all elements.
template <typename T>
Var<T> sum(const Var<T>& x);

// Scalar sum(weights * x); weights is a constant of x's shape.
template <typename T>
Var<T> weighted_sum(const Var<T>& x, const BasicTensor<T>& weights);

}  // namespace ops

// Seeds d(loss)/d(loss) = 1 and back-propagates. Throws if loss is not a
// single-element tensor.
template <typename T>
void backward(const Var<T>& loss);

}  // namespace fabricnet
