// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0

#include "fabricnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <type_traits>
#include <unordered_set>

#include "fabricnet/autodiff.hpp"
#include "fabricnet/kernels.hpp"
#include "fabricnet/model_graph.hpp"
#include "fabricnet/training.hpp"

namespace fabricnet {

double default_tolerance(Precision precision) { return precision == Precision::kFloat64 ? 1e-6 : 1e-3; }
double default_epsilon(Precision precision) { return precision == Precision::kFloat64 ? 1e-5 : 1e-3; }

namespace {

template <typename T>
using Forward = std::function<Var<T>()>;

template <typename T>
BasicTensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  BasicTensor<T> t(std::move(shape), T{0});
  for (T& v : t.data()) v = static_cast<T>(u(rng));
  return t;
}

// Values bounded away from zero so relu stencils never straddle the kink.
template <typename T>
BasicTensor<T> signed_away_from_zero(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  BasicTensor<T> t(std::move(shape), T{0});
  for (T& v : t.data()) v = static_cast<T>(sign(rng) ? mag(rng) : -mag(rng));
  return t;
}

// Distinct values 0.05 apart in random order, so every pooling window has a
// clear maximum.
template <typename T>
BasicTensor<T> distinct_values(Shape shape, std::mt19937_64& rng) {
  BasicTensor<T> t(std::move(shape), T{0});
  std::vector<std::size_t> order(t.numel());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  const double n = static_cast<double>(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) t[order[i]] = static_cast<T>((static_cast<double>(i) - n / 2) * 0.05);
  return t;
}

// Signs of every relu input and the argmax of every maxpool reachable from
// `root`; a change between the two sides of a stencil means the difference
// quotient straddles a switch point.
template <typename T>
std::vector<std::uint32_t> switch_pattern(const Var<T>& root) {
  std::vector<std::uint32_t> out;
  std::vector<Node<T>*> stack{root.get()};
  std::unordered_set<Node<T>*> seen{root.get()};
  while (!stack.empty()) {
    Node<T>* node = stack.back();
    stack.pop_back();
    if (node->kind == OpKind::kRelu && !node->inputs.empty()) {
      for (T v : node->inputs[0]->value.data()) out.push_back(v > T{0} ? 1u : 0u);
    } else if (node->kind == OpKind::kMaxPool2d && !node->inputs.empty()) {
      const BasicTensor<T>& x = node->inputs[0]->value;
      const Shape& s = x.shape();
      const auto g = kernels::same_geometry(s[0], s[1], s[2], 3, 2);
      std::vector<T> y(node->value.numel());
      std::vector<std::uint32_t> argmax(node->value.numel());
      kernels::reference::maxpool_forward<T>(g, s[3], x.raw(), y.data(), argmax.data());
      out.insert(out.end(), argmax.begin(), argmax.end());
    }
    for (const auto& in : node->inputs) {
      if (in && seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  return out;
}

// Bounds the stencils tried per tensor when many cross a switch.
constexpr std::size_t kMaxAttemptsPerSample = 4;

// Analytic gradients come from `leaves`/`forward` in precision T. The central
// differences are taken on `ref_leaves`/`ref_forward` in precision R, which is
// T itself for op cases and a double copy of the model for the 32-bit
// end-to-end case. A float forward quantizes outputs near 0.5 to ~3e-8, which
// after dividing by 2*eps is comparable to 1e-3 of a deep network's gradient.
template <typename T, typename R = T>
GradCheckResult check(const std::string& name, const std::vector<Var<T>>& leaves, const Forward<T>& forward,
                      const std::vector<Var<R>>& ref_leaves, const Forward<R>& ref_forward, std::size_t samples,
                      double eps, double tol, bool watch_switches, std::mt19937_64& rng) {
  if (ref_leaves.size() != leaves.size()) throw ShapeError("gradcheck reference has a different leaf count");
  const std::vector<double> weights = [&] {
    NoGradGuard no_grad;
    const std::size_t n = forward()->value.numel();
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(n)));
    std::vector<double> w(n);
    for (double& v : w) v = static_cast<double>(static_cast<T>(normal(rng)));
    return w;
  }();

  for (const auto& leaf : leaves) leaf->grad = BasicTensor<T>();
  {
    const Var<T> out = forward();
    BasicTensor<T> w(out->value.shape(), T{0});
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(weights[i]);
    backward(ops::weighted_sum<T>(out, w));
  }
  std::vector<BasicTensor<T>> analytic;
  for (const auto& leaf : leaves) {
    analytic.push_back(leaf->has_grad() ? leaf->grad : BasicTensor<T>(leaf->value.shape(), T{0}));
  }

  // The reduction runs in double so its rounding stays below the op's own.
  const auto reduce = [&](const BasicTensor<R>& out) {
    if (out.numel() != weights.size()) throw ShapeError("gradcheck reference output has a different size");
    double acc = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) acc += static_cast<double>(out[i]) * weights[i];
    return acc;
  };
  const auto evaluate = [&](std::vector<std::uint32_t>* pattern) {
    if (!watch_switches) {
      NoGradGuard no_grad;
      return reduce(ref_forward()->value);
    }
    const Var<R> out = ref_forward();
    *pattern = switch_pattern(out);
    return reduce(out->value);
  };

  GradCheckResult result;
  result.name = name;
  result.tolerance = tol;
  double diff_sq = 0.0, analytic_sq = 0.0, numeric_sq = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    BasicTensor<R>& value = ref_leaves[li]->value;
    const std::size_t n = value.numel();
    if (n != leaves[li]->value.numel()) throw ShapeError("gradcheck reference leaf has a different size");
    const std::size_t want = std::min(samples, n);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t taken = 0;
    std::size_t attempts = 0;
    for (std::size_t idx : order) {
      if (taken == want || attempts == kMaxAttemptsPerSample * want) break;
      ++attempts;
      const R saved = value[idx];
      std::vector<std::uint32_t> p_plus, p_minus;
      value[idx] = static_cast<R>(static_cast<double>(saved) + eps);
      const double plus = evaluate(&p_plus);
      value[idx] = static_cast<R>(static_cast<double>(saved) - eps);
      const double minus = evaluate(&p_minus);
      value[idx] = saved;
      if (watch_switches && p_plus != p_minus) {
        ++result.skipped;
        continue;
      }
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = static_cast<double>(analytic[li][idx]);
      diff_sq += (a - numeric) * (a - numeric);
      analytic_sq += a * a;
      numeric_sq += numeric * numeric;
      ++taken;
    }
    result.coordinates += taken;
  }
  const double scale = std::sqrt(std::max(analytic_sq, numeric_sq));
  result.max_rel_error = scale == 0.0 ? 0.0 : std::sqrt(diff_sq) / scale;
  result.passed = result.coordinates > 0 && result.max_rel_error <= tol;
  return result;
}

// Relu forward with a backward that ignores the mask; exists to prove the
// harness catches wrong gradients.
template <typename T>
Var<T> corrupted_relu(const Var<T>& x) {
  BasicTensor<T> y = x->value;
  for (T& v : y.data()) v = std::max(v, T{0});
  auto node = make_op_node<T>(OpKind::kCustom, std::move(y), {x});
  if (node->requires_grad) {
    node->backward_fn = [x](Node<T>& self) {
      BasicTensor<T>& dx = x->ensure_grad();
      for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += self.grad[i];
    };
  }
  return node;
}

template <typename T>
std::vector<GradCheckResult> run_all(const GradCheckOptions& options) {
  const double eps = default_epsilon(options.precision);
  const double tol = default_tolerance(options.precision);
  const std::size_t k = options.samples_per_tensor;
  std::mt19937_64 rng(options.seed);
  std::vector<GradCheckResult> results;
  const auto run = [&](const std::string& name, std::vector<Var<T>> leaves, Forward<T> forward) {
    results.push_back(check<T>(name, leaves, forward, leaves, forward, k, eps, tol, false, rng));
  };

  {
    auto x = parameter(random_tensor<T>({2, 5, 5, 3}, rng));
    auto w = parameter(random_tensor<T>({3, 3, 3, 4}, rng));
    auto b = parameter(random_tensor<T>({4}, rng));
    run("conv2d", {x, w, b}, [=] { return ops::conv2d<T>(x, w, 1, b); });
  }
  {
    auto x = parameter(random_tensor<T>({2, 6, 7, 3}, rng));
    auto w = parameter(random_tensor<T>({3, 3, 3, 5}, rng));
    run("conv2d_stride2", {x, w}, [=] { return ops::conv2d<T>(x, w, 2); });
  }
  {
    auto x = parameter(random_tensor<T>({2, 5, 5, 4}, rng));
    auto w = parameter(random_tensor<T>({1, 1, 4, 3}, rng));
    run("conv2d_1x1_stride2", {x, w}, [=] { return ops::conv2d<T>(x, w, 2); });
  }
  {
    auto x = parameter(random_tensor<T>({2, 5, 5, 3}, rng));
    auto w = parameter(random_tensor<T>({3, 3, 3}, rng));
    run("depthwise_conv2d", {x, w}, [=] { return ops::depthwise_conv2d<T>(x, w, 1); });
  }
  {
    auto x = parameter(random_tensor<T>({2, 6, 5, 4}, rng));
    auto w = parameter(random_tensor<T>({3, 3, 4}, rng));
    run("depthwise_conv2d_stride2", {x, w}, [=] { return ops::depthwise_conv2d<T>(x, w, 2); });
  }
  {
    auto x = parameter(random_tensor<T>({2, 3, 4, 5}, rng));
    auto w = parameter(random_tensor<T>({5, 3}, rng));
    run("pointwise_conv2d", {x, w}, [=] { return ops::pointwise_conv2d<T>(x, w); });
  }
  {
    auto x = parameter(distinct_values<T>({2, 5, 6, 3}, rng));
    run("maxpool2d", {x}, [=] { return ops::maxpool2d<T>(x, 3, 2); });
  }
  {
    auto x = parameter(random_tensor<T>({2, 3, 4, 5}, rng));
    run("global_avg_pool", {x}, [=] { return ops::global_avg_pool<T>(x); });
  }
  {
    auto x = parameter(random_tensor<T>({3, 6}, rng));
    auto w = parameter(random_tensor<T>({6, 4}, rng));
    auto b = parameter(random_tensor<T>({4}, rng));
    run("dense", {x, w, b}, [=] { return ops::dense<T>(x, w, b); });
  }
  {
    auto x = parameter(random_tensor<T>({3, 2, 2, 4}, rng));
    auto gamma = parameter(random_tensor<T>({4}, rng, 0.5, 1.5));
    auto beta = parameter(random_tensor<T>({4}, rng));
    auto mean = std::make_shared<BasicTensor<T>>(Shape{4}, T{0});
    auto var = std::make_shared<BasicTensor<T>>(Shape{4}, T{1});
    BatchNormOptions bn;
    bn.update_running_stats = false;
    run("batchnorm_train", {x, gamma, beta}, [=] {
      return ops::batchnorm<T>(x, gamma, beta, *mean, *var, BatchNormMode::kTrain, bn);
    });
  }
  {
    auto x = parameter(random_tensor<T>({3, 2, 2, 4}, rng));
    auto gamma = parameter(random_tensor<T>({4}, rng, 0.5, 1.5));
    auto beta = parameter(random_tensor<T>({4}, rng));
    auto mean = std::make_shared<BasicTensor<T>>(random_tensor<T>({4}, rng));
    auto var = std::make_shared<BasicTensor<T>>(random_tensor<T>({4}, rng, 0.5, 2.0));
    run("batchnorm_infer", {x, gamma, beta}, [=] {
      return ops::batchnorm<T>(x, gamma, beta, *mean, *var, BatchNormMode::kInfer);
    });
  }
  {
    auto x = parameter(signed_away_from_zero<T>({2, 3, 4}, rng));
    run("relu", {x}, [=] { return ops::relu<T>(x); });
  }
  {
    auto x = parameter(random_tensor<T>({2, 3, 4}, rng, -4.0, 4.0));
    run("sigmoid", {x}, [=] { return ops::sigmoid<T>(x); });
  }
  {
    auto a = parameter(random_tensor<T>({2, 3, 4}, rng));
    auto b = parameter(random_tensor<T>({2, 3, 4}, rng));
    run("add", {a, b}, [=] { return ops::add<T>(a, b); });
  }
  {
    auto x = parameter(random_tensor<T>({2, 2, 3, 2}, rng));
    run("flatten", {x}, [=] { return ops::flatten<T>(x); });
  }
  {
    auto a = parameter(random_tensor<T>({2, 3}, rng));
    auto b = parameter(random_tensor<T>({2, 2}, rng));
    auto c = parameter(random_tensor<T>({2, 1}, rng));
    run("concat", {a, b, c}, [=] {
      const std::vector<Var<T>> parts{a, b, c};
      return ops::concat<T>(parts);
    });
  }
  {
    auto x = parameter(random_tensor<T>({2, 3}, rng));
    run("sum", {x}, [=] { return ops::sum<T>(x); });
  }
  {
    auto scores = parameter(random_tensor<T>({3, 4}, rng, 0.05, 0.95));
    BasicTensor<T> labels({3, 4}, T{0});
    std::bernoulli_distribution bit(0.5);
    for (T& v : labels.data()) v = bit(rng) ? T{1} : T{0};
    run("bce_loss", {scores}, [=] { return bce_loss<T>(scores, labels); });
  }
  if (options.corrupt_backward) {
    auto x = parameter(signed_away_from_zero<T>({2, 3, 4}, rng));
    run("corrupted_relu", {x}, [=] { return corrupted_relu<T>(x); });
  }

  if (options.include_model) {
    auto model = std::make_shared<BasicModelGraph<T>>(
        assemble_fabricnet<T>(2, 1, parse_ensemble_spec(kDefaultEnsembleSpec), 48));
    init_params(*model, options.seed);
    auto input = std::make_shared<BasicTensor<T>>(random_tensor<T>({2, 48, 48, 3}, rng, 0.0, 1.0));
    RunOptions run_options;
    run_options.mode = BatchNormMode::kTrain;
    run_options.update_running_stats = false;
    const auto trainable = [](auto& graph) {
      std::vector<std::decay_t<decltype(graph.params().entries()[0].var)>> out;
      for (const auto& e : graph.params().entries()) {
        if (e.trainable) out.push_back(e.var);
      }
      return out;
    };
    const std::vector<Var<T>> leaves = trainable(*model);
    const Forward<T> forward = [=] { return model->forward(*input, run_options); };
    const std::string name = "fabricnet_2class_end_to_end";
    const std::size_t m = options.model_samples_per_tensor;
    if constexpr (std::is_same_v<T, double>) {
      results.push_back(check<T>(name, leaves, forward, leaves, forward, m, eps, tol, true, rng));
    } else {
      auto ref = std::make_shared<BasicModelGraph<double>>(model->template cast<double>());
      auto ref_input = std::make_shared<Tensor64>(input->template cast<double>());
      const Forward<double> ref_forward = [=] { return ref->forward(*ref_input, run_options); };
      results.push_back(check<T, double>(name, leaves, forward, trainable(*ref), ref_forward, m, eps, tol, true, rng));
    }
  }
  return results;
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck(const GradCheckOptions& options) {
  if (options.samples_per_tensor < 1 || options.model_samples_per_tensor < 1) {
    throw ValidationError("gradcheck needs at least one sample per tensor");
  }
  return options.precision == Precision::kFloat64 ? run_all<double>(options) : run_all<float>(options);
}

}  // namespace fabricnet
