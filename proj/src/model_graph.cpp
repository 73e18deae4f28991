// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0

#include "fabricnet/model_graph.hpp"

#include <algorithm>
#include <sstream>

namespace fabricnet {

template <typename T>
Var<T> ParamStore<T>::add(std::string name, Shape shape, bool trainable, ParamInit init, std::size_t fan_in) {
  if (index_.count(name) != 0) throw ValidationError("duplicate parameter name '" + name + "'");
  const T fill = init == ParamInit::kOnes ? T{1} : T{0};
  Var<T> var = trainable ? parameter(BasicTensor<T>(std::move(shape), fill))
                         : constant(BasicTensor<T>(std::move(shape), fill));
  index_.emplace(name, entries_.size());
  entries_.push_back(Entry{std::move(name), var, trainable, init, fan_in});
  return var;
}

template <typename T>
const typename ParamStore<T>::Entry* ParamStore<T>::find(std::string_view name) const {
  const auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &entries_[it->second];
}

template <typename T>
const Var<T>& ParamStore<T>::get(std::string_view name) const {
  const Entry* e = find(name);
  if (e == nullptr) throw ValidationError("unknown parameter '" + std::string(name) + "'");
  return e->var;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& e : entries_) {
    if (e.trainable) e.var->ensure_grad().fill(T{0});
  }
}

template <typename T>
BasicModelGraph<T>::BasicModelGraph(Shape input_shape) {
  if (input_shape.size() != 3) throw ShapeError("model input must be [H,W,C], got " + shape_to_string(input_shape));
  for (std::size_t d : input_shape) {
    if (d == 0) throw ShapeError("model input dimensions must be positive");
  }
  LayerNode in;
  in.name = "input";
  in.spec.kind = LayerKind::kInput;
  in.group = "input";
  in.shape = std::move(input_shape);
  names_.emplace(in.name, 0);
  nodes_.push_back(std::move(in));
}

template <typename T>
std::size_t BasicModelGraph<T>::add(const LayerSpec& spec, std::vector<std::size_t> inputs, std::string name,
                                    std::string group) {
  if (names_.count(name) != 0) throw ValidationError("duplicate layer name '" + name + "'");
  std::vector<Shape> in_shapes;
  for (std::size_t i : inputs) {
    if (i >= nodes_.size()) throw ValidationError("layer '" + name + "' consumes unknown node " + std::to_string(i));
    in_shapes.push_back(nodes_[i].shape);
  }
  Shape shape = layer_output_shape(spec, in_shapes);

  const auto param = [&](const char* suffix, Shape s, bool trainable, ParamInit init, std::size_t fan_in = 0) {
    params_.add(name + "/" + suffix, std::move(s), trainable, init, fan_in);
  };
  switch (spec.kind) {
    case LayerKind::kConv: {
      const std::size_t in_c = in_shapes[0][2];
      param("kernel", {spec.kernel, spec.kernel, in_c, spec.filters}, true, ParamInit::kHeNormal,
            spec.kernel * spec.kernel * in_c);
      if (spec.bias) param("bias", {spec.filters}, true, ParamInit::kZeros);
      break;
    }
    case LayerKind::kSepConv: {
      const std::size_t in_c = in_shapes[0][2];
      param("depthwise", {spec.kernel, spec.kernel, in_c}, true, ParamInit::kHeNormal, spec.kernel * spec.kernel);
      param("pointwise", {in_c, spec.filters}, true, ParamInit::kHeNormal, in_c);
      break;
    }
    case LayerKind::kBatchNorm: {
      const std::size_t channels = shape.back();
      param("gamma", {channels}, true, ParamInit::kOnes);
      param("beta", {channels}, true, ParamInit::kZeros);
      param("moving_mean", {channels}, false, ParamInit::kZeros);
      param("moving_variance", {channels}, false, ParamInit::kOnes);
      break;
    }
    case LayerKind::kDense: {
      const std::size_t in = in_shapes[0][0];
      param("weights", {in, spec.filters}, true, ParamInit::kHeNormal, in);
      param("bias", {spec.filters}, true, ParamInit::kZeros);
      break;
    }
    default:
      break;
  }

  LayerNode node;
  node.name = std::move(name);
  node.spec = spec;
  node.inputs = std::move(inputs);
  node.group = std::move(group);
  node.shape = std::move(shape);
  names_.emplace(node.name, nodes_.size());
  nodes_.push_back(std::move(node));
  output_ = nodes_.size() - 1;
  return output_;
}

template <typename T>
void BasicModelGraph<T>::set_ensemble_layout(std::size_t head_output, std::vector<std::size_t> class_outputs) {
  head_output_ = head_output;
  class_outputs_ = std::move(class_outputs);
}

template <typename T>
Var<T> BasicModelGraph<T>::eval_node(const LayerNode& node, std::span<const Var<T>> in,
                                     const RunOptions& options) const {
  const LayerSpec& spec = node.spec;
  const auto p = [&](const char* suffix) -> const Var<T>& { return params_.get(node.name + "/" + suffix); };
  switch (spec.kind) {
    case LayerKind::kInput:
      throw ValidationError("graph input was not fed");
    case LayerKind::kConv:
      return ops::conv2d<T>(in[0], p("kernel"), spec.stride, spec.bias ? p("bias") : nullptr);
    case LayerKind::kSepConv:
      return ops::pointwise_conv2d<T>(ops::depthwise_conv2d<T>(in[0], p("depthwise"), spec.stride), p("pointwise"));
    case LayerKind::kMaxPool:
      return ops::maxpool2d<T>(in[0], spec.kernel, spec.stride);
    case LayerKind::kBatchNorm: {
      BatchNormOptions bn;
      bn.update_running_stats = options.update_running_stats;
      return ops::batchnorm<T>(in[0], p("gamma"), p("beta"), p("moving_mean")->value, p("moving_variance")->value,
                               options.mode, bn);
    }
    case LayerKind::kActivation:
      return spec.activation == Activation::kRelu ? ops::relu<T>(in[0]) : ops::sigmoid<T>(in[0]);
    case LayerKind::kDense:
      return ops::dense<T>(in[0], p("weights"), p("bias"));
    case LayerKind::kAdd:
      return ops::add<T>(in[0], in[1]);
    case LayerKind::kGlobalAvgPool:
      return ops::global_avg_pool<T>(in[0]);
    case LayerKind::kFlatten:
      return ops::flatten<T>(in[0]);
    case LayerKind::kConcat:
      return ops::concat<T>(in);
  }
  throw ValidationError("unknown layer kind");
}

template <typename T>
std::vector<Var<T>> BasicModelGraph<T>::run(std::span<const std::pair<std::size_t, Var<T>>> feeds,
                                            std::span<const std::size_t> fetches, const RunOptions& options) const {
  std::vector<Var<T>> values(nodes_.size());
  std::optional<std::size_t> batch;
  for (const auto& [index, var] : feeds) {
    if (index >= nodes_.size()) throw ValidationError("feed targets unknown node " + std::to_string(index));
    const Shape& s = var->value.shape();
    Shape expected{s.empty() ? 0 : s[0]};
    expected.insert(expected.end(), nodes_[index].shape.begin(), nodes_[index].shape.end());
    if (s != expected) {
      throw ShapeError("feed for '" + nodes_[index].name + "' has shape " + shape_to_string(s) + ", expected [N]+" +
                       shape_to_string(nodes_[index].shape));
    }
    if (batch && *batch != s[0]) throw ShapeError("feeds disagree on the batch size");
    batch = s[0];
    values[index] = var;
  }

  std::vector<char> needed(nodes_.size(), 0);
  for (std::size_t f : fetches) {
    if (f >= nodes_.size()) throw ValidationError("fetch targets unknown node " + std::to_string(f));
    needed[f] = 1;
  }
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    if (!needed[i] || values[i]) continue;
    for (std::size_t in : nodes_[i].inputs) needed[in] = 1;
  }

  // Without graph recording, intermediates can be dropped after their last use.
  const bool release = !grad_enabled();
  std::vector<std::size_t> last_use(nodes_.size(), 0);
  std::vector<char> keep(nodes_.size(), 0);
  for (std::size_t f : fetches) keep[f] = 1;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!needed[i] || values[i]) continue;
    for (std::size_t in : nodes_[i].inputs) last_use[in] = i;
  }

  std::vector<Var<T>> args;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!needed[i] || values[i]) continue;
    args.clear();
    for (std::size_t in : nodes_[i].inputs) args.push_back(values[in]);
    values[i] = eval_node(nodes_[i], args, options);
    if (!release) continue;
    args.clear();
    for (std::size_t in : nodes_[i].inputs) {
      if (last_use[in] == i && !keep[in]) values[in].reset();
    }
  }

  std::vector<Var<T>> out;
  out.reserve(fetches.size());
  for (std::size_t f : fetches) out.push_back(values[f]);
  return out;
}

template <typename T>
Var<T> BasicModelGraph<T>::forward(const BasicTensor<T>& batch, const RunOptions& options) const {
  const std::pair<std::size_t, Var<T>> feed{input(), constant(batch)};
  const std::size_t fetch = output_;
  return run(std::span(&feed, 1), std::span(&fetch, 1), options).front();
}

template <typename T>
std::string BasicModelGraph<T>::signature() const {
  std::ostringstream out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const LayerNode& n = nodes_[i];
    out << i << ' ' << n.name << ' ' << to_string(n.spec) << " <-";
    for (std::size_t in : n.inputs) out << ' ' << in;
    out << " : " << shape_to_string(n.shape) << '\n';
  }
  out << "output " << output_ << '\n';
  return out.str();
}

template <typename T>
template <typename U>
BasicModelGraph<U> BasicModelGraph<T>::cast() const {
  BasicModelGraph<U> out(input_shape());
  out.nodes_ = nodes_;
  out.names_ = names_;
  out.output_ = output_;
  out.head_output_ = head_output_;
  out.class_outputs_ = class_outputs_;
  for (const auto& e : params_.entries()) {
    Var<U> v = out.params_.add(e.name, e.var->value.shape(), e.trainable, e.init, e.fan_in);
    v->value = e.var->value.template cast<U>();
  }
  return out;
}

template class ParamStore<float>;
template class ParamStore<double>;
template class BasicModelGraph<float>;
template class BasicModelGraph<double>;
template BasicModelGraph<double> BasicModelGraph<float>::cast<double>() const;
template BasicModelGraph<float> BasicModelGraph<double>::cast<float>() const;
template BasicModelGraph<float> BasicModelGraph<float>::cast<float>() const;
template BasicModelGraph<double> BasicModelGraph<double>::cast<double>() const;

}  // namespace fabricnet
