// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include "fabricnet/model_graph.hpp"

namespace fabricnet {

template <typename T>
void init_params(BasicModelGraph<T>& graph, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& e : graph.params().entries()) {
    BasicTensor<T>& value = e.var->value;
    switch (e.init) {
      case ParamInit::kZeros:
        value.fill(T{0});
        break;
      case ParamInit::kOnes:
        value.fill(T{1});
        break;
      case ParamInit::kHeNormal: {
        std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(e.fan_in)));
        for (T& v : value.data()) v = static_cast<T>(normal(rng));
        break;
      }
    }
    e.var->grad = BasicTensor<T>();
  }
}

template <typename T>
ParamCount count_params(const BasicModelGraph<T>& graph) {
  ParamCount out;
  for (const auto& e : graph.params().entries()) {
    const std::uint64_t n = e.var->value.numel();
    out.total += n;
    if (e.trainable) out.trainable += n;
  }
  return out;
}

namespace {

FlopCount node_flops(const LayerNode& node, std::span<const Shape> in, const Shape& out) {
  FlopCount f;
  const std::uint64_t out_numel = shape_numel(out);
  const LayerSpec& s = node.spec;
  switch (s.kind) {
    case LayerKind::kInput:
    case LayerKind::kFlatten:
    case LayerKind::kConcat:
      break;
    case LayerKind::kConv:
      f.macs = s.kernel * s.kernel * in[0][2] * out_numel;
      if (s.bias) f.other = out_numel;
      break;
    case LayerKind::kSepConv: {
      const std::uint64_t pixels = out[0] * out[1];
      f.macs = s.kernel * s.kernel * in[0][2] * pixels + in[0][2] * s.filters * pixels;
      break;
    }
    case LayerKind::kDense:
      f.macs = in[0][0] * s.filters;
      f.other = s.filters;
      break;
    case LayerKind::kMaxPool:
    case LayerKind::kBatchNorm:
    case LayerKind::kActivation:
    case LayerKind::kAdd:
    case LayerKind::kGlobalAvgPool:
      f.other = out_numel;
      break;
  }
  return f;
}

// Per-node costs with shapes re-derived for `input_shape`.
template <typename T>
std::vector<FlopCount> per_node_flops(const BasicModelGraph<T>& graph, const Shape& input_shape) {
  const auto& nodes = graph.nodes();
  std::vector<Shape> shapes(nodes.size());
  std::vector<FlopCount> flops(nodes.size());
  shapes[0] = input_shape;
  std::vector<Shape> in;
  for (std::size_t i = 1; i < nodes.size(); ++i) {
    in.clear();
    for (std::size_t j : nodes[i].inputs) in.push_back(shapes[j]);
    shapes[i] = layer_output_shape(nodes[i].spec, in);
    flops[i] = node_flops(nodes[i], in, shapes[i]);
  }
  return flops;
}

}  // namespace

template <typename T>
FlopCount count_flops(const BasicModelGraph<T>& graph, const Shape& input_shape) {
  FlopCount total;
  for (const auto& f : per_node_flops(graph, input_shape)) total += f;
  return total;
}

template <typename T>
std::vector<GroupCost> cost_by_group(const BasicModelGraph<T>& graph, const Shape& input_shape) {
  std::vector<GroupCost> out;
  std::unordered_map<std::string, std::size_t> index;
  const auto slot = [&](const std::string& group) -> GroupCost& {
    auto [it, inserted] = index.emplace(group, out.size());
    if (inserted) out.push_back(GroupCost{group, {}, {}});
    return out[it->second];
  };

  const auto& nodes = graph.nodes();
  const auto flops = per_node_flops(graph, input_shape);
  std::unordered_map<std::string, std::string> node_group;
  for (std::size_t i = 1; i < nodes.size(); ++i) {
    node_group.emplace(nodes[i].name, nodes[i].group);
    slot(nodes[i].group).flops += flops[i];
  }
  for (const auto& e : graph.params().entries()) {
    const std::string owner = e.name.substr(0, e.name.rfind('/'));
    GroupCost& g = slot(node_group.at(owner));
    const std::uint64_t n = e.var->value.numel();
    g.params.total += n;
    if (e.trainable) g.params.trainable += n;
  }
  return out;
}

#define FABRICNET_INSTANTIATE_COST(T)                                                         \
  template void init_params<T>(BasicModelGraph<T>&, std::uint64_t);                           \
  template ParamCount count_params<T>(const BasicModelGraph<T>&);                             \
  template FlopCount count_flops<T>(const BasicModelGraph<T>&, const Shape&);                 \
  template std::vector<GroupCost> cost_by_group<T>(const BasicModelGraph<T>&, const Shape&);

FABRICNET_INSTANTIATE_COST(float)
FABRICNET_INSTANTIATE_COST(double)

}  // namespace fabricnet
