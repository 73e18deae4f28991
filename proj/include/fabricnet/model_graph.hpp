// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fabricnet/autodiff.hpp"
#include "fabricnet/tensor.hpp"

namespace fabricnet {

enum class LayerKind {
  kInput,
  kConv,
  kSepConv,
  kMaxPool,
  kBatchNorm,
  kActivation,
  kDense,
  kAdd,
  kGlobalAvgPool,
  kFlatten,
  kConcat,
};

enum class Activation { kRelu, kSigmoid };

struct LayerSpec {
  LayerKind kind = LayerKind::kInput;
  std::size_t filters = 0;  // output channels (conv, sepconv) or units (dense)
  std::size_t kernel = 1;
  std::size_t stride = 1;
  Activation activation = Activation::kRelu;
  bool bias = false;

  static LayerSpec conv(std::size_t filters, std::size_t kernel, std::size_t stride, bool bias = false);
  static LayerSpec sepconv(std::size_t filters, std::size_t kernel, std::size_t stride);
  static LayerSpec maxpool(std::size_t window = 3, std::size_t stride = 2);
  static LayerSpec batchnorm();
  static LayerSpec relu();
  static LayerSpec sigmoid();
  static LayerSpec dense(std::size_t units);
  static LayerSpec add();
  static LayerSpec global_avg_pool();
  static LayerSpec flatten();
  static LayerSpec concat();

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

std::string to_string(const LayerSpec& spec);

// One class-specific submodel: a stack of separable convolutions (each
// followed by batchnorm and relu) ending in flatten -> dense(1) -> sigmoid.
struct EnsembleSpec {
  std::vector<LayerSpec> layers;

  // Canonical text form, e.g. "{S4,3,2},{S16,3,2}".
  std::string to_string() const;
  friend bool operator==(const EnsembleSpec&, const EnsembleSpec&) = default;
};

inline constexpr std::string_view kDefaultEnsembleSpec = "{S4,3,2},{S16,3,2}";

// spec  := group ("," group)*
// group := "{" "S" int "," int "," int "}"   (filters, kernel, stride)
EnsembleSpec parse_ensemble_spec(std::string_view text);

struct LayerNode {
  std::string name;
  LayerSpec spec;
  std::vector<std::size_t> inputs;
  std::string group;
  Shape shape;  // per-sample output shape: [H,W,C] or [D]
};

// Per-sample output shape of a layer; throws ShapeError on incompatible inputs.
Shape layer_output_shape(const LayerSpec& spec, std::span<const Shape> inputs);

enum class ParamInit { kHeNormal, kZeros, kOnes };

template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Var<T> var;
    bool trainable = true;
    ParamInit init = ParamInit::kZeros;
    std::size_t fan_in = 0;
  };

  Var<T> add(std::string name, Shape shape, bool trainable, ParamInit init, std::size_t fan_in = 0);

  const Var<T>& get(std::string_view name) const;
  const Entry* find(std::string_view name) const;
  bool contains(std::string_view name) const { return find(name) != nullptr; }

  std::vector<Entry>& entries() noexcept { return entries_; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  void zero_grad();

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct RunOptions {
  BatchNormMode mode = BatchNormMode::kInfer;
  bool update_running_stats = true;
};

// A DAG of layers over a named parameter store. Node 0 is the input; every
// other node only consumes earlier nodes, so index order is a topological
// order.
template <typename T>
class BasicModelGraph {
 public:
  explicit BasicModelGraph(Shape input_shape);

  std::size_t input() const noexcept { return 0; }

  // Appends a layer; parameters are created zero/one-initialized (see
  // init_params). Names must be unique.
  std::size_t add(const LayerSpec& spec, std::vector<std::size_t> inputs, std::string name, std::string group);

  const std::vector<LayerNode>& nodes() const noexcept { return nodes_; }
  const LayerNode& node(std::size_t index) const { return nodes_.at(index); }
  const Shape& input_shape() const noexcept { return nodes_.front().shape; }

  ParamStore<T>& params() noexcept { return params_; }
  const ParamStore<T>& params() const noexcept { return params_; }

  void set_output(std::size_t node) { output_ = node; }
  std::size_t output() const noexcept { return output_; }

  // Class-based ensemble layout, when the graph is one.
  void set_ensemble_layout(std::size_t head_output, std::vector<std::size_t> class_outputs);
  std::optional<std::size_t> head_output() const noexcept { return head_output_; }
  const std::vector<std::size_t>& class_outputs() const noexcept { return class_outputs_; }

  // Evaluates the fetched nodes given values for the fed nodes. Only the
  // ancestors of the fetches that are not fed are computed.
  std::vector<Var<T>> run(std::span<const std::pair<std::size_t, Var<T>>> feeds,
                          std::span<const std::size_t> fetches, const RunOptions& options) const;

  // batch: [N, H, W, C] matching input_shape().
  Var<T> forward(const BasicTensor<T>& batch, const RunOptions& options) const;

  // Layer list with shapes; identical for graphs built from identical specs.
  std::string signature() const;

  template <typename U>
  BasicModelGraph<U> cast() const;

 private:
  template <typename>
  friend class BasicModelGraph;

  Var<T> eval_node(const LayerNode& node, std::span<const Var<T>> in, const RunOptions& options) const;

  std::vector<LayerNode> nodes_;
  std::unordered_map<std::string, std::size_t> names_;
  ParamStore<T> params_;
  std::size_t output_ = 0;
  std::optional<std::size_t> head_output_;
  std::vector<std::size_t> class_outputs_;
};

using ModelGraph = BasicModelGraph<float>;
using ModelGraph64 = BasicModelGraph<double>;

// Xception entry flow: two plain convolutions, then three residual blocks
// of separable convolutions (128, 256, 728 filters). Requires H, W >= 32.
template <typename T>
std::size_t build_entry_flow(BasicModelGraph<T>& graph, std::size_t input);

// `count` shape-preserving residual blocks of three 728-filter separable
// convolutions.
template <typename T>
std::size_t build_middle_flow(BasicModelGraph<T>& graph, std::size_t input, std::size_t count);

// Appends one class submodel consuming `head_output`; returns its [1] output node.
template <typename T>
std::size_t build_ensemble_submodel(BasicModelGraph<T>& graph, std::size_t head_output, const EnsembleSpec& spec,
                                    const std::string& group);

template <typename T>
BasicModelGraph<T> assemble_fabricnet(std::size_t n_classes, std::size_t middle_count, const EnsembleSpec& spec,
                                      std::size_t input_size = 120);

// Head followed by a single shared flatten -> dense(n_classes) -> sigmoid.
template <typename T>
BasicModelGraph<T> assemble_monolithic(std::size_t n_classes, std::size_t middle_count, std::size_t input_size = 120);

// Full Xception: entry flow, eight middle flows, exit flow, global average
// pooling and a dense classifier.
template <typename T>
BasicModelGraph<T> build_xception_reference(std::size_t n_classes = 1000, std::size_t input_size = 120);

enum class Architecture { kFabricNet, kMonolithic, kXception };

// Everything needed to rebuild a model; serialized into checkpoints.
struct ModelConfig {
  Architecture architecture = Architecture::kFabricNet;
  std::size_t n_classes = 50;
  std::size_t middle_flows = 2;
  std::size_t input_size = 120;
  std::string ensemble_spec = std::string(kDefaultEnsembleSpec);

  std::string to_string() const;
  static ModelConfig parse(std::string_view text);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
BasicModelGraph<T> build_model(const ModelConfig& config);

// He-normal weights (std = sqrt(2 / fan_in)), zero biases/beta, unit gamma;
// running mean 0 and variance 1. Fully determined by the seed.
template <typename T>
void init_params(BasicModelGraph<T>& graph, std::uint64_t seed);

struct ParamCount {
  std::uint64_t trainable = 0;
  std::uint64_t total = 0;  // includes batchnorm running statistics
};

template <typename T>
ParamCount count_params(const BasicModelGraph<T>& graph);

// Multiply-accumulates and other arithmetic are tallied separately; the
// reported FLOP figure weights each MAC by `flops_per_mac`.
inline constexpr unsigned kDefaultFlopsPerMac = 1;

struct FlopCount {
  std::uint64_t macs = 0;
  std::uint64_t other = 0;  // bias adds, pooling, activations, batchnorm, residual adds

  std::uint64_t total(unsigned flops_per_mac = kDefaultFlopsPerMac) const { return macs * flops_per_mac + other; }
  FlopCount& operator+=(const FlopCount& o) {
    macs += o.macs;
    other += o.other;
    return *this;
  }
};

// Counts a single forward pass of one sample at `input_shape` ([H,W,C]).
template <typename T>
FlopCount count_flops(const BasicModelGraph<T>& graph, const Shape& input_shape);

struct GroupCost {
  std::string group;
  ParamCount params;
  FlopCount flops;
};

// Cost per node group ("head", "class_00", ...), in first-appearance order.
template <typename T>
std::vector<GroupCost> cost_by_group(const BasicModelGraph<T>& graph, const Shape& input_shape);

}  // namespace fabricnet
