// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <sstream>

#include "fabricnet/model_graph.hpp"

namespace fabricnet {

namespace {

constexpr std::size_t kMiddleFilters = 728;

template <typename T>
class Builder {
 public:
  Builder(BasicModelGraph<T>& graph, std::string prefix, std::string group)
      : graph_(graph), prefix_(std::move(prefix)), group_(std::move(group)) {}

  std::size_t operator()(const LayerSpec& spec, std::size_t input, const std::string& name) {
    return graph_.add(spec, {input}, prefix_ + name, group_);
  }
  std::size_t add(std::size_t a, std::size_t b, const std::string& name) {
    return graph_.add(LayerSpec::add(), {a, b}, prefix_ + name, group_);
  }

 private:
  BasicModelGraph<T>& graph_;
  std::string prefix_;
  std::string group_;
};

// Two separable convolutions and a strided maxpool, plus a strided 1x1
// projection on the shortcut.
template <typename T>
std::size_t downsample_block(Builder<T>& b, std::size_t x, std::size_t filters, bool pre_relu, std::size_t mid_filters,
                             const std::string& name) {
  std::size_t res = b(LayerSpec::conv(filters, 1, 2), x, name + "_res_conv");
  res = b(LayerSpec::batchnorm(), res, name + "_res_bn");
  if (pre_relu) x = b(LayerSpec::relu(), x, name + "_sepconv1_act");
  x = b(LayerSpec::sepconv(mid_filters, 3, 1), x, name + "_sepconv1");
  x = b(LayerSpec::batchnorm(), x, name + "_sepconv1_bn");
  x = b(LayerSpec::relu(), x, name + "_sepconv2_act");
  x = b(LayerSpec::sepconv(filters, 3, 1), x, name + "_sepconv2");
  x = b(LayerSpec::batchnorm(), x, name + "_sepconv2_bn");
  x = b(LayerSpec::maxpool(3, 2), x, name + "_pool");
  return b.add(x, res, name + "_add");
}

std::string two_digits(std::size_t i, std::size_t width) {
  std::string s = std::to_string(i);
  while (s.size() < width) s.insert(s.begin(), '0');
  return s;
}

}  // namespace

template <typename T>
std::size_t build_entry_flow(BasicModelGraph<T>& graph, std::size_t input) {
  const Shape& s = graph.node(input).shape;
  if (s.size() != 3 || s[0] < 32 || s[1] < 32) {
    throw ValidationError("entry flow needs an input of at least 32x32, got " + shape_to_string(s));
  }
  Builder<T> b(graph, "", "head");
  std::size_t x = b(LayerSpec::conv(32, 3, 2), input, "block1_conv1");
  x = b(LayerSpec::batchnorm(), x, "block1_conv1_bn");
  x = b(LayerSpec::relu(), x, "block1_conv1_act");
  x = b(LayerSpec::conv(64, 3, 1), x, "block1_conv2");
  x = b(LayerSpec::batchnorm(), x, "block1_conv2_bn");
  x = b(LayerSpec::relu(), x, "block1_conv2_act");
  x = downsample_block(b, x, 128, false, 128, "block2");
  x = downsample_block(b, x, 256, true, 256, "block3");
  x = downsample_block(b, x, kMiddleFilters, true, kMiddleFilters, "block4");
  return x;
}

template <typename T>
std::size_t build_middle_flow(BasicModelGraph<T>& graph, std::size_t input, std::size_t count) {
  Builder<T> b(graph, "", "head");
  std::size_t x = input;
  for (std::size_t i = 0; i < count; ++i) {
    const std::string block = "block" + std::to_string(5 + i);
    std::size_t y = x;
    for (int j = 1; j <= 3; ++j) {
      const std::string sep = block + "_sepconv" + std::to_string(j);
      y = b(LayerSpec::relu(), y, sep + "_act");
      y = b(LayerSpec::sepconv(kMiddleFilters, 3, 1), y, sep);
      y = b(LayerSpec::batchnorm(), y, sep + "_bn");
    }
    x = b.add(y, x, block + "_add");
  }
  return x;
}

template <typename T>
std::size_t build_ensemble_submodel(BasicModelGraph<T>& graph, std::size_t head_output, const EnsembleSpec& spec,
                                    const std::string& group) {
  if (spec.layers.empty()) throw ValidationError("ensemble spec has no layers");
  Builder<T> b(graph, group + "/", group);
  std::size_t x = head_output;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& layer = spec.layers[i];
    const Shape& in = graph.node(x).shape;
    if (layer.stride > 1 && (in[0] <= 1 || in[1] <= 1)) {
      throw ValidationError("ensemble layer " + std::to_string(i + 1) + " (" + to_string(layer) +
                            ") would reduce a " + shape_to_string(in) + " input below 1x1");
    }
    const std::string name = "sepconv" + std::to_string(i + 1);
    x = b(layer, x, name);
    x = b(LayerSpec::batchnorm(), x, name + "_bn");
    x = b(LayerSpec::relu(), x, name + "_act");
  }
  x = b(LayerSpec::flatten(), x, "flatten");
  x = b(LayerSpec::dense(1), x, "dense");
  return b(LayerSpec::sigmoid(), x, "score");
}

template <typename T>
BasicModelGraph<T> assemble_fabricnet(std::size_t n_classes, std::size_t middle_count, const EnsembleSpec& spec,
                                      std::size_t input_size) {
  if (n_classes < 1) throw ValidationError("n_classes must be >= 1");
  BasicModelGraph<T> graph({input_size, input_size, 3});
  std::size_t head = build_entry_flow(graph, graph.input());
  head = build_middle_flow(graph, head, middle_count);
  const std::size_t width = std::max<std::size_t>(2, std::to_string(n_classes - 1).size());
  std::vector<std::size_t> outputs;
  outputs.reserve(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    outputs.push_back(build_ensemble_submodel(graph, head, spec, "class_" + two_digits(c, width)));
  }
  const std::size_t out = graph.add(LayerSpec::concat(), outputs, "scores", "output");
  graph.set_output(out);
  graph.set_ensemble_layout(head, std::move(outputs));
  return graph;
}

template <typename T>
BasicModelGraph<T> assemble_monolithic(std::size_t n_classes, std::size_t middle_count, std::size_t input_size) {
  if (n_classes < 1) throw ValidationError("n_classes must be >= 1");
  BasicModelGraph<T> graph({input_size, input_size, 3});
  std::size_t x = build_entry_flow(graph, graph.input());
  x = build_middle_flow(graph, x, middle_count);
  Builder<T> b(graph, "", "top");
  x = b(LayerSpec::flatten(), x, "flatten");
  x = b(LayerSpec::dense(n_classes), x, "predictions");
  x = b(LayerSpec::sigmoid(), x, "scores");
  graph.set_output(x);
  return graph;
}

template <typename T>
BasicModelGraph<T> build_xception_reference(std::size_t n_classes, std::size_t input_size) {
  if (n_classes < 1) throw ValidationError("n_classes must be >= 1");
  BasicModelGraph<T> graph({input_size, input_size, 3});
  std::size_t x = build_entry_flow(graph, graph.input());
  x = build_middle_flow(graph, x, 8);
  Builder<T> b(graph, "", "exit");
  x = downsample_block(b, x, 1024, true, kMiddleFilters, "block13");
  x = b(LayerSpec::sepconv(1536, 3, 1), x, "block14_sepconv1");
  x = b(LayerSpec::batchnorm(), x, "block14_sepconv1_bn");
  x = b(LayerSpec::relu(), x, "block14_sepconv1_act");
  x = b(LayerSpec::sepconv(2048, 3, 1), x, "block14_sepconv2");
  x = b(LayerSpec::batchnorm(), x, "block14_sepconv2_bn");
  x = b(LayerSpec::relu(), x, "block14_sepconv2_act");
  x = b(LayerSpec::global_avg_pool(), x, "avg_pool");
  x = b(LayerSpec::dense(n_classes), x, "predictions");
  x = b(LayerSpec::sigmoid(), x, "scores");
  graph.set_output(x);
  return graph;
}

namespace {

const char* architecture_name(Architecture a) {
  switch (a) {
    case Architecture::kFabricNet: return "fabricnet";
    case Architecture::kMonolithic: return "monolithic";
    case Architecture::kXception: return "xception";
  }
  return "unknown";
}

std::size_t parse_count(std::string_view key, std::string_view value) {
  std::size_t out = 0;
  if (value.empty()) throw ValidationError("model config: empty value for '" + std::string(key) + "'");
  for (char c : value) {
    if (c < '0' || c > '9') {
      throw ValidationError("model config: '" + std::string(key) + "' must be a non-negative integer");
    }
    out = out * 10 + static_cast<std::size_t>(c - '0');
    if (out > (1u << 24)) throw ValidationError("model config: '" + std::string(key) + "' is too large");
  }
  return out;
}

}  // namespace

std::string ModelConfig::to_string() const {
  std::ostringstream out;
  out << architecture_name(architecture) << " classes=" << n_classes;
  if (architecture != Architecture::kXception) out << " middle=" << middle_flows;
  out << " input=" << input_size;
  if (architecture == Architecture::kFabricNet) out << " spec=" << ensemble_spec;
  return out.str();
}

ModelConfig ModelConfig::parse(std::string_view text) {
  ModelConfig config;
  std::istringstream in{std::string(text)};
  std::string token;
  if (!(in >> token)) throw ValidationError("model config is empty");
  if (token == "fabricnet") {
    config.architecture = Architecture::kFabricNet;
  } else if (token == "monolithic") {
    config.architecture = Architecture::kMonolithic;
  } else if (token == "xception") {
    config.architecture = Architecture::kXception;
    config.middle_flows = 8;
  } else {
    throw ValidationError("model config: unknown architecture '" + token + "'");
  }
  while (in >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw ValidationError("model config: expected key=value, got '" + token + "'");
    const std::string key = token.substr(0, eq);
    const std::string value = token.substr(eq + 1);
    if (key == "classes") {
      config.n_classes = parse_count(key, value);
    } else if (key == "middle") {
      config.middle_flows = parse_count(key, value);
    } else if (key == "input") {
      config.input_size = parse_count(key, value);
    } else if (key == "spec") {
      config.ensemble_spec = parse_ensemble_spec(value).to_string();
    } else {
      throw ValidationError("model config: unknown key '" + key + "'");
    }
  }
  return config;
}

template <typename T>
BasicModelGraph<T> build_model(const ModelConfig& config) {
  switch (config.architecture) {
    case Architecture::kFabricNet:
      return assemble_fabricnet<T>(config.n_classes, config.middle_flows, parse_ensemble_spec(config.ensemble_spec),
                                   config.input_size);
    case Architecture::kMonolithic:
      return assemble_monolithic<T>(config.n_classes, config.middle_flows, config.input_size);
    case Architecture::kXception:
      return build_xception_reference<T>(config.n_classes, config.input_size);
  }
  throw ValidationError("unknown architecture");
}

#define FABRICNET_INSTANTIATE_BUILDERS(T)                                                                          \
  template std::size_t build_entry_flow<T>(BasicModelGraph<T>&, std::size_t);                                     \
  template std::size_t build_middle_flow<T>(BasicModelGraph<T>&, std::size_t, std::size_t);                       \
  template std::size_t build_ensemble_submodel<T>(BasicModelGraph<T>&, std::size_t, const EnsembleSpec&,          \
                                                  const std::string&);                                            \
  template BasicModelGraph<T> assemble_fabricnet<T>(std::size_t, std::size_t, const EnsembleSpec&, std::size_t); \
  template BasicModelGraph<T> assemble_monolithic<T>(std::size_t, std::size_t, std::size_t);                      \
  template BasicModelGraph<T> build_xception_reference<T>(std::size_t, std::size_t);                              \
  template BasicModelGraph<T> build_model<T>(const ModelConfig&);

FABRICNET_INSTANTIATE_BUILDERS(float)
FABRICNET_INSTANTIATE_BUILDERS(double)

}  // namespace fabricnet
