// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0

#include <cctype>
#include <limits>
#include <string>

#include "fabricnet/kernels.hpp"
#include "fabricnet/model_graph.hpp"

namespace fabricnet {

LayerSpec LayerSpec::conv(std::size_t filters, std::size_t kernel, std::size_t stride, bool bias) {
  LayerSpec s;
  s.kind = LayerKind::kConv;
  s.filters = filters;
  s.kernel = kernel;
  s.stride = stride;
  s.bias = bias;
  return s;
}

LayerSpec LayerSpec::sepconv(std::size_t filters, std::size_t kernel, std::size_t stride) {
  LayerSpec s;
  s.kind = LayerKind::kSepConv;
  s.filters = filters;
  s.kernel = kernel;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::maxpool(std::size_t window, std::size_t stride) {
  LayerSpec s;
  s.kind = LayerKind::kMaxPool;
  s.kernel = window;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::batchnorm() {
  LayerSpec s;
  s.kind = LayerKind::kBatchNorm;
  return s;
}

LayerSpec LayerSpec::relu() {
  LayerSpec s;
  s.kind = LayerKind::kActivation;
  s.activation = Activation::kRelu;
  return s;
}

LayerSpec LayerSpec::sigmoid() {
  LayerSpec s;
  s.kind = LayerKind::kActivation;
  s.activation = Activation::kSigmoid;
  return s;
}

LayerSpec LayerSpec::dense(std::size_t units) {
  LayerSpec s;
  s.kind = LayerKind::kDense;
  s.filters = units;
  s.bias = true;
  return s;
}

LayerSpec LayerSpec::add() {
  LayerSpec s;
  s.kind = LayerKind::kAdd;
  return s;
}

LayerSpec LayerSpec::global_avg_pool() {
  LayerSpec s;
  s.kind = LayerKind::kGlobalAvgPool;
  return s;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec s;
  s.kind = LayerKind::kFlatten;
  return s;
}

LayerSpec LayerSpec::concat() {
  LayerSpec s;
  s.kind = LayerKind::kConcat;
  return s;
}

std::string to_string(const LayerSpec& spec) {
  const auto triple = [&](const char* tag) {
    return std::string(tag) + "(" + std::to_string(spec.filters) + "," + std::to_string(spec.kernel) + "," +
           std::to_string(spec.stride) + ")";
  };
  switch (spec.kind) {
    case LayerKind::kInput: return "input";
    case LayerKind::kConv: return triple(spec.bias ? "conv+bias" : "conv");
    case LayerKind::kSepConv: return triple("sepconv");
    case LayerKind::kMaxPool: return "maxpool(" + std::to_string(spec.kernel) + "," + std::to_string(spec.stride) + ")";
    case LayerKind::kBatchNorm: return "batchnorm";
    case LayerKind::kActivation: return spec.activation == Activation::kRelu ? "relu" : "sigmoid";
    case LayerKind::kDense: return "dense(" + std::to_string(spec.filters) + ")";
    case LayerKind::kAdd: return "add";
    case LayerKind::kGlobalAvgPool: return "global_avg_pool";
    case LayerKind::kFlatten: return "flatten";
    case LayerKind::kConcat: return "concat";
  }
  return "unknown";
}

std::string EnsembleSpec::to_string() const {
  std::string out;
  for (const auto& layer : layers) {
    if (!out.empty()) out += ",";
    out += "{S" + std::to_string(layer.filters) + "," + std::to_string(layer.kernel) + "," +
           std::to_string(layer.stride) + "}";
  }
  return out;
}

namespace {

class SpecParser {
 public:
  explicit SpecParser(std::string_view text) : text_(text) {}

  EnsembleSpec parse() {
    EnsembleSpec spec;
    if (text_.empty()) throw ParseError("empty ensemble spec", 0);
    spec.layers.push_back(group());
    skip_space();
    while (pos_ < text_.size()) {
      expect(',');
      spec.layers.push_back(group());
      skip_space();
    }
    return spec;
  }

 private:
  LayerSpec group() {
    expect('{');
    expect('S');
    const std::size_t filters_at = pos_;
    const std::size_t filters = integer("filter count");
    expect(',');
    const std::size_t kernel_at = pos_;
    const std::size_t kernel = integer("kernel size");
    expect(',');
    const std::size_t stride_at = pos_;
    const std::size_t stride = integer("stride");
    expect('}');
    if (filters < 1) throw ValidationError("filter count must be >= 1 (at position " + std::to_string(filters_at) + ")");
    if (kernel % 2 == 0) {
      throw ValidationError("kernel size must be odd, got " + std::to_string(kernel) + " (at position " +
                            std::to_string(kernel_at) + ")");
    }
    if (stride != 1 && stride != 2) {
      throw ValidationError("stride must be 1 or 2, got " + std::to_string(stride) + " (at position " +
                            std::to_string(stride_at) + ")");
    }
    return LayerSpec::sepconv(filters, kernel, stride);
  }

  // Blanks around tokens are allowed.
  void skip_space() {
    while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t')) ++pos_;
  }

  void expect(char c) {
    skip_space();
    if (pos_ >= text_.size() || text_[pos_] != c) {
      throw ParseError(std::string("expected '") + c + "'" + found(), pos_);
    }
    ++pos_;
  }

  std::size_t integer(const char* what) {
    skip_space();
    const std::size_t start = pos_;
    std::size_t value = 0;
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
      const std::size_t digit = static_cast<std::size_t>(text_[pos_] - '0');
      if (value > (std::numeric_limits<std::uint32_t>::max() - digit) / 10) {
        throw ParseError(std::string(what) + " is too large", start);
      }
      value = value * 10 + digit;
      ++pos_;
    }
    if (pos_ == start) throw ParseError(std::string("expected ") + what + found(), start);
    return value;
  }

  std::string found() const {
    if (pos_ >= text_.size()) return ", found end of input";
    return std::string(", found '") + text_[pos_] + "'";
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace

EnsembleSpec parse_ensemble_spec(std::string_view text) { return SpecParser(text).parse(); }

Shape layer_output_shape(const LayerSpec& spec, std::span<const Shape> inputs) {
  const auto arity = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw ShapeError(to_string(spec) + " expects " + std::to_string(n) + " input(s), got " +
                       std::to_string(inputs.size()));
    }
  };
  const auto spatial = [&](const Shape& s) {
    if (s.size() != 3) throw ShapeError(to_string(spec) + " needs an [H,W,C] input, got " + shape_to_string(s));
  };
  switch (spec.kind) {
    case LayerKind::kInput:
      throw ShapeError("input layers are created by the graph constructor");
    case LayerKind::kConv:
    case LayerKind::kSepConv:
    case LayerKind::kMaxPool: {
      arity(1);
      spatial(inputs[0]);
      if (spec.kernel % 2 == 0) throw ValidationError(to_string(spec) + ": kernel size must be odd");
      if (spec.stride != 1 && spec.stride != 2) throw ValidationError(to_string(spec) + ": stride must be 1 or 2");
      const std::size_t channels = spec.kind == LayerKind::kMaxPool ? inputs[0][2] : spec.filters;
      if (channels < 1) throw ValidationError(to_string(spec) + ": filter count must be >= 1");
      return {kernels::same_output_extent(inputs[0][0], spec.stride),
              kernels::same_output_extent(inputs[0][1], spec.stride), channels};
    }
    case LayerKind::kBatchNorm:
    case LayerKind::kActivation:
      arity(1);
      return inputs[0];
    case LayerKind::kDense:
      arity(1);
      if (inputs[0].size() != 1) throw ShapeError("dense needs a flat [D] input, got " + shape_to_string(inputs[0]));
      if (spec.filters < 1) throw ValidationError("dense needs at least one unit");
      return {spec.filters};
    case LayerKind::kAdd:
      arity(2);
      if (inputs[0] != inputs[1]) {
        throw ShapeError("add: incompatible shapes " + shape_to_string(inputs[0]) + " and " +
                         shape_to_string(inputs[1]));
      }
      return inputs[0];
    case LayerKind::kGlobalAvgPool:
      arity(1);
      spatial(inputs[0]);
      return {inputs[0][2]};
    case LayerKind::kFlatten:
      arity(1);
      return {shape_numel(inputs[0])};
    case LayerKind::kConcat: {
      if (inputs.empty()) throw ShapeError("concat needs at least one input");
      std::size_t width = 0;
      for (const auto& s : inputs) {
        if (s.size() != 1) throw ShapeError("concat needs flat inputs, got " + shape_to_string(s));
        width += s[0];
      }
      return {width};
    }
  }
  throw ShapeError("unknown layer kind");
}

}  // namespace fabricnet
