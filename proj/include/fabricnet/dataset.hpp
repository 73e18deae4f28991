// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fabricnet/metrics.hpp"
#include "fabricnet/tensor.hpp"

namespace fabricnet {

// In-memory multi-label image set. Pixels are NHWC floats in [0, 1].
struct Dataset {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;
  std::vector<float> pixels;
  LabelMatrix labels;
  std::vector<std::string> vocabulary;

  std::size_t size() const noexcept { return labels.rows; }
  std::size_t n_classes() const noexcept { return labels.cols; }
  std::size_t image_numel() const noexcept { return height * width * channels; }

  std::span<const float> image(std::size_t i) const { return {pixels.data() + i * image_numel(), image_numel()}; }
  std::span<float> image(std::size_t i) { return {pixels.data() + i * image_numel(), image_numel()}; }

  // [B,H,W,C] batch of the given samples, in order.
  Tensor gather(std::span<const std::size_t> indices) const;
  LabelMatrix gather_labels(std::span<const std::size_t> indices) const;
  Dataset subset(std::span<const std::size_t> indices) const;

  // Throws ValidationError on inconsistent sizes or out-of-range pixels.
  void validate() const;
};

}  // namespace fabricnet
