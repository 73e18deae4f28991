// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0

#include "fabricnet/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "fabricnet/error.hpp"

namespace fabricnet {

namespace {

void check_index(const Dataset& d, std::size_t i) {
  if (i >= d.size()) {
    throw ValidationError("sample index " + std::to_string(i) + " out of range for " + std::to_string(d.size()) +
                          " samples");
  }
}

}  // namespace

Tensor Dataset::gather(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw ValidationError("cannot gather an empty batch");
  Tensor out({indices.size(), height, width, channels}, 0.0f);
  float* dst = out.raw();
  for (std::size_t i : indices) {
    check_index(*this, i);
    const auto src = image(i);
    dst = std::copy(src.begin(), src.end(), dst);
  }
  return out;
}

LabelMatrix Dataset::gather_labels(std::span<const std::size_t> indices) const {
  LabelMatrix out(indices.size(), n_classes());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    check_index(*this, indices[r]);
    const auto row = labels.row(indices[r]);
    std::copy(row.begin(), row.end(), out.bits.begin() + static_cast<std::ptrdiff_t>(r * n_classes()));
  }
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.height = height;
  out.width = width;
  out.channels = channels;
  out.vocabulary = vocabulary;
  out.labels = gather_labels(indices);
  out.pixels.reserve(indices.size() * image_numel());
  for (std::size_t i : indices) {
    const auto src = image(i);
    out.pixels.insert(out.pixels.end(), src.begin(), src.end());
  }
  return out;
}

void Dataset::validate() const {
  if (height == 0 || width == 0 || channels == 0) throw ValidationError("dataset image shape must be positive");
  if (pixels.size() != size() * image_numel()) {
    throw ValidationError("dataset holds " + std::to_string(pixels.size()) + " pixels, expected " +
                          std::to_string(size() * image_numel()));
  }
  if (labels.bits.size() != labels.rows * labels.cols) throw ValidationError("dataset label matrix is inconsistent");
  if (!vocabulary.empty() && vocabulary.size() != n_classes()) {
    throw ValidationError("dataset vocabulary has " + std::to_string(vocabulary.size()) + " names for " +
                          std::to_string(n_classes()) + " classes");
  }
  for (float v : pixels) {
    if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("dataset pixels must lie in [0, 1]");
  }
}

}  // namespace fabricnet
