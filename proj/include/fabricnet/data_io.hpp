// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "fabricnet/dataset.hpp"
#include "fabricnet/model_graph.hpp"
#include "fabricnet/tensor.hpp"
#include "fabricnet/training.hpp"

namespace fabricnet {

inline constexpr std::size_t kDefaultImageSize = 120;

struct LabelVocabulary {
  std::vector<std::string> names;  // byte-lexicographic order

  std::size_t size() const noexcept { return names.size(); }
  std::optional<std::size_t> index_of(std::string_view name) const;
};

struct ManifestRow {
  std::filesystem::path path;  // resolved against the manifest's directory
  std::vector<std::size_t> labels;
  std::size_t line = 0;
};

struct Manifest {
  LabelVocabulary vocabulary;
  std::vector<ManifestRow> rows;

  LabelMatrix label_matrix() const;
};

// UTF-8 CSV with header "path,labels"; labels are ';'-separated names.
// Fields may be double-quoted. Throws DataError.
Manifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir = {});
Manifest load_manifest(const std::filesystem::path& path);

// Bilinear resize with half-pixel centers; src and result are HWC.
std::vector<float> resize_bilinear(std::span<const float> src, std::size_t in_h, std::size_t in_w,
                                   std::size_t channels, std::size_t out_h, std::size_t out_w);

// Decodes PNG, JPEG or binary PPM/PGM to RGB in [0, 1] and resizes to
// size x size. Throws DataError naming the path.
Tensor decode_image(const std::filesystem::path& path, std::size_t size = kDefaultImageSize);

// 8-bit RGB PNG writer; image is HWC in [0, 1].
void write_png(const std::filesystem::path& path, std::span<const float> image, std::size_t height,
               std::size_t width);

Dataset load_dataset(const Manifest& manifest, std::size_t size = kDefaultImageSize);

struct SynthConfig {
  std::size_t n_classes = 10;
  std::size_t n_samples = 1000;
  std::size_t max_labels_per_sample = 3;
  std::uint64_t seed = 0;
  std::size_t image_size = kDefaultImageSize;
  double noise = 0.05;
};

// Each class owns an oriented sinusoidal grating (angle, frequency, colour
// mix). A sample renders the scaled sum of its classes' gratings over a
// mid-grey background plus Gaussian noise. Label-set sizes favour 1 to 3.
Dataset gen_synthetic(const SynthConfig& config);

// Writes images/NNNNN.png and manifest.csv under dir.
void export_dataset(const Dataset& data, const std::filesystem::path& dir);

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::string_view kCheckpointMagic = "FABNET01";

struct CheckpointArray {
  std::string name;
  std::variant<Tensor, Tensor64> data;

  const Shape& shape() const;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string model_config;
  std::vector<std::pair<std::string, std::string>> metadata;
  std::vector<CheckpointArray> arrays;

  const CheckpointArray* find(std::string_view name) const;
  std::optional<std::string> meta(std::string_view key) const;
};

// Little-endian container: magic, version, total length, config string,
// metadata, entry table (name, dtype, rank, dims, offset, bytes), raw
// arrays, trailing CRC32 of everything before it.
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Snapshot of every parameter (and Adam moments as "adam.m/<name>",
// "adam.v/<name>" when an optimizer is given).
Checkpoint make_checkpoint(const ModelGraph& model, const ModelConfig& config,
                           std::vector<std::pair<std::string, std::string>> metadata = {},
                           const Adam* optimizer = nullptr);

// Copies arrays into the model (and optimizer); every model parameter must be
// present with a matching shape.
void apply_checkpoint(const Checkpoint& checkpoint, ModelGraph& model, Adam* optimizer = nullptr);

// Rebuilds the model described by the checkpoint and loads its parameters.
ModelGraph model_from_checkpoint(const Checkpoint& checkpoint);

}  // namespace fabricnet
