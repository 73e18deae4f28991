// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include "fabricnet/data_io.hpp"

namespace fabricnet {

namespace {

struct Grating {
  double kx = 0.0;  // radians per pixel
  double ky = 0.0;
  double phase = 0.0;
  double rgb[3] = {0.0, 0.0, 0.0};
};

std::string class_name(std::size_t c, std::size_t n) {
  const std::size_t width = std::max<std::size_t>(2, std::to_string(n - 1).size());
  std::string digits = std::to_string(c);
  return "fiber_" + std::string(width - digits.size(), '0') + digits;
}

std::vector<Grating> make_gratings(std::size_t n, std::size_t size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Grating> out(n);
  const double pi = std::numbers::pi;
  for (std::size_t c = 0; c < n; ++c) {
    // Orientations spread over half a turn, frequencies alternate between
    // bands so neighbours in angle differ in scale as well.
    const double angle = pi * (static_cast<double>(c) + 0.25 * unit(rng)) / static_cast<double>(n);
    const double cycles = (c % 2 == 0 ? 3.0 : 6.0) + 2.0 * unit(rng);
    const double k = 2.0 * pi * cycles / static_cast<double>(size);
    Grating& g = out[c];
    g.kx = k * std::cos(angle);
    g.ky = k * std::sin(angle);
    g.phase = 2.0 * pi * unit(rng);
    double norm = 0.0;
    for (double& w : g.rgb) {
      w = 0.3 + 0.7 * unit(rng);
      norm += w * w;
    }
    for (double& w : g.rgb) w /= std::sqrt(norm / 3.0);
  }
  return out;
}

std::size_t draw_label_count(std::size_t max_labels, std::mt19937_64& rng) {
  std::vector<double> weights(max_labels);
  static constexpr double kHead[] = {0.45, 0.30, 0.15};
  const double tail = max_labels > 3 ? 0.10 / static_cast<double>(max_labels - 3) : 0.0;
  for (std::size_t k = 0; k < max_labels; ++k) weights[k] = k < 3 ? kHead[k] : tail;
  std::discrete_distribution<std::size_t> dist(weights.begin(), weights.end());
  return dist(rng) + 1;
}

}  // namespace

Dataset gen_synthetic(const SynthConfig& config) {
  if (config.n_classes < 2) throw ValidationError("synthetic data needs at least 2 classes");
  if (config.n_samples < 1) throw ValidationError("synthetic data needs at least 1 sample");
  if (config.max_labels_per_sample < 1 || config.max_labels_per_sample > config.n_classes) {
    throw ValidationError("max labels per sample must lie in [1, n_classes]");
  }
  if (config.image_size < 1) throw ValidationError("image size must be positive");
  if (!(config.noise >= 0.0)) throw ValidationError("noise must be >= 0");

  const std::size_t size = config.image_size;
  std::mt19937_64 class_rng(config.seed);
  const auto gratings = make_gratings(config.n_classes, size, class_rng);

  Dataset out;
  out.height = size;
  out.width = size;
  out.channels = 3;
  for (std::size_t c = 0; c < config.n_classes; ++c) out.vocabulary.push_back(class_name(c, config.n_classes));
  out.labels = LabelMatrix(config.n_samples, config.n_classes);
  out.pixels.resize(config.n_samples * size * size * 3);

  std::vector<std::size_t> classes(config.n_classes);
  for (std::size_t i = 0; i < config.n_samples; ++i) {
    std::seed_seq seq{config.seed, static_cast<std::uint64_t>(i), std::uint64_t{0x5eed}};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> jitter(0.0, 0.3);
    std::normal_distribution<double> noise(0.0, config.noise);

    const std::size_t k = draw_label_count(config.max_labels_per_sample, rng);
    std::iota(classes.begin(), classes.end(), std::size_t{0});
    std::shuffle(classes.begin(), classes.end(), rng);
    std::vector<std::size_t> chosen(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(chosen.begin(), chosen.end());
    std::vector<double> phases;
    for (std::size_t c : chosen) {
      out.labels(i, c) = 1;
      phases.push_back(gratings[c].phase + jitter(rng));
    }

    const double amplitude = 0.35 / std::sqrt(static_cast<double>(k));
    const auto img = out.image(i);
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        double px[3] = {0.5, 0.5, 0.5};
        for (std::size_t j = 0; j < chosen.size(); ++j) {
          const Grating& g = gratings[chosen[j]];
          const double s = amplitude * std::sin(g.kx * static_cast<double>(x) + g.ky * static_cast<double>(y) + phases[j]);
          for (int ch = 0; ch < 3; ++ch) px[ch] += g.rgb[ch] * s;
        }
        for (std::size_t ch = 0; ch < 3; ++ch) {
          img[(y * size + x) * 3 + ch] = static_cast<float>(std::clamp(px[ch] + noise(rng), 0.0, 1.0));
        }
      }
    }
  }
  return out;
}

void export_dataset(const Dataset& data, const std::filesystem::path& dir) {
  data.validate();
  if (data.channels != 3) throw ValidationError("export needs RGB images");
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (ec) throw DataError(DataError::Kind::kIo, "cannot create '" + (dir / "images").string() + "': " + ec.message());
  std::ofstream manifest(dir / "manifest.csv", std::ios::binary);
  if (!manifest) throw DataError(DataError::Kind::kIo, "cannot write '" + (dir / "manifest.csv").string() + "'");
  manifest << "path,labels\n";
  const std::size_t width = std::max<std::size_t>(5, std::to_string(data.size()).size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::string digits = std::to_string(i);
    const std::string rel = "images/" + std::string(width - digits.size(), '0') + digits + ".png";
    write_png(dir / rel, data.image(i), data.height, data.width);
    std::string labels;
    for (std::size_t c = 0; c < data.n_classes(); ++c) {
      if (!data.labels(i, c)) continue;
      if (!labels.empty()) labels += ';';
      labels += data.vocabulary.empty() ? std::to_string(c) : data.vocabulary[c];
    }
    manifest << rel << ',' << labels << '\n';
  }
  if (!manifest) throw DataError(DataError::Kind::kIo, "error writing manifest in '" + dir.string() + "'");
}

}  // namespace fabricnet
