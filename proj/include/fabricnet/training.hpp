// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fabricnet/autodiff.hpp"
#include "fabricnet/dataset.hpp"
#include "fabricnet/metrics.hpp"
#include "fabricnet/model_graph.hpp"

namespace fabricnet {

inline constexpr double kScoreClamp = 1e-7;

// Binary cross-entropy summed over classes and averaged over the batch.
// scores [N,C] in (0,1), labels [N,C] in {0,1}. Scores are clamped to
// [1e-7, 1-1e-7] before taking logs.
template <typename T>
Var<T> bce_loss(const Var<T>& scores, const BasicTensor<T>& labels);

// Same quantity without graph recording.
template <typename T>
double bce_value(std::span<const T> scores, std::span<const std::uint8_t> labels, std::size_t n_classes);

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

// Bias-corrected Adam over the trainable entries of a parameter store.
template <typename T>
class BasicAdam {
 public:
  BasicAdam(ParamStore<T>& params, AdamOptions options = {});

  // Applies one update from the current gradients; parameters without a
  // gradient are treated as having a zero gradient.
  void step();

  std::uint64_t steps() const noexcept { return step_; }
  void set_steps(std::uint64_t steps) noexcept { step_ = steps; }
  const AdamOptions& options() const noexcept { return options_; }
  void set_lr(double lr) { options_.lr = lr; }

  // Moment tensors, keyed by parameter name, in parameter-store order.
  struct Slot {
    std::string name;
    BasicTensor<T> m;
    BasicTensor<T> v;
  };
  std::vector<Slot>& slots() noexcept { return slots_; }
  const std::vector<Slot>& slots() const noexcept { return slots_; }

 private:
  ParamStore<T>& params_;
  AdamOptions options_;
  std::vector<std::size_t> entry_index_;
  std::vector<Slot> slots_;
  std::uint64_t step_ = 0;
};

using Adam = BasicAdam<float>;

struct AugmentConfig {
  bool enabled = true;
  double probability = 0.5;   // each transform fires independently
  double brightness = 0.2;    // additive delta ~ U(-b, b)
  double contrast_low = 0.8;  // scale about the image mean
  double contrast_high = 1.2;
  double zoom_max = 1.2;      // zoom ~ U(1, zoom_max), center crop
  double crop_pad = 0.1;      // reflect-pad fraction for the random crop
  double channel_shift = 0.1; // per-channel delta ~ U(-s, s)
};

// Photometric and crop augmentation of one HWC image in [0, 1], in place.
// No flips, rotations or shears. The result is clamped to [0, 1].
void augment(std::span<float> image, std::size_t height, std::size_t width, std::size_t channels,
             const AugmentConfig& config, std::mt19937_64& rng);

struct FoldSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

// Seeded shuffle into k folds; round r tests on fold r, validates on fold
// (r+1) mod k and trains on the rest.
std::vector<FoldSplit> kfold_split(std::size_t n_samples, std::size_t k, std::uint64_t seed);

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t max_epochs = 100;
  double lr = 1e-3;
  std::size_t k_folds = 4;
  std::uint64_t seed = 0;
  double threshold = 0.5;
  AugmentConfig augment;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_f1 = 0.0;
  std::optional<double> train_auc;
  double val_loss = 0.0;
  double val_f1 = 0.0;
  std::optional<double> val_auc;
};

struct History {
  std::vector<EpochRecord> epochs;

  // Lines "epoch,split,loss,f1,auc", train then val for every epoch.
  std::string to_log() const;
};

struct TrainResult {
  History history;
  std::size_t best_epoch = 0;  // 1-based; epoch with the highest validation F1
  MetricsReport best_val;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Mini-batch training on `train_idx`, validating on `val_idx` after every
// epoch. On return the model holds the parameters (including batchnorm
// running statistics) of the best epoch. Trailing batches smaller than 2 are
// skipped.
TrainResult train(ModelGraph& model, const Dataset& data, std::span<const std::size_t> train_idx,
                  std::span<const std::size_t> val_idx, const TrainConfig& config, Adam& optimizer,
                  const EpochCallback& on_epoch = {});

struct Evaluation {
  MetricsReport report;
  std::vector<float> scores;  // [N, C] row-major
  LabelMatrix labels;
};

// Inference-mode metrics over the given samples.
Evaluation evaluate(const ModelGraph& model, const Dataset& data, std::span<const std::size_t> indices,
                    double threshold, std::size_t batch_size = 64);

}  // namespace fabricnet
