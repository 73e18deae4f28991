// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Multi-label evaluation. Counts are micro-averaged over every
// (sample, class) pair.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fabricnet {

// Row-major binary matrix: one row per sample, one column per class.
struct LabelMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> bits;

  LabelMatrix() = default;
  LabelMatrix(std::size_t rows, std::size_t cols);
  LabelMatrix(std::size_t rows, std::size_t cols, std::vector<std::uint8_t> bits);

  std::uint8_t& operator()(std::size_t r, std::size_t c) { return bits[r * cols + c]; }
  std::uint8_t operator()(std::size_t r, std::size_t c) const { return bits[r * cols + c]; }
  std::span<const std::uint8_t> row(std::size_t r) const { return {bits.data() + r * cols, cols}; }
  friend bool operator==(const LabelMatrix&, const LabelMatrix&) = default;
};

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct PrecisionRecallF1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// scores: row-major [rows x cols]. A score >= threshold is a positive.
template <typename T>
LabelMatrix binarize(std::span<const T> scores, std::size_t cols, double threshold);

ConfusionCounts confusion_counts(const LabelMatrix& preds, const LabelMatrix& labels);

// Fraction of rows whose whole label vector is predicted correctly.
double exact_match_accuracy(const LabelMatrix& preds, const LabelMatrix& labels);

// Any 0/0 ratio is reported as 0.
PrecisionRecallF1 precision_recall_f1(const ConfusionCounts& counts);

inline constexpr std::size_t kAucThresholds = 200;

// ROC area from 200 evenly spaced thresholds on [0, 1] plus the (0,0) and
// (1,1) end points, integrated with the trapezoid rule. Empty when the labels
// contain no positives or no negatives.
template <typename T>
std::optional<double> auc_200(std::span<const T> scores, const LabelMatrix& labels);

struct MetricsReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::optional<double> auc;
  double loss = 0.0;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;

  // "key: value" lines in the fixed field order
  // accuracy, precision, recall, f1, auc, loss, params, flops.
  std::string to_text() const;
  static std::string csv_header();
  std::string to_csv_row() const;  // undefined AUC is an empty field
};

template <typename T>
MetricsReport make_report(std::span<const T> scores, const LabelMatrix& labels, double threshold, double loss);

struct AggregateMetric {
  std::string name;
  std::optional<double> mean;  // empty when no run defines the metric
  double stddev = 0.0;         // population standard deviation
  std::size_t runs = 0;

  std::string formatted() const;  // "m±s", three decimals
};

// Per-metric mean and population standard deviation over runs for
// accuracy, precision, recall, f1, auc and loss.
std::vector<AggregateMetric> aggregate_runs(std::span<const MetricsReport> reports);

}  // namespace fabricnet
