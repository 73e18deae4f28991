// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0

#include "fabricnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <utility>

#include "fabricnet/error.hpp"

namespace fabricnet {

LabelMatrix::LabelMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), bits(r * c, 0) {}

LabelMatrix::LabelMatrix(std::size_t r, std::size_t c, std::vector<std::uint8_t> b)
    : rows(r), cols(c), bits(std::move(b)) {
  if (bits.size() != rows * cols) {
    throw ShapeError("label matrix " + std::to_string(rows) + "x" + std::to_string(cols) + " needs " +
                     std::to_string(rows * cols) + " entries, got " + std::to_string(bits.size()));
  }
  for (auto& v : bits) {
    if (v > 1) throw ValidationError("label matrix entries must be 0 or 1");
  }
}

namespace {

void require_same_shape(const LabelMatrix& a, const LabelMatrix& b) {
  if (a.rows != b.rows || a.cols != b.cols) {
    throw ShapeError("label matrices differ in shape: " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                     " vs " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
  }
}

double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

std::string fixed3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

template <typename T>
LabelMatrix binarize(std::span<const T> scores, std::size_t cols, double threshold) {
  if (cols == 0 || scores.size() % cols != 0) {
    throw ShapeError(std::to_string(scores.size()) + " scores do not form rows of " + std::to_string(cols));
  }
  LabelMatrix out(scores.size() / cols, cols);
  for (std::size_t i = 0; i < scores.size(); ++i) out.bits[i] = static_cast<double>(scores[i]) >= threshold ? 1 : 0;
  return out;
}

ConfusionCounts confusion_counts(const LabelMatrix& preds, const LabelMatrix& labels) {
  require_same_shape(preds, labels);
  ConfusionCounts c;
  for (std::size_t i = 0; i < preds.bits.size(); ++i) {
    const bool p = preds.bits[i] != 0;
    const bool y = labels.bits[i] != 0;
    if (p && y) ++c.tp;
    else if (p) ++c.fp;
    else if (y) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double exact_match_accuracy(const LabelMatrix& preds, const LabelMatrix& labels) {
  require_same_shape(preds, labels);
  if (preds.rows == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < preds.rows; ++r) {
    const auto a = preds.row(r);
    const auto b = labels.row(r);
    if (std::equal(a.begin(), a.end(), b.begin())) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(preds.rows);
}

PrecisionRecallF1 precision_recall_f1(const ConfusionCounts& c) {
  PrecisionRecallF1 out;
  out.precision = ratio(c.tp, c.tp + c.fp);
  out.recall = ratio(c.tp, c.tp + c.fn);
  const double sum = out.precision + out.recall;
  out.f1 = sum == 0.0 ? 0.0 : 2.0 * out.precision * out.recall / sum;
  return out;
}

template <typename T>
std::optional<double> auc_200(std::span<const T> scores, const LabelMatrix& labels) {
  if (scores.size() != labels.bits.size()) {
    throw ShapeError("auc: " + std::to_string(scores.size()) + " scores for " + std::to_string(labels.bits.size()) +
                     " labels");
  }
  std::uint64_t positives = 0;
  for (auto b : labels.bits) positives += b;
  const std::uint64_t negatives = labels.bits.size() - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;

  // Bucket each score by the number of thresholds it clears, then sweep.
  std::vector<std::uint64_t> pos_at(kAucThresholds + 1, 0), neg_at(kAucThresholds + 1, 0);
  const double step = 1.0 / static_cast<double>(kAucThresholds - 1);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double s = static_cast<double>(scores[i]);
    std::size_t cleared = 0;
    if (s >= 0.0) {
      cleared = std::min<std::size_t>(kAucThresholds, static_cast<std::size_t>(std::floor(s / step)) + 1);
      while (cleared > 0 && s < static_cast<double>(cleared - 1) * step) --cleared;
      while (cleared < kAucThresholds && s >= static_cast<double>(cleared) * step) ++cleared;
    }
    (labels.bits[i] ? pos_at : neg_at)[cleared]++;
  }

  std::vector<std::pair<double, double>> roc;
  roc.reserve(kAucThresholds + 2);
  roc.emplace_back(0.0, 0.0);
  roc.emplace_back(1.0, 1.0);
  // Threshold t_k: a score is positive when it clears at least k+1 thresholds.
  std::uint64_t tp = 0, fp = 0;
  for (std::size_t k = kAucThresholds; k-- > 0;) {
    tp += pos_at[k + 1];
    fp += neg_at[k + 1];
    roc.emplace_back(ratio(fp, negatives), ratio(tp, positives));
  }
  std::sort(roc.begin(), roc.end());
  double area = 0.0;
  for (std::size_t i = 1; i < roc.size(); ++i) {
    area += (roc[i].first - roc[i - 1].first) * (roc[i].second + roc[i - 1].second) / 2.0;
  }
  return area;
}

std::string MetricsReport::to_text() const {
  std::string out;
  out += "accuracy: " + full(accuracy) + "\n";
  out += "precision: " + full(precision) + "\n";
  out += "recall: " + full(recall) + "\n";
  out += "f1: " + full(f1) + "\n";
  out += "auc: " + (auc ? full(*auc) : std::string("undefined")) + "\n";
  out += "loss: " + full(loss) + "\n";
  out += "params: " + std::to_string(params) + "\n";
  out += "flops: " + std::to_string(flops) + "\n";
  return out;
}

std::string MetricsReport::csv_header() { return "accuracy,precision,recall,f1,auc,loss,params,flops"; }

std::string MetricsReport::to_csv_row() const {
  return full(accuracy) + "," + full(precision) + "," + full(recall) + "," + full(f1) + "," +
         (auc ? full(*auc) : std::string()) + "," + full(loss) + "," + std::to_string(params) + "," +
         std::to_string(flops);
}

template <typename T>
MetricsReport make_report(std::span<const T> scores, const LabelMatrix& labels, double threshold, double loss) {
  const LabelMatrix preds = binarize(scores, labels.cols, threshold);
  const auto prf = precision_recall_f1(confusion_counts(preds, labels));
  MetricsReport r;
  r.accuracy = exact_match_accuracy(preds, labels);
  r.precision = prf.precision;
  r.recall = prf.recall;
  r.f1 = prf.f1;
  r.auc = auc_200(scores, labels);
  r.loss = loss;
  return r;
}

std::string AggregateMetric::formatted() const {
  if (!mean) return "undefined";
  return fixed3(*mean) + "±" + fixed3(stddev);
}

std::vector<AggregateMetric> aggregate_runs(std::span<const MetricsReport> reports) {
  if (reports.empty()) throw ValidationError("aggregate_runs needs at least one report");
  using Getter = std::optional<double> (*)(const MetricsReport&);
  const std::pair<const char*, Getter> fields[] = {
      {"accuracy", [](const MetricsReport& r) -> std::optional<double> { return r.accuracy; }},
      {"precision", [](const MetricsReport& r) -> std::optional<double> { return r.precision; }},
      {"recall", [](const MetricsReport& r) -> std::optional<double> { return r.recall; }},
      {"f1", [](const MetricsReport& r) -> std::optional<double> { return r.f1; }},
      {"auc", [](const MetricsReport& r) { return r.auc; }},
      {"loss", [](const MetricsReport& r) -> std::optional<double> { return r.loss; }},
  };
  std::vector<AggregateMetric> out;
  for (const auto& [name, get] : fields) {
    AggregateMetric m;
    m.name = name;
    // Work relative to the first defined value so identical runs give an
    // exact mean and a zero spread.
    std::optional<double> origin;
    double sum = 0.0;
    for (const auto& r : reports) {
      if (const auto v = get(r)) {
        if (!origin) origin = *v;
        sum += *v - *origin;
        ++m.runs;
      }
    }
    if (m.runs > 0) {
      const double shift = sum / static_cast<double>(m.runs);
      double sq = 0.0;
      for (const auto& r : reports) {
        if (const auto v = get(r)) sq += (*v - *origin - shift) * (*v - *origin - shift);
      }
      m.mean = *origin + shift;
      m.stddev = std::sqrt(sq / static_cast<double>(m.runs));
    }
    out.push_back(std::move(m));
  }
  return out;
}

#define FABRICNET_INSTANTIATE_METRICS(T)                                                        \
  template LabelMatrix binarize<T>(std::span<const T>, std::size_t, double);                    \
  template std::optional<double> auc_200<T>(std::span<const T>, const LabelMatrix&);            \
  template MetricsReport make_report<T>(std::span<const T>, const LabelMatrix&, double, double);

FABRICNET_INSTANTIATE_METRICS(float)
FABRICNET_INSTANTIATE_METRICS(double)

}  // namespace fabricnet
