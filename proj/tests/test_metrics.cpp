// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fabricnet/metrics.hpp"
#include "oracles.hpp"

namespace fabricnet {
namespace {

// Scores with a class-dependent shift so instances range from weak to strong
// separation; passed through a logistic so they lie in (0, 1).
void random_instance(std::mt19937_64& rng, std::size_t n, std::vector<double>& scores, std::vector<std::uint8_t>& labels) {
  std::uniform_real_distribution<double> shift(0.0, 3.0), p(0.1, 0.9);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double s = shift(rng);
  std::bernoulli_distribution positive(p(rng));
  scores.resize(n);
  labels.resize(n);
  do {
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = positive(rng);
      scores[i] = 1.0 / (1.0 + std::exp(-(noise(rng) + (labels[i] ? s : 0.0))));
    }
  } while (std::count(labels.begin(), labels.end(), 1) == 0 || std::count(labels.begin(), labels.end(), 0) == 0);
}

TEST(Metrics, ExactMatchAccuracy) {
  const LabelMatrix labels(2, 3, {1, 0, 1, 0, 1, 0});
  EXPECT_EQ(exact_match_accuracy(labels, labels), 1.0);
  EXPECT_EQ(exact_match_accuracy(LabelMatrix(2, 3, {1, 0, 1, 0, 1, 1}), labels), 0.5);
  EXPECT_THROW(exact_match_accuracy(LabelMatrix(3, 2), labels), ShapeError);
  EXPECT_THROW(LabelMatrix(1, 2, {0, 2}), ValidationError);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 50; ++t) {
    const std::size_t rows = 1 + t % 13, cols = 1 + t % 4;
    std::vector<double> scores(rows * cols);
    std::vector<std::uint8_t> bits(rows * cols);
    for (std::size_t i = 0; i < scores.size(); ++i) {
      scores[i] = u(rng);
      // Bias labels toward the prediction so exact matches actually occur.
      bits[i] = u(rng) < 0.85 ? scores[i] >= 0.5 : scores[i] < 0.5;
    }
    const LabelMatrix preds = binarize<double>(scores, cols, 0.5);
    EXPECT_DOUBLE_EQ(exact_match_accuracy(preds, LabelMatrix(rows, cols, bits)),
                     oracle::row_scan_accuracy(scores, bits, cols, 0.5));
  }
}

TEST(Metrics, PrecisionRecallF1) {
  const auto a = precision_recall_f1({8, 2, 2, 0});
  EXPECT_DOUBLE_EQ(a.precision, 0.8);
  EXPECT_DOUBLE_EQ(a.recall, 0.8);
  EXPECT_DOUBLE_EQ(a.f1, 0.8);
  const auto z = precision_recall_f1({0, 0, 0, 5});
  EXPECT_EQ(z.precision, 0.0);
  EXPECT_EQ(z.recall, 0.0);
  EXPECT_EQ(z.f1, 0.0);

  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::uint64_t> count(0, 40);
  for (int t = 0; t < 200; ++t) {
    const ConfusionCounts c{count(rng), count(rng), count(rng), count(rng)};
    const double p = c.tp + c.fp == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    const double r = c.tp + c.fn == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    const double f = p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
    const auto got = precision_recall_f1(c);
    EXPECT_DOUBLE_EQ(got.precision, p);
    EXPECT_DOUBLE_EQ(got.recall, r);
    EXPECT_DOUBLE_EQ(got.f1, f);
    EXPECT_LE(got.f1, 1.0);
    EXPECT_EQ(got.f1 == 1.0, c.fp == 0 && c.fn == 0 && c.tp > 0);
  }
}

TEST(Metrics, CountsFromScoresMatchFormulaOracle) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    random_instance(rng, 120, scores, labels);
    const LabelMatrix lm(30, 4, labels);
    const LabelMatrix preds = binarize<double>(scores, 4, 0.5);
    const ConfusionCounts c = confusion_counts(preds, lm);
    EXPECT_EQ(c.tp + c.fp + c.fn + c.tn, 120u);
    const auto got = precision_recall_f1(c);
    const auto want = oracle::formula_prf(scores, labels, 0.5);
    EXPECT_DOUBLE_EQ(got.precision, want.precision);
    EXPECT_DOUBLE_EQ(got.recall, want.recall);
    EXPECT_DOUBLE_EQ(got.f1, want.f1);

    // Flipping every prediction: recompute from the swapped counts.
    LabelMatrix flipped = preds;
    for (auto& b : flipped.bits) b = 1 - b;
    const ConfusionCounts fc = confusion_counts(flipped, lm);
    EXPECT_EQ(fc.tp, c.fn);
    EXPECT_EQ(fc.fn, c.tp);
    EXPECT_EQ(fc.fp, c.tn);
    EXPECT_EQ(fc.tn, c.fp);
    std::vector<double> inverted(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) inverted[i] = scores[i] >= 0.5 ? 0.0 : 1.0;
    const auto want_flip = oracle::formula_prf(inverted, labels, 0.5);
    EXPECT_DOUBLE_EQ(precision_recall_f1(fc).precision, want_flip.precision);
    EXPECT_DOUBLE_EQ(precision_recall_f1(fc).recall, want_flip.recall);
  }
}

TEST(Metrics, AucExamples) {
  const std::vector<float> perfect{0.9f, 0.8f, 0.2f, 0.1f};
  EXPECT_DOUBLE_EQ(*auc_200<float>(perfect, LabelMatrix(2, 2, {1, 1, 0, 0})), 1.0);
  EXPECT_FALSE(auc_200<float>(perfect, LabelMatrix(2, 2, {1, 1, 1, 1})).has_value());
  EXPECT_FALSE(auc_200<float>(perfect, LabelMatrix(2, 2, {0, 0, 0, 0})).has_value());
  EXPECT_THROW(auc_200<float>(perfect, LabelMatrix(1, 2)), ShapeError);

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> scores(20000);
  std::vector<std::uint8_t> labels(20000);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i] = u(rng);
    labels[i] = u(rng) < 0.5;
  }
  EXPECT_NEAR(*auc_200<double>(scores, LabelMatrix(10000, 2, labels)), 0.5, 0.05);
}

TEST(Metrics, AucMatchesMannWhitneyOracle) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    random_instance(rng, 1000, scores, labels);
    const double got = *auc_200<double>(scores, LabelMatrix(1000, 1, labels));
    EXPECT_NEAR(got, oracle::mann_whitney_auc(scores, labels), 0.01);

    // A strictly increasing transform that stays in [0, 1] leaves the exact
    // AUC unchanged; the 200-threshold estimate stays within 0.01.
    std::vector<double> squashed(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) squashed[i] = std::sqrt(scores[i]);
    EXPECT_DOUBLE_EQ(oracle::mann_whitney_auc(squashed, labels), oracle::mann_whitney_auc(scores, labels));
    EXPECT_NEAR(*auc_200<double>(squashed, LabelMatrix(1000, 1, labels)), oracle::mann_whitney_auc(scores, labels),
                0.01);
  }
}

TEST(Metrics, ReportFormats) {
  MetricsReport r;
  r.accuracy = 0.5;
  r.precision = 0.25;
  r.recall = 1.0;
  r.f1 = 0.4;
  r.loss = 1.5;
  r.params = 12;
  r.flops = 34;
  EXPECT_EQ(MetricsReport::csv_header(), "accuracy,precision,recall,f1,auc,loss,params,flops");
  EXPECT_EQ(r.to_csv_row(), "0.5,0.25,1,0.40000000000000002,,1.5,12,34");
  EXPECT_NE(r.to_text().find("auc: undefined"), std::string::npos);
  const std::string text = r.to_text();
  const char* order[] = {"accuracy:", "precision:", "recall:", "f1:", "auc:", "loss:", "params:", "flops:"};
  std::size_t pos = 0;
  for (const char* key : order) {
    const std::size_t at = text.find(key, pos);
    ASSERT_NE(at, std::string::npos) << key;
    pos = at;
  }
  r.auc = 0.75;
  EXPECT_EQ(r.to_csv_row(), "0.5,0.25,1,0.40000000000000002,0.75,1.5,12,34");
}

TEST(Metrics, MakeReportPerfectAndEdgeScores) {
  const LabelMatrix labels(3, 2, {1, 0, 0, 1, 1, 1});
  const std::vector<float> perfect{1, 0, 0, 1, 1, 1};
  const MetricsReport r = make_report<float>(perfect, labels, 0.5, 0.0);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.f1, 1.0);

  const std::vector<float> almost(6, 0.5f - 1e-6f);
  const MetricsReport n = make_report<float>(almost, LabelMatrix(3, 2), 0.5, 0.0);
  EXPECT_EQ(n.accuracy, 1.0);
  EXPECT_FALSE(n.auc.has_value());
}

TEST(Metrics, AggregateRuns) {
  MetricsReport a, b;
  a.f1 = 0.8;
  b.f1 = 0.9;
  a.auc = 0.7;
  const std::vector<MetricsReport> reports{a, b};
  const auto agg = aggregate_runs(reports);
  const auto find = [&](const std::string& name) {
    for (const auto& m : agg) {
      if (m.name == name) return m;
    }
    ADD_FAILURE() << name;
    return AggregateMetric{};
  };
  EXPECT_DOUBLE_EQ(*find("f1").mean, 0.85);
  EXPECT_NEAR(find("f1").stddev, 0.05, 1e-12);  // population std
  EXPECT_EQ(find("f1").formatted(), "0.850±0.050");
  EXPECT_EQ(find("auc").runs, 1u);  // the undefined AUC is left out
  EXPECT_EQ(find("accuracy").formatted(), "0.000±0.000");

  const std::vector<MetricsReport> same{a, a, a};
  for (const auto& m : aggregate_runs(same)) EXPECT_EQ(m.stddev, 0.0) << m.name;

  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<MetricsReport> many(7);
  double sum = 0.0;
  for (auto& m : many) sum += (m.loss = 3.0 * u(rng));
  const double mean = sum / 7.0;
  double ss = 0.0;
  for (const auto& m : many) ss += (m.loss - mean) * (m.loss - mean);
  const auto loss = aggregate_runs(many);
  for (const auto& m : loss) {
    if (m.name != "loss") continue;
    EXPECT_NEAR(*m.mean, mean, 1e-12);
    EXPECT_NEAR(m.stddev, std::sqrt(ss / 7.0), 1e-12);
  }
  EXPECT_THROW(aggregate_runs(std::span<const MetricsReport>{}), ValidationError);
}

}  // namespace
}  // namespace fabricnet
