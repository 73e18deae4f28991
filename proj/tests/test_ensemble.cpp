// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "fabricnet/ensemble.hpp"
#include "fabricnet/model_graph.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace fabricnet {
namespace {

Predictor constant_predictor(std::vector<float> v) {
  return [v](const Tensor&) { return Tensor({v.size()}, v); };
}

TEST(Ensemble, StackedHandComposition) {
  const Predictor id = [](const Tensor& x) { return x; };
  const Predictor twice = [](const Tensor& x) {
    Tensor y = x;
    for (float& v : y.data()) v *= 2.0f;
    return y;
  };
  const Predictor sum = [](const Tensor& x) {
    float s = 0.0f;
    for (float v : x.data()) s += v;
    return Tensor({1}, {s});
  };
  EXPECT_EQ(stacked_ensemble<float>({id, twice}, sum)(Tensor({1}, {3.0f}))[0], 9.0f);
  const Tensor x({3}, {1, -2, 5});
  EXPECT_EQ(stacked_ensemble<float>({twice}, id)(x), twice(x));
  EXPECT_THROW(stacked_ensemble<float>({id, twice}, sum, 3)(Tensor({1}, {1.0f})), ShapeError);
  EXPECT_THROW(stacked_ensemble<float>({}, sum), ValidationError);
}

TEST(Ensemble, WeightAverageExamples) {
  const auto e = weight_average_ensemble<float>({constant_predictor({1, 0}), constant_predictor({0, 1})}, {2, 1});
  EXPECT_EQ(e(Tensor({1})), 0u);
  // Equal weights reduce to plain averaging.
  const std::vector<Predictor> subs{constant_predictor({0.2f, 0.5f, 0.3f}), constant_predictor({0.6f, 0.1f, 0.3f})};
  EXPECT_EQ(weight_average_ensemble<float>(subs, {1, 1})(Tensor({1})), 0u);  // means (0.4, 0.3, 0.3)
  EXPECT_EQ(weight_average_ensemble<float>(subs, {0.5f, 0.5f})(Tensor({1})), 0u);
  // Ties go to the lowest index.
  EXPECT_EQ(weight_average_ensemble<float>({constant_predictor({0.5f, 0.5f})}, {1})(Tensor({1})), 0u);
  EXPECT_THROW(weight_average_ensemble<float>(subs, {1}), ValidationError);
  EXPECT_THROW(
      weight_average_ensemble<float>({constant_predictor({1, 2}), constant_predictor({1})}, {1, 1})(Tensor({1})),
      ShapeError);
  EXPECT_THROW(weight_average_ensemble<float>(subs, {1, std::nanf("")}), ValidationError);
}

TEST(Ensemble, ClassBasedExamples) {
  const auto e = class_based_ensemble<float>(
      {constant_predictor({0.1f}), constant_predictor({0.9f}), constant_predictor({0.3f})});
  EXPECT_EQ(e(Tensor({1})), 1u);
  EXPECT_EQ(class_based_ensemble<float>({constant_predictor({0.01f})})(Tensor({1})), 0u);
  EXPECT_THROW(class_based_ensemble<float>({constant_predictor({0.1f, 0.2f})})(Tensor({1})), ShapeError);
}

TEST(Ensemble, FabricNetPredictExamples) {
  std::size_t head_calls = 0;
  const Predictor head = [&](const Tensor& x) {
    ++head_calls;
    return x;
  };
  const std::vector<Predictor> subs{constant_predictor({0.9f}), constant_predictor({0.2f}), constant_predictor({0.7f})};
  const auto out = fabricnet_predict<float>(head, subs, Tensor({1}));
  EXPECT_EQ(out.labels, (std::vector<std::uint8_t>{1, 0, 1}));
  EXPECT_EQ(out.scores, (std::vector<float>{0.9f, 0.2f, 0.7f}));
  EXPECT_EQ(head_calls, 1u);
  EXPECT_EQ(fabricnet_predict<float>(head, subs, Tensor({1}), 1e-6).labels, (std::vector<std::uint8_t>{1, 1, 1}));
  EXPECT_THROW(fabricnet_predict<float>(head, subs, Tensor({1}), 0.0), ValidationError);
  EXPECT_THROW(fabricnet_predict<float>(head, subs, Tensor({1}), 1.0), ValidationError);
}

TEST(Ensemble, RandomCompositionsMatchBruteForce) {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 100; ++i) {
    EXPECT_TRUE(oracle::stacked_instance_agrees(rng)) << "stacked instance " << i;
    EXPECT_TRUE(oracle::weight_average_instance_agrees(rng)) << "weight average instance " << i;
    EXPECT_TRUE(oracle::class_based_instance_agrees(rng)) << "class based instance " << i;
    EXPECT_TRUE(oracle::fabricnet_instance_agrees(rng)) << "fabricnet instance " << i;
  }
}

TEST(Ensemble, ArgmaxTieRule) {
  const std::vector<float> v{1, 3, 3, 2};
  EXPECT_EQ(argmax<float>(v), 1u);
  EXPECT_THROW(argmax<float>(std::span<const float>{}), ValidationError);
}

TEST(Ensemble, GraphPredictorsComposeToFullForward) {
  ModelGraph g = assemble_fabricnet<float>(3, 0, parse_ensemble_spec(kDefaultEnsembleSpec), 48);
  init_params(g, 6);
  const Tensor x = testing::uniform_tensor<float>({2, 48, 48, 3}, 7, 0.0, 1.0);
  const Tensor full = predict_scores(g, x);
  const Tensor features = head_predictor(g)(x);
  const auto subs = submodel_predictors(g);
  ASSERT_EQ(subs.size(), 3u);
  for (std::size_t c = 0; c < 3; ++c) {
    const Tensor s = subs[c](features);
    ASSERT_EQ(s.numel(), 2u);
    for (std::size_t r = 0; r < 2; ++r) EXPECT_EQ(s[r], full.at({r, c}));
  }
  // One-class model at threshold 0.5 is a plain binary classifier.
  ModelGraph one = assemble_fabricnet<float>(1, 0, parse_ensemble_spec(kDefaultEnsembleSpec), 48);
  init_params(one, 6);
  const Tensor first({1, 48, 48, 3}, std::vector<float>(x.data().begin(), x.data().begin() + 48 * 48 * 3));
  const auto sub1 = submodel_predictors(one);
  const auto pred = fabricnet_predict<float>(head_predictor(one), sub1, first);
  const float score = predict_scores(one, first)[0];
  EXPECT_EQ(pred.scores[0], score);
  EXPECT_EQ(pred.labels[0], score >= 0.5f ? 1 : 0);
}

}  // namespace
}  // namespace fabricnet
