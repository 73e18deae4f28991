// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fabricnet/model_graph.hpp"
#include "fabricnet/tensor.hpp"

namespace fabricnet {

template <typename T>
using BasicPredictor = std::function<BasicTensor<T>(const BasicTensor<T>&)>;

template <typename T>
using BasicClassifier = std::function<std::size_t(const BasicTensor<T>&)>;

using Predictor = BasicPredictor<float>;
using Classifier = BasicClassifier<float>;

// Index of the largest value; ties go to the lowest index.
template <typename T>
std::size_t argmax(std::span<const T> values);

// final(concat(sub_1(x), ..., sub_n(x))). Sub outputs are flattened. When
// final_width is non-zero the concatenated width is checked on every call.
template <typename T>
BasicPredictor<T> stacked_ensemble(std::vector<BasicPredictor<T>> subs, BasicPredictor<T> final,
                                   std::size_t final_width = 0);

// sum_i w_i * sub_i(x), elementwise over equal-length score vectors.
template <typename T>
BasicPredictor<T> weighted_score_ensemble(std::vector<BasicPredictor<T>> subs, std::vector<T> weights);

// argmax of weighted_score_ensemble.
template <typename T>
BasicClassifier<T> weight_average_ensemble(std::vector<BasicPredictor<T>> subs, std::vector<T> weights);

// One scalar-scoring sub per class; returns the argmax class.
template <typename T>
BasicClassifier<T> class_based_ensemble(std::vector<BasicPredictor<T>> subs);

template <typename T>
struct BasicMultiLabelPrediction {
  std::vector<std::uint8_t> labels;
  std::vector<T> scores;
};

using MultiLabelPrediction = BasicMultiLabelPrediction<float>;

// scores_i = sub_i(head(x)); labels_i = scores_i >= threshold. The head runs
// once per call. threshold must lie in (0, 1).
template <typename T>
BasicMultiLabelPrediction<T> fabricnet_predict(const BasicPredictor<T>& head, std::span<const BasicPredictor<T>> subs,
                                               const BasicTensor<T>& x, double threshold = 0.5);

// Predictor views of an assembled FabricNet graph (inference mode, no graph
// recording). Inputs carry a leading batch dimension.
template <typename T>
BasicPredictor<T> head_predictor(const BasicModelGraph<T>& graph);

template <typename T>
BasicPredictor<T> submodel_predictor(const BasicModelGraph<T>& graph, std::size_t class_index);

template <typename T>
std::vector<BasicPredictor<T>> submodel_predictors(const BasicModelGraph<T>& graph);

// Full forward pass in inference mode: [N,H,W,C] -> [N, n_classes].
template <typename T>
BasicTensor<T> predict_scores(const BasicModelGraph<T>& graph, const BasicTensor<T>& batch);

void validate_threshold(double threshold);

}  // namespace fabricnet
