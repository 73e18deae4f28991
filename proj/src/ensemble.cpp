// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0

#include "fabricnet/ensemble.hpp"

#include <cmath>
#include <memory>

namespace fabricnet {

void validate_threshold(double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ValidationError("threshold must lie in (0, 1), got " + std::to_string(threshold));
  }
}

template <typename T>
std::size_t argmax(std::span<const T> values) {
  if (values.empty()) throw ShapeError("argmax of an empty score vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

namespace {

template <typename T>
void require_subs(const std::vector<BasicPredictor<T>>& subs) {
  if (subs.empty()) throw ValidationError("an ensemble needs at least one submodel");
  for (const auto& s : subs) {
    if (!s) throw ValidationError("ensemble submodel is empty");
  }
}

}  // namespace

template <typename T>
BasicPredictor<T> stacked_ensemble(std::vector<BasicPredictor<T>> subs, BasicPredictor<T> final,
                                   std::size_t final_width) {
  require_subs(subs);
  if (!final) throw ValidationError("stacked ensemble needs a final predictor");
  return [subs = std::move(subs), final = std::move(final), final_width](const BasicTensor<T>& x) {
    std::vector<T> joined;
    for (const auto& sub : subs) {
      const BasicTensor<T> out = sub(x);
      joined.insert(joined.end(), out.data().begin(), out.data().end());
    }
    if (final_width != 0 && joined.size() != final_width) {
      throw ShapeError("stacked ensemble: final predictor expects " + std::to_string(final_width) +
                       " inputs, submodels produced " + std::to_string(joined.size()));
    }
    if (joined.empty()) throw ShapeError("stacked ensemble: submodels produced no outputs");
    const std::size_t width = joined.size();
    return final(BasicTensor<T>({width}, std::move(joined)));
  };
}

template <typename T>
BasicPredictor<T> weighted_score_ensemble(std::vector<BasicPredictor<T>> subs, std::vector<T> weights) {
  require_subs(subs);
  if (subs.size() != weights.size()) {
    throw ValidationError("weight-average ensemble: " + std::to_string(subs.size()) + " submodels but " +
                          std::to_string(weights.size()) + " weights");
  }
  for (T w : weights) {
    if (!std::isfinite(w)) throw ValidationError("ensemble weights must be finite");
  }
  return [subs = std::move(subs), weights = std::move(weights)](const BasicTensor<T>& x) {
    BasicTensor<T> total;
    for (std::size_t i = 0; i < subs.size(); ++i) {
      const BasicTensor<T> out = subs[i](x);
      if (i == 0) {
        total = BasicTensor<T>({out.numel()}, T{0});
      } else if (out.numel() != total.numel()) {
        throw ShapeError("weight-average ensemble: submodel " + std::to_string(i) + " emits " +
                         std::to_string(out.numel()) + " scores, expected " + std::to_string(total.numel()));
      }
      for (std::size_t j = 0; j < out.numel(); ++j) total[j] += weights[i] * out[j];
    }
    return total;
  };
}

template <typename T>
BasicClassifier<T> weight_average_ensemble(std::vector<BasicPredictor<T>> subs, std::vector<T> weights) {
  auto scores = weighted_score_ensemble<T>(std::move(subs), std::move(weights));
  return [scores = std::move(scores)](const BasicTensor<T>& x) {
    const BasicTensor<T> s = scores(x);
    return argmax<T>(s.data());
  };
}

template <typename T>
BasicClassifier<T> class_based_ensemble(std::vector<BasicPredictor<T>> subs) {
  require_subs(subs);
  return [subs = std::move(subs)](const BasicTensor<T>& x) {
    std::vector<T> scores;
    scores.reserve(subs.size());
    for (std::size_t i = 0; i < subs.size(); ++i) {
      const BasicTensor<T> out = subs[i](x);
      if (out.numel() != 1) {
        throw ShapeError("class-based ensemble: submodel " + std::to_string(i) + " emits shape " +
                         shape_to_string(out.shape()) + ", expected a single score");
      }
      scores.push_back(out[0]);
    }
    return argmax<T>(scores);
  };
}

template <typename T>
BasicMultiLabelPrediction<T> fabricnet_predict(const BasicPredictor<T>& head, std::span<const BasicPredictor<T>> subs,
                                               const BasicTensor<T>& x, double threshold) {
  validate_threshold(threshold);
  if (subs.empty()) throw ValidationError("fabricnet_predict needs at least one submodel");
  const BasicTensor<T> features = head(x);
  BasicMultiLabelPrediction<T> out;
  out.scores.reserve(subs.size());
  for (std::size_t i = 0; i < subs.size(); ++i) {
    const BasicTensor<T> s = subs[i](features);
    if (s.numel() != 1) {
      throw ShapeError("submodel " + std::to_string(i) + " emits shape " + shape_to_string(s.shape()) +
                       ", expected a single score");
    }
    out.scores.push_back(s[0]);
    out.labels.push_back(static_cast<double>(s[0]) >= threshold ? 1 : 0);
  }
  return out;
}

template <typename T>
BasicPredictor<T> head_predictor(const BasicModelGraph<T>& graph) {
  const auto head = graph.head_output();
  if (!head) throw ValidationError("graph has no ensemble head");
  return [&graph, node = *head](const BasicTensor<T>& x) {
    NoGradGuard no_grad;
    const std::pair<std::size_t, Var<T>> feed{graph.input(), constant(x)};
    return graph.run(std::span(&feed, 1), std::span(&node, 1), RunOptions{})[0]->value;
  };
}

template <typename T>
BasicPredictor<T> submodel_predictor(const BasicModelGraph<T>& graph, std::size_t class_index) {
  const auto head = graph.head_output();
  if (!head) throw ValidationError("graph has no ensemble head");
  if (class_index >= graph.class_outputs().size()) {
    throw ValidationError("class index " + std::to_string(class_index) + " out of range");
  }
  return [&graph, head = *head, node = graph.class_outputs()[class_index]](const BasicTensor<T>& features) {
    NoGradGuard no_grad;
    const std::pair<std::size_t, Var<T>> feed{head, constant(features)};
    return graph.run(std::span(&feed, 1), std::span(&node, 1), RunOptions{})[0]->value;
  };
}

template <typename T>
std::vector<BasicPredictor<T>> submodel_predictors(const BasicModelGraph<T>& graph) {
  std::vector<BasicPredictor<T>> out;
  for (std::size_t c = 0; c < graph.class_outputs().size(); ++c) out.push_back(submodel_predictor(graph, c));
  return out;
}

template <typename T>
BasicTensor<T> predict_scores(const BasicModelGraph<T>& graph, const BasicTensor<T>& batch) {
  NoGradGuard no_grad;
  return graph.forward(batch, RunOptions{})->value;
}

#define FABRICNET_INSTANTIATE_ENSEMBLE(T)                                                                      \
  template std::size_t argmax<T>(std::span<const T>);                                                          \
  template BasicPredictor<T> stacked_ensemble<T>(std::vector<BasicPredictor<T>>, BasicPredictor<T>,            \
                                                 std::size_t);                                                 \
  template BasicPredictor<T> weighted_score_ensemble<T>(std::vector<BasicPredictor<T>>, std::vector<T>);       \
  template BasicClassifier<T> weight_average_ensemble<T>(std::vector<BasicPredictor<T>>, std::vector<T>);      \
  template BasicClassifier<T> class_based_ensemble<T>(std::vector<BasicPredictor<T>>);                         \
  template BasicMultiLabelPrediction<T> fabricnet_predict<T>(const BasicPredictor<T>&,                         \
                                                             std::span<const BasicPredictor<T>>,               \
                                                             const BasicTensor<T>&, double);                   \
  template BasicPredictor<T> head_predictor<T>(const BasicModelGraph<T>&);                                     \
  template BasicPredictor<T> submodel_predictor<T>(const BasicModelGraph<T>&, std::size_t);                    \
  template std::vector<BasicPredictor<T>> submodel_predictors<T>(const BasicModelGraph<T>&);                   \
  template BasicTensor<T> predict_scores<T>(const BasicModelGraph<T>&, const BasicTensor<T>&);

FABRICNET_INSTANTIATE_ENSEMBLE(float)
FABRICNET_INSTANTIATE_ENSEMBLE(double)

}  // namespace fabricnet
