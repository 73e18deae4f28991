// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "fabricnet/data_io.hpp"
#include "fabricnet/training.hpp"
#include "oracles.hpp"

namespace fabricnet {
namespace {

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

// At 32 px the head output is 2x2, too small for two stride-2 layers, so the
// submodels use stride 1.
ModelConfig tiny_config() {
  ModelConfig c;
  c.n_classes = 4;
  c.middle_flows = 0;
  c.input_size = 32;
  c.ensemble_spec = "{S4,3,1},{S16,3,1}";
  return c;
}

Dataset tiny_data(std::size_t n, std::uint64_t seed = 7) {
  SynthConfig sc;
  sc.n_classes = 4;
  sc.n_samples = n;
  sc.seed = seed;
  sc.image_size = 32;
  return gen_synthetic(sc);
}

TEST(Bce, AnalyticExamples) {
  const std::vector<double> half{0.5};
  const std::vector<std::uint8_t> one{1};
  EXPECT_NEAR(bce_value<double>(half, one, 1), std::log(2.0), 1e-12);
  const std::vector<double> exact{1.0, 0.0, 1.0};
  const std::vector<std::uint8_t> labels{1, 0, 1};
  EXPECT_NEAR(bce_value<double>(exact, labels, 3), 0.0, 1e-6);
  EXPECT_THROW(bce_value<double>(exact, one, 1), ShapeError);

  const Var<double> o = parameter(Tensor64({1, 1}, {0.5}));
  EXPECT_NEAR(bce_loss<double>(o, Tensor64({1, 1}, {1.0}))->value[0], std::log(2.0), 1e-12);
  EXPECT_THROW(bce_loss<double>(o, Tensor64({1, 2}, {1.0, 0.0})), ShapeError);
}

TEST(Bce, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::bernoulli_distribution coin(0.5);
  const std::size_t n = 3, c = 4;
  std::vector<double> o(n * c), y(n * c);
  std::vector<std::uint8_t> bits(n * c);
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = u(rng);
    bits[i] = coin(rng);
    y[i] = bits[i];
  }
  const Var<double> scores = parameter(Tensor64({n, c}, o));
  backward(bce_loss<double>(scores, Tensor64({n, c}, y)));
  const double eps = 1e-6;
  for (std::size_t i = 0; i < o.size(); ++i) {
    std::vector<double> plus = o, minus = o;
    plus[i] += eps;
    minus[i] -= eps;
    const double fd = (bce_value<double>(plus, bits, c) - bce_value<double>(minus, bits, c)) / (2 * eps);
    const double analytic = (o[i] - y[i]) / (o[i] * (1.0 - o[i])) / static_cast<double>(n);
    EXPECT_NEAR(scores->grad[i], fd, 1e-6 * std::max(1.0, std::abs(fd)));
    EXPECT_NEAR(scores->grad[i], analytic, 1e-12 * std::max(1.0, std::abs(analytic)));
  }
}

TEST(Adam, FirstStepIsLrTimesSign) {
  ParamStore<double> store;
  const Var<double> w = store.add("w", {4}, true, ParamInit::kZeros);
  w->value = Tensor64({4}, {1.0, -2.0, 0.5, 3.0});
  const std::vector<double> before(w->value.data().begin(), w->value.data().end());
  w->ensure_grad() = Tensor64({4}, {0.3, -7.0, 1e-3, -0.02});
  BasicAdam<double> adam(store, AdamOptions{.lr = 0.01});
  adam.step();
  EXPECT_EQ(adam.steps(), 1u);
  for (std::size_t i = 0; i < 4; ++i) {
    const double g = w->grad[i];
    EXPECT_NEAR(w->value[i] - before[i], -0.01 * (g > 0 ? 1.0 : -1.0), 1e-6) << i;
  }
}

TEST(Adam, ZeroGradientLeavesParametersAndDecaysMoments) {
  ParamStore<double> store;
  const Var<double> w = store.add("w", {2}, true, ParamInit::kZeros);
  w->value = Tensor64({2}, {1.0, -1.0});
  BasicAdam<double> adam(store);
  w->ensure_grad() = Tensor64({2}, {0.5, 0.5});
  adam.step();
  const double m0 = adam.slots()[0].m[0], v0 = adam.slots()[0].v[0];
  store.zero_grad();
  adam.step();
  EXPECT_NEAR(adam.slots()[0].m[0], 0.9 * m0, 1e-15);
  EXPECT_NEAR(adam.slots()[0].v[0], 0.999 * v0, 1e-15);

  ParamStore<double> fresh_store;
  const Var<double> f = fresh_store.add("f", {2}, true, ParamInit::kZeros);
  f->value = Tensor64({2}, {1.0, -1.0});
  BasicAdam<double> fresh(fresh_store);
  fresh.step();
  EXPECT_EQ(f->value[0], 1.0);
  EXPECT_EQ(f->value[1], -1.0);
}

TEST(Adam, MinimizesSquare) {
  ParamStore<double> store;
  const Var<double> w = store.add("w", {1}, true, ParamInit::kZeros);
  w->value[0] = 1.0;
  BasicAdam<double> adam(store, AdamOptions{.lr = 0.01});
  for (int i = 0; i < 200; ++i) {
    store.zero_grad();
    w->ensure_grad()[0] = 2.0 * w->value[0];
    adam.step();
  }
  EXPECT_LT(std::abs(w->value[0]), 0.5);
}

TEST(Adam, SkipsFrozenEntriesAndRejectsBadOptions) {
  ParamStore<double> store;
  store.add("a", {2}, true, ParamInit::kZeros);
  store.add("running", {2}, false, ParamInit::kOnes);
  BasicAdam<double> adam(store);
  ASSERT_EQ(adam.slots().size(), 1u);
  EXPECT_EQ(adam.slots()[0].name, "a");
  EXPECT_THROW(BasicAdam<double>(store, AdamOptions{.lr = -1.0}), ValidationError);
  adam.slots()[0].m = Tensor64({3});
  EXPECT_THROW(adam.step(), ShapeError);
}

TEST(Augment, IdentityPaths) {
  std::vector<float> img(8 * 8 * 3);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (float& v : img) v = u(rng);
  const std::vector<float> original = img;
  AugmentConfig off;
  off.enabled = false;
  augment(img, 8, 8, 3, off, rng);
  EXPECT_EQ(img, original);
  AugmentConfig never;
  never.probability = 0.0;
  augment(img, 8, 8, 3, never, rng);
  EXPECT_EQ(img, original);
  EXPECT_THROW(augment(img, 8, 7, 3, never, rng), ShapeError);
}

TEST(Augment, BrightnessShiftsEveryPixelEqually) {
  AugmentConfig only_brightness;
  only_brightness.probability = 1.0;
  only_brightness.contrast_low = only_brightness.contrast_high = 1.0;
  only_brightness.zoom_max = 1.0;
  only_brightness.crop_pad = 0.0;
  only_brightness.channel_shift = 0.0;
  float top = 0.0f;
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    std::vector<float> img(4 * 4 * 3, 0.5f);
    std::mt19937_64 rng(seed);
    augment(img, 4, 4, 3, only_brightness, rng);
    for (float v : img) ASSERT_NEAR(v, img[0], 1e-6f);
    ASSERT_GE(img[0], 0.3f - 1e-6f);
    ASSERT_LE(img[0], 0.7f + 1e-6f);
    top = std::max(top, img[0]);
  }
  // The largest delta, +0.2, maps mid-grey to 0.7.
  EXPECT_NEAR(top, 0.7f, 1e-3f);
}

TEST(Augment, RangeAndShapeHoldOverManyDraws) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  AugmentConfig wide;
  wide.probability = 0.9;
  for (int draw = 0; draw < 10000; ++draw) {
    std::vector<float> img(6 * 5 * 3);
    for (float& v : img) v = u(rng) < 0.1f ? std::round(u(rng)) : u(rng);
    augment(img, 6, 5, 3, wide, rng);
    ASSERT_EQ(img.size(), 6u * 5u * 3u);
    for (float v : img) ASSERT_TRUE(v >= 0.0f && v <= 1.0f) << v;
  }
}

TEST(KFold, EightSamplesFourFolds) {
  const auto rounds = kfold_split(8, 4, 1);
  ASSERT_EQ(rounds.size(), 4u);
  std::multiset<std::size_t> tested;
  for (const auto& r : rounds) {
    EXPECT_EQ(r.train.size(), 4u);
    EXPECT_EQ(r.val.size(), 2u);
    EXPECT_EQ(r.test.size(), 2u);
    std::set<std::size_t> all(r.train.begin(), r.train.end());
    all.insert(r.val.begin(), r.val.end());
    all.insert(r.test.begin(), r.test.end());
    EXPECT_EQ(all.size(), 8u);
    tested.insert(r.test.begin(), r.test.end());
  }
  EXPECT_EQ(tested, (std::multiset<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7}));
  EXPECT_THROW(kfold_split(8, 1, 1), ValidationError);
  EXPECT_THROW(kfold_split(7, 4, 1), ValidationError);
}

TEST(KFold, PartitionPropertyAndDeterminism) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 30; ++t) {
    const std::size_t k = 2 + rng() % 6;
    const std::size_t n = 2 * k + rng() % 200;
    const auto rounds = kfold_split(n, k, t);
    std::vector<int> tested(n, 0);
    for (const auto& r : rounds) {
      std::vector<int> seen(n, 0);
      for (auto i : r.train) seen[i]++;
      for (auto i : r.val) seen[i]++;
      for (auto i : r.test) {
        seen[i]++;
        tested[i]++;
      }
      for (int s : seen) ASSERT_EQ(s, 1);
    }
    for (int s : tested) ASSERT_EQ(s, 1);
    const auto again = kfold_split(n, k, t);
    for (std::size_t r = 0; r < k; ++r) {
      EXPECT_EQ(rounds[r].train, again[r].train);
      EXPECT_EQ(rounds[r].val, again[r].val);
      EXPECT_EQ(rounds[r].test, again[r].test);
    }
  }
  const auto quarters = kfold_split(1000, 4, 5);
  EXPECT_EQ(quarters[0].train.size(), 500u);
  EXPECT_EQ(quarters[0].val.size(), 250u);
  EXPECT_EQ(quarters[0].test.size(), 250u);
}

TEST(Train, ConfigValidation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.batch_size = 1;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.threshold = 1.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.lr = std::nan("");
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Train, ZeroLearningRateKeepsTrainableParameters) {
  const Dataset data = tiny_data(16);
  ModelGraph model = build_model<float>(tiny_config());
  init_params(model, 3);
  std::vector<Tensor> before;
  for (const auto& e : model.params().entries()) before.push_back(e.var->value);
  TrainConfig tc;
  tc.batch_size = 8;
  tc.max_epochs = 1;
  tc.lr = 0.0;
  Adam adam(model.params());
  const auto idx = iota_indices(16);
  train(model, data, std::span(idx).first(12), std::span(idx).subspan(12), tc, adam);
  const auto& entries = model.params().entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].trainable) {
      EXPECT_EQ(entries[i].var->value, before[i]) << entries[i].name;
    }
  }
}

TEST(Train, EmptyPartitionsAreRejected) {
  const Dataset data = tiny_data(8);
  ModelGraph model = build_model<float>(tiny_config());
  init_params(model, 3);
  Adam adam(model.params());
  const auto idx = iota_indices(8);
  TrainConfig tc;
  tc.max_epochs = 1;
  EXPECT_THROW(train(model, data, idx, {}, tc, adam), ValidationError);
  EXPECT_THROW(train(model, data, {}, idx, tc, adam), ValidationError);
  EXPECT_THROW(evaluate(model, data, {}, 0.5), ValidationError);
}

TEST(Train, SameSeedGivesIdenticalHistory) {
  const Dataset data = tiny_data(24);
  const auto idx = iota_indices(24);
  TrainConfig tc;
  tc.batch_size = 8;
  tc.max_epochs = 2;
  tc.seed = 42;
  std::string logs[2];
  std::vector<Tensor> params[2];
  for (int run = 0; run < 2; ++run) {
    ModelGraph model = build_model<float>(tiny_config());
    init_params(model, 42);
    Adam adam(model.params());
    logs[run] = train(model, data, std::span(idx).first(16), std::span(idx).subspan(16), tc, adam).history.to_log();
    for (const auto& e : model.params().entries()) params[run].push_back(e.var->value);
  }
  EXPECT_EQ(logs[0], logs[1]);
  EXPECT_EQ(params[0], params[1]);
  EXPECT_EQ(std::count(logs[0].begin(), logs[0].end(), '\n'), 4);
}

// One shared run for the learnability, loss-trend and best-epoch checks.
class TinyRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    data_ = new Dataset(tiny_data(64));
    model_ = new ModelGraph(build_model<float>(tiny_config()));
    init_params(*model_, 7);
    TrainConfig tc;
    tc.batch_size = 16;
    tc.max_epochs = 20;
    tc.seed = 7;
    Adam adam(model_->params());
    idx_ = iota_indices(64);
    result_ = new TrainResult(train(*model_, *data_, idx_, std::span(idx_).first(32), tc, adam));
  }
  static void TearDownTestSuite() {
    delete result_;
    delete model_;
    delete data_;
  }
  static inline Dataset* data_ = nullptr;
  static inline ModelGraph* model_ = nullptr;
  static inline TrainResult* result_ = nullptr;
  static inline std::vector<std::size_t> idx_;
};

TEST_F(TinyRun, ReachesHighTrainF1) {
  double best = 0.0;
  for (const auto& e : result_->history.epochs) best = std::max(best, e.train_f1);
  EXPECT_GE(best, 0.95);
  EXPECT_LE(result_->history.epochs.size(), 20u);
}

TEST_F(TinyRun, SmoothedLossDecreasesOverFirstTenEpochs) {
  const auto& ep = result_->history.epochs;
  ASSERT_GE(ep.size(), 10u);
  for (std::size_t i = 0; i + 3 < 10; ++i) {
    const double a = (ep[i].train_loss + ep[i + 1].train_loss + ep[i + 2].train_loss) / 3.0;
    const double b = (ep[i + 1].train_loss + ep[i + 2].train_loss + ep[i + 3].train_loss) / 3.0;
    EXPECT_LT(b, a) << "window starting at epoch " << i + 1;
  }
}

TEST_F(TinyRun, KeepsBestValidationEpoch) {
  const auto& ep = result_->history.epochs;
  std::size_t best = 0;
  for (std::size_t i = 1; i < ep.size(); ++i) {
    if (ep[i].val_f1 > ep[best].val_f1) best = i;
  }
  EXPECT_EQ(result_->best_epoch, best + 1);
  EXPECT_EQ(result_->best_val.f1, ep[best].val_f1);
  const Evaluation again = evaluate(*model_, *data_, std::span(idx_).first(32), 0.5);
  EXPECT_EQ(again.report.f1, ep[best].val_f1);
  EXPECT_EQ(again.report.loss, ep[best].val_loss);
}

TEST_F(TinyRun, EvaluationMatchesIndependentReplay) {
  const Evaluation ev = evaluate(*model_, *data_, idx_, 0.5, 10);
  ASSERT_EQ(ev.scores.size(), 64u * 4u);
  const auto prf = oracle::formula_prf(ev.scores, ev.labels.bits, 0.5);
  EXPECT_DOUBLE_EQ(ev.report.precision, prf.precision);
  EXPECT_DOUBLE_EQ(ev.report.recall, prf.recall);
  EXPECT_DOUBLE_EQ(ev.report.f1, prf.f1);
  EXPECT_DOUBLE_EQ(ev.report.accuracy, oracle::row_scan_accuracy(ev.scores, ev.labels.bits, 4, 0.5));
  ASSERT_TRUE(ev.report.auc.has_value());
  EXPECT_NEAR(*ev.report.auc, oracle::mann_whitney_auc(ev.scores, ev.labels.bits), 0.01);
  double loss = 0.0;
  for (std::size_t i = 0; i < ev.scores.size(); ++i) {
    const double p = std::clamp(static_cast<double>(ev.scores[i]), 1e-7, 1.0 - 1e-7);
    loss -= ev.labels.bits[i] ? std::log(p) : std::log(1.0 - p);
  }
  EXPECT_NEAR(ev.report.loss, loss / 64.0, 1e-9);
  EXPECT_EQ(ev.labels, data_->gather_labels(idx_));
  // Batch size does not change the result.
  EXPECT_EQ(evaluate(*model_, *data_, idx_, 0.5, 64).scores, ev.scores);
}

}  // namespace
}  // namespace fabricnet
