// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0

#include "fabricnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "fabricnet/ensemble.hpp"

namespace fabricnet {

template <typename T>
Var<T> bce_loss(const Var<T>& scores, const BasicTensor<T>& labels) {
  const Shape& s = scores->value.shape();
  if (s.size() != 2 || s != labels.shape()) {
    throw ShapeError("bce_loss: scores " + shape_to_string(s) + " and labels " + shape_to_string(labels.shape()) +
                     " must be matching [N,C] tensors");
  }
  const std::size_t n = s[0];
  const std::size_t total = scores->value.numel();
  const T* o = scores->value.raw();
  const T* y = labels.raw();
  const double lo = kScoreClamp;
  const double hi = 1.0 - kScoreClamp;
  double sum = 0.0;
  for (std::size_t i = 0; i < total; ++i) {
    const double p = std::clamp(static_cast<double>(o[i]), lo, hi);
    const double t = static_cast<double>(y[i]);
    sum -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  BasicTensor<T> value({1}, static_cast<T>(sum / static_cast<double>(n)));
  auto node = make_op_node<T>(OpKind::kCustom, std::move(value), {scores});
  if (node->requires_grad) {
    node->backward_fn = [scores, labels, n, lo, hi](Node<T>& self) {
      const double upstream = static_cast<double>(self.grad[0]) / static_cast<double>(n);
      T* dx = scores->ensure_grad().raw();
      const T* o = scores->value.raw();
      const T* y = labels.raw();
      for (std::size_t i = 0; i < labels.numel(); ++i) {
        const double p = std::clamp(static_cast<double>(o[i]), lo, hi);
        const double t = static_cast<double>(y[i]);
        dx[i] += static_cast<T>(upstream * (p - t) / (p * (1.0 - p)));
      }
    };
  }
  return node;
}

template <typename T>
double bce_value(std::span<const T> scores, std::span<const std::uint8_t> labels, std::size_t n_classes) {
  if (scores.size() != labels.size() || n_classes == 0 || scores.size() % n_classes != 0 || scores.empty()) {
    throw ShapeError("bce: " + std::to_string(scores.size()) + " scores for " + std::to_string(labels.size()) +
                     " labels over " + std::to_string(n_classes) + " classes");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double p = std::clamp(static_cast<double>(scores[i]), kScoreClamp, 1.0 - kScoreClamp);
    sum -= labels[i] ? std::log(p) : std::log(1.0 - p);
  }
  return sum / static_cast<double>(scores.size() / n_classes);
}

template <typename T>
BasicAdam<T>::BasicAdam(ParamStore<T>& params, AdamOptions options) : params_(params), options_(options) {
  if (!(options_.lr >= 0.0) || !(options_.beta1 >= 0.0 && options_.beta1 < 1.0) ||
      !(options_.beta2 >= 0.0 && options_.beta2 < 1.0) || !(options_.epsilon > 0.0)) {
    throw ValidationError("invalid Adam hyperparameters");
  }
  const auto& entries = params_.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!entries[i].trainable) continue;
    entry_index_.push_back(i);
    const Shape& shape = entries[i].var->value.shape();
    slots_.push_back(Slot{entries[i].name, BasicTensor<T>(shape, T{0}), BasicTensor<T>(shape, T{0})});
  }
}

template <typename T>
void BasicAdam<T>::step() {
  ++step_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const double lr = options_.lr;
  const double eps = options_.epsilon;
  auto& entries = params_.entries();
  for (std::size_t s = 0; s < slots_.size(); ++s) {
    Node<T>& node = *entries[entry_index_[s]].var;
    Slot& slot = slots_[s];
    if (slot.m.shape() != node.value.shape()) {
      throw ShapeError("Adam state for '" + slot.name + "' has shape " + shape_to_string(slot.m.shape()) +
                       ", parameter has " + shape_to_string(node.value.shape()));
    }
    const bool has_grad = node.has_grad();
    if (has_grad && node.grad.shape() != node.value.shape()) {
      throw ShapeError("gradient for '" + slot.name + "' does not match its parameter");
    }
    T* p = node.value.raw();
    T* m = slot.m.raw();
    T* v = slot.v.raw();
    const T* g = has_grad ? node.grad.raw() : nullptr;
    const std::size_t n = node.value.numel();
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = g ? static_cast<double>(g[i]) : 0.0;
      const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
      const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      p[i] = static_cast<T>(static_cast<double>(p[i]) - lr * (mi / c1) / (std::sqrt(vi / c2) + eps));
    }
  }
}

template class BasicAdam<float>;
template class BasicAdam<double>;

namespace {

std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  const auto len = static_cast<std::ptrdiff_t>(n);
  if (len == 1) return 0;
  const std::ptrdiff_t period = 2 * (len - 1);
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < len ? i : period - i);
}

// Bilinear sample with edge clamping.
float sample(std::span<const float> img, std::size_t h, std::size_t w, std::size_t c, std::size_t ch, double y,
             double x) {
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const auto y0 = static_cast<std::size_t>(y);
  const auto x0 = static_cast<std::size_t>(x);
  const std::size_t y1 = std::min(y0 + 1, h - 1);
  const std::size_t x1 = std::min(x0 + 1, w - 1);
  const double fy = y - static_cast<double>(y0);
  const double fx = x - static_cast<double>(x0);
  const auto at = [&](std::size_t yy, std::size_t xx) { return static_cast<double>(img[(yy * w + xx) * c + ch]); };
  const double top = at(y0, x0) * (1 - fx) + at(y0, x1) * fx;
  const double bottom = at(y1, x0) * (1 - fx) + at(y1, x1) * fx;
  return static_cast<float>(top * (1 - fy) + bottom * fy);
}

}  // namespace

void augment(std::span<float> image, std::size_t h, std::size_t w, std::size_t c, const AugmentConfig& config,
             std::mt19937_64& rng) {
  if (image.size() != h * w * c) throw ShapeError("augment: image buffer does not match its shape");
  if (!config.enabled) return;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto fires = [&] { return unit(rng) < config.probability; };
  const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  if (fires()) {
    const auto delta = static_cast<float>(uniform(-config.brightness, config.brightness));
    for (float& v : image) v += delta;
  }
  if (fires()) {
    const double scale = uniform(config.contrast_low, config.contrast_high);
    double mean = 0.0;
    for (float v : image) mean += v;
    mean /= static_cast<double>(image.size());
    for (float& v : image) v = static_cast<float>(mean + (v - mean) * scale);
  }
  std::vector<float> scratch;
  if (fires()) {
    const double zoom = uniform(1.0, config.zoom_max);
    scratch.assign(image.begin(), image.end());
    const double oy = (static_cast<double>(h) - static_cast<double>(h) / zoom) / 2.0;
    const double ox = (static_cast<double>(w) - static_cast<double>(w) / zoom) / 2.0;
    for (std::size_t y = 0; y < h; ++y) {
      const double sy = oy + (static_cast<double>(y) + 0.5) / zoom - 0.5;
      for (std::size_t x = 0; x < w; ++x) {
        const double sx = ox + (static_cast<double>(x) + 0.5) / zoom - 0.5;
        for (std::size_t ch = 0; ch < c; ++ch) image[(y * w + x) * c + ch] = sample(scratch, h, w, c, ch, sy, sx);
      }
    }
  }
  if (fires()) {
    const auto pad_y = static_cast<std::ptrdiff_t>(std::lround(config.crop_pad * static_cast<double>(h)));
    const auto pad_x = static_cast<std::ptrdiff_t>(std::lround(config.crop_pad * static_cast<double>(w)));
    std::uniform_int_distribution<std::ptrdiff_t> dy(-pad_y, pad_y), dx(-pad_x, pad_x);
    const std::ptrdiff_t off_y = dy(rng);
    const std::ptrdiff_t off_x = dx(rng);
    scratch.assign(image.begin(), image.end());
    for (std::size_t y = 0; y < h; ++y) {
      const std::size_t sy = reflect(static_cast<std::ptrdiff_t>(y) + off_y, h);
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t sx = reflect(static_cast<std::ptrdiff_t>(x) + off_x, w);
        for (std::size_t ch = 0; ch < c; ++ch) image[(y * w + x) * c + ch] = scratch[(sy * w + sx) * c + ch];
      }
    }
  }
  if (fires()) {
    std::vector<float> shift(c);
    for (auto& s : shift) s = static_cast<float>(uniform(-config.channel_shift, config.channel_shift));
    for (std::size_t i = 0; i < image.size(); ++i) image[i] += shift[i % c];
  }
  for (float& v : image) v = std::clamp(v, 0.0f, 1.0f);
}

std::vector<FoldSplit> kfold_split(std::size_t n_samples, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ValidationError("k-fold split needs k >= 2, got " + std::to_string(k));
  if (n_samples < 2 * k) {
    throw ValidationError("k-fold split with k=" + std::to_string(k) + " needs at least " + std::to_string(2 * k) +
                          " samples, got " + std::to_string(n_samples));
  }
  std::vector<std::size_t> order(n_samples);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::vector<std::size_t>> folds(k);
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t begin = f * n_samples / k;
    const std::size_t end = (f + 1) * n_samples / k;
    folds[f].assign(order.begin() + static_cast<std::ptrdiff_t>(begin), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  std::vector<FoldSplit> rounds(k);
  for (std::size_t r = 0; r < k; ++r) {
    rounds[r].test = folds[r];
    rounds[r].val = folds[(r + 1) % k];
    for (std::size_t f = 0; f < k; ++f) {
      if (f == r || f == (r + 1) % k) continue;
      rounds[r].train.insert(rounds[r].train.end(), folds[f].begin(), folds[f].end());
    }
  }
  return rounds;
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw ValidationError("batch size must be >= 2 (batchnorm needs a batch variance)");
  if (max_epochs < 1) throw ValidationError("epochs must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ValidationError("learning rate must be a finite value >= 0");
  if (k_folds < 2) throw ValidationError("k_folds must be >= 2");
  validate_threshold(threshold);
  if (!(augment.probability >= 0.0 && augment.probability <= 1.0)) {
    throw ValidationError("augmentation probability must lie in [0, 1]");
  }
}

namespace {

std::string format_metric(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string format_auc(const std::optional<double>& v) { return v ? format_metric(*v) : std::string("nan"); }

}  // namespace

std::string History::to_log() const {
  std::string out;
  for (const auto& e : epochs) {
    out += std::to_string(e.epoch) + ",train," + format_metric(e.train_loss) + "," + format_metric(e.train_f1) + "," +
           format_auc(e.train_auc) + "\n";
    out += std::to_string(e.epoch) + ",val," + format_metric(e.val_loss) + "," + format_metric(e.val_f1) + "," +
           format_auc(e.val_auc) + "\n";
  }
  return out;
}

Evaluation evaluate(const ModelGraph& model, const Dataset& data, std::span<const std::size_t> indices,
                    double threshold, std::size_t batch_size) {
  validate_threshold(threshold);
  if (indices.empty()) throw ValidationError("cannot evaluate an empty partition");
  if (batch_size < 1) throw ValidationError("evaluation batch size must be >= 1");
  const Shape& in = model.input_shape();
  if (in != Shape{data.height, data.width, data.channels}) {
    throw ShapeError("model expects images " + shape_to_string(in) + ", dataset holds " +
                     shape_to_string({data.height, data.width, data.channels}));
  }
  Evaluation out;
  out.labels = data.gather_labels(indices);
  out.scores.reserve(indices.size() * data.n_classes());
  for (std::size_t begin = 0; begin < indices.size(); begin += batch_size) {
    const auto chunk = indices.subspan(begin, std::min(batch_size, indices.size() - begin));
    const Tensor scores = predict_scores(model, data.gather(chunk));
    if (scores.shape() != Shape{chunk.size(), data.n_classes()}) {
      throw ShapeError("model emits " + shape_to_string(scores.shape()) + " scores for " +
                       std::to_string(data.n_classes()) + " classes");
    }
    out.scores.insert(out.scores.end(), scores.data().begin(), scores.data().end());
  }
  const double loss = bce_value<float>(out.scores, out.labels.bits, data.n_classes());
  out.report = make_report<float>(out.scores, out.labels, threshold, loss);
  out.report.params = count_params(model).trainable;
  out.report.flops = count_flops(model, in).total();
  return out;
}

TrainResult train(ModelGraph& model, const Dataset& data, std::span<const std::size_t> train_idx,
                  std::span<const std::size_t> val_idx, const TrainConfig& config, Adam& optimizer,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (train_idx.size() < 2) throw ValidationError("training partition needs at least 2 samples");
  if (val_idx.empty()) throw ValidationError("validation partition is empty");
  optimizer.set_lr(config.lr);

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train_idx.begin(), train_idx.end());
  const std::size_t n_classes = data.n_classes();
  RunOptions train_mode;
  train_mode.mode = BatchNormMode::kTrain;

  TrainResult result;
  std::vector<BasicTensor<float>> best_snapshot;
  double best_f1 = -1.0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<float> epoch_scores;
    std::vector<std::uint8_t> epoch_labels;
    double loss_sum = 0.0;
    std::size_t seen = 0;

    for (std::size_t begin = 0; begin + 2 <= order.size(); begin += config.batch_size) {
      const std::size_t size = std::min(config.batch_size, order.size() - begin);
      if (size < 2) break;
      const std::span<const std::size_t> batch(order.data() + begin, size);
      Tensor images = data.gather(batch);
      const std::size_t per_image = data.image_numel();
      for (std::size_t i = 0; i < size; ++i) {
        augment(images.data().subspan(i * per_image, per_image), data.height, data.width, data.channels,
                config.augment, rng);
      }
      const LabelMatrix labels = data.gather_labels(batch);
      Tensor targets({size, n_classes}, std::vector<float>(labels.bits.begin(), labels.bits.end()));

      const Var<float> scores = model.forward(images, train_mode);
      const Var<float> loss = bce_loss<float>(scores, targets);
      model.params().zero_grad();
      backward(loss);
      optimizer.step();

      loss_sum += static_cast<double>(loss->value[0]) * static_cast<double>(size);
      seen += size;
      epoch_scores.insert(epoch_scores.end(), scores->value.data().begin(), scores->value.data().end());
      epoch_labels.insert(epoch_labels.end(), labels.bits.begin(), labels.bits.end());
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(seen);
    const LabelMatrix train_labels(seen, n_classes, std::move(epoch_labels));
    const MetricsReport train_report = make_report<float>(epoch_scores, train_labels, config.threshold, 0.0);
    record.train_f1 = train_report.f1;
    record.train_auc = train_report.auc;

    const Evaluation val = evaluate(model, data, val_idx, config.threshold);
    record.val_loss = val.report.loss;
    record.val_f1 = val.report.f1;
    record.val_auc = val.report.auc;
    result.history.epochs.push_back(record);
    if (on_epoch) on_epoch(record);

    if (record.val_f1 > best_f1) {
      best_f1 = record.val_f1;
      result.best_epoch = epoch;
      result.best_val = val.report;
      best_snapshot.clear();
      for (const auto& e : model.params().entries()) best_snapshot.push_back(e.var->value);
    }
  }

  auto& entries = model.params().entries();
  for (std::size_t i = 0; i < entries.size(); ++i) entries[i].var->value = std::move(best_snapshot[i]);
  return result;
}

template Var<float> bce_loss<float>(const Var<float>&, const BasicTensor<float>&);
template Var<double> bce_loss<double>(const Var<double>&, const BasicTensor<double>&);
template double bce_value<float>(std::span<const float>, std::span<const std::uint8_t>, std::size_t);
template double bce_value<double>(std::span<const double>, std::span<const std::uint8_t>, std::size_t);

}  // namespace fabricnet
