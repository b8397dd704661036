#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "leancnn/adam.hpp"
#include "leancnn/arch.hpp"
#include "leancnn/data.hpp"
#include "leancnn/engine.hpp"
#include "leancnn/error.hpp"
#include "leancnn/image.hpp"
#include "leancnn/loss.hpp"
#include "leancnn/params.hpp"
#include "leancnn/rng.hpp"

namespace leancnn {

/// Stacked samples (N, ...) with one class index per sample.
template <typename T>
struct TrainingSet {
  Tensor<T> inputs;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

template <typename T>
TrainingSet<T> to_training_set(const Dataset& ds) {
  if (ds.empty()) throw DataError("dataset is empty");
  const Shape sample = ds.images.front().pixels.shape();
  Shape shape{ds.size()};
  shape.insert(shape.end(), sample.begin(), sample.end());
  TrainingSet<T> set{Tensor<T>(shape), {}};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& im = ds.images[i];
    if (im.pixels.shape() != sample) {
      throw ShapeError("image '" + im.id + "' is " + shape_to_string(im.pixels.shape()) + ", expected " +
                       shape_to_string(sample));
    }
    auto dst = set.inputs.slice(i);
    const auto src = im.pixels.values();
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] = static_cast<T>(src[j]);
    set.labels.push_back(im.label);
  }
  return set;
}

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  LossKind loss = LossKind::categorical_cross_entropy;
  AdamConfig adam;
  std::uint64_t seed = 0;
  /// Lossless augmentation drawn per sample and epoch; empty disables it.
  std::vector<AugmentOp> augment;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;
  double train_acc = 0;
  std::optional<double> val_loss;
  std::optional<double> val_acc;
};

using TrainHistory = std::vector<EpochRecord>;

template <typename T>
struct TrainResult {
  ParameterSet<T> params;
  TrainHistory history;
  bool diverged = false;
  std::string message;
};

namespace detail {

template <typename T>
Tensor<T> gather(const Tensor<T>& inputs, std::span<const std::size_t> rows) {
  Shape shape = inputs.shape();
  shape[0] = rows.size();
  Tensor<T> out(shape);
  for (std::size_t b = 0; b < rows.size(); ++b) {
    const auto src = inputs.slice(rows[b]);
    std::copy(src.begin(), src.end(), out.slice(b).begin());
  }
  return out;
}

}  // namespace detail

/// Inference-mode outputs (N, k) computed in batches of `batch_size`.
template <typename T>
Tensor<T> predict_all(const ArchitectureSpec& spec, const ParameterSet<T>& params, const Tensor<T>& inputs,
                      std::size_t batch_size = 32) {
  if (inputs.empty() || inputs.dim(0) == 0) throw DataError("predict_all: no samples");
  const std::size_t n = inputs.dim(0);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Tensor<T> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t len = std::min(batch_size, n - start);
    Tensor<T> y = predict(spec, params, detail::gather(inputs, std::span(idx).subspan(start, len)));
    if (out.empty()) out = Tensor<T>({n, y.dim(1)});
    for (std::size_t b = 0; b < len; ++b) {
      std::copy(y.slice(b).begin(), y.slice(b).end(), out.slice(start + b).begin());
    }
  }
  return out;
}

struct LossAccuracy {
  double loss = 0;
  double accuracy = 0;
};

template <typename T>
LossAccuracy evaluate_loss_accuracy(const ArchitectureSpec& spec, const ParameterSet<T>& params,
                                    const TrainingSet<T>& set, LossKind loss, std::size_t batch_size = 32) {
  const Tensor<T> probs = predict_all(spec, params, set.inputs, batch_size);
  LossAccuracy r;
  r.loss = loss_and_gradient(loss, probs, std::span<const int>(set.labels)).value;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    correct += predicted_class<T>(probs.slice(i)) == set.labels[i];
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(set.size());
  return r;
}

/// Mini-batch Adam training. Every epoch reshuffles with a seed derived from
/// (seed, epoch); the last partial batch is kept. Training loss/accuracy are
/// sample-weighted means over the epoch's train-mode batches; validation
/// metrics use inference mode. A non-finite loss or gradient stops training
/// and returns the parameters and history of the last completed epoch.
template <typename T>
TrainResult<T> train(const ArchitectureSpec& spec, ParameterSet<T> params, const TrainingSet<T>& data,
                     const TrainConfig& config, const TrainingSet<T>* validation = nullptr) {
  if (data.size() == 0) throw DataError("train: dataset is empty");
  if (config.batch_size == 0) throw Error("train: batch size must be positive");
  if (data.inputs.dim(0) != data.size()) throw ShapeError("train: inputs and labels differ in count");

  TrainResult<T> result;
  AdamState<T> opt{config.adam, 0, {}};
  std::vector<std::size_t> order(data.size());
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    ParameterSet<T> checkpoint = params;
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng(derive_seed(config.seed, epoch)).shuffle(order);
    double loss_sum = 0;
    std::size_t correct = 0;
    bool failed = false;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::size_t len = std::min(config.batch_size, order.size() - start);
      const auto rows = std::span<const std::size_t>(order).subspan(start, len);
      Tensor<T> batch = detail::gather(data.inputs, rows);
      std::vector<int> labels(len);
      for (std::size_t b = 0; b < len; ++b) labels[b] = data.labels[rows[b]];
      if (!config.augment.empty()) {
        const Shape sample = detail::sample_shape(batch.shape());
        for (std::size_t b = 0; b < len; ++b) {
          Tensor<T> img(sample, std::vector<T>(batch.slice(b).begin(), batch.slice(b).end()));
          img = leancnn::augment(img, std::span<const AugmentOp>(config.augment),
                                 derive_seed(config.seed, epoch, rows[b]));
          std::copy(img.values().begin(), img.values().end(), batch.slice(b).begin());
        }
      }
      try {
        auto fwd = forward(spec, params, batch, Mode::train, derive_seed(config.seed, epoch, batch_index));
        auto lg = loss_and_gradient(config.loss, fwd.output, std::span<const int>(labels));
        if (!std::isfinite(lg.value)) throw NumericError("non-finite training loss");
        for (std::size_t b = 0; b < len; ++b) correct += predicted_class<T>(fwd.output.slice(b)) == labels[b];
        loss_sum += lg.value * static_cast<double>(len);
        auto grads = backward(spec, params, fwd.cache, lg.gradient);
        adam_step(params, grads.gradients, opt);
        update_running_stats(spec, params, fwd.cache);
      } catch (const NumericError& e) {
        result.diverged = true;
        result.message = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index + 1) + ": " +
                         e.what();
        failed = true;
        break;
      }
    }
    if (failed) {
      params = std::move(checkpoint);
      break;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(data.size());
    rec.train_acc = static_cast<double>(correct) / static_cast<double>(data.size());
    if (validation && validation->size() > 0) {
      const auto v = evaluate_loss_accuracy(spec, params, *validation, config.loss, config.batch_size);
      rec.val_loss = v.loss;
      rec.val_acc = v.accuracy;
    }
    result.history.push_back(rec);
  }
  result.params = std::move(params);
  return result;
}

}  // namespace leancnn
