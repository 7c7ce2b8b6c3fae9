#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "specband/adam.hpp"
#include "specband/model.hpp"

namespace specband {

struct TrainConfig {
  int batch_size = 64;
  int patience = 25;
  int max_epochs = 200;
  AdamConfig adam;
  uint64_t seed = 0;  // epoch shuffle stream
};

struct EpochStats {
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double validation_accuracy = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  int best_epoch = 0;  // 1-based
  double best_validation_accuracy = 0.0;
  bool stopped_early = false;
};

template <typename T>
std::vector<int> predict(AttentionCnnModelT<T>& model, const TensorT<T>& x, int batch_size = 256) {
  const int total = x.dim(0);
  const int bands = x.dim(1);
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(total));
  for (int start = 0; start < total; start += batch_size) {
    const int count = std::min(batch_size, total - start);
    TensorT<T> batch({count, bands});
    std::copy(x.data() + static_cast<std::size_t>(start) * bands,
              x.data() + static_cast<std::size_t>(start + count) * bands, batch.data());
    ForwardCacheT<T> cache = attention_cnn_forward(model, batch, Mode::kInfer);
    const std::vector<int> preds = predict_labels(cache.probs);
    out.insert(out.end(), preds.begin(), preds.end());
  }
  return out;
}

template <typename T>
double accuracy(AttentionCnnModelT<T>& model, const TensorT<T>& x, const std::vector<int>& labels,
                int batch_size = 256) {
  const std::vector<int> preds = predict(model, x, batch_size);
  long correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i] == labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

// Epoch loop of seeded shuffled mini-batches with ADAM; stops when `patience`
// consecutive epochs fail to exceed the best validation accuracy (or at
// max_epochs) and restores the best-validation-epoch weights. A trailing
// batch of one sample is merged into its predecessor so train-mode batch norm
// always sees N >= 2.
template <typename T>
TrainHistory train_model(AttentionCnnModelT<T>& model, const TensorT<T>& train_x,
                         const std::vector<int>& train_y, const TensorT<T>& val_x,
                         const std::vector<int>& val_y, const TrainConfig& cfg) {
  if (train_x.dim(0) < 2) throw DataError("training set needs at least 2 samples");
  if (val_x.dim(0) < 1) throw DataError("validation set must be non-empty");
  const int classes = model.config.num_classes;
  for (int y : train_y)
    if (y < 0 || y >= classes) throw DataError("training label " + std::to_string(y) + " out of range");
  for (int y : val_y)
    if (y < 0 || y >= classes) throw DataError("validation label " + std::to_string(y) + " out of range");
  if (cfg.batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (cfg.patience < 1 || cfg.max_epochs < 1) throw ConfigError("patience and max_epochs must be >= 1");

  const int total = train_x.dim(0);
  const int bands = train_x.dim(1);
  std::vector<int> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(mix_seed(cfg.seed, 0x7EA1));

  std::vector<ParamT<T>*> params = model.parameters();
  long step = 0;

  TrainHistory history;
  AttentionCnnModelT<T> best_model = model;
  int epochs_since_best = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order.begin(), order.end());

    double loss_sum = 0.0;
    long correct = 0;
    int start = 0;
    while (start < total) {
      int count = std::min(cfg.batch_size, total - start);
      if (total - (start + count) == 1) ++count;  // absorb a would-be singleton
      TensorT<T> batch({count, bands});
      std::vector<int> labels(static_cast<std::size_t>(count));
      for (int i = 0; i < count; ++i) {
        const int src = order[static_cast<std::size_t>(start + i)];
        std::copy(train_x.data() + static_cast<std::size_t>(src) * bands,
                  train_x.data() + static_cast<std::size_t>(src + 1) * bands,
                  batch.data() + static_cast<std::size_t>(i) * bands);
        labels[static_cast<std::size_t>(i)] = train_y[static_cast<std::size_t>(src)];
      }

      ForwardCacheT<T> cache = attention_cnn_forward(model, batch, Mode::kTrain);
      const double loss = attention_cnn_loss_backward(model, cache, labels);
      if (!std::isfinite(loss)) {
        throw TrainingDivergence("non-finite loss at epoch " + std::to_string(epoch) +
                                 ", batch offset " + std::to_string(start));
      }
      loss_sum += loss * count;
      const std::vector<int> preds = predict_labels(cache.probs);
      for (int i = 0; i < count; ++i)
        if (preds[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(i)]) ++correct;

      adam_step(params, ++step, cfg.adam);
      start += count;
    }

    EpochStats stats;
    stats.train_loss = loss_sum / total;
    stats.train_accuracy = static_cast<double>(correct) / total;
    stats.validation_accuracy = accuracy(model, val_x, val_y, std::max(cfg.batch_size, 64));
    history.epochs.push_back(stats);

    if (history.best_epoch == 0 || stats.validation_accuracy > history.best_validation_accuracy) {
      history.best_epoch = epoch;
      history.best_validation_accuracy = stats.validation_accuracy;
      best_model = model;
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
      if (epochs_since_best >= cfg.patience) {
        history.stopped_early = true;
        break;
      }
    }
  }

  model = std::move(best_model);
  return history;
}

}  // namespace specband
