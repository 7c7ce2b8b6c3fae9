#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "specband/train.hpp"

using namespace specband;
using Catch::Approx;

namespace {

// Two linearly separable classes of spectra: class 1 carries extra signal on
// bands 3..5.
struct Separable {
  TensorT<float> train_x, val_x;
  std::vector<int> train_y, val_y;
};

Separable separable_spectra(int per_class_train, int per_class_val, uint64_t seed) {
  Rng rng(seed);
  const int bands = 16;
  const auto fill = [&](TensorT<float>& x, std::vector<int>& y, int per_class) {
    const int n = 2 * per_class;
    x = TensorT<float>({n, bands});
    y.assign(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
      const int label = i % 2;
      y[static_cast<std::size_t>(i)] = label;
      for (int b = 0; b < bands; ++b) {
        double v = 0.3 + 0.05 * rng.normal();
        if (label == 1 && b >= 3 && b <= 5) v += 0.4;
        x(i, b) = static_cast<float>(v);
      }
    }
  };
  Separable data;
  fill(data.train_x, data.train_y, per_class_train);
  fill(data.val_x, data.val_y, per_class_val);
  return data;
}

AttentionCnnConfig tiny_config(bool attention, uint64_t seed) {
  AttentionCnnConfig cfg;
  cfg.num_blocks = 2;
  cfg.num_classes = 2;
  cfg.use_attention = attention;
  cfg.hidden = {64, 32};  // slim head keeps the unit suite fast
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("separable spectra reach high validation accuracy") {
  const Separable data = separable_spectra(50, 20, 1);
  auto model = build_model<float>(tiny_config(true, 11), 16);
  TrainConfig tc;
  tc.batch_size = 16;
  tc.max_epochs = 50;
  tc.seed = 11;
  const TrainHistory history = train_model(model, data.train_x, data.train_y, data.val_x,
                                           data.val_y, tc);
  REQUIRE(static_cast<int>(history.epochs.size()) <= 50);
  REQUIRE(history.best_validation_accuracy >= 0.95);
}

TEST_CASE("plateaued validation stops exactly patience epochs after the best") {
  const Separable data = separable_spectra(10, 5, 2);
  auto model = build_model<float>(tiny_config(true, 3), 16);
  // freeze weights AND batch-norm running stats so validation accuracy is
  // exactly constant
  for (auto& block : model.blocks) block.bn.momentum = 0.0;
  TrainConfig tc;
  tc.batch_size = 8;
  tc.max_epochs = 100;
  tc.adam.lr = 0.0;
  tc.seed = 3;
  const TrainHistory history = train_model(model, data.train_x, data.train_y, data.val_x,
                                           data.val_y, tc);
  REQUIRE(history.best_epoch == 1);
  REQUIRE(history.stopped_early);
  REQUIRE(static_cast<int>(history.epochs.size()) == 1 + tc.patience);
  for (const EpochStats& e : history.epochs) {
    REQUIRE(e.validation_accuracy == history.epochs.front().validation_accuracy);
  }
}

TEST_CASE("returned weights reproduce the best validation accuracy") {
  const Separable data = separable_spectra(30, 10, 4);
  auto model = build_model<float>(tiny_config(true, 5), 16);
  TrainConfig tc;
  tc.batch_size = 16;
  tc.max_epochs = 40;
  tc.seed = 5;
  const TrainHistory history = train_model(model, data.train_x, data.train_y, data.val_x,
                                           data.val_y, tc);
  const double reproduced = accuracy(model, data.val_x, data.val_y);
  REQUIRE(reproduced == history.best_validation_accuracy);
}

TEST_CASE("identical seeds give bitwise-identical histories") {
  const Separable data = separable_spectra(20, 8, 6);
  TrainConfig tc;
  tc.batch_size = 8;
  tc.max_epochs = 12;
  tc.seed = 9;

  auto run = [&] {
    auto model = build_model<float>(tiny_config(true, 7), 16);
    return train_model(model, data.train_x, data.train_y, data.val_x, data.val_y, tc);
  };
  const TrainHistory h1 = run();
  const TrainHistory h2 = run();
  REQUIRE(h1.epochs.size() == h2.epochs.size());
  for (std::size_t i = 0; i < h1.epochs.size(); ++i) {
    REQUIRE(h1.epochs[i].train_loss == h2.epochs[i].train_loss);
    REQUIRE(h1.epochs[i].train_accuracy == h2.epochs[i].train_accuracy);
    REQUIRE(h1.epochs[i].validation_accuracy == h2.epochs[i].validation_accuracy);
  }
}

TEST_CASE("exploding updates abort with a divergence diagnostic") {
  const Separable data = separable_spectra(10, 4, 8);
  auto model = build_model<float>(tiny_config(false, 9), 16);
  TrainConfig tc;
  tc.batch_size = 8;
  tc.max_epochs = 10;
  tc.adam.lr = 1e30;  // first step blows the weights past float range
  tc.seed = 10;
  REQUIRE_THROWS_AS(
      train_model(model, data.train_x, data.train_y, data.val_x, data.val_y, tc),
      TrainingDivergence);
}

TEST_CASE("label out of range is rejected up front") {
  const Separable data = separable_spectra(5, 3, 12);
  auto model = build_model<float>(tiny_config(false, 1), 16);
  std::vector<int> bad = data.train_y;
  bad[0] = 7;
  TrainConfig tc;
  REQUIRE_THROWS_AS(train_model(model, data.train_x, bad, data.val_x, data.val_y, tc), DataError);
}
