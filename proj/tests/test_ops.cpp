#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "specband/ops.hpp"

using namespace specband;
using Catch::Approx;

namespace {

Tensor column(const std::vector<float>& values) {
  Tensor t({static_cast<int>(values.size()), 1});
  for (std::size_t i = 0; i < values.size(); ++i) t[static_cast<long long>(i)] = values[i];
  return t;
}

}  // namespace

TEST_CASE("conv1d output length follows the closed-form law") {
  // floor((100 - 3 + 0)/3) + 1 = 33
  REQUIRE(conv1d_output_length(100, 3, 3, 0) == 33);
  // k=5, stride 1, padding 2 preserves length
  REQUIRE(conv1d_output_length(103, 5, 1, 2) == 103);
  REQUIRE(conv1d_output_length(204, 5, 1, 2) == 204);

  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const int length = 1 + static_cast<int>(rng.uniform_index(40));
    const int k = 1 + static_cast<int>(rng.uniform_index(7));
    const int stride = 1 + static_cast<int>(rng.uniform_index(3));
    const int padding = static_cast<int>(rng.uniform_index(3));
    const int lout = conv1d_output_length(length, k, stride, padding);
    if (lout < 1) continue;
    Tensor x({length, 2});
    Tensor w({3, 2, k});
    Tensor b({3});
    const Tensor y = conv1d_forward(x, w, b, stride, padding);
    REQUIRE(y.dim(0) == lout);
    REQUIRE(y.dim(1) == 3);
  }
}

TEST_CASE("conv1d identity kernel passes input through") {
  Tensor x = column({1.0f, -2.0f, 3.5f, 0.25f});
  Tensor w({1, 1, 1});
  w[0] = 1.0f;
  Tensor b({1});
  const Tensor y = conv1d_forward(x, w, b, 1, 0);
  REQUIRE(y.same_shape(x));
  for (long long i = 0; i < x.size(); ++i) REQUIRE(y[i] == Approx(x[i]));
}

TEST_CASE("conv1d computes the padded sliding dot product") {
  // single channel, k=3, stride 1, padding 1, kernel [1, 2, 3], bias 0.5
  Tensor x = column({1.0f, 2.0f, 3.0f});
  Tensor w({1, 1, 3});
  w[0] = 1.0f;
  w[1] = 2.0f;
  w[2] = 3.0f;
  Tensor b({1});
  b[0] = 0.5f;
  const Tensor y = conv1d_forward(x, w, b, 1, 1);
  // y[i] = 0.5 + sum_j x[i-1+j] * w[j], zeros outside
  REQUIRE(y(0, 0) == Approx(0.5 + 1.0 * 2.0 + 2.0 * 3.0));
  REQUIRE(y(1, 0) == Approx(0.5 + 1.0 * 1.0 + 2.0 * 2.0 + 3.0 * 3.0));
  REQUIRE(y(2, 0) == Approx(0.5 + 2.0 * 1.0 + 3.0 * 2.0));
}

TEST_CASE("conv1d rejects an output that would be empty") {
  Tensor x({2, 1});
  Tensor w({1, 1, 5});
  Tensor b({1});
  REQUIRE_THROWS_AS(conv1d_forward(x, w, b, 1, 0), ShapeError);
}

TEST_CASE("maxpool matches Table-style law and hand windows") {
  REQUIRE(pool1d_output_length(103, 2, 2) == 51);
  REQUIRE(pool1d_output_length(204, 2, 2) == 102);

  Tensor x = column({1.0f, 2.0f, 1.0f, 0.0f, 3.0f, 1.0f});
  const auto pooled = maxpool1d_forward(x, 3, 3);
  REQUIRE(pooled.output.dim(0) == 2);
  REQUIRE(pooled.output(0, 0) == 2.0f);
  REQUIRE(pooled.output(1, 0) == 3.0f);

  REQUIRE_THROWS_AS(maxpool1d_forward(column({1.0f}), 2, 2), ShapeError);
}

TEST_CASE("maxpool ties route gradient to the lowest index") {
  Tensor x = Tensor::filled({4, 1}, 2.0f);
  const auto pooled = maxpool1d_forward(x, 2, 2);
  REQUIRE(pooled.output(0, 0) == 2.0f);
  REQUIRE(pooled.argmax[0] == 0);
  REQUIRE(pooled.argmax[1] == 2);

  Tensor dy = Tensor::filled({2, 1}, 1.0f);
  const Tensor dx = maxpool1d_backward(dy, pooled.argmax, x.shape());
  REQUIRE(dx(0, 0) == 1.0f);
  REQUIRE(dx(1, 0) == 0.0f);
  REQUIRE(dx(2, 0) == 1.0f);
  REQUIRE(dx(3, 0) == 0.0f);
}

TEST_CASE("global average pool") {
  Tensor ones = Tensor::filled({4, 2}, 1.0f);
  Tensor y = avgpool1d_global_forward(ones);
  REQUIRE(y.dim(0) == 2);
  REQUIRE(y(0) == Approx(1.0));
  REQUIRE(y(1) == Approx(1.0));

  Tensor x({2, 2}, {1.0f, 3.0f, 5.0f, 7.0f});
  y = avgpool1d_global_forward(x);
  REQUIRE(y(0) == Approx(3.0));
  REQUIRE(y(1) == Approx(5.0));

  Tensor single({1, 3}, {4.0f, 5.0f, 6.0f});
  y = avgpool1d_global_forward(single);
  for (int c = 0; c < 3; ++c) REQUIRE(y(c) == single(0, c));
}

TEST_CASE("relu definition and gradient mask") {
  Tensor x({3}, {-1.0f, 0.0f, 2.0f});
  const Tensor y = relu_forward(x);
  REQUIRE(y(0) == 0.0f);
  REQUIRE(y(1) == 0.0f);
  REQUIRE(y(2) == 2.0f);

  Tensor dy = Tensor::filled({3}, 1.0f);
  const Tensor dx = relu_backward(x, dy);
  REQUIRE(dx(0) == 0.0f);
  REQUIRE(dx(1) == 0.0f);  // gradient at exactly 0 is 0
  REQUIRE(dx(2) == 1.0f);

  Tensor neg = Tensor::filled({4}, -3.0f);
  const Tensor yneg = relu_forward(neg);
  for (long long i = 0; i < yneg.size(); ++i) REQUIRE(yneg[i] == 0.0f);
}

TEST_CASE("batchnorm train mode standardizes each channel") {
  Rng rng(3);
  Tensor x({4, 3, 5});
  fill_uniform(x, rng, -2.0, 2.0);
  BatchNormState state(5);
  BatchNormCache<float> cache;
  const Tensor y = batchnorm1d_train(x, state, cache);

  const long long m = 4 * 3;
  for (int c = 0; c < 5; ++c) {
    double mean = 0.0, var = 0.0;
    for (int s = 0; s < 4; ++s)
      for (int i = 0; i < 3; ++i) mean += y(s, i, c);
    mean /= static_cast<double>(m);
    for (int s = 0; s < 4; ++s)
      for (int i = 0; i < 3; ++i) var += (y(s, i, c) - mean) * (y(s, i, c) - mean);
    var /= static_cast<double>(m);
    REQUIRE(std::abs(mean) < 1e-5);
    REQUIRE(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("batchnorm degenerate channel collapses to beta") {
  Tensor x = Tensor::filled({3, 2, 1}, 7.0f);
  BatchNormState state(1);
  state.beta.value[0] = 0.25f;
  BatchNormCache<float> cache;
  const Tensor y = batchnorm1d_train(x, state, cache);
  for (long long i = 0; i < y.size(); ++i) REQUIRE(y[i] == Approx(0.25).margin(1e-5));
}

TEST_CASE("batchnorm rejects train mode without a batch") {
  Tensor x({1, 4, 2});
  BatchNormState state(2);
  BatchNormCache<float> cache;
  REQUIRE_THROWS_AS(batchnorm1d_train(x, state, cache), ShapeError);
  REQUIRE_NOTHROW(batchnorm1d_infer(x, state));
}

TEST_CASE("linear layer") {
  Tensor x({2}, {1.0f, 2.0f});
  Tensor w({2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
  Tensor b({2}, {1.0f, 1.0f});
  const Tensor y = linear_forward(x, w, b);
  REQUIRE(y(0) == Approx(2.0));
  REQUIRE(y(1) == Approx(3.0));

  Tensor zero_b({2});
  const Tensor id = linear_forward(x, w, zero_b);
  REQUIRE(id(0) == Approx(1.0));
  REQUIRE(id(1) == Approx(2.0));

  Tensor bad({3}, {1.0f, 2.0f, 3.0f});
  REQUIRE_THROWS_AS(linear_forward(bad, w, b), ShapeError);
}

TEST_CASE("softmax is a shift-invariant probability vector") {
  Tensor uniform = Tensor::filled({5}, 0.7f);
  Tensor p = softmax_forward(uniform);
  for (int i = 0; i < 5; ++i) REQUIRE(p(i) == Approx(0.2));

  Tensor x({2}, {0.0f, std::log(3.0f)});
  p = softmax_forward(x);
  REQUIRE(p(0) == Approx(0.25).epsilon(1e-5));
  REQUIRE(p(1) == Approx(0.75).epsilon(1e-5));

  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor v({7});
    fill_uniform(v, rng, -30.0, 30.0);
    Tensor shifted = v;
    const float c = static_cast<float>(rng.uniform(-10.0, 10.0));
    for (int i = 0; i < 7; ++i) shifted(i) += c;
    const Tensor p1 = softmax_forward(v);
    const Tensor p2 = softmax_forward(shifted);
    double sum = 0.0;
    for (int i = 0; i < 7; ++i) {
      REQUIRE(p1(i) >= 0.0f);
      REQUIRE(p1(i) == Approx(p2(i)).margin(1e-6));
      sum += p1(i);
    }
    REQUIRE(sum == Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("nll loss values") {
  Tensor sure({3}, {0.0f, 1.0f, 0.0f});
  REQUIRE(nll_loss(sure, 1) == Approx(0.0).margin(1e-9));

  Tensor uniform = Tensor::filled({4}, 0.25f);
  REQUIRE(nll_loss(uniform, 2) == Approx(std::log(4.0)).epsilon(1e-6));

  Tensor zero({2}, {1.0f, 0.0f});
  const double loss = nll_loss(zero, 1);
  REQUIRE(std::isfinite(loss));
  REQUIRE(loss > 20.0);  // -ln(1e-12)

  REQUIRE_THROWS_AS(nll_loss(uniform, 4), ShapeError);
  REQUIRE_THROWS_AS(nll_loss(uniform, -1), ShapeError);
}
