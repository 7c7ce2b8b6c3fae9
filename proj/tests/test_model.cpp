#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "specband/model.hpp"
#include "support/gradcheck.hpp"

using namespace specband;
using Catch::Approx;

namespace {

AttentionCnnConfig small_config(int blocks, bool attention, uint64_t seed, int classes = 3) {
  AttentionCnnConfig cfg;
  cfg.num_blocks = blocks;
  cfg.num_classes = classes;
  cfg.use_attention = attention;
  cfg.seed = seed;
  return cfg;
}

template <typename T>
TensorT<T> random_batch(int n, int bands, Rng& rng) {
  TensorT<T> x({n, bands});
  fill_uniform(x, rng, 0.0, 1.0);
  return x;
}

}  // namespace

TEST_CASE("level lengths follow the pooled size law") {
  REQUIRE(level_lengths(small_config(3, true, 0), 103) == std::vector<int>{51, 25, 12});
  REQUIRE(level_lengths(small_config(2, true, 0), 204) == std::vector<int>{102, 51});
  REQUIRE(level_lengths(small_config(2, true, 0), 103) == std::vector<int>{51, 25});
}

TEST_CASE("too-small band counts are rejected naming the stage") {
  try {
    level_lengths(small_config(4, true, 0), 4);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    REQUIRE(std::string(e.what()).find("stage 3") != std::string::npos);
  }
  REQUIRE_THROWS_AS(build_model<float>(small_config(4, true, 0), 4), ConfigError);
  REQUIRE_NOTHROW(build_model<float>(small_config(4, true, 0), 16));
}

TEST_CASE("first building block maps b x 1 to the Table dimensions") {
  for (int b : {103, 204}) {
    auto model = build_model<float>(small_config(2, true, 1), b);
    Rng rng(9);
    TensorT<float> x = random_batch<float>(2, b, rng);
    auto cache = attention_cnn_forward(model, x, Mode::kInfer);
    // after BB1: (floor((b-2)/2)+1) x 96
    REQUIRE(cache.pooled[0].output.dim(1) == (b - 2) / 2 + 1);
    REQUIRE(cache.pooled[0].output.dim(2) == 96);
    REQUIRE(cache.conv_out[0].dim(1) == b);  // step A preserves length
    REQUIRE(cache.conv_out[0].dim(2) == 96);
    // attention estimator output is L x 1 per sample (step C)
    REQUIRE(cache.zhat[0].dim(1) == (b - 2) / 2 + 1);
  }
}

TEST_CASE("outputs and heatmaps are probability vectors for random weights") {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const uint64_t seed = rng.next();
    const int blocks = 2 + static_cast<int>(rng.uniform_index(3));
    const int bands = 20 + static_cast<int>(rng.uniform_index(40));
    auto model = build_model<float>(small_config(blocks, true, seed, 4), bands);
    TensorT<float> x = random_batch<float>(3, bands, rng);
    auto cache = attention_cnn_forward(model, x, Mode::kInfer);
    for (int s = 0; s < 3; ++s) {
      double sum = 0.0;
      for (int c = 0; c < 4; ++c) {
        REQUIRE(cache.probs(s, c) >= 0.0f);
        sum += cache.probs(s, c);
      }
      REQUIRE(sum == Approx(1.0).margin(1e-6));
      for (int l = 0; l < blocks; ++l) {
        const auto& zhat = cache.zhat[static_cast<std::size_t>(l)];
        double zsum = 0.0;
        for (int i = 0; i < zhat.dim(1); ++i) {
          REQUIRE(zhat(s, i) >= 0.0f);
          zsum += zhat(s, i);
        }
        REQUIRE(zsum == Approx(1.0).margin(1e-6));
      }
    }
  }
}

TEST_CASE("single-sample attention ops agree with the batched forward") {
  Rng rng(31);
  auto model = build_model<float>(small_config(2, true, 77), 24);
  TensorT<float> x = random_batch<float>(3, 24, rng);
  auto cache = attention_cnn_forward(model, x, Mode::kInfer);
  for (int s = 0; s < 3; ++s) {
    auto rec = extract_record(cache, s, 2, true);
    for (int l = 0; l < 2; ++l) {
      const auto& att = model.attention[static_cast<std::size_t>(l)];
      const TensorT<float> zhat =
          attention_estimator(rec.z[static_cast<std::size_t>(l)], att.est_kernel.value,
                              att.est_bias.value[0]);
      for (int i = 0; i < zhat.dim(0); ++i)
        REQUIRE(zhat(i) == Approx(rec.zhat[static_cast<std::size_t>(l)](i)).margin(1e-6));
      const TensorT<float> h = hypothesis(rec.zhat[static_cast<std::size_t>(l)],
                                          rec.z[static_cast<std::size_t>(l)]);
      for (int c = 0; c < h.dim(0); ++c)
        REQUIRE(h(c) == Approx(rec.hypothesis[static_cast<std::size_t>(l)](c)).margin(1e-6));
      const float conf = confidence_gate(h, att.w_conf.value);
      REQUIRE(conf == Approx(rec.c_level[static_cast<std::size_t>(l)]).margin(1e-6));
    }
  }
}

TEST_CASE("attention estimator saturation and symmetry") {
  // all-equal pre-softmax scores -> uniform heatmap
  TensorT<float> z = TensorT<float>::filled({5, 2}, 0.5f);
  TensorT<float> kernel({2}, {1.0f, 1.0f});
  TensorT<float> zhat = attention_estimator(z, kernel, 0.0f);
  for (int i = 0; i < 5; ++i) REQUIRE(zhat(i) == Approx(0.2));

  // one dominant score -> near one-hot
  TensorT<float> z2({4, 1}, {0.0f, 0.0f, 40.0f, 0.0f});
  TensorT<float> k1({1}, {1.0f});
  zhat = attention_estimator(z2, k1, 0.0f);
  REQUIRE(zhat(2) == Approx(1.0).margin(1e-6));
}

TEST_CASE("hypothesis hand cases") {
  // uniform zhat: H = column means / L
  TensorT<float> z({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
  TensorT<float> uniform({2}, {0.5f, 0.5f});
  TensorT<float> h = hypothesis(uniform, z);
  REQUIRE(h(0) == Approx((0.5 * 1 + 0.5 * 3) / 2.0));
  REQUIRE(h(1) == Approx((0.5 * 2 + 0.5 * 4) / 2.0));

  // one-hot zhat at i*: H[c] = Z[i*][c] / L
  TensorT<float> onehot({2}, {0.0f, 1.0f});
  h = hypothesis(onehot, z);
  REQUIRE(h(0) == Approx(3.0 / 2.0));
  REQUIRE(h(1) == Approx(4.0 / 2.0));

  // L=2, n=1, zhat=[0.25, 0.75], Z=[[4],[8]] -> H = 3.5
  TensorT<float> z1({2, 1}, {4.0f, 8.0f});
  TensorT<float> weights({2}, {0.25f, 0.75f});
  h = hypothesis(weights, z1);
  REQUIRE(h(0) == Approx(3.5));
}

TEST_CASE("confidence gate is tanh of the inner product") {
  TensorT<float> h({2}, {1.0f, -1.0f});
  TensorT<float> w({2}, {1.0f, 1.0f});
  REQUIRE(confidence_gate(h, w) == Approx(0.0).margin(1e-7));

  TensorT<float> w2({2}, {1.0f, 0.0f});
  REQUIRE(confidence_gate(h, w2) == Approx(std::tanh(1.0)).epsilon(1e-5));
  REQUIRE(std::abs(confidence_gate(h, w2)) < 1.0f);

  TensorT<float> big({2}, {500.0f, 0.0f});
  REQUIRE(confidence_gate(big, w2) == Approx(1.0).margin(1e-6));
}

TEST_CASE("plain model equals the softmaxed ANN head of its attention twin") {
  // conv/bn draws precede the attention draws, so the feature extractor of a
  // plain model seeded identically matches; the head params are copied over.
  auto attention_model = build_model<float>(small_config(2, true, 123), 20);
  auto plain = build_model<float>(small_config(2, false, 123), 20);
  for (int l = 0; l < 2; ++l) {
    plain.blocks[l].kernels.value = attention_model.blocks[l].kernels.value;
    plain.blocks[l].bias.value = attention_model.blocks[l].bias.value;
    plain.blocks[l].bn = attention_model.blocks[l].bn;
  }
  plain.fc1_w.value = attention_model.fc1_w.value;
  plain.fc1_b.value = attention_model.fc1_b.value;
  plain.fc2_w.value = attention_model.fc2_w.value;
  plain.fc2_b.value = attention_model.fc2_b.value;
  plain.fc3_w.value = attention_model.fc3_w.value;
  plain.fc3_b.value = attention_model.fc3_b.value;

  Rng rng(55);
  TensorT<float> x = random_batch<float>(4, 20, rng);
  auto att_cache = attention_cnn_forward(attention_model, x, Mode::kInfer);
  auto plain_cache = attention_cnn_forward(plain, x, Mode::kInfer);

  REQUIRE(plain_cache.zhat.empty());
  REQUIRE(plain_cache.c_level.empty());
  const TensorT<float> expected = softmax_forward(att_cache.o_net);
  for (long long i = 0; i < expected.size(); ++i) {
    REQUIRE(plain_cache.probs[i] == expected[i]);
  }

  // changing attention parameters cannot move the plain model's output
  for (auto& a : attention_model.attention) a.w_out.value.fill(9.0f);
  auto plain_again = attention_cnn_forward(plain, x, Mode::kInfer);
  for (long long i = 0; i < expected.size(); ++i) REQUIRE(plain_again.probs[i] == plain_cache.probs[i]);
}

TEST_CASE("identical seeds give identical parameters") {
  auto a = build_model<float>(small_config(3, true, 9), 40);
  auto b = build_model<float>(small_config(3, true, 9), 40);
  auto pa = a.parameters();
  auto pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i]->value.storage() == pb[i]->value.storage());
  }
}

TEST_CASE("band-count mismatch is rejected") {
  auto model = build_model<float>(small_config(2, true, 1), 16);
  TensorT<float> x({2, 17});
  REQUIRE_THROWS_AS(attention_cnn_forward(model, x, Mode::kInfer), ShapeError);
}

TEST_CASE("full attention network gradient matches finite differences") {
  // b=16, C=3, 2 blocks, batch=2, mean NLL loss, double precision
  AttentionCnnConfig cfg = small_config(2, true, 321);
  auto model = build_model<double>(cfg, 16);
  Rng rng(77);
  TensorT<double> x = random_batch<double>(2, 16, rng);
  const std::vector<int> labels{1, 2};

  model.zero_grads();
  auto cache = attention_cnn_forward(model, x, Mode::kTrain);
  attention_cnn_loss_backward(model, cache, labels);

  const auto loss = [&] {
    AttentionCnnModelT<double> probe = model;
    auto c = attention_cnn_forward(probe, x, Mode::kTrain);
    return nll_loss_batch(c.probs, labels);
  };

  // h = 1e-5: a 1e-3 perturbation through two ReLU/maxpool stages crosses
  // kinks for many coordinates; the smaller step stays in one linear region.
  Rng pick(88);
  for (ParamT<double>* p : model.parameters()) {
    const auto rep = gradcheck::check_tensor_sampled(p->value, p->grad, loss, 1e-3, 40, pick, 1e-5);
    INFO("param block size " << p->size() << " worst rel " << rep.worst_rel << " analytic "
                             << rep.worst_analytic << " numeric " << rep.worst_numeric);
    REQUIRE(rep.ok);
  }
}

TEST_CASE("attention estimator parameters pass tight finite differences") {
  AttentionCnnConfig cfg = small_config(2, true, 654);
  auto model = build_model<double>(cfg, 12);
  Rng rng(99);
  TensorT<double> x = random_batch<double>(2, 12, rng);
  const std::vector<int> labels{0, 2};

  model.zero_grads();
  auto cache = attention_cnn_forward(model, x, Mode::kTrain);
  attention_cnn_loss_backward(model, cache, labels);

  const auto loss = [&] {
    AttentionCnnModelT<double> probe = model;
    auto c = attention_cnn_forward(probe, x, Mode::kTrain);
    return nll_loss_batch(c.probs, labels);
  };

  for (auto& att : model.attention) {
    auto rep = gradcheck::check_tensor(att.est_kernel.value, att.est_kernel.grad, loss, 1e-4, 1e-5);
    INFO("est_kernel worst rel " << rep.worst_rel);
    REQUIRE(rep.ok);
    rep = gradcheck::check_tensor(att.est_bias.value, att.est_bias.grad, loss, 1e-4, 1e-5);
    REQUIRE(rep.ok);
    rep = gradcheck::check_tensor(att.w_conf.value, att.w_conf.grad, loss, 1e-4, 1e-5);
    REQUIRE(rep.ok);
  }
}
