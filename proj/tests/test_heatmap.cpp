#include <catch2/catch_amalgamated.hpp>

#include <algorithm>

#include "specband/heatmap.hpp"
#include "support/tempdir.hpp"

using namespace specband;
using Catch::Approx;

namespace {

AttentionCnnConfig heat_config(int blocks, uint64_t seed) {
  AttentionCnnConfig cfg;
  cfg.num_blocks = blocks;
  cfg.num_classes = 3;
  cfg.use_attention = true;
  cfg.hidden = {32, 16};
  cfg.seed = seed;
  return cfg;
}

Heatmap make_heatmap(std::vector<double> scores, std::string tag = {}) {
  Heatmap hm;
  hm.scores = std::move(scores);
  hm.normalize();
  if (!tag.empty()) hm.provenance = {std::move(tag)};
  return hm;
}

}  // namespace

TEST_CASE("linear upsampling anchors the endpoints") {
  // [0.2, 0.8] to length 3: midpoint interpolates to 0.5, renormalize by 1.5
  const auto up = upsample_linear({0.2, 0.8}, 3);
  REQUIRE(up[0] == Approx(0.2));
  REQUIRE(up[1] == Approx(0.5));
  REQUIRE(up[2] == Approx(0.8));
  double sum = up[0] + up[1] + up[2];
  REQUIRE(up[0] / sum == Approx(0.2 / 1.5).epsilon(1e-12));
  REQUIRE(up[1] / sum == Approx(0.5 / 1.5).epsilon(1e-12));
  REQUIRE(up[2] / sum == Approx(0.8 / 1.5).epsilon(1e-12));

  // same length: identity
  const std::vector<double> src{0.1, 0.4, 0.2, 0.3};
  const auto same = upsample_linear(src, 4);
  for (std::size_t i = 0; i < src.size(); ++i) REQUIRE(same[i] == Approx(src[i]).margin(1e-15));

  // single source value extends constantly
  const auto constant = upsample_linear({0.7}, 5);
  for (double v : constant) REQUIRE(v == Approx(0.7));
}

TEST_CASE("extracted heatmaps are normalized and match a by-hand average") {
  auto model = build_model<float>(heat_config(2, 42), 20);
  Rng rng(17);
  TensorT<float> samples({4, 20});
  fill_uniform(samples, rng, 0.0, 1.0);

  const Heatmap hm = extract_heatmap(model, samples);
  REQUIRE(hm.bands() == 20);
  REQUIRE(hm.sum() == Approx(1.0).margin(1e-6));
  for (double v : hm.scores) REQUIRE(v >= 0.0);

  // recompute from the forward cache: per sample, upsample each level's zhat
  // to b, renormalize, average levels, then average samples
  auto model_copy = model;
  auto cache = attention_cnn_forward(model_copy, samples, Mode::kInfer);
  std::vector<double> expect(20, 0.0);
  for (int s = 0; s < 4; ++s) {
    for (int l = 0; l < 2; ++l) {
      const auto& zhat = cache.zhat[static_cast<std::size_t>(l)];
      std::vector<double> src(static_cast<std::size_t>(zhat.dim(1)));
      for (int i = 0; i < zhat.dim(1); ++i) src[static_cast<std::size_t>(i)] = zhat(s, i);
      auto up = upsample_linear(src, 20);
      double sum = 0.0;
      for (double v : up) sum += v;
      for (int i = 0; i < 20; ++i) expect[static_cast<std::size_t>(i)] += up[static_cast<std::size_t>(i)] / (sum * 2 * 4);
    }
  }
  double esum = 0.0;
  for (double v : expect) esum += v;
  for (int i = 0; i < 20; ++i)
    REQUIRE(hm.scores[static_cast<std::size_t>(i)] == Approx(expect[static_cast<std::size_t>(i)] / esum).margin(1e-9));
}

TEST_CASE("sample order does not change the extracted heatmap") {
  auto model = build_model<float>(heat_config(3, 7), 24);
  Rng rng(23);
  TensorT<float> samples({5, 24});
  fill_uniform(samples, rng, 0.0, 1.0);
  TensorT<float> reversed({5, 24});
  for (int s = 0; s < 5; ++s)
    for (int b = 0; b < 24; ++b) reversed(s, b) = samples(4 - s, b);

  const Heatmap a = extract_heatmap(model, samples);
  const Heatmap b = extract_heatmap(model, reversed);
  for (int i = 0; i < 24; ++i)
    REQUIRE(a.scores[static_cast<std::size_t>(i)] == Approx(b.scores[static_cast<std::size_t>(i)]).margin(1e-12));
}

TEST_CASE("class filter averages only the matching samples") {
  auto model = build_model<float>(heat_config(2, 19), 16);
  Rng rng(29);
  TensorT<float> samples({6, 16});
  fill_uniform(samples, rng, 0.0, 1.0);
  const std::vector<int> labels{0, 1, 0, 2, 1, 0};

  const Heatmap only0 = extract_heatmap(model, samples, labels, 0);
  TensorT<float> class0({3, 16});
  int row = 0;
  for (int s = 0; s < 6; ++s) {
    if (labels[static_cast<std::size_t>(s)] != 0) continue;
    for (int b = 0; b < 16; ++b) class0(row, b) = samples(s, b);
    ++row;
  }
  const Heatmap direct = extract_heatmap(model, class0);
  for (int i = 0; i < 16; ++i)
    REQUIRE(only0.scores[static_cast<std::size_t>(i)] ==
            Approx(direct.scores[static_cast<std::size_t>(i)]).margin(1e-12));

  REQUIRE_THROWS_AS(extract_heatmap(model, samples, labels, 9), DataError);
}

TEST_CASE("attention-free models cannot produce heatmaps") {
  AttentionCnnConfig cfg = heat_config(2, 3);
  cfg.use_attention = false;
  auto model = build_model<float>(cfg, 16);
  TensorT<float> samples({2, 16});
  REQUIRE_THROWS_AS(extract_heatmap(model, samples), ConfigError);
}

TEST_CASE("aggregation: identity, symmetry, commutativity, mixed bands") {
  const Heatmap single = make_heatmap({0.1, 0.2, 0.3, 0.4}, "a");
  const Heatmap same = aggregate_heatmaps({single});
  for (int i = 0; i < 4; ++i)
    REQUIRE(same.scores[static_cast<std::size_t>(i)] == Approx(single.scores[static_cast<std::size_t>(i)]));

  const Heatmap left = make_heatmap({1.0, 0.0}, "left");
  const Heatmap right = make_heatmap({0.0, 1.0}, "right");
  const Heatmap mirrored = aggregate_heatmaps({left, right});
  REQUIRE(mirrored.scores[0] == Approx(0.5));
  REQUIRE(mirrored.scores[1] == Approx(0.5));
  REQUIRE(mirrored.provenance == std::vector<std::string>{"left", "right"});

  const Heatmap ab = aggregate_heatmaps({left, right});
  const Heatmap ba = aggregate_heatmaps({right, left});
  for (int i = 0; i < 2; ++i)
    REQUIRE(ab.scores[static_cast<std::size_t>(i)] == Approx(ba.scores[static_cast<std::size_t>(i)]));

  const Heatmap wide = make_heatmap({0.5, 0.25, 0.25});
  try {
    aggregate_heatmaps({left, wide});
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    REQUIRE(msg.find('2') != std::string::npos);
    REQUIRE(msg.find('3') != std::string::npos);
  }
}

TEST_CASE("heatmap CSV round-trips exactly") {
  testutil::TempDir dir;
  Heatmap hm = make_heatmap({0.05, 0.15, 0.3, 0.5}, "run1/cnn2a");
  const std::string path = dir.file("hm.csv");
  write_heatmap_csv(path, hm);
  const Heatmap back = read_heatmap_csv(path);
  REQUIRE(back.bands() == 4);
  for (int i = 0; i < 4; ++i)
    REQUIRE(back.scores[static_cast<std::size_t>(i)] == hm.scores[static_cast<std::size_t>(i)]);
  REQUIRE(back.provenance == hm.provenance);

  // negative scores are rejected
  std::ofstream bad(dir.file("bad.csv"));
  bad << "band,score\n0,-0.5\n1,1.5\n";
  bad.close();
  REQUIRE_THROWS_AS(read_heatmap_csv(dir.file("bad.csv")), DataError);
}
