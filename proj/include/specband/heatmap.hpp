#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "specband/model.hpp"

namespace specband {

// Length-b attention-score vector over spectral bands; nonnegative, sums to 1.
struct Heatmap {
  std::vector<double> scores;
  std::vector<std::string> provenance;

  int bands() const { return static_cast<int>(scores.size()); }

  double sum() const {
    double s = 0.0;
    for (double v : scores) s += v;
    return s;
  }

  void normalize() {
    const double s = sum();
    if (s <= 0.0) throw DataError("heatmap has no mass to normalize");
    for (double& v : scores) v /= s;
  }

  void validate() const {
    if (scores.empty()) throw DataError("empty heatmap");
    for (double v : scores) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw DataError("heatmap scores must be finite and >= 0");
    }
    if (std::abs(sum() - 1.0) > 1e-4) {
      throw DataError("heatmap scores must sum to 1, got " + std::to_string(sum()));
    }
  }
};

// Piecewise-linear upsampling with endpoint anchoring: source sample i sits at
// i/(L-1), target j at j/(b-1). A single source value is constant-extended.
inline std::vector<double> upsample_linear(const std::vector<double>& src, int target_len) {
  const int n = static_cast<int>(src.size());
  if (n < 1 || target_len < 1) throw DataError("upsample_linear: empty input");
  std::vector<double> out(static_cast<std::size_t>(target_len));
  if (n == 1 || target_len == 1) {
    std::fill(out.begin(), out.end(), src[0]);
    if (target_len == 1 && n > 1) out[0] = src[0];
    return out;
  }
  const double scale = static_cast<double>(n - 1) / static_cast<double>(target_len - 1);
  for (int j = 0; j < target_len; ++j) {
    const double t = j * scale;
    int i0 = static_cast<int>(t);
    if (i0 >= n - 1) i0 = n - 2;
    const double frac = t - i0;
    out[static_cast<std::size_t>(j)] =
        (1.0 - frac) * src[static_cast<std::size_t>(i0)] + frac * src[static_cast<std::size_t>(i0) + 1];
  }
  return out;
}

constexpr int kNoClassFilter = -1;

// Per sample: every level's zhat is upsampled to b bands, renormalized and the
// levels averaged uniformly; samples are then averaged uniformly. Runs in
// inference mode over mini-batches.
template <typename T>
Heatmap extract_heatmap(AttentionCnnModelT<T>& model, const TensorT<T>& samples,
                        const std::vector<int>& labels = {}, int class_filter = kNoClassFilter,
                        int batch_size = 256) {
  if (!model.config.use_attention) {
    throw ConfigError("heatmap extraction requires an attention-equipped model");
  }
  if (samples.rank() != 2) throw ShapeError("extract_heatmap expects [N, bands] samples");
  if (class_filter != kNoClassFilter && labels.size() != static_cast<std::size_t>(samples.dim(0))) {
    throw ShapeError("class filter requires one label per sample");
  }
  const int total = samples.dim(0);
  const int bands = samples.dim(1);
  const int num_blocks = model.config.num_blocks;

  std::vector<double> acc(static_cast<std::size_t>(bands), 0.0);
  long long used = 0;
  std::vector<double> level(static_cast<std::size_t>(bands));
  for (int start = 0; start < total; start += batch_size) {
    const int count = std::min(batch_size, total - start);
    TensorT<T> batch({count, bands});
    std::copy(samples.data() + static_cast<std::size_t>(start) * bands,
              samples.data() + static_cast<std::size_t>(start + count) * bands, batch.data());
    ForwardCacheT<T> cache = attention_cnn_forward(model, batch, Mode::kInfer);
    for (int s = 0; s < count; ++s) {
      if (class_filter != kNoClassFilter && labels[static_cast<std::size_t>(start + s)] != class_filter)
        continue;
      for (int l = 0; l < num_blocks; ++l) {
        const TensorT<T>& zhat = cache.zhat[static_cast<std::size_t>(l)];
        const int length = zhat.dim(1);
        std::vector<double> src(static_cast<std::size_t>(length));
        for (int i = 0; i < length; ++i) src[static_cast<std::size_t>(i)] = static_cast<double>(zhat(s, i));
        level = upsample_linear(src, bands);
        double sum = 0.0;
        for (double v : level) sum += v;
        const double w = 1.0 / (sum * num_blocks);
        for (int i = 0; i < bands; ++i) acc[static_cast<std::size_t>(i)] += level[static_cast<std::size_t>(i)] * w;
      }
      ++used;
    }
  }
  if (used == 0) throw DataError("no samples matched the heatmap class filter");

  Heatmap hm;
  hm.scores.assign(acc.begin(), acc.end());
  for (double& v : hm.scores) v /= static_cast<double>(used);
  hm.normalize();
  return hm;
}

// Uniform element-wise mean, renormalized; provenance is the union.
inline Heatmap aggregate_heatmaps(const std::vector<Heatmap>& heatmaps) {
  if (heatmaps.empty()) throw DataError("aggregate_heatmaps: empty list");
  const int bands = heatmaps.front().bands();
  for (const Heatmap& h : heatmaps) {
    if (h.bands() != bands) {
      throw DataError("aggregate_heatmaps: mixed band counts " + std::to_string(bands) + " and " +
                      std::to_string(h.bands()));
    }
  }
  Heatmap out;
  out.scores.assign(static_cast<std::size_t>(bands), 0.0);
  std::set<std::string> sources;
  for (const Heatmap& h : heatmaps) {
    for (int i = 0; i < bands; ++i) out.scores[static_cast<std::size_t>(i)] += h.scores[static_cast<std::size_t>(i)];
    sources.insert(h.provenance.begin(), h.provenance.end());
  }
  for (double& v : out.scores) v /= static_cast<double>(heatmaps.size());
  out.normalize();
  out.provenance.assign(sources.begin(), sources.end());
  return out;
}

// CSV exchange format: optional '# provenance:' comments, then a band,score
// header and one 0-indexed row per band.
inline void write_heatmap_csv(const std::string& path, const Heatmap& hm) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write heatmap to " + path);
  for (const std::string& p : hm.provenance) out << "# provenance: " << p << "\n";
  out << "band,score\n";
  out.precision(17);
  for (int i = 0; i < hm.bands(); ++i) out << i << ',' << hm.scores[static_cast<std::size_t>(i)] << "\n";
  if (!out) throw DataError("failed writing heatmap to " + path);
}

inline Heatmap read_heatmap_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open heatmap " + path);
  Heatmap hm;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.front() == '#') {
      const std::string tag = "# provenance: ";
      if (line.rfind(tag, 0) == 0) hm.provenance.push_back(line.substr(tag.size()));
      continue;
    }
    if (!header_seen) {
      if (line.rfind("band,score", 0) != 0) throw DataError(path + ": missing band,score header");
      header_seen = true;
      continue;
    }
    std::istringstream ls(line);
    std::string band_str, score_str;
    if (!std::getline(ls, band_str, ',') || !std::getline(ls, score_str)) {
      throw DataError(path + ": malformed heatmap row '" + line + "'");
    }
    const int band = std::stoi(band_str);
    if (band != hm.bands()) throw DataError(path + ": bands out of order at row " + band_str);
    hm.scores.push_back(std::stod(score_str));
  }
  hm.validate();
  hm.normalize();
  return hm;
}

}  // namespace specband
