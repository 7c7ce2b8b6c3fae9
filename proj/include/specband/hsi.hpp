#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "specband/common.hpp"
#include "specband/kv.hpp"
#include "specband/tensor.hpp"

namespace specband {

// Hyperspectral cube, row-major rows x cols x bands (band-interleaved-by-pixel).
struct HsiCube {
  int rows = 0;
  int cols = 0;
  int bands = 0;
  std::vector<float> data;

  float& at(int r, int c, int b) {
    return data[(static_cast<std::size_t>(r) * cols + c) * bands + b];
  }
  float at(int r, int c, int b) const {
    return data[(static_cast<std::size_t>(r) * cols + c) * bands + b];
  }
};

// 0 = background, 1..C = classes.
struct GroundTruth {
  int rows = 0;
  int cols = 0;
  std::vector<uint16_t> labels;

  uint16_t at(int r, int c) const { return labels[static_cast<std::size_t>(r) * cols + c]; }
};

struct LabeledPixel {
  std::vector<float> spectrum;
  int label = 0;  // 0..C-1 after background removal
};

// Balanced Monte-Carlo split for one run.
struct DatasetSplits {
  std::vector<LabeledPixel> train;
  std::vector<LabeledPixel> validation;
  std::vector<LabeledPixel> test;
  uint64_t seed = 0;
  std::vector<long> class_counts;  // original per-class pixel counts
  long per_class_used = 0;         // minority count m
};

// ---------------------------------------------------------------------------
// Cube / ground-truth I/O

inline void write_cube_header(const std::string& path, int rows, int cols, int bands) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write header " + path);
  out << "rows = " << rows << "\n"
      << "cols = " << cols << "\n"
      << "bands = " << bands << "\n"
      << "dtype = float32-le\n"
      << "layout = bip\n";
}

inline void write_cube_raw(const std::string& path, const HsiCube& cube) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write cube " + path);
  out.write(reinterpret_cast<const char*>(cube.data.data()),
            static_cast<std::streamsize>(cube.data.size() * sizeof(float)));
  if (!out) throw DataError("failed writing cube " + path);
}

// Header declares rows/cols/bands/dtype/layout; payload is raw float32 LE or
// a CSV fallback (row,col,b_0..b_{bands-1} per line, detected by extension).
inline HsiCube load_cube(const std::string& data_path, const std::string& header_path) {
  const auto kv = parse_kv_file(header_path);
  HsiCube cube;
  cube.rows = static_cast<int>(kv_long(kv, "rows", header_path));
  cube.cols = static_cast<int>(kv_long(kv, "cols", header_path));
  cube.bands = static_cast<int>(kv_long(kv, "bands", header_path));
  if (cube.rows < 1 || cube.cols < 1 || cube.bands < 1) {
    throw DataError(header_path + ": rows/cols/bands must be positive");
  }
  const std::string dtype = kv_require(kv, "dtype", header_path);
  if (dtype != "float32-le") throw DataError(header_path + ": unsupported dtype '" + dtype + "'");
  const std::string layout = kv_require(kv, "layout", header_path);
  if (layout != "bip") throw DataError(header_path + ": unsupported layout '" + layout + "'");

  const std::size_t expected =
      static_cast<std::size_t>(cube.rows) * cube.cols * cube.bands;
  cube.data.assign(expected, 0.0f);

  if (data_path.size() >= 4 && data_path.substr(data_path.size() - 4) == ".csv") {
    std::ifstream in(data_path);
    if (!in) throw DataError("cannot open cube " + data_path);
    std::vector<bool> seen(static_cast<std::size_t>(cube.rows) * cube.cols, false);
    std::string line;
    std::size_t filled = 0;
    while (std::getline(in, line)) {
      if (trim(line).empty() || line.front() == '#') continue;
      const auto fields = split_list(line, ',');
      if (static_cast<int>(fields.size()) != cube.bands + 2) {
        throw DataError(data_path + ": expected row,col plus " + std::to_string(cube.bands) +
                        " values, got " + std::to_string(fields.size()) + " fields");
      }
      const int r = std::stoi(fields[0]);
      const int c = std::stoi(fields[1]);
      if (r < 0 || r >= cube.rows || c < 0 || c >= cube.cols) {
        throw DataError(data_path + ": pixel (" + fields[0] + "," + fields[1] + ") out of range");
      }
      for (int b = 0; b < cube.bands; ++b)
        cube.at(r, c, b) = std::stof(fields[static_cast<std::size_t>(b) + 2]);
      seen[static_cast<std::size_t>(r) * cube.cols + c] = true;
      ++filled;
    }
    if (filled != seen.size()) {
      throw DataError(data_path + ": expected " + std::to_string(seen.size()) + " pixels, got " +
                      std::to_string(filled));
    }
  } else {
    std::ifstream in(data_path, std::ios::binary | std::ios::ate);
    if (!in) throw DataError("cannot open cube " + data_path);
    const auto actual = static_cast<std::size_t>(in.tellg());
    const std::size_t want = expected * sizeof(float);
    if (actual != want) {
      throw DataError(data_path + ": size mismatch, expected " + std::to_string(want) +
                      " bytes (" + std::to_string(expected) + " floats), got " +
                      std::to_string(actual) + " bytes");
    }
    in.seekg(0);
    in.read(reinterpret_cast<char*>(cube.data.data()), static_cast<std::streamsize>(want));
    if (!in) throw DataError("failed reading cube " + data_path);
  }

  for (float v : cube.data) {
    if (!std::isfinite(v)) throw DataError(data_path + ": cube contains non-finite values");
  }
  return cube;
}

inline void write_gt_raw(const std::string& path, const GroundTruth& gt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write ground truth " + path);
  out.write(reinterpret_cast<const char*>(gt.labels.data()),
            static_cast<std::streamsize>(gt.labels.size() * sizeof(uint16_t)));
  if (!out) throw DataError("failed writing ground truth " + path);
}

// Raw little-endian uint16 row-major, or CSV row,col,label (missing = background).
inline GroundTruth load_gt(const std::string& path, int rows, int cols) {
  GroundTruth gt;
  gt.rows = rows;
  gt.cols = cols;
  gt.labels.assign(static_cast<std::size_t>(rows) * cols, 0);
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".csv") {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open ground truth " + path);
    std::string line;
    while (std::getline(in, line)) {
      if (trim(line).empty() || line.front() == '#') continue;
      const auto fields = split_list(line, ',');
      if (fields.size() != 3) throw DataError(path + ": expected row,col,label rows");
      const int r = std::stoi(fields[0]);
      const int c = std::stoi(fields[1]);
      const long v = std::stol(fields[2]);
      if (r < 0 || r >= rows || c < 0 || c >= cols || v < 0 || v > 65535) {
        throw DataError(path + ": entry out of range: " + line);
      }
      gt.labels[static_cast<std::size_t>(r) * cols + c] = static_cast<uint16_t>(v);
    }
  } else {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw DataError("cannot open ground truth " + path);
    const auto actual = static_cast<std::size_t>(in.tellg());
    const std::size_t want = gt.labels.size() * sizeof(uint16_t);
    if (actual != want) {
      throw DataError(path + ": size mismatch, expected " + std::to_string(want) +
                      " bytes, got " + std::to_string(actual));
    }
    in.seekg(0);
    in.read(reinterpret_cast<char*>(gt.labels.data()), static_cast<std::streamsize>(want));
    if (!in) throw DataError("failed reading ground truth " + path);
  }
  return gt;
}

// ---------------------------------------------------------------------------
// Pixel extraction and balanced splitting

// Drops background pixels and shifts labels to 0..C-1. Scan order is
// row-major, so the pixel list is deterministic.
inline std::vector<LabeledPixel> to_pixels(const HsiCube& cube, const GroundTruth& gt) {
  if (cube.rows != gt.rows || cube.cols != gt.cols) {
    throw DataError("cube is " + std::to_string(cube.rows) + "x" + std::to_string(cube.cols) +
                    " but ground truth is " + std::to_string(gt.rows) + "x" +
                    std::to_string(gt.cols));
  }
  std::vector<LabeledPixel> pixels;
  for (int r = 0; r < cube.rows; ++r) {
    for (int c = 0; c < cube.cols; ++c) {
      const uint16_t label = gt.at(r, c);
      if (label == 0) continue;
      LabeledPixel p;
      p.label = label - 1;
      p.spectrum.resize(static_cast<std::size_t>(cube.bands));
      const float* src = cube.data.data() + (static_cast<std::size_t>(r) * cube.cols + c) * cube.bands;
      std::copy(src, src + cube.bands, p.spectrum.begin());
      pixels.push_back(std::move(p));
    }
  }
  return pixels;
}

inline std::vector<long> class_histogram(const std::vector<LabeledPixel>& pixels) {
  std::vector<long> counts;
  for (const LabeledPixel& p : pixels) {
    if (p.label >= static_cast<int>(counts.size())) counts.resize(static_cast<std::size_t>(p.label) + 1, 0);
    ++counts[static_cast<std::size_t>(p.label)];
  }
  return counts;
}

// Balance first (under-sample every class to the minority count m), then cut
// 80/10/10 per class with integer arithmetic; rounding remainders go to train.
// Each class is shuffled independently from a seed derived per class.
inline DatasetSplits balanced_split(const std::vector<LabeledPixel>& pixels, uint64_t seed) {
  DatasetSplits splits;
  splits.seed = seed;
  splits.class_counts = class_histogram(pixels);
  const int num_classes = static_cast<int>(splits.class_counts.size());
  if (num_classes < 2) throw DataError("balanced_split requires at least 2 classes");

  long m = -1;
  for (int c = 0; c < num_classes; ++c) {
    const long count = splits.class_counts[static_cast<std::size_t>(c)];
    if (count < 10) {
      throw DataError("class " + std::to_string(c + 1) + " has only " + std::to_string(count) +
                      " pixels (minimum 10)");
    }
    if (m < 0 || count < m) m = count;
  }
  splits.per_class_used = m;

  std::vector<std::vector<const LabeledPixel*>> by_class(static_cast<std::size_t>(num_classes));
  for (const LabeledPixel& p : pixels) by_class[static_cast<std::size_t>(p.label)].push_back(&p);

  const long n_train = 8 * m / 10;
  const long n_val = m / 10;
  const long n_test = m / 10;
  const long n_train_total = n_train + (m - n_train - n_val - n_test);

  for (int c = 0; c < num_classes; ++c) {
    auto& members = by_class[static_cast<std::size_t>(c)];
    Rng rng(mix_seed(seed, static_cast<uint64_t>(c)));
    rng.shuffle(members.begin(), members.end());
    long i = 0;
    for (; i < n_train_total; ++i) splits.train.push_back(*members[static_cast<std::size_t>(i)]);
    for (; i < n_train_total + n_val; ++i) splits.validation.push_back(*members[static_cast<std::size_t>(i)]);
    for (; i < n_train_total + n_val + n_test; ++i) splits.test.push_back(*members[static_cast<std::size_t>(i)]);
  }
  return splits;
}

// ---------------------------------------------------------------------------
// Band reduction

// Keeps only the selected bands, order preserved.
inline HsiCube reduce_bands(const HsiCube& cube, const std::vector<int>& selected) {
  if (selected.empty()) throw DataError("reduce_bands: empty selection");
  for (int b : selected) {
    if (b < 0 || b >= cube.bands) {
      throw DataError("reduce_bands: band " + std::to_string(b) + " outside 0.." +
                      std::to_string(cube.bands - 1));
    }
  }
  HsiCube out;
  out.rows = cube.rows;
  out.cols = cube.cols;
  out.bands = static_cast<int>(selected.size());
  out.data.resize(static_cast<std::size_t>(out.rows) * out.cols * out.bands);
  const std::size_t pixels = static_cast<std::size_t>(cube.rows) * cube.cols;
  for (std::size_t p = 0; p < pixels; ++p) {
    const float* src = cube.data.data() + p * cube.bands;
    float* dst = out.data.data() + p * out.bands;
    for (std::size_t i = 0; i < selected.size(); ++i) dst[i] = src[selected[i]];
  }
  return out;
}

inline std::vector<LabeledPixel> reduce_pixels(const std::vector<LabeledPixel>& pixels,
                                               const std::vector<int>& selected) {
  if (selected.empty()) throw DataError("reduce_pixels: empty selection");
  std::vector<LabeledPixel> out;
  out.reserve(pixels.size());
  for (const LabeledPixel& p : pixels) {
    LabeledPixel q;
    q.label = p.label;
    q.spectrum.resize(selected.size());
    for (std::size_t i = 0; i < selected.size(); ++i)
      q.spectrum[i] = p.spectrum[static_cast<std::size_t>(selected[i])];
    out.push_back(std::move(q));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic cubes with planted informative bands

// Class signal exists only at the planted bands: class c gets a level that is
// a per-band permutation of (1..C)/C there, so any single planted band
// separates all classes. Off the planted bands every class shares the same
// smooth baseline, plus N(0, sigma^2) noise everywhere.
inline double synth_baseline(int band, int bands) {
  return 0.3 + 0.2 * std::sin(2.0 * 3.14159265358979323846 * band / bands);
}

inline double synth_planted_level(int class_index, int planted_pos, int num_classes) {
  return 0.5 * (((class_index + 1 + planted_pos) % num_classes) + 1) / num_classes;
}

inline void synth_cube(int bands, int num_classes, const std::vector<int>& planted, double sigma,
                       int pixels_per_class, uint64_t seed, HsiCube& cube, GroundTruth& gt) {
  if (bands < 1 || num_classes < 2 || pixels_per_class < 1) {
    throw ConfigError("synth_cube: bands >= 1, classes >= 2, pixels_per_class >= 1 required");
  }
  std::vector<bool> is_planted(static_cast<std::size_t>(bands), false);
  for (int b : planted) {
    if (b < 0 || b >= bands) throw ConfigError("synth_cube: planted band " + std::to_string(b) + " out of range");
    if (is_planted[static_cast<std::size_t>(b)]) throw ConfigError("synth_cube: duplicate planted band " + std::to_string(b));
    is_planted[static_cast<std::size_t>(b)] = true;
  }

  cube.rows = num_classes;
  cube.cols = pixels_per_class;
  cube.bands = bands;
  cube.data.assign(static_cast<std::size_t>(num_classes) * pixels_per_class * bands, 0.0f);
  gt.rows = num_classes;
  gt.cols = pixels_per_class;
  gt.labels.assign(static_cast<std::size_t>(num_classes) * pixels_per_class, 0);

  Rng rng(mix_seed(seed, 0x5D17));
  for (int c = 0; c < num_classes; ++c) {
    for (int p = 0; p < pixels_per_class; ++p) {
      gt.labels[static_cast<std::size_t>(c) * pixels_per_class + p] = static_cast<uint16_t>(c + 1);
      float* px = cube.data.data() +
                  (static_cast<std::size_t>(c) * pixels_per_class + p) * bands;
      int planted_pos = 0;
      for (int b = 0; b < bands; ++b) {
        double v = synth_baseline(b, bands);
        if (is_planted[static_cast<std::size_t>(b)]) {
          v += synth_planted_level(c, planted_pos, num_classes);
          ++planted_pos;
        }
        if (sigma > 0.0) v += sigma * rng.normal();
        px[b] = static_cast<float>(v);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Per-band min-max scaling fitted on the training set

struct BandScaler {
  std::vector<float> lo;
  std::vector<float> span;  // max - lo; zero span maps the band to 0

  static BandScaler fit(const std::vector<LabeledPixel>& train) {
    if (train.empty()) throw DataError("BandScaler: empty training set");
    const std::size_t bands = train.front().spectrum.size();
    BandScaler s;
    s.lo.assign(bands, std::numeric_limits<float>::max());
    std::vector<float> hi(bands, std::numeric_limits<float>::lowest());
    for (const LabeledPixel& p : train) {
      for (std::size_t b = 0; b < bands; ++b) {
        s.lo[b] = std::min(s.lo[b], p.spectrum[b]);
        hi[b] = std::max(hi[b], p.spectrum[b]);
      }
    }
    s.span.resize(bands);
    for (std::size_t b = 0; b < bands; ++b) s.span[b] = hi[b] - s.lo[b];
    return s;
  }

  void apply(std::vector<LabeledPixel>& pixels) const {
    for (LabeledPixel& p : pixels) {
      for (std::size_t b = 0; b < p.spectrum.size(); ++b) {
        p.spectrum[b] = span[b] > 0.0f ? (p.spectrum[b] - lo[b]) / span[b] : 0.0f;
      }
    }
  }
};

// Pack a pixel list into the [N, bands] tensor plus label vector the network
// consumes.
template <typename T = float>
std::pair<TensorT<T>, std::vector<int>> to_tensor(const std::vector<LabeledPixel>& pixels) {
  if (pixels.empty()) throw DataError("to_tensor: empty pixel list");
  const int n = static_cast<int>(pixels.size());
  const int bands = static_cast<int>(pixels.front().spectrum.size());
  TensorT<T> x({n, bands});
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const LabeledPixel& p = pixels[static_cast<std::size_t>(i)];
    if (static_cast<int>(p.spectrum.size()) != bands) throw DataError("to_tensor: ragged spectra");
    for (int b = 0; b < bands; ++b) x(i, b) = static_cast<T>(p.spectrum[static_cast<std::size_t>(b)]);
    labels[static_cast<std::size_t>(i)] = p.label;
  }
  return {std::move(x), std::move(labels)};
}

}  // namespace specband
