#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "specband/tensor.hpp"

namespace specband {

// Activations are [N, L, C] (rank 3) or [L, C] (rank 2, implicit N = 1).
// Accumulation is in double throughout; storage stays in T.

namespace detail {

template <typename T>
inline void split_batch(const TensorT<T>& x, int& n, int& length, int& channels) {
  if (x.rank() == 3) {
    n = x.dim(0);
    length = x.dim(1);
    channels = x.dim(2);
  } else if (x.rank() == 2) {
    n = 1;
    length = x.dim(0);
    channels = x.dim(1);
  } else {
    throw ShapeError("expected rank-2 or rank-3 activation, got " + x.shape_string());
  }
}

template <typename T>
inline std::vector<int> like_batch(const TensorT<T>& x, int length, int channels) {
  if (x.rank() == 3) return {x.dim(0), length, channels};
  return {length, channels};
}

}  // namespace detail

inline int conv1d_output_length(int length, int k, int stride, int padding) {
  return (length - k + 2 * padding) / stride + 1;
}

inline int pool1d_output_length(int length, int k, int stride) {
  return (length - k) / stride + 1;
}

// y[i][o] = bias[o] + sum_{c,j} x[i*stride - padding + j][c] * w[o][c][j],
// out-of-range input treated as zero. w is [C_out, C_in, k].
template <typename T>
TensorT<T> conv1d_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias,
                          int stride, int padding) {
  int n, length, cin;
  detail::split_batch(x, n, length, cin);
  if (w.rank() != 3) throw ShapeError("conv kernels must be [C_out, C_in, k]");
  const int cout = w.dim(0);
  const int k = w.dim(2);
  if (w.dim(1) != cin) {
    throw ShapeError("conv kernel C_in " + std::to_string(w.dim(1)) +
                     " does not match input channels " + std::to_string(cin));
  }
  if (bias.size() != cout) throw ShapeError("conv bias size mismatch");
  if (stride < 1) throw ShapeError("conv stride must be >= 1");
  if (padding < 0) throw ShapeError("conv padding must be >= 0");
  const int lout = conv1d_output_length(length, k, stride, padding);
  if (lout < 1) {
    throw ShapeError("conv output length < 1 for input length " + std::to_string(length) +
                     ", kernel " + std::to_string(k) + ", stride " + std::to_string(stride) +
                     ", padding " + std::to_string(padding));
  }

  // Kernel transposed to [j][c][o] so the innermost loop runs contiguously.
  std::vector<double> wt(static_cast<std::size_t>(k) * cin * cout);
  for (int o = 0; o < cout; ++o)
    for (int c = 0; c < cin; ++c)
      for (int j = 0; j < k; ++j)
        wt[(static_cast<std::size_t>(j) * cin + c) * cout + o] = static_cast<double>(w(o, c, j));

  TensorT<T> y(detail::like_batch(x, lout, cout));
  std::vector<double> acc(static_cast<std::size_t>(cout));
  const T* xd = x.data();
  T* yd = y.data();
  for (int s = 0; s < n; ++s) {
    const T* xs = xd + static_cast<std::size_t>(s) * length * cin;
    T* ys = yd + static_cast<std::size_t>(s) * lout * cout;
    for (int i = 0; i < lout; ++i) {
      for (int o = 0; o < cout; ++o) acc[o] = static_cast<double>(bias[o]);
      const int base = i * stride - padding;
      for (int j = 0; j < k; ++j) {
        const int t = base + j;
        if (t < 0 || t >= length) continue;
        const T* xrow = xs + static_cast<std::size_t>(t) * cin;
        const double* wrow = wt.data() + static_cast<std::size_t>(j) * cin * cout;
        for (int c = 0; c < cin; ++c) {
          const double xv = static_cast<double>(xrow[c]);
          const double* wo = wrow + static_cast<std::size_t>(c) * cout;
          for (int o = 0; o < cout; ++o) acc[o] += xv * wo[o];
        }
      }
      T* yrow = ys + static_cast<std::size_t>(i) * cout;
      for (int o = 0; o < cout; ++o) yrow[o] = static_cast<T>(acc[o]);
    }
  }
  return y;
}

// Transpose of the forward map. Returns dx; accumulates into dw, dbias.
template <typename T>
TensorT<T> conv1d_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& dy,
                           int stride, int padding, TensorT<T>& dw, TensorT<T>& dbias) {
  int n, length, cin;
  detail::split_batch(x, n, length, cin);
  const int cout = w.dim(0);
  const int k = w.dim(2);
  int ny, lout, cy;
  detail::split_batch(dy, ny, lout, cy);
  if (ny != n || cy != cout || lout != conv1d_output_length(length, k, stride, padding)) {
    throw ShapeError("conv backward: upstream gradient shape mismatch");
  }

  std::vector<double> wt(static_cast<std::size_t>(k) * cin * cout);
  for (int o = 0; o < cout; ++o)
    for (int c = 0; c < cin; ++c)
      for (int j = 0; j < k; ++j)
        wt[(static_cast<std::size_t>(j) * cin + c) * cout + o] = static_cast<double>(w(o, c, j));

  std::vector<double> dwt(static_cast<std::size_t>(k) * cin * cout, 0.0);
  std::vector<double> db(static_cast<std::size_t>(cout), 0.0);
  std::vector<double> dxrow;  // per sample, [length * cin] double accumulator
  TensorT<T> dx(x.shape());

  const T* xd = x.data();
  const T* dyd = dy.data();
  T* dxd = dx.data();
  std::vector<double> g(static_cast<std::size_t>(cout));
  for (int s = 0; s < n; ++s) {
    const T* xs = xd + static_cast<std::size_t>(s) * length * cin;
    const T* dys = dyd + static_cast<std::size_t>(s) * lout * cout;
    dxrow.assign(static_cast<std::size_t>(length) * cin, 0.0);
    for (int i = 0; i < lout; ++i) {
      const T* grow = dys + static_cast<std::size_t>(i) * cout;
      for (int o = 0; o < cout; ++o) {
        g[o] = static_cast<double>(grow[o]);
        db[o] += g[o];
      }
      const int base = i * stride - padding;
      for (int j = 0; j < k; ++j) {
        const int t = base + j;
        if (t < 0 || t >= length) continue;
        const T* xrow = xs + static_cast<std::size_t>(t) * cin;
        double* dxr = dxrow.data() + static_cast<std::size_t>(t) * cin;
        const double* wrow = wt.data() + static_cast<std::size_t>(j) * cin * cout;
        double* dwrow = dwt.data() + static_cast<std::size_t>(j) * cin * cout;
        for (int c = 0; c < cin; ++c) {
          const double xv = static_cast<double>(xrow[c]);
          const double* wo = wrow + static_cast<std::size_t>(c) * cout;
          double* dwo = dwrow + static_cast<std::size_t>(c) * cout;
          double acc = 0.0;
          for (int o = 0; o < cout; ++o) {
            acc += g[o] * wo[o];
            dwo[o] += g[o] * xv;
          }
          dxr[c] += acc;
        }
      }
    }
    T* dxs = dxd + static_cast<std::size_t>(s) * length * cin;
    for (std::size_t idx = 0; idx < dxrow.size(); ++idx) dxs[idx] = static_cast<T>(dxrow[idx]);
  }

  for (int o = 0; o < cout; ++o) {
    dbias[o] += static_cast<T>(db[o]);
    for (int c = 0; c < cin; ++c)
      for (int j = 0; j < k; ++j)
        dw(o, c, j) += static_cast<T>(dwt[(static_cast<std::size_t>(j) * cin + c) * cout + o]);
  }
  return dx;
}

template <typename T>
struct MaxPoolResult {
  TensorT<T> output;
  std::vector<int> argmax;  // input spatial index per output element
};

// Ties break toward the lowest index (strict > while scanning left to right).
template <typename T>
MaxPoolResult<T> maxpool1d_forward(const TensorT<T>& x, int k, int stride) {
  int n, length, channels;
  detail::split_batch(x, n, length, channels);
  if (k < 1 || stride < 1) throw ShapeError("maxpool window and stride must be >= 1");
  if (length < k) {
    throw ShapeError("maxpool input length " + std::to_string(length) +
                     " shorter than window " + std::to_string(k));
  }
  const int lout = pool1d_output_length(length, k, stride);
  MaxPoolResult<T> result{TensorT<T>(detail::like_batch(x, lout, channels)), {}};
  result.argmax.assign(static_cast<std::size_t>(n) * lout * channels, 0);

  const T* xd = x.data();
  T* yd = result.output.data();
  for (int s = 0; s < n; ++s) {
    const T* xs = xd + static_cast<std::size_t>(s) * length * channels;
    for (int i = 0; i < lout; ++i) {
      const int base = i * stride;
      for (int c = 0; c < channels; ++c) {
        T best = xs[static_cast<std::size_t>(base) * channels + c];
        int best_t = base;
        for (int j = 1; j < k; ++j) {
          const T v = xs[static_cast<std::size_t>(base + j) * channels + c];
          if (v > best) {
            best = v;
            best_t = base + j;
          }
        }
        const std::size_t out_idx =
            (static_cast<std::size_t>(s) * lout + i) * channels + c;
        yd[out_idx] = best;
        result.argmax[out_idx] = best_t;
      }
    }
  }
  return result;
}

// Gradient flows only to the recorded argmax positions.
template <typename T>
TensorT<T> maxpool1d_backward(const TensorT<T>& dy, const std::vector<int>& argmax,
                              const std::vector<int>& input_shape) {
  TensorT<T> dx(input_shape);
  int n, length, channels;
  detail::split_batch(dx, n, length, channels);
  int ny, lout, cy;
  detail::split_batch(dy, ny, lout, cy);
  if (ny != n || cy != channels ||
      argmax.size() != static_cast<std::size_t>(n) * lout * channels) {
    throw ShapeError("maxpool backward: shape mismatch");
  }
  const T* dyd = dy.data();
  T* dxd = dx.data();
  for (int s = 0; s < n; ++s) {
    for (int i = 0; i < lout; ++i) {
      for (int c = 0; c < channels; ++c) {
        const std::size_t out_idx = (static_cast<std::size_t>(s) * lout + i) * channels + c;
        const std::size_t in_idx =
            (static_cast<std::size_t>(s) * length + argmax[out_idx]) * channels + c;
        dxd[in_idx] += dyd[out_idx];
      }
    }
  }
  return dx;
}

// Global average over the spatial axis: [N, L, C] -> [N, C] (or [L, C] -> [C]).
template <typename T>
TensorT<T> avgpool1d_global_forward(const TensorT<T>& x) {
  int n, length, channels;
  detail::split_batch(x, n, length, channels);
  TensorT<T> y(x.rank() == 3 ? std::vector<int>{n, channels} : std::vector<int>{channels});
  const T* xd = x.data();
  T* yd = y.data();
  for (int s = 0; s < n; ++s) {
    const T* xs = xd + static_cast<std::size_t>(s) * length * channels;
    for (int c = 0; c < channels; ++c) {
      double acc = 0.0;
      for (int i = 0; i < length; ++i) acc += static_cast<double>(xs[static_cast<std::size_t>(i) * channels + c]);
      yd[static_cast<std::size_t>(s) * channels + c] = static_cast<T>(acc / length);
    }
  }
  return y;
}

template <typename T>
TensorT<T> avgpool1d_global_backward(const TensorT<T>& dy, const std::vector<int>& input_shape) {
  TensorT<T> dx(input_shape);
  int n, length, channels;
  detail::split_batch(dx, n, length, channels);
  const double inv = 1.0 / length;
  const T* dyd = dy.data();
  T* dxd = dx.data();
  for (int s = 0; s < n; ++s) {
    for (int c = 0; c < channels; ++c) {
      const T v = static_cast<T>(static_cast<double>(dyd[static_cast<std::size_t>(s) * channels + c]) * inv);
      for (int i = 0; i < length; ++i)
        dxd[(static_cast<std::size_t>(s) * length + i) * channels + c] += v;
    }
  }
  return dx;
}

template <typename T>
TensorT<T> relu_forward(const TensorT<T>& x) {
  TensorT<T> y(x.shape());
  for (long long i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  return y;
}

// Gradient at exactly zero is defined as zero.
template <typename T>
TensorT<T> relu_backward(const TensorT<T>& x, const TensorT<T>& dy) {
  if (!x.same_shape(dy)) throw ShapeError("relu backward: shape mismatch");
  TensorT<T> dx(x.shape());
  for (long long i = 0; i < x.size(); ++i) dx[i] = x[i] > T(0) ? dy[i] : T(0);
  return dx;
}

// Per-channel scale/shift with running statistics for inference.
template <typename T>
struct BatchNormStateT {
  ParamT<T> gamma;
  ParamT<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;

  BatchNormStateT() = default;
  explicit BatchNormStateT(int channels)
      : gamma({channels}),
        beta({channels}),
        running_mean(static_cast<std::size_t>(channels), T(0)),
        running_var(static_cast<std::size_t>(channels), T(1)) {
    gamma.value.fill(T(1));
  }

  int channels() const { return static_cast<int>(running_mean.size()); }
};

using BatchNormState = BatchNormStateT<float>;

template <typename T>
struct BatchNormCache {
  TensorT<T> xhat;
  std::vector<double> inv_std;
};

// Train mode: normalize per channel over the batch-and-length axes with batch
// statistics (biased variance), update running stats (unbiased variance) by
// exponential moving average. Requires a true batch (N >= 2).
template <typename T>
TensorT<T> batchnorm1d_train(const TensorT<T>& x, BatchNormStateT<T>& state,
                             BatchNormCache<T>& cache) {
  if (x.rank() != 3) throw ShapeError("batchnorm train mode expects [N, L, C]");
  const int n = x.dim(0), length = x.dim(1), channels = x.dim(2);
  if (n < 2) throw ShapeError("batchnorm train mode requires batch size >= 2");
  if (channels != state.channels()) throw ShapeError("batchnorm channel mismatch");

  const long long m = static_cast<long long>(n) * length;
  std::vector<double> mean(channels, 0.0), var(channels, 0.0);
  const T* xd = x.data();
  for (long long r = 0; r < m; ++r) {
    const T* row = xd + static_cast<std::size_t>(r) * channels;
    for (int c = 0; c < channels; ++c) mean[c] += static_cast<double>(row[c]);
  }
  for (int c = 0; c < channels; ++c) mean[c] /= static_cast<double>(m);
  for (long long r = 0; r < m; ++r) {
    const T* row = xd + static_cast<std::size_t>(r) * channels;
    for (int c = 0; c < channels; ++c) {
      const double d = static_cast<double>(row[c]) - mean[c];
      var[c] += d * d;
    }
  }
  for (int c = 0; c < channels; ++c) var[c] /= static_cast<double>(m);

  cache.xhat = TensorT<T>(x.shape());
  cache.inv_std.assign(channels, 0.0);
  for (int c = 0; c < channels; ++c) cache.inv_std[c] = 1.0 / std::sqrt(var[c] + state.epsilon);

  TensorT<T> y(x.shape());
  T* yd = y.data();
  T* xh = cache.xhat.data();
  for (long long r = 0; r < m; ++r) {
    const T* row = xd + static_cast<std::size_t>(r) * channels;
    T* yrow = yd + static_cast<std::size_t>(r) * channels;
    T* hrow = xh + static_cast<std::size_t>(r) * channels;
    for (int c = 0; c < channels; ++c) {
      const double h = (static_cast<double>(row[c]) - mean[c]) * cache.inv_std[c];
      hrow[c] = static_cast<T>(h);
      yrow[c] = static_cast<T>(h * static_cast<double>(state.gamma.value[c]) +
                               static_cast<double>(state.beta.value[c]));
    }
  }

  const double unbias = m > 1 ? static_cast<double>(m) / static_cast<double>(m - 1) : 1.0;
  for (int c = 0; c < channels; ++c) {
    state.running_mean[c] = static_cast<T>((1.0 - state.momentum) * static_cast<double>(state.running_mean[c]) +
                                           state.momentum * mean[c]);
    state.running_var[c] = static_cast<T>((1.0 - state.momentum) * static_cast<double>(state.running_var[c]) +
                                          state.momentum * var[c] * unbias);
  }
  return y;
}

template <typename T>
TensorT<T> batchnorm1d_infer(const TensorT<T>& x, const BatchNormStateT<T>& state) {
  int n, length, channels;
  detail::split_batch(x, n, length, channels);
  if (channels != state.channels()) throw ShapeError("batchnorm channel mismatch");
  TensorT<T> y(x.shape());
  const long long m = static_cast<long long>(n) * length;
  const T* xd = x.data();
  T* yd = y.data();
  std::vector<double> scale(channels), shift(channels);
  for (int c = 0; c < channels; ++c) {
    scale[c] = static_cast<double>(state.gamma.value[c]) /
               std::sqrt(static_cast<double>(state.running_var[c]) + state.epsilon);
    shift[c] = static_cast<double>(state.beta.value[c]) -
               scale[c] * static_cast<double>(state.running_mean[c]);
  }
  for (long long r = 0; r < m; ++r) {
    const T* row = xd + static_cast<std::size_t>(r) * channels;
    T* yrow = yd + static_cast<std::size_t>(r) * channels;
    for (int c = 0; c < channels; ++c)
      yrow[c] = static_cast<T>(static_cast<double>(row[c]) * scale[c] + shift[c]);
  }
  return y;
}

// Standard batch-norm gradient through the batch mean and variance.
template <typename T>
TensorT<T> batchnorm1d_backward(const TensorT<T>& dy, BatchNormStateT<T>& state,
                                const BatchNormCache<T>& cache) {
  if (!dy.same_shape(cache.xhat)) throw ShapeError("batchnorm backward: shape mismatch");
  const int channels = state.channels();
  const long long m = dy.size() / channels;

  std::vector<double> sum_dy(channels, 0.0), sum_dy_xhat(channels, 0.0);
  const T* dyd = dy.data();
  const T* xh = cache.xhat.data();
  for (long long r = 0; r < m; ++r) {
    const T* grow = dyd + static_cast<std::size_t>(r) * channels;
    const T* hrow = xh + static_cast<std::size_t>(r) * channels;
    for (int c = 0; c < channels; ++c) {
      sum_dy[c] += static_cast<double>(grow[c]);
      sum_dy_xhat[c] += static_cast<double>(grow[c]) * static_cast<double>(hrow[c]);
    }
  }
  for (int c = 0; c < channels; ++c) {
    state.gamma.grad[c] += static_cast<T>(sum_dy_xhat[c]);
    state.beta.grad[c] += static_cast<T>(sum_dy[c]);
  }

  TensorT<T> dx(dy.shape());
  T* dxd = dx.data();
  const double inv_m = 1.0 / static_cast<double>(m);
  for (long long r = 0; r < m; ++r) {
    const T* grow = dyd + static_cast<std::size_t>(r) * channels;
    const T* hrow = xh + static_cast<std::size_t>(r) * channels;
    T* dxrow = dxd + static_cast<std::size_t>(r) * channels;
    for (int c = 0; c < channels; ++c) {
      const double g = static_cast<double>(state.gamma.value[c]) * cache.inv_std[c];
      dxrow[c] = static_cast<T>(g * (static_cast<double>(grow[c]) - inv_m * sum_dy[c] -
                                     static_cast<double>(hrow[c]) * inv_m * sum_dy_xhat[c]));
    }
  }
  return dx;
}

// y = x . w + b with x [N, F] or [F], w [F, O], b [O].
template <typename T>
TensorT<T> linear_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias) {
  if (w.rank() != 2) throw ShapeError("linear weight must be [F, O]");
  const int fin = w.dim(0), fout = w.dim(1);
  const bool batched = x.rank() == 2;
  const int n = batched ? x.dim(0) : 1;
  const int xf = batched ? x.dim(1) : x.dim(0);
  if (xf != fin) {
    throw ShapeError("linear input features " + std::to_string(xf) + " do not match weight rows " +
                     std::to_string(fin));
  }
  if (bias.size() != fout) throw ShapeError("linear bias size mismatch");

  TensorT<T> y(batched ? std::vector<int>{n, fout} : std::vector<int>{fout});
  const T* xd = x.data();
  T* yd = y.data();
  std::vector<double> acc(static_cast<std::size_t>(fout));
  for (int s = 0; s < n; ++s) {
    const T* xrow = xd + static_cast<std::size_t>(s) * fin;
    for (int o = 0; o < fout; ++o) acc[o] = static_cast<double>(bias[o]);
    for (int f = 0; f < fin; ++f) {
      const double xv = static_cast<double>(xrow[f]);
      const T* wrow = w.data() + static_cast<std::size_t>(f) * fout;
      for (int o = 0; o < fout; ++o) acc[o] += xv * static_cast<double>(wrow[o]);
    }
    T* yrow = yd + static_cast<std::size_t>(s) * fout;
    for (int o = 0; o < fout; ++o) yrow[o] = static_cast<T>(acc[o]);
  }
  return y;
}

template <typename T>
TensorT<T> linear_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& dy,
                           TensorT<T>& dw, TensorT<T>& dbias) {
  const int fin = w.dim(0), fout = w.dim(1);
  const bool batched = x.rank() == 2;
  const int n = batched ? x.dim(0) : 1;
  TensorT<T> dx(x.shape());
  const T* xd = x.data();
  const T* dyd = dy.data();
  T* dxd = dx.data();
  std::vector<double> dwacc(static_cast<std::size_t>(fin) * fout, 0.0);
  std::vector<double> dbacc(static_cast<std::size_t>(fout), 0.0);
  for (int s = 0; s < n; ++s) {
    const T* xrow = xd + static_cast<std::size_t>(s) * fin;
    const T* grow = dyd + static_cast<std::size_t>(s) * fout;
    T* dxrow = dxd + static_cast<std::size_t>(s) * fin;
    for (int o = 0; o < fout; ++o) dbacc[o] += static_cast<double>(grow[o]);
    for (int f = 0; f < fin; ++f) {
      const T* wrow = w.data() + static_cast<std::size_t>(f) * fout;
      double* dwrow = dwacc.data() + static_cast<std::size_t>(f) * fout;
      const double xv = static_cast<double>(xrow[f]);
      double acc = 0.0;
      for (int o = 0; o < fout; ++o) {
        const double g = static_cast<double>(grow[o]);
        acc += g * static_cast<double>(wrow[o]);
        dwrow[o] += g * xv;
      }
      dxrow[f] = static_cast<T>(acc);
    }
  }
  for (int f = 0; f < fin; ++f)
    for (int o = 0; o < fout; ++o)
      dw(f, o) += static_cast<T>(dwacc[static_cast<std::size_t>(f) * fout + o]);
  for (int o = 0; o < fout; ++o) dbias[o] += static_cast<T>(dbacc[o]);
  return dx;
}

// Row-wise softmax with max subtraction. x is [C] or [N, C].
template <typename T>
TensorT<T> softmax_forward(const TensorT<T>& x) {
  const bool batched = x.rank() == 2;
  const int n = batched ? x.dim(0) : 1;
  const int c = batched ? x.dim(1) : x.dim(0);
  TensorT<T> y(x.shape());
  const T* xd = x.data();
  T* yd = y.data();
  for (int s = 0; s < n; ++s) {
    const T* row = xd + static_cast<std::size_t>(s) * c;
    T* out = yd + static_cast<std::size_t>(s) * c;
    double mx = static_cast<double>(row[0]);
    for (int i = 1; i < c; ++i) mx = std::max(mx, static_cast<double>(row[i]));
    double sum = 0.0;
    for (int i = 0; i < c; ++i) {
      const double e = std::exp(static_cast<double>(row[i]) - mx);
      out[i] = static_cast<T>(e);
      sum += e;
    }
    for (int i = 0; i < c; ++i) out[i] = static_cast<T>(static_cast<double>(out[i]) / sum);
  }
  return y;
}

// dx_i = y_i * (dy_i - sum_k dy_k y_k), per row.
template <typename T>
TensorT<T> softmax_backward(const TensorT<T>& y, const TensorT<T>& dy) {
  if (!y.same_shape(dy)) throw ShapeError("softmax backward: shape mismatch");
  const bool batched = y.rank() == 2;
  const int n = batched ? y.dim(0) : 1;
  const int c = batched ? y.dim(1) : y.dim(0);
  TensorT<T> dx(y.shape());
  for (int s = 0; s < n; ++s) {
    const T* yr = y.data() + static_cast<std::size_t>(s) * c;
    const T* gr = dy.data() + static_cast<std::size_t>(s) * c;
    T* dr = dx.data() + static_cast<std::size_t>(s) * c;
    double dot = 0.0;
    for (int i = 0; i < c; ++i) dot += static_cast<double>(gr[i]) * static_cast<double>(yr[i]);
    for (int i = 0; i < c; ++i)
      dr[i] = static_cast<T>(static_cast<double>(yr[i]) * (static_cast<double>(gr[i]) - dot));
  }
  return dx;
}

constexpr double kNllFloor = 1e-12;

// loss = -ln(probs[label] + floor); the floor keeps a zero probability finite.
template <typename T>
double nll_loss(const TensorT<T>& probs, int label) {
  if (probs.rank() != 1) throw ShapeError("nll_loss expects a probability vector");
  if (label < 0 || label >= probs.dim(0)) {
    throw ShapeError("nll_loss label " + std::to_string(label) + " out of range for " +
                     std::to_string(probs.dim(0)) + " classes");
  }
  return -std::log(static_cast<double>(probs[label]) + kNllFloor);
}

template <typename T>
TensorT<T> nll_backward(const TensorT<T>& probs, int label, double scale = 1.0) {
  TensorT<T> dp(probs.shape());
  dp[label] = static_cast<T>(-scale / (static_cast<double>(probs[label]) + kNllFloor));
  return dp;
}

// Mean NLL over a batch of probability rows [N, C].
template <typename T>
double nll_loss_batch(const TensorT<T>& probs, const std::vector<int>& labels) {
  if (probs.rank() != 2 || static_cast<std::size_t>(probs.dim(0)) != labels.size()) {
    throw ShapeError("nll_loss_batch: probs/labels mismatch");
  }
  const int n = probs.dim(0), c = probs.dim(1);
  double total = 0.0;
  for (int s = 0; s < n; ++s) {
    if (labels[s] < 0 || labels[s] >= c) throw ShapeError("nll_loss_batch: label out of range");
    total += -std::log(static_cast<double>(probs(s, labels[s])) + kNllFloor);
  }
  return total / n;
}

template <typename T>
TensorT<T> nll_backward_batch(const TensorT<T>& probs, const std::vector<int>& labels) {
  const int n = probs.dim(0);
  TensorT<T> dp(probs.shape());
  for (int s = 0; s < n; ++s) {
    dp(s, labels[s]) = static_cast<T>(-1.0 / (n * (static_cast<double>(probs(s, labels[s])) + kNllFloor)));
  }
  return dp;
}

}  // namespace specband
