#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "specband/adam.hpp"
#include "specband/common.hpp"
#include "specband/ops.hpp"
#include "specband/tensor.hpp"

namespace specband {

// CNN-k / CNN-kA topology: per building block conv(k=5, pad 2) -> ReLU ->
// batch norm -> max pool(2, stride 2), kernel counts 96/54/36/24, then an ANN
// head (512, 128 hidden units with ReLU). Attention modules hang off each
// block's pooled activation.
struct AttentionCnnConfig {
  int num_blocks = 3;  // 2, 3 or 4
  std::vector<int> channels = {96, 54, 36, 24};
  int conv_k = 5;
  int conv_padding = 2;
  int pool_k = 2;
  int pool_stride = 2;
  std::vector<int> hidden = {512, 128};
  int num_classes = 0;
  bool use_attention = true;
  uint64_t seed = 0;
};

// Spatial lengths after each pooling stage: L_l = floor((L_{l-1} - 2)/2) + 1
// with L_0 = b. Throws naming the stage that collapses below the pool window.
inline std::vector<int> level_lengths(const AttentionCnnConfig& cfg, int bands) {
  if (cfg.num_blocks < 2 || cfg.num_blocks > 4) {
    throw ConfigError("num_blocks must be 2, 3 or 4, got " + std::to_string(cfg.num_blocks));
  }
  if (static_cast<int>(cfg.channels.size()) < cfg.num_blocks) {
    throw ConfigError("channels list shorter than num_blocks");
  }
  if (bands < 1) throw ConfigError("band count must be positive");
  std::vector<int> lengths;
  int length = bands;
  for (int l = 1; l <= cfg.num_blocks; ++l) {
    const int after_conv = conv1d_output_length(length, cfg.conv_k, 1, cfg.conv_padding);
    if (after_conv < cfg.pool_k) {
      throw ConfigError("band count " + std::to_string(bands) + " too small: pooling stage " +
                        std::to_string(l) + " requires length >= " + std::to_string(cfg.pool_k) +
                        ", got " + std::to_string(after_conv));
    }
    length = pool1d_output_length(after_conv, cfg.pool_k, cfg.pool_stride);
    lengths.push_back(length);
  }
  return lengths;
}

template <typename T>
struct ConvBlockT {
  ParamT<T> kernels;  // [C_out, C_in, k]
  ParamT<T> bias;     // [C_out]
  BatchNormStateT<T> bn;
};

// Per-level attention module: channel-mixing estimator kernel (spatial extent
// 1 over all n feature maps), level classifier W_o and confidence gate W_c.
template <typename T>
struct AttentionBlockT {
  ParamT<T> est_kernel;  // [n]
  ParamT<T> est_bias;    // [1]
  ParamT<T> w_out;       // [n, C]
  ParamT<T> w_conf;      // [n]
};

template <typename T>
struct AttentionCnnModelT {
  AttentionCnnConfig config;
  int bands = 0;
  int flatten_size = 0;
  std::vector<int> lengths;  // L_1 .. L_k

  std::vector<ConvBlockT<T>> blocks;
  std::vector<AttentionBlockT<T>> attention;  // present iff config.use_attention
  ParamT<T> fc1_w, fc1_b;
  ParamT<T> fc2_w, fc2_b;
  ParamT<T> fc3_w, fc3_b;
  ParamT<T> net_gate;  // [flatten_size], present iff config.use_attention

  // Registration order matches declaration order; the checkpoint format and
  // the optimizer both rely on it.
  std::vector<ParamT<T>*> parameters() {
    std::vector<ParamT<T>*> out;
    for (auto& b : blocks) {
      out.push_back(&b.kernels);
      out.push_back(&b.bias);
      out.push_back(&b.bn.gamma);
      out.push_back(&b.bn.beta);
    }
    for (auto& a : attention) {
      out.push_back(&a.est_kernel);
      out.push_back(&a.est_bias);
      out.push_back(&a.w_out);
      out.push_back(&a.w_conf);
    }
    out.push_back(&fc1_w);
    out.push_back(&fc1_b);
    out.push_back(&fc2_w);
    out.push_back(&fc2_b);
    out.push_back(&fc3_w);
    out.push_back(&fc3_b);
    if (config.use_attention) out.push_back(&net_gate);
    return out;
  }

  void zero_grads() {
    for (ParamT<T>* p : parameters()) p->zero_grad();
  }
};

using AttentionCnnModel = AttentionCnnModelT<float>;

namespace detail {

template <typename T>
void init_uniform_fan_in(ParamT<T>& p, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  fill_uniform(p.value, rng, -bound, bound);
}

}  // namespace detail

// Weight init: uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), biases zero,
// gamma = 1, beta = 0, all drawn from config.seed in registration order.
template <typename T>
AttentionCnnModelT<T> build_model(const AttentionCnnConfig& config, int bands) {
  if (config.num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (config.hidden.size() != 2) throw ConfigError("head expects two hidden layers");

  AttentionCnnModelT<T> model;
  model.config = config;
  model.bands = bands;
  model.lengths = level_lengths(config, bands);

  Rng rng(mix_seed(config.seed, 0xA11CE));

  int cin = 1;
  for (int l = 0; l < config.num_blocks; ++l) {
    const int cout = config.channels[static_cast<std::size_t>(l)];
    ConvBlockT<T> block;
    block.kernels = ParamT<T>({cout, cin, config.conv_k});
    block.bias = ParamT<T>({cout});
    detail::init_uniform_fan_in(block.kernels, cin * config.conv_k, rng);
    block.bn = BatchNormStateT<T>(cout);
    model.blocks.push_back(std::move(block));
    cin = cout;
  }

  if (config.use_attention) {
    for (int l = 0; l < config.num_blocks; ++l) {
      const int n = config.channels[static_cast<std::size_t>(l)];
      AttentionBlockT<T> att;
      att.est_kernel = ParamT<T>({n});
      att.est_bias = ParamT<T>({1});
      att.w_out = ParamT<T>({n, config.num_classes});
      att.w_conf = ParamT<T>({n});
      detail::init_uniform_fan_in(att.est_kernel, n, rng);
      detail::init_uniform_fan_in(att.w_out, n, rng);
      detail::init_uniform_fan_in(att.w_conf, n, rng);
      model.attention.push_back(std::move(att));
    }
  }

  model.flatten_size = model.lengths.back() * config.channels[static_cast<std::size_t>(config.num_blocks - 1)];
  const int h1 = config.hidden[0], h2 = config.hidden[1];
  model.fc1_w = ParamT<T>({model.flatten_size, h1});
  model.fc1_b = ParamT<T>({h1});
  model.fc2_w = ParamT<T>({h1, h2});
  model.fc2_b = ParamT<T>({h2});
  model.fc3_w = ParamT<T>({h2, config.num_classes});
  model.fc3_b = ParamT<T>({config.num_classes});
  detail::init_uniform_fan_in(model.fc1_w, model.flatten_size, rng);
  detail::init_uniform_fan_in(model.fc2_w, h1, rng);
  detail::init_uniform_fan_in(model.fc3_w, h2, rng);
  if (config.use_attention) {
    model.net_gate = ParamT<T>({model.flatten_size});
    detail::init_uniform_fan_in(model.net_gate, model.flatten_size, rng);
  }
  return model;
}

// Single-sample attention ops. The batched forward computes the same
// quantities inline; tests hold the two routes together.

// Channel-mixing convolution (one kernel spanning all n feature maps, spatial
// extent 1) -> ReLU -> softmax across the L spatial entries.
template <typename T>
TensorT<T> attention_estimator(const TensorT<T>& z, const TensorT<T>& kernel, T bias) {
  if (z.rank() != 2) throw ShapeError("attention_estimator expects [L, n] feature maps");
  const int length = z.dim(0), ch = z.dim(1);
  if (kernel.size() != ch) {
    throw ShapeError("estimator kernel size " + std::to_string(kernel.size()) +
                     " does not match channel count " + std::to_string(ch));
  }
  TensorT<T> score({length});
  for (int i = 0; i < length; ++i) {
    double acc = static_cast<double>(bias);
    for (int c = 0; c < ch; ++c)
      acc += static_cast<double>(z(i, c)) * static_cast<double>(kernel[c]);
    score(i) = static_cast<T>(acc);
  }
  return softmax_forward(relu_forward(score));
}

// H[c] = (1/L) sum_i zhat[i] * Z[i][c]   (Eq.: AvgPool(zhat (*) Z))
template <typename T>
TensorT<T> hypothesis(const TensorT<T>& zhat, const TensorT<T>& z) {
  if (z.rank() != 2 || zhat.size() != z.dim(0)) {
    throw ShapeError("hypothesis: zhat length must match feature-map length");
  }
  const int length = z.dim(0), ch = z.dim(1);
  TensorT<T> h({ch});
  for (int c = 0; c < ch; ++c) {
    double acc = 0.0;
    for (int i = 0; i < length; ++i)
      acc += static_cast<double>(zhat[i]) * static_cast<double>(z(i, c));
    h(c) = static_cast<T>(acc / length);
  }
  return h;
}

// c = tanh(H . w), in (-1, 1).
template <typename T>
T confidence_gate(const TensorT<T>& h, const TensorT<T>& w) {
  if (h.size() != w.size()) throw ShapeError("confidence_gate: size mismatch");
  double acc = 0.0;
  for (long long i = 0; i < h.size(); ++i)
    acc += static_cast<double>(h[i]) * static_cast<double>(w[i]);
  return static_cast<T>(std::tanh(acc));
}

enum class Mode { kTrain, kInfer };

// Everything the backward pass (and the heatmap extractor) needs, batched.
template <typename T>
struct ForwardCacheT {
  Mode mode = Mode::kInfer;
  int batch = 0;

  std::vector<TensorT<T>> conv_in;   // input to each block's conv
  std::vector<TensorT<T>> conv_out;  // pre-ReLU
  std::vector<TensorT<T>> relu_out;
  std::vector<BatchNormCache<T>> bn_cache;
  std::vector<MaxPoolResult<T>> pooled;  // Z^l

  // attention (empty when the model has none)
  std::vector<TensorT<T>> est_score;  // [N, L_l], pre-ReLU
  std::vector<TensorT<T>> zhat;       // [N, L_l], spatial softmax
  std::vector<TensorT<T>> hypothesis; // [N, n_l]
  std::vector<TensorT<T>> o_level;    // [N, C]
  std::vector<TensorT<T>> c_level;    // [N]

  TensorT<T> flat;  // [N, F]
  TensorT<T> fc1_out, fc1_relu, fc2_out, fc2_relu;
  TensorT<T> o_net;  // [N, C]
  TensorT<T> c_net;  // [N]
  TensorT<T> probs;  // [N, C]
};

// Forward over a batch of spectra [N, b]. Train mode updates batch-norm
// running statistics; inference uses them.
template <typename T>
ForwardCacheT<T> attention_cnn_forward(AttentionCnnModelT<T>& model, const TensorT<T>& batch,
                                       Mode mode) {
  if (batch.rank() != 2) throw ShapeError("forward expects a [N, bands] batch");
  if (batch.dim(1) != model.bands) {
    throw ShapeError("pixel length " + std::to_string(batch.dim(1)) +
                     " does not match model band count " + std::to_string(model.bands));
  }
  const int n = batch.dim(0);
  const AttentionCnnConfig& cfg = model.config;
  const bool attention = cfg.use_attention;

  ForwardCacheT<T> cache;
  cache.mode = mode;
  cache.batch = n;

  TensorT<T> x({n, model.bands, 1});
  std::copy(batch.data(), batch.data() + batch.size(), x.data());

  for (int l = 0; l < cfg.num_blocks; ++l) {
    ConvBlockT<T>& block = model.blocks[static_cast<std::size_t>(l)];
    cache.conv_in.push_back(std::move(x));
    TensorT<T> conv = conv1d_forward(cache.conv_in.back(), block.kernels.value, block.bias.value,
                                     1, cfg.conv_padding);
    TensorT<T> act = relu_forward(conv);
    cache.conv_out.push_back(std::move(conv));
    cache.bn_cache.emplace_back();
    TensorT<T> bn = (mode == Mode::kTrain)
                        ? batchnorm1d_train(act, block.bn, cache.bn_cache.back())
                        : batchnorm1d_infer(act, block.bn);
    cache.relu_out.push_back(std::move(act));
    cache.pooled.push_back(maxpool1d_forward(bn, cfg.pool_k, cfg.pool_stride));
    x = cache.pooled.back().output;  // copy feeds the next block
  }

  if (attention) {
    for (int l = 0; l < cfg.num_blocks; ++l) {
      const AttentionBlockT<T>& att = model.attention[static_cast<std::size_t>(l)];
      const TensorT<T>& z = cache.pooled[static_cast<std::size_t>(l)].output;  // [N, L, C]
      const int length = z.dim(1), ch = z.dim(2);

      TensorT<T> score({n, length});
      for (int s = 0; s < n; ++s) {
        for (int i = 0; i < length; ++i) {
          double acc = static_cast<double>(att.est_bias.value[0]);
          const T* zrow = z.data() + (static_cast<std::size_t>(s) * length + i) * ch;
          for (int c = 0; c < ch; ++c)
            acc += static_cast<double>(zrow[c]) * static_cast<double>(att.est_kernel.value[c]);
          score(s, i) = static_cast<T>(acc);
        }
      }
      TensorT<T> gated = relu_forward(score);
      TensorT<T> zhat = softmax_forward(gated);  // softmax across spatial entries

      // H^l = AvgPool(zhat (*) Z^l): H[c] = (1/L) sum_i zhat[i] Z[i][c]
      TensorT<T> hyp({n, ch});
      for (int s = 0; s < n; ++s) {
        for (int c = 0; c < ch; ++c) {
          double acc = 0.0;
          for (int i = 0; i < length; ++i)
            acc += static_cast<double>(zhat(s, i)) * static_cast<double>(z(s, i, c));
          hyp(s, c) = static_cast<T>(acc / length);
        }
      }

      TensorT<T> o({n, cfg.num_classes});
      TensorT<T> conf({n});
      for (int s = 0; s < n; ++s) {
        for (int c = 0; c < cfg.num_classes; ++c) {
          double acc = 0.0;
          for (int f = 0; f < ch; ++f)
            acc += static_cast<double>(hyp(s, f)) * static_cast<double>(att.w_out.value(f, c));
          o(s, c) = static_cast<T>(acc);
        }
        double acc = 0.0;
        for (int f = 0; f < ch; ++f)
          acc += static_cast<double>(hyp(s, f)) * static_cast<double>(att.w_conf.value[f]);
        conf(s) = static_cast<T>(std::tanh(acc));
      }

      cache.est_score.push_back(std::move(score));
      cache.zhat.push_back(std::move(zhat));
      cache.hypothesis.push_back(std::move(hyp));
      cache.o_level.push_back(std::move(o));
      cache.c_level.push_back(std::move(conf));
    }
  }

  // ANN head on the flattened final feature maps.
  const TensorT<T>& last = cache.pooled.back().output;
  cache.flat = TensorT<T>({n, model.flatten_size});
  std::copy(last.data(), last.data() + last.size(), cache.flat.data());

  cache.fc1_out = linear_forward(cache.flat, model.fc1_w.value, model.fc1_b.value);
  cache.fc1_relu = relu_forward(cache.fc1_out);
  cache.fc2_out = linear_forward(cache.fc1_relu, model.fc2_w.value, model.fc2_b.value);
  cache.fc2_relu = relu_forward(cache.fc2_out);
  cache.o_net = linear_forward(cache.fc2_relu, model.fc3_w.value, model.fc3_b.value);

  TensorT<T> logits({n, cfg.num_classes});
  if (attention) {
    cache.c_net = TensorT<T>({n});
    for (int s = 0; s < n; ++s) {
      double acc = 0.0;
      for (int f = 0; f < model.flatten_size; ++f)
        acc += static_cast<double>(cache.flat(s, f)) * static_cast<double>(model.net_gate.value[f]);
      cache.c_net(s) = static_cast<T>(std::tanh(acc));
    }
    // output = softmax(o_net * c_net + sum_l c^l * o^l)
    for (int s = 0; s < n; ++s) {
      for (int c = 0; c < cfg.num_classes; ++c) {
        double acc = static_cast<double>(cache.o_net(s, c)) * static_cast<double>(cache.c_net(s));
        for (int l = 0; l < cfg.num_blocks; ++l) {
          acc += static_cast<double>(cache.c_level[static_cast<std::size_t>(l)](s)) *
                 static_cast<double>(cache.o_level[static_cast<std::size_t>(l)](s, c));
        }
        logits(s, c) = static_cast<T>(acc);
      }
    }
  } else {
    logits = cache.o_net;
  }
  cache.probs = softmax_forward(logits);
  return cache;
}

// Backpropagates d(loss)/d(probs), accumulating into every parameter's grad.
template <typename T>
void attention_cnn_backward(AttentionCnnModelT<T>& model, const ForwardCacheT<T>& cache,
                            const TensorT<T>& dprobs) {
  if (cache.mode != Mode::kTrain) throw ShapeError("backward requires a train-mode forward cache");
  const AttentionCnnConfig& cfg = model.config;
  const bool attention = cfg.use_attention;
  const int n = cache.batch;
  const int classes = cfg.num_classes;

  const TensorT<T> dlogits = softmax_backward(cache.probs, dprobs);

  TensorT<T> d_o_net({n, classes});
  TensorT<T> dflat({n, model.flatten_size});

  if (attention) {
    // o_net * c_net term
    for (int s = 0; s < n; ++s) {
      double dc = 0.0;
      for (int c = 0; c < classes; ++c) {
        d_o_net(s, c) = static_cast<T>(static_cast<double>(dlogits(s, c)) *
                                       static_cast<double>(cache.c_net(s)));
        dc += static_cast<double>(dlogits(s, c)) * static_cast<double>(cache.o_net(s, c));
      }
      // through tanh of the gate inner product
      const double dpre = dc * (1.0 - static_cast<double>(cache.c_net(s)) * static_cast<double>(cache.c_net(s)));
      for (int f = 0; f < model.flatten_size; ++f) {
        model.net_gate.grad[f] += static_cast<T>(dpre * static_cast<double>(cache.flat(s, f)));
        dflat(s, f) += static_cast<T>(dpre * static_cast<double>(model.net_gate.value[f]));
      }
    }
  } else {
    d_o_net = dlogits;
  }

  // ANN head backward
  TensorT<T> d_fc2_relu = linear_backward(cache.fc2_relu, model.fc3_w.value, d_o_net,
                                          model.fc3_w.grad, model.fc3_b.grad);
  TensorT<T> d_fc2_out = relu_backward(cache.fc2_out, d_fc2_relu);
  TensorT<T> d_fc1_relu = linear_backward(cache.fc1_relu, model.fc2_w.value, d_fc2_out,
                                          model.fc2_w.grad, model.fc2_b.grad);
  TensorT<T> d_fc1_out = relu_backward(cache.fc1_out, d_fc1_relu);
  TensorT<T> d_flat_head = linear_backward(cache.flat, model.fc1_w.value, d_fc1_out,
                                           model.fc1_w.grad, model.fc1_b.grad);
  for (long long i = 0; i < dflat.size(); ++i) dflat[i] += d_flat_head[i];

  // Gradient w.r.t. each pooled activation Z^l
  std::vector<TensorT<T>> d_pooled;
  d_pooled.reserve(static_cast<std::size_t>(cfg.num_blocks));
  for (int l = 0; l < cfg.num_blocks; ++l)
    d_pooled.emplace_back(cache.pooled[static_cast<std::size_t>(l)].output.shape());

  {  // flatten feeds the last block's pooled maps
    TensorT<T>& dz = d_pooled.back();
    std::copy(dflat.data(), dflat.data() + dflat.size(), dz.data());
  }

  if (attention) {
    for (int l = 0; l < cfg.num_blocks; ++l) {
      AttentionBlockT<T>& att = model.attention[static_cast<std::size_t>(l)];
      const TensorT<T>& z = cache.pooled[static_cast<std::size_t>(l)].output;
      const TensorT<T>& zhat = cache.zhat[static_cast<std::size_t>(l)];
      const TensorT<T>& hyp = cache.hypothesis[static_cast<std::size_t>(l)];
      const TensorT<T>& o = cache.o_level[static_cast<std::size_t>(l)];
      const TensorT<T>& conf = cache.c_level[static_cast<std::size_t>(l)];
      TensorT<T>& dz = d_pooled[static_cast<std::size_t>(l)];
      const int length = z.dim(1), ch = z.dim(2);

      TensorT<T> dhyp({n, ch});
      TensorT<T> dzhat({n, length});
      for (int s = 0; s < n; ++s) {
        // d c^l and d o^l from the fused logits
        double dc = 0.0;
        for (int c = 0; c < classes; ++c)
          dc += static_cast<double>(dlogits(s, c)) * static_cast<double>(o(s, c));
        const double dpre_conf =
            dc * (1.0 - static_cast<double>(conf(s)) * static_cast<double>(conf(s)));
        for (int f = 0; f < ch; ++f) {
          att.w_conf.grad[f] += static_cast<T>(dpre_conf * static_cast<double>(hyp(s, f)));
          dhyp(s, f) += static_cast<T>(dpre_conf * static_cast<double>(att.w_conf.value[f]));
        }
        for (int c = 0; c < classes; ++c) {
          const double do_c = static_cast<double>(dlogits(s, c)) * static_cast<double>(conf(s));
          for (int f = 0; f < ch; ++f) {
            att.w_out.grad(f, c) += static_cast<T>(do_c * static_cast<double>(hyp(s, f)));
            dhyp(s, f) += static_cast<T>(do_c * static_cast<double>(att.w_out.value(f, c)));
          }
        }

        // H[c] = (1/L) sum_i zhat[i] Z[i][c]
        const double inv_len = 1.0 / length;
        for (int i = 0; i < length; ++i) {
          double acc = 0.0;
          const T* zrow = z.data() + (static_cast<std::size_t>(s) * length + i) * ch;
          T* dzrow = dz.data() + (static_cast<std::size_t>(s) * length + i) * ch;
          for (int c = 0; c < ch; ++c) {
            const double dh = static_cast<double>(dhyp(s, c)) * inv_len;
            acc += dh * static_cast<double>(zrow[c]);
            dzrow[c] += static_cast<T>(dh * static_cast<double>(zhat(s, i)));
          }
          dzhat(s, i) += static_cast<T>(acc);
        }
      }

      // through the spatial softmax, ReLU and the channel-mixing kernel
      TensorT<T> d_gated = softmax_backward(zhat, dzhat);
      TensorT<T> d_score = relu_backward(cache.est_score[static_cast<std::size_t>(l)], d_gated);
      for (int s = 0; s < n; ++s) {
        for (int i = 0; i < length; ++i) {
          const double ds = static_cast<double>(d_score(s, i));
          if (ds == 0.0) continue;
          const T* zrow = z.data() + (static_cast<std::size_t>(s) * length + i) * ch;
          T* dzrow = dz.data() + (static_cast<std::size_t>(s) * length + i) * ch;
          for (int c = 0; c < ch; ++c) {
            att.est_kernel.grad[c] += static_cast<T>(ds * static_cast<double>(zrow[c]));
            dzrow[c] += static_cast<T>(ds * static_cast<double>(att.est_kernel.value[c]));
          }
          att.est_bias.grad[0] += static_cast<T>(ds);
        }
      }
    }
  }

  // Blocks, deepest first: maxpool -> batchnorm -> ReLU -> conv.
  TensorT<T> upstream;
  for (int l = cfg.num_blocks - 1; l >= 0; --l) {
    ConvBlockT<T>& block = model.blocks[static_cast<std::size_t>(l)];
    TensorT<T>& dz = d_pooled[static_cast<std::size_t>(l)];
    if (!upstream.empty()) {
      for (long long i = 0; i < dz.size(); ++i) dz[i] += upstream[i];
    }
    TensorT<T> d_bn = maxpool1d_backward(dz, cache.pooled[static_cast<std::size_t>(l)].argmax,
                                         cache.relu_out[static_cast<std::size_t>(l)].shape());
    TensorT<T> d_relu = batchnorm1d_backward(d_bn, block.bn, cache.bn_cache[static_cast<std::size_t>(l)]);
    TensorT<T> d_conv = relu_backward(cache.conv_out[static_cast<std::size_t>(l)], d_relu);
    upstream = conv1d_backward(cache.conv_in[static_cast<std::size_t>(l)], block.kernels.value,
                               d_conv, 1, cfg.conv_padding, block.kernels.grad, block.bias.grad);
  }
}

// Mean NLL of the batch plus full backward. Returns the loss.
template <typename T>
double attention_cnn_loss_backward(AttentionCnnModelT<T>& model, const ForwardCacheT<T>& cache,
                                   const std::vector<int>& labels) {
  const double loss = nll_loss_batch(cache.probs, labels);
  attention_cnn_backward(model, cache, nll_backward_batch(cache.probs, labels));
  return loss;
}

template <typename T>
std::vector<int> predict_labels(const TensorT<T>& probs) {
  const int n = probs.dim(0), c = probs.dim(1);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) {
    int best = 0;
    for (int i = 1; i < c; ++i)
      if (probs(s, i) > probs(s, best)) best = i;
    out[static_cast<std::size_t>(s)] = best;
  }
  return out;
}

// Per-sample view of one forward pass (feature maps, heatmaps, hypotheses,
// gates, output), as extracted from a batch cache.
template <typename T>
struct ForwardRecordT {
  std::vector<TensorT<T>> z;           // per level [L_l, n_l]
  std::vector<TensorT<T>> zhat;        // per level [L_l]
  std::vector<TensorT<T>> hypothesis;  // per level [n_l]
  std::vector<TensorT<T>> o_level;     // per level [C]
  std::vector<T> c_level;
  TensorT<T> o_net;
  T c_net = T(0);
  TensorT<T> probs;
};

template <typename T>
ForwardRecordT<T> extract_record(const ForwardCacheT<T>& cache, int sample, int num_blocks,
                                 bool attention) {
  ForwardRecordT<T> rec;
  for (int l = 0; l < num_blocks; ++l) {
    const TensorT<T>& z = cache.pooled[static_cast<std::size_t>(l)].output;
    const int length = z.dim(1), ch = z.dim(2);
    TensorT<T> zs({length, ch});
    std::copy(z.data() + static_cast<std::size_t>(sample) * length * ch,
              z.data() + static_cast<std::size_t>(sample + 1) * length * ch, zs.data());
    rec.z.push_back(std::move(zs));
    if (attention) {
      const TensorT<T>& zhat = cache.zhat[static_cast<std::size_t>(l)];
      TensorT<T> h({length});
      for (int i = 0; i < length; ++i) h(i) = zhat(sample, i);
      rec.zhat.push_back(std::move(h));
      const TensorT<T>& hyp = cache.hypothesis[static_cast<std::size_t>(l)];
      TensorT<T> hv({ch});
      for (int c = 0; c < ch; ++c) hv(c) = hyp(sample, c);
      rec.hypothesis.push_back(std::move(hv));
      const TensorT<T>& o = cache.o_level[static_cast<std::size_t>(l)];
      TensorT<T> ov({o.dim(1)});
      for (int c = 0; c < o.dim(1); ++c) ov(c) = o(sample, c);
      rec.o_level.push_back(std::move(ov));
      rec.c_level.push_back(cache.c_level[static_cast<std::size_t>(l)](sample));
    }
  }
  const int classes = cache.probs.dim(1);
  rec.o_net = TensorT<T>({classes});
  rec.probs = TensorT<T>({classes});
  for (int c = 0; c < classes; ++c) {
    rec.o_net(c) = cache.o_net(sample, c);
    rec.probs(c) = cache.probs(sample, c);
  }
  if (attention) rec.c_net = cache.c_net(sample);
  return rec;
}

}  // namespace specband
