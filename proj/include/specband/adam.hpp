#pragma once

#include <cmath>
#include <vector>

#include "specband/tensor.hpp"

namespace specband {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// One ADAM step with bias correction over every registered parameter.
// Gradients are zeroed after the step. t counts steps from 1.
template <typename T>
void adam_step(const std::vector<ParamT<T>*>& params, long t, const AdamConfig& cfg = {}) {
  if (t < 1) throw ShapeError("adam step count starts at 1");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (ParamT<T>* p : params) {
    const long long n = p->size();
    for (long long i = 0; i < n; ++i) {
      const double g = static_cast<double>(p->grad[i]);
      const double m = cfg.beta1 * static_cast<double>(p->m[i]) + (1.0 - cfg.beta1) * g;
      const double v = cfg.beta2 * static_cast<double>(p->v[i]) + (1.0 - cfg.beta2) * g * g;
      p->m[i] = static_cast<T>(m);
      p->v[i] = static_cast<T>(v);
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      p->value[i] = static_cast<T>(static_cast<double>(p->value[i]) -
                                   cfg.lr * mhat / (std::sqrt(vhat) + cfg.epsilon));
      p->grad[i] = T(0);
    }
  }
}

}  // namespace specband
