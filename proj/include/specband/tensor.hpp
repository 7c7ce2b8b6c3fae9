#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "specband/common.hpp"

namespace specband {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense row-major tensor of rank 1..3. T is float in production; the gradient
// oracle instantiates the same code at double.
template <typename T>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(std::vector<int> shape) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(static_cast<std::size_t>(element_count()), T(0));
  }

  TensorT(std::vector<int> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (static_cast<long long>(data_.size()) != element_count()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape product " + std::to_string(element_count()));
    }
  }

  static TensorT filled(std::vector<int> shape, T value) {
    TensorT t(std::move(shape));
    for (auto& v : t.data_) v = value;
    return t;
  }

  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  const std::vector<int>& shape() const { return shape_; }
  long long size() const { return static_cast<long long>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](long long i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](long long i) const { return data_[static_cast<std::size_t>(i)]; }

  T& operator()(int i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator()(int i) const { return data_[static_cast<std::size_t>(i)]; }

  T& operator()(int i, int j) {
    return data_[static_cast<std::size_t>(i) * shape_[1] + j];
  }
  const T& operator()(int i, int j) const {
    return data_[static_cast<std::size_t>(i) * shape_[1] + j];
  }

  T& operator()(int i, int j, int k) {
    return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }
  const T& operator()(int i, int j, int k) const {
    return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }

  bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

  void fill(T value) {
    for (auto& v : data_) v = value;
  }

  bool all_finite() const {
    for (const T v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  std::string shape_string() const {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) os << ", ";
      os << shape_[i];
    }
    os << ')';
    return os.str();
  }

 private:
  void validate_shape() const {
    if (shape_.empty() || shape_.size() > 3) {
      throw ShapeError("tensor rank must be 1..3");
    }
    for (int d : shape_) {
      if (d <= 0) throw ShapeError("tensor dimensions must be positive");
    }
  }

  long long element_count() const {
    long long n = 1;
    for (int d : shape_) n *= d;
    return n;
  }

  std::vector<int> shape_;
  std::vector<T> data_;
};

using Tensor = TensorT<float>;

// Trainable parameter: value plus gradient and ADAM moment accumulators, all
// of identical shape. m/v start at zero; grads are zeroed by the optimizer
// step.
template <typename T>
struct ParamT {
  TensorT<T> value;
  TensorT<T> grad;
  TensorT<T> m;
  TensorT<T> v;

  ParamT() = default;
  explicit ParamT(std::vector<int> shape)
      : value(shape), grad(shape), m(shape), v(std::move(shape)) {}

  long long size() const { return value.size(); }

  void zero_grad() { grad.fill(T(0)); }
};

using Param = ParamT<float>;

template <typename T>
void fill_uniform(TensorT<T>& t, Rng& rng, double lo, double hi) {
  for (long long i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
}

}  // namespace specband
