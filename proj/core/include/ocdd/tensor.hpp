#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ocdd/common.hpp"

namespace ocdd::nd {

using Dims = std::vector<int>;

inline int64_t numel(const Dims& dims) {
  int64_t n = 1;
  for (int d : dims) n *= d;
  return n;
}

inline std::string dims_str(const Dims& dims) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
  os << "]";
  return os.str();
}

/// Dense row-major tensor. 32-bit float is the training/sampling type,
/// the double instantiation exists for gradient verification.
template <typename T>
struct TensorT {
  Dims dims;
  std::vector<T> data;
  bool requires_grad = false;

  TensorT() = default;
  TensorT(Dims d, std::vector<T> values) : dims(std::move(d)), data(std::move(values)) {
    if (numel(dims) != static_cast<int64_t>(data.size()))
      throw_shape("tensor data length " + std::to_string(data.size()) +
                  " does not match dims " + dims_str(dims));
  }

  static TensorT zeros(Dims d) {
    TensorT t;
    t.dims = std::move(d);
    t.data.assign(static_cast<size_t>(numel(t.dims)), T(0));
    return t;
  }

  static TensorT full(Dims d, T value) {
    TensorT t = zeros(std::move(d));
    for (auto& v : t.data) v = value;
    return t;
  }

  static TensorT scalar(T value) { return TensorT({1}, {value}); }

  template <typename Fn>
  static TensorT generate(Dims d, Fn&& fn) {
    TensorT t = zeros(std::move(d));
    for (auto& v : t.data) v = static_cast<T>(fn());
    return t;
  }

  int rank() const { return static_cast<int>(dims.size()); }
  int dim(int i) const { return dims[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(data.size()); }
  bool same_dims(const TensorT& other) const { return dims == other.dims; }

  /// Size of the trailing axis (1 for rank-0).
  int last_dim() const { return dims.empty() ? 1 : dims.back(); }
  /// Number of positions when the tensor is viewed as [rows, last_dim].
  int64_t rows() const { return dims.empty() ? 1 : size() / last_dim(); }

  T& at(int i) { return data[static_cast<size_t>(i)]; }
  T at(int i) const { return data[static_cast<size_t>(i)]; }
  T& at(int i, int j) { return data[static_cast<size_t>(i) * dims[1] + j]; }
  T at(int i, int j) const { return data[static_cast<size_t>(i) * dims[1] + j]; }
  T& at(int i, int j, int k) {
    return data[(static_cast<size_t>(i) * dims[1] + j) * dims[2] + k];
  }
  T at(int i, int j, int k) const {
    return data[(static_cast<size_t>(i) * dims[1] + j) * dims[2] + k];
  }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out;
    out.dims = dims;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

template <typename T>
double max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
  if (!a.same_dims(b)) throw_shape("max_abs_diff: dims differ");
  double m = 0;
  for (int64_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
  return m;
}

/// Fill with N(0,1) draws; used for noise tensors and weight init helpers.
template <typename T>
TensorT<T> randn(Dims dims, Rng& rng) {
  return TensorT<T>::generate(std::move(dims), [&]() { return rng.normal(); });
}

}  // namespace ocdd::nd
