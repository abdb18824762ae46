#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ocdd/tensor.hpp"

namespace ocdd::nd {

/// Adam with bias correction. Moments live here, aligned index-for-index
/// with the parameter list handed to adam_step. Updates are deterministic
/// given identical inputs.
struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  void init(const std::vector<Tensor*>& params) {
    step = 0;
    m.clear();
    v.clear();
    m.reserve(params.size());
    v.reserve(params.size());
    for (const Tensor* p : params) {
      m.push_back(Tensor::zeros(p->dims));
      v.push_back(Tensor::zeros(p->dims));
    }
  }
};

inline void adam_step(const std::vector<Tensor*>& params,
                      const std::vector<const Tensor*>& grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw_shape("adam_step: parameter/gradient/state counts disagree");
  state.step += 1;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    if (!p.same_dims(g) || !p.same_dims(state.m[i]))
      throw_shape("adam_step: dims mismatch at parameter " + std::to_string(i));
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (size_t j = 0; j < p.data.size(); ++j) {
      double gj = g.data[j];
      double mj = state.beta1 * m.data[j] + (1.0 - state.beta1) * gj;
      double vj = state.beta2 * v.data[j] + (1.0 - state.beta2) * gj * gj;
      m.data[j] = static_cast<float>(mj);
      v.data[j] = static_cast<float>(vj);
      double mhat = mj / bc1;
      double vhat = vj / bc2;
      p.data[j] = static_cast<float>(p.data[j] - state.lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

}  // namespace ocdd::nd
