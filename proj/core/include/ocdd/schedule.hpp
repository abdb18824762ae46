#pragma once

#include <cmath>
#include <vector>

#include "ocdd/tensor.hpp"

namespace ocdd::diffusion {

/// Precomputed noise-schedule arrays over T diffusion steps, 1-based in t.
/// alpha_bar is indexed 0..T with alpha_bar[0] = 1 by convention.
struct NoiseSchedule {
  int T = 0;
  double s = 0.008;
  std::vector<double> beta;        // [T+1], entries 1..T
  std::vector<double> alpha;       // [T+1]
  std::vector<double> alpha_bar;   // [T+1], entries 0..T
  std::vector<double> tilde_beta;  // [T+1]; tilde_beta[1] == 0

  void check_t(int t) const {
    if (t < 1 || t > T)
      throw_usage("diffusion step " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
  }
};

/// Cosine schedule: alpha_bar shaped by f(t) = cos^2(((t/T + s)/(1+s)) * pi/2)
/// normalized by f(0), betas clipped to <= 0.999, alpha_bar re-derived as the
/// cumulative product so the recurrence holds exactly after clipping.
NoiseSchedule build_cosine_schedule(int T, double s = 0.008);

/// Binary mask over [O,L,d] marking the changeable features (leading
/// `changeable` entries of the feature axis) of movable objects. Everything
/// else is frozen context that every op below copies through untouched.
nd::Tensor make_denoise_mask(int O, int L, int d, const std::vector<bool>& movable,
                             int changeable = 3);

inline int64_t mask_count(const nd::Tensor& mask) {
  int64_t n = 0;
  for (float v : mask.data) n += (v != 0.0f);
  return n;
}

/// Forward noising: masked entries get sqrt(ab)*x0 + sqrt(1-ab)*eps, the rest
/// is copied from x0 unchanged.
template <typename T>
nd::TensorT<T> q_sample(const nd::TensorT<T>& x0, int t, const nd::TensorT<T>& eps,
                        const NoiseSchedule& sched, const nd::Tensor& mask) {
  sched.check_t(t);
  if (!x0.same_dims(eps) || x0.dims != mask.dims)
    throw_shape("q_sample: x0/eps/mask dims disagree");
  double ab = sched.alpha_bar[t];
  double ca = std::sqrt(ab), cb = std::sqrt(1.0 - ab);
  nd::TensorT<T> out = x0;
  for (size_t i = 0; i < out.data.size(); ++i) {
    if (mask.data[i] != 0.0f)
      out.data[i] = static_cast<T>(ca * x0.data[i] + cb * eps.data[i]);
  }
  return out;
}

/// v-parameterization target: sqrt(ab)*eps - sqrt(1-ab)*x0 on masked entries,
/// zero elsewhere.
template <typename T>
nd::TensorT<T> v_target(const nd::TensorT<T>& x0, const nd::TensorT<T>& eps, int t,
                        const NoiseSchedule& sched, const nd::Tensor& mask) {
  sched.check_t(t);
  if (!x0.same_dims(eps) || x0.dims != mask.dims)
    throw_shape("v_target: x0/eps/mask dims disagree");
  double ab = sched.alpha_bar[t];
  double ca = std::sqrt(ab), cb = std::sqrt(1.0 - ab);
  nd::TensorT<T> out = nd::TensorT<T>::zeros(x0.dims);
  for (size_t i = 0; i < out.data.size(); ++i) {
    if (mask.data[i] != 0.0f)
      out.data[i] = static_cast<T>(ca * eps.data[i] - cb * x0.data[i]);
  }
  return out;
}

/// Recover the clean-sample estimate from a v prediction:
/// sqrt(ab)*x_t - sqrt(1-ab)*v on masked entries, x_t elsewhere.
template <typename T>
nd::TensorT<T> x0_from_v(const nd::TensorT<T>& x_t, const nd::TensorT<T>& v_hat, int t,
                         const NoiseSchedule& sched, const nd::Tensor& mask) {
  sched.check_t(t);
  if (!x_t.same_dims(v_hat) || x_t.dims != mask.dims)
    throw_shape("x0_from_v: dims disagree");
  double ab = sched.alpha_bar[t];
  double ca = std::sqrt(ab), cb = std::sqrt(1.0 - ab);
  nd::TensorT<T> out = x_t;
  for (size_t i = 0; i < out.data.size(); ++i) {
    if (mask.data[i] != 0.0f)
      out.data[i] = static_cast<T>(ca * x_t.data[i] - cb * v_hat.data[i]);
  }
  return out;
}

/// One reverse step: posterior mean of x_{t-1} given (x_t, x0 estimate) plus
/// sqrt(tilde_beta)*xi noise on masked entries. xi must be zero at t = 1.
/// Unmasked entries are copied from x_t bit-exactly.
template <typename T>
nd::TensorT<T> posterior_step(const nd::TensorT<T>& x_t, const nd::TensorT<T>& xhat0, int t,
                              const NoiseSchedule& sched, const nd::Tensor& mask,
                              const nd::TensorT<T>& xi) {
  sched.check_t(t);
  if (!x_t.same_dims(xhat0) || !x_t.same_dims(xi) || x_t.dims != mask.dims)
    throw_shape("posterior_step: dims disagree");
  double ab_t = sched.alpha_bar[t];
  double ab_prev = sched.alpha_bar[t - 1];
  double beta_t = sched.beta[t];
  double alpha_t = sched.alpha[t];
  double c0 = std::sqrt(ab_prev) * beta_t / (1.0 - ab_t);
  double ct = std::sqrt(alpha_t) * (1.0 - ab_prev) / (1.0 - ab_t);
  double sigma = std::sqrt(sched.tilde_beta[t]);
  nd::TensorT<T> out = x_t;
  for (size_t i = 0; i < out.data.size(); ++i) {
    if (mask.data[i] != 0.0f)
      out.data[i] =
          static_cast<T>(c0 * xhat0.data[i] + ct * x_t.data[i] + sigma * xi.data[i]);
  }
  return out;
}

}  // namespace ocdd::diffusion
