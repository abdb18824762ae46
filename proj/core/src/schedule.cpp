#include "ocdd/schedule.hpp"

namespace ocdd::diffusion {

NoiseSchedule build_cosine_schedule(int T, double s) {
  if (T < 2) throw_config("build_cosine_schedule: T must be >= 2");
  if (s <= 0) throw_config("build_cosine_schedule: offset s must be > 0");

  auto f = [&](double t) {
    double a = ((t / T + s) / (1.0 + s)) * 1.5707963267948966;
    double c = std::cos(a);
    return c * c;
  };

  NoiseSchedule sch;
  sch.T = T;
  sch.s = s;
  sch.beta.assign(T + 1, 0.0);
  sch.alpha.assign(T + 1, 0.0);
  sch.alpha_bar.assign(T + 1, 0.0);
  sch.tilde_beta.assign(T + 1, 0.0);

  double f0 = f(0.0);
  sch.alpha_bar[0] = 1.0;
  double prev_raw = 1.0;
  for (int t = 1; t <= T; ++t) {
    double raw = f(static_cast<double>(t)) / f0;
    double beta = 1.0 - raw / prev_raw;
    beta = std::min(beta, 0.999);
    prev_raw = raw;
    sch.beta[t] = beta;
    sch.alpha[t] = 1.0 - beta;
    sch.alpha_bar[t] = sch.alpha_bar[t - 1] * sch.alpha[t];
    sch.tilde_beta[t] = beta * (1.0 - sch.alpha_bar[t - 1]) / (1.0 - sch.alpha_bar[t]);
  }
  return sch;
}

nd::Tensor make_denoise_mask(int O, int L, int d, const std::vector<bool>& movable,
                             int changeable) {
  if (static_cast<int>(movable.size()) != O)
    throw_shape("make_denoise_mask: movable flags do not match object count");
  if (changeable > d) throw_shape("make_denoise_mask: changeable exceeds feature width");
  nd::Tensor mask = nd::Tensor::zeros({O, L, d});
  for (int o = 0; o < O; ++o) {
    if (!movable[o]) continue;
    for (int l = 0; l < L; ++l)
      for (int fidx = 0; fidx < changeable; ++fidx) mask.at(o, l, fidx) = 1.0f;
  }
  return mask;
}

}  // namespace ocdd::diffusion
