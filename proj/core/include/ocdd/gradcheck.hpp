#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ocdd/tape.hpp"

namespace ocdd::nd {

/// Relative-error metric used by all finite-difference checks:
/// |analytic - central| / max(|analytic|, |central|, 1e-12).
inline double fd_relative_error(double analytic, double central) {
  double denom = std::max({std::abs(analytic), std::abs(central), 1e-12});
  return std::abs(analytic - central) / denom;
}

/// Central-difference oracle for a scalar-valued tensor function, 64-bit.
/// f receives a tape and the input node and must return a scalar node.
/// Checks up to max_coords coordinates (all when max_coords < 0, subsampled
/// deterministically from `seed` otherwise); returns the max relative error.
template <typename F>
double finite_diff_check(F&& f, TensorD x, double eps, int max_coords = -1,
                         uint64_t seed = 17) {
  // Analytic gradient.
  TensorD analytic;
  {
    TapeD tape;
    auto* xn = tape.input(x, /*requires_grad=*/true);
    auto* loss = f(tape, xn);
    tape.backward(loss);
    analytic = xn->has_grad() ? xn->grad : TensorD::zeros(x.dims);
  }

  auto eval = [&](const TensorD& xv) {
    TapeD tape(/*grad_enabled=*/false);
    auto* xn = tape.input(xv, false);
    auto* out = f(tape, xn);
    return static_cast<double>(out->value().data[0]);
  };

  std::vector<int64_t> coords;
  int64_t n = x.size();
  if (max_coords < 0 || max_coords >= n) {
    coords.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
  } else {
    Rng rng(seed);
    for (int i = 0; i < max_coords; ++i)
      coords.push_back(rng.uniform_int(static_cast<int>(n)));
  }

  double max_err = 0;
  for (int64_t i : coords) {
    double orig = x.data[static_cast<size_t>(i)];
    x.data[static_cast<size_t>(i)] = orig + eps;
    double fp = eval(x);
    x.data[static_cast<size_t>(i)] = orig - eps;
    double fm = eval(x);
    x.data[static_cast<size_t>(i)] = orig;
    double central = (fp - fm) / (2.0 * eps);
    max_err = std::max(max_err, fd_relative_error(analytic.data[static_cast<size_t>(i)], central));
  }
  return max_err;
}

}  // namespace ocdd::nd
