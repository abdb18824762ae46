#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "ocdd/schedule.hpp"
#include "ocdd/tape.hpp"
#include "ocdd/tensor.hpp"

namespace ocdd::anchor {

inline constexpr int kChangeable = 3;  // x, y, rotation

/// One required state: object `object` must pass through `values` (the
/// changeable features, normalized units) at trajectory step `step`.
struct Condition {
  int object = 0;
  int step = 0;
  std::vector<float> values;  // length kChangeable
};

struct ConditionSet {
  std::vector<Condition> entries;

  bool empty() const { return entries.empty(); }

  /// at most one entry per (o, l); steps in range; movable targets; finite values.
  void validate(int O, int L, const std::vector<bool>& movable) const {
    for (const auto& c : entries) {
      if (c.object < 0 || c.object >= O)
        throw_usage("condition references object " + std::to_string(c.object) +
                    " outside [0, " + std::to_string(O - 1) + "]");
      if (c.step < 0 || c.step >= L)
        throw_usage("condition step " + std::to_string(c.step) + " outside [0, " +
                    std::to_string(L - 1) + "]");
      if (!movable[c.object])
        throw_usage("condition on non-movable object " + std::to_string(c.object));
      if (static_cast<int>(c.values.size()) != kChangeable)
        throw_usage("condition values must have length " + std::to_string(kChangeable));
      for (float v : c.values)
        if (!std::isfinite(v)) throw_usage("condition value not finite");
      for (const auto& other : entries) {
        if (&other != &c && other.object == c.object && other.step == c.step)
          throw_usage("duplicate condition at (o=" + std::to_string(c.object) +
                      ", l=" + std::to_string(c.step) + ")");
      }
    }
  }
};

/// Per-object, per-step shift on changeable features. Piecewise linear in l
/// between conditioned steps, constant before the first and after the last,
/// zero for unconditioned objects.
struct ShiftField {
  nd::Tensor S;  // [O, L, kChangeable]
};

namespace detail {

/// Interpolation weights of each condition of one object, per trajectory
/// step: S[l] = sum_i w[i](l) * delta[i]. Weights depend only on the
/// condition steps, so anchoring is affine in the prediction.
struct ObjectPlan {
  std::vector<int> cond_indices;  // indices into ConditionSet, sorted by step
  std::vector<int> steps;

  // w(l) has at most two nonzero entries: (i0, 1-w) and (i1, w).
  void weights_at(int l, int& i0, int& i1, double& w) const {
    int n = static_cast<int>(steps.size());
    if (l <= steps[0]) {
      i0 = i1 = 0;
      w = 0.0;
      return;
    }
    if (l >= steps[n - 1]) {
      i0 = i1 = n - 1;
      w = 0.0;
      return;
    }
    int hi = 1;
    while (steps[hi] < l) ++hi;
    i0 = hi - 1;
    i1 = hi;
    w = static_cast<double>(l - steps[i0]) / static_cast<double>(steps[i1] - steps[i0]);
  }
};

inline std::vector<ObjectPlan> build_plans(int O, const ConditionSet& cond) {
  std::vector<ObjectPlan> plans(O);
  for (size_t i = 0; i < cond.entries.size(); ++i)
    plans[cond.entries[i].object].cond_indices.push_back(static_cast<int>(i));
  for (auto& p : plans) {
    std::sort(p.cond_indices.begin(), p.cond_indices.end(), [&](int a, int b) {
      return cond.entries[a].step < cond.entries[b].step;
    });
    for (int ci : p.cond_indices) p.steps.push_back(cond.entries[ci].step);
  }
  return plans;
}

}  // namespace detail

/// delta_i = condition value - prediction at the conditioned step; the shift
/// moves the prediction onto the condition exactly.
inline ShiftField compute_shift_field(const nd::Tensor& xhat0, const ConditionSet& cond,
                                      const std::vector<bool>& movable) {
  if (xhat0.rank() != 3) throw_shape("compute_shift_field: expected [O,L,d]");
  int O = xhat0.dim(0), L = xhat0.dim(1);
  cond.validate(O, L, movable);
  ShiftField field{nd::Tensor::zeros({O, L, kChangeable})};
  auto plans = detail::build_plans(O, cond);
  for (int o = 0; o < O; ++o) {
    const auto& plan = plans[o];
    if (plan.steps.empty()) continue;
    std::vector<std::array<double, kChangeable>> delta(plan.steps.size());
    for (size_t i = 0; i < plan.cond_indices.size(); ++i) {
      const auto& c = cond.entries[plan.cond_indices[i]];
      for (int fidx = 0; fidx < kChangeable; ++fidx)
        delta[i][fidx] = static_cast<double>(c.values[fidx]) - xhat0.at(o, c.step, fidx);
    }
    for (int l = 0; l < L; ++l) {
      int i0, i1;
      double w;
      plan.weights_at(l, i0, i1, w);
      for (int fidx = 0; fidx < kChangeable; ++fidx)
        field.S.at(o, l, fidx) =
            static_cast<float>((1.0 - w) * delta[i0][fidx] + w * delta[i1][fidx]);
    }
  }
  return field;
}

/// Shifted prediction; every conditioned entry equals its condition exactly,
/// objects without conditions are untouched.
inline nd::Tensor apply_anchor(const nd::Tensor& xhat0, const ConditionSet& cond,
                               const std::vector<bool>& movable) {
  if (cond.empty()) return xhat0;
  ShiftField field = compute_shift_field(xhat0, cond, movable);
  nd::Tensor out = xhat0;
  int O = xhat0.dim(0), L = xhat0.dim(1);
  for (int o = 0; o < O; ++o)
    for (int l = 0; l < L; ++l)
      for (int fidx = 0; fidx < kChangeable; ++fidx)
        out.at(o, l, fidx) += field.S.at(o, l, fidx);
  // Conditioned entries are pinned exactly rather than left to fp roundoff.
  for (const auto& c : cond.entries)
    for (int fidx = 0; fidx < kChangeable; ++fidx)
      out.at(c.object, c.step, fidx) = c.values[fidx];
  return out;
}

/// Differentiable anchoring as a tape op. Affine in xhat0:
///   out[o,l,f] = x[o,l,f] + sum_i w_i(l) * (c_i[f] - x[o,l_i,f]).
template <typename T>
nd::TapeNode<T>* apply_anchor_op(nd::TapeT<T>& tape, nd::TapeNode<T>* xhat0,
                                 const ConditionSet& cond, const std::vector<bool>& movable) {
  if (cond.empty()) return xhat0;
  const auto& xv = xhat0->value();
  if (xv.rank() != 3) throw_shape("apply_anchor_op: expected [O,L,d]");
  int O = xv.dim(0), L = xv.dim(1);
  cond.validate(O, L, movable);
  auto plans = detail::build_plans(O, cond);

  nd::TensorT<T> out = xv;
  for (int o = 0; o < O; ++o) {
    const auto& plan = plans[o];
    if (plan.steps.empty()) continue;
    for (int l = 0; l < L; ++l) {
      int i0, i1;
      double w;
      plan.weights_at(l, i0, i1, w);
      const auto& ca = cond.entries[plan.cond_indices[i0]];
      const auto& cb = cond.entries[plan.cond_indices[i1]];
      for (int fidx = 0; fidx < kChangeable; ++fidx) {
        double da = static_cast<double>(ca.values[fidx]) - xv.at(o, ca.step, fidx);
        double db = static_cast<double>(cb.values[fidx]) - xv.at(o, cb.step, fidx);
        out.at(o, l, fidx) = static_cast<T>(xv.at(o, l, fidx) + (1.0 - w) * da + w * db);
      }
    }
  }

  return tape.make_custom(std::move(out), {xhat0}, [xhat0, plans, cond, O, L](
                                                       nd::TapeNode<T>* onode) {
    nd::TapeT<T>::ensure_grad(xhat0);
    auto& gx = xhat0->grad;
    const auto& g = onode->grad;
    // Identity part of the affine map, all entries.
    for (size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i];
    // Condition pulls: the shift reads the prediction at conditioned steps.
    for (int o = 0; o < O; ++o) {
      const auto& plan = plans[o];
      if (plan.steps.empty()) continue;
      for (int l = 0; l < L; ++l) {
        int i0, i1;
        double w;
        plan.weights_at(l, i0, i1, w);
        int s0 = cond.entries[plan.cond_indices[i0]].step;
        int s1 = cond.entries[plan.cond_indices[i1]].step;
        for (int fidx = 0; fidx < kChangeable; ++fidx) {
          T gv = g.at(o, l, fidx);
          gx.at(o, s0, fidx) -= static_cast<T>((1.0 - w) * gv);
          gx.at(o, s1, fidx) -= static_cast<T>(w * gv);
        }
      }
    }
  });
}

/// Mean squared error over masked entries only.
template <typename T>
nd::TapeNode<T>* masked_mse_op(nd::TapeT<T>& tape, nd::TapeNode<T>* a, nd::TapeNode<T>* b,
                               nd::TapeNode<T>* mask, int64_t count) {
  if (count <= 0) throw_usage("masked mse: empty mask");
  auto* d = tape.sub(a, b);
  auto* sq = tape.mul(d, d);
  auto* masked = tape.mul(sq, mask);
  return tape.scale(tape.sum_all(masked), 1.0 / static_cast<double>(count));
}

/// The two-term anchored training loss:
///   MSE(xhat0, xhat0_shifted) + MSE(xhat0_shifted, x0_true),
/// both averaged over masked entries. Returns (loss, term1, term2) nodes.
template <typename T>
struct AnchoredLoss {
  nd::TapeNode<T>* loss;
  nd::TapeNode<T>* term1;
  nd::TapeNode<T>* term2;
};

template <typename T>
AnchoredLoss<T> anchored_loss_op(nd::TapeT<T>& tape, nd::TapeNode<T>* xhat0,
                                 nd::TapeNode<T>* xhat0_shifted, nd::TapeNode<T>* x0_true,
                                 nd::TapeNode<T>* mask, int64_t mask_entries) {
  if (mask_entries <= 0) throw_usage("anchored_loss: empty mask");
  auto* term1 = masked_mse_op(tape, xhat0, xhat0_shifted, mask, mask_entries);
  auto* term2 = masked_mse_op(tape, xhat0_shifted, x0_true, mask, mask_entries);
  return {tape.add(term1, term2), term1, term2};
}

/// Plain evaluation used by tests; mirrors anchored_loss_op.
inline double anchored_loss(const nd::Tensor& xhat0, const nd::Tensor& x0_true,
                            const ConditionSet& cond, const std::vector<bool>& movable,
                            const nd::Tensor& mask, double* term1_out = nullptr,
                            double* term2_out = nullptr) {
  int64_t count = diffusion::mask_count(mask);
  if (count == 0) throw_usage("anchored_loss: empty mask");
  nd::Tensor shifted = apply_anchor(xhat0, cond, movable);
  double t1 = 0, t2 = 0;
  for (size_t i = 0; i < mask.data.size(); ++i) {
    if (mask.data[i] == 0.0f) continue;
    double d1 = static_cast<double>(xhat0.data[i]) - shifted.data[i];
    double d2 = static_cast<double>(shifted.data[i]) - x0_true.data[i];
    t1 += d1 * d1;
    t2 += d2 * d2;
  }
  t1 /= static_cast<double>(count);
  t2 /= static_cast<double>(count);
  if (term1_out) *term1_out = t1;
  if (term2_out) *term2_out = t2;
  return t1 + t2;
}

}  // namespace ocdd::anchor
