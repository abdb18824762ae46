#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <deque>
#include <functional>
#include <initializer_list>
#include <utility>
#include <vector>

#include "ocdd/tensor.hpp"

namespace ocdd::nd {

enum class OpKind {
  leaf,
  add, sub, mul, scale, one_minus,
  mish, clamp01, softmax,
  affine, conv1d, group_norm,
  attn_scores, attn_mix,
  concat, slice, expand_feature,
  merge_objects, split_objects, upsample2,
  add_rowvec, sum_all,
  custom,
};

/// One recorded value in the computation graph. Parameters enter as external
/// views (no copy); intermediates own their storage. The gradient accumulator
/// is allocated on first use and always matches the value dims.
template <typename T>
struct TapeNode {
  OpKind op = OpKind::leaf;
  bool needs_grad = false;
  bool is_leaf = true;
  TensorT<T> owned;
  const TensorT<T>* ext = nullptr;
  TensorT<T> grad;

  const TensorT<T>& value() const { return ext ? *ext : owned; }
  bool has_grad() const { return !grad.data.empty(); }
};

/// Reverse-mode tape. Nodes are appended in forward execution order and the
/// backward sweep replays closures in reverse. A tape is owned by exactly one
/// execution context; parameters may be shared read-only across tapes.
template <typename T>
class TapeT {
 public:
  using Node = TapeNode<T>;
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapM = Eigen::Map<Mat>;
  using CMapM = Eigen::Map<const Mat>;
  using StrideT = Eigen::OuterStride<>;
  using SMapM = Eigen::Map<Mat, 0, StrideT>;
  using SCMapM = Eigen::Map<const Mat, 0, StrideT>;

  explicit TapeT(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  // ---- leaves ------------------------------------------------------------

  Node* constant(TensorT<T> v) { return add_leaf(std::move(v), false); }

  Node* input(TensorT<T> v) {
    bool rg = v.requires_grad;
    return add_leaf(std::move(v), rg && grad_enabled_);
  }

  Node* input(TensorT<T> v, bool requires_grad) {
    return add_leaf(std::move(v), requires_grad && grad_enabled_);
  }

  /// External parameter view; registered in call order for grad harvesting.
  Node* param(const TensorT<T>& external) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.ext = &external;
    n.needs_grad = grad_enabled_;
    n.is_leaf = true;
    params_.push_back(&n);
    return &n;
  }

  const std::vector<Node*>& params() const { return params_; }

  // ---- elementwise -------------------------------------------------------

  Node* add(Node* a, Node* b) {
    check_same(a, b, "add");
    TensorT<T> out = a->value();
    const auto& bd = b->value().data;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bd[i];
    return record(OpKind::add, std::move(out), {a, b}, [](Node* o, Node* a2, Node* b2) {
      accumulate(a2, o->grad);
      accumulate(b2, o->grad);
    }, a, b);
  }

  Node* sub(Node* a, Node* b) {
    check_same(a, b, "sub");
    TensorT<T> out = a->value();
    const auto& bd = b->value().data;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bd[i];
    return record(OpKind::sub, std::move(out), {a, b}, [](Node* o, Node* a2, Node* b2) {
      accumulate(a2, o->grad);
      accumulate_neg(b2, o->grad);
    }, a, b);
  }

  Node* mul(Node* a, Node* b) {
    check_same(a, b, "mul");
    TensorT<T> out = a->value();
    const auto& bd = b->value().data;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bd[i];
    return record(OpKind::mul, std::move(out), {a, b}, [](Node* o, Node* a2, Node* b2) {
      if (a2->needs_grad) accumulate_prod(a2, o->grad, b2->value());
      if (b2->needs_grad) accumulate_prod(b2, o->grad, a2->value());
    }, a, b);
  }

  Node* scale(Node* a, double c) {
    TensorT<T> out = a->value();
    for (auto& v : out.data) v = static_cast<T>(v * c);
    return record(OpKind::scale, std::move(out), {a}, [c](Node* o, Node* a2) {
      accumulate_scaled(a2, o->grad, c);
    }, a);
  }

  Node* one_minus(Node* a) {
    TensorT<T> out = a->value();
    for (auto& v : out.data) v = T(1) - v;
    return record(OpKind::one_minus, std::move(out), {a}, [](Node* o, Node* a2) {
      accumulate_neg(a2, o->grad);
    }, a);
  }

  Node* mish(Node* a) {
    const auto& x = a->value();
    TensorT<T> out = x;
    for (auto& v : out.data) v = mish_scalar(v);
    return record(OpKind::mish, std::move(out), {a}, [xin = x](Node* o, Node* a2) {
      ensure_grad(a2);
      for (size_t i = 0; i < xin.data.size(); ++i) {
        double xv = static_cast<double>(xin.data[i]);
        double sp = softplus(xv);
        double ts = std::tanh(sp);
        double sig = 1.0 / (1.0 + std::exp(-xv));
        double d = ts + xv * (1.0 - ts * ts) * sig;
        a2->grad.data[i] += static_cast<T>(static_cast<double>(o->grad.data[i]) * d);
      }
    }, a);
  }

  Node* clamp01(Node* a) {
    const auto& x = a->value();
    TensorT<T> out = x;
    for (auto& v : out.data) v = std::min(T(1), std::max(T(0), v));
    return record(OpKind::clamp01, std::move(out), {a}, [xin = x](Node* o, Node* a2) {
      ensure_grad(a2);
      for (size_t i = 0; i < xin.data.size(); ++i) {
        if (xin.data[i] >= T(0) && xin.data[i] <= T(1))
          a2->grad.data[i] += o->grad.data[i];
      }
    }, a);
  }

  /// Numerically safe softmax over the trailing axis; rows sum to 1.
  Node* softmax_lastdim(Node* a) {
    const auto& x = a->value();
    int n = x.last_dim();
    if (n < 1) throw_shape("softmax_lastdim: empty trailing axis");
    int64_t rows = x.rows();
    TensorT<T> out = x;
    for (int64_t r = 0; r < rows; ++r) {
      T* p = out.data.data() + r * n;
      T mx = *std::max_element(p, p + n);
      double sum = 0;
      for (int i = 0; i < n; ++i) {
        double e = std::exp(static_cast<double>(p[i]) - static_cast<double>(mx));
        p[i] = static_cast<T>(e);
        sum += e;
      }
      for (int i = 0; i < n; ++i) p[i] = static_cast<T>(p[i] / sum);
    }
    return record(OpKind::softmax, std::move(out), {a}, [n](Node* o, Node* a2) {
      ensure_grad(a2);
      const auto& y = o->value();
      int64_t rows2 = y.rows();
      for (int64_t r = 0; r < rows2; ++r) {
        const T* yp = y.data.data() + r * n;
        const T* gp = o->grad.data.data() + r * n;
        T* ap = a2->grad.data.data() + r * n;
        double dot = 0;
        for (int i = 0; i < n; ++i) dot += static_cast<double>(yp[i]) * gp[i];
        for (int i = 0; i < n; ++i)
          ap[i] += static_cast<T>(yp[i] * (static_cast<double>(gp[i]) - dot));
      }
    }, a);
  }

  // ---- dense kernels -------------------------------------------------------

  /// out[..., i] = sum_j W[i,j] x[..., j] + b[i]. b may be null.
  Node* affine(Node* x, Node* W, Node* b) {
    const auto& xv = x->value();
    const auto& wv = W->value();
    if (wv.rank() != 2) throw_shape("affine: W must be rank 2, got " + dims_str(wv.dims));
    int d_in = wv.dim(1), d_out = wv.dim(0);
    if (xv.last_dim() != d_in)
      throw_shape("affine: trailing dim " + std::to_string(xv.last_dim()) +
                  " does not match W columns " + std::to_string(d_in));
    if (b && b->value().size() != d_out)
      throw_shape("affine: bias length does not match W rows");
    int64_t rows = xv.rows();

    Dims odims = xv.dims;
    odims.back() = d_out;
    TensorT<T> out = TensorT<T>::zeros(odims);
    {
      CMapM X(xv.data.data(), rows, d_in);
      CMapM Wm(wv.data.data(), d_out, d_in);
      MapM Y(out.data.data(), rows, d_out);
      Y.noalias() = X * Wm.transpose();
      if (b) {
        Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bv(b->value().data.data(), d_out);
        Y.rowwise() += bv;
      }
    }
    Node* onode = record3(OpKind::affine, std::move(out), x, W, b,
        [rows, d_in, d_out](Node* o, Node* x2, Node* W2, Node* b2) {
          CMapM G(o->grad.data.data(), rows, d_out);
          if (x2->needs_grad) {
            ensure_grad(x2);
            MapM GX(x2->grad.data.data(), rows, d_in);
            CMapM Wm(W2->value().data.data(), d_out, d_in);
            GX.noalias() += G * Wm;
          }
          if (W2->needs_grad) {
            ensure_grad(W2);
            MapM GW(W2->grad.data.data(), d_out, d_in);
            CMapM X(x2->value().data.data(), rows, d_in);
            GW.noalias() += G.transpose() * X;
          }
          if (b2 && b2->needs_grad) {
            ensure_grad(b2);
            Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(b2->grad.data.data(), d_out);
            gb += G.colwise().sum();
          }
        });
    return onode;
  }

  /// Per-object temporal convolution with zero padding.
  /// x: [O, L, c_in], K: [2k+1, c_out, c_in], b: [c_out] or null.
  /// stride 1 preserves length; stride 2 halves it (L must be even).
  Node* conv1d(Node* x, Node* K, Node* b, int stride = 1) {
    const auto& xv = x->value();
    const auto& kv = K->value();
    if (xv.rank() != 3) throw_shape("conv1d: input must be [O,L,c], got " + dims_str(xv.dims));
    if (kv.rank() != 3) throw_shape("conv1d: kernel must be [w,c_out,c_in]");
    int w = kv.dim(0);
    if (w % 2 == 0) throw_config("conv1d: kernel width must be odd, got " + std::to_string(w));
    int O = xv.dim(0), L = xv.dim(1), ci = xv.dim(2);
    int co = kv.dim(1);
    if (kv.dim(2) != ci) throw_shape("conv1d: kernel c_in does not match input channels");
    if (b && b->value().size() != co) throw_shape("conv1d: bias length mismatch");
    if (stride != 1 && stride != 2) throw_config("conv1d: stride must be 1 or 2");
    if (L % stride != 0)
      throw_shape("conv1d: length " + std::to_string(L) + " not divisible by stride");
    if (L < 1) throw_shape("conv1d: empty length");
    int k = w / 2;
    int Lo = L / stride;

    TensorT<T> out = TensorT<T>::zeros({O, Lo, co});
    if (b) {
      for (int o = 0; o < O; ++o)
        for (int l = 0; l < Lo; ++l)
          for (int c = 0; c < co; ++c) out.at(o, l, c) = b->value().at(c);
    }
    for (int o = 0; o < O; ++o) {
      for (int s = -k; s <= k; ++s) {
        int lo0, lo1;
        if (!shift_range(L, Lo, stride, s, lo0, lo1)) continue;
        int n = lo1 - lo0 + 1;
        SCMapM X(xv.data.data() + (static_cast<int64_t>(o) * L + lo0 * stride + s) * ci,
                 n, ci, StrideT(static_cast<int64_t>(stride) * ci));
        CMapM Ks(kv.data.data() + static_cast<int64_t>(s + k) * co * ci, co, ci);
        MapM Y(out.data.data() + (static_cast<int64_t>(o) * Lo + lo0) * co, n, co);
        Y.noalias() += X * Ks.transpose();
      }
    }
    return record3(OpKind::conv1d, std::move(out), x, K, b,
        [O, L, Lo, ci, co, k, stride](Node* o, Node* x2, Node* K2, Node* b2) {
          for (int ob = 0; ob < O; ++ob) {
            CMapM G(o->grad.data.data() + static_cast<int64_t>(ob) * Lo * co, Lo, co);
            for (int s = -k; s <= k; ++s) {
              int lo0, lo1;
              if (!shift_range(L, Lo, stride, s, lo0, lo1)) continue;
              int n = lo1 - lo0 + 1;
              CMapM Gb(o->grad.data.data() + (static_cast<int64_t>(ob) * Lo + lo0) * co, n, co);
              if (x2->needs_grad) {
                ensure_grad(x2);
                CMapM Ks(K2->value().data.data() + static_cast<int64_t>(s + k) * co * ci, co, ci);
                SMapM GX(x2->grad.data.data() +
                             (static_cast<int64_t>(ob) * L + lo0 * stride + s) * ci,
                         n, ci, StrideT(static_cast<int64_t>(stride) * ci));
                GX.noalias() += Gb * Ks;
              }
              if (K2->needs_grad) {
                ensure_grad(K2);
                SCMapM X(x2->value().data.data() +
                             (static_cast<int64_t>(ob) * L + lo0 * stride + s) * ci,
                         n, ci, StrideT(static_cast<int64_t>(stride) * ci));
                MapM GK(K2->grad.data.data() + static_cast<int64_t>(s + k) * co * ci, co, ci);
                GK.noalias() += Gb.transpose() * X;
              }
            }
            if (b2 && b2->needs_grad) {
              ensure_grad(b2);
              Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(b2->grad.data.data(), co);
              gb += G.colwise().sum();
            }
          }
        });
  }

  /// Nearest-neighbor temporal upsampling by 2: [O,L,c] -> [O,2L,c].
  Node* upsample_repeat2(Node* x) {
    const auto& xv = x->value();
    if (xv.rank() != 3) throw_shape("upsample_repeat2: input must be [O,L,c]");
    int O = xv.dim(0), L = xv.dim(1), c = xv.dim(2);
    TensorT<T> out = TensorT<T>::zeros({O, 2 * L, c});
    for (int o = 0; o < O; ++o)
      for (int l = 0; l < L; ++l)
        for (int f = 0; f < c; ++f) {
          T v = xv.at(o, l, f);
          out.at(o, 2 * l, f) = v;
          out.at(o, 2 * l + 1, f) = v;
        }
    return record(OpKind::upsample2, std::move(out), {x}, [O, L, c](Node* o, Node* x2) {
      ensure_grad(x2);
      for (int ob = 0; ob < O; ++ob)
        for (int l = 0; l < L; ++l)
          for (int f = 0; f < c; ++f)
            x2->grad.data[(static_cast<int64_t>(ob) * L + l) * c + f] +=
                o->grad.at(ob, 2 * l, f) + o->grad.at(ob, 2 * l + 1, f);
    }, x);
  }

  /// Group normalization over the trailing feature axis, point-wise in all
  /// leading axes. Standardizes each group to mean 0 / variance 1 (population
  /// variance, floor eps), then applies the affine gamma/beta.
  Node* group_norm(Node* x, int groups, Node* gamma, Node* beta, double eps = 1e-5) {
    const auto& xv = x->value();
    int d = xv.last_dim();
    if (groups < 1 || d % groups != 0)
      throw_config("group_norm: feature dim " + std::to_string(d) +
                   " not divisible by groups " + std::to_string(groups));
    if (gamma->value().size() != d || beta->value().size() != d)
      throw_shape("group_norm: gamma/beta length mismatch");
    int gs = d / groups;
    int64_t rows = xv.rows();

    TensorT<T> out = xv;
    TensorT<T> xhat = TensorT<T>::zeros(xv.dims);
    TensorT<T> istd = TensorT<T>::zeros({static_cast<int>(rows), groups});
    const T* gam = gamma->value().data.data();
    const T* bet = beta->value().data.data();
    for (int64_t r = 0; r < rows; ++r) {
      const T* xp = xv.data.data() + r * d;
      T* op = out.data.data() + r * d;
      T* hp = xhat.data.data() + r * d;
      for (int g = 0; g < groups; ++g) {
        const T* xg = xp + g * gs;
        double mu = 0;
        for (int i = 0; i < gs; ++i) mu += xg[i];
        mu /= gs;
        double var = 0;
        for (int i = 0; i < gs; ++i) {
          double c = xg[i] - mu;
          var += c * c;
        }
        var /= gs;
        double is = 1.0 / std::sqrt(var + eps);
        istd.data[r * groups + g] = static_cast<T>(is);
        for (int i = 0; i < gs; ++i) {
          double h = (xg[i] - mu) * is;
          hp[g * gs + i] = static_cast<T>(h);
          op[g * gs + i] = static_cast<T>(h * gam[g * gs + i] + bet[g * gs + i]);
        }
      }
    }
    return record3(OpKind::group_norm, std::move(out), x, gamma, beta,
        [rows, d, groups, gs, xh = std::move(xhat), is = std::move(istd)](
            Node* o, Node* x2, Node* g2, Node* b2) {
          const T* gam2 = g2->value().data.data();
          for (int64_t r = 0; r < rows; ++r) {
            const T* gp = o->grad.data.data() + r * d;
            const T* hp = xh.data.data() + r * d;
            if (x2->needs_grad) {
              ensure_grad(x2);
              T* xp = x2->grad.data.data() + r * d;
              for (int g = 0; g < groups; ++g) {
                double m1 = 0, m2 = 0;
                for (int i = 0; i < gs; ++i) {
                  double gy = static_cast<double>(gp[g * gs + i]) * gam2[g * gs + i];
                  m1 += gy;
                  m2 += gy * hp[g * gs + i];
                }
                m1 /= gs;
                m2 /= gs;
                double isv = is.data[r * groups + g];
                for (int i = 0; i < gs; ++i) {
                  double gy = static_cast<double>(gp[g * gs + i]) * gam2[g * gs + i];
                  xp[g * gs + i] +=
                      static_cast<T>((gy - m1 - hp[g * gs + i] * m2) * isv);
                }
              }
            }
            if (g2->needs_grad) {
              ensure_grad(g2);
              for (int i = 0; i < d; ++i)
                g2->grad.data[i] += static_cast<T>(static_cast<double>(gp[i]) * hp[i]);
            }
            if (b2->needs_grad) {
              ensure_grad(b2);
              for (int i = 0; i < d; ++i) b2->grad.data[i] += gp[i];
            }
          }
        });
  }

  // ---- attention over objects at fixed trajectory step ---------------------

  /// s[o,l,j] = scale * <q[o,l,:], k[j,l,:]>.
  Node* attn_scores(Node* q, Node* k, double scale_factor) {
    const auto& qv = q->value();
    const auto& kv = k->value();
    if (qv.rank() != 3 || !qv.same_dims(kv))
      throw_shape("attn_scores: q and k must be identical [O,L,dh] tensors");
    int O = qv.dim(0), L = qv.dim(1), dh = qv.dim(2);
    TensorT<T> out = TensorT<T>::zeros({O, L, O});
    for (int l = 0; l < L; ++l) {
      SCMapM Q(qv.data.data() + static_cast<int64_t>(l) * dh, O, dh,
               StrideT(static_cast<int64_t>(L) * dh));
      SCMapM K(kv.data.data() + static_cast<int64_t>(l) * dh, O, dh,
               StrideT(static_cast<int64_t>(L) * dh));
      SMapM S(out.data.data() + static_cast<int64_t>(l) * O, O, O,
              StrideT(static_cast<int64_t>(L) * O));
      S.noalias() = Q * K.transpose() * static_cast<T>(scale_factor);
    }
    return record(OpKind::attn_scores, std::move(out), {q, k},
        [O, L, dh, scale_factor](Node* o, Node* q2, Node* k2) {
          for (int l = 0; l < L; ++l) {
            SCMapM G(o->grad.data.data() + static_cast<int64_t>(l) * O, O, O,
                     StrideT(static_cast<int64_t>(L) * O));
            SCMapM Q(q2->value().data.data() + static_cast<int64_t>(l) * dh, O, dh,
                     StrideT(static_cast<int64_t>(L) * dh));
            SCMapM K(k2->value().data.data() + static_cast<int64_t>(l) * dh, O, dh,
                     StrideT(static_cast<int64_t>(L) * dh));
            if (q2->needs_grad) {
              ensure_grad(q2);
              SMapM GQ(q2->grad.data.data() + static_cast<int64_t>(l) * dh, O, dh,
                       StrideT(static_cast<int64_t>(L) * dh));
              GQ.noalias() += G * K * static_cast<T>(scale_factor);
            }
            if (k2->needs_grad) {
              ensure_grad(k2);
              SMapM GK(k2->grad.data.data() + static_cast<int64_t>(l) * dh, O, dh,
                       StrideT(static_cast<int64_t>(L) * dh));
              GK.noalias() += G.transpose() * Q * static_cast<T>(scale_factor);
            }
          }
        }, q, k);
  }

  /// u[o,l,:] = sum_j a[o,l,j] * v[j,l,:].
  Node* attn_mix(Node* a, Node* v) {
    const auto& av = a->value();
    const auto& vv = v->value();
    if (av.rank() != 3 || vv.rank() != 3 || av.dim(0) != av.dim(2) ||
        av.dim(0) != vv.dim(0) || av.dim(1) != vv.dim(1))
      throw_shape("attn_mix: expected a [O,L,O] with v [O,L,dh]");
    int O = av.dim(0), L = av.dim(1), dh = vv.dim(2);
    TensorT<T> out = TensorT<T>::zeros({O, L, dh});
    for (int l = 0; l < L; ++l) {
      SCMapM A(av.data.data() + static_cast<int64_t>(l) * O, O, O,
               StrideT(static_cast<int64_t>(L) * O));
      SCMapM V(vv.data.data() + static_cast<int64_t>(l) * dh, O, dh,
               StrideT(static_cast<int64_t>(L) * dh));
      SMapM U(out.data.data() + static_cast<int64_t>(l) * dh, O, dh,
              StrideT(static_cast<int64_t>(L) * dh));
      U.noalias() = A * V;
    }
    return record(OpKind::attn_mix, std::move(out), {a, v},
        [O, L, dh](Node* o, Node* a2, Node* v2) {
          for (int l = 0; l < L; ++l) {
            SCMapM G(o->grad.data.data() + static_cast<int64_t>(l) * dh, O, dh,
                     StrideT(static_cast<int64_t>(L) * dh));
            SCMapM A(a2->value().data.data() + static_cast<int64_t>(l) * O, O, O,
                     StrideT(static_cast<int64_t>(L) * O));
            SCMapM V(v2->value().data.data() + static_cast<int64_t>(l) * dh, O, dh,
                     StrideT(static_cast<int64_t>(L) * dh));
            if (a2->needs_grad) {
              ensure_grad(a2);
              SMapM GA(a2->grad.data.data() + static_cast<int64_t>(l) * O, O, O,
                       StrideT(static_cast<int64_t>(L) * O));
              GA.noalias() += G * V.transpose();
            }
            if (v2->needs_grad) {
              ensure_grad(v2);
              SMapM GV(v2->grad.data.data() + static_cast<int64_t>(l) * dh, O, dh,
                       StrideT(static_cast<int64_t>(L) * dh));
              GV.noalias() += A.transpose() * G;
            }
          }
        }, a, v);
  }

  // ---- reshaping views ------------------------------------------------------

  Node* concat_lastdim(const std::vector<Node*>& parts) {
    if (parts.empty()) throw_shape("concat_lastdim: no inputs");
    Dims lead = parts[0]->value().dims;
    lead.pop_back();
    int total = 0;
    for (Node* p : parts) {
      Dims l2 = p->value().dims;
      int last = l2.back();
      l2.pop_back();
      if (l2 != lead) throw_shape("concat_lastdim: leading dims differ");
      total += last;
    }
    int64_t rows = parts[0]->value().rows();
    Dims odims = lead;
    odims.push_back(total);
    TensorT<T> out = TensorT<T>::zeros(odims);
    std::vector<int> offsets(parts.size());
    {
      int off = 0;
      for (size_t i = 0; i < parts.size(); ++i) {
        offsets[i] = off;
        int w = parts[i]->value().last_dim();
        for (int64_t r = 0; r < rows; ++r) {
          const T* src = parts[i]->value().data.data() + r * w;
          T* dst = out.data.data() + r * total + off;
          std::copy(src, src + w, dst);
        }
        off += w;
      }
    }
    bool any = false;
    for (Node* p : parts) any = any || p->needs_grad;
    TensorT<T> ov = std::move(out);
    Node* onode = make_node(OpKind::concat, std::move(ov), any && grad_enabled_);
    if (onode->needs_grad) {
      std::vector<Node*> ins = parts;
      ops_.push_back([onode, ins, offsets, rows, total]() {
        if (!onode->has_grad()) return;
        for (size_t i = 0; i < ins.size(); ++i) {
          if (!ins[i]->needs_grad) continue;
          ensure_grad(ins[i]);
          int w = ins[i]->value().last_dim();
          for (int64_t r = 0; r < rows; ++r) {
            const T* src = onode->grad.data.data() + r * total + offsets[i];
            T* dst = ins[i]->grad.data.data() + r * w;
            for (int c = 0; c < w; ++c) dst[c] += src[c];
          }
        }
      });
    }
    return onode;
  }

  /// out = x[..., c0 : c0+len].
  Node* slice_lastdim(Node* x, int c0, int len) {
    const auto& xv = x->value();
    int d = xv.last_dim();
    if (c0 < 0 || len < 1 || c0 + len > d) throw_shape("slice_lastdim: range out of bounds");
    int64_t rows = xv.rows();
    Dims odims = xv.dims;
    odims.back() = len;
    TensorT<T> out = TensorT<T>::zeros(odims);
    for (int64_t r = 0; r < rows; ++r) {
      const T* src = xv.data.data() + r * d + c0;
      std::copy(src, src + len, out.data.data() + r * len);
    }
    return record(OpKind::slice, std::move(out), {x}, [c0, len, d, rows](Node* o, Node* x2) {
      ensure_grad(x2);
      for (int64_t r = 0; r < rows; ++r) {
        const T* src = o->grad.data.data() + r * len;
        T* dst = x2->grad.data.data() + r * d + c0;
        for (int c = 0; c < len; ++c) dst[c] += src[c];
      }
    }, x);
  }

  /// Broadcast a [..., 1] tensor across d trailing features.
  Node* expand_feature(Node* m, int d) {
    const auto& mv = m->value();
    if (mv.last_dim() != 1) throw_shape("expand_feature: trailing axis must be 1");
    int64_t rows = mv.rows();
    Dims odims = mv.dims;
    odims.back() = d;
    TensorT<T> out = TensorT<T>::zeros(odims);
    for (int64_t r = 0; r < rows; ++r) {
      T v = mv.data[r];
      for (int c = 0; c < d; ++c) out.data[r * d + c] = v;
    }
    return record(OpKind::expand_feature, std::move(out), {m}, [d, rows](Node* o, Node* m2) {
      ensure_grad(m2);
      for (int64_t r = 0; r < rows; ++r) {
        double s = 0;
        for (int c = 0; c < d; ++c) s += o->grad.data[r * d + c];
        m2->grad.data[r] += static_cast<T>(s);
      }
    }, m);
  }

  /// [O,L,d] -> [1,L,O*d]; objects concatenated along the feature axis.
  Node* merge_objects(Node* x) {
    const auto& xv = x->value();
    if (xv.rank() != 3) throw_shape("merge_objects: input must be [O,L,d]");
    int O = xv.dim(0), L = xv.dim(1), d = xv.dim(2);
    TensorT<T> out = TensorT<T>::zeros({1, L, O * d});
    for (int o = 0; o < O; ++o)
      for (int l = 0; l < L; ++l)
        for (int f = 0; f < d; ++f) out.at(0, l, o * d + f) = xv.at(o, l, f);
    return record(OpKind::merge_objects, std::move(out), {x}, [O, L, d](Node* o, Node* x2) {
      ensure_grad(x2);
      for (int ob = 0; ob < O; ++ob)
        for (int l = 0; l < L; ++l)
          for (int f = 0; f < d; ++f)
            x2->grad.data[(static_cast<int64_t>(ob) * L + l) * d + f] +=
                o->grad.at(0, l, ob * d + f);
    }, x);
  }

  /// [1,L,O*d] -> [O,L,d].
  Node* split_objects(Node* x, int O) {
    const auto& xv = x->value();
    if (xv.rank() != 3 || xv.dim(0) != 1 || xv.dim(2) % O != 0)
      throw_shape("split_objects: input must be [1,L,O*d]");
    int L = xv.dim(1), d = xv.dim(2) / O;
    TensorT<T> out = TensorT<T>::zeros({O, L, d});
    for (int o = 0; o < O; ++o)
      for (int l = 0; l < L; ++l)
        for (int f = 0; f < d; ++f) out.at(o, l, f) = xv.at(0, l, o * d + f);
    return record(OpKind::split_objects, std::move(out), {x}, [O, L, d](Node* o, Node* x2) {
      ensure_grad(x2);
      for (int ob = 0; ob < O; ++ob)
        for (int l = 0; l < L; ++l)
          for (int f = 0; f < d; ++f)
            x2->grad.data[(static_cast<int64_t>(l)) * (O * d) + ob * d + f] +=
                o->grad.at(ob, l, f);
    }, x);
  }

  /// Add a length-d vector to every position of x[..., d].
  Node* add_rowvec(Node* x, Node* v) {
    const auto& xv = x->value();
    int d = xv.last_dim();
    if (v->value().size() != d) throw_shape("add_rowvec: vector length mismatch");
    int64_t rows = xv.rows();
    TensorT<T> out = xv;
    const T* vp = v->value().data.data();
    for (int64_t r = 0; r < rows; ++r)
      for (int c = 0; c < d; ++c) out.data[r * d + c] += vp[c];
    return record(OpKind::add_rowvec, std::move(out), {x, v}, [d, rows](Node* o, Node* x2, Node* v2) {
      if (x2->needs_grad) accumulate(x2, o->grad);
      if (v2->needs_grad) {
        ensure_grad(v2);
        for (int64_t r = 0; r < rows; ++r)
          for (int c = 0; c < d; ++c) v2->grad.data[c] += o->grad.data[r * d + c];
      }
    }, x, v);
  }

  Node* sum_all(Node* x) {
    double s = 0;
    for (T v : x->value().data) s += v;
    TensorT<T> out = TensorT<T>::scalar(static_cast<T>(s));
    return record(OpKind::sum_all, std::move(out), {x}, [](Node* o, Node* x2) {
      ensure_grad(x2);
      T g = o->grad.data[0];
      for (auto& v : x2->grad.data) v += g;
    }, x);
  }

  // ---- extension point ------------------------------------------------------

  /// Create an op node with a caller-supplied backward closure. The closure
  /// runs only when the output carries gradient; it must accumulate (+=) into
  /// input grads via ensure_grad.
  Node* make_custom(TensorT<T> value, const std::vector<Node*>& inputs,
                    std::function<void(Node*)> backward_fn) {
    bool any = false;
    for (Node* p : inputs) any = any || p->needs_grad;
    Node* onode = make_node(OpKind::custom, std::move(value), any && grad_enabled_);
    if (onode->needs_grad && backward_fn) {
      ops_.push_back([onode, fn = std::move(backward_fn)]() {
        if (onode->has_grad()) fn(onode);
      });
    }
    return onode;
  }

  static void ensure_grad(Node* n) {
    if (!n->has_grad()) n->grad = TensorT<T>::zeros(n->value().dims);
  }

  // ---- backward ---------------------------------------------------------------

  /// Reverse sweep from a scalar loss. Gradients of leaves/params accumulate
  /// across repeated calls; intermediate accumulators are reset per call.
  void backward(Node* loss) {
    if (loss->value().size() != 1) throw_usage("backward: loss must be a scalar");
    if (ops_.empty()) throw_usage("backward: tape has recorded no operations");
    for (auto& n : nodes_) {
      if (!n.is_leaf && n.has_grad())
        std::fill(n.grad.data.begin(), n.grad.data.end(), T(0));
    }
    ensure_grad(loss);
    loss->grad.data[0] += T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  void zero_grad() {
    for (auto& n : nodes_) n.grad = TensorT<T>();
  }

  size_t num_ops() const { return ops_.size(); }

  void reset() {
    nodes_.clear();
    ops_.clear();
    params_.clear();
  }

 private:
  Node* add_leaf(TensorT<T> v, bool needs_grad) {
    return make_node(OpKind::leaf, std::move(v), needs_grad, /*leaf=*/true);
  }

  Node* make_node(OpKind op, TensorT<T> v, bool needs_grad, bool leaf = false) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.op = op;
    n.owned = std::move(v);
    n.needs_grad = needs_grad;
    n.is_leaf = leaf;
    return &n;
  }

  template <typename Fn>
  Node* record(OpKind op, TensorT<T> v, std::initializer_list<Node*> ins, Fn&& bwd, Node* a,
               Node* b = nullptr) {
    bool any = false;
    for (Node* p : ins) any = any || (p && p->needs_grad);
    Node* onode = make_node(op, std::move(v), any && grad_enabled_);
    if (onode->needs_grad) {
      if (b == nullptr) {
        ops_.push_back([onode, a, f = std::forward<Fn>(bwd)]() {
          if (onode->has_grad()) f(onode, a);
        });
      } else {
        ops_.push_back([onode, a, b, f = std::forward<Fn>(bwd)]() {
          if (onode->has_grad()) f(onode, a, b);
        });
      }
    }
    return onode;
  }

  template <typename Fn>
  Node* record3(OpKind op, TensorT<T> v, Node* a, Node* b, Node* c, Fn&& bwd) {
    bool any = (a && a->needs_grad) || (b && b->needs_grad) || (c && c->needs_grad);
    Node* onode = make_node(op, std::move(v), any && grad_enabled_);
    if (onode->needs_grad) {
      ops_.push_back([onode, a, b, c, f = std::forward<Fn>(bwd)]() {
        if (onode->has_grad()) f(onode, a, b, c);
      });
    }
    return onode;
  }

  static void check_same(Node* a, Node* b, const char* what) {
    if (!a->value().same_dims(b->value()))
      throw_shape(std::string(what) + ": dims differ, " + dims_str(a->value().dims) + " vs " +
                  dims_str(b->value().dims));
  }

  static void accumulate(Node* n, const TensorT<T>& g) {
    if (!n->needs_grad) return;
    ensure_grad(n);
    for (size_t i = 0; i < g.data.size(); ++i) n->grad.data[i] += g.data[i];
  }

  static void accumulate_neg(Node* n, const TensorT<T>& g) {
    if (!n->needs_grad) return;
    ensure_grad(n);
    for (size_t i = 0; i < g.data.size(); ++i) n->grad.data[i] -= g.data[i];
  }

  static void accumulate_scaled(Node* n, const TensorT<T>& g, double c) {
    if (!n->needs_grad) return;
    ensure_grad(n);
    for (size_t i = 0; i < g.data.size(); ++i)
      n->grad.data[i] += static_cast<T>(g.data[i] * c);
  }

  static void accumulate_prod(Node* n, const TensorT<T>& g, const TensorT<T>& other) {
    ensure_grad(n);
    for (size_t i = 0; i < g.data.size(); ++i) n->grad.data[i] += g.data[i] * other.data[i];
  }

  static double softplus(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
  }

  static T mish_scalar(T x) {
    double xv = static_cast<double>(x);
    return static_cast<T>(xv * std::tanh(softplus(xv)));
  }

  /// Output rows lo such that lo*stride + s stays inside [0, L-1].
  static bool shift_range(int L, int Lo, int stride, int s, int& lo0, int& lo1) {
    lo0 = 0;
    while (lo0 * stride + s < 0) ++lo0;
    lo1 = Lo - 1;
    while (lo1 >= 0 && lo1 * stride + s > L - 1) --lo1;
    return lo0 <= lo1;
  }

  bool grad_enabled_;
  std::deque<Node> nodes_;
  std::vector<std::function<void()>> ops_;
  std::vector<Node*> params_;
};

using Tape = TapeT<float>;
using TapeD = TapeT<double>;

}  // namespace ocdd::nd
