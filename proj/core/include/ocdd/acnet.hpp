#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ocdd/tape.hpp"

namespace ocdd::acnet {

/// Ablation variants. cnn_only removes attention and runs one temporal
/// convolution over the object-concatenated scene vector (fixed object count,
/// not permutation equivariant); no_mlp replaces the feature-processing MLP
/// with a bare width-matching projection.
enum class ArchVariant { full, cnn_only, no_mlp };

inline std::string to_string(ArchVariant v) {
  switch (v) {
    case ArchVariant::full: return "full";
    case ArchVariant::cnn_only: return "cnn-only";
    case ArchVariant::no_mlp: return "no-mlp";
  }
  return "full";
}

inline ArchVariant variant_from_string(const std::string& s) {
  if (s == "full") return ArchVariant::full;
  if (s == "cnn-only" || s == "cnn_only") return ArchVariant::cnn_only;
  if (s == "no-mlp" || s == "no_mlp") return ArchVariant::no_mlp;
  throw_usage("unknown arch variant: " + s + " (expected full|cnn-only|no-mlp)");
}

/// Largest group count <= want that divides d with groups of at least 2.
inline int effective_groups(int want, int d) {
  for (int g = std::min(want, d); g >= 1; --g)
    if (d % g == 0 && d / g >= 2) return g;
  return 1;
}

struct ModelConfig {
  int d_in = 8;                          // input feature width per object
  std::vector<int> channels = {32, 64, 128};
  int heads = 4;
  int kernel_half_width = 2;             // conv width 2k+1
  int res_blocks_per_level = 1;
  int cond_levels = 2;                   // leading down levels that receive conditioning
  int temb_dim = 64;
  int groups = 8;                        // group-norm target, clamped per width
  ArchVariant variant = ArchVariant::full;
  int cond_in_dim = 8;                   // conditioning-net input width per object
  int fixed_objects = 0;                 // cnn_only: object count fixed at train time

  int levels() const { return static_cast<int>(channels.size()); }
  int total_stride() const { return 1 << (levels() - 1); }

  // Effective per-object widths become scene widths for cnn_only.
  int net_d_in() const {
    return variant == ArchVariant::cnn_only ? d_in * fixed_objects : d_in;
  }
  int net_cond_in() const {
    return variant == ArchVariant::cnn_only ? cond_in_dim * fixed_objects : cond_in_dim;
  }

  void validate() const {
    if (d_in < 1) throw_config("model config: d_in must be >= 1");
    if (channels.empty()) throw_config("model config: channels must be non-empty");
    for (int c : channels)
      if (c < 1) throw_config("model config: channel widths must be positive");
    if (heads < 1) throw_config("model config: heads must be >= 1");
    if (variant != ArchVariant::cnn_only) {
      for (int c : channels)
        if (c % heads != 0)
          throw_config("model config: channel width " + std::to_string(c) +
                       " not divisible by heads " + std::to_string(heads));
    }
    if (kernel_half_width < 0) throw_config("model config: kernel half-width must be >= 0");
    if (res_blocks_per_level < 1) throw_config("model config: res blocks per level >= 1");
    if (cond_levels < 0 || cond_levels > levels())
      throw_config("model config: cond_levels must be in [0, levels]");
    if (temb_dim < 2 || temb_dim % 2 != 0) throw_config("model config: temb_dim must be even");
    if (variant == ArchVariant::cnn_only && fixed_objects < 1)
      throw_config("model config: cnn-only requires fixed_objects >= 1");
  }
};

// ---- parameter containers ----------------------------------------------------

template <typename T>
struct AffineP {
  nd::TensorT<T> W;  // [d_out, d_in]
  nd::TensorT<T> b;  // [d_out]; empty when bias-free
  bool present() const { return !W.data.empty(); }
};

template <typename T>
struct GnP {
  nd::TensorT<T> gamma, beta;
  bool present() const { return !gamma.data.empty(); }
};

template <typename T>
struct ConvP {
  nd::TensorT<T> K;  // [2k+1, c_out, c_in]
  nd::TensorT<T> b;  // [c_out]
  bool present() const { return !K.data.empty(); }
};

template <typename T>
struct AcBlockP {
  AffineP<T> mlp;     // full/cnn_only: MLP lift; no_mlp: bare projection
  GnP<T> gn_mlp;      // absent for no_mlp
  nd::TensorT<T> wq, wk, wv;  // [d_out, d_out]; absent for cnn_only
  GnP<T> gn_mha;
  AffineP<T> skip;    // [d_out, 2*d_out]
  GnP<T> gn_skip;
  ConvP<T> conv;
  GnP<T> gn_conv;
};

template <typename T>
struct ResBlockP {
  AcBlockP<T> ac1, ac2;
  bool has_temb = false;
  AffineP<T> temb;  // projects the step embedding to this block's width
  bool has_proj = false;
  AffineP<T> proj;  // 1x1 channel projection on the residual path
};

template <typename T>
struct LevelP {
  std::vector<ResBlockP<T>> res;
  bool has_down = false;
  ConvP<T> down;  // stride-2 temporal conv
};

template <typename T>
struct UpLevelP {
  ConvP<T> upconv;  // after nearest-neighbor repeat
  std::vector<ResBlockP<T>> res;
};

template <typename T>
struct StepEmbP {
  AffineP<T> lin1, lin2;
};

/// Truncated copy of the down path used by the conditioning nets. The mask
/// net additionally carries width-1 output heads per level.
template <typename T>
struct CondTrunkP {
  std::vector<LevelP<T>> downs;
  std::vector<AffineP<T>> heads;
};

template <typename T>
struct UNetParamsT {
  ModelConfig cfg;
  StepEmbP<T> temb;
  std::vector<LevelP<T>> downs;
  std::vector<ResBlockP<T>> mid;
  std::vector<UpLevelP<T>> ups;
  ConvP<T> head_conv;
  GnP<T> head_gn;
  AffineP<T> head_out;
  CondTrunkP<T> cond;   // feature width 2*d~ per conditioned level
  CondTrunkP<T> maskn;  // main widths with width-1 clamped heads

  template <typename Self, typename Fn>
  static void visit_impl(Self& self, Fn&& fn) {
    auto affine = [&](const std::string& n, auto& a) {
      if (!a.W.data.empty()) fn(n + ".W", a.W);
      if (!a.b.data.empty()) fn(n + ".b", a.b);
    };
    auto gn = [&](const std::string& n, auto& g) {
      if (!g.gamma.data.empty()) {
        fn(n + ".gamma", g.gamma);
        fn(n + ".beta", g.beta);
      }
    };
    auto conv = [&](const std::string& n, auto& c) {
      if (!c.K.data.empty()) {
        fn(n + ".K", c.K);
        fn(n + ".b", c.b);
      }
    };
    auto ac = [&](const std::string& n, auto& blk) {
      affine(n + ".mlp", blk.mlp);
      gn(n + ".gn_mlp", blk.gn_mlp);
      if (!blk.wq.data.empty()) {
        fn(n + ".wq", blk.wq);
        fn(n + ".wk", blk.wk);
        fn(n + ".wv", blk.wv);
      }
      gn(n + ".gn_mha", blk.gn_mha);
      affine(n + ".skip", blk.skip);
      gn(n + ".gn_skip", blk.gn_skip);
      conv(n + ".conv", blk.conv);
      gn(n + ".gn_conv", blk.gn_conv);
    };
    auto res = [&](const std::string& n, auto& r) {
      ac(n + ".ac1", r.ac1);
      ac(n + ".ac2", r.ac2);
      if (r.has_temb) affine(n + ".temb", r.temb);
      if (r.has_proj) affine(n + ".proj", r.proj);
    };
    auto trunk = [&](const std::string& n, auto& t) {
      for (size_t i = 0; i < t.downs.size(); ++i) {
        auto& lv = t.downs[i];
        for (size_t j = 0; j < lv.res.size(); ++j)
          res(n + ".down" + std::to_string(i) + ".res" + std::to_string(j), lv.res[j]);
        if (lv.has_down) conv(n + ".down" + std::to_string(i) + ".ds", lv.down);
      }
      for (size_t i = 0; i < t.heads.size(); ++i)
        affine(n + ".head" + std::to_string(i), t.heads[i]);
    };

    affine("temb.lin1", self.temb.lin1);
    affine("temb.lin2", self.temb.lin2);
    for (size_t i = 0; i < self.downs.size(); ++i) {
      auto& lv = self.downs[i];
      for (size_t j = 0; j < lv.res.size(); ++j)
        res("main.down" + std::to_string(i) + ".res" + std::to_string(j), lv.res[j]);
      if (lv.has_down) conv("main.down" + std::to_string(i) + ".ds", lv.down);
    }
    for (size_t i = 0; i < self.mid.size(); ++i) res("main.mid" + std::to_string(i), self.mid[i]);
    for (size_t i = 0; i < self.ups.size(); ++i) {
      auto& lv = self.ups[i];
      conv("main.up" + std::to_string(i) + ".us", lv.upconv);
      for (size_t j = 0; j < lv.res.size(); ++j)
        res("main.up" + std::to_string(i) + ".res" + std::to_string(j), lv.res[j]);
    }
    conv("main.head.conv", self.head_conv);
    gn("main.head.gn", self.head_gn);
    affine("main.head.out", self.head_out);
    trunk("cond", self.cond);
    trunk("mask", self.maskn);
  }

  template <typename Fn>
  void visit(Fn&& fn) {
    visit_impl(*this, fn);
  }
  template <typename Fn>
  void visit(Fn&& fn) const {
    visit_impl(*this, fn);
  }

  int64_t parameter_count() const {
    int64_t n = 0;
    visit([&](const std::string&, const nd::TensorT<T>& t) { n += t.size(); });
    return n;
  }
};

using UNetParams = UNetParamsT<float>;

// ---- initialization -----------------------------------------------------------

namespace detail {

template <typename T>
nd::TensorT<T> uniform_tensor(nd::Dims dims, double bound, Rng& rng) {
  return nd::TensorT<T>::generate(std::move(dims),
                                  [&]() { return rng.uniform(-bound, bound); });
}

template <typename T>
AffineP<T> make_affine(int d_out, int d_in, Rng& rng, bool bias = true) {
  double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
  AffineP<T> a;
  a.W = uniform_tensor<T>({d_out, d_in}, bound, rng);
  if (bias) a.b = uniform_tensor<T>({d_out}, bound, rng);
  return a;
}

template <typename T>
AffineP<T> make_zero_affine(int d_out, int d_in) {
  AffineP<T> a;
  a.W = nd::TensorT<T>::zeros({d_out, d_in});
  a.b = nd::TensorT<T>::zeros({d_out});
  return a;
}

template <typename T>
GnP<T> make_gn(int d) {
  GnP<T> g;
  g.gamma = nd::TensorT<T>::full({d}, T(1));
  g.beta = nd::TensorT<T>::zeros({d});
  return g;
}

template <typename T>
ConvP<T> make_conv(int width, int co, int ci, Rng& rng, bool zero = false) {
  ConvP<T> c;
  if (zero) {
    c.K = nd::TensorT<T>::zeros({width, co, ci});
    c.b = nd::TensorT<T>::zeros({co});
  } else {
    double bound = 1.0 / std::sqrt(static_cast<double>(width * ci));
    c.K = uniform_tensor<T>({width, co, ci}, bound, rng);
    c.b = uniform_tensor<T>({co}, bound, rng);
  }
  return c;
}

template <typename T>
AcBlockP<T> make_ac_block(const ModelConfig& cfg, int d_in, int d_out, Rng& rng,
                          bool zero_final) {
  AcBlockP<T> blk;
  int w = 2 * cfg.kernel_half_width + 1;
  switch (cfg.variant) {
    case ArchVariant::full:
      blk.mlp = make_affine<T>(d_out, d_in, rng);
      blk.gn_mlp = make_gn<T>(d_out);
      break;
    case ArchVariant::no_mlp:
      blk.mlp = make_affine<T>(d_out, d_in, rng);  // bare width-matching projection
      break;
    case ArchVariant::cnn_only:
      blk.mlp = make_affine<T>(d_out, d_in, rng);
      blk.gn_mlp = make_gn<T>(d_out);
      break;
  }
  if (cfg.variant != ArchVariant::cnn_only) {
    double bound = 1.0 / std::sqrt(static_cast<double>(d_out));
    blk.wq = uniform_tensor<T>({d_out, d_out}, bound, rng);
    blk.wk = uniform_tensor<T>({d_out, d_out}, bound, rng);
    blk.wv = uniform_tensor<T>({d_out, d_out}, bound, rng);
    blk.gn_mha = make_gn<T>(d_out);
    blk.skip = make_affine<T>(d_out, 2 * d_out, rng);
    blk.gn_skip = make_gn<T>(d_out);
  }
  blk.conv = make_conv<T>(w, d_out, d_out, rng, zero_final);
  blk.gn_conv = make_gn<T>(d_out);
  return blk;
}

template <typename T>
ResBlockP<T> make_res_block(const ModelConfig& cfg, int d_in, int d_out, bool with_temb,
                            Rng& rng) {
  ResBlockP<T> r;
  r.ac1 = make_ac_block<T>(cfg, d_in, d_out, rng, false);
  // Final conv of the block is zero-initialized: the block starts as the
  // identity on its projected input.
  r.ac2 = make_ac_block<T>(cfg, d_out, d_out, rng, true);
  r.has_temb = with_temb;
  if (with_temb) r.temb = make_affine<T>(d_out, cfg.temb_dim, rng);
  r.has_proj = d_in != d_out;
  if (r.has_proj) r.proj = make_affine<T>(d_out, d_in, rng, /*bias=*/false);
  return r;
}

template <typename T>
std::vector<LevelP<T>> make_down_path(const ModelConfig& cfg, int in_width,
                                      const std::vector<int>& widths, bool with_temb,
                                      bool downsample_after_last, Rng& rng) {
  std::vector<LevelP<T>> levels;
  int prev = in_width;
  for (size_t i = 0; i < widths.size(); ++i) {
    LevelP<T> lv;
    int w = widths[i];
    for (int j = 0; j < cfg.res_blocks_per_level; ++j) {
      lv.res.push_back(make_res_block<T>(cfg, j == 0 ? prev : w, w, with_temb, rng));
    }
    lv.has_down = downsample_after_last ? true : (i + 1 < widths.size());
    if (lv.has_down) lv.down = make_conv<T>(3, w, w, rng);
    levels.push_back(std::move(lv));
    prev = w;
  }
  return levels;
}

}  // namespace detail

/// Deterministic parameter init: fan-in-scaled uniform weights, zero-init
/// final residual convs and mask-net output heads. The same seed yields
/// bit-identical draws for the float and double instantiations.
template <typename T>
UNetParamsT<T> init_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, 0xac));
  UNetParamsT<T> p;
  p.cfg = cfg;

  p.temb.lin1 = detail::make_affine<T>(2 * cfg.temb_dim, cfg.temb_dim, rng);
  p.temb.lin2 = detail::make_affine<T>(cfg.temb_dim, 2 * cfg.temb_dim, rng);

  p.downs = detail::make_down_path<T>(cfg, cfg.net_d_in(), cfg.channels, true, false, rng);
  p.mid.push_back(detail::make_res_block<T>(cfg, cfg.channels.back(), cfg.channels.back(),
                                            true, rng));
  for (int i = cfg.levels() - 2; i >= 0; --i) {
    UpLevelP<T> up;
    up.upconv = detail::make_conv<T>(3, cfg.channels[i + 1], cfg.channels[i + 1], rng);
    for (int j = 0; j < cfg.res_blocks_per_level; ++j) {
      int in_w = j == 0 ? cfg.channels[i + 1] + cfg.channels[i] : cfg.channels[i];
      up.res.push_back(detail::make_res_block<T>(cfg, in_w, cfg.channels[i], true, rng));
    }
    p.ups.push_back(std::move(up));
  }
  int c0 = cfg.channels[0];
  p.head_conv = detail::make_conv<T>(2 * cfg.kernel_half_width + 1, c0, c0, rng);
  p.head_gn = detail::make_gn<T>(c0);
  p.head_out = detail::make_affine<T>(cfg.net_d_in(), c0, rng);

  if (cfg.cond_levels > 0) {
    std::vector<int> cond_widths, mask_widths;
    for (int i = 0; i < cfg.cond_levels; ++i) {
      cond_widths.push_back(2 * cfg.channels[i]);
      mask_widths.push_back(cfg.channels[i]);
    }
    p.cond.downs =
        detail::make_down_path<T>(cfg, cfg.net_cond_in(), cond_widths, false, false, rng);
    p.maskn.downs =
        detail::make_down_path<T>(cfg, cfg.net_cond_in(), mask_widths, false, false, rng);
    for (int i = 0; i < cfg.cond_levels; ++i)
      p.maskn.heads.push_back(detail::make_zero_affine<T>(1, cfg.channels[i]));
  }
  return p;
}

// ---- forward graph builders ----------------------------------------------------

template <typename T>
using NodeP = nd::TapeNode<T>*;

/// Sinusoidal embedding of the diffusion step followed by the 2-layer MLP.
template <typename T>
NodeP<T> step_embedding(nd::TapeT<T>& tape, const StepEmbP<T>& p, int t, int temb_dim) {
  int half = temb_dim / 2;
  nd::TensorT<T> e = nd::TensorT<T>::zeros({1, temb_dim});
  for (int i = 0; i < half; ++i) {
    double freq = half > 1 ? std::exp(-std::log(10000.0) * i / (half - 1)) : 1.0;
    e.data[i] = static_cast<T>(std::sin(t * freq));
    e.data[half + i] = static_cast<T>(std::cos(t * freq));
  }
  auto* n = tape.constant(std::move(e));
  n = tape.affine(n, tape.param(p.lin1.W), tape.param(p.lin1.b));
  n = tape.mish(n);
  n = tape.affine(n, tape.param(p.lin2.W), tape.param(p.lin2.b));
  return n;
}

/// The attention-convolution block: MLP lift, multihead self-attention over
/// objects at fixed trajectory step, concat-skip, per-object temporal conv.
template <typename T>
NodeP<T> ac_block(nd::TapeT<T>& tape, NodeP<T> z, const AcBlockP<T>& p, const ModelConfig& cfg,
                  int d_out) {
  int groups = effective_groups(cfg.groups, d_out);
  auto gn = [&](NodeP<T> x, const GnP<T>& g) {
    return tape.group_norm(x, groups, tape.param(g.gamma), tape.param(g.beta));
  };

  NodeP<T> z1;
  if (cfg.variant == ArchVariant::no_mlp) {
    z1 = tape.affine(z, tape.param(p.mlp.W), tape.param(p.mlp.b));
  } else {
    z1 = tape.mish(gn(tape.affine(z, tape.param(p.mlp.W), tape.param(p.mlp.b)), p.gn_mlp));
  }

  NodeP<T> z3 = z1;
  if (cfg.variant != ArchVariant::cnn_only) {
    int H = cfg.heads;
    int dh = d_out / H;
    auto* q_all = tape.affine(z1, tape.param(p.wq), nullptr);
    auto* k_all = tape.affine(z1, tape.param(p.wk), nullptr);
    auto* v_all = tape.affine(z1, tape.param(p.wv), nullptr);
    std::vector<NodeP<T>> heads;
    double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int h = 0; h < H; ++h) {
      auto* qh = tape.slice_lastdim(q_all, h * dh, dh);
      auto* kh = tape.slice_lastdim(k_all, h * dh, dh);
      auto* vh = tape.slice_lastdim(v_all, h * dh, dh);
      auto* att = tape.softmax_lastdim(tape.attn_scores(qh, kh, scale));
      heads.push_back(tape.attn_mix(att, vh));
    }
    auto* z2 = gn(tape.concat_lastdim(heads), p.gn_mha);  // no activation before skip
    auto* cat = tape.concat_lastdim({z2, z1});
    z3 = tape.mish(gn(tape.affine(cat, tape.param(p.skip.W), tape.param(p.skip.b)), p.gn_skip));
  }

  auto* z4 = tape.conv1d(z3, tape.param(p.conv.K), tape.param(p.conv.b));
  return tape.mish(gn(z4, p.gn_conv));
}

/// Two AC blocks with the projected step embedding added as a per-feature
/// bias after the first, plus the residual connection.
template <typename T>
NodeP<T> residual_block(nd::TapeT<T>& tape, NodeP<T> z, const ResBlockP<T>& p,
                        const ModelConfig& cfg, int d_out, NodeP<T> temb) {
  auto* h = ac_block(tape, z, p.ac1, cfg, d_out);
  if (temb && p.has_temb) {
    auto* tv = tape.affine(tape.mish(temb), tape.param(p.temb.W), tape.param(p.temb.b));
    h = tape.add_rowvec(h, tv);
  }
  h = ac_block(tape, h, p.ac2, cfg, d_out);
  NodeP<T> res = z;
  if (p.has_proj) res = tape.affine(z, tape.param(p.proj.W), nullptr);
  return tape.add(h, res);
}

/// Masked interpolation between identity and linear modulation:
///   Z' = (M*Cm + (1-M)*1) * Z + M*Cb, with M expanded across features.
template <typename T>
NodeP<T> cond_infuse(nd::TapeT<T>& tape, NodeP<T> Z, NodeP<T> Cm, NodeP<T> Cb, NodeP<T> M) {
  for (T v : M->value().data)
    if (!(v >= T(0) && v <= T(1))) throw_usage("cond_infuse: mask value outside [0,1]");
  if (!Z->value().same_dims(Cm->value()) || !Z->value().same_dims(Cb->value()))
    throw_shape("cond_infuse: Z/Cm/Cb dims disagree");
  int d = Z->value().last_dim();
  auto* e = tape.expand_feature(M, d);
  auto* factor = tape.add(tape.mul(e, Cm), tape.one_minus(e));
  return tape.add(tape.mul(factor, Z), tape.mul(e, Cb));
}

template <typename T>
struct CondSignals {
  std::vector<NodeP<T>> cm, cb, m;  // one per conditioned level
};

namespace detail {

/// Shared down-path walk for the two truncated conditioning nets.
/// emit(level, x) -> tensor fed to the next level (after per-level taps).
template <typename T, typename Emit>
void run_trunk(nd::TapeT<T>& tape, const CondTrunkP<T>& trunk, const ModelConfig& cfg,
               const std::vector<int>& widths, NodeP<T> x, Emit&& emit) {
  for (size_t i = 0; i < trunk.downs.size(); ++i) {
    const auto& lv = trunk.downs[i];
    for (const auto& r : lv.res) x = residual_block(tape, x, r, cfg, widths[i], nullptr);
    emit(static_cast<int>(i), x);
    if (lv.has_down)
      x = tape.conv1d(x, tape.param(lv.down.K), tape.param(lv.down.b), /*stride=*/2);
  }
}

}  // namespace detail

/// The conditioning nets: factor/bias pairs of the main net's width per
/// conditioned level (split from the 2*d~ wide net) and a mask in [0,1]
/// clamped after every mask-net layer output.
template <typename T>
CondSignals<T> cond_nets_forward(nd::TapeT<T>& tape, const UNetParamsT<T>& p,
                                 NodeP<T> cond_input) {
  const ModelConfig& cfg = p.cfg;
  CondSignals<T> out;
  if (cfg.cond_levels == 0) return out;

  NodeP<T> cin = cond_input;
  if (cfg.variant == ArchVariant::cnn_only) cin = tape.merge_objects(cond_input);

  std::vector<int> cond_widths, mask_widths;
  for (int i = 0; i < cfg.cond_levels; ++i) {
    cond_widths.push_back(2 * cfg.channels[i]);
    mask_widths.push_back(cfg.channels[i]);
  }
  detail::run_trunk(tape, p.cond, cfg, cond_widths, cin, [&](int level, NodeP<T> x) {
    int w = cfg.channels[level];
    out.cm.push_back(tape.slice_lastdim(x, 0, w));
    out.cb.push_back(tape.slice_lastdim(x, w, w));
  });
  detail::run_trunk(tape, p.maskn, cfg, mask_widths, cin, [&](int level, NodeP<T> x) {
    const auto& head = p.maskn.heads[static_cast<size_t>(level)];
    out.m.push_back(
        tape.clamp01(tape.affine(x, tape.param(head.W), tape.param(head.b))));
  });
  return out;
}

/// Full denoising network. x_t: [O, L, d_in]; cond_input: [O, L, cond_in_dim].
/// Returns the v prediction with the same dims as x_t. The caller applies the
/// denoise mask (v is only meaningful on changeable features of movables).
template <typename T>
NodeP<T> unet_forward(nd::TapeT<T>& tape, const UNetParamsT<T>& p, NodeP<T> x_t, int t,
                      NodeP<T> cond_input) {
  const ModelConfig& cfg = p.cfg;
  const auto& xv = x_t->value();
  if (xv.rank() != 3 || xv.dim(2) != cfg.d_in)
    throw_shape("unet_forward: expected [O,L," + std::to_string(cfg.d_in) + "], got " +
                nd::dims_str(xv.dims));
  int O = xv.dim(0), L = xv.dim(1);
  if (O < 1) throw_shape("unet_forward: need at least one object");
  int stride = cfg.total_stride();
  if (L % stride != 0)
    throw_shape("unet_forward: trajectory length " + std::to_string(L) +
                " must be a multiple of " + std::to_string(stride));
  if (cond_input && (cond_input->value().dim(0) != O || cond_input->value().dim(1) != L ||
                     cond_input->value().dim(2) != cfg.cond_in_dim))
    throw_shape("unet_forward: cond_input dims disagree with x_t");

  NodeP<T> x = x_t;
  if (cfg.variant == ArchVariant::cnn_only) {
    if (O != cfg.fixed_objects)
      throw_usage("cnn-only model was trained with a fixed object count of " +
                  std::to_string(cfg.fixed_objects) + ", got " + std::to_string(O));
    x = tape.merge_objects(x_t);
  }

  auto* temb = step_embedding(tape, p.temb, t, cfg.temb_dim);
  CondSignals<T> sig;
  if (cond_input) sig = cond_nets_forward(tape, p, cond_input);

  std::vector<NodeP<T>> skips;
  for (size_t i = 0; i < p.downs.size(); ++i) {
    const auto& lv = p.downs[i];
    for (const auto& r : lv.res) x = residual_block(tape, x, r, cfg, cfg.channels[i], temb);
    if (static_cast<int>(i) < cfg.cond_levels && !sig.cm.empty())
      x = cond_infuse(tape, x, sig.cm[i], sig.cb[i], sig.m[i]);
    skips.push_back(x);
    if (lv.has_down)
      x = tape.conv1d(x, tape.param(lv.down.K), tape.param(lv.down.b), /*stride=*/2);
  }
  for (const auto& r : p.mid) x = residual_block(tape, x, r, cfg, cfg.channels.back(), temb);
  for (size_t u = 0; u < p.ups.size(); ++u) {
    int level = cfg.levels() - 2 - static_cast<int>(u);
    x = tape.upsample_repeat2(x);
    x = tape.conv1d(x, tape.param(p.ups[u].upconv.K), tape.param(p.ups[u].upconv.b));
    x = tape.concat_lastdim({x, skips[static_cast<size_t>(level)]});
    for (const auto& r : p.ups[u].res)
      x = residual_block(tape, x, r, cfg, cfg.channels[static_cast<size_t>(level)], temb);
  }

  x = tape.conv1d(x, tape.param(p.head_conv.K), tape.param(p.head_conv.b));
  int groups = effective_groups(cfg.groups, cfg.channels[0]);
  x = tape.mish(tape.group_norm(x, groups, tape.param(p.head_gn.gamma),
                                tape.param(p.head_gn.beta)));
  x = tape.affine(x, tape.param(p.head_out.W), tape.param(p.head_out.b));

  if (cfg.variant == ArchVariant::cnn_only) x = tape.split_objects(x, O);
  return x;
}

}  // namespace ocdd::acnet
