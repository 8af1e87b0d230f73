#pragma once

#include <cat/pooling.hpp>

#include <cmath>
#include <random>
#include <string>

namespace cat {

/// Canonical: one sigmoid per branch, applied after scaling the raw score by
/// the softmax-normalized exterior weight, then the two gated copies of the
/// input are summed. Pseudocode: sigmoid first, exterior weights mix the two
/// gates into one multiplicative map.
enum class FusionVariant { Canonical, Pseudocode };

enum class AttentionMode {
  None,
  ChannelOnly,
  SpatialOnly,
  ChannelThenSpatial,
  SpatialThenChannel,
  FullCat,
};

struct CatConfig {
  int reduction = 16;
  int gaussian_k = 5;
  double sigma = 1.0;
  FusionVariant fusion = FusionVariant::Canonical;
  bool signed_normalize = false;
  bool gep_enabled = true;
};

inline int reduced_width(int channels, int reduction) {
  int r = static_cast<int>(std::lround(static_cast<double>(channels) / reduction));
  return std::max(1, r);
}

/// All learnable state of one block. Factors are scalars; the MLP is shared
/// across the three channel branches; conv7 is single-in single-out.
template <typename T>
struct CatParams {
  CatConfig cfg;
  int channels = 0;
  Parameter<T>* c_alpha = nullptr;
  Parameter<T>* c_beta = nullptr;
  Parameter<T>* c_gamma = nullptr;
  Parameter<T>* s_alpha = nullptr;
  Parameter<T>* s_beta = nullptr;
  Parameter<T>* s_gamma = nullptr;
  Parameter<T>* c_w = nullptr;
  Parameter<T>* s_w = nullptr;
  Parameter<T>* w1 = nullptr;
  Parameter<T>* w2 = nullptr;
  Parameter<T>* conv_w = nullptr;
  Parameter<T>* conv_b = nullptr;
};

namespace detail {

template <typename T>
Tensor<T> normal_init(const Shape& shape, T std_dev, std::mt19937& rng) {
  std::normal_distribution<double> dist(0.0, static_cast<double>(std_dev));
  Tensor<T> t(shape);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(dist(rng));
  return t;
}

}  // namespace detail

/// Interior factors start at `interior_init` (0 for the full block; the
/// frozen-at-1 setting yields the plain summed-branch variants). Exterior
/// factors and the conv bias always start at 0. Factors never weight-decay.
template <typename T>
CatParams<T> make_cat_params(ParamStore<T>& store, const std::string& prefix, int channels,
                             const CatConfig& cfg, std::mt19937& rng, T interior_init = T(0),
                             bool interior_trainable = true, bool exterior_trainable = true) {
  check(channels >= 1, "attention block needs at least one channel");
  CatParams<T> p;
  p.cfg = cfg;
  p.channels = channels;
  const int cr = reduced_width(channels, cfg.reduction);

  auto factor = [&](const char* name, T init, bool trainable) {
    return &store.create(prefix + "." + name, Tensor<T>::scalar(init), trainable, false);
  };
  p.c_alpha = factor("c_alpha", interior_init, interior_trainable);
  p.c_beta = factor("c_beta", interior_init, interior_trainable);
  p.c_gamma = factor("c_gamma", cfg.gep_enabled ? interior_init : T(0),
                     interior_trainable && cfg.gep_enabled);
  p.s_alpha = factor("s_alpha", interior_init, interior_trainable);
  p.s_beta = factor("s_beta", interior_init, interior_trainable);
  p.s_gamma = factor("s_gamma", cfg.gep_enabled ? interior_init : T(0),
                     interior_trainable && cfg.gep_enabled);
  p.c_w = factor("c_w", T(0), exterior_trainable);
  p.s_w = factor("s_w", T(0), exterior_trainable);

  p.w1 = &store.create(prefix + ".mlp_w1",
                       detail::normal_init<T>({cr, channels},
                                              std::sqrt(T(2) / T(channels)), rng));
  p.w2 = &store.create(prefix + ".mlp_w2",
                       detail::normal_init<T>({channels, cr}, std::sqrt(T(2) / T(cr)), rng));
  p.conv_w = &store.create(prefix + ".conv7_w",
                           detail::normal_init<T>({1, 1, 7, 7}, std::sqrt(T(2) / T(49)), rng));
  p.conv_b = &store.create(prefix + ".conv7_b", Tensor<T>({1}));
  return p;
}

/// Tape handles for one forward pass of a block.
template <typename T>
struct CatVars {
  Var<T> c_alpha, c_beta, c_gamma, s_alpha, s_beta, s_gamma;
  Var<T> c_w, s_w, w1, w2, conv_w, conv_b;
};

template <typename T>
CatVars<T> lift_cat(Tape<T>& t, CatParams<T>& p) {
  return {t.param(*p.c_alpha), t.param(*p.c_beta),  t.param(*p.c_gamma), t.param(*p.s_alpha),
          t.param(*p.s_beta),  t.param(*p.s_gamma), t.param(*p.c_w),     t.param(*p.s_w),
          t.param(*p.w1),      t.param(*p.w2),      t.param(*p.conv_w),  t.param(*p.conv_b)};
}

namespace detail {

// Shared two-layer bottleneck applied to an N x C x 1 x 1 descriptor.
template <typename T>
Var<T> shared_mlp(Var<T> d, const CatVars<T>& v) {
  const Shape s = d.shape();
  auto flat = reshape(d, {s[0], s[1]});
  auto h = relu(linear(flat, v.w1));
  return reshape(linear(h, v.w2), s);
}

}  // namespace detail

/// Pre-sigmoid channel score: the three pooled descriptors each pass through
/// the shared MLP, then combine with the interior factors.
template <typename T>
Var<T> channel_attention(Var<T> x, const CatVars<T>& v, const CatParams<T>& p) {
  check(x.shape().size() == 4 && x.shape()[1] == p.channels,
        "channel_attention: input " + shape_str(x.shape()) + " does not carry " +
            std::to_string(p.channels) + " channels");
  const T sigma = static_cast<T>(p.cfg.sigma);
  auto avg = pool_channel(x, PoolMethod::Gap, p.cfg.gaussian_k, false, sigma);
  auto mx = pool_channel(x, PoolMethod::Gmp, p.cfg.gaussian_k, false, sigma);
  auto score = add(mul(detail::shared_mlp(avg, v), v.c_alpha),
                   mul(detail::shared_mlp(mx, v), v.c_beta));
  if (p.cfg.gep_enabled) {
    auto ent = pool_channel(x, PoolMethod::Gep, p.cfg.gaussian_k, p.cfg.signed_normalize, sigma);
    score = add(score, mul(detail::shared_mlp(ent, v), v.c_gamma));
  }
  return score;
}

/// Pre-sigmoid spatial score: -avg, +max, +ent weighted by interior factors,
/// then the 7x7 single-channel conv (padding 3).
template <typename T>
Var<T> spatial_attention(Var<T> x, const CatVars<T>& v, const CatParams<T>& p) {
  const T sigma = static_cast<T>(p.cfg.sigma);
  auto avg = pool_spatial(x, PoolMethod::Gap, p.cfg.gaussian_k, false, sigma);
  auto mx = pool_spatial(x, PoolMethod::Gmp, p.cfg.gaussian_k, false, sigma);
  auto comb = add(mul(negate(avg), v.s_alpha), mul(mx, v.s_beta));
  if (p.cfg.gep_enabled) {
    auto ent = pool_spatial(x, PoolMethod::Gep, p.cfg.gaussian_k, p.cfg.signed_normalize, sigma);
    comb = add(comb, mul(ent, v.s_gamma));
  }
  return conv2d(comb, v.conv_w, &v.conv_b, Padding::same(3));
}

template <typename T>
struct CatForward {
  Var<T> refined;
  Var<T> channel_map, spatial_map;  // per-branch gates, entries in (0,1)
  Var<T> w_c, w_s;                  // exterior softmax weights, scalars
  Var<T> c_raw, s_raw;              // pre-sigmoid scores
};

/// Full block. The exterior 2-way softmax is computed as sigmoids of the
/// coordinate difference, so w_c + w_s = 1 holds by construction.
template <typename T>
CatForward<T> cat_forward(Var<T> x, const CatVars<T>& v, const CatParams<T>& p) {
  CatForward<T> out;
  out.c_raw = channel_attention(x, v, p);
  out.s_raw = spatial_attention(x, v, p);
  out.w_c = sigmoid(sub(v.c_w, v.s_w));
  out.w_s = sigmoid(sub(v.s_w, v.c_w));
  if (p.cfg.fusion == FusionVariant::Canonical) {
    out.channel_map = sigmoid(mul(out.c_raw, out.w_c));
    out.spatial_map = sigmoid(mul(out.s_raw, out.w_s));
    out.refined = add(mul(x, out.channel_map), mul(x, out.spatial_map));
  } else {
    out.channel_map = sigmoid(out.c_raw);
    out.spatial_map = sigmoid(out.s_raw);
    auto gate = add(mul(out.channel_map, out.w_c), mul(out.spatial_map, out.w_s));
    out.refined = mul(x, gate);
  }
  return out;
}

/// Table-row variants. Sequential modes recompute the second score on the
/// already-gated tensor; single modes drop the exterior weighting entirely.
template <typename T>
Var<T> ablation_variant(Var<T> x, const CatVars<T>& v, const CatParams<T>& p, AttentionMode mode) {
  switch (mode) {
    case AttentionMode::None:
      return x;
    case AttentionMode::ChannelOnly:
      return mul(x, sigmoid(channel_attention(x, v, p)));
    case AttentionMode::SpatialOnly:
      return mul(x, sigmoid(spatial_attention(x, v, p)));
    case AttentionMode::ChannelThenSpatial: {
      auto y = mul(x, sigmoid(channel_attention(x, v, p)));
      return mul(y, sigmoid(spatial_attention(y, v, p)));
    }
    case AttentionMode::SpatialThenChannel: {
      auto y = mul(x, sigmoid(spatial_attention(x, v, p)));
      return mul(y, sigmoid(channel_attention(y, v, p)));
    }
    case AttentionMode::FullCat:
    default:
      return cat_forward(x, v, p).refined;
  }
}

/// Tensor-level result retained for tests and attention-map export.
template <typename T>
struct AttentionOutput {
  Tensor<T> refined;
  Tensor<T> channel_map;  // N x C x 1 x 1
  Tensor<T> spatial_map;  // N x 1 x H x W
  Tensor<T> c_avg, c_max, c_ent;  // N x C x 1 x 1
  Tensor<T> s_avg, s_max, s_ent;  // N x 1 x H x W
};

template <typename T>
AttentionOutput<T> cat_forward(const Tensor<T>& x, CatParams<T>& p) {
  Tape<T> t;
  auto xv = t.leaf(x);
  auto v = lift_cat(t, p);
  auto fwd = cat_forward(xv, v, p);
  const T sigma = static_cast<T>(p.cfg.sigma);
  AttentionOutput<T> out;
  out.refined = fwd.refined.value();
  out.channel_map = fwd.channel_map.value();
  out.spatial_map = fwd.spatial_map.value();
  out.c_avg = pool_channel(x, PoolMethod::Gap, p.cfg.gaussian_k, false, sigma).values;
  out.c_max = pool_channel(x, PoolMethod::Gmp, p.cfg.gaussian_k, false, sigma).values;
  out.s_avg = pool_spatial(x, PoolMethod::Gap, p.cfg.gaussian_k, false, sigma).values;
  out.s_max = pool_spatial(x, PoolMethod::Gmp, p.cfg.gaussian_k, false, sigma).values;
  if (p.cfg.gep_enabled) {
    out.c_ent = pool_channel(x, PoolMethod::Gep, p.cfg.gaussian_k, p.cfg.signed_normalize, sigma)
                    .values;
    out.s_ent = pool_spatial(x, PoolMethod::Gep, p.cfg.gaussian_k, p.cfg.signed_normalize, sigma)
                    .values;
  } else {
    out.c_ent = Tensor<T>(out.c_avg.shape());
    out.s_ent = Tensor<T>(out.s_avg.shape());
  }
  return out;
}

}  // namespace cat
