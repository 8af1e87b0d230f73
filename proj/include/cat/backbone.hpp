#pragma once

#include <cat/attention.hpp>

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace cat {

struct ModelSpec {
  std::vector<int> stage_widths{16, 32, 64};
  int blocks_per_stage = 3;
  int num_classes = 10;
  int in_channels = 3;
  int image_size = 32;
  AttentionMode attention = AttentionMode::FullCat;
  // trainable-from-zero interior factors; false freezes them at 1, giving the
  // plain summed-branch ("exterior only") variant
  bool interior_factors = true;
  CatConfig cat;
};

inline void validate_spec(const ModelSpec& spec) {
  check(!spec.stage_widths.empty(), "model needs at least one stage");
  int prev = 0;
  for (int w : spec.stage_widths) {
    check(w >= 1, "stage widths must be positive");
    check(w >= prev, "stage widths must be nondecreasing");
    prev = w;
  }
  check(spec.blocks_per_stage >= 1, "blocks_per_stage must be >= 1");
  check(spec.num_classes >= 2, "need at least two classes");
  check(spec.in_channels >= 1 && spec.image_size >= 1, "bad input geometry");
}

template <typename T>
struct BatchNorm {
  Parameter<T>* gamma = nullptr;
  Parameter<T>* beta = nullptr;
  Parameter<T>* running_mean = nullptr;
  Parameter<T>* running_var = nullptr;
};

template <typename T>
struct ResidualBlock {
  std::string name;
  int stride = 1;
  Parameter<T>* conv1_w = nullptr;
  Parameter<T>* conv2_w = nullptr;
  BatchNorm<T> bn1, bn2;
  Parameter<T>* proj_w = nullptr;  // 1x1 projection when geometry changes
  BatchNorm<T> bnp;
  std::optional<CatParams<T>> cat;
};

template <typename T>
struct Model {
  ModelSpec spec;
  ParamStore<T> store;
  Parameter<T>* stem_w = nullptr;
  BatchNorm<T> stem_bn;
  std::vector<ResidualBlock<T>> blocks;
  Parameter<T>* fc_w = nullptr;
  Parameter<T>* fc_b = nullptr;

  std::vector<std::string> cat_block_names() const {
    std::vector<std::string> names;
    for (const auto& b : blocks)
      if (b.cat) names.push_back(b.name);
    return names;
  }
};

namespace detail {

template <typename T>
BatchNorm<T> make_batchnorm(ParamStore<T>& store, const std::string& prefix, int c) {
  BatchNorm<T> bn;
  bn.gamma = &store.create(prefix + ".gamma", Tensor<T>::full({1, c, 1, 1}, T(1)), true, false);
  bn.beta = &store.create(prefix + ".beta", Tensor<T>({1, c, 1, 1}), true, false);
  bn.running_mean = &store.create(prefix + ".running_mean", Tensor<T>({1, c, 1, 1}), false, false);
  bn.running_var =
      &store.create(prefix + ".running_var", Tensor<T>::full({1, c, 1, 1}, T(1)), false, false);
  return bn;
}

template <typename T>
Parameter<T>* make_conv(ParamStore<T>& store, const std::string& name, int cout, int cin, int k,
                        std::mt19937& rng) {
  T std_dev = std::sqrt(T(2) / T(cin * k * k));
  return &store.create(name, normal_init<T>({cout, cin, k, k}, std_dev, rng));
}

}  // namespace detail

template <typename T>
Model<T> build_model(const ModelSpec& spec, std::uint64_t seed) {
  validate_spec(spec);
  Model<T> m;
  m.spec = spec;
  std::mt19937 rng(static_cast<std::uint32_t>(seed ^ (seed >> 32)));

  const int w0 = spec.stage_widths[0];
  m.stem_w = detail::make_conv(m.store, "stem.conv_w", w0, spec.in_channels, 3, rng);
  m.stem_bn = detail::make_batchnorm(m.store, "stem.bn", w0);

  const bool interior_train = spec.attention == AttentionMode::FullCat && spec.interior_factors;
  const T interior_init = interior_train ? T(0) : T(1);
  const bool exterior_train = spec.attention == AttentionMode::FullCat;

  int cin = w0;
  for (size_t s = 0; s < spec.stage_widths.size(); ++s) {
    const int width = spec.stage_widths[s];
    for (int b = 0; b < spec.blocks_per_stage; ++b) {
      ResidualBlock<T> blk;
      blk.name = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1);
      blk.stride = (s > 0 && b == 0) ? 2 : 1;
      blk.conv1_w = detail::make_conv(m.store, blk.name + ".conv1_w", width, cin, 3, rng);
      blk.bn1 = detail::make_batchnorm(m.store, blk.name + ".bn1", width);
      blk.conv2_w = detail::make_conv(m.store, blk.name + ".conv2_w", width, width, 3, rng);
      blk.bn2 = detail::make_batchnorm(m.store, blk.name + ".bn2", width);
      if (blk.stride != 1 || cin != width) {
        blk.proj_w = detail::make_conv(m.store, blk.name + ".proj_w", width, cin, 1, rng);
        blk.bnp = detail::make_batchnorm(m.store, blk.name + ".bnp", width);
      }
      if (spec.attention != AttentionMode::None) {
        blk.cat = make_cat_params(m.store, blk.name + ".cat", width, spec.cat, rng, interior_init,
                                  interior_train, exterior_train);
      }
      m.blocks.push_back(std::move(blk));
      cin = width;
    }
  }

  const int wlast = spec.stage_widths.back();
  m.fc_w = &m.store.create("head.fc_w",
                           detail::normal_init<T>({spec.num_classes, wlast},
                                                  std::sqrt(T(2) / T(wlast)), rng));
  m.fc_b = &m.store.create("head.fc_b", Tensor<T>({spec.num_classes}));
  return m;
}

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.9;

/// Training mode normalizes with per-batch statistics (biased variance) and
/// folds them into the running averages; eval mode reads the running buffers.
template <typename T>
Var<T> batchnorm_forward(Tape<T>& t, Var<T> x, BatchNorm<T>& bn, bool training) {
  auto gamma = t.param(*bn.gamma);
  auto beta = t.param(*bn.beta);
  const T eps = static_cast<T>(kBnEps);
  if (training) {
    auto mean = mean_along(x, {0, 2, 3});
    auto centered = sub(x, mean);
    auto var = mean_along(mul(centered, centered), {0, 2, 3});
    const T mom = static_cast<T>(kBnMomentum);
    bn.running_mean->value =
        add(scale(bn.running_mean->value, mom), scale(mean.value(), T(1) - mom));
    bn.running_var->value =
        add(scale(bn.running_var->value, mom), scale(var.value(), T(1) - mom));
    return add(mul(mul(centered, rsqrt(add_scalar(var, eps))), gamma), beta);
  }
  auto rm = t.leaf(bn.running_mean->value);
  auto rv = t.leaf(bn.running_var->value);
  return add(mul(mul(sub(x, rm), rsqrt(add_scalar(rv, eps))), gamma), beta);
}

/// Feature maps feeding each CAT block, captured for attention-map export.
template <typename T>
using FeatureTaps = std::vector<std::pair<std::string, Tensor<T>>>;

template <typename T>
Var<T> block_forward(Tape<T>& t, ResidualBlock<T>& blk, Var<T> x, AttentionMode mode,
                     bool training, FeatureTaps<T>* taps = nullptr) {
  auto h = relu(batchnorm_forward(t, conv2d(x, t.param(*blk.conv1_w), nullptr, Padding::same(1),
                                            Stride{blk.stride, blk.stride}),
                                  blk.bn1, training));
  h = batchnorm_forward(
      t, conv2d(h, t.param(*blk.conv2_w), nullptr, Padding::same(1)), blk.bn2, training);
  if (blk.cat && mode != AttentionMode::None) {
    if (taps) taps->push_back({blk.name, h.value()});
    auto v = lift_cat(t, *blk.cat);
    h = ablation_variant(h, v, *blk.cat, mode);
  }
  Var<T> skip = x;
  if (blk.proj_w) {
    skip = batchnorm_forward(t, conv2d(x, t.param(*blk.proj_w), nullptr, Padding{},
                                       Stride{blk.stride, blk.stride}),
                             blk.bnp, training);
  }
  return relu(add(h, skip));
}

template <typename T>
Var<T> model_forward(Tape<T>& t, Model<T>& m, const Tensor<T>& batch, bool training,
                     FeatureTaps<T>* taps = nullptr) {
  check(batch.rank() == 4 && batch.extent(1) == m.spec.in_channels &&
            batch.extent(2) == m.spec.image_size && batch.extent(3) == m.spec.image_size,
        "model_forward: input " + shape_str(batch.shape()) + " does not match expected [Nx" +
            std::to_string(m.spec.in_channels) + "x" + std::to_string(m.spec.image_size) + "x" +
            std::to_string(m.spec.image_size) + "]");
  auto h = relu(batchnorm_forward(
      t, conv2d(t.leaf(batch), t.param(*m.stem_w), nullptr, Padding::same(1)), m.stem_bn,
      training));
  for (auto& blk : m.blocks) h = block_forward(t, blk, h, m.spec.attention, training, taps);
  auto pooled = mean_along(h, {2, 3});
  auto flat = reshape(pooled, {batch.extent(0), m.spec.stage_widths.back()});
  auto bias = t.param(*m.fc_b);
  return linear(flat, t.param(*m.fc_w), &bias);
}

}  // namespace cat
