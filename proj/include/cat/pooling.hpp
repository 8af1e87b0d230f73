#pragma once

#include <cat/autograd.hpp>

namespace cat {

enum class PoolMethod { Gap, Gmp, Gep };

/// Per-channel summary, N x C x 1 x 1.
template <typename T>
struct ChannelDescriptor {
  Tensor<T> values;
};

/// Per-pixel summary, N x 1 x H x W.
template <typename T>
struct SpatialDescriptor {
  Tensor<T> values;
};

// Entropy of the location distribution within each channel: softmax over
// H*W, then -sum p log p. Output N x C x 1 x 1, range [0, ln(H*W)].
template <typename T>
Var<T> channel_entropy_raw(Var<T> x) {
  auto p = softmax_along(x, {2, 3});
  return negate(sum_along(mul(p, log_clamped(p)), {2, 3}));
}

// Entropy of the channel distribution at each pixel: softmax over C,
// then -sum p log p. Output N x 1 x H x W, range [0, ln C].
template <typename T>
Var<T> spatial_entropy_raw(Var<T> x) {
  auto p = softmax_along(x, {1});
  return negate(sum_along(mul(p, log_clamped(p)), {1}));
}

namespace detail {

template <typename T>
Var<T> remap_signed(Var<T> v, bool signed_range) {
  if (!signed_range) return v;
  return add_scalar(scale(v, T(2)), T(-1));
}

}  // namespace detail

/// gap: spatial mean per channel. gmp: spatial max after a vertical 1-D
/// Gaussian prefilter (gaussian_k taps). gep: location entropy, min-max
/// scaled per sample across channels.
template <typename T>
Var<T> pool_channel(Var<T> x, PoolMethod method, int gaussian_k, bool signed_range = false,
                    T sigma = T(1)) {
  switch (method) {
    case PoolMethod::Gap:
      return mean_along(x, {2, 3});
    case PoolMethod::Gmp:
      return max_along(gaussian_filter(x, gaussian_k, GaussianMode::Vertical1D, sigma), {2, 3});
    case PoolMethod::Gep:
    default:
      return detail::remap_signed(minmax_normalize(channel_entropy_raw(x), {1}), signed_range);
  }
}

/// gap: channel mean per pixel. gmp: channel max after a 2-D Gaussian
/// prefilter. gep: channel entropy, min-max scaled per sample over H x W.
template <typename T>
Var<T> pool_spatial(Var<T> x, PoolMethod method, int gaussian_k, bool signed_range = false,
                    T sigma = T(1)) {
  switch (method) {
    case PoolMethod::Gap:
      return mean_along(x, {1});
    case PoolMethod::Gmp:
      return max_along(gaussian_filter(x, gaussian_k, GaussianMode::Full2D, sigma), {1});
    case PoolMethod::Gep:
    default:
      return detail::remap_signed(minmax_normalize(spatial_entropy_raw(x), {2, 3}), signed_range);
  }
}

template <typename T>
ChannelDescriptor<T> pool_channel(const Tensor<T>& x, PoolMethod method, int gaussian_k,
                                  bool signed_range = false, T sigma = T(1)) {
  Tape<T> tape;
  return {pool_channel(tape.leaf(x), method, gaussian_k, signed_range, sigma).value()};
}

template <typename T>
SpatialDescriptor<T> pool_spatial(const Tensor<T>& x, PoolMethod method, int gaussian_k,
                                  bool signed_range = false, T sigma = T(1)) {
  Tape<T> tape;
  return {pool_spatial(tape.leaf(x), method, gaussian_k, signed_range, sigma).value()};
}

}  // namespace cat
