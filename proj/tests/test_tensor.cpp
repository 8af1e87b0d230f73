#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cat/tensor.hpp>

#include <cmath>
#include <random>

#include "oracle.hpp"

using cat::Tensor;

namespace {

template <typename T>
Tensor<T> random_tensor(const cat::Shape& shape, std::mt19937& rng, T lo = T(-1), T hi = T(1)) {
  std::uniform_real_distribution<T> dist(lo, hi);
  Tensor<T> t(shape);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
  return t;
}

}  // namespace

TEST_CASE("tensor construction and validation") {
  Tensor<float> t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t[5] == 0.0f);

  CHECK_THROWS_AS(Tensor<float>({2, 0}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor<float>({2, 2}, {1.f, 2.f, 3.f}), std::invalid_argument);

  auto f = Tensor<double>::full({2, 2}, 1.5);
  for (std::int64_t i = 0; i < 4; ++i) CHECK(f[i] == 1.5);

  auto r = f.reshaped({4});
  CHECK(r.shape() == cat::Shape{4});
  CHECK_THROWS_AS(f.reshaped({3}), std::invalid_argument);
}

TEST_CASE("broadcast add matches explicit tiling") {
  std::mt19937 rng(11);
  Tensor<float> a = random_tensor<float>({2, 3, 4, 5}, rng);
  Tensor<float> b = random_tensor<float>({2, 3, 1, 1}, rng);
  Tensor<float> c = random_tensor<float>({2, 1, 4, 5}, rng);

  auto tiled_b = oracle::tile_to(b, a.shape());
  auto tiled_c = oracle::tile_to(c, a.shape());

  auto ab = cat::add(a, b);
  auto ac = cat::mul(a, c);
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    CHECK(ab[i] == a[i] + tiled_b[i]);
    CHECK(ac[i] == a[i] * tiled_c[i]);
  }

  Tensor<float> s = Tensor<float>::scalar(2.0f);
  auto as = cat::mul(a, s);
  for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(as[i] == 2.0f * a[i]);

  Tensor<float> bad({2, 3, 2, 5});
  CHECK_THROWS_AS(cat::add(a, bad), std::invalid_argument);
}

TEST_CASE("broadcast against random shapes matches tiling oracle") {
  std::mt19937 rng(29);
  std::uniform_int_distribution<int> ext(1, 4);
  std::bernoulli_distribution squash(0.5);
  for (int trial = 0; trial < 100; ++trial) {
    cat::Shape full(4), reduced(4);
    for (int d = 0; d < 4; ++d) {
      full[static_cast<size_t>(d)] = ext(rng);
      reduced[static_cast<size_t>(d)] = squash(rng) ? 1 : full[static_cast<size_t>(d)];
    }
    auto a = random_tensor<float>(full, rng);
    auto b = random_tensor<float>(reduced, rng);
    auto got = cat::add(a, b);
    auto want = oracle::tile_to(b, full);
    for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(got[i] == a[i] + want[i]);
  }
}

TEST_CASE("elementwise unary ops") {
  CHECK(cat::sigmoid(Tensor<double>::scalar(0.0))[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(cat::sigmoid(Tensor<double>::scalar(100.0))[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cat::sigmoid(Tensor<double>::scalar(-100.0))[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::isfinite(cat::sigmoid(Tensor<float>::scalar(-1e30f))[0]));

  Tensor<float> x({3}, {-1.f, 0.f, 2.f});
  auto r = cat::relu(x);
  CHECK(r[0] == 0.f);
  CHECK(r[1] == 0.f);
  CHECK(r[2] == 2.f);

  // log is clamped away from zero
  auto lg = cat::log_clamped(Tensor<double>({2}, {0.0, 1.0}));
  CHECK(lg[0] == doctest::Approx(std::log(1e-12)));
  CHECK(lg[1] == 0.0);
}

TEST_CASE("reductions: values and arg indices") {
  Tensor<float> x({1, 1, 2, 2}, {1.f, 2.f, 3.f, 4.f});
  auto mean = cat::reduce_along(x, {2, 3}, cat::ReduceKind::Mean);
  CHECK(mean.values.shape() == cat::Shape{1, 1, 1, 1});
  CHECK(mean.values[0] == doctest::Approx(2.5f));

  auto mx = cat::reduce_along(x, {2, 3}, cat::ReduceKind::Max);
  CHECK(mx.values[0] == 4.f);
  CHECK(mx.arg[0] == 3);

  // ties resolve to the first flat offset
  Tensor<float> tie({1, 1, 1, 4}, {7.f, 7.f, 3.f, 7.f});
  auto tm = cat::reduce_along(tie, {3}, cat::ReduceKind::Max);
  CHECK(tm.arg[0] == 0);

  auto mn = cat::reduce_along(x, {1, 2, 3}, cat::ReduceKind::Min);
  CHECK(mn.values[0] == 1.f);

  // reduction over channel axis keeps spatial layout
  Tensor<float> y({1, 2, 1, 2}, {1.f, 5.f, 10.f, 2.f});
  auto cm = cat::reduce_along(y, {1}, cat::ReduceKind::Max);
  CHECK(cm.values.shape() == cat::Shape{1, 1, 1, 2});
  CHECK(cm.values[0] == 10.f);
  CHECK(cm.values[1] == 5.f);
}

TEST_CASE("reductions against loop oracles over random draws") {
  std::mt19937 rng(37);
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_int_distribution<int> ext(1, 5);
    cat::Shape sh{ext(rng), ext(rng), ext(rng), ext(rng)};
    auto x = random_tensor<double>(sh, rng);

    auto got_sm = cat::reduce_along(x, {2, 3}, cat::ReduceKind::Mean).values;
    auto want_sm = oracle::spatial_mean(x);
    CHECK(oracle::max_abs_diff(got_sm, want_sm) < 1e-12);

    auto got_sx = cat::reduce_along(x, {2, 3}, cat::ReduceKind::Max).values;
    auto want_sx = oracle::spatial_max(x);
    CHECK(oracle::max_abs_diff(got_sx, want_sx) == 0.0);

    auto got_cm = cat::reduce_along(x, {1}, cat::ReduceKind::Mean).values;
    auto want_cm = oracle::channel_mean(x);
    CHECK(oracle::max_abs_diff(got_cm, want_cm) < 1e-12);

    auto got_cx = cat::reduce_along(x, {1}, cat::ReduceKind::Max).values;
    auto want_cx = oracle::channel_max(x);
    CHECK(oracle::max_abs_diff(got_cx, want_cx) == 0.0);
  }
}

TEST_CASE("softmax basics") {
  Tensor<double> x({1, 1, 1, 2}, {0.0, std::log(3.0)});
  auto sm = cat::softmax_along(x, {3});
  CHECK(sm.probs[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(sm.probs[1] == doctest::Approx(0.75).epsilon(1e-12));

  // uniform input, uniform probabilities
  auto u = cat::softmax_along(Tensor<double>::full({1, 4, 1, 1}, 3.0), {1});
  for (int i = 0; i < 4; ++i) CHECK(u.probs[i] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("softmax shift invariance") {
  std::mt19937 rng(43);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_tensor<double>({2, 3, 4, 4}, rng, -5.0, 5.0);
    auto shifted = cat::add_scalar(x, 1000.0);
    auto a = cat::softmax_along(x, {2, 3});
    auto b = cat::softmax_along(shifted, {2, 3});
    CHECK(oracle::max_abs_diff(a.probs, b.probs) < 1e-7);

    // probabilities sum to one per slice
    auto sums = cat::reduce_along(a.probs, {2, 3}, cat::ReduceKind::Sum).values;
    for (std::int64_t i = 0; i < sums.numel(); ++i) CHECK(sums[i] == doctest::Approx(1.0).epsilon(1e-9));

    // 32-bit keeps the same property at its own precision
    auto xf = random_tensor<float>({2, 3, 4, 4}, rng, -5.f, 5.f);
    auto af = cat::softmax_along(xf, {2, 3});
    auto bf = cat::softmax_along(cat::add_scalar(xf, 1000.f), {2, 3});
    CHECK(oracle::max_abs_diff(af.probs, bf.probs) < 1e-4f);
  }
}

TEST_CASE("softmax survives large magnitudes") {
  Tensor<float> x({1, 1, 1, 3}, {1e4f, 1e4f, -1e4f});
  auto sm = cat::softmax_along(x, {3});
  CHECK(sm.probs.all_finite());
  CHECK(sm.probs[0] == doctest::Approx(0.5f));
  CHECK(sm.probs[2] == doctest::Approx(0.0f));
}

TEST_CASE("minmax normalization") {
  Tensor<float> x({1, 1, 1, 3}, {2.f, 4.f, 6.f});
  auto n = cat::minmax_normalize(x, {3});
  CHECK(n[0] == doctest::Approx(0.0f));
  CHECK(n[1] == doctest::Approx(0.5f));
  CHECK(n[2] == doctest::Approx(1.0f));

  // constant slice maps to zeros rather than dividing by zero
  auto z = cat::minmax_normalize(Tensor<float>::full({1, 1, 1, 3}, 5.f), {3});
  for (int i = 0; i < 3; ++i) CHECK(z[i] == 0.0f);
}

TEST_CASE("minmax normalization is idempotent") {
  std::mt19937 rng(51);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_tensor<float>({2, 3, 3, 3}, rng, -4.f, 4.f);
    auto once = cat::minmax_normalize(x, {2, 3});
    auto twice = cat::minmax_normalize(once, {2, 3});
    CHECK(oracle::max_abs_diff(once, twice) < 1e-7f);
    for (std::int64_t i = 0; i < once.numel(); ++i) {
      CHECK(once[i] >= 0.0f);
      CHECK(once[i] <= 1.0f);
    }
  }
}

TEST_CASE("linear layer matches loop oracle") {
  std::mt19937 rng(57);
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_int_distribution<int> ext(1, 8);
    int n = ext(rng), cin = ext(rng), cout = ext(rng);
    auto x = random_tensor<double>({n, cin}, rng);
    auto w = random_tensor<double>({cout, cin}, rng);
    auto b = random_tensor<double>({cout}, rng);
    auto got = cat::linear(x, w, &b);
    auto want = oracle::linear(x, w, &b);
    CHECK(oracle::max_abs_diff(got, want) < 1e-12);

    auto got_nb = cat::linear(x, w, nullptr);
    auto want_nb = oracle::linear(x, w, nullptr);
    CHECK(oracle::max_abs_diff(got_nb, want_nb) < 1e-12);
  }
}

TEST_CASE("conv2d hand values") {
  // all-ones 3x3 input, all-ones 3x3 kernel, valid padding: single output 9
  auto in = Tensor<float>::full({1, 1, 3, 3}, 1.f);
  auto k = Tensor<float>::full({1, 1, 3, 3}, 1.f);
  auto out = cat::conv2d(in, k, nullptr, {}, {});
  CHECK(out.shape() == cat::Shape{1, 1, 1, 1});
  CHECK(out[0] == doctest::Approx(9.f));

  // 1x1 identity kernel reproduces the input
  std::mt19937 rng(63);
  auto x = random_tensor<float>({2, 3, 4, 4}, rng);
  Tensor<float> eye({3, 3, 1, 1});
  for (int o = 0; o < 3; ++o) eye[o * 3 + o] = 1.f;
  auto idp = cat::conv2d(x, eye, nullptr, {}, {});
  CHECK(oracle::max_abs_diff(idp, x) == 0.0f);

  // bias shows up once per output element
  auto b = Tensor<float>({1}, {0.5f});
  auto outb = cat::conv2d(in, k, &b, {}, {});
  CHECK(outb[0] == doctest::Approx(9.5f));
}

TEST_CASE("conv2d shape errors carry both shapes") {
  auto in = Tensor<float>::full({1, 2, 3, 3}, 1.f);
  auto k = Tensor<float>::full({1, 3, 3, 3}, 1.f);
  CHECK_THROWS_WITH_AS(cat::conv2d(in, k, nullptr, {}, {}),
                       doctest::Contains("channel"), std::invalid_argument);
  auto ktall = Tensor<float>::full({1, 2, 5, 5}, 1.f);
  CHECK_THROWS_AS(cat::conv2d(in, ktall, nullptr, {}, {}), std::invalid_argument);
}

TEST_CASE("conv2d matches loop oracle over random draws") {
  std::mt19937 rng(71);
  std::uniform_int_distribution<int> nd(1, 3), cd(1, 4), hw(3, 7), kd(0, 1), sd(1, 2);
  for (int trial = 0; trial < 100; ++trial) {
    int n = nd(rng), ci = cd(rng), co = cd(rng);
    int h = hw(rng), w = hw(rng);
    int kk = kd(rng) ? 3 : 1;
    cat::Padding pad = kd(rng) ? cat::Padding::same(kk / 2) : cat::Padding{};
    cat::Stride st{sd(rng), sd(rng)};
    if (h + pad.top + pad.bottom < kk || w + pad.left + pad.right < kk) continue;
    auto x = random_tensor<double>({n, ci, h, w}, rng);
    auto k = random_tensor<double>({co, ci, kk, kk}, rng);
    auto b = random_tensor<double>({co}, rng);
    auto got = cat::conv2d(x, k, &b, pad, st);
    auto want = oracle::conv2d(x, k, &b, pad, st);
    REQUIRE(got.shape() == want.shape());
    CHECK(oracle::max_abs_diff(got, want) < 1e-5);
  }
}

TEST_CASE("gaussian kernel values") {
  auto k5 = cat::gaussian_kernel<double>(5, 1.0);
  const double want[5] = {0.05449, 0.24420, 0.40262, 0.24420, 0.05449};
  double sum = 0.0;
  for (int i = 0; i < 5; ++i) {
    CHECK(k5[static_cast<size_t>(i)] == doctest::Approx(want[i]).epsilon(1e-3));
    sum += k5[static_cast<size_t>(i)];
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(k5[0] == k5[4]);
  CHECK(k5[1] == k5[3]);

  CHECK_THROWS_AS(cat::gaussian_kernel<double>(4, 1.0), std::invalid_argument);
}

TEST_CASE("gaussian filter identity and modes") {
  std::mt19937 rng(83);
  auto x = random_tensor<float>({2, 3, 5, 5}, rng);

  // k=1 is the identity
  auto same1 = cat::gaussian_filter(x, 1, cat::GaussianMode::Full2D);
  CHECK(oracle::max_abs_diff(same1, x) == 0.0f);
  auto same2 = cat::gaussian_filter(x, 1, cat::GaussianMode::Vertical1D);
  CHECK(oracle::max_abs_diff(same2, x) == 0.0f);

  // vertical mode leaves each column-constant field unchanged
  Tensor<float> colconst({1, 1, 4, 3});
  for (int y = 0; y < 4; ++y)
    for (int xx = 0; xx < 3; ++xx) colconst.at4(0, 0, y, xx) = static_cast<float>(xx);
  auto v = cat::gaussian_filter(colconst, 5, cat::GaussianMode::Vertical1D);
  CHECK(oracle::max_abs_diff(v, colconst) < 1e-6f);
}

TEST_CASE("gaussian filter matches direct-kernel oracle") {
  std::mt19937 rng(89);
  std::uniform_int_distribution<int> hw(2, 9), cd(1, 3);
  for (int trial = 0; trial < 100; ++trial) {
    auto x = random_tensor<double>({2, cd(rng), hw(rng), hw(rng)}, rng);
    for (int k : {3, 5}) {
      auto got2 = cat::gaussian_filter(x, k, cat::GaussianMode::Full2D);
      auto want2 = oracle::gaussian_filter(x, k, true, 1.0);
      CHECK(oracle::max_abs_diff(got2, want2) < 1e-12);

      auto got1 = cat::gaussian_filter(x, k, cat::GaussianMode::Vertical1D);
      auto want1 = oracle::gaussian_filter(x, k, false, 1.0);
      CHECK(oracle::max_abs_diff(got1, want1) < 1e-12);
    }
  }
}

TEST_CASE("gaussian filter preserves constants") {
  auto c = Tensor<double>::full({1, 2, 6, 7}, 3.25);
  for (auto mode : {cat::GaussianMode::Full2D, cat::GaussianMode::Vertical1D}) {
    auto y = cat::gaussian_filter(c, 5, mode);
    for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(3.25).epsilon(1e-12));
  }
}

TEST_CASE("gaussian filter preserves channel means of ramps") {
  Tensor<float> ramp({1, 2, 8, 8});
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x)
        ramp.at4(0, c, y, x) = static_cast<float>(c == 0 ? y : x) * 0.5f + 1.f;
  for (auto mode : {cat::GaussianMode::Full2D, cat::GaussianMode::Vertical1D}) {
    auto filtered = cat::gaussian_filter(ramp, 5, mode);
    auto m0 = cat::reduce_along(ramp, {2, 3}, cat::ReduceKind::Mean).values;
    auto m1 = cat::reduce_along(filtered, {2, 3}, cat::ReduceKind::Mean).values;
    CHECK(oracle::max_abs_diff(m0, m1) < 1e-4f);
  }
}

TEST_CASE("slice indexer rejects bad axes") {
  Tensor<float> x({2, 3, 4, 5});
  CHECK_THROWS_AS(cat::reduce_along(x, {4}, cat::ReduceKind::Sum), std::invalid_argument);
  CHECK_THROWS_AS(cat::reduce_along(x, {1, 1}, cat::ReduceKind::Sum), std::invalid_argument);
  CHECK_THROWS_AS(cat::reduce_along(x, {}, cat::ReduceKind::Sum), std::invalid_argument);
}
