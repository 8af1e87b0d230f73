#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace cat {

using Shape = std::vector<int>;
using AxisSet = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int e : s) n *= e;
  return n;
}

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

/// Dense tensor in canonical N,C,H,W axis order. Lower ranks carry a suffix
/// of that order. Data is contiguous, row-major in the given shape.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(static_cast<size_t>(shape_numel(shape_)), T(0));
  }

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    check(static_cast<std::int64_t>(data_.size()) == shape_numel(shape_),
          "tensor data length " + std::to_string(data_.size()) +
              " does not match shape " + shape_str(shape_));
  }

  static Tensor full(Shape shape, T v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  static Tensor from(std::initializer_list<T> vals, Shape shape = {}) {
    std::vector<T> d(vals);
    if (shape.empty()) shape = {static_cast<int>(d.size())};
    return Tensor(std::move(shape), std::move(d));
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int extent(int axis) const { return shape_[static_cast<size_t>(axis)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

  T& at4(int n, int c, int h, int w) {
    return data_[static_cast<size_t>(((static_cast<std::int64_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  const T& at4(int n, int c, int h, int w) const {
    return const_cast<Tensor*>(this)->at4(n, c, h, w);
  }

  /// Same data, new shape; element counts must agree.
  Tensor reshaped(Shape shape) const {
    check(shape_numel(shape) == numel(),
          "reshape " + shape_str(shape_) + " -> " + shape_str(shape) +
              " changes element count");
    return Tensor(std::move(shape), data_);
  }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  using ArrayMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
  using ConstArrayMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;
  ArrayMap array() { return ArrayMap(data_.data(), static_cast<Eigen::Index>(data_.size())); }
  ConstArrayMap array() const { return ConstArrayMap(data_.data(), static_cast<Eigen::Index>(data_.size())); }

 private:
  void validate_shape() const {
    check(!shape_.empty(), "tensor rank must be >= 1");
    for (int e : shape_)
      check(e >= 1, "tensor extents must be >= 1, got " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<T> data_;
};

// ---------------------------------------------------------------------------
// Broadcasting
// ---------------------------------------------------------------------------

// A 1-element tensor broadcasts against anything; otherwise ranks must match
// and each axis pair must be equal or contain a 1.
inline bool broadcast_compatible(const Shape& a, const Shape& b) {
  if (shape_numel(a) == 1 || shape_numel(b) == 1) return true;
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i] && a[i] != 1 && b[i] != 1) return false;
  return true;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  if (shape_numel(a) == 1) return b;
  if (shape_numel(b) == 1) return a;
  Shape out(a.size());
  for (size_t i = 0; i < a.size(); ++i) out[i] = std::max(a[i], b[i]);
  return out;
}

namespace detail {

inline std::vector<std::int64_t> row_major_strides(const Shape& s) {
  std::vector<std::int64_t> st(s.size());
  std::int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[static_cast<size_t>(i)] = acc;
    acc *= s[static_cast<size_t>(i)];
  }
  return st;
}

// Strides of `src` viewed under broadcast target `to`: broadcast axes get
// stride 0 so the same element is revisited.
inline std::vector<std::int64_t> broadcast_strides(const Shape& src, const Shape& to) {
  std::vector<std::int64_t> st(to.size(), 0);
  if (shape_numel(src) == 1) return st;
  auto own = row_major_strides(src);
  for (size_t i = 0; i < to.size(); ++i)
    if (src[i] == to[i]) st[i] = own[i];
  return st;
}

}  // namespace detail

template <typename T, typename F>
Tensor<T> binary_broadcast(const Tensor<T>& a, const Tensor<T>& b, F fn,
                           const char* opname) {
  check(broadcast_compatible(a.shape(), b.shape()),
        std::string(opname) + ": shapes " + shape_str(a.shape()) + " and " +
            shape_str(b.shape()) + " are not broadcastable");
  Shape os = broadcast_shape(a.shape(), b.shape());
  Tensor<T> out(os);
  const std::int64_t n = out.numel();
  if (a.shape() == b.shape()) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = fn(a[i], b[i]);
    return out;
  }
  auto ast = detail::broadcast_strides(a.shape(), os);
  auto bst = detail::broadcast_strides(b.shape(), os);
  const int rank = static_cast<int>(os.size());

  // Longest trailing block over which each operand is either pinned to one
  // element or advances contiguously; blocks then need index math only once.
  std::int64_t len = 1;
  int sa = -1, sb = -1;  // -1 undecided, 0 pinned, 1 contiguous
  int lead = rank - 1;
  for (; lead >= 0; --lead) {
    const size_t d = static_cast<size_t>(lead);
    if (os[d] == 1) continue;
    const std::int64_t wa = sa == 0 ? 0 : len, wb = sb == 0 ? 0 : len;
    const bool fits_a = sa == -1 ? (ast[d] == 0 || ast[d] == 1) : ast[d] == wa;
    const bool fits_b = sb == -1 ? (bst[d] == 0 || bst[d] == 1) : bst[d] == wb;
    if (!fits_a || !fits_b) break;
    if (sa == -1) sa = ast[d] == 0 ? 0 : 1;
    if (sb == -1) sb = bst[d] == 0 ? 0 : 1;
    len *= os[d];
  }

  for (std::int64_t start = 0; start < n; start += len) {
    std::int64_t rem = start / len, ia = 0, ib = 0;
    for (int d = lead; d >= 0; --d) {
      const std::int64_t idx = rem % os[static_cast<size_t>(d)];
      rem /= os[static_cast<size_t>(d)];
      ia += idx * ast[static_cast<size_t>(d)];
      ib += idx * bst[static_cast<size_t>(d)];
    }
    T* o = out.data() + start;
    const T* pa = a.data() + ia;
    const T* pb = b.data() + ib;
    if (sa == 1 && sb == 1) {
      for (std::int64_t i = 0; i < len; ++i) o[i] = fn(pa[i], pb[i]);
    } else if (sa == 1) {
      const T y = *pb;
      for (std::int64_t i = 0; i < len; ++i) o[i] = fn(pa[i], y);
    } else if (sb == 1) {
      const T x = *pa;
      for (std::int64_t i = 0; i < len; ++i) o[i] = fn(x, pb[i]);
    } else {
      *o = fn(*pa, *pb);
    }
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_broadcast(a, b, [](T x, T y) { return x + y; }, "add");
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_broadcast(a, b, [](T x, T y) { return x - y; }, "sub");
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_broadcast(a, b, [](T x, T y) { return x * y; }, "mul");
}
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_broadcast(a, b, [](T x, T y) { return x / y; }, "div");
}

// ---------------------------------------------------------------------------
// Pointwise maps
// ---------------------------------------------------------------------------

template <typename T, typename F>
Tensor<T> unary_map(const Tensor<T>& a, F fn) {
  Tensor<T> out(a.shape());
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out[i] = fn(a[i]);
  return out;
}

template <typename T>
Tensor<T> negate(const Tensor<T>& a) {
  return unary_map(a, [](T x) { return -x; });
}
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  return unary_map(a, [c](T x) { return x * c; });
}
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  return unary_map(a, [c](T x) { return x + c; });
}
template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary_map(a, [](T x) { return x > T(0) ? x : T(0); });
}
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary_map(a, [](T x) {
    // Split on sign so the exp argument is always <= 0.
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    T e = std::exp(x);
    return e / (T(1) + e);
  });
}
template <typename T>
Tensor<T> exp_map(const Tensor<T>& a) {
  return unary_map(a, [](T x) { return std::exp(x); });
}

inline constexpr double kLogClampFloor = 1e-12;

template <typename T>
Tensor<T> log_clamped(const Tensor<T>& a) {
  return unary_map(a, [](T x) { return std::log(std::max(x, T(kLogClampFloor))); });
}
template <typename T>
Tensor<T> rsqrt(const Tensor<T>& a) {
  return unary_map(a, [](T x) { return T(1) / std::sqrt(x); });
}

// ---------------------------------------------------------------------------
// Axis-set slicing
//
// A reduction/normalization over an axis set visits, for each "slice"
// (one combination of the kept axes), all elements spanned by the reduced
// axes. SliceIndexer maps (slice, inner) pairs to flat offsets.
// ---------------------------------------------------------------------------

class SliceIndexer {
 public:
  SliceIndexer(const Shape& shape, const AxisSet& axes) {
    const int rank = static_cast<int>(shape.size());
    check(!axes.empty(), "axis set must not be empty");
    std::vector<bool> reduced(static_cast<size_t>(rank), false);
    for (int a : axes) {
      check(a >= 0 && a < rank,
            "axis " + std::to_string(a) + " out of range for rank " + std::to_string(rank));
      check(!reduced[static_cast<size_t>(a)], "duplicate axis in axis set");
      reduced[static_cast<size_t>(a)] = true;
    }
    auto strides = detail::row_major_strides(shape);
    slice_count_ = 1;
    inner_count_ = 1;
    for (int d = 0; d < rank; ++d) {
      Dim dim{shape[static_cast<size_t>(d)], strides[static_cast<size_t>(d)]};
      if (reduced[static_cast<size_t>(d)]) {
        inner_count_ *= dim.extent;
        append_merged(inner_dims_, dim);
      } else {
        slice_count_ *= dim.extent;
        append_merged(outer_dims_, dim);
      }
    }
    // Reduced shape keeps rank; reduced axes collapse to extent 1.
    reduced_shape_ = shape;
    for (int a : axes) reduced_shape_[static_cast<size_t>(a)] = 1;
  }

  std::int64_t slice_count() const { return slice_count_; }
  std::int64_t inner_count() const { return inner_count_; }
  const Shape& reduced_shape() const { return reduced_shape_; }

  // The inner space decomposes into run_count() runs of run_len() elements
  // spaced run_stride() apart, letting callers keep the per-element loop
  // free of index arithmetic. Enumeration order matches offset(slice, i).
  std::int64_t run_len() const { return inner_dims_.empty() ? 1 : inner_dims_.back().extent; }
  std::int64_t run_stride() const { return inner_dims_.empty() ? 1 : inner_dims_.back().stride; }
  std::int64_t run_count() const { return inner_count_ / run_len(); }

  std::int64_t slice_base(std::int64_t slice) const {
    std::int64_t off = 0;
    for (auto it = outer_dims_.rbegin(); it != outer_dims_.rend(); ++it) {
      off += (slice % it->extent) * it->stride;
      slice /= it->extent;
    }
    return off;
  }

  std::int64_t run_base(std::int64_t slice, std::int64_t run) const {
    std::int64_t off = slice_base(slice);
    if (inner_dims_.size() > 1)
      for (size_t k = inner_dims_.size() - 1; k-- > 0;) {
        off += (run % inner_dims_[k].extent) * inner_dims_[k].stride;
        run /= inner_dims_[k].extent;
      }
    return off;
  }

  std::int64_t offset(std::int64_t slice, std::int64_t inner) const {
    std::int64_t off = slice_base(slice);
    for (auto it = inner_dims_.rbegin(); it != inner_dims_.rend(); ++it) {
      off += (inner % it->extent) * it->stride;
      inner /= it->extent;
    }
    return off;
  }

 private:
  struct Dim {
    std::int64_t extent;
    std::int64_t stride;
  };

  // Collapse adjacent dims that are contiguous in memory; extent-1 dims vanish.
  static void append_merged(std::vector<Dim>& dims, Dim d) {
    if (d.extent == 1) return;
    if (!dims.empty() && dims.back().stride == d.stride * d.extent) {
      dims.back().extent *= d.extent;
      dims.back().stride = d.stride;
    } else {
      dims.push_back(d);
    }
  }

  std::vector<Dim> outer_dims_, inner_dims_;
  std::int64_t slice_count_ = 0, inner_count_ = 0;
  Shape reduced_shape_;
};

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

enum class ReduceKind { Sum, Mean, Max, Min };

template <typename T>
struct Reduction {
  Tensor<T> values;              // reduced axes become extent 1
  std::vector<std::int64_t> arg; // flat offsets of the winners (max/min only)
};

template <typename T>
Reduction<T> reduce_along(const Tensor<T>& a, const AxisSet& axes, ReduceKind kind) {
  SliceIndexer ix(a.shape(), axes);
  Reduction<T> out;
  out.values = Tensor<T>(ix.reduced_shape());
  const bool extremal = kind == ReduceKind::Max || kind == ReduceKind::Min;
  if (extremal) out.arg.resize(static_cast<size_t>(ix.slice_count()));
  const std::int64_t runs = ix.run_count(), len = ix.run_len(), st = ix.run_stride();
  for (std::int64_t s = 0; s < ix.slice_count(); ++s) {
    if (extremal) {
      std::int64_t best_off = ix.run_base(s, 0);
      T best = a[best_off];
      for (std::int64_t r = 0; r < runs; ++r) {
        const std::int64_t base = ix.run_base(s, r);
        for (std::int64_t i = r == 0 ? 1 : 0; i < len; ++i) {
          const std::int64_t off = base + i * st;
          T v = a[off];
          // First occurrence wins ties.
          if ((kind == ReduceKind::Max && v > best) || (kind == ReduceKind::Min && v < best)) {
            best = v;
            best_off = off;
          }
        }
      }
      out.values[s] = best;
      out.arg[static_cast<size_t>(s)] = best_off;
    } else {
      T acc = T(0);
      for (std::int64_t r = 0; r < runs; ++r) {
        const T* p = a.data() + ix.run_base(s, r);
        for (std::int64_t i = 0; i < len; ++i) acc += p[i * st];
      }
      out.values[s] = kind == ReduceKind::Mean ? acc / T(ix.inner_count()) : acc;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

/// Probabilities that are nonnegative and sum to 1 over the declared axes.
template <typename T>
struct SoftmaxDistribution {
  Tensor<T> probs;
  AxisSet axes;
};

template <typename T>
SoftmaxDistribution<T> softmax_along(const Tensor<T>& a, const AxisSet& axes) {
  SliceIndexer ix(a.shape(), axes);
  Tensor<T> out(a.shape());
  const std::int64_t runs = ix.run_count(), len = ix.run_len(), st = ix.run_stride();
  for (std::int64_t s = 0; s < ix.slice_count(); ++s) {
    T m = a[ix.run_base(s, 0)];
    for (std::int64_t r = 0; r < runs; ++r) {
      const T* p = a.data() + ix.run_base(s, r);
      for (std::int64_t i = 0; i < len; ++i) m = std::max(m, p[i * st]);
    }
    T denom = T(0);
    for (std::int64_t r = 0; r < runs; ++r) {
      const std::int64_t base = ix.run_base(s, r);
      const T* p = a.data() + base;
      T* q = out.data() + base;
      for (std::int64_t i = 0; i < len; ++i) {
        T e = std::exp(p[i * st] - m);
        q[i * st] = e;
        denom += e;
      }
    }
    for (std::int64_t r = 0; r < runs; ++r) {
      T* q = out.data() + ix.run_base(s, r);
      for (std::int64_t i = 0; i < len; ++i) q[i * st] /= denom;
    }
  }
  return {std::move(out), axes};
}

// ---------------------------------------------------------------------------
// Min-max normalization
// ---------------------------------------------------------------------------

/// Per-slice (x - min)/(max - min); a constant slice maps to all zeros.
template <typename T>
Tensor<T> minmax_normalize(const Tensor<T>& a, const AxisSet& axes) {
  SliceIndexer ix(a.shape(), axes);
  Tensor<T> out(a.shape());
  const std::int64_t runs = ix.run_count(), len = ix.run_len(), st = ix.run_stride();
  for (std::int64_t s = 0; s < ix.slice_count(); ++s) {
    T lo = a[ix.run_base(s, 0)], hi = lo;
    for (std::int64_t r = 0; r < runs; ++r) {
      const T* p = a.data() + ix.run_base(s, r);
      for (std::int64_t i = 0; i < len; ++i) {
        T v = p[i * st];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
    T d = hi - lo;
    for (std::int64_t r = 0; r < runs; ++r) {
      const std::int64_t base = ix.run_base(s, r);
      const T* p = a.data() + base;
      T* q = out.data() + base;
      for (std::int64_t i = 0; i < len; ++i) q[i * st] = d == T(0) ? T(0) : (p[i * st] - lo) / d;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

template <typename T>
using MatrixRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<MatrixRM<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const MatrixRM<T>>;

/// y = x * W^T (+ bias): x is N x Cin, weight is Cout x Cin.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight,
                 const std::type_identity_t<Tensor<T>>* bias = nullptr) {
  check(x.rank() == 2 && weight.rank() == 2,
        "linear: want rank-2 input and weight, got " + shape_str(x.shape()) + " and " +
            shape_str(weight.shape()));
  const int n = x.extent(0), cin = x.extent(1);
  const int cout = weight.extent(0);
  check(weight.extent(1) == cin,
        "linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()) +
            " inner dimensions disagree");
  if (bias)
    check(bias->rank() == 1 && bias->extent(0) == cout,
          "linear: bias " + shape_str(bias->shape()) + " does not match Cout " +
              std::to_string(cout));
  Tensor<T> y({n, cout});
  ConstMatMap<T> xm(x.data(), n, cin);
  ConstMatMap<T> wm(weight.data(), cout, cin);
  MatMap<T> ym(y.data(), n, cout);
  ym.noalias() = xm * wm.transpose();
  if (bias)
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < cout; ++c) ym(r, c) += (*bias)[c];
  return y;
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, zero padding)
// ---------------------------------------------------------------------------

struct Padding {
  int top = 0, bottom = 0, left = 0, right = 0;
  static Padding same(int p) { return {p, p, p, p}; }
};
struct Stride {
  int h = 1, w = 1;
};

namespace detail {

// Valid ox range for one kernel column: ixx = ox*stride + kx - pad in [0, w).
inline void conv_ox_range(int kx, int pad_left, int stride, int w, int wo, int& ox_lo,
                          int& ox_hi) {
  const int shift = kx - pad_left;
  ox_lo = shift >= 0 ? 0 : (-shift + stride - 1) / stride;
  if (ox_lo > wo) ox_lo = wo;
  ox_hi = static_cast<int>(std::min(
      static_cast<std::int64_t>(wo),
      (static_cast<std::int64_t>(w) - shift + stride - 1) / stride));
  if (ox_hi < ox_lo) ox_hi = ox_lo;
}

// Column matrix is (I*Kh*Kw) x (Ho*Wo), one sample at a time.
template <typename T>
void im2col(const Tensor<T>& in, int n, int kh, int kw, Padding pad, Stride st,
            int ho, int wo, MatrixRM<T>& col) {
  const int ci = in.extent(1), h = in.extent(2), w = in.extent(3);
  col.resize(static_cast<Eigen::Index>(ci) * kh * kw, static_cast<Eigen::Index>(ho) * wo);
  const T* base = in.data() + static_cast<std::int64_t>(n) * ci * h * w;
  for (int c = 0; c < ci; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        T* dst = col.data() +
                 ((static_cast<std::int64_t>(c) * kh + ky) * kw + kx) * ho * wo;
        int ox_lo, ox_hi;
        conv_ox_range(kx, pad.left, st.w, w, wo, ox_lo, ox_hi);
        for (int oy = 0; oy < ho; ++oy, dst += wo) {
          const int iy = oy * st.h + ky - pad.top;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          std::fill(dst, dst + ox_lo, T(0));
          std::fill(dst + ox_hi, dst + wo, T(0));
          if (ox_hi == ox_lo) continue;
          const T* src = base + (static_cast<std::int64_t>(c) * h + iy) * w +
                         (ox_lo * st.w + kx - pad.left);
          if (st.w == 1) {
            std::copy(src, src + (ox_hi - ox_lo), dst + ox_lo);
          } else {
            for (int ox = ox_lo; ox < ox_hi; ++ox, src += st.w) dst[ox] = *src;
          }
        }
      }
}

template <typename T>
void col2im_add(const MatrixRM<T>& col, int n, int kh, int kw, Padding pad, Stride st,
                int ho, int wo, Tensor<T>& dst) {
  const int ci = dst.extent(1), h = dst.extent(2), w = dst.extent(3);
  T* base = dst.data() + static_cast<std::int64_t>(n) * ci * h * w;
  for (int c = 0; c < ci; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        const T* src = col.data() +
                       ((static_cast<std::int64_t>(c) * kh + ky) * kw + kx) * ho * wo;
        int ox_lo, ox_hi;
        conv_ox_range(kx, pad.left, st.w, w, wo, ox_lo, ox_hi);
        for (int oy = 0; oy < ho; ++oy, src += wo) {
          const int iy = oy * st.h + ky - pad.top;
          if (iy < 0 || iy >= h || ox_hi == ox_lo) continue;
          T* row = base + (static_cast<std::int64_t>(c) * h + iy) * w +
                   (ox_lo * st.w + kx - pad.left);
          if (st.w == 1) {
            for (int ox = ox_lo; ox < ox_hi; ++ox) row[ox - ox_lo] += src[ox];
          } else {
            for (int ox = ox_lo; ox < ox_hi; ++ox, row += st.w) *row += src[ox];
          }
        }
      }
}

inline int conv_out_extent(int in, int pad_lo, int pad_hi, int k, int stride) {
  return (in + pad_lo + pad_hi - k) / stride + 1;
}

}  // namespace detail

/// input N,I,H,W; kernel O,I,Kh,Kw; optional bias O -> output N,O,Ho,Wo.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& in, const Tensor<T>& kernel,
                 const std::type_identity_t<Tensor<T>>* bias, Padding pad, Stride stride = {}) {
  check(in.rank() == 4 && kernel.rank() == 4,
        "conv2d: want rank-4 input and kernel, got " + shape_str(in.shape()) + " and " +
            shape_str(kernel.shape()));
  check(stride.h >= 1 && stride.w >= 1, "conv2d: stride must be positive");
  check(pad.top >= 0 && pad.bottom >= 0 && pad.left >= 0 && pad.right >= 0,
        "conv2d: padding must be nonnegative");
  const int n = in.extent(0), ci = in.extent(1), h = in.extent(2), w = in.extent(3);
  const int co = kernel.extent(0), kh = kernel.extent(2), kw = kernel.extent(3);
  check(kernel.extent(1) == ci,
        "conv2d: input " + shape_str(in.shape()) + " has " + std::to_string(ci) +
            " channels but kernel " + shape_str(kernel.shape()) + " expects " +
            std::to_string(kernel.extent(1)));
  const int ho = detail::conv_out_extent(h, pad.top, pad.bottom, kh, stride.h);
  const int wo = detail::conv_out_extent(w, pad.left, pad.right, kw, stride.w);
  check(ho >= 1 && wo >= 1,
        "conv2d: output would be " + std::to_string(ho) + "x" + std::to_string(wo) +
            " for input " + shape_str(in.shape()) + ", kernel " + shape_str(kernel.shape()));
  if (bias)
    check(bias->rank() == 1 && bias->extent(0) == co,
          "conv2d: bias " + shape_str(bias->shape()) + " does not match " + std::to_string(co) +
              " output channels");

  Tensor<T> out({n, co, ho, wo});
  ConstMatMap<T> wm(kernel.data(), co, static_cast<Eigen::Index>(ci) * kh * kw);
  MatrixRM<T> col;
  for (int s = 0; s < n; ++s) {
    detail::im2col(in, s, kh, kw, pad, stride, ho, wo, col);
    MatMap<T> om(out.data() + static_cast<std::int64_t>(s) * co * ho * wo, co,
                 static_cast<Eigen::Index>(ho) * wo);
    om.noalias() = wm * col;
    if (bias)
      for (int o = 0; o < co; ++o) om.row(o).array() += (*bias)[o];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gaussian low-pass filter
// ---------------------------------------------------------------------------

enum class GaussianMode { Vertical1D, Full2D };

template <typename T>
std::vector<T> gaussian_kernel(int k, T sigma) {
  check(k >= 1 && k % 2 == 1, "gaussian kernel size must be odd and >= 1, got " + std::to_string(k));
  check(sigma > T(0), "gaussian sigma must be positive");
  std::vector<T> kern(static_cast<size_t>(k));
  const int half = k / 2;
  T sum = T(0);
  for (int i = 0; i < k; ++i) {
    T d = T(i - half);
    kern[static_cast<size_t>(i)] = std::exp(-(d * d) / (T(2) * sigma * sigma));
    sum += kern[static_cast<size_t>(i)];
  }
  for (T& v : kern) v /= sum;
  return kern;
}

namespace detail {

// Reflect with edge repeat: ...,x1,x0 | x0,x1,...,x[n-1] | x[n-1],x[n-2],...
// Safe for any extent >= 1.
inline int reflect_index(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

// Filter along H (axis 2) or W (axis 3), per sample and channel.
template <typename T>
Tensor<T> filter_axis(const Tensor<T>& in, const std::vector<T>& kern, int axis) {
  const int n = in.extent(0), c = in.extent(1), h = in.extent(2), w = in.extent(3);
  const int k = static_cast<int>(kern.size()), half = k / 2;
  Tensor<T> out(in.shape());
  for (int s = 0; s < n; ++s)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          T acc = T(0);
          for (int t = 0; t < k; ++t) {
            int yy = y, xx = x;
            if (axis == 2)
              yy = reflect_index(y + t - half, h);
            else
              xx = reflect_index(x + t - half, w);
            acc += kern[static_cast<size_t>(t)] * in.at4(s, ch, yy, xx);
          }
          out.at4(s, ch, y, x) = acc;
        }
  return out;
}

// Adjoint of filter_axis: scatters grad back through the reflected taps.
template <typename T>
Tensor<T> filter_axis_adjoint(const Tensor<T>& g, const std::vector<T>& kern, int axis) {
  const int n = g.extent(0), c = g.extent(1), h = g.extent(2), w = g.extent(3);
  const int k = static_cast<int>(kern.size()), half = k / 2;
  Tensor<T> out(g.shape());
  for (int s = 0; s < n; ++s)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          T gv = g.at4(s, ch, y, x);
          for (int t = 0; t < k; ++t) {
            int yy = y, xx = x;
            if (axis == 2)
              yy = reflect_index(y + t - half, h);
            else
              xx = reflect_index(x + t - half, w);
            out.at4(s, ch, yy, xx) += kern[static_cast<size_t>(t)] * gv;
          }
        }
  return out;
}

}  // namespace detail

/// Same-shape smoothing with a normalized Gaussian, reflect padding.
/// Vertical1D runs along H only; Full2D is the separable k x k filter.
template <typename T>
Tensor<T> gaussian_filter(const Tensor<T>& in, int k, GaussianMode mode, T sigma = T(1)) {
  check(in.rank() == 4, "gaussian_filter: want rank-4 input, got " + shape_str(in.shape()));
  check(k % 2 == 1 && k >= 1, "gaussian_filter: kernel size must be odd, got " + std::to_string(k));
  if (k == 1) return in;
  auto kern = gaussian_kernel<T>(k, sigma);
  Tensor<T> out = detail::filter_axis(in, kern, 2);
  if (mode == GaussianMode::Full2D) out = detail::filter_axis(out, kern, 3);
  return out;
}

// ---------------------------------------------------------------------------
// Reduction sugar used throughout the attention stack
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& a, const AxisSet& axes) {
  return reduce_along(a, axes, ReduceKind::Mean).values;
}
template <typename T>
Tensor<T> reduce_max(const Tensor<T>& a, const AxisSet& axes) {
  return reduce_along(a, axes, ReduceKind::Max).values;
}
template <typename T>
T sum_all(const Tensor<T>& a) {
  T acc = T(0);
  for (std::int64_t i = 0; i < a.numel(); ++i) acc += a[i];
  return acc;
}

}  // namespace cat
