#pragma once

#include <cat/tensor.hpp>

#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace cat {

/// Named learnable tensor. `trainable` gates optimizer updates, `decay` gates
/// weight decay (attention factors and norm parameters opt out).
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;
  bool decay = true;
  bool grad_ready = false;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v, bool train = true, bool dec = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), trainable(train), decay(dec) {}

  void zero_grad() {
    std::fill(grad.data(), grad.data() + grad.numel(), T(0));
    grad_ready = false;
  }
};

/// Owning collection of named parameters with stable addresses and
/// deterministic (insertion-order) iteration.
template <typename T>
class ParamStore {
 public:
  Parameter<T>& create(std::string name, Tensor<T> value, bool trainable = true,
                       bool decay = true) {
    check(index_.find(name) == index_.end(), "duplicate parameter name: " + name);
    params_.emplace_back(name, std::move(value), trainable, decay);
    Parameter<T>& p = params_.back();
    order_.push_back(&p);
    index_.emplace(std::move(name), &p);
    return p;
  }

  Parameter<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : it->second;
  }

  Parameter<T>& at(const std::string& name) {
    Parameter<T>* p = find(name);
    check(p != nullptr, "unknown parameter: " + name);
    return *p;
  }

  const std::vector<Parameter<T>*>& all() const { return order_; }
  size_t size() const { return order_.size(); }

  std::int64_t count_scalars(bool trainable_only = false) const {
    std::int64_t n = 0;
    for (const Parameter<T>* p : order_)
      if (!trainable_only || p->trainable) n += p->value.numel();
    return n;
  }

  void zero_grads() {
    for (Parameter<T>* p : order_) p->zero_grad();
  }

 private:
  std::deque<Parameter<T>> params_;
  std::vector<Parameter<T>*> order_;
  std::unordered_map<std::string, Parameter<T>*> index_;
};

template <typename T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Tensor<T>& value() const { return tape->val(id); }
  const Shape& shape() const { return value().shape(); }
};

namespace detail {

// Sum a gradient of broadcast-output shape back down to an operand shape.
template <typename T>
Tensor<T> reduce_grad_to(const Tensor<T>& g, const Shape& target) {
  if (g.shape() == target) return g;
  if (shape_numel(target) == 1) {
    Tensor<T> s(target);
    s[0] = sum_all(g);
    return s;
  }
  AxisSet axes;
  for (size_t i = 0; i < target.size(); ++i)
    if (target[i] == 1 && g.shape()[i] != 1) axes.push_back(static_cast<int>(i));
  if (axes.empty()) return g.reshaped(target);
  return reduce_along(g, axes, ReduceKind::Sum).values;
}

}  // namespace detail

/// Record of one forward pass. Nodes are appended in execution order;
/// backward replays them in reverse, accumulating gradients additively.
template <typename T>
class Tape {
 public:
  Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
    return {this, push(std::move(value), requires_grad, nullptr)};
  }

  /// Lift a parameter onto the tape; export_grads() later writes its gradient.
  Var<T> param(Parameter<T>& p) {
    int id = push(p.value, true, nullptr);
    exports_.push_back({&p, id});
    return {this, id};
  }

  int next_id() const { return static_cast<int>(nodes_.size()); }

  int push(Tensor<T> value, bool requires_grad, std::function<void(Tape&)> bw) {
    nodes_.push_back(Node{std::move(value), Tensor<T>(), requires_grad, std::move(bw)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Tensor<T>& val(int id) const { return nodes_[static_cast<size_t>(id)].value; }

  bool has_grad(int id) const { return !nodes_[static_cast<size_t>(id)].grad.empty(); }

  /// Gradient of a node; zeros if backward never reached it.
  const Tensor<T>& grad(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  /// Add into a node's gradient; g may be the node shape or broadcastable to it.
  void accum(int id, const Tensor<T>& g) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    if (g.shape() == n.grad.shape()) {
      n.grad.array() += g.array();
    } else {
      Tensor<T> summed = add(n.grad, g);
      check(summed.shape() == n.value.shape(),
            "gradient shape " + shape_str(g.shape()) + " incompatible with node " +
                shape_str(n.value.shape()));
      n.grad = std::move(summed);
    }
  }

  /// First-touch rvalue gradients of the right shape are adopted outright.
  void accum(int id, Tensor<T>&& g) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.empty() && g.shape() == n.value.shape()) {
      n.grad = std::move(g);
      return;
    }
    accum(id, static_cast<const Tensor<T>&>(g));
  }

  void backward(Var<T> root) {
    if (nodes_.empty()) return;
    check(root.tape == this, "backward: root belongs to a different tape");
    check(val(root.id).numel() == 1,
          "backward: root must be scalar, got " + shape_str(val(root.id).shape()));
    accum(root.id, Tensor<T>::full(val(root.id).shape(), T(1)));
    for (int id = root.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (!n.grad.empty() && n.backward) n.backward(*this);
    }
  }

  /// Accumulate node gradients into their parameters (caller zeroes grads).
  /// A lifted parameter counts as populated even if backward left it at zero.
  void export_grads() {
    for (auto& [p, id] : exports_) {
      p->grad_ready = true;
      if (!has_grad(id)) continue;
      p->grad.array() += grad(id).array();
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad;
    std::function<void(Tape&)> backward;
  };
  // deque keeps value/grad references stable while the graph grows
  std::deque<Node> nodes_;
  std::vector<std::pair<Parameter<T>*, int>> exports_;
};

// ---------------------------------------------------------------------------
// Recorded operations. Each forwards through the tensor primitive, then
// registers a closure that pulls the output gradient and pushes into inputs.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
Tape<T>& same_tape(Var<T> a, Var<T> b) {
  check(a.tape && a.tape == b.tape, "operands recorded on different tapes");
  return *a.tape;
}

}  // namespace detail

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& t = detail::same_tape(a, b);
  int oid = t.next_id();
  t.push(add(t.val(a.id), t.val(b.id)), true, [a, b, oid](Tape<T>& tp) {
    const Tensor<T>& g = tp.grad(oid);
    tp.accum(a.id, detail::reduce_grad_to(g, tp.val(a.id).shape()));
    tp.accum(b.id, detail::reduce_grad_to(g, tp.val(b.id).shape()));
  });
  return {&t, oid};
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  Tape<T>& t = detail::same_tape(a, b);
  int oid = t.next_id();
  t.push(sub(t.val(a.id), t.val(b.id)), true, [a, b, oid](Tape<T>& tp) {
    const Tensor<T>& g = tp.grad(oid);
    tp.accum(a.id, detail::reduce_grad_to(g, tp.val(a.id).shape()));
    tp.accum(b.id, detail::reduce_grad_to(negate(g), tp.val(b.id).shape()));
  });
  return {&t, oid};
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& t = detail::same_tape(a, b);
  int oid = t.next_id();
  t.push(mul(t.val(a.id), t.val(b.id)), true, [a, b, oid](Tape<T>& tp) {
    const Tensor<T>& g = tp.grad(oid);
    tp.accum(a.id, detail::reduce_grad_to(mul(g, tp.val(b.id)), tp.val(a.id).shape()));
    tp.accum(b.id, detail::reduce_grad_to(mul(g, tp.val(a.id)), tp.val(b.id).shape()));
  });
  return {&t, oid};
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
  Tape<T>& t = detail::same_tape(a, b);
  int oid = t.next_id();
  t.push(div(t.val(a.id), t.val(b.id)), true, [a, b, oid](Tape<T>& tp) {
    const Tensor<T>& g = tp.grad(oid);
    tp.accum(a.id, detail::reduce_grad_to(div(g, tp.val(b.id)), tp.val(a.id).shape()));
    Tensor<T> db = negate(div(mul(g, tp.val(oid)), tp.val(b.id)));
    tp.accum(b.id, detail::reduce_grad_to(db, tp.val(b.id).shape()));
  });
  return {&t, oid};
}

template <typename T>
Var<T> negate(Var<T> a) {
  Tape<T>& t = *a.tape;
  int oid = t.next_id();
  t.push(negate(t.val(a.id)), true,
         [a, oid](Tape<T>& tp) { tp.accum(a.id, negate(tp.grad(oid))); });
  return {&t, oid};
}

template <typename T>
Var<T> scale(Var<T> a, T c) {
  Tape<T>& t = *a.tape;
  int oid = t.next_id();
  t.push(scale(t.val(a.id), c), true,
         [a, oid, c](Tape<T>& tp) { tp.accum(a.id, scale(tp.grad(oid), c)); });
  return {&t, oid};
}

template <typename T>
Var<T> add_scalar(Var<T> a, T c) {
  Tape<T>& t = *a.tape;
  int oid = t.next_id();
  t.push(add_scalar(t.val(a.id), c), true,
         [a, oid](Tape<T>& tp) { tp.accum(a.id, tp.grad(oid)); });
  return {&t, oid};
}

template <typename T>
Var<T> relu(Var<T> a) {
  Tape<T>& t = *a.tape;
  int oid = t.next_id();
  t.push(relu(t.val(a.id)), true, [a, oid](Tape<T>& tp) {
    const Tensor<T>& g = tp.grad(oid);
    const Tensor<T>& x = tp.val(a.id);
    Tensor<T> dx(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) dx[i] = x[i] > T(0) ? g[i] : T(0);
    tp.accum(a.id, std::move(dx));
  });
  return {&t, oid};
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  Tape<T>& t = *a.tape;
  int oid = t.next_id();
  t.push(sigmoid(t.val(a.id)), true, [a, oid](Tape<T>& tp) {
    const Tensor<T>& g = tp.grad(oid);
    const Tensor<T>& y = tp.val(oid);
    Tensor<T> dx(y.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) dx[i] = g[i] * y[i] * (T(1) - y[i]);
    tp.accum(a.id, std::move(dx));
  });
  return {&t, oid};
}

template <typename T>
Var<T> exp_map(Var<T> a) {
  Tape<T>& t = *a.tape;
  int oid = t.next_id();
  t.push(exp_map(t.val(a.id)), true, [a, oid](Tape<T>& tp) {
    tp.accum(a.id, mul(tp.grad(oid), tp.val(oid)));
  });
  return {&t, oid};
}

template <typename T>
Var<T> log_clamped(Var<T> a) {
  Tape<T>& t = *a.tape;
  int oid = t.next_id();
  t.push(log_clamped(t.val(a.id)), true, [a, oid](Tape<T>& tp) {
    const Tensor<T>& g = tp.grad(oid);
    const Tensor<T>& x = tp.val(a.id);
    Tensor<T> dx(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i)
      dx[i] = x[i] > T(kLogClampFloor) ? g[i] / x[i] : T(0);
    tp.accum(a.id, std::move(dx));
  });
  return {&t, oid};
}

template <typename T>
Var<T> rsqrt(Var<T> a) {
  Tape<T>& t = *a.tape;
  int oid = t.next_id();
  t.push(rsqrt(t.val(a.id)), true, [a, oid](Tape<T>& tp) {
    const Tensor<T>& g = tp.grad(oid);
    const Tensor<T>& y = tp.val(oid);
    Tensor<T> dx(y.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) dx[i] = T(-0.5) * g[i] * y[i] * y[i] * y[i];
    tp.accum(a.id, std::move(dx));
  });
  return {&t, oid};
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tape<T>& t = *a.tape;
  int oid = t.next_id();
  t.push(t.val(a.id).reshaped(std::move(shape)), true, [a, oid](Tape<T>& tp) {
    tp.accum(a.id, tp.grad(oid).reshaped(tp.val(a.id).shape()));
  });
  return {&t, oid};
}

template <typename T>
Var<T> sum_along(Var<T> a, AxisSet axes) {
  Tape<T>& t = *a.tape;
  int oid = t.next_id();
  t.push(reduce_along(t.val(a.id), axes, ReduceKind::Sum).values, true, [a, oid](Tape<T>& tp) {
    tp.accum(a.id, tp.grad(oid));  // broadcast back over reduced axes
  });
  return {&t, oid};
}

template <typename T>
Var<T> mean_along(Var<T> a, AxisSet axes) {
  Tape<T>& t = *a.tape;
  auto red = reduce_along(t.val(a.id), axes, ReduceKind::Mean);
  T inv = T(shape_numel(red.values.shape())) / T(t.val(a.id).numel());
  int oid = t.next_id();
  t.push(std::move(red.values), true, [a, oid, inv](Tape<T>& tp) {
    tp.accum(a.id, scale(tp.grad(oid), inv));
  });
  return {&t, oid};
}

namespace detail {

template <typename T>
Var<T> extremum_along(Var<T> a, AxisSet axes, ReduceKind kind) {
  Tape<T>& t = *a.tape;
  auto red = reduce_along(t.val(a.id), axes, kind);
  int oid = t.next_id();
  t.push(std::move(red.values), true, [a, oid, arg = std::move(red.arg)](Tape<T>& tp) {
    const Tensor<T>& g = tp.grad(oid);
    Tensor<T> dx(tp.val(a.id).shape());
    for (std::int64_t s = 0; s < g.numel(); ++s) dx[arg[static_cast<size_t>(s)]] += g[s];
    tp.accum(a.id, std::move(dx));
  });
  return {&t, oid};
}

}  // namespace detail

template <typename T>
Var<T> max_along(Var<T> a, AxisSet axes) {
  return detail::extremum_along(a, std::move(axes), ReduceKind::Max);
}

template <typename T>
Var<T> min_along(Var<T> a, AxisSet axes) {
  return detail::extremum_along(a, std::move(axes), ReduceKind::Min);
}

template <typename T>
Var<T> softmax_along(Var<T> a, AxisSet axes) {
  Tape<T>& t = *a.tape;
  auto sm = softmax_along(t.val(a.id), axes);
  int oid = t.next_id();
  t.push(std::move(sm.probs), true, [a, oid, axes](Tape<T>& tp) {
    const Tensor<T>& g = tp.grad(oid);
    const Tensor<T>& p = tp.val(oid);
    SliceIndexer ix(p.shape(), axes);
    Tensor<T> dx(p.shape());
    const std::int64_t runs = ix.run_count(), len = ix.run_len(), st = ix.run_stride();
    for (std::int64_t s = 0; s < ix.slice_count(); ++s) {
      T dot = T(0);
      for (std::int64_t r = 0; r < runs; ++r) {
        const std::int64_t base = ix.run_base(s, r);
        const T* gp = g.data() + base;
        const T* pp = p.data() + base;
        for (std::int64_t i = 0; i < len; ++i) dot += gp[i * st] * pp[i * st];
      }
      for (std::int64_t r = 0; r < runs; ++r) {
        const std::int64_t base = ix.run_base(s, r);
        const T* gp = g.data() + base;
        const T* pp = p.data() + base;
        T* dp = dx.data() + base;
        for (std::int64_t i = 0; i < len; ++i)
          dp[i * st] = pp[i * st] * (gp[i * st] - dot);
      }
    }
    tp.accum(a.id, std::move(dx));
  });
  return {&t, oid};
}

// d/dx_j of (x_i - lo)/(hi - lo): 1/d for i==j, (out_i - 1)/d routed to the
// argmin, -out_i/d routed to the argmax (first occurrence; zero when hi==lo).
template <typename T>
Var<T> minmax_normalize(Var<T> a, AxisSet axes) {
  Tape<T>& t = *a.tape;
  int oid = t.next_id();
  t.push(minmax_normalize(t.val(a.id), axes), true, [a, oid, axes](Tape<T>& tp) {
    const Tensor<T>& g = tp.grad(oid);
    const Tensor<T>& x = tp.val(a.id);
    const Tensor<T>& y = tp.val(oid);
    SliceIndexer ix(x.shape(), axes);
    Tensor<T> dx(x.shape());
    const std::int64_t runs = ix.run_count(), len = ix.run_len(), st = ix.run_stride();
    for (std::int64_t s = 0; s < ix.slice_count(); ++s) {
      std::int64_t lo_off = ix.run_base(s, 0), hi_off = lo_off;
      T lo = x[lo_off], hi = lo;
      for (std::int64_t r = 0; r < runs; ++r) {
        const std::int64_t base = ix.run_base(s, r);
        for (std::int64_t i = r == 0 ? 1 : 0; i < len; ++i) {
          const std::int64_t off = base + i * st;
          if (x[off] < lo) { lo = x[off]; lo_off = off; }
          if (x[off] > hi) { hi = x[off]; hi_off = off; }
        }
      }
      T d = hi - lo;
      if (d == T(0)) continue;
      for (std::int64_t r = 0; r < runs; ++r) {
        const std::int64_t base = ix.run_base(s, r);
        for (std::int64_t i = 0; i < len; ++i) {
          const std::int64_t off = base + i * st;
          dx[off] += g[off] / d;
          dx[lo_off] += g[off] * (y[off] - T(1)) / d;
          dx[hi_off] += g[off] * (-y[off]) / d;
        }
      }
    }
    tp.accum(a.id, std::move(dx));
  });
  return {&t, oid};
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, const std::type_identity_t<Var<T>>* bias = nullptr) {
  Tape<T>& t = detail::same_tape(x, w);
  const Tensor<T>* bv = bias ? &t.val(bias->id) : nullptr;
  int bid = bias ? bias->id : -1;
  int oid = t.next_id();
  t.push(linear(t.val(x.id), t.val(w.id), bv), true, [x, w, bid, oid](Tape<T>& tp) {
    const Tensor<T>& g = tp.grad(oid);
    const Tensor<T>& xv = tp.val(x.id);
    const Tensor<T>& wv = tp.val(w.id);
    const int n = xv.extent(0), cin = xv.extent(1), cout = wv.extent(0);
    ConstMatMap<T> gm(g.data(), n, cout);
    ConstMatMap<T> xm(xv.data(), n, cin);
    ConstMatMap<T> wm(wv.data(), cout, cin);

    Tensor<T> dx({n, cin});
    MatMap<T>(dx.data(), n, cin).noalias() = gm * wm;
    tp.accum(x.id, std::move(dx));

    Tensor<T> dw({cout, cin});
    MatMap<T>(dw.data(), cout, cin).noalias() = gm.transpose() * xm;
    tp.accum(w.id, std::move(dw));

    if (bid >= 0) {
      Tensor<T> db({cout});
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < cout; ++c) db[c] += gm(r, c);
      tp.accum(bid, std::move(db));
    }
  });
  return {&t, oid};
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, const std::type_identity_t<Var<T>>* bias, Padding pad,
              Stride stride = {}) {
  Tape<T>& t = detail::same_tape(x, w);
  const Tensor<T>* bv = bias ? &t.val(bias->id) : nullptr;
  int bid = bias ? bias->id : -1;
  int oid = t.next_id();
  t.push(conv2d(t.val(x.id), t.val(w.id), bv, pad, stride), true,
         [x, w, bid, oid, pad, stride](Tape<T>& tp) {
           const Tensor<T>& g = tp.grad(oid);
           const Tensor<T>& xv = tp.val(x.id);
           const Tensor<T>& wv = tp.val(w.id);
           const int n = xv.extent(0), ci = xv.extent(1);
           const int co = wv.extent(0), kh = wv.extent(2), kw = wv.extent(3);
           const int ho = g.extent(2), wo = g.extent(3);
           const Eigen::Index patch = static_cast<Eigen::Index>(ci) * kh * kw;
           ConstMatMap<T> wm(wv.data(), co, patch);

           Tensor<T> dx(xv.shape());
           MatrixRM<T> dw_acc = MatrixRM<T>::Zero(co, patch);
           Tensor<T> db = bid >= 0 ? Tensor<T>({co}) : Tensor<T>();
           MatrixRM<T> col, dcol;
           for (int s = 0; s < n; ++s) {
             ConstMatMap<T> gm(g.data() + static_cast<std::int64_t>(s) * co * ho * wo, co,
                               static_cast<Eigen::Index>(ho) * wo);
             detail::im2col(xv, s, kh, kw, pad, stride, ho, wo, col);
             dw_acc.noalias() += gm * col.transpose();
             dcol.noalias() = wm.transpose() * gm;
             detail::col2im_add(dcol, s, kh, kw, pad, stride, ho, wo, dx);
             if (bid >= 0)
               for (int o = 0; o < co; ++o) db[o] += gm.row(o).sum();
           }
           tp.accum(x.id, std::move(dx));
           Tensor<T> dw(wv.shape());
           MatMap<T>(dw.data(), co, patch) = dw_acc;
           tp.accum(w.id, std::move(dw));
           if (bid >= 0) tp.accum(bid, std::move(db));
         });
  return {&t, oid};
}

template <typename T>
Var<T> gaussian_filter(Var<T> a, int k, GaussianMode mode, T sigma = T(1)) {
  if (k == 1) return a;
  Tape<T>& t = *a.tape;
  auto kern = gaussian_kernel<T>(k, sigma);
  int oid = t.next_id();
  t.push(gaussian_filter(t.val(a.id), k, mode, sigma), true,
         [a, oid, kern = std::move(kern), mode](Tape<T>& tp) {
           Tensor<T> g = tp.grad(oid);
           if (mode == GaussianMode::Full2D) g = detail::filter_axis_adjoint(g, kern, 3);
           tp.accum(a.id, detail::filter_axis_adjoint(g, kern, 2));
         });
  return {&t, oid};
}

/// Pick column labels[r] from each row of an N x C matrix; output N x 1.
template <typename T>
Var<T> gather_rows(Var<T> x, std::vector<int> labels) {
  Tape<T>& t = *x.tape;
  const Tensor<T>& xv = t.val(x.id);
  check(xv.rank() == 2, "gather_rows: want rank-2 input, got " + shape_str(xv.shape()));
  const int n = xv.extent(0), c = xv.extent(1);
  check(static_cast<int>(labels.size()) == n,
        "gather_rows: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
            " rows");
  Tensor<T> out({n, 1});
  for (int r = 0; r < n; ++r) {
    check(labels[static_cast<size_t>(r)] >= 0 && labels[static_cast<size_t>(r)] < c,
          "gather_rows: label " + std::to_string(labels[static_cast<size_t>(r)]) +
              " out of range for " + std::to_string(c) + " columns");
    out[r] = xv[static_cast<std::int64_t>(r) * c + labels[static_cast<size_t>(r)]];
  }
  int oid = t.next_id();
  t.push(std::move(out), true, [x, oid, labels = std::move(labels)](Tape<T>& tp) {
    const Tensor<T>& g = tp.grad(oid);
    const Tensor<T>& xv = tp.val(x.id);
    const int n = xv.extent(0), c = xv.extent(1);
    Tensor<T> dx(xv.shape());
    for (int r = 0; r < n; ++r)
      dx[static_cast<std::int64_t>(r) * c + labels[static_cast<size_t>(r)]] = g[r];
    tp.accum(x.id, std::move(dx));
  });
  return {&t, oid};
}

template <typename T>
Var<T> sum_all(Var<T> a) {
  Tape<T>& t = *a.tape;
  int oid = t.next_id();
  t.push(Tensor<T>::scalar(sum_all(t.val(a.id))), true, [a, oid](Tape<T>& tp) {
    T g = tp.grad(oid)[0];
    tp.accum(a.id, Tensor<T>::full(tp.val(a.id).shape(), g));
  });
  return {&t, oid};
}

template <typename T>
Var<T> mean_all(Var<T> a) {
  T inv = T(1) / T(a.value().numel());
  return scale(sum_all(a), inv);
}

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

/// Central-difference check of param.grad against a scalar forward closure.
/// The closure must read param.value afresh on every call; param.grad must
/// already hold the autograd gradient. Returns the worst relative error
/// |fd - ag| / max(1e-8, |fd| + |ag|).
template <typename T, typename F>
T finite_diff_check(F&& f, Parameter<T>& param, T h = T(1e-5)) {
  T probe1 = f();
  T probe2 = f();
  check(probe1 == probe2, "finite_diff_check: forward evaluation is not deterministic");
  T worst = T(0);
  for (std::int64_t i = 0; i < param.value.numel(); ++i) {
    T keep = param.value[i];
    param.value[i] = keep + h;
    T fp = f();
    param.value[i] = keep - h;
    T fm = f();
    param.value[i] = keep;
    T fd = (fp - fm) / (T(2) * h);
    T ag = param.grad[i];
    T rel = std::abs(fd - ag) / std::max(T(1e-8), std::abs(fd) + std::abs(ag));
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace cat
