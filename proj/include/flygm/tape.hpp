#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flygm/csr.hpp"
#include "flygm/tensor.hpp"

namespace flygm {

// Named trainable tensors with a stable order.
template <typename T>
struct ParamSet {
  struct Entry {
    std::string name;
    Tensor2<T> value;
  };
  std::vector<Entry> entries;

  int add(std::string name, Tensor2<T> init) {
    for (const auto& e : entries)
      if (e.name == name) throw std::logic_error("ParamSet: duplicate name " + name);
    entries.push_back({std::move(name), std::move(init)});
    return int(entries.size()) - 1;
  }
  int find(std::string_view name) const {
    for (size_t i = 0; i < entries.size(); ++i)
      if (entries[i].name == name) return int(i);
    return -1;
  }
  Tensor2<T>& operator[](int i) { return entries[size_t(i)].value; }
  const Tensor2<T>& operator[](int i) const { return entries[size_t(i)].value; }
  int size() const { return int(entries.size()); }
  size_t scalar_count() const {
    size_t n = 0;
    for (const auto& e : entries) n += e.value.size();
    return n;
  }
};

// Gradient buffers aligned with a ParamSet.
template <typename T>
struct GradStore {
  std::vector<Tensor2<T>> g;

  void init_like(const ParamSet<T>& ps) {
    g.resize(size_t(ps.size()));
    for (int i = 0; i < ps.size(); ++i) g[size_t(i)].assign_zero(ps[i].rows, ps[i].cols);
  }
  void zero() {
    for (auto& t : g) std::fill(t.data.begin(), t.data.end(), T(0));
  }
  void scale(double s) {
    for (auto& t : g)
      for (auto& x : t.data) x = T(double(x) * s);
  }
  double global_norm() const {
    double s = 0.0;
    for (const auto& t : g)
      for (const T& x : t.data) s += double(x) * double(x);
    return std::sqrt(s);
  }
  bool all_finite() const {
    for (const auto& t : g)
      if (!t.all_finite()) return false;
    return true;
  }
};

// Reverse-mode tape over Tensor2. Values are computed eagerly as ops are
// recorded; backward() walks the node list in reverse. Buffers are reused
// across reset() so steady-state training allocates nothing.
template <typename T>
class Tape {
 public:
  struct Value {
    int32_t id = -1;
    bool valid() const { return id >= 0; }
  };

  struct Binding {
    const ParamSet<T>* params;
    GradStore<T>* grads;
  };

  void reset() {
    n_nodes_ = 0;
    backward_done_ = false;
    param_memo_.clear();
  }

  int size() const { return n_nodes_; }

  const Tensor2<T>& val(Value v) const {
    check_value(v);
    return vals_[size_t(v.id)];
  }

  Value constant(const Tensor2<T>& t) {
    Value v = emit(Op::Leaf, {}, {});
    vals_[size_t(v.id)] = t;
    return v;
  }

  Value constant(std::span<const T> flat, int32_t rows, int32_t cols) {
    if (flat.size() != size_t(rows) * size_t(cols))
      throw std::logic_error("tape constant: size mismatch");
    Value v = emit(Op::Leaf, {}, {});
    auto& out = vals_[size_t(v.id)];
    out.resize_keep(rows, cols);
    std::copy(flat.begin(), flat.end(), out.data.begin());
    return v;
  }

  Value scalar(T x) {
    Value v = emit(Op::Leaf, {}, {});
    auto& out = vals_[size_t(v.id)];
    out.resize_keep(1, 1);
    out.data[0] = x;
    return v;
  }

  // memoized per (set, index): the same parameter recorded twice on one tape
  // is one leaf, so gradients from every use accumulate in one place
  Value param(const ParamSet<T>& ps, int idx) {
    auto key = std::make_pair(static_cast<const void*>(&ps), idx);
    auto it = param_memo_.find(key);
    if (it != param_memo_.end()) return Value{it->second};
    Value v = emit(Op::Param, {}, {});
    Node& n = nodes_[size_t(v.id)];
    n.pset = &ps;
    n.pidx = idx;
    vals_[size_t(v.id)] = ps[idx];
    param_memo_.emplace(key, v.id);
    return v;
  }

  Value spmm_op(const CsrMatrix& w, Value h) {
    Value v = emit(Op::Spmm, h, {});
    nodes_[size_t(v.id)].csr = &w;
    spmm(w, val_of(h), vals_[size_t(v.id)]);
    finite_check(v, "spmm");
    return v;
  }

  // y = x * W^T + b with W (dout x din), b (1 x dout)
  Value affine(Value x, Value w, Value b) {
    const auto& xv = val_of(x);
    const auto& wv = val_of(w);
    const auto& bv = val_of(b);
    if (xv.cols != wv.cols || bv.rows != 1 || bv.cols != wv.rows)
      throw std::logic_error("affine: shape mismatch");
    Value v = emit(Op::Affine, x, w, b);
    auto& out = vals_[size_t(v.id)];
    out.resize_keep(xv.rows, wv.rows);
    for (int32_t i = 0; i < xv.rows; ++i) {
      const T* xr = xv[i];
      T* orow = out[i];
      for (int32_t o = 0; o < wv.rows; ++o) {
        const T* wr = wv[o];
        T acc = bv.data[size_t(o)];
        for (int32_t k = 0; k < xv.cols; ++k) acc += xr[k] * wr[k];
        orow[o] = acc;
      }
    }
    finite_check(v, "affine");
    return v;
  }

  Value tanh_op(Value a) { return unary(Op::Tanh, a, [](T x) { return T(std::tanh(double(x))); }); }
  Value relu(Value a) { return unary(Op::Relu, a, [](T x) { return x > T(0) ? x : T(0); }); }
  Value log_op(Value a) { return unary(Op::Log, a, [](T x) { return T(std::log(double(x))); }); }
  Value exp_op(Value a) { return unary(Op::Exp, a, [](T x) { return T(std::exp(double(x))); }); }
  Value square(Value a) { return unary(Op::Square, a, [](T x) { return x * x; }); }
  Value neg(Value a) { return unary(Op::Neg, a, [](T x) { return -x; }); }

  Value softplus(Value a) {
    return unary(Op::Softplus, a, [](T x) {
      // overflow guard: for large x, log(1+e^x) == x to machine precision
      return double(x) > 30.0 ? x : T(std::log1p(std::exp(double(x))));
    });
  }

  Value add(Value a, Value b) { return binary(Op::Add, a, b, [](T x, T y) { return x + y; }); }
  Value sub(Value a, Value b) { return binary(Op::Sub, a, b, [](T x, T y) { return x - y; }); }
  Value mul(Value a, Value b) { return binary(Op::Mul, a, b, [](T x, T y) { return x * y; }); }
  Value div_op(Value a, Value b) { return binary(Op::Div, a, b, [](T x, T y) { return x / y; }); }
  Value min2(Value a, Value b) {
    return binary(Op::Min2, a, b, [](T x, T y) { return x <= y ? x : y; });
  }

  Value add_scalar(Value a, T c) {
    Value v = unary(Op::AddScalar, a, [c](T x) { return x + c; });
    nodes_[size_t(v.id)].c0 = double(c);
    return v;
  }

  Value scale(Value a, T c) {
    Value v = unary(Op::Scale, a, [c](T x) { return x * c; });
    nodes_[size_t(v.id)].c0 = double(c);
    return v;
  }

  Value clamp(Value a, T lo, T hi) {
    Value v = unary(Op::Clamp, a, [lo, hi](T x) { return x < lo ? lo : (x > hi ? hi : x); });
    nodes_[size_t(v.id)].c0 = double(lo);
    nodes_[size_t(v.id)].c1 = double(hi);
    return v;
  }

  Value sum(Value a) {
    Value v = emit(Op::Sum, a, {});
    const auto& av = val_of(a);
    auto& out = vals_[size_t(v.id)];
    out.resize_keep(1, 1);
    T acc = T(0);
    for (const T& x : av.data) acc += x;
    out.data[0] = acc;
    finite_check(v, "sum");
    return v;
  }

  Value mean(Value a) {
    const auto& av = val_of(a);
    if (av.size() == 0) throw std::logic_error("mean of empty tensor");
    Value v = emit(Op::Mean, a, {});
    auto& out = vals_[size_t(v.id)];
    out.resize_keep(1, 1);
    T acc = T(0);
    for (const T& x : av.data) acc += x;
    out.data[0] = T(double(acc) / double(av.size()));
    finite_check(v, "mean");
    return v;
  }

  Value concat_cols(Value a, Value b) {
    const auto& av = val_of(a);
    const auto& bv = val_of(b);
    if (av.rows != bv.rows) throw std::logic_error("concat_cols: row mismatch");
    Value v = emit(Op::ConcatCols, a, b);
    auto& out = vals_[size_t(v.id)];
    out.resize_keep(av.rows, av.cols + bv.cols);
    for (int32_t i = 0; i < av.rows; ++i) {
      std::copy(av[i], av[i] + av.cols, out[i]);
      std::copy(bv[i], bv[i] + bv.cols, out[i] + av.cols);
    }
    return v;
  }

  // indices must be unique
  Value gather_rows(Value a, const std::vector<int32_t>& idx) {
    const auto& av = val_of(a);
    Value v = emit(Op::GatherRows, a, {});
    nodes_[size_t(v.id)].rows = &idx;
    auto& out = vals_[size_t(v.id)];
    out.resize_keep(int32_t(idx.size()), av.cols);
    for (size_t i = 0; i < idx.size(); ++i)
      std::copy(av[idx[i]], av[idx[i]] + av.cols, out[int32_t(i)]);
    return v;
  }

  // out = base with out[idx[i], :] = src[i, :]; indices must be unique
  Value scatter_rows(Value base, const std::vector<int32_t>& idx, Value src) {
    const auto& bv = val_of(base);
    const auto& sv = val_of(src);
    if (sv.rows != int32_t(idx.size()) || sv.cols != bv.cols)
      throw std::logic_error("scatter_rows: shape mismatch");
    Value v = emit(Op::ScatterRows, base, src);
    nodes_[size_t(v.id)].rows = &idx;
    auto& out = vals_[size_t(v.id)];
    out.resize_keep(bv.rows, bv.cols);
    std::copy(bv.data.begin(), bv.data.end(), out.data.begin());
    for (size_t i = 0; i < idx.size(); ++i)
      std::copy(sv[int32_t(i)], sv[int32_t(i)] + sv.cols, out[idx[i]]);
    return v;
  }

  Value broadcast_row(Value a, int32_t n) {
    const auto& av = val_of(a);
    if (av.rows != 1) throw std::logic_error("broadcast_row: input must be 1 x c");
    Value v = emit(Op::BroadcastRow, a, {});
    auto& out = vals_[size_t(v.id)];
    out.resize_keep(n, av.cols);
    for (int32_t i = 0; i < n; ++i) std::copy(av[0], av[0] + av.cols, out[i]);
    return v;
  }

  Value reshape(Value a, int32_t r, int32_t c) {
    const auto& av = val_of(a);
    if (av.size() != size_t(r) * size_t(c)) throw std::logic_error("reshape: size mismatch");
    Value v = emit(Op::Reshape, a, {});
    auto& out = vals_[size_t(v.id)];
    out.resize_keep(r, c);
    std::copy(av.data.begin(), av.data.end(), out.data.begin());
    return v;
  }

  // Accumulates d(loss)/d(param) into the bound grad stores. loss must be
  // 1x1. Calling backward twice without recording anything new throws.
  void backward(Value loss, std::span<const Binding> bindings) {
    check_value(loss);
    if (vals_[size_t(loss.id)].size() != 1)
      throw std::logic_error("backward: loss must be a scalar");
    if (backward_done_)
      throw std::logic_error("backward called twice on the same recording");
    backward_done_ = true;

    grads_.resize(vals_.size());
    grad_live_.assign(size_t(n_nodes_), 0);
    touch(loss.id);
    grads_[size_t(loss.id)].data[0] = T(1);

    for (int32_t i = n_nodes_ - 1; i >= 0; --i) {
      if (!grad_live_[size_t(i)]) continue;
      step_backward(i);
    }

    for (int32_t i = 0; i < n_nodes_; ++i) {
      const Node& n = nodes_[size_t(i)];
      if (n.kind != Op::Param || !grad_live_[size_t(i)]) continue;
      GradStore<T>* gs = nullptr;
      for (const auto& b : bindings)
        if (static_cast<const void*>(b.params) == n.pset) gs = b.grads;
      if (!gs)
        throw std::logic_error("backward: parameter set of '" +
                               static_cast<const ParamSet<T>*>(n.pset)->entries[size_t(n.pidx)].name +
                               "' has no gradient binding");
      auto& dst = gs->g[size_t(n.pidx)];
      const auto& src = grads_[size_t(i)];
      if (!dst.same_shape(src)) throw std::logic_error("backward: grad shape mismatch");
      for (size_t k = 0; k < src.data.size(); ++k) dst.data[k] += src.data[k];
    }
  }

  void backward(Value loss, const ParamSet<T>& ps, GradStore<T>& gs) {
    Binding b{&ps, &gs};
    backward(loss, std::span<const Binding>(&b, 1));
  }

  bool check_finite = true;

 private:
  enum class Op : uint8_t {
    Leaf, Param, Spmm, Affine,
    Tanh, Relu, Softplus, Log, Exp, Square, Neg,
    Add, Sub, Mul, Div, Min2,
    AddScalar, Scale, Clamp,
    Sum, Mean, ConcatCols, GatherRows, ScatterRows, BroadcastRow, Reshape,
  };

  struct Node {
    Op kind = Op::Leaf;
    Value a{}, b{}, c{};
    double c0 = 0.0, c1 = 0.0;
    const CsrMatrix* csr = nullptr;
    const std::vector<int32_t>* rows = nullptr;
    const void* pset = nullptr;
    int pidx = -1;
  };

  Value emit(Op kind, Value a, Value b, Value c = {}) {
    if (a.valid()) check_value(a);
    if (b.valid()) check_value(b);
    if (c.valid()) check_value(c);
    if (size_t(n_nodes_) == nodes_.size()) {
      nodes_.emplace_back();
      vals_.emplace_back();
    }
    Node& n = nodes_[size_t(n_nodes_)];
    n = Node{};
    n.kind = kind;
    n.a = a;
    n.b = b;
    n.c = c;
    backward_done_ = false;
    return Value{n_nodes_++};
  }

  template <typename F>
  Value unary(Op kind, Value a, F f) {
    const auto& av = val_of(a);
    Value v = emit(kind, a, {});
    auto& out = vals_[size_t(v.id)];
    out.resize_keep(av.rows, av.cols);
    for (size_t i = 0; i < av.data.size(); ++i) out.data[i] = f(av.data[i]);
    finite_check(v, op_name(kind));
    return v;
  }

  template <typename F>
  Value binary(Op kind, Value a, Value b, F f) {
    const auto& av = val_of(a);
    const auto& bv = val_of(b);
    if (!av.same_shape(bv)) throw std::logic_error(std::string(op_name(kind)) + ": shape mismatch");
    Value v = emit(kind, a, b);
    auto& out = vals_[size_t(v.id)];
    out.resize_keep(av.rows, av.cols);
    for (size_t i = 0; i < av.data.size(); ++i) out.data[i] = f(av.data[i], bv.data[i]);
    finite_check(v, op_name(kind));
    return v;
  }

  void check_value(Value v) const {
    if (v.id < 0 || v.id >= n_nodes_) throw std::logic_error("tape: stale or invalid value handle");
  }

  const Tensor2<T>& val_of(Value v) {
    check_value(v);
    return vals_[size_t(v.id)];
  }

  void finite_check(Value v, std::string_view what) const {
    if (!check_finite) return;
    if (!vals_[size_t(v.id)].all_finite())
      throw std::runtime_error("non-finite value produced by " + std::string(what));
  }

  static const char* op_name(Op k) {
    switch (k) {
      case Op::Leaf: return "leaf";
      case Op::Param: return "param";
      case Op::Spmm: return "spmm";
      case Op::Affine: return "affine";
      case Op::Tanh: return "tanh";
      case Op::Relu: return "relu";
      case Op::Softplus: return "softplus";
      case Op::Log: return "log";
      case Op::Exp: return "exp";
      case Op::Square: return "square";
      case Op::Neg: return "neg";
      case Op::Add: return "add";
      case Op::Sub: return "sub";
      case Op::Mul: return "mul";
      case Op::Div: return "div";
      case Op::Min2: return "min2";
      case Op::AddScalar: return "add_scalar";
      case Op::Scale: return "scale";
      case Op::Clamp: return "clamp";
      case Op::Sum: return "sum";
      case Op::Mean: return "mean";
      case Op::ConcatCols: return "concat_cols";
      case Op::GatherRows: return "gather_rows";
      case Op::ScatterRows: return "scatter_rows";
      case Op::BroadcastRow: return "broadcast_row";
      case Op::Reshape: return "reshape";
    }
    return "?";
  }

  Tensor2<T>& touch(int32_t id) {
    auto& g = grads_[size_t(id)];
    if (!grad_live_[size_t(id)]) {
      const auto& v = vals_[size_t(id)];
      g.assign_zero(v.rows, v.cols);
      grad_live_[size_t(id)] = 1;
    }
    return g;
  }

  void step_backward(int32_t i) {
    const Node& n = nodes_[size_t(i)];
    const Tensor2<T>& gy = grads_[size_t(i)];
    switch (n.kind) {
      case Op::Leaf:
      case Op::Param:
        return;
      case Op::Spmm: {
        spmm_transpose(*n.csr, gy, scratch_);
        auto& ga = touch(n.a.id);
        for (size_t k = 0; k < ga.data.size(); ++k) ga.data[k] += scratch_.data[k];
        return;
      }
      case Op::Affine: {
        const auto& xv = vals_[size_t(n.a.id)];
        const auto& wv = vals_[size_t(n.b.id)];
        auto& gx = touch(n.a.id);
        auto& gw = touch(n.b.id);
        auto& gb = touch(n.c.id);
        for (int32_t r = 0; r < xv.rows; ++r) {
          const T* gyr = gy[r];
          const T* xr = xv[r];
          T* gxr = gx[r];
          for (int32_t o = 0; o < wv.rows; ++o) {
            const T g = gyr[o];
            if (g == T(0)) continue;
            const T* wr = wv[o];
            T* gwr = gw[o];
            for (int32_t k = 0; k < xv.cols; ++k) {
              gxr[k] += g * wr[k];
              gwr[k] += g * xr[k];
            }
            gb.data[size_t(o)] += g;
          }
        }
        return;
      }
      case Op::Tanh: {
        const auto& yv = vals_[size_t(i)];
        auto& ga = touch(n.a.id);
        for (size_t k = 0; k < ga.data.size(); ++k)
          ga.data[k] += gy.data[k] * (T(1) - yv.data[k] * yv.data[k]);
        return;
      }
      case Op::Relu: {
        const auto& yv = vals_[size_t(i)];
        auto& ga = touch(n.a.id);
        for (size_t k = 0; k < ga.data.size(); ++k)
          if (yv.data[k] > T(0)) ga.data[k] += gy.data[k];
        return;
      }
      case Op::Softplus: {
        const auto& xv = vals_[size_t(n.a.id)];
        auto& ga = touch(n.a.id);
        for (size_t k = 0; k < ga.data.size(); ++k) {
          const double x = double(xv.data[k]);
          const double sig = x > 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
          ga.data[k] += gy.data[k] * T(sig);
        }
        return;
      }
      case Op::Log: {
        const auto& xv = vals_[size_t(n.a.id)];
        auto& ga = touch(n.a.id);
        for (size_t k = 0; k < ga.data.size(); ++k) ga.data[k] += gy.data[k] / xv.data[k];
        return;
      }
      case Op::Exp: {
        const auto& yv = vals_[size_t(i)];
        auto& ga = touch(n.a.id);
        for (size_t k = 0; k < ga.data.size(); ++k) ga.data[k] += gy.data[k] * yv.data[k];
        return;
      }
      case Op::Square: {
        const auto& xv = vals_[size_t(n.a.id)];
        auto& ga = touch(n.a.id);
        for (size_t k = 0; k < ga.data.size(); ++k)
          ga.data[k] += T(2) * xv.data[k] * gy.data[k];
        return;
      }
      case Op::Neg: {
        auto& ga = touch(n.a.id);
        for (size_t k = 0; k < ga.data.size(); ++k) ga.data[k] -= gy.data[k];
        return;
      }
      case Op::Add: {
        auto& ga = touch(n.a.id);
        for (size_t k = 0; k < ga.data.size(); ++k) ga.data[k] += gy.data[k];
        auto& gb = touch(n.b.id);
        for (size_t k = 0; k < gb.data.size(); ++k) gb.data[k] += gy.data[k];
        return;
      }
      case Op::Sub: {
        auto& ga = touch(n.a.id);
        for (size_t k = 0; k < ga.data.size(); ++k) ga.data[k] += gy.data[k];
        auto& gb = touch(n.b.id);
        for (size_t k = 0; k < gb.data.size(); ++k) gb.data[k] -= gy.data[k];
        return;
      }
      case Op::Mul: {
        const auto& av = vals_[size_t(n.a.id)];
        const auto& bv = vals_[size_t(n.b.id)];
        auto& ga = touch(n.a.id);
        for (size_t k = 0; k < ga.data.size(); ++k) ga.data[k] += gy.data[k] * bv.data[k];
        auto& gb = touch(n.b.id);
        for (size_t k = 0; k < gb.data.size(); ++k) gb.data[k] += gy.data[k] * av.data[k];
        return;
      }
      case Op::Div: {
        const auto& bv = vals_[size_t(n.b.id)];
        const auto& yv = vals_[size_t(i)];
        auto& ga = touch(n.a.id);
        for (size_t k = 0; k < ga.data.size(); ++k) ga.data[k] += gy.data[k] / bv.data[k];
        auto& gb = touch(n.b.id);
        for (size_t k = 0; k < gb.data.size(); ++k)
          gb.data[k] -= gy.data[k] * yv.data[k] / bv.data[k];
        return;
      }
      case Op::Min2: {
        const auto& av = vals_[size_t(n.a.id)];
        const auto& bv = vals_[size_t(n.b.id)];
        auto& ga = touch(n.a.id);
        auto& gb = touch(n.b.id);
        for (size_t k = 0; k < ga.data.size(); ++k) {
          if (av.data[k] <= bv.data[k])
            ga.data[k] += gy.data[k];
          else
            gb.data[k] += gy.data[k];
        }
        return;
      }
      case Op::AddScalar: {
        auto& ga = touch(n.a.id);
        for (size_t k = 0; k < ga.data.size(); ++k) ga.data[k] += gy.data[k];
        return;
      }
      case Op::Scale: {
        auto& ga = touch(n.a.id);
        const T c = T(n.c0);
        for (size_t k = 0; k < ga.data.size(); ++k) ga.data[k] += c * gy.data[k];
        return;
      }
      case Op::Clamp: {
        const auto& xv = vals_[size_t(n.a.id)];
        auto& ga = touch(n.a.id);
        const T lo = T(n.c0), hi = T(n.c1);
        for (size_t k = 0; k < ga.data.size(); ++k)
          if (xv.data[k] >= lo && xv.data[k] <= hi) ga.data[k] += gy.data[k];
        return;
      }
      case Op::Sum: {
        auto& ga = touch(n.a.id);
        const T g = gy.data[0];
        for (size_t k = 0; k < ga.data.size(); ++k) ga.data[k] += g;
        return;
      }
      case Op::Mean: {
        auto& ga = touch(n.a.id);
        const T g = T(double(gy.data[0]) / double(ga.data.size()));
        for (size_t k = 0; k < ga.data.size(); ++k) ga.data[k] += g;
        return;
      }
      case Op::ConcatCols: {
        const auto& av = vals_[size_t(n.a.id)];
        auto& ga = touch(n.a.id);
        auto& gb = touch(n.b.id);
        for (int32_t r = 0; r < gy.rows; ++r) {
          const T* gyr = gy[r];
          T* gar = ga[r];
          T* gbr = gb[r];
          for (int32_t k = 0; k < av.cols; ++k) gar[k] += gyr[k];
          for (int32_t k = 0; k < gb.cols; ++k) gbr[k] += gyr[av.cols + k];
        }
        return;
      }
      case Op::GatherRows: {
        auto& ga = touch(n.a.id);
        const auto& idx = *n.rows;
        for (size_t r = 0; r < idx.size(); ++r) {
          const T* gyr = gy[int32_t(r)];
          T* gar = ga[idx[r]];
          for (int32_t k = 0; k < gy.cols; ++k) gar[k] += gyr[k];
        }
        return;
      }
      case Op::ScatterRows: {
        const auto& idx = *n.rows;
        auto& gb = touch(n.a.id);
        auto& gs = touch(n.b.id);
        // base takes gy everywhere except the overwritten rows
        for (size_t k = 0; k < gb.data.size(); ++k) gb.data[k] += gy.data[k];
        for (size_t r = 0; r < idx.size(); ++r) {
          const T* gyr = gy[idx[r]];
          T* gbr = gb[idx[r]];
          T* gsr = gs[int32_t(r)];
          for (int32_t k = 0; k < gy.cols; ++k) {
            gbr[k] -= gyr[k];
            gsr[k] += gyr[k];
          }
        }
        return;
      }
      case Op::BroadcastRow: {
        auto& ga = touch(n.a.id);
        for (int32_t r = 0; r < gy.rows; ++r) {
          const T* gyr = gy[r];
          for (int32_t k = 0; k < gy.cols; ++k) ga.data[size_t(k)] += gyr[k];
        }
        return;
      }
      case Op::Reshape: {
        auto& ga = touch(n.a.id);
        for (size_t k = 0; k < ga.data.size(); ++k) ga.data[k] += gy.data[k];
        return;
      }
    }
  }

  int32_t n_nodes_ = 0;
  bool backward_done_ = false;
  std::vector<Node> nodes_;
  // deque: ops hold references into vals_ across emit(), which may grow it
  std::deque<Tensor2<T>> vals_;
  std::vector<Tensor2<T>> grads_;
  std::vector<char> grad_live_;
  Tensor2<T> scratch_;
  std::map<std::pair<const void*, int>, int32_t> param_memo_;
};

}  // namespace flygm
