// Copyright 2026 The ctcbridge Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Reverse-mode differentiation over a recorded sequence of tensor ops.
//
// A BasicTape owns every intermediate value. Nodes are appended in creation
// order, which is a topological order of the computation, so backward() is a
// single reverse sweep that visits each node once. Ops whose inputs do not
// require gradients record no closure, which makes an inference pass on a
// tape cost little more than the forward arithmetic.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctcbridge/errors.hpp"
#include "ctcbridge/rng.hpp"
#include "ctcbridge/tensor.hpp"

namespace ctcbridge {

// Trainable (or frozen) model weight. Values are always stored as float;
// a double tape converts on bind.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool train = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), trainable(train) {}

  void zero_grad() { grad = Tensor(value.shape()); }
};

template <typename T>
class BasicTape;

template <typename T>
class Var {
 public:
  Var() = default;
  Var(BasicTape<T>* tape, int id) : tape_(tape), id_(id) {}

  const BasicTensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  BasicTape<T>* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  BasicTape<T>* tape_ = nullptr;
  int id_ = -1;
};

template <typename T>
class BasicTape {
 public:
  using TensorT = BasicTensor<T>;
  using BackwardFn = std::function<void(BasicTape&, const TensorT& out_grad)>;

  BasicTape() = default;
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  // Enables dropout and other train-only behavior.
  bool training = false;
  // Binds parameters as constants: nothing on this tape can reach p.grad.
  bool no_grad = false;

  Var<T> constant(TensorT v) { return push(std::move(v), false, nullptr, nullptr); }

  // A leaf whose gradient can be read back with grad().
  Var<T> variable(TensorT v) { return push(std::move(v), true, nullptr, nullptr); }

  // Binds a parameter once per tape; later calls return the same node.
  Var<T> param(const Parameter& p) {
    if (auto it = bound_.find(&p); it != bound_.end()) return Var<T>(this, it->second);
    const bool rg = p.trainable && !no_grad;
    // Only trainable bindings keep a handle for gradient write-back.
    Var<T> v = push(TensorT::cast(p.value), rg, nullptr, rg ? const_cast<Parameter*>(&p) : nullptr);
    bound_[&p] = v.id();
    return v;
  }

  // Routes every later param(p) to v. Used to differentiate with respect to
  // a parameter through a leaf created by variable().
  void bind(const Parameter& p, Var<T> v) {
    CTCB_REQUIRE(v.tape() == this, "bind: variable belongs to another tape");
    CTCB_REQUIRE(v.shape() == p.value.shape(), "bind: shape mismatch for " + p.name);
    bound_[&p] = v.id();
  }

  Var<T> record(TensorT value, const std::vector<Var<T>>& inputs, BackwardFn fn) {
    bool rg = false;
    for (const auto& in : inputs) {
      CTCB_REQUIRE(in.tape() == this, "op mixes variables from different tapes");
      rg = rg || nodes_[in.id()].requires_grad;
    }
    return push(std::move(value), rg, rg ? std::move(fn) : nullptr, nullptr);
  }
  Var<T> record(TensorT value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    return record(std::move(value), std::vector<Var<T>>(inputs), std::move(fn));
  }

  bool requires_grad(Var<T> v) const { return nodes_[v.id()].requires_grad; }
  const TensorT& value(int id) const { return nodes_[id].value; }

  // Gradient accumulator for v, allocated on first use.
  TensorT& grad_acc(Var<T> v) {
    Node& n = nodes_[v.id()];
    if (!n.has_grad) {
      n.grad = TensorT(n.value.shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  const TensorT& grad(Var<T> v) const {
    const Node& n = nodes_[v.id()];
    CTCB_REQUIRE(backward_done_, "grad() before backward()");
    CTCB_REQUIRE(n.requires_grad, "grad() on a node that does not require gradients");
    if (!n.has_grad) {
      auto& mut = const_cast<Node&>(n);
      mut.grad = TensorT(n.value.shape());
      mut.has_grad = true;
    }
    return n.grad;
  }

  // Accumulates d(loss)/d(value) into every trainable bound Parameter.
  void backward(Var<T> loss) {
    CTCB_REQUIRE(loss.tape() == this, "backward: loss belongs to another tape");
    CTCB_REQUIRE(loss.value().size() == 1,
                 "backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    CTCB_REQUIRE(!backward_done_, "backward called twice on the same tape");
    backward_done_ = true;
    if (!nodes_[loss.id()].requires_grad) return;
    grad_acc(loss)[0] = T(1);
    for (int id = loss.id(); id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.has_grad) continue;
      if (n.backward) n.backward(*this, n.grad);
    }
    for (auto& n : nodes_) {
      if (!n.param || !n.has_grad || !n.param->trainable) continue;
      Parameter& p = *n.param;
      if (p.grad.shape() != p.value.shape()) p.zero_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += static_cast<float>(n.grad[i]);
    }
  }

  std::size_t size() const { return nodes_.size(); }

  // Drops all nodes and bindings so the tape can record a fresh computation.
  void reset() {
    nodes_.clear();
    bound_.clear();
    backward_done_ = false;
  }

 private:
  struct Node {
    TensorT value;
    TensorT grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  Var<T> push(TensorT v, bool rg, BackwardFn fn, Parameter* p) {
    Node n;
    n.value = std::move(v);
    n.requires_grad = rg;
    n.backward = std::move(fn);
    n.param = p;
    nodes_.push_back(std::move(n));
    return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> bound_;
  bool backward_done_ = false;
};

using Tape = BasicTape<float>;

// Large negative log-value used instead of -inf so masked entries stay finite.
inline constexpr double kLogZero = -1e30;

namespace kernels {

template <typename T>
void add_into(BasicTensor<T>& dst, const BasicTensor<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// C[N,M] = A[N,K] B[K,M]
template <typename T>
BasicTensor<T> mm(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  BasicTensor<T> c({n, m});
  std::vector<double> acc(m);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const T* ar = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ar[p];
      if (av == 0.0) continue;
      const T* br = b.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) acc[j] += av * static_cast<double>(br[j]);
    }
    T* cr = c.data() + i * m;
    for (std::size_t j = 0; j < m; ++j) cr[j] = static_cast<T>(acc[j]);
  }
  return c;
}

// C[N,M] = A[N,K] B[M,K]^T. Same per-entry summation order as mm.
template <typename T>
BasicTensor<T> mm_nt(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const std::size_t k = b.cols(), m = b.rows();
  BasicTensor<T> bt({k, m});
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t p = 0; p < k; ++p) bt(p, j) = b(j, p);
  return mm(a, bt);
}

// C[N,M] = A[K,N]^T B[K,M]
template <typename T>
BasicTensor<T> mm_tn(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const std::size_t k = a.rows(), n = a.cols(), m = b.cols();
  std::vector<double> acc(n * m, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const T* ar = a.data() + p * n;
    const T* br = b.data() + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      const double av = ar[i];
      if (av == 0.0) continue;
      double* cr = acc.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) cr[j] += av * static_cast<double>(br[j]);
    }
  }
  BasicTensor<T> c({n, m});
  for (std::size_t i = 0; i < acc.size(); ++i) c[i] = static_cast<T>(acc[i]);
  return c;
}

// Row-wise exp((x - max) / tau) / sum, computed in double.
template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& x, double tau) {
  if (!(tau > 0.0)) throw DomainError("softmax temperature must be positive");
  BasicTensor<T> y(x.shape());
  const std::size_t n = x.rows(), c = x.cols();
  std::vector<double> e(c);
  for (std::size_t i = 0; i < n; ++i) {
    const T* xr = x.data() + i * c;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, static_cast<double>(xr[j]));
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      e[j] = std::exp((static_cast<double>(xr[j]) - mx) / tau);
      s += e[j];
    }
    for (std::size_t j = 0; j < c; ++j) y(i, j) = static_cast<T>(e[j] / s);
  }
  return y;
}

template <typename U>
double logsumexp(std::span<const U> v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (U x : v) mx = std::max(mx, static_cast<double>(x));
  if (v.empty()) return kLogZero;
  double s = 0.0;
  for (U x : v) s += std::exp(static_cast<double>(x) - mx);
  return mx + std::log(s);
}

}  // namespace kernels

namespace ad {

template <typename T>
void check_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  CTCB_REQUIRE(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                           shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  check_same_shape(a, b, "add");
  BasicTensor<T> y = a.value();
  kernels::add_into(y, b.value());
  return a.tape()->record(std::move(y), {a, b}, [a, b](BasicTape<T>& t, const BasicTensor<T>& g) {
    if (t.requires_grad(a)) kernels::add_into(t.grad_acc(a), g);
    if (t.requires_grad(b)) kernels::add_into(t.grad_acc(b), g);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  check_same_shape(a, b, "sub");
  BasicTensor<T> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  return a.tape()->record(std::move(y), {a, b}, [a, b](BasicTape<T>& t, const BasicTensor<T>& g) {
    if (t.requires_grad(a)) kernels::add_into(t.grad_acc(a), g);
    if (t.requires_grad(b)) {
      auto& gb = t.grad_acc(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  check_same_shape(a, b, "mul");
  BasicTensor<T> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  return a.tape()->record(std::move(y), {a, b}, [a, b](BasicTape<T>& t, const BasicTensor<T>& g) {
    if (t.requires_grad(a)) {
      auto& ga = t.grad_acc(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.value()[i];
    }
    if (t.requires_grad(b)) {
      auto& gb = t.grad_acc(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.value()[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, double s) {
  BasicTensor<T> y = a.value();
  for (auto& v : y.values()) v = static_cast<T>(v * s);
  return a.tape()->record(std::move(y), {a}, [a, s](BasicTape<T>& t, const BasicTensor<T>& g) {
    auto& ga = t.grad_acc(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += static_cast<T>(g[i] * s);
  });
}

// x[N,C] + b[C] (b may be rank 1 or [1,C]).
template <typename T>
Var<T> add_bias(Var<T> x, Var<T> b) {
  const std::size_t n = x.rows(), c = x.cols();
  CTCB_REQUIRE(b.value().size() == c, "add_bias: bias length " + std::to_string(b.value().size()) +
                                          " != columns " + std::to_string(c));
  BasicTensor<T> y = x.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) y(i, j) += b.value()[j];
  return x.tape()->record(std::move(y), {x, b}, [x, b, n, c](BasicTape<T>& t, const BasicTensor<T>& g) {
    if (t.requires_grad(x)) kernels::add_into(t.grad_acc(x), g);
    if (t.requires_grad(b)) {
      auto& gb = t.grad_acc(b);
      for (std::size_t j = 0; j < c; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += g(i, j);
        gb[j] += static_cast<T>(s);
      }
    }
  });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  CTCB_REQUIRE(a.value().rank() == 2 && b.value().rank() == 2 && a.cols() == b.rows(),
               "matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  return a.tape()->record(kernels::mm(a.value(), b.value()), {a, b},
                          [a, b](BasicTape<T>& t, const BasicTensor<T>& g) {
                            if (t.requires_grad(a)) kernels::add_into(t.grad_acc(a), kernels::mm_nt(g, b.value()));
                            if (t.requires_grad(b)) kernels::add_into(t.grad_acc(b), kernels::mm_tn(a.value(), g));
                          });
}

// a[N,K] b[M,K]^T -> [N,M]
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  CTCB_REQUIRE(a.value().rank() == 2 && b.value().rank() == 2 && a.cols() == b.cols(),
               "matmul_nt: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  return a.tape()->record(kernels::mm_nt(a.value(), b.value()), {a, b},
                          [a, b](BasicTape<T>& t, const BasicTensor<T>& g) {
                            if (t.requires_grad(a)) kernels::add_into(t.grad_acc(a), kernels::mm(g, b.value()));
                            if (t.requires_grad(b)) kernels::add_into(t.grad_acc(b), kernels::mm_tn(g, a.value()));
                          });
}

template <typename T, typename F, typename DF>
Var<T> unary(Var<T> a, F f, DF df) {
  BasicTensor<T> y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<T>(f(static_cast<double>(a.value()[i])));
  return a.tape()->record(std::move(y), {a}, [a, df](BasicTape<T>& t, const BasicTensor<T>& g) {
    auto& ga = t.grad_acc(a);
    for (std::size_t i = 0; i < g.size(); ++i)
      ga[i] += static_cast<T>(g[i] * df(static_cast<double>(a.value()[i])));
  });
}

template <typename T>
Var<T> tanh(Var<T> a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double x) { double th = std::tanh(x); return 1.0 - th * th; });
}

template <typename T>
Var<T> relu(Var<T> a) {
  return unary(a, [](double x) { return x > 0 ? x : 0.0; }, [](double x) { return x > 0 ? 1.0 : 0.0; });
}

// tanh approximation of GELU.
template <typename T>
Var<T> gelu(Var<T> a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::tanh(kC * (x + 0.044715 * x * x * x))); },
      [](double x) {
        const double u = kC * (x + 0.044715 * x * x * x);
        const double th = std::tanh(u);
        const double du = kC * (1.0 + 3.0 * 0.044715 * x * x);
        return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
      });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape s) {
  const Shape orig = a.shape();
  return a.tape()->record(a.value().reshaped(std::move(s)), {a},
                          [a](BasicTape<T>& t, const BasicTensor<T>& g) {
                            auto& ga = t.grad_acc(a);
                            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                          });
}

// Embedding lookup: rows of table[R,C] at ids -> [n,C].
template <typename T>
Var<T> gather_rows(Var<T> table, std::vector<int> ids) {
  const std::size_t r = table.rows(), c = table.cols();
  BasicTensor<T> y({ids.size(), c});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    CTCB_REQUIRE(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < r,
                 "gather_rows: index " + std::to_string(ids[i]) + " out of range " + std::to_string(r));
    std::copy_n(table.value().data() + ids[i] * c, c, y.data() + i * c);
  }
  return table.tape()->record(std::move(y), {table},
                              [table, ids = std::move(ids), c](BasicTape<T>& t, const BasicTensor<T>& g) {
                                auto& gt = t.grad_acc(table);
                                for (std::size_t i = 0; i < ids.size(); ++i)
                                  for (std::size_t j = 0; j < c; ++j) gt(ids[i], j) += g(i, j);
                              });
}

template <typename T>
Var<T> slice_rows(Var<T> a, std::size_t begin, std::size_t end) {
  const std::size_t c = a.cols();
  CTCB_REQUIRE(begin <= end && end <= a.rows(), "slice_rows: range out of bounds");
  BasicTensor<T> y({end - begin, c});
  std::copy_n(a.value().data() + begin * c, (end - begin) * c, y.data());
  return a.tape()->record(std::move(y), {a}, [a, begin, c](BasicTape<T>& t, const BasicTensor<T>& g) {
    auto& ga = t.grad_acc(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[begin * c + i] += g[i];
  });
}

template <typename T>
Var<T> slice_cols(Var<T> a, std::size_t begin, std::size_t end) {
  const std::size_t n = a.rows(), w = end - begin;
  CTCB_REQUIRE(begin <= end && end <= a.cols(), "slice_cols: range out of bounds");
  BasicTensor<T> y({n, w});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < w; ++j) y(i, j) = a.value()(i, begin + j);
  return a.tape()->record(std::move(y), {a}, [a, begin, n, w](BasicTape<T>& t, const BasicTensor<T>& g) {
    auto& ga = t.grad_acc(a);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) ga(i, begin + j) += g(i, j);
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  CTCB_REQUIRE(!parts.empty(), "concat_rows: no inputs");
  const std::size_t c = parts.front().cols();
  std::size_t n = 0;
  for (const auto& p : parts) {
    CTCB_REQUIRE(p.value().rank() == 2 && p.cols() == c, "concat_rows: column mismatch");
    n += p.rows();
  }
  BasicTensor<T> y({n, c});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy_n(p.value().data(), p.value().size(), y.data() + off);
    off += p.value().size();
  }
  return parts.front().tape()->record(std::move(y), parts, [parts](BasicTape<T>& t, const BasicTensor<T>& g) {
    std::size_t o = 0;
    for (const auto& p : parts) {
      const std::size_t sz = p.value().size();
      if (t.requires_grad(p)) {
        auto& gp = t.grad_acc(p);
        for (std::size_t i = 0; i < sz; ++i) gp[i] += g[o + i];
      }
      o += sz;
    }
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  CTCB_REQUIRE(!parts.empty(), "concat_cols: no inputs");
  const std::size_t n = parts.front().rows();
  std::size_t c = 0;
  for (const auto& p : parts) {
    CTCB_REQUIRE(p.rows() == n, "concat_cols: row mismatch");
    c += p.cols();
  }
  BasicTensor<T> y({n, c});
  std::size_t off = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < p.cols(); ++j) y(i, off + j) = p.value()(i, j);
    off += p.cols();
  }
  return parts.front().tape()->record(std::move(y), parts, [parts, n](BasicTape<T>& t, const BasicTensor<T>& g) {
    std::size_t o = 0;
    for (const auto& p : parts) {
      if (t.requires_grad(p)) {
        auto& gp = t.grad_acc(p);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < p.cols(); ++j) gp(i, j) += g(i, o + j);
      }
      o += p.cols();
    }
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, double eps = 1e-5) {
  const std::size_t n = x.rows(), c = x.cols();
  CTCB_REQUIRE(gain.value().size() == c && bias.value().size() == c, "layer_norm: parameter size mismatch");
  BasicTensor<T> y({n, c});
  std::vector<double> xhat(n * c), inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += x.value()(i, j);
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = x.value()(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (x.value()(i, j) - mean) * inv_std[i];
      y(i, j) = static_cast<T>(xhat[i * c + j] * gain.value()[j] + bias.value()[j]);
    }
  }
  return x.tape()->record(
      std::move(y), {x, gain, bias},
      [x, gain, bias, n, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](BasicTape<T>& t,
                                                                                   const BasicTensor<T>& g) {
        if (t.requires_grad(gain) || t.requires_grad(bias)) {
          std::vector<double> gg(c, 0.0), gb(c, 0.0);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) {
              gg[j] += g(i, j) * xhat[i * c + j];
              gb[j] += g(i, j);
            }
          if (t.requires_grad(gain)) {
            auto& a = t.grad_acc(gain);
            for (std::size_t j = 0; j < c; ++j) a[j] += static_cast<T>(gg[j]);
          }
          if (t.requires_grad(bias)) {
            auto& a = t.grad_acc(bias);
            for (std::size_t j = 0; j < c; ++j) a[j] += static_cast<T>(gb[j]);
          }
        }
        if (t.requires_grad(x)) {
          auto& gx = t.grad_acc(x);
          for (std::size_t i = 0; i < n; ++i) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double dxh = g(i, j) * static_cast<double>(gain.value()[j]);
              m1 += dxh;
              m2 += dxh * xhat[i * c + j];
            }
            m1 /= static_cast<double>(c);
            m2 /= static_cast<double>(c);
            for (std::size_t j = 0; j < c; ++j) {
              const double dxh = g(i, j) * static_cast<double>(gain.value()[j]);
              gx(i, j) += static_cast<T>(inv_std[i] * (dxh - m1 - xhat[i * c + j] * m2));
            }
          }
        }
      });
}

namespace detail {
// Shared backward for softmax-like outputs: gx = (y * (g - <g, y>)) / tau.
template <typename T>
void softmax_backward(BasicTensor<T>& gx, const BasicTensor<T>& y, const BasicTensor<T>& g, double tau) {
  const std::size_t n = y.rows(), c = y.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < c; ++j) dot += static_cast<double>(g(i, j)) * y(i, j);
    for (std::size_t j = 0; j < c; ++j)
      gx(i, j) += static_cast<T>(y(i, j) * (g(i, j) - dot) / tau);
  }
}
}  // namespace detail

// Temperature softmax over the last axis.
template <typename T>
Var<T> softmax(Var<T> x, double tau = 1.0) {
  BasicTensor<T> y = kernels::softmax_rows(x.value(), tau);
  // record() appends exactly one node, so the output id is the current size.
  const int id = static_cast<int>(x.tape()->size());
  return x.tape()->record(std::move(y), {x}, [x, tau, id](BasicTape<T>& t, const BasicTensor<T>& g) {
    detail::softmax_backward(t.grad_acc(x), t.value(id), g, tau);
  });
}

// Softmax of scores[N,M] where row i may attend to columns j <= i + offset.
// Masked entries are exactly zero in the output.
template <typename T>
Var<T> causal_softmax(Var<T> scores, std::size_t offset = 0) {
  const std::size_t n = scores.rows(), m = scores.cols();
  BasicTensor<T> y({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lim = std::min(m, i + offset + 1);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < lim; ++j) mx = std::max(mx, static_cast<double>(scores.value()(i, j)));
    double s = 0.0;
    std::vector<double> e(lim);
    for (std::size_t j = 0; j < lim; ++j) {
      e[j] = std::exp(static_cast<double>(scores.value()(i, j)) - mx);
      s += e[j];
    }
    for (std::size_t j = 0; j < lim; ++j) y(i, j) = static_cast<T>(e[j] / s);
  }
  const int id = static_cast<int>(scores.tape()->size());
  return scores.tape()->record(std::move(y), {scores}, [scores, id](BasicTape<T>& t, const BasicTensor<T>& g) {
    detail::softmax_backward(t.grad_acc(scores), t.value(id), g, 1.0);
  });
}

template <typename T>
Var<T> log_softmax(Var<T> x) {
  const std::size_t n = x.rows(), c = x.cols();
  BasicTensor<T> y({n, c});
  BasicTensor<T> p({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    const double lse = kernels::logsumexp(x.value().row(i));
    for (std::size_t j = 0; j < c; ++j) {
      const double v = static_cast<double>(x.value()(i, j)) - lse;
      y(i, j) = static_cast<T>(v);
      p(i, j) = static_cast<T>(std::exp(v));
    }
  }
  return x.tape()->record(std::move(y), {x}, [x, p = std::move(p), n, c](BasicTape<T>& t, const BasicTensor<T>& g) {
    auto& gx = t.grad_acc(x);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += g(i, j);
      for (std::size_t j = 0; j < c; ++j) gx(i, j) += static_cast<T>(g(i, j) - p(i, j) * s);
    }
  });
}

// Row-wise log-sum-exp: [N,C] -> [N].
template <typename T>
Var<T> logsumexp_rows(Var<T> x) {
  const std::size_t n = x.rows(), c = x.cols();
  BasicTensor<T> y({n});
  std::vector<double> lse(n);
  for (std::size_t i = 0; i < n; ++i) {
    lse[i] = kernels::logsumexp(x.value().row(i));
    y[i] = static_cast<T>(lse[i]);
  }
  return x.tape()->record(std::move(y), {x}, [x, lse = std::move(lse), n, c](BasicTape<T>& t, const BasicTensor<T>& g) {
    auto& gx = t.grad_acc(x);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j)
        gx(i, j) += static_cast<T>(g[i] * std::exp(static_cast<double>(x.value()(i, j)) - lse[i]));
  });
}

enum class Reduction { kMean, kSum };

// Softmax cross-entropy of logits[N,C] against integer targets.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::vector<int> targets, Reduction red = Reduction::kMean) {
  const std::size_t n = logits.rows(), c = logits.cols();
  CTCB_REQUIRE(targets.size() == n, "cross_entropy: target count does not match rows");
  BasicTensor<T> p({n, c});
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    CTCB_REQUIRE(targets[i] >= 0 && static_cast<std::size_t>(targets[i]) < c, "cross_entropy: target out of range");
    const double lse = kernels::logsumexp(logits.value().row(i));
    for (std::size_t j = 0; j < c; ++j) p(i, j) = static_cast<T>(std::exp(logits.value()(i, j) - lse));
    loss += lse - static_cast<double>(logits.value()(i, targets[i]));
  }
  const double norm = (red == Reduction::kMean && n > 0) ? 1.0 / static_cast<double>(n) : 1.0;
  return logits.tape()->record(
      BasicTensor<T>::scalar(static_cast<T>(loss * norm)), {logits},
      [logits, p = std::move(p), targets = std::move(targets), n, c, norm](BasicTape<T>& t, const BasicTensor<T>& g) {
        auto& gl = t.grad_acc(logits);
        const double s = static_cast<double>(g[0]) * norm;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j)
            gl(i, j) += static_cast<T>(s * (p(i, j) - (static_cast<int>(j) == targets[i] ? 1.0 : 0.0)));
      });
}

template <typename T>
Var<T> sum(Var<T> a) {
  double s = 0.0;
  for (T v : a.value().values()) s += v;
  return a.tape()->record(BasicTensor<T>::scalar(static_cast<T>(s)), {a},
                          [a](BasicTape<T>& t, const BasicTensor<T>& g) {
                            auto& ga = t.grad_acc(a);
                            for (auto& v : ga.values()) v += g[0];
                          });
}

template <typename T>
Var<T> mean(Var<T> a) {
  const double n = static_cast<double>(std::max<std::size_t>(a.value().size(), 1));
  return scale(sum(a), 1.0 / n);
}

// Inverted dropout; identity unless the tape is in training mode.
template <typename T>
Var<T> dropout(Var<T> a, double rate, Rng& rng) {
  if (!a.tape()->training || rate <= 0.0) return a;
  BasicTensor<T> mask(a.shape());
  const double keep = 1.0 - rate;
  for (auto& m : mask.values()) m = rng.uniform() < keep ? static_cast<T>(1.0 / keep) : T(0);
  return mul(a, a.tape()->constant(std::move(mask)));
}

// Im2col for a 1-D strided convolution over time: output row i holds input
// rows i*stride - kernel/2 ... i*stride - kernel/2 + kernel - 1 (zero padded),
// giving ceil(T / stride) rows of width kernel * F.
template <typename T>
Var<T> frame_stack(Var<T> x, std::size_t kernel, std::size_t stride) {
  const std::size_t tin = x.rows(), f = x.cols();
  CTCB_REQUIRE(kernel >= 1 && stride >= 1, "frame_stack: kernel and stride must be positive");
  const std::size_t tout = (tin + stride - 1) / stride;
  const long half = static_cast<long>(kernel / 2);
  BasicTensor<T> y({tout, kernel * f});
  for (std::size_t i = 0; i < tout; ++i)
    for (std::size_t k = 0; k < kernel; ++k) {
      const long src = static_cast<long>(i * stride) - half + static_cast<long>(k);
      if (src < 0 || src >= static_cast<long>(tin)) continue;
      std::copy_n(x.value().data() + src * f, f, y.data() + i * kernel * f + k * f);
    }
  return x.tape()->record(std::move(y), {x}, [x, kernel, stride, tin, tout, f, half](BasicTape<T>& t, const BasicTensor<T>& g) {
    auto& gx = t.grad_acc(x);
    for (std::size_t i = 0; i < tout; ++i)
      for (std::size_t k = 0; k < kernel; ++k) {
        const long src = static_cast<long>(i * stride) - half + static_cast<long>(k);
        if (src < 0 || src >= static_cast<long>(tin)) continue;
        for (std::size_t j = 0; j < f; ++j) gx(src, j) += g(i, k * f + j);
      }
  });
}

}  // namespace ad

// Max over coordinates of |a - n| / max(|a|, |n|, 1e-6), with a the analytic
// gradient and n the central difference, for the scalar function f at x.
// Below the floor the check is absolute: exactly-zero gradients (such as a
// key bias under softmax shift invariance) only carry finite-difference noise. f must be deterministic and build its
// result on the tape it is handed.
template <typename T>
double finite_diff_check(const std::function<Var<T>(BasicTape<T>&, Var<T>)>& f, const BasicTensor<T>& x,
                         double h) {
  if (!(h >= 1e-6 && h <= 1e-2)) throw DomainError("finite_diff_check: step must lie in [1e-6, 1e-2]");
  BasicTensor<T> analytic;
  {
    BasicTape<T> tape;
    Var<T> xv = tape.variable(x);
    Var<T> loss = f(tape, xv);
    tape.backward(loss);
    analytic = tape.grad(xv);
  }
  auto eval = [&](const BasicTensor<T>& xp) {
    BasicTape<T> tape;
    return static_cast<double>(f(tape, tape.constant(xp)).value().item());
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    BasicTensor<T> xp = x, xm = x;
    xp[i] = static_cast<T>(xp[i] + h);
    xm[i] = static_cast<T>(xm[i] - h);
    const double numeric = (eval(xp) - eval(xm)) / (2.0 * h);
    const double a = analytic[i];
    worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6}));
  }
  return worst;
}

}  // namespace ctcbridge
