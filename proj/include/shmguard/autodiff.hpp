#pragma once

// Reverse-mode automatic differentiation over a dynamically recorded tape.
//
// A Tape owns every value produced while it records. Var is a cheap handle
// (tape pointer + node id). Node inputs always reference earlier nodes, so a
// reverse sweep over the node list is a valid topological order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "shmguard/errors.hpp"
#include "shmguard/tensor.hpp"

namespace shmguard {

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }

  inline const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  std::size_t size() const { return value().size(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// Records an input. Gradient tracking follows `t.requires_grad`.
  Var leaf(Tensor t) {
    t.validate();
    if (!t.all_finite()) throw NumericError("non-finite value in tape input");
    const bool track = t.requires_grad;
    t.grad.reset();
    nodes_.push_back(Node{"leaf", std::move(t), {}, nullptr, track, {}});
    return {this, nodes_.size() - 1};
  }

  Var constant(Tensor t) {
    t.requires_grad = false;
    return leaf(std::move(t));
  }

  /// Appends a primitive application. `fn` reads this node's gradient and
  /// accumulates into its inputs; it is dropped when no input tracks gradients.
  Var record(std::string op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    if (!value.all_finite()) throw NumericError(op + ": produced a non-finite value");
    bool track = false;
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    for (const Var& v : inputs) {
      if (&v.tape() != this) throw TapeError(op + ": operand recorded on a different tape");
      ids.push_back(v.id());
      track = track || nodes_[v.id()].needs_grad;
    }
    nodes_.push_back(Node{std::move(op), std::move(value), std::move(ids),
                          track ? std::move(fn) : nullptr, track, {}});
    return {this, nodes_.size() - 1};
  }

  /// Populates d(output)/d(node) on every gradient-tracking node, and copies
  /// the result into the `grad` slot of each tracking leaf.
  void backward(Var output) {
    if (nodes_.empty()) throw TapeError("backward called before any forward recording");
    if (&output.tape() != this) throw TapeError("backward output belongs to another tape");
    Node& out = nodes_[output.id()];
    if (out.value.size() != 1) {
      throw TapeError("backward requires a scalar output, got shape " + shape_str(out.value.shape));
    }
    for (Node& n : nodes_) n.grad.clear();
    visits_ = 0;
    if (!out.needs_grad) return;
    out.grad.assign(1, 1.0F);
    for (std::size_t id = output.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.needs_grad || n.grad.empty()) continue;
      ++visits_;
      if (n.backward) {
        n.backward(*this, id);
      } else {
        n.value.grad = n.grad;
      }
    }
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  const std::string& op(std::size_t id) const { return nodes_.at(id).op; }
  bool tracks(std::size_t id) const { return nodes_.at(id).needs_grad; }
  std::span<const std::size_t> inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  /// Number of nodes processed by the most recent backward sweep.
  std::size_t last_backward_visits() const { return visits_; }

  /// Gradient of the last backward output with respect to `v` (zeros if unreached).
  Tensor gradient(Var v) const {
    const Node& n = nodes_.at(v.id());
    Tensor g(n.value.shape, 0.0F);
    if (!n.grad.empty()) g.data = n.grad;
    return g;
  }

  // Used by primitive backward functions.
  std::span<const float> grad_of(std::size_t id) const { return nodes_[id].grad; }
  float* accum(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return nullptr;
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0F);
    return n.grad.data();
  }
  std::size_t input_id(std::size_t id, std::size_t k) const { return nodes_[id].inputs[k]; }

  void clear() {
    nodes_.clear();
    visits_ = 0;
  }

 private:
  struct Node {
    std::string op;
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool needs_grad = false;
    std::vector<float> grad;
  };

  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

namespace detail {

inline void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

inline void require_rank(const char* op, const Var& a, std::size_t rank) {
  if (a.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(a.shape()));
  }
}

/// Applies an elementwise map and its derivative (expressed via input x and output y).
template <class F, class D>
Var unary(const char* op, Var a, F f, D dfdx) {
  const Tensor& x = a.value();
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return a.tape().record(op, std::move(y), {a}, [dfdx](Tape& t, std::size_t self) {
    const std::size_t in = t.input_id(self, 0);
    float* ga = t.accum(in);
    auto g = t.grad_of(self);
    const Tensor& xv = t.value(in);
    const Tensor& yv = t.value(self);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(xv[i], yv[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Var add(Var a, Var b) {
  detail::require_same_shape("add", a, b);
  Tensor y = a.value();
  y.requires_grad = false;
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return a.tape().record("add", std::move(y), {a, b}, [](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    for (std::size_t k = 0; k < 2; ++k) {
      if (float* gi = t.accum(t.input_id(self, k))) {
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
      }
    }
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_shape("sub", a, b);
  Tensor y = a.value();
  y.requires_grad = false;
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  return a.tape().record("sub", std::move(y), {a, b}, [](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    if (float* ga = t.accum(t.input_id(self, 0))) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (float* gb = t.accum(t.input_id(self, 1))) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

inline Var mul(Var a, Var b) {
  detail::require_same_shape("mul", a, b);
  Tensor y = a.value();
  y.requires_grad = false;
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  return a.tape().record("mul", std::move(y), {a, b}, [](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    const std::size_t ia = t.input_id(self, 0);
    const std::size_t ib = t.input_id(self, 1);
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    if (float* ga = t.accum(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (float* gb = t.accum(ib)) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

inline Var scale(Var a, float s) {
  return detail::unary(
      "scale", a, [s](float x) { return x * s; }, [s](float, float) { return s; });
}

/// Adds a per-row bias: `b` holds row_size(x) values broadcast over the leading axis.
inline Var add_bias(Var x, Var b) {
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  if (bv.size() != xv.row_size()) {
    throw ShapeError("add_bias: bias " + shape_str(bv.shape) + " does not match rows of " +
                     shape_str(xv.shape));
  }
  Tensor y(xv.shape, std::vector<float>(xv.data));
  const std::size_t w = xv.row_size();
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    for (std::size_t j = 0; j < w; ++j) y[r * w + j] += bv[j];
  }
  return x.tape().record("add_bias", std::move(y), {x, b}, [w](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    if (float* gx = t.accum(t.input_id(self, 0))) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (float* gb = t.accum(t.input_id(self, 1))) {
      std::vector<double> acc(w, 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i % w] += g[i];
      for (std::size_t j = 0; j < w; ++j) gb[j] += static_cast<float>(acc[j]);
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(Var a, Var b) {
  detail::require_rank("matmul", a, 2);
  detail::require_rank("matmul", b, 2);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k) {
    throw ShapeError("matmul: inner extents differ " + shape_str(av.shape) + " x " +
                     shape_str(bv.shape));
  }
  Tensor y(Shape{m, n});
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const float* brow = bv.data.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += aip * brow[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] = static_cast<float>(acc[j]);
  }
  return a.tape().record("matmul", std::move(y), {a, b}, [m, k, n](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    const std::size_t ia = t.input_id(self, 0);
    const std::size_t ib = t.input_id(self, 1);
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    if (float* ga = t.accum(ia)) {
      // dA = G * B^T
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          const float* brow = bv.data.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) s += static_cast<double>(g[i * n + j]) * brow[j];
          ga[i * k + p] += static_cast<float>(s);
        }
      }
    }
    if (float* gb = t.accum(ib)) {
      // dB = A^T * G
      std::vector<double> acc(k * n, 0.0);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) acc[p * n + j] += aip * g[i * n + j];
        }
      }
      for (std::size_t q = 0; q < k * n; ++q) gb[q] += static_cast<float>(acc[q]);
    }
  });
}

inline Var transpose(Var a) {
  detail::require_rank("transpose", a, 2);
  const Tensor& av = a.value();
  const std::size_t m = av.dim(0), n = av.dim(1);
  Tensor y(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) y[j * m + i] = av[i * n + j];
  }
  return a.tape().record("transpose", std::move(y), {a}, [m, n](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    if (float* ga = t.accum(t.input_id(self, 0))) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
      }
    }
  });
}

inline Var reshape(Var a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  Tensor y(std::move(shape), std::vector<float>(a.value().data));
  return a.tape().record("reshape", std::move(y), {a}, [](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    if (float* ga = t.accum(t.input_id(self, 0))) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
  });
}

/// Valid (unpadded) stride-1 cross-correlation.
/// x: [B, Cin, L], w: [Cout, Cin, K], bias: [Cout] -> [B, Cout, L - K + 1].
inline Var conv1d(Var x, Var w, Var bias) {
  detail::require_rank("conv1d", x, 3);
  detail::require_rank("conv1d", w, 3);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const std::size_t nb = xv.dim(0), cin = xv.dim(1), len = xv.dim(2);
  const std::size_t cout = wv.dim(0), kw = wv.dim(2);
  if (wv.dim(1) != cin || bias.size() != cout || kw > len) {
    throw ShapeError("conv1d: input " + shape_str(xv.shape) + " incompatible with kernel " +
                     shape_str(wv.shape) + " and bias " + shape_str(bias.shape()));
  }
  const std::size_t lout = len - kw + 1;
  const Tensor& bv = bias.value();
  Tensor y(Shape{nb, cout, lout});
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t o = 0; o < cout; ++o) {
      for (std::size_t t = 0; t < lout; ++t) {
        double s = bv[o];
        for (std::size_t c = 0; c < cin; ++c) {
          const float* xr = xv.data.data() + (b * cin + c) * len + t;
          const float* wr = wv.data.data() + (o * cin + c) * kw;
          for (std::size_t q = 0; q < kw; ++q) s += static_cast<double>(xr[q]) * wr[q];
        }
        y[(b * cout + o) * lout + t] = static_cast<float>(s);
      }
    }
  }
  return x.tape().record(
      "conv1d", std::move(y), {x, w, bias},
      [nb, cin, len, cout, kw, lout](Tape& tp, std::size_t self) {
        auto g = tp.grad_of(self);
        const std::size_t ix = tp.input_id(self, 0);
        const std::size_t iw = tp.input_id(self, 1);
        const std::size_t ib = tp.input_id(self, 2);
        const Tensor& xv = tp.value(ix);
        const Tensor& wv = tp.value(iw);
        if (float* gx = tp.accum(ix)) {
          for (std::size_t b = 0; b < nb; ++b) {
            for (std::size_t c = 0; c < cin; ++c) {
              for (std::size_t o = 0; o < cout; ++o) {
                const float* gr = g.data() + (b * cout + o) * lout;
                const float* wr = wv.data.data() + (o * cin + c) * kw;
                float* gxr = gx + (b * cin + c) * len;
                for (std::size_t t = 0; t < lout; ++t) {
                  for (std::size_t q = 0; q < kw; ++q) gxr[t + q] += gr[t] * wr[q];
                }
              }
            }
          }
        }
        if (float* gw = tp.accum(iw)) {
          for (std::size_t o = 0; o < cout; ++o) {
            for (std::size_t c = 0; c < cin; ++c) {
              for (std::size_t q = 0; q < kw; ++q) {
                double s = 0.0;
                for (std::size_t b = 0; b < nb; ++b) {
                  const float* gr = g.data() + (b * cout + o) * lout;
                  const float* xr = xv.data.data() + (b * cin + c) * len + q;
                  for (std::size_t t = 0; t < lout; ++t) s += static_cast<double>(gr[t]) * xr[t];
                }
                gw[(o * cin + c) * kw + q] += static_cast<float>(s);
              }
            }
          }
        }
        if (float* gb = tp.accum(ib)) {
          for (std::size_t o = 0; o < cout; ++o) {
            double s = 0.0;
            for (std::size_t b = 0; b < nb; ++b) {
              const float* gr = g.data() + (b * cout + o) * lout;
              for (std::size_t t = 0; t < lout; ++t) s += gr[t];
            }
            gb[o] += static_cast<float>(s);
          }
        }
      });
}

/// Non-overlapping max pooling over the last axis of [B, C, L]; trailing
/// samples that do not fill a window are dropped. Ties route to the first maximum.
inline Var maxpool1d(Var x, std::size_t window) {
  detail::require_rank("maxpool1d", x, 3);
  const Tensor& xv = x.value();
  const std::size_t nb = xv.dim(0), ch = xv.dim(1), len = xv.dim(2);
  if (window == 0 || window > len) {
    throw ShapeError("maxpool1d: window " + std::to_string(window) + " invalid for " +
                     shape_str(xv.shape));
  }
  const std::size_t lout = len / window;
  Tensor y(Shape{nb, ch, lout});
  std::vector<std::size_t> arg(y.size());
  for (std::size_t r = 0; r < nb * ch; ++r) {
    for (std::size_t t = 0; t < lout; ++t) {
      std::size_t best = r * len + t * window;
      for (std::size_t q = 1; q < window; ++q) {
        if (xv[r * len + t * window + q] > xv[best]) best = r * len + t * window + q;
      }
      y[r * lout + t] = xv[best];
      arg[r * lout + t] = best;
    }
  }
  return x.tape().record("maxpool1d", std::move(y), {x},
                         [arg = std::move(arg)](Tape& t, std::size_t self) {
                           auto g = t.grad_of(self);
                           if (float* gx = t.accum(t.input_id(self, 0))) {
                             for (std::size_t i = 0; i < g.size(); ++i) gx[arg[i]] += g[i];
                           }
                         });
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities

/// ReLU; the subgradient at exactly 0 is 0.
inline Var relu(Var a) {
  return detail::unary(
      "relu", a, [](float x) { return x > 0.0F ? x : 0.0F; },
      [](float x, float) { return x > 0.0F ? 1.0F : 0.0F; });
}

inline Var tanh(Var a) {
  return detail::unary(
      "tanh", a, [](float x) { return std::tanh(x); },
      [](float, float y) { return 1.0F - y * y; });
}

inline Var exp(Var a) {
  return detail::unary(
      "exp", a, [](float x) { return std::exp(x); }, [](float, float y) { return y; });
}

inline Var log(Var a) {
  for (float v : a.value().data) {
    if (!(v > 0.0F)) throw NumericError("log: non-positive input " + std::to_string(v));
  }
  return detail::unary(
      "log", a, [](float x) { return std::log(x); }, [](float x, float) { return 1.0F / x; });
}

/// Elementwise clamp to [lo, hi]; gradient passes only inside the interval.
inline Var clamp(Var a, float lo, float hi) {
  return detail::unary(
      "clamp", a, [lo, hi](float x) { return std::clamp(x, lo, hi); },
      [lo, hi](float x, float) { return (x >= lo && x <= hi) ? 1.0F : 0.0F; });
}

// ---------------------------------------------------------------------------
// Row-wise operations on [B, N]

inline Var softmax(Var a) {
  detail::require_rank("softmax", a, 2);
  const Tensor& x = a.value();
  const std::size_t rows = x.dim(0), n = x.dim(1);
  Tensor y(x.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = x.data.data() + r * n;
    const float mx = *std::max_element(xr, xr + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(static_cast<double>(xr[j]) - mx);
    for (std::size_t j = 0; j < n; ++j) {
      y[r * n + j] = static_cast<float>(std::exp(static_cast<double>(xr[j]) - mx) / z);
    }
  }
  return a.tape().record("softmax", std::move(y), {a}, [rows, n](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    const Tensor& yv = t.value(self);
    if (float* ga = t.accum(t.input_id(self, 0))) {
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(g[r * n + j]) * yv[r * n + j];
        for (std::size_t j = 0; j < n; ++j) {
          ga[r * n + j] += static_cast<float>(yv[r * n + j] * (g[r * n + j] - dot));
        }
      }
    }
  });
}

inline Var log_softmax(Var a) {
  detail::require_rank("log_softmax", a, 2);
  const Tensor& x = a.value();
  const std::size_t rows = x.dim(0), n = x.dim(1);
  Tensor y(x.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = x.data.data() + r * n;
    const double mx = *std::max_element(xr, xr + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(xr[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] = static_cast<float>(xr[j] - lse);
  }
  return a.tape().record("log_softmax", std::move(y), {a}, [rows, n](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    const Tensor& yv = t.value(self);
    if (float* ga = t.accum(t.input_id(self, 0))) {
      for (std::size_t r = 0; r < rows; ++r) {
        double gs = 0.0;
        for (std::size_t j = 0; j < n; ++j) gs += g[r * n + j];
        for (std::size_t j = 0; j < n; ++j) {
          ga[r * n + j] += static_cast<float>(g[r * n + j] - std::exp(static_cast<double>(yv[r * n + j])) * gs);
        }
      }
    }
  });
}

/// Picks a[r, idx[r]] for every row r.
inline Var gather(Var a, std::vector<std::size_t> idx) {
  detail::require_rank("gather", a, 2);
  const Tensor& x = a.value();
  const std::size_t rows = x.dim(0), n = x.dim(1);
  if (idx.size() != rows) {
    throw ShapeError("gather: " + std::to_string(idx.size()) + " indices for " + shape_str(x.shape));
  }
  Tensor y(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    if (idx[r] >= n) throw ShapeError("gather: index " + std::to_string(idx[r]) + " out of range");
    y[r] = x[r * n + idx[r]];
  }
  return a.tape().record("gather", std::move(y), {a},
                         [n, idx = std::move(idx)](Tape& t, std::size_t self) {
                           auto g = t.grad_of(self);
                           if (float* ga = t.accum(t.input_id(self, 0))) {
                             for (std::size_t r = 0; r < idx.size(); ++r) ga[r * n + idx[r]] += g[r];
                           }
                         });
}

/// Maximum of each row; ties route to the first maximal element.
inline Var row_max(Var a) {
  detail::require_rank("row_max", a, 2);
  const Tensor& x = a.value();
  const std::size_t rows = x.dim(0), n = x.dim(1);
  Tensor y(Shape{rows});
  std::vector<std::size_t> arg(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = x.data.data() + r * n;
    arg[r] = r * n + static_cast<std::size_t>(std::max_element(xr, xr + n) - xr);
    y[r] = x[arg[r]];
  }
  return a.tape().record("row_max", std::move(y), {a}, [arg = std::move(arg)](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    if (float* ga = t.accum(t.input_id(self, 0))) {
      for (std::size_t r = 0; r < arg.size(); ++r) ga[arg[r]] += g[r];
    }
  });
}

/// L2 norm of each row of a batched tensor -> [B].
inline Var l2_norm(Var a) {
  const Tensor& x = a.value();
  const std::size_t rows = x.rows(), w = x.row_size();
  Tensor y(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < w; ++j) s += static_cast<double>(x[r * w + j]) * x[r * w + j];
    y[r] = static_cast<float>(std::sqrt(s));
  }
  return a.tape().record("l2_norm", std::move(y), {a}, [rows, w](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    const std::size_t in = t.input_id(self, 0);
    const Tensor& xv = t.value(in);
    const Tensor& yv = t.value(self);
    if (float* ga = t.accum(in)) {
      for (std::size_t r = 0; r < rows; ++r) {
        if (yv[r] == 0.0F) continue;
        for (std::size_t j = 0; j < w; ++j) ga[r * w + j] += g[r] * xv[r * w + j] / yv[r];
      }
    }
  });
}

/// Scales every row to unit L2 norm. All-zero rows stay zero.
inline Var normalize_rows(Var a) {
  const Tensor& x = a.value();
  const std::size_t rows = x.rows(), w = x.row_size();
  Tensor y(x.shape);
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < w; ++j) s += static_cast<double>(x[r * w + j]) * x[r * w + j];
    norms[r] = std::sqrt(s);
    const double inv = norms[r] > 0.0 ? 1.0 / norms[r] : 0.0;
    for (std::size_t j = 0; j < w; ++j) y[r * w + j] = static_cast<float>(x[r * w + j] * inv);
  }
  return a.tape().record("normalize_rows", std::move(y), {a},
                         [rows, w, norms = std::move(norms)](Tape& t, std::size_t self) {
                           auto g = t.grad_of(self);
                           const Tensor& yv = t.value(self);
                           float* ga = t.accum(t.input_id(self, 0));
                           if (!ga) return;
                           for (std::size_t r = 0; r < rows; ++r) {
                             if (norms[r] == 0.0) continue;
                             double dot = 0.0;
                             for (std::size_t j = 0; j < w; ++j) {
                               dot += static_cast<double>(g[r * w + j]) * yv[r * w + j];
                             }
                             for (std::size_t j = 0; j < w; ++j) {
                               ga[r * w + j] += static_cast<float>((g[r * w + j] - yv[r * w + j] * dot) / norms[r]);
                             }
                           }
                         });
}

/// Row-wise cosine similarity of two equally shaped batches -> [B].
inline Var cosine_similarity(Var a, Var b) {
  detail::require_same_shape("cosine_similarity", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t rows = av.rows(), w = av.row_size();
  Tensor y(Shape{rows});
  std::vector<double> na(rows), nbv(rows), dots(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double d = 0.0, sa = 0.0, sb = 0.0;
    for (std::size_t j = 0; j < w; ++j) {
      const double x = av[r * w + j], z = bv[r * w + j];
      d += x * z;
      sa += x * x;
      sb += z * z;
    }
    na[r] = std::sqrt(sa);
    nbv[r] = std::sqrt(sb);
    dots[r] = d;
    const double den = na[r] * nbv[r];
    y[r] = den > 0.0 ? static_cast<float>(d / den) : 0.0F;
  }
  return a.tape().record(
      "cosine_similarity", std::move(y), {a, b},
      [rows, w, na = std::move(na), nbv = std::move(nbv), dots = std::move(dots)](Tape& t,
                                                                                 std::size_t self) {
        auto g = t.grad_of(self);
        const std::size_t ia = t.input_id(self, 0);
        const std::size_t ib = t.input_id(self, 1);
        const Tensor& av = t.value(ia);
        const Tensor& bv = t.value(ib);
        float* ga = t.accum(ia);
        float* gb = t.accum(ib);
        for (std::size_t r = 0; r < rows; ++r) {
          const double den = na[r] * nbv[r];
          if (den == 0.0) continue;
          const double c = dots[r] / den;
          for (std::size_t j = 0; j < w; ++j) {
            const double x = av[r * w + j], z = bv[r * w + j];
            if (ga) ga[r * w + j] += static_cast<float>(g[r] * (z / den - c * x / (na[r] * na[r])));
            if (gb) gb[r * w + j] += static_cast<float>(g[r] * (x / den - c * z / (nbv[r] * nbv[r])));
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Full reductions -> shape [1]

inline Var sum(Var a) {
  double s = 0.0;
  for (float v : a.value().data) s += v;
  return a.tape().record("sum", Tensor::scalar(static_cast<float>(s)), {a},
                         [](Tape& t, std::size_t self) {
                           const float g = t.grad_of(self)[0];
                           const std::size_t in = t.input_id(self, 0);
                           if (float* ga = t.accum(in)) {
                             for (std::size_t i = 0; i < t.value(in).size(); ++i) ga[i] += g;
                           }
                         });
}

inline Var mean(Var a) {
  double s = 0.0;
  for (float v : a.value().data) s += v;
  const double n = static_cast<double>(a.size());
  return a.tape().record("mean", Tensor::scalar(static_cast<float>(s / n)), {a},
                         [n](Tape& t, std::size_t self) {
                           const float g = static_cast<float>(t.grad_of(self)[0] / n);
                           const std::size_t in = t.input_id(self, 0);
                           if (float* ga = t.accum(in)) {
                             for (std::size_t i = 0; i < t.value(in).size(); ++i) ga[i] += g;
                           }
                         });
}

/// Maximum over all elements; ties route to the first maximal element.
inline Var max(Var a) {
  const auto& d = a.value().data;
  const std::size_t arg = static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin());
  return a.tape().record("max", Tensor::scalar(d[arg]), {a}, [arg](Tape& t, std::size_t self) {
    if (float* ga = t.accum(t.input_id(self, 0))) ga[arg] += t.grad_of(self)[0];
  });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(float s, Var a) { return scale(a, s); }

// ---------------------------------------------------------------------------
// Drivers

using GraphFn = std::function<Var(Tape&, std::span<const Var>)>;

/// Runs `fn` on fresh leaves built from `inputs` and returns its output value.
inline Tensor evaluate(const GraphFn& fn, std::vector<Tensor> inputs) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (Tensor& t : inputs) vars.push_back(tape.leaf(std::move(t)));
  Var out = fn(tape, vars);
  Tensor result = out.value();
  result.requires_grad = false;
  return result;
}

/// Evaluates `fn` and back-propagates from its scalar output. Returns the
/// output value; every input with requires_grad receives its gradient.
inline Tensor evaluate_and_backward(const GraphFn& fn, std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(tape.leaf(t));
  Var out = fn(tape, vars);
  tape.backward(out);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].requires_grad) inputs[i].grad = tape.gradient(vars[i]).data;
  }
  Tensor result = out.value();
  result.requires_grad = false;
  return result;
}

using ScalarFn = std::function<Var(Tape&, Var)>;

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
/// Central-difference stencil width. The five-point form trades two extra
/// evaluations for O(h^4) truncation, which lets sharp losses use a step large
/// enough to stay clear of float32 rounding.
enum class Stencil { three_point, five_point };

inline double finite_diff_check(const ScalarFn& fn, const Tensor& point, float h,
                                Stencil stencil = Stencil::three_point) {
  if (!(h > 0.0F)) throw ConfigError("finite_diff_check: step must be positive");
  Tensor x = point;
  x.requires_grad = true;
  Tape tape;
  Var xv = tape.leaf(x);
  Var out = fn(tape, xv);
  if (out.size() != 1) throw TapeError("finite_diff_check: function must be scalar-valued");
  tape.backward(out);
  const Tensor analytic = tape.gradient(xv);

  auto eval_at = [&](const Tensor& p) {
    Tape t;
    Var v = t.constant(p);
    const float y = fn(t, v).value()[0];
    if (!std::isfinite(y)) throw NumericError("finite_diff_check: non-finite function value");
    return static_cast<double>(y);
  };

  double worst = 0.0;
  Tensor probe = point;
  probe.requires_grad = false;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const float x0 = point[i];
    auto at = [&](float v) {
      probe[i] = v;
      const double y = eval_at(probe);
      probe[i] = x0;
      return y;
    };
    const float xp = x0 + h;
    const float xm = x0 - h;
    double numeric = (at(xp) - at(xm)) / (static_cast<double>(xp) - static_cast<double>(xm));
    if (stencil == Stencil::five_point) {
      const float xpp = x0 + 2.0F * h;
      const float xmm = x0 - 2.0F * h;
      const double wide = (at(xpp) - at(xmm)) / (static_cast<double>(xpp) - static_cast<double>(xmm));
      numeric = (4.0 * numeric - wide) / 3.0;
    }
    const double a = analytic[i];
    worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
  }
  return worst;
}

}  // namespace shmguard
