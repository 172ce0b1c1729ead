#pragma once

// Reverse-mode automatic differentiation over rank-2 tensors.
//
// A Tape is rebuilt for every forward pass. Each recorded node owns its
// value; the node index order is a topological order, so backward() simply
// walks indices downward. Gradients are accumulated additively, so a value
// consumed twice receives the sum of both contributions.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "zsl/errors.hpp"
#include "zsl/rng.hpp"
#include "zsl/tensor.hpp"

namespace zsl {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double scalar() const { return value()[0]; }

  Tape& tape() const { return *tape_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

class Tape {
 public:
  // Called during backward with the node's own index; accumulates into the
  // gradients of the node's inputs.
  using BackwardFn = std::function<void(Tape&, std::uint32_t)>;

  // With grad disabled no closures are stored (inference only).
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {
    nodes_.reserve(256);
  }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, nullptr, nullptr, false});
    return last();
  }

  // Leaf referring to p.value without copying it; p must outlive the tape.
  Var parameter(Parameter& p) {
    nodes_.push_back(Node{{}, {}, {}, &p, &p.value, grad_enabled_});
    return last();
  }

  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    bool needs = false;
    if (grad_enabled_)
      for (const Var& v : inputs) needs = needs || nodes_[v.id()].requires_grad;
    nodes_.push_back(Node{std::move(value), {}, needs ? std::move(fn) : BackwardFn{},
                          nullptr, nullptr, needs});
    return last();
  }

  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
    bool needs = false;
    if (grad_enabled_)
      for (const Var& v : inputs) needs = needs || nodes_[v.id()].requires_grad;
    nodes_.push_back(Node{std::move(value), {}, needs ? std::move(fn) : BackwardFn{},
                          nullptr, nullptr, needs});
    return last();
  }

  const Tensor& value(std::uint32_t id) const { return nodes_[id].get(); }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }

  // Gradient buffer of a node, allocated on first use; nullptr when the
  // node does not require a gradient.
  Tensor* grad_for(Var v) { return grad_for(v.id()); }
  Tensor* grad_for(std::uint32_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty() && !n.get().empty()) n.grad = Tensor(n.get().shape());
    return &n.grad;
  }
  const Tensor& grad(std::uint32_t id) const { return nodes_[id].grad; }

  // Back-propagates d(loss)/d(node) through the tape and adds the result
  // into every reachable Parameter::grad. Parameters must be zeroed by the
  // caller beforehand if accumulation across calls is not wanted.
  void backward(Var loss) {
    if (loss.value().size() != 1)
      throw ContractError("backward needs a scalar loss, got shape " +
                          loss.value().shape().str());
    if (!grad_enabled_) throw ContractError("backward on a tape with grad disabled");
    Tensor* seed = grad_for(loss);
    if (seed == nullptr) return;  // loss does not depend on any parameter
    (*seed)[0] += 1.0;
    for (std::int64_t i = loss.id(); i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, static_cast<std::uint32_t>(i));
      if (n.parameter != nullptr) {
        auto dst = n.parameter->grad.values();
        auto src = n.grad.values();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    Parameter* parameter;
    const Tensor* external;
    bool requires_grad;

    const Tensor& get() const { return external != nullptr ? *external : value; }
  };

  Var last() { return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1)); }

  std::vector<Node> nodes_;
  bool grad_enabled_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

inline MapC as_matrix(const Tensor& t) {
  return MapC(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
inline Map as_matrix(Tensor& t) {
  return Map(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

inline void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw DimensionError(std::string(op) + " expects a rank-2 tensor, got " + t.shape().str());
}

inline void require_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string(op) + ": non-finite input");
}

// Shape of a broadcast binary op; each dimension must match or be 1.
inline Shape broadcast_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_rank2(a, op);
  require_rank2(b, op);
  auto dim = [&](std::size_t x, std::size_t y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw DimensionError(std::string(op) + ": shapes " + a.shape().str() + " and " +
                         b.shape().str() + " do not broadcast");
  };
  return Shape{dim(a.rows(), b.rows()), dim(a.cols(), b.cols())};
}

// Applies f(x, y) elementwise with broadcasting and records df/dx, df/dy.
template <typename F, typename Dx, typename Dy>
Var binary(Var a, Var b, const char* op, F f, Dx dfx, Dy dfy) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_finite(av, op);
  require_finite(bv, op);
  const Shape s = broadcast_shape(av, bv, op);
  const std::size_t R = s[0], C = s[1];
  const std::size_t ar = av.rows() == 1 ? 0 : 1, ac = av.cols() == 1 ? 0 : 1;
  const std::size_t br = bv.rows() == 1 ? 0 : 1, bc = bv.cols() == 1 ? 0 : 1;
  Tensor out(s);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c)
      out(r, c) = f(av(r * ar, c * ac), bv(r * br, c * bc));
  return a.tape().record(std::move(out), {a, b}, [a, b, R, C, ar, ac, br, bc, dfx, dfy](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const Tensor& ov = t.value(self);
    if (Tensor* ga = t.grad_for(a))
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c)
          (*ga)(r * ar, c * ac) += g(r, c) * dfx(av(r * ar, c * ac), bv(r * br, c * bc), ov(r, c));
    if (Tensor* gb = t.grad_for(b))
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c)
          (*gb)(r * br, c * bc) += g(r, c) * dfy(av(r * ar, c * ac), bv(r * br, c * bc), ov(r, c));
  });
}

// Elementwise unary op; df receives (x, f(x)).
template <typename F, typename D>
Var unary(Var a, const char* op, F f, D df) {
  const Tensor& av = a.value();
  require_finite(av, op);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return a.tape().record(std::move(out), {a}, [a, df](Tape& t, std::uint32_t self) {
    if (Tensor* ga = t.grad_for(a)) {
      const Tensor& g = t.grad(self);
      const Tensor& x = a.value();
      const Tensor& y = t.value(self);
      for (std::size_t i = 0; i < x.size(); ++i) (*ga)[i] += g[i] * df(x[i], y[i]);
    }
  });
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

inline double sigmoid(double x) { return detail::stable_sigmoid(x); }

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_rank2(av, "matmul");
  detail::require_rank2(bv, "matmul");
  if (av.cols() != bv.rows())
    throw DimensionError("matmul: inner dimensions differ, " + av.shape().str() + " x " +
                         bv.shape().str());
  Tensor out(Shape{av.rows(), bv.cols()});
  detail::as_matrix(out).noalias() = detail::as_matrix(av) * detail::as_matrix(bv);
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, std::uint32_t self) {
    auto g = detail::as_matrix(t.grad(self));
    if (Tensor* ga = t.grad_for(a))
      detail::as_matrix(*ga).noalias() += g * detail::as_matrix(b.value()).transpose();
    if (Tensor* gb = t.grad_for(b))
      detail::as_matrix(*gb).noalias() += detail::as_matrix(a.value()).transpose() * g;
  });
}

inline Var transpose(Var a) {
  const Tensor& av = a.value();
  detail::require_rank2(av, "transpose");
  Tensor out(Shape{av.cols(), av.rows()});
  detail::as_matrix(out) = detail::as_matrix(av).transpose();
  return a.tape().record(std::move(out), {a}, [a](Tape& t, std::uint32_t self) {
    if (Tensor* ga = t.grad_for(a))
      detail::as_matrix(*ga) += detail::as_matrix(t.grad(self)).transpose();
  });
}

// a * b^T without materialising the transpose.
inline Var matmul_nt(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_rank2(av, "matmul_nt");
  detail::require_rank2(bv, "matmul_nt");
  if (av.cols() != bv.cols())
    throw DimensionError("matmul_nt: inner dimensions differ, " + av.shape().str() + " x " +
                         bv.shape().str() + "^T");
  Tensor out(Shape{av.rows(), bv.rows()});
  detail::as_matrix(out).noalias() = detail::as_matrix(av) * detail::as_matrix(bv).transpose();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, std::uint32_t self) {
    auto g = detail::as_matrix(t.grad(self));
    if (Tensor* ga = t.grad_for(a))
      detail::as_matrix(*ga).noalias() += g * detail::as_matrix(b.value());
    if (Tensor* gb = t.grad_for(b))
      detail::as_matrix(*gb).noalias() += g.transpose() * detail::as_matrix(a.value());
  });
}

// x * w + b with b a 1 x out row broadcast over the rows of x.
inline Var linear(Var x, Var w, Var b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  detail::require_rank2(xv, "linear");
  detail::require_rank2(wv, "linear");
  if (xv.cols() != wv.rows())
    throw DimensionError("linear: inner dimensions differ, " + xv.shape().str() + " x " +
                         wv.shape().str());
  if (bv.rows() != 1 || bv.cols() != wv.cols())
    throw DimensionError("linear: bias " + bv.shape().str() + " for output width " +
                         std::to_string(wv.cols()));
  Tensor out(Shape{xv.rows(), wv.cols()});
  auto o = detail::as_matrix(out);
  o.noalias() = detail::as_matrix(xv) * detail::as_matrix(wv);
  o.rowwise() += detail::as_matrix(bv).row(0);
  return x.tape().record(std::move(out), {x, w, b}, [x, w, b](Tape& t, std::uint32_t self) {
    auto g = detail::as_matrix(t.grad(self));
    if (Tensor* gx = t.grad_for(x))
      detail::as_matrix(*gx).noalias() += g * detail::as_matrix(w.value()).transpose();
    if (Tensor* gw = t.grad_for(w))
      detail::as_matrix(*gw).noalias() += detail::as_matrix(x.value()).transpose() * g;
    if (Tensor* gb = t.grad_for(b)) detail::as_matrix(*gb).row(0) += g.colwise().sum();
  });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(Var a, Var b) {
  return detail::binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

inline Var sub(Var a, Var b) {
  return detail::binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

inline Var mul(Var a, Var b) {
  return detail::binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

inline Var div(Var a, Var b) {
  return detail::binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

inline Var scale(Var a, double k) {
  return detail::unary(
      a, "scale", [k](double x) { return k * x; }, [k](double, double) { return k; });
}

inline Var add_scalar(Var a, double k) {
  return detail::unary(
      a, "add_scalar", [k](double x) { return x + k; }, [](double, double) { return 1.0; });
}

inline Var tanh(Var a) {
  return detail::unary(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

// Branches on sign so |x| up to ~700 never overflows.
inline Var sigmoid(Var a) {
  return detail::unary(
      a, "sigmoid", [](double x) { return detail::stable_sigmoid(x); },
      [](double, double y) { return y * (1.0 - y); });
}

// Exact (erf) GELU.
inline Var gelu(Var a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return detail::unary(
      a, "gelu", [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) {
        return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
      });
}

inline Var power(Var a, double exponent) {
  if (!std::isfinite(exponent)) throw NumericError("power: non-finite exponent");
  return detail::unary(
      a, "power", [exponent](double x) { return std::pow(x, exponent); },
      [exponent](double x, double) { return exponent * std::pow(x, exponent - 1.0); });
}

// Multiplies by a fresh Bernoulli keep-mask scaled by 1/(1-p).
inline Var dropout(Var a, double p, Rng& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) throw ContractError("dropout probability must be < 1");
  const Tensor& av = a.value();
  Tensor mask(av.shape());
  const double keep_scale = 1.0 / (1.0 - p);
  for (auto& m : mask.values()) m = rng.uniform() < p ? 0.0 : keep_scale;
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * mask[i];
  return a.tape().record(std::move(out), {a}, [a, mask = std::move(mask)](Tape& t, std::uint32_t self) {
    if (Tensor* ga = t.grad_for(a)) {
      const Tensor& g = t.grad(self);
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * mask[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Row-wise normalisations

// Softmax of every row after subtracting the row max. When key_mask is
// non-empty, columns with key_mask[c] == 0 get exactly zero probability and
// zero gradient.
inline Var softmax_rows(Var a, std::span<const std::uint8_t> key_mask = {}) {
  const Tensor& av = a.value();
  detail::require_rank2(av, "softmax_rows");
  detail::require_finite(av, "softmax_rows");
  const std::size_t R = av.rows(), C = av.cols();
  if (C == 0) throw DimensionError("softmax_rows: empty row");
  if (!key_mask.empty() && key_mask.size() != C)
    throw DimensionError("softmax_rows: key mask length " + std::to_string(key_mask.size()) +
                         " for " + std::to_string(C) + " columns");
  auto open = [&](std::size_t c) { return key_mask.empty() || key_mask[c] != 0; };
  Tensor out(av.shape());
  for (std::size_t r = 0; r < R; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c)
      if (open(c)) mx = std::max(mx, av(r, c));
    if (!std::isfinite(mx)) throw DimensionError("softmax_rows: row has no unmasked column");
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const double e = open(c) ? std::exp(av(r, c) - mx) : 0.0;
      out(r, c) = e;
      z += e;
    }
    for (std::size_t c = 0; c < C; ++c) out(r, c) /= z;
  }
  return a.tape().record(std::move(out), {a}, [a](Tape& t, std::uint32_t self) {
    if (Tensor* ga = t.grad_for(a)) {
      const Tensor& g = t.grad(self);
      const Tensor& y = t.value(self);
      for (std::size_t r = 0; r < y.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
        for (std::size_t c = 0; c < y.cols(); ++c) (*ga)(r, c) += y(r, c) * (g(r, c) - dot);
      }
    }
  });
}

// (x - mean) / sqrt(var + eps) per row; affine part is applied separately.
inline Var layer_norm_rows(Var a, double eps = 1e-5) {
  const Tensor& av = a.value();
  detail::require_rank2(av, "layer_norm_rows");
  detail::require_finite(av, "layer_norm_rows");
  const std::size_t R = av.rows(), C = av.cols();
  Tensor out(av.shape());
  std::vector<double> inv_std(R);
  for (std::size_t r = 0; r < R; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < C; ++c) mean += av(r, c);
    mean /= static_cast<double>(C);
    double var = 0.0;
    for (std::size_t c = 0; c < C; ++c) var += (av(r, c) - mean) * (av(r, c) - mean);
    var /= static_cast<double>(C);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < C; ++c) out(r, c) = (av(r, c) - mean) * inv_std[r];
  }
  return a.tape().record(std::move(out), {a}, [a, inv_std = std::move(inv_std)](Tape& t, std::uint32_t self) {
    if (Tensor* ga = t.grad_for(a)) {
      const Tensor& g = t.grad(self);
      const Tensor& xh = t.value(self);
      const std::size_t C = xh.cols();
      for (std::size_t r = 0; r < xh.rows(); ++r) {
        double mg = 0.0, mgx = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
          mg += g(r, c);
          mgx += g(r, c) * xh(r, c);
        }
        mg /= static_cast<double>(C);
        mgx /= static_cast<double>(C);
        for (std::size_t c = 0; c < C; ++c)
          (*ga)(r, c) += inv_std[r] * (g(r, c) - mg - xh(r, c) * mgx);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Indexing and reshaping

// out[i] = a[rows[i]]; used for embedding lookup and token selection.
inline Var gather_rows(Var a, std::span<const std::size_t> rows) {
  const Tensor& av = a.value();
  detail::require_rank2(av, "gather_rows");
  const std::size_t C = av.cols();
  Tensor out(Shape{rows.size(), C});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= av.rows())
      throw IndexError("gather_rows: row " + std::to_string(rows[i]) + " of " +
                       std::to_string(av.rows()));
    std::copy_n(av.data() + rows[i] * C, C, out.data() + i * C);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return a.tape().record(std::move(out), {a}, [a, idx = std::move(idx)](Tape& t, std::uint32_t self) {
    if (Tensor* ga = t.grad_for(a)) {
      const Tensor& g = t.grad(self);
      const std::size_t C = g.cols();
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t c = 0; c < C; ++c) (*ga)(idx[i], c) += g(i, c);
    }
  });
}

inline Var slice_cols(Var a, std::size_t start, std::size_t count) {
  const Tensor& av = a.value();
  detail::require_rank2(av, "slice_cols");
  if (start + count > av.cols())
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") outside " + av.shape().str());
  Tensor out(Shape{av.rows(), count});
  for (std::size_t r = 0; r < av.rows(); ++r)
    std::copy_n(av.data() + r * av.cols() + start, count, out.data() + r * count);
  return a.tape().record(std::move(out), {a}, [a, start, count](Tape& t, std::uint32_t self) {
    if (Tensor* ga = t.grad_for(a)) {
      const Tensor& g = t.grad(self);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < count; ++c) (*ga)(r, start + c) += g(r, c);
    }
  });
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t R = parts[0].rows();
  std::size_t C = 0;
  for (const Var& p : parts) {
    if (p.rows() != R) throw DimensionError("concat_cols: row counts differ");
    C += p.cols();
  }
  Tensor out(Shape{R, C});
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    for (std::size_t r = 0; r < R; ++r)
      std::copy_n(pv.data() + r * pv.cols(), pv.cols(), out.data() + r * C + off);
    off += pv.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record(std::move(out), parts, [inputs](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    std::size_t off = 0;
    for (const Var& p : inputs) {
      const std::size_t pc = p.cols();
      if (Tensor* gp = t.grad_for(p))
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < pc; ++c) (*gp)(r, c) += g(r, off + c);
      off += pc;
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(Var a) {
  Tensor out(Shape{1, 1}, a.value().sum());
  return a.tape().record(std::move(out), {a}, [a](Tape& t, std::uint32_t self) {
    if (Tensor* ga = t.grad_for(a)) {
      const double g = t.grad(self)[0];
      for (auto& v : ga->values()) v += g;
    }
  });
}

// 1x1 view of a single element.
inline Var element(Var a, std::size_t r, std::size_t c) {
  const Tensor& av = a.value();
  if (r >= av.rows() || c >= av.cols())
    throw IndexError("element (" + std::to_string(r) + "," + std::to_string(c) + ") outside " +
                     av.shape().str());
  Tensor out(Shape{1, 1}, av(r, c));
  return a.tape().record(std::move(out), {a}, [a, r, c](Tape& t, std::uint32_t self) {
    if (Tensor* ga = t.grad_for(a)) (*ga)(r, c) += t.grad(self)[0];
  });
}

// Binary cross-entropy of sigmoid(logit) against target, from the logit:
// max(z, 0) - z*y + log(1 + exp(-|z|)).
inline Var bce_with_logits(Var logit, double target) {
  if (logit.value().size() != 1) throw DimensionError("bce_with_logits expects a 1x1 logit");
  const double z = logit.scalar();
  if (!std::isfinite(z)) throw NumericError("bce_with_logits: non-finite logit");
  const double loss = std::max(z, 0.0) - z * target + std::log1p(std::exp(-std::abs(z)));
  return logit.tape().record(Tensor(Shape{1, 1}, loss), {logit}, [logit, target](Tape& t, std::uint32_t self) {
    if (Tensor* g = t.grad_for(logit))
      (*g)[0] += t.grad(self)[0] * (detail::stable_sigmoid(logit.scalar()) - target);
  });
}

}  // namespace zsl
