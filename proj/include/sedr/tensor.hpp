#pragma once

// Dense row-major f64 tensors with a reverse-mode tape.
//
// Every op reads its inputs as a matrix of rows x cols where cols is the last
// dimension. An op is recorded on the thread's active tape (see TapeScope) only
// when at least one input requires grad; without an active tape ops run as pure
// forward computations.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "sedr/error.hpp"

namespace sedr {

using Shape = std::vector<std::size_t>;

namespace detail {

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : node_(std::make_shared<detail::TensorNode>()) {
    SEDR_REQUIRE_AS(DimensionError, detail::numel(shape) == data.size(), "tensor shape ",
                                    detail::shape_str(shape), " does not match ", data.size(),
                                    " values");
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = detail::numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->data.size(); }
  std::size_t cols() const { return node_->shape.empty() ? 1 : node_->shape.back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : size() / cols(); }

  std::span<const double> data() const { return node_->data; }
  /// Direct write access; reserved for parameter initialization and optimizer updates.
  std::span<double> mutable_data() { return node_->data; }

  double at(std::size_t i) const { return node_->data[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

  double item() const {
    SEDR_REQUIRE(size() == 1, "item() on tensor of shape ", detail::shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() const {
    if (node_->grad.size() != node_->data.size()) node_->grad.assign(node_->data.size(), 0.0);
    return node_->grad;
  }
  void zero_grad() const { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

  /// Deep copy of the values with no gradient participation.
  Tensor detach() const { return Tensor(node_->shape, node_->data, false); }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  friend class Tape;
  std::shared_ptr<detail::TensorNode> node_;
};

// --------------------------------------------------------------------------
// Tape

class Tape {
 public:
  using BackwardFn = std::function<void()>;

  void record(std::string_view name, const Tensor& output, BackwardFn fn) {
    entries_.push_back({name, output.node_, std::move(fn)});
  }

  std::size_t size() const { return entries_.size(); }
  std::string_view op_name(std::size_t i) const { return entries_.at(i).name; }
  void clear() { entries_.clear(); }

  /// Visitor receives (entry index, op name) for each replayed op.
  using Visitor = std::function<void(std::size_t, std::string_view)>;

  void backward(const Tensor& loss, const Visitor& visit = {}) {
    SEDR_REQUIRE(loss.defined() && loss.size() == 1,
                    "backward requires a scalar loss, got shape ",
                    loss.defined() ? detail::shape_str(loss.shape()) : std::string("<undefined>"));
    bool produced_here = false;
    for (auto& e : entries_) {
      e.output->grad.assign(e.output->data.size(), 0.0);
      produced_here = produced_here || e.output == loss.node_;
    }
    SEDR_REQUIRE(produced_here || loss.requires_grad(),
                    "backward: loss was not produced under this tape");
    if (loss.node_->grad.size() != 1) loss.node_->grad.assign(1, 0.0);
    if (produced_here)
      loss.node_->grad[0] = 1.0;
    else
      loss.node_->grad[0] += 1.0;
    for (std::size_t i = entries_.size(); i-- > 0;) {
      if (visit) visit(i, entries_[i].name);
      entries_[i].backward();
    }
  }

 private:
  struct Entry {
    std::string_view name;
    std::shared_ptr<detail::TensorNode> output;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
};

inline Tape*& active_tape() {
  thread_local Tape* tape = nullptr;
  return tape;
}

/// Makes `tape` the recording target of the current thread for the guard's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : previous_(std::exchange(active_tape(), &tape)) {}
  ~TapeScope() { active_tape() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording (e.g. for detached forwards inside a training step).
class NoGradScope {
 public:
  NoGradScope() : previous_(std::exchange(active_tape(), nullptr)) {}
  ~NoGradScope() { active_tape() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

inline void backward(const Tensor& loss, Tape& tape) { tape.backward(loss); }

// --------------------------------------------------------------------------
// Helpers for writing ops.

namespace autograd {

inline Tape* recording(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = active_tape();
  if (!tape) return nullptr;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return tape;
  return nullptr;
}

inline Tape* recording(std::span<const Tensor> inputs) {
  Tape* tape = active_tape();
  if (!tape) return nullptr;
  for (const Tensor& t : inputs)
    if (t.requires_grad()) return tape;
  return nullptr;
}

inline Tensor result(Shape shape, std::vector<double> data, Tape* tape) {
#ifndef NDEBUG
  for (double v : data)
    SEDR_REQUIRE_AS(NumericalError, std::isfinite(v), "non-finite value in forward output");
#endif
  return Tensor(std::move(shape), std::move(data), tape != nullptr);
}

}  // namespace autograd

// --------------------------------------------------------------------------
// Kernels. Every reduction runs left to right over its index.

namespace kernel {

// c[i, :] += sum_p A(i, p) * b[p, :] with A(i, p) = a[i * row_stride + p * col_stride].
// A 4 x 16 tile of c stays in registers. Every element accumulates its products in
// ascending p, so the result is bitwise identical to the naive loop and each row
// is independent of the others (the build disables FMA contraction).
using vec8 = double __attribute__((vector_size(64)));

inline vec8 load8(const double* p) {
  vec8 v;
  std::memcpy(&v, p, sizeof v);
  return v;
}
inline void store8(double* p, vec8 v) { std::memcpy(p, &v, sizeof v); }

inline void gemm_strided_acc(const double* __restrict a, std::size_t row_stride,
                             std::size_t col_stride, const double* __restrict b,
                             double* __restrict c, std::size_t m, std::size_t k, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* a0 = a + i * row_stride;
    const double* a1 = a0 + row_stride;
    const double* a2 = a1 + row_stride;
    const double* a3 = a2 + row_stride;
    double* c0 = c + i * n;
    double* c1 = c0 + n;
    double* c2 = c1 + n;
    double* c3 = c2 + n;
    std::size_t j = 0;
    for (; j + 16 <= n; j += 16) {
      vec8 x00 = load8(c0 + j), x01 = load8(c0 + j + 8);
      vec8 x10 = load8(c1 + j), x11 = load8(c1 + j + 8);
      vec8 x20 = load8(c2 + j), x21 = load8(c2 + j + 8);
      vec8 x30 = load8(c3 + j), x31 = load8(c3 + j + 8);
      const double* bp = b + j;
      for (std::size_t p = 0, ap = 0; p < k; ++p, ap += col_stride, bp += n) {
        const vec8 b0 = load8(bp), b1 = load8(bp + 8);
        x00 += a0[ap] * b0;
        x01 += a0[ap] * b1;
        x10 += a1[ap] * b0;
        x11 += a1[ap] * b1;
        x20 += a2[ap] * b0;
        x21 += a2[ap] * b1;
        x30 += a3[ap] * b0;
        x31 += a3[ap] * b1;
      }
      store8(c0 + j, x00);
      store8(c0 + j + 8, x01);
      store8(c1 + j, x10);
      store8(c1 + j + 8, x11);
      store8(c2 + j, x20);
      store8(c2 + j + 8, x21);
      store8(c3 + j, x30);
      store8(c3 + j + 8, x31);
    }
    for (; j < n; ++j)
      for (std::size_t r = 0; r < 4; ++r) {
        const double* ar = a + (i + r) * row_stride;
        double s = c[(i + r) * n + j];
        for (std::size_t p = 0; p < k; ++p) s += ar[p * col_stride] * b[p * n + j];
        c[(i + r) * n + j] = s;
      }
  }
  for (; i < m; ++i) {
    const double* ar = a + i * row_stride;
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ar[p * col_stride];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

/// c[m x n] += a[m x k] * b[k x n]
inline void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                     std::size_t n) {
  gemm_strided_acc(a, k, 1, b, c, m, k, n);
}

/// c[k x n] += a[m x k]^T * g[m x n]
inline void gemm_at_acc(const double* a, const double* g, double* c, std::size_t m,
                        std::size_t k, std::size_t n) {
  gemm_strided_acc(a, 1, k, g, c, k, m, n);
}

inline std::vector<double> transpose(std::span<const double> b, std::size_t rows,
                                     std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = b[r * cols + c];
  return t;
}

/// In-place numerically stable softmax of one row.
inline void softmax(std::span<double> row) {
  if (row.empty()) return;
  double mx = row[0];
  for (double v : row) mx = std::max(mx, v);
  double total = 0.0;
  for (double& v : row) {
    v = std::exp(v - mx);
    total += v;
  }
  const double inv = 1.0 / total;
  for (double& v : row) v *= inv;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

inline double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

}  // namespace kernel

// --------------------------------------------------------------------------
// Ops

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  SEDR_REQUIRE_AS(DimensionError, a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
                                  "matmul: shapes ", detail::shape_str(a.shape()), " and ",
                                  detail::shape_str(b.shape()), " are incompatible");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  kernel::gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
  Tape* tape = autograd::recording({&a, &b});
  Tensor c = autograd::result({m, n}, std::move(out), tape);
  if (tape) {
    tape->record("matmul", c, [a, b, c, m, k, n]() {
      auto dc = c.grad();
      if (a.requires_grad()) {
        auto bt = kernel::transpose(b.data(), k, n);
        kernel::gemm_acc(dc.data(), bt.data(), a.mutable_grad().data(), m, n, k);
      }
      if (b.requires_grad())
        kernel::gemm_at_acc(a.data().data(), dc.data(), b.mutable_grad().data(), m, k, n);
    });
  }
  return c;
}

/// x[.. x in] * w[in x out] + bias[out]; bias may be undefined.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  SEDR_REQUIRE_AS(DimensionError, w.rank() == 2 && x.cols() == w.dim(0), "linear: input ",
                                  detail::shape_str(x.shape()), " vs weight ",
                                  detail::shape_str(w.shape()));
  const std::size_t m = x.rows(), k = w.dim(0), n = w.dim(1);
  const bool has_bias = bias.defined();
  if (has_bias)
    SEDR_REQUIRE_AS(DimensionError, bias.size() == n, "linear: bias ",
                                    detail::shape_str(bias.shape()), " vs ", n, " outputs");
  std::vector<double> out(m * n, 0.0);
  if (has_bias)
    for (std::size_t i = 0; i < m; ++i)
      std::copy(bias.data().begin(), bias.data().end(), out.begin() + i * n);
  kernel::gemm_acc(x.data().data(), w.data().data(), out.data(), m, k, n);
  Shape shape = x.shape();
  shape.back() = n;
  Tape* tape = has_bias ? autograd::recording({&x, &w, &bias}) : autograd::recording({&x, &w});
  Tensor y = autograd::result(std::move(shape), std::move(out), tape);
  if (tape) {
    tape->record("linear", y, [x, w, bias, y, m, k, n, has_bias]() {
      auto dy = y.grad();
      if (x.requires_grad()) {
        auto wt = kernel::transpose(w.data(), k, n);
        kernel::gemm_acc(dy.data(), wt.data(), x.mutable_grad().data(), m, n, k);
      }
      if (w.requires_grad())
        kernel::gemm_at_acc(x.data().data(), dy.data(), w.mutable_grad().data(), m, k, n);
      if (has_bias && bias.requires_grad()) {
        auto db = bias.mutable_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) db[j] += dy[i * n + j];
      }
    });
  }
  return y;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  SEDR_REQUIRE_AS(DimensionError, a.shape() == b.shape(), "add: shapes ",
                                  detail::shape_str(a.shape()), " and ",
                                  detail::shape_str(b.shape()), " differ");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  Tape* tape = autograd::recording({&a, &b});
  Tensor c = autograd::result(a.shape(), std::move(out), tape);
  if (tape) {
    tape->record("add", c, [a, b, c]() {
      auto dc = c.grad();
      if (a.requires_grad()) {
        auto da = a.mutable_grad();
        for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i];
      }
      if (b.requires_grad()) {
        auto db = b.mutable_grad();
        for (std::size_t i = 0; i < dc.size(); ++i) db[i] += dc[i];
      }
    });
  }
  return c;
}

inline Tensor scale(const Tensor& x, double s) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * x.at(i);
  Tape* tape = autograd::recording({&x});
  Tensor y = autograd::result(x.shape(), std::move(out), tape);
  if (tape) {
    tape->record("scale", y, [x, y, s]() {
      auto dy = y.grad();
      auto dx = x.mutable_grad();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += s * dy[i];
    });
  }
  return y;
}

inline Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  Tape* tape = autograd::recording({&x});
  Tensor y = autograd::result({1}, {total}, tape);
  if (tape) {
    tape->record("sum", y, [x, y]() {
      const double g = y.grad()[0];
      for (double& d : x.mutable_grad()) d += g;
    });
  }
  return y;
}

/// Sum of a list of scalars, accumulated in list order.
inline Tensor sum_scalars(std::span<const Tensor> terms) {
  double total = 0.0;
  for (const auto& t : terms) total += t.item();
  Tape* tape = autograd::recording(terms);
  Tensor y = autograd::result({1}, {total}, tape);
  if (tape) {
    std::vector<Tensor> inputs(terms.begin(), terms.end());
    tape->record("sum_scalars", y, [inputs, y]() {
      const double g = y.grad()[0];
      for (auto& t : inputs)
        if (t.requires_grad()) t.mutable_grad()[0] += g;
    });
  }
  return y;
}

inline Tensor dot(const Tensor& a, const Tensor& b) {
  SEDR_REQUIRE_AS(DimensionError, a.size() == b.size(), "dot: sizes ", a.size(), " and ",
                                  b.size(), " differ");
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += a.at(i) * b.at(i);
  Tape* tape = autograd::recording({&a, &b});
  Tensor y = autograd::result({1}, {total}, tape);
  if (tape) {
    tape->record("dot", y, [a, b, y]() {
      const double g = y.grad()[0];
      if (a.requires_grad()) {
        auto da = a.mutable_grad();
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += g * b.at(i);
      }
      if (b.requires_grad()) {
        auto db = b.mutable_grad();
        for (std::size_t i = 0; i < db.size(); ++i) db[i] += g * a.at(i);
      }
    });
  }
  return y;
}

/// GELU, tanh approximation.
inline Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = kernel::gelu(x.at(i));
  Tape* tape = autograd::recording({&x});
  Tensor y = autograd::result(x.shape(), std::move(out), tape);
  if (tape) {
    tape->record("gelu", y, [x, y]() {
      auto dy = y.grad();
      auto dx = x.mutable_grad();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * kernel::gelu_grad(x.at(i));
    });
  }
  return y;
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  SEDR_REQUIRE_AS(DimensionError, detail::numel(shape) == x.size(), "reshape: ",
                                  detail::shape_str(x.shape()), " to ",
                                  detail::shape_str(shape));
  Tape* tape = autograd::recording({&x});
  Tensor y = autograd::result(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()),
                              tape);
  if (tape) {
    tape->record("reshape", y, [x, y]() {
      auto dy = y.grad();
      auto dx = x.mutable_grad();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    });
  }
  return y;
}

inline Tensor softmax_rows(const Tensor& x) {
  const std::size_t n = x.cols(), m = x.rows();
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < m; ++i) kernel::softmax(std::span(out).subspan(i * n, n));
  Tape* tape = autograd::recording({&x});
  Tensor y = autograd::result(x.shape(), std::move(out), tape);
  if (tape) {
    tape->record("softmax_rows", y, [x, y, m, n]() {
      auto dy = y.grad();
      auto dx = x.mutable_grad();
      auto p = y.data();
      for (std::size_t i = 0; i < m; ++i) {
        double inner = 0.0;
        for (std::size_t j = 0; j < n; ++j) inner += p[i * n + j] * dy[i * n + j];
        for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += p[i * n + j] * (dy[i * n + j] - inner);
      }
    });
  }
  return y;
}

/// Normalizes the last axis (population variance), then applies gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t d = x.cols(), m = x.rows();
  SEDR_REQUIRE_AS(DimensionError, d >= 1 && gain.size() == d && bias.size() == d,
                                  "layer_norm: input ", detail::shape_str(x.shape()), " gain ",
                                  detail::shape_str(gain.shape()), " bias ",
                                  detail::shape_str(bias.shape()));
  std::vector<double> xhat(x.size()), inv_std(m), out(x.size());
  auto xs = x.data();
  auto g = gain.data();
  auto b = bias.data();
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xs[i * d + j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xs[i * d + j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[i] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xs[i * d + j] - mean) * inv;
      xhat[i * d + j] = h;
      out[i * d + j] = h * g[j] + b[j];
    }
  }
  Tape* tape = autograd::recording({&x, &gain, &bias});
  Tensor y = autograd::result(x.shape(), std::move(out), tape);
  if (tape) {
    tape->record("layer_norm", y,
                 [x, gain, bias, y, xhat = std::move(xhat), inv_std = std::move(inv_std), m,
                  d]() {
                   auto dy = y.grad();
                   auto g = gain.data();
                   if (gain.requires_grad()) {
                     auto dg = gain.mutable_grad();
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < d; ++j) dg[j] += dy[i * d + j] * xhat[i * d + j];
                   }
                   if (bias.requires_grad()) {
                     auto db = bias.mutable_grad();
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < d; ++j) db[j] += dy[i * d + j];
                   }
                   if (x.requires_grad()) {
                     auto dx = x.mutable_grad();
                     const double inv_d = 1.0 / static_cast<double>(d);
                     for (std::size_t i = 0; i < m; ++i) {
                       double mean_dh = 0.0, mean_dh_h = 0.0;
                       for (std::size_t j = 0; j < d; ++j) {
                         const double dh = dy[i * d + j] * g[j];
                         mean_dh += dh;
                         mean_dh_h += dh * xhat[i * d + j];
                       }
                       mean_dh *= inv_d;
                       mean_dh_h *= inv_d;
                       for (std::size_t j = 0; j < d; ++j) {
                         const double dh = dy[i * d + j] * g[j];
                         dx[i * d + j] += inv_std[i] * (dh - mean_dh - xhat[i * d + j] * mean_dh_h);
                       }
                     }
                   }
                 });
  }
  return y;
}

/// Row lookup: out[i] = table[ids[i]].
inline Tensor embedding(const Tensor& table, std::span<const std::uint32_t> ids) {
  SEDR_REQUIRE_AS(DimensionError, table.rank() == 2, "embedding: table must be 2-D, got ",
                                  detail::shape_str(table.shape()));
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  auto src = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    SEDR_REQUIRE(ids[i] < vocab, "embedding: id ", ids[i], " out of range for table of ", vocab,
                    " rows");
    std::copy_n(src.begin() + ids[i] * d, d, out.begin() + i * d);
  }
  Tape* tape = autograd::recording({&table});
  Tensor y = autograd::result({ids.size(), d}, std::move(out), tape);
  if (tape) {
    std::vector<std::uint32_t> idx(ids.begin(), ids.end());
    tape->record("embedding", y, [table, y, idx = std::move(idx), d]() {
      auto dy = y.grad();
      auto dt = table.mutable_grad();
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) dt[idx[i] * d + j] += dy[i * d + j];
    });
  }
  return y;
}

/// out[i] = x.row(rows[i]); x is viewed as rows x cols.
inline Tensor gather_rows(const Tensor& x, std::span<const std::uint32_t> rows) {
  const std::size_t c = x.cols(), r = x.rows();
  std::vector<double> out(rows.size() * c);
  auto src = x.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    SEDR_REQUIRE(rows[i] < r, "gather_rows: row ", rows[i], " out of range (", r, " rows)");
    std::copy_n(src.begin() + rows[i] * c, c, out.begin() + i * c);
  }
  Tape* tape = autograd::recording({&x});
  Tensor y = autograd::result({rows.size(), c}, std::move(out), tape);
  if (tape) {
    std::vector<std::uint32_t> idx(rows.begin(), rows.end());
    tape->record("gather_rows", y, [x, y, idx = std::move(idx), c]() {
      auto dy = y.grad();
      auto dx = x.mutable_grad();
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) dx[idx[i] * c + j] += dy[i * c + j];
    });
  }
  return y;
}

// --------------------------------------------------------------------------
// Sparse-layout multi-head attention.

/// Compressed key lists: query row r attends keys[offsets[r] .. offsets[r+1]).
/// A key absent from a row's list is equivalent to a -inf logit.
struct AttentionLayout {
  std::vector<std::uint32_t> offsets{0};
  std::vector<std::uint32_t> keys;

  std::size_t num_queries() const { return offsets.size() - 1; }
  std::span<const std::uint32_t> keys_of(std::size_t row) const {
    return std::span(keys).subspan(offsets[row], offsets[row + 1] - offsets[row]);
  }
  void add_row(std::span<const std::uint32_t> row_keys) {
    keys.insert(keys.end(), row_keys.begin(), row_keys.end());
    offsets.push_back(static_cast<std::uint32_t>(keys.size()));
  }
};

/// Attention probabilities, laid out as [row][head][key-slot].
struct AttentionWeights {
  std::size_t heads = 1;
  std::vector<std::uint32_t> offsets;  // per row, in units of key slots
  std::vector<double> probs;

  std::span<const double> of(std::size_t row, std::size_t head) const {
    const std::size_t len = offsets[row + 1] - offsets[row];
    return std::span(probs).subspan(offsets[row] * heads + head * len, len);
  }
};

namespace detail {

inline void check_attention_shapes(const Tensor& q, const Tensor& k, const AttentionLayout& layout,
                                   std::size_t heads) {
  SEDR_REQUIRE_AS(DimensionError, q.cols() == k.cols() && heads >= 1 && q.cols() % heads == 0,
                  "attention: query ", shape_str(q.shape()), " key ", shape_str(k.shape()),
                  " heads ", heads);
  SEDR_REQUIRE_AS(DimensionError, layout.num_queries() == q.rows(), "attention: layout has ",
                  layout.num_queries(), " rows for ", q.rows(), " queries");
  for (auto key : layout.keys)
    SEDR_REQUIRE(key < k.rows(), "attention: key row ", key, " out of range (", k.rows(), " keys)");
  for (std::size_t r = 0; r < layout.num_queries(); ++r)
    SEDR_REQUIRE(!layout.keys_of(r).empty(), "attention: query row ", r, " has no keys");
}

inline AttentionWeights attention_probs(const Tensor& q, const Tensor& k,
                                        const AttentionLayout& layout, std::size_t heads) {
  const std::size_t d = q.cols(), dk = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  AttentionWeights w;
  w.heads = heads;
  w.offsets = layout.offsets;
  w.probs.resize(layout.keys.size() * heads);
  auto qs = q.data();
  auto ks = k.data();
  for (std::size_t r = 0; r < layout.num_queries(); ++r) {
    auto keys = layout.keys_of(r);
    for (std::size_t h = 0; h < heads; ++h) {
      std::span<double> logits(w.probs.data() + layout.offsets[r] * heads + h * keys.size(),
                               keys.size());
      const double* qr = qs.data() + r * d + h * dk;
      for (std::size_t j = 0; j < keys.size(); ++j) {
        const double* kr = ks.data() + keys[j] * d + h * dk;
        double s = 0.0;
        for (std::size_t t = 0; t < dk; ++t) s += qr[t] * kr[t];
        logits[j] = s * scale;
      }
      kernel::softmax(logits);
    }
  }
  return w;
}

}  // namespace detail

/// Attention probabilities without recording; the same values the forward uses.
inline AttentionWeights attention_weights(const Tensor& q, const Tensor& k,
                                          const AttentionLayout& layout, std::size_t heads) {
  detail::check_attention_shapes(q, k, layout, heads);
  return detail::attention_probs(q, k, layout, heads);
}

/// Scaled dot-product attention with per-row key lists; output has q's shape.
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        const AttentionLayout& layout, std::size_t heads) {
  detail::check_attention_shapes(q, k, layout, heads);
  SEDR_REQUIRE_AS(DimensionError, v.shape() == k.shape(), "attention: value ",
                                  detail::shape_str(v.shape()), " vs key ",
                                  detail::shape_str(k.shape()));
  const std::size_t d = q.cols(), dk = d / heads;
  auto w = detail::attention_probs(q, k, layout, heads);
  std::vector<double> out(q.size(), 0.0);
  auto vs = v.data();
  for (std::size_t r = 0; r < layout.num_queries(); ++r) {
    auto keys = layout.keys_of(r);
    for (std::size_t h = 0; h < heads; ++h) {
      auto p = w.of(r, h);
      double* o = out.data() + r * d + h * dk;
      for (std::size_t j = 0; j < keys.size(); ++j) {
        const double* vr = vs.data() + keys[j] * d + h * dk;
        for (std::size_t t = 0; t < dk; ++t) o[t] += p[j] * vr[t];
      }
    }
  }
  Tape* tape = autograd::recording({&q, &k, &v});
  Tensor y = autograd::result(q.shape(), std::move(out), tape);
  if (tape) {
    tape->record("attention", y, [q, k, v, y, layout, w = std::move(w), heads, d, dk]() {
      const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
      auto dy = y.grad();
      auto qs = q.data();
      auto ks = k.data();
      auto vs = v.data();
      std::vector<double> dq(q.size(), 0.0), dkey(k.size(), 0.0), dv(v.size(), 0.0);
      std::vector<double> dlogit;
      for (std::size_t r = 0; r < layout.num_queries(); ++r) {
        auto keys = layout.keys_of(r);
        dlogit.resize(keys.size());
        for (std::size_t h = 0; h < heads; ++h) {
          auto p = w.of(r, h);
          const double* go = dy.data() + r * d + h * dk;
          double inner = 0.0;
          for (std::size_t j = 0; j < keys.size(); ++j) {
            const double* vr = vs.data() + keys[j] * d + h * dk;
            double dp = 0.0;
            for (std::size_t t = 0; t < dk; ++t) dp += go[t] * vr[t];
            dlogit[j] = dp;
            inner += p[j] * dp;
            double* dvr = dv.data() + keys[j] * d + h * dk;
            for (std::size_t t = 0; t < dk; ++t) dvr[t] += p[j] * go[t];
          }
          const double* qr = qs.data() + r * d + h * dk;
          double* dqr = dq.data() + r * d + h * dk;
          for (std::size_t j = 0; j < keys.size(); ++j) {
            const double g = p[j] * (dlogit[j] - inner) * scale;
            const double* kr = ks.data() + keys[j] * d + h * dk;
            double* dkr = dkey.data() + keys[j] * d + h * dk;
            for (std::size_t t = 0; t < dk; ++t) {
              dqr[t] += g * kr[t];
              dkr[t] += g * qr[t];
            }
          }
        }
      }
      auto accumulate = [](const Tensor& t, const std::vector<double>& g) {
        if (!t.requires_grad()) return;
        auto dst = t.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      };
      accumulate(q, dq);
      accumulate(k, dkey);
      accumulate(v, dv);
    });
  }
  return y;
}

}  // namespace sedr
