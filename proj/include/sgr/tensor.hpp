#pragma once

// Dense row-major tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a shared handle: copies alias the same storage, like the
// framework tensors this mirrors. Operations record themselves on the
// thread's active Tape (see TapeScope) when at least one input requires a
// gradient; with no active tape every operation is a plain evaluation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sgr {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream oss;
  oss << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) oss << 'x';
    oss << shape[i];
  }
  oss << ']';
  return oss.str();
}

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

class ShapeError : public std::invalid_argument {
 public:
  ShapeError(std::string_view op, std::string_view what)
      : std::invalid_argument(std::string(op) + ": " + std::string(what)),
        op_(op) {}
  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

class DomainError : public std::domain_error {
 public:
  DomainError(std::string_view op, std::string_view what)
      : std::domain_error(std::string(op) + ": " + std::string(what)) {}
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : impl_(std::make_shared<TensorImpl>()) {
    if (shape.empty()) throw ShapeError("tensor", "empty shape");
    for (auto e : shape)
      if (e == 0) throw ShapeError("tensor", "zero extent in " + shape_string(shape));
    if (shape_numel(shape) != data.size())
      throw ShapeError("tensor", "shape " + shape_string(shape) + " does not match " +
                                     std::to_string(data.size()) + " values");
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }
  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t size() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }
  std::span<const double> grad() const { return impl_->grad; }
  bool has_grad() const { return !impl_->grad.empty(); }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
  }
  void zero_grad() { impl_->grad.clear(); }

  double item() const {
    if (size() != 1) throw ShapeError("item", "tensor " + shape_string(shape()) + " is not a scalar");
    return impl_->data[0];
  }
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double at(std::size_t row, std::size_t col) const {
    return impl_->data[row * impl_->shape.back() + col];
  }

  // Copy of the values with no gradient history.
  Tensor detach() const { return Tensor(shape(), impl_->data, false); }
  Tensor clone() const { return Tensor(shape(), impl_->data, requires_grad()); }

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

using BackwardFn = std::function<void(const TensorImpl& out)>;

class Tape {
 public:
  void record(const Tensor& output, BackwardFn backward) {
    nodes_.push_back({output.impl(), std::move(backward)});
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  bool empty() const noexcept { return nodes_.empty(); }
  void clear() { nodes_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Nodes are
  // stored in creation order, which is a topological order of the graph.
  void backward(const Tensor& loss, bool retain = false) {
    if (loss.size() != 1)
      throw ShapeError("backward", "loss must be a scalar, got " + shape_string(loss.shape()));
    if (!loss.requires_grad() || nodes_.empty())
      throw std::logic_error("backward: loss has no recorded gradient path");
    auto& seed = *loss.impl();
    seed.ensure_grad();
    seed.grad[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (it->output->grad.empty()) continue;
      it->backward(*it->output);
    }
    if (!retain) clear();
  }

 private:
  struct Node {
    std::shared_ptr<TensorImpl> output;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

namespace detail {
inline Tape*& active_tape_slot() {
  thread_local Tape* tape = nullptr;
  return tape;
}
}  // namespace detail

inline Tape* active_tape() { return detail::active_tape_slot(); }

// Makes `tape` the recording target for this thread until destruction.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : previous_(detail::active_tape_slot()) {
    detail::active_tape_slot() = &tape;
  }
  ~TapeScope() { detail::active_tape_slot() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Suspends recording for this thread (evaluation of detached quantities).
class NoGradScope {
 public:
  NoGradScope() : previous_(detail::active_tape_slot()) { detail::active_tape_slot() = nullptr; }
  ~NoGradScope() { detail::active_tape_slot() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

// Attaches `backward` to `out` if any input requires a gradient and a tape
// is active. Custom operations outside this header use the same hook.
inline Tensor record_op(Tensor out, std::initializer_list<const Tensor*> inputs,
                        BackwardFn backward) {
  Tape* tape = active_tape();
  if (!tape) return out;
  bool any = false;
  for (const Tensor* in : inputs) any = any || in->requires_grad();
  if (!any) return out;
  out.set_requires_grad(true);
  tape->record(out, std::move(backward));
  return out;
}

namespace detail {

inline void require(bool ok, std::string_view op, const std::string& what) {
  if (!ok) throw ShapeError(op, what);
}

inline void require_same(const Tensor& a, const Tensor& b, std::string_view op) {
  require(a.shape() == b.shape(), op,
          "shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

inline void require_matrix(const Tensor& a, std::string_view op) {
  require(a.rank() == 2, op, "expected a matrix, got " + shape_string(a.shape()));
}

// Accumulates into the gradient of `in` when it participates in the graph.
inline std::vector<double>* grad_sink(const std::shared_ptr<TensorImpl>& in) {
  if (!in->requires_grad) return nullptr;
  in->ensure_grad();
  return &in->grad;
}

// Row-major C[m,n] += A[m,k] * B[k,n].
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,k] += A[m,n] * B[k,n]^T.
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      c[i * k + p] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n].
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return record_op(Tensor(a.shape(), std::move(out)), {&a, &b},
                   [ia = a.impl(), ib = b.impl()](const TensorImpl& o) {
                     if (auto* g = detail::grad_sink(ia))
                       for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i];
                     if (auto* g = detail::grad_sink(ib))
                       for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i];
                   });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return record_op(Tensor(a.shape(), std::move(out)), {&a, &b},
                   [ia = a.impl(), ib = b.impl()](const TensorImpl& o) {
                     if (auto* g = detail::grad_sink(ia))
                       for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i];
                     if (auto* g = detail::grad_sink(ib))
                       for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] -= o.grad[i];
                   });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return record_op(Tensor(a.shape(), std::move(out)), {&a, &b},
                   [ia = a.impl(), ib = b.impl()](const TensorImpl& o) {
                     if (auto* g = detail::grad_sink(ia))
                       for (std::size_t i = 0; i < o.grad.size(); ++i)
                         (*g)[i] += o.grad[i] * ib->data[i];
                     if (auto* g = detail::grad_sink(ib))
                       for (std::size_t i = 0; i < o.grad.size(); ++i)
                         (*g)[i] += o.grad[i] * ia->data[i];
                   });
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  return record_op(Tensor(a.shape(), std::move(out)), {&a},
                   [ia = a.impl(), s](const TensorImpl& o) {
                     if (auto* g = detail::grad_sink(ia))
                       for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i] * s;
                   });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + s;
  return record_op(Tensor(a.shape(), std::move(out)), {&a}, [ia = a.impl()](const TensorImpl& o) {
    if (auto* g = detail::grad_sink(ia))
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i];
  });
}

// a[n, d] + bias[d] for every row n.
inline Tensor add_bias(const Tensor& a, const Tensor& bias) {
  detail::require_matrix(a, "add_bias");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  detail::require(bias.size() == cols, "add_bias",
                  "bias " + shape_string(bias.shape()) + " does not match " + shape_string(a.shape()));
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = a[r * cols + c] + bias[c];
  return record_op(Tensor(a.shape(), std::move(out)), {&a, &bias},
                   [ia = a.impl(), ib = bias.impl(), rows, cols](const TensorImpl& o) {
                     if (auto* g = detail::grad_sink(ia))
                       for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i];
                     if (auto* g = detail::grad_sink(ib))
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < cols; ++c) (*g)[c] += o.grad[r * cols + c];
                   });
}

// ---------------------------------------------------------------------------
// Nonlinearities

inline Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (std::isnan(a[i])) throw DomainError("sigmoid", "NaN input");
    out[i] = detail::stable_sigmoid(a[i]);
  }
  return record_op(Tensor(a.shape(), std::move(out)), {&a}, [ia = a.impl()](const TensorImpl& o) {
    if (auto* g = detail::grad_sink(ia))
      for (std::size_t i = 0; i < o.grad.size(); ++i)
        (*g)[i] += o.grad[i] * o.data[i] * (1.0 - o.data[i]);
  });
}

inline constexpr double kLogFloor = 1e-12;

// Natural log with inputs below kLogFloor clamped to the floor.
inline Tensor log(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(a[i] >= 0.0) || std::isinf(a[i]))
      throw DomainError("log", "input " + std::to_string(a[i]) + " outside [0, inf)");
    out[i] = std::log(std::max(a[i], kLogFloor));
  }
  return record_op(Tensor(a.shape(), std::move(out)), {&a}, [ia = a.impl()](const TensorImpl& o) {
    if (auto* g = detail::grad_sink(ia))
      for (std::size_t i = 0; i < o.grad.size(); ++i)
        if (ia->data[i] >= kLogFloor) (*g)[i] += o.grad[i] / ia->data[i];
  });
}

inline Tensor pow(const Tensor& a, double exponent) {
  const bool integral = std::floor(exponent) == exponent;
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (a[i] < 0.0 && !integral)
      throw DomainError("pow", "negative base with non-integer exponent");
    out[i] = std::pow(a[i], exponent);
    if (!std::isfinite(out[i])) throw DomainError("pow", "non-finite result");
  }
  return record_op(Tensor(a.shape(), std::move(out)), {&a},
                   [ia = a.impl(), exponent](const TensorImpl& o) {
                     if (auto* g = detail::grad_sink(ia))
                       for (std::size_t i = 0; i < o.grad.size(); ++i) {
                         if (exponent == 0.0) continue;
                         (*g)[i] += o.grad[i] * exponent * std::pow(ia->data[i], exponent - 1.0);
                       }
                   });
}

// Clamps into [lo, hi]; the gradient is zero outside the interval.
inline Tensor clamp(const Tensor& a, double lo, double hi) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(a[i], lo, hi);
  return record_op(Tensor(a.shape(), std::move(out)), {&a},
                   [ia = a.impl(), lo, hi](const TensorImpl& o) {
                     if (auto* g = detail::grad_sink(ia))
                       for (std::size_t i = 0; i < o.grad.size(); ++i) {
                         const double x = ia->data[i];
                         if (x >= lo && x <= hi) (*g)[i] += o.grad[i];
                       }
                   });
}

// Softmax along the last axis.
inline Tensor softmax(const Tensor& a) {
  const std::size_t cols = a.shape().back();
  const std::size_t rows = a.size() / cols;
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * cols;
    double* y = out.data() + r * cols;
    const double mx = *std::max_element(x, x + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (y[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) y[c] /= z;
  }
  return record_op(Tensor(a.shape(), std::move(out)), {&a},
                   [ia = a.impl(), rows, cols](const TensorImpl& o) {
                     auto* g = detail::grad_sink(ia);
                     if (!g) return;
                     for (std::size_t r = 0; r < rows; ++r) {
                       const double* y = o.data.data() + r * cols;
                       const double* dy = o.grad.data() + r * cols;
                       double dot = 0.0;
                       for (std::size_t c = 0; c < cols; ++c) dot += y[c] * dy[c];
                       for (std::size_t c = 0; c < cols; ++c)
                         (*g)[r * cols + c] += y[c] * (dy[c] - dot);
                     }
                   });
}

// log(softmax(x)) along the last axis, evaluated without the log floor.
inline Tensor log_softmax(const Tensor& a) {
  const std::size_t cols = a.shape().back();
  const std::size_t rows = a.size() / cols;
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * cols;
    double* y = out.data() + r * cols;
    const double mx = *std::max_element(x, x + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(x[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) y[c] = x[c] - lse;
  }
  return record_op(Tensor(a.shape(), std::move(out)), {&a},
                   [ia = a.impl(), rows, cols](const TensorImpl& o) {
                     auto* g = detail::grad_sink(ia);
                     if (!g) return;
                     for (std::size_t r = 0; r < rows; ++r) {
                       const double* y = o.data.data() + r * cols;
                       const double* dy = o.grad.data() + r * cols;
                       double total = 0.0;
                       for (std::size_t c = 0; c < cols; ++c) total += dy[c];
                       for (std::size_t c = 0; c < cols; ++c)
                         (*g)[r * cols + c] += dy[c] - std::exp(y[c]) * total;
                     }
                   });
}

// x * sigmoid(x), composed from primitive ops.
inline Tensor silu(const Tensor& a) { return mul(a, sigmoid(a)); }

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return record_op(Tensor::scalar(s), {&a}, [ia = a.impl()](const TensorImpl& o) {
    if (auto* g = detail::grad_sink(ia))
      for (auto& v : *g) v += o.grad[0];
  });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

// Sum of a[i] * b[i]; equivalent to sum(mul(a, b)) with one node.
inline Tensor dot(const Tensor& a, const Tensor& b) {
  detail::require(a.size() == b.size(), "dot",
                  "size mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return record_op(Tensor::scalar(s), {&a, &b}, [ia = a.impl(), ib = b.impl()](const TensorImpl& o) {
    const double go = o.grad[0];
    if (auto* g = detail::grad_sink(ia))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += go * ib->data[i];
    if (auto* g = detail::grad_sink(ib))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += go * ia->data[i];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  detail::require(b.dim(0) == k, "matmul",
                  "inner extents differ: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  std::vector<double> out(m * n, 0.0);
  detail::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return record_op(Tensor({m, n}, std::move(out)), {&a, &b},
                   [ia = a.impl(), ib = b.impl(), m, k, n](const TensorImpl& o) {
                     if (auto* g = detail::grad_sink(ia))
                       detail::gemm_nt(o.grad.data(), ib->data.data(), g->data(), m, n, k);
                     if (auto* g = detail::grad_sink(ib))
                       detail::gemm_tn(ia->data.data(), o.grad.data(), g->data(), m, k, n);
                   });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_matrix(a, "transpose");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = a[r * cols + c];
  return record_op(Tensor({cols, rows}, std::move(out)), {&a},
                   [ia = a.impl(), rows, cols](const TensorImpl& o) {
                     if (auto* g = detail::grad_sink(ia))
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < cols; ++c)
                           (*g)[r * cols + c] += o.grad[c * rows + r];
                   });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  detail::require(shape_numel(shape) == a.size(), "reshape",
                  "cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  return record_op(Tensor(std::move(shape), a.values()), {&a}, [ia = a.impl()](const TensorImpl& o) {
    if (auto* g = detail::grad_sink(ia))
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i];
  });
}

// Concatenates matrices with equal row counts along the column axis.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  detail::require(!parts.empty(), "concat_cols", "no inputs");
  const std::size_t rows = parts.front().dim(0);
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_cols");
    detail::require(p.dim(0) == rows, "concat_cols", "row counts differ");
    total += p.dim(1);
  }
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(p.data().data() + r * w, w, out.data() + r * total + offset);
    offset += w;
  }
  Tensor result({rows, total}, std::move(out));
  Tape* tape = active_tape();
  if (!tape) return result;
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (!any) return result;
  std::vector<std::shared_ptr<TensorImpl>> impls;
  for (const auto& p : parts) impls.push_back(p.impl());
  result.set_requires_grad(true);
  tape->record(result, [impls, rows, total](const TensorImpl& o) {
    std::size_t off = 0;
    for (const auto& in : impls) {
      const std::size_t w = in->shape[1];
      if (auto* g = detail::grad_sink(in))
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < w; ++c) (*g)[r * w + c] += o.grad[r * total + off + c];
      off += w;
    }
  });
  return result;
}

// Column `index` of a matrix as a vector.
inline Tensor column(const Tensor& a, std::size_t index) {
  detail::require_matrix(a, "column");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  detail::require(index < cols, "column", "index out of range");
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) out[r] = a[r * cols + index];
  return record_op(Tensor({rows}, std::move(out)), {&a},
                   [ia = a.impl(), rows, cols, index](const TensorImpl& o) {
                     if (auto* g = detail::grad_sink(ia))
                       for (std::size_t r = 0; r < rows; ++r) (*g)[r * cols + index] += o.grad[r];
                   });
}

// 3x3 neighbourhood unfolding of a [height*width, channels] feature map with
// zero padding: out[pixel, (dy*3+dx)*channels + c].
inline Tensor im2col3x3(const Tensor& x, std::size_t width, std::size_t height) {
  detail::require_matrix(x, "im2col3x3");
  detail::require(x.dim(0) == width * height, "im2col3x3",
                  "rows " + std::to_string(x.dim(0)) + " != width*height");
  const std::size_t ch = x.dim(1), cols = 9 * ch;
  std::vector<double> out(width * height * cols, 0.0);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t xx = 0; xx < width; ++xx) {
      double* dst = out.data() + (y * width + xx) * cols;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const long sy = static_cast<long>(y) + dy, sx = static_cast<long>(xx) + dx;
          if (sy < 0 || sx < 0 || sy >= static_cast<long>(height) || sx >= static_cast<long>(width))
            continue;
          const double* src = x.data().data() + (sy * width + sx) * ch;
          std::copy_n(src, ch, dst + ((dy + 1) * 3 + (dx + 1)) * ch);
        }
    }
  return record_op(Tensor({width * height, cols}, std::move(out)), {&x},
                   [ix = x.impl(), width, height, ch, cols](const TensorImpl& o) {
                     auto* g = detail::grad_sink(ix);
                     if (!g) return;
                     for (std::size_t y = 0; y < height; ++y)
                       for (std::size_t xx = 0; xx < width; ++xx) {
                         const double* src = o.grad.data() + (y * width + xx) * cols;
                         for (int dy = -1; dy <= 1; ++dy)
                           for (int dx = -1; dx <= 1; ++dx) {
                             const long sy = static_cast<long>(y) + dy, sx = static_cast<long>(xx) + dx;
                             if (sy < 0 || sx < 0 || sy >= static_cast<long>(height) ||
                                 sx >= static_cast<long>(width))
                               continue;
                             double* dst = g->data() + (sy * width + sx) * ch;
                             const double* s = src + ((dy + 1) * 3 + (dx + 1)) * ch;
                             for (std::size_t c = 0; c < ch; ++c) dst[c] += s[c];
                           }
                       }
                   });
}

// Same-padded 3x3 convolution; weight is [9*in_channels, out_channels].
inline Tensor conv3x3(const Tensor& x, const Tensor& weight, const Tensor& bias,
                      std::size_t width, std::size_t height) {
  detail::require(weight.rank() == 2 && weight.dim(0) == 9 * x.dim(1), "conv3x3",
                  "weight " + shape_string(weight.shape()) + " incompatible with input " +
                      shape_string(x.shape()));
  return add_bias(matmul(im2col3x3(x, width, height), weight), bias);
}

// Row-wise layer normalization over the last axis with affine gain and bias.
inline Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
  detail::require_matrix(a, "layer_norm");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  detail::require(gain.size() == cols && bias.size() == cols, "layer_norm",
                  "gain/bias do not match width " + std::to_string(cols));
  std::vector<double> out(a.size()), xhat(a.size()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += x[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (x[c] - mu) * (x[c] - mu);
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      xhat[r * cols + c] = (x[c] - mu) * inv_std[r];
      out[r * cols + c] = xhat[r * cols + c] * gain[c] + bias[c];
    }
  }
  return record_op(
      Tensor(a.shape(), std::move(out)), {&a, &gain, &bias},
      [ia = a.impl(), ig = gain.impl(), ib = bias.impl(), xhat = std::move(xhat),
       inv_std = std::move(inv_std), rows, cols](const TensorImpl& o) {
        auto* ga = detail::grad_sink(ia);
        auto* gg = detail::grad_sink(ig);
        auto* gb = detail::grad_sink(ib);
        const double n = static_cast<double>(cols);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* dy = o.grad.data() + r * cols;
          const double* xh = xhat.data() + r * cols;
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t c = 0; c < cols; ++c) {
            const double d = dy[c] * ig->data[c];
            mean_d += d;
            mean_dx += d * xh[c];
            if (gg) (*gg)[c] += dy[c] * xh[c];
            if (gb) (*gb)[c] += dy[c];
          }
          if (!ga) continue;
          mean_d /= n;
          mean_dx /= n;
          for (std::size_t c = 0; c < cols; ++c) {
            const double d = dy[c] * ig->data[c];
            (*ga)[r * cols + c] += inv_std[r] * (d - mean_d - xh[c] * mean_dx);
          }
        }
      });
}

}  // namespace sgr
