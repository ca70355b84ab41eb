#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "eslab/common.hpp"

namespace eslab {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    if (d <= 0) throw std::invalid_argument("tensor extents must be positive");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string r = "[";
  for (size_t i = 0; i < s.size(); ++i) r += (i ? "," : "") + std::to_string(s[i]);
  return r + "]";
}

namespace detail {
struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated lazily; same length as data once used
  bool requires_grad = false;

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};
}  // namespace detail

/// Dense n-dimensional double tensor, row-major. Value-semantic handle:
/// copies share the underlying buffer, matching how parameters are passed
/// to optimizers and recorded on tapes.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
      throw std::invalid_argument("data length does not match shape " + shape_str(shape));
    node_ = std::make_shared<detail::TensorNode>();
    node_->shape = std::move(shape);
    node_->data = std::move(data);
  }

  static Tensor zeros(Shape shape) {
    int64_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
  }
  static Tensor full(Shape shape, double v) {
    int64_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0) {
    int64_t n = shape_numel(shape);
    std::vector<double> d(n);
    for (auto& x : d) x = rng.normal(0.0, stddev);
    return Tensor(std::move(shape), std::move(d));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return node_->numel(); }
  int64_t dim(size_t i) const { return node_->shape.at(i); }
  size_t rank() const { return node_->shape.size(); }

  std::vector<double>& data() { return node_->data; }
  const std::vector<double>& data() const { return node_->data; }
  double item() const {
    if (numel() != 1) throw std::logic_error("item() requires a scalar tensor");
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    node_->requires_grad = b;
    return *this;
  }
  /// Gradient buffer; allocated (zero) on first access.
  std::vector<double>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  /// Deep copy of values (fresh buffer, no grad, no tape history).
  Tensor clone() const { return Tensor(node_->shape, node_->data); }

  std::shared_ptr<detail::TensorNode> node() const { return node_; }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

/// Records primitive ops in execution order (a valid topological order);
/// backward replays entries once, in reverse.
class Tape {
 public:
  struct Entry {
    std::shared_ptr<detail::TensorNode> out;
    std::function<void()> backward;
  };

  void record(std::shared_ptr<detail::TensorNode> out, std::function<void()> backward) {
    entries_.push_back({std::move(out), std::move(backward)});
  }
  size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  /// Reverse-mode sweep from a scalar loss. Gradients accumulate additively
  /// into every tensor that requires grad; they are not zeroed here.
  void backward(Tensor loss) {
    if (loss.numel() != 1) throw std::logic_error("backward requires a scalar loss");
    loss.grad()[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward();
  }

 private:
  std::vector<Entry> entries_;
};

namespace detail {
inline thread_local Tape* g_active_tape = nullptr;
}

/// Activates a tape for the current thread; ops touching a tensor with
/// requires_grad record themselves while a scope is alive.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : prev_(detail::g_active_tape) {
    detail::g_active_tape = &tape;
  }
  ~TapeScope() { detail::g_active_tape = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

inline Tape* active_tape() { return detail::g_active_tape; }

inline void backward(Tensor loss) {
  if (!active_tape()) throw std::logic_error("backward called with no active tape");
  active_tape()->backward(std::move(loss));
}

// ---------------------------------------------------------------------------
// primitive ops
// ---------------------------------------------------------------------------

namespace detail {

inline bool track(std::initializer_list<const Tensor*> inputs) {
  if (!g_active_tape) return false;
  for (const Tensor* t : inputs)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

inline Tensor make_out(Shape shape, std::vector<double> data, bool tracked) {
  Tensor t(std::move(shape), std::move(data));
  t.set_requires_grad(tracked);
  return t;
}

}  // namespace detail

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  const int64_t r = a.dim(0), k = a.dim(1), c = b.dim(1);
  std::vector<double> out(static_cast<size_t>(r * c), 0.0);
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (int64_t i = 0; i < r; ++i)
    for (int64_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      if (av == 0.0) continue;
      for (int64_t j = 0; j < c; ++j) out[i * c + j] += av * bd[p * c + j];
    }
  bool tracked = detail::track({&a, &b});
  Tensor y = detail::make_out({r, c}, std::move(out), tracked);
  if (tracked) {
    auto an = a.node(), bn = b.node(), yn = y.node();
    active_tape()->record(yn, [an, bn, yn, r, k, c] {
      const auto& gy = yn->grad;
      if (gy.empty()) return;
      if (an->requires_grad) {
        an->ensure_grad();
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < c; ++j) {
            const double g = gy[i * c + j];
            if (g == 0.0) continue;
            for (int64_t p = 0; p < k; ++p) an->grad[i * k + p] += g * bn->data[p * c + j];
          }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (int64_t i = 0; i < r; ++i)
          for (int64_t p = 0; p < k; ++p) {
            const double av = an->data[i * k + p];
            if (av == 0.0) continue;
            for (int64_t j = 0; j < c; ++j) bn->grad[p * c + j] += av * gy[i * c + j];
          }
      }
    });
  }
  return y;
}

/// Cross-correlation with zero padding. x [n,c,h,w], kernel [o,c,kh,kw],
/// optional bias [o]. Output h' = (h + 2*padding - kh)/stride + 1.
inline Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, int stride,
                     int padding) {
  if (x.rank() != 4 || kernel.rank() != 4)
    throw std::invalid_argument("conv2d: expects x [n,c,h,w], kernel [o,c,kh,kw]");
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (padding < 0) throw std::invalid_argument("conv2d: padding must be >= 0");
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t o = kernel.dim(0), kc = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kc != c) throw std::invalid_argument("conv2d: channel mismatch");
  if (kh > h + 2 * padding || kw > w + 2 * padding)
    throw std::invalid_argument("conv2d: kernel larger than padded input");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != o))
    throw std::invalid_argument("conv2d: bias must be [o]");
  const int64_t oh = (h + 2 * padding - kh) / stride + 1;
  const int64_t ow = (w + 2 * padding - kw) / stride + 1;

  std::vector<double> out(static_cast<size_t>(n * o * oh * ow), 0.0);
  const auto& xd = x.data();
  const auto& kd = kernel.data();
  auto xat = [&](int64_t b, int64_t ch, int64_t i, int64_t j) {
    return xd[((b * c + ch) * h + i) * w + j];
  };
  for (int64_t b = 0; b < n; ++b)
    for (int64_t oc = 0; oc < o; ++oc)
      for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j) {
          double acc = bias.defined() ? bias.data()[oc] : 0.0;
          for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t ki = 0; ki < kh; ++ki) {
              const int64_t ii = i * stride + ki - padding;
              if (ii < 0 || ii >= h) continue;
              for (int64_t kj = 0; kj < kw; ++kj) {
                const int64_t jj = j * stride + kj - padding;
                if (jj < 0 || jj >= w) continue;
                acc += xat(b, ch, ii, jj) * kd[((oc * c + ch) * kh + ki) * kw + kj];
              }
            }
          out[((b * o + oc) * oh + i) * ow + j] = acc;
        }

  bool tracked = detail::track({&x, &kernel, &bias});
  Tensor y = detail::make_out({n, o, oh, ow}, std::move(out), tracked);
  if (tracked) {
    auto xn = x.node(), kn = kernel.node(), yn = y.node();
    auto bn = bias.defined() ? bias.node() : nullptr;
    active_tape()->record(yn, [=] {
      const auto& gy = yn->grad;
      if (gy.empty()) return;
      if (xn->requires_grad) xn->ensure_grad();
      if (kn->requires_grad) kn->ensure_grad();
      if (bn && bn->requires_grad) bn->ensure_grad();
      for (int64_t b = 0; b < n; ++b)
        for (int64_t oc = 0; oc < o; ++oc)
          for (int64_t i = 0; i < oh; ++i)
            for (int64_t j = 0; j < ow; ++j) {
              const double g = gy[((b * o + oc) * oh + i) * ow + j];
              if (g == 0.0) continue;
              if (bn && bn->requires_grad) bn->grad[oc] += g;
              for (int64_t ch = 0; ch < c; ++ch)
                for (int64_t ki = 0; ki < kh; ++ki) {
                  const int64_t ii = i * stride + ki - padding;
                  if (ii < 0 || ii >= h) continue;
                  for (int64_t kj = 0; kj < kw; ++kj) {
                    const int64_t jj = j * stride + kj - padding;
                    if (jj < 0 || jj >= w) continue;
                    const size_t xi = ((b * c + ch) * h + ii) * w + jj;
                    const size_t wi = ((oc * c + ch) * kh + ki) * kw + kj;
                    if (kn->requires_grad) kn->grad[wi] += g * xn->data[xi];
                    if (xn->requires_grad) xn->grad[xi] += g * kn->data[wi];
                  }
                }
            }
    });
  }
  return y;
}

inline Tensor conv2d(const Tensor& x, const Tensor& kernel, int stride, int padding) {
  return conv2d(x, kernel, Tensor(), stride, padding);
}

inline Tensor maxpool2d(const Tensor& x, int k, int stride) {
  if (x.rank() != 4) throw std::invalid_argument("maxpool2d: expects [n,c,h,w]");
  if (k < 1 || stride < 1) throw std::invalid_argument("maxpool2d: bad kernel/stride");
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (k > h || k > w) throw std::invalid_argument("maxpool2d: kernel larger than input");
  const int64_t oh = (h - k) / stride + 1;
  const int64_t ow = (w - k) / stride + 1;
  std::vector<double> out(static_cast<size_t>(n * c * oh * ow));
  std::vector<int64_t> argmax(out.size());
  const auto& xd = x.data();
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j) {
          int64_t best = -1;
          double bv = -std::numeric_limits<double>::infinity();
          for (int64_t ki = 0; ki < k; ++ki)
            for (int64_t kj = 0; kj < k; ++kj) {
              const int64_t idx = ((b * c + ch) * h + i * stride + ki) * w + j * stride + kj;
              if (xd[idx] > bv) {
                bv = xd[idx];
                best = idx;
              }
            }
          const size_t oi = ((b * c + ch) * oh + i) * ow + j;
          out[oi] = bv;
          argmax[oi] = best;
        }
  bool tracked = detail::track({&x});
  Tensor y = detail::make_out({n, c, oh, ow}, std::move(out), tracked);
  if (tracked) {
    auto xn = x.node(), yn = y.node();
    active_tape()->record(yn, [xn, yn, argmax = std::move(argmax)] {
      if (yn->grad.empty() || !xn->requires_grad) return;
      xn->ensure_grad();
      for (size_t i = 0; i < argmax.size(); ++i) xn->grad[argmax[i]] += yn->grad[i];
    });
  }
  return y;
}

namespace detail {

// Elementwise binary op with same-shape inputs.
template <typename Fwd, typename Bwd>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
  check_same_shape(a, b, name);
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.data()[i], b.data()[i]);
  bool tracked = track({&a, &b});
  Tensor y = make_out(a.shape(), std::move(out), tracked);
  if (tracked) {
    auto an = a.node(), bn = b.node(), yn = y.node();
    active_tape()->record(yn, [an, bn, yn, bwd] {
      if (yn->grad.empty()) return;
      if (an->requires_grad) an->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      for (size_t i = 0; i < yn->grad.size(); ++i) {
        const double g = yn->grad[i];
        if (g == 0.0) continue;
        auto [da, db] = bwd(an->data[i], bn->data[i], yn->data[i]);
        if (an->requires_grad) an->grad[i] += g * da;
        if (bn->requires_grad) bn->grad[i] += g * db;
      }
    });
  }
  return y;
}

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, Fwd fwd, Bwd bwd) {
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.data()[i]);
  bool tracked = track({&a});
  Tensor y = make_out(a.shape(), std::move(out), tracked);
  if (tracked) {
    auto an = a.node(), yn = y.node();
    active_tape()->record(yn, [an, yn, bwd] {
      if (yn->grad.empty() || !an->requires_grad) return;
      an->ensure_grad();
      for (size_t i = 0; i < yn->grad.size(); ++i)
        an->grad[i] += yn->grad[i] * bwd(an->data[i], yn->data[i]);
    });
  }
  return y;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return std::pair<double, double>{1.0, 1.0}; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return std::pair<double, double>{1.0, -1.0}; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double) { return std::pair<double, double>{y, x}; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double x, double y, double) {
        return std::pair<double, double>{1.0 / y, -x / (y * y)};
      });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary_op(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor tanh(const Tensor& a) {
  return detail::unary_op(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  return detail::unary_op(
      a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

inline Tensor mul_scalar(const Tensor& a, double s) {
  return detail::unary_op(
      a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

/// max(x, c); the clamped region gets zero gradient.
inline Tensor clamp_min(const Tensor& a, double c) {
  return detail::unary_op(
      a, [c](double x) { return x > c ? x : c; },
      [c](double x, double) { return x > c ? 1.0 : 0.0; });
}

/// Row-broadcast add: [n,m] + [m].
inline Tensor add_rows(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 1 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("add_rows: expects [n,m] + [m]");
  const int64_t n = a.dim(0), m = a.dim(1);
  std::vector<double> out(a.data().size());
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) out[i * m + j] = a.data()[i * m + j] + b.data()[j];
  bool tracked = detail::track({&a, &b});
  Tensor y = detail::make_out(a.shape(), std::move(out), tracked);
  if (tracked) {
    auto an = a.node(), bn = b.node(), yn = y.node();
    active_tape()->record(yn, [an, bn, yn, n, m] {
      if (yn->grad.empty()) return;
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < yn->grad.size(); ++i) an->grad[i] += yn->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < m; ++j) bn->grad[j] += yn->grad[i * m + j];
      }
    });
  }
  return y;
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw std::invalid_argument("reshape: element count mismatch");
  bool tracked = detail::track({&a});
  Tensor y = detail::make_out(std::move(shape), a.data(), tracked);
  if (tracked) {
    auto an = a.node(), yn = y.node();
    active_tape()->record(yn, [an, yn] {
      if (yn->grad.empty() || !an->requires_grad) return;
      an->ensure_grad();
      for (size_t i = 0; i < yn->grad.size(); ++i) an->grad[i] += yn->grad[i];
    });
  }
  return y;
}

/// Collapse all trailing dims: [n,...] -> [n, prod(...)].
inline Tensor flatten(const Tensor& a) {
  if (a.rank() < 1) throw std::invalid_argument("flatten: rank must be >= 1");
  int64_t n = a.dim(0);
  return reshape(a, {n, a.numel() / n});
}

inline Tensor sum(const Tensor& a) {
  double s = std::accumulate(a.data().begin(), a.data().end(), 0.0);
  bool tracked = detail::track({&a});
  Tensor y = detail::make_out({1}, {s}, tracked);
  if (tracked) {
    auto an = a.node(), yn = y.node();
    active_tape()->record(yn, [an, yn] {
      if (yn->grad.empty() || !an->requires_grad) return;
      an->ensure_grad();
      for (auto& g : an->grad) g += yn->grad[0];
    });
  }
  return y;
}

inline Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.numel());
  double s = std::accumulate(a.data().begin(), a.data().end(), 0.0) * inv;
  bool tracked = detail::track({&a});
  Tensor y = detail::make_out({1}, {s}, tracked);
  if (tracked) {
    auto an = a.node(), yn = y.node();
    active_tape()->record(yn, [an, yn, inv] {
      if (yn->grad.empty() || !an->requires_grad) return;
      an->ensure_grad();
      for (auto& g : an->grad) g += yn->grad[0] * inv;
    });
  }
  return y;
}

/// Per-row Euclidean distance between a and b, both [n,d] -> [n].
inline Tensor row_l2_distance(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "row_l2_distance");
  if (a.rank() != 2) throw std::invalid_argument("row_l2_distance: expects [n,d]");
  const int64_t n = a.dim(0), d = a.dim(1);
  std::vector<double> out(n, 0.0);
  for (int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double diff = a.data()[i * d + j] - b.data()[i * d + j];
      s += diff * diff;
    }
    out[i] = std::sqrt(s);
  }
  bool tracked = detail::track({&a, &b});
  Tensor y = detail::make_out({n}, std::move(out), tracked);
  if (tracked) {
    auto an = a.node(), bn = b.node(), yn = y.node();
    active_tape()->record(yn, [an, bn, yn, n, d] {
      if (yn->grad.empty()) return;
      if (an->requires_grad) an->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        const double g = yn->grad[i];
        if (g == 0.0) continue;
        const double dist = std::max(yn->data[i], 1e-12);
        for (int64_t j = 0; j < d; ++j) {
          const double diff = (an->data[i * d + j] - bn->data[i * d + j]) / dist;
          if (an->requires_grad) an->grad[i * d + j] += g * diff;
          if (bn->requires_grad) bn->grad[i * d + j] -= g * diff;
        }
      }
    });
  }
  return y;
}

/// Row-wise softmax of [n,K]; plain data op, never tape-recorded.
/// Rows are stabilized by max subtraction and sum to 1.
inline Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw std::invalid_argument("softmax_rows: expects [n,K]");
  const int64_t n = logits.dim(0), k = logits.dim(1);
  std::vector<double> out(logits.data().size());
  for (int64_t i = 0; i < n; ++i) {
    const double* row = logits.data().data() + i * k;
    double mx = *std::max_element(row, row + k);
    double denom = 0.0;
    for (int64_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    for (int64_t j = 0; j < k; ++j) out[i * k + j] = std::exp(row[j] - mx) / denom;
  }
  return Tensor(logits.shape(), std::move(out));
}

/// Mean over the batch of -sum_k target[k] * log softmax(logits)[k].
/// Targets must be rows on the probability simplex; they are treated as
/// constants (no gradient flows into them).
inline Tensor softmax_cross_entropy(const Tensor& logits, const Tensor& targets) {
  check_same_shape(logits, targets, "softmax_cross_entropy");
  if (logits.rank() != 2) throw std::invalid_argument("softmax_cross_entropy: expects [n,K]");
  const int64_t n = logits.dim(0), k = logits.dim(1);
  for (int64_t i = 0; i < n; ++i) {
    double row_sum = 0.0;
    for (int64_t j = 0; j < k; ++j) {
      const double t = targets.data()[i * k + j];
      if (t < 0.0)
        throw std::domain_error("softmax_cross_entropy: negative target entry");
      row_sum += t;
    }
    if (std::fabs(row_sum - 1.0) > 1e-6)
      throw std::domain_error("softmax_cross_entropy: target row does not sum to 1");
  }
  Tensor probs = softmax_rows(logits);
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double* row = logits.data().data() + i * k;
    double mx = *std::max_element(row, row + k);
    double denom = 0.0;
    for (int64_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    const double log_denom = std::log(denom) + mx;
    for (int64_t j = 0; j < k; ++j)
      loss -= targets.data()[i * k + j] * (row[j] - log_denom);
  }
  loss /= static_cast<double>(n);
  bool tracked = detail::track({&logits});
  Tensor y = detail::make_out({1}, {loss}, tracked);
  if (tracked) {
    auto ln = logits.node(), tn = targets.node(), yn = y.node();
    auto pn = probs.node();
    active_tape()->record(yn, [ln, tn, pn, yn, n, k] {
      if (yn->grad.empty() || !ln->requires_grad) return;
      ln->ensure_grad();
      const double g = yn->grad[0] / static_cast<double>(n);
      for (size_t i = 0; i < ln->data.size(); ++i)
        ln->grad[i] += g * (pn->data[i] - tn->data[i]);
    });
  }
  return y;
}

/// One-hot rows from integer class labels.
inline Tensor one_hot(const std::vector<int>& labels, int64_t k) {
  std::vector<double> d(labels.size() * static_cast<size_t>(k), 0.0);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= k)
      throw std::invalid_argument("one_hot: label out of range");
    d[i * k + labels[i]] = 1.0;
  }
  return Tensor({static_cast<int64_t>(labels.size()), k}, std::move(d));
}

inline std::vector<int> argmax_rows(const Tensor& t) {
  if (t.rank() != 2) throw std::invalid_argument("argmax_rows: expects [n,K]");
  const int64_t n = t.dim(0), k = t.dim(1);
  std::vector<int> out(n);
  for (int64_t i = 0; i < n; ++i) {
    const double* row = t.data().data() + i * k;
    out[i] = static_cast<int>(std::max_element(row, row + k) - row);  // ties: lower index
  }
  return out;
}

inline bool all_finite(const Tensor& t) {
  for (double v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace eslab
