// SPDX-License-Identifier: Apache-2.0
/**
 * @file   tensor.hpp
 * @brief  Dense row-major tensors, the handful of differentiable operations
 *         the tagger needs (each with an explicit backward), a named
 *         parameter store with Adam moment buffers, and a central-difference
 *         gradient checker.
 *
 * Backward functions accumulate (+=) into the gradient tensors they are
 * given, so several uses of one parameter sum naturally.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "slkner/error.hpp"

namespace slkner {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

template <typename Real = double>
class Tensor {
 public:
  using value_type = Real;

  Tensor() = default;

  explicit Tensor(Shape shape, Real fill = Real(0)) : shape_(std::move(shape)) {
    for (auto e : shape_)
      if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape_));
    data_.assign(count(shape_), fill);
  }

  Tensor(Shape shape, std::vector<Real> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_))
      throw ShapeError("data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
  }

  static Tensor vec(std::initializer_list<Real> v) {
    return Tensor({v.size()}, std::vector<Real>(v));
  }

  static Tensor mat(std::size_t rows, std::size_t cols, std::initializer_list<Real> v) {
    return Tensor({rows, cols}, std::vector<Real>(v));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t rows() const noexcept { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const noexcept { return shape_.size() < 2 ? 1 : shape_[1]; }

  std::span<Real> data() noexcept { return data_; }
  std::span<const Real> data() const noexcept { return data_; }
  std::vector<Real>& storage() noexcept { return data_; }
  const std::vector<Real>& storage() const noexcept { return data_; }

  Real& operator[](std::size_t i) { return data_[i]; }
  const Real& operator[](std::size_t i) const { return data_[i]; }
  Real& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const Real& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<Real> row(std::size_t r) {
    return std::span<Real>(data_).subspan(r * cols(), cols());
  }
  std::span<const Real> row(std::size_t r) const {
    return std::span<const Real>(data_).subspan(r * cols(), cols());
  }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Tensor& o) const {
    return shape_ == o.shape_ && data_ == o.data_;
  }

 private:
  static std::size_t count(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           std::multiplies<>());
  }

  Shape shape_;
  std::vector<Real> data_;
};

template <typename Real>
void check_finite(std::span<const Real> v, const char* what) {
  for (Real x : v)
    if (!std::isfinite(x))
      throw NumericFault(std::string("non-finite value produced by ") + what);
}

template <typename Real>
void check_finite(const Tensor<Real>& t, const char* what) {
  check_finite(t.data(), what);
}

// ---------------------------------------------------------------------------
// Span kernels. W is out x in, row-major.

namespace kernel {

/// y += W x
template <typename Real>
void gemv_acc(std::span<const Real> W, std::span<const Real> x, std::span<Real> y) {
  const std::size_t in = x.size();
  for (std::size_t o = 0; o < y.size(); ++o) {
    const Real* w = W.data() + o * in;
    Real acc = 0;
    for (std::size_t k = 0; k < in; ++k) acc += w[k] * x[k];
    y[o] += acc;
  }
}

/// dx += W^T dy
template <typename Real>
void gemv_t_acc(std::span<const Real> W, std::span<const Real> dy, std::span<Real> dx) {
  const std::size_t in = dx.size();
  for (std::size_t o = 0; o < dy.size(); ++o) {
    const Real* w = W.data() + o * in;
    const Real g = dy[o];
    if (g == Real(0)) continue;
    for (std::size_t k = 0; k < in; ++k) dx[k] += w[k] * g;
  }
}

/// dW += dy x^T
template <typename Real>
void outer_acc(std::span<Real> dW, std::span<const Real> dy, std::span<const Real> x) {
  const std::size_t in = x.size();
  for (std::size_t o = 0; o < dy.size(); ++o) {
    const Real g = dy[o];
    if (g == Real(0)) continue;
    Real* w = dW.data() + o * in;
    for (std::size_t k = 0; k < in; ++k) w[k] += g * x[k];
  }
}

template <typename Real>
Real dot(std::span<const Real> a, std::span<const Real> b) {
  Real acc = 0;
  for (std::size_t k = 0; k < a.size(); ++k) acc += a[k] * b[k];
  return acc;
}

template <typename Real>
void axpy(Real a, std::span<const Real> x, std::span<Real> y) {
  for (std::size_t k = 0; k < x.size(); ++k) y[k] += a * x[k];
}

template <typename Real>
Real sigmoid(Real x) {
  // branch keeps exp() from overflowing for large |x|
  if (x >= 0) return Real(1) / (Real(1) + std::exp(-x));
  const Real e = std::exp(x);
  return e / (Real(1) + e);
}

}  // namespace kernel

// ---------------------------------------------------------------------------
// Differentiable operations on Tensor values.

/// y = W x + b
template <typename Real>
Tensor<Real> affine(const Tensor<Real>& x, const Tensor<Real>& W, const Tensor<Real>& b) {
  if (W.rank() != 2 || x.rank() != 1 || b.rank() != 1 || W.cols() != x.size() ||
      W.rows() != b.size())
    throw ShapeError("affine: W " + shape_str(W.shape()) + " incompatible with x " +
                     shape_str(x.shape()) + " and b " + shape_str(b.shape()));
  Tensor<Real> y = b;
  kernel::gemv_acc<Real>(W.data(), x.data(), y.data());
  check_finite(y, "affine");
  return y;
}

/// Accumulates dL/dx, dL/dW, dL/db for y = W x + b. Null targets are skipped.
template <typename Real>
void affine_backward(const Tensor<Real>& x, const Tensor<Real>& W, const Tensor<Real>& dy,
                     Tensor<Real>* dx, Tensor<Real>* dW, Tensor<Real>* db) {
  if (dy.size() != W.rows() || x.size() != W.cols())
    throw ShapeError("affine_backward: dy " + shape_str(dy.shape()) + " vs W " +
                     shape_str(W.shape()));
  if (dx) kernel::gemv_t_acc<Real>(W.data(), dy.data(), dx->data());
  if (dW) kernel::outer_acc<Real>(dW->data(), dy.data(), x.data());
  if (db) kernel::axpy<Real>(Real(1), dy.data(), db->data());
}

template <typename Real>
std::vector<Real> softmax(std::span<const Real> v) {
  if (v.empty()) throw ArgumentError("softmax of an empty vector");
  check_finite(v, "softmax input");
  const Real mx = *std::max_element(v.begin(), v.end());
  std::vector<Real> p(v.size());
  Real z = 0;
  for (std::size_t i = 0; i < v.size(); ++i) z += (p[i] = std::exp(v[i] - mx));
  for (auto& x : p) x /= z;
  return p;
}

template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& v) {
  return Tensor<Real>({v.size()}, softmax<Real>(v.data()));
}

/// dv_j = p_j (dp_j - sum_k p_k dp_k)
template <typename Real>
std::vector<Real> softmax_backward(std::span<const Real> p, std::span<const Real> dp) {
  const Real s = kernel::dot(p, dp);
  std::vector<Real> dv(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) dv[j] = p[j] * (dp[j] - s);
  return dv;
}

template <typename Real>
Tensor<Real> softmax_backward(const Tensor<Real>& p, const Tensor<Real>& dp) {
  return Tensor<Real>({p.size()}, softmax_backward<Real>(p.data(), dp.data()));
}

template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& x) {
  Tensor<Real> y = x;
  for (auto& v : y.data()) v = kernel::sigmoid(v);
  return y;
}

/// Backward from the forward output y.
template <typename Real>
Tensor<Real> sigmoid_backward(const Tensor<Real>& y, const Tensor<Real>& dy) {
  Tensor<Real> dx = dy;
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] *= y[i] * (Real(1) - y[i]);
  return dx;
}

template <typename Real>
Tensor<Real> tanh(const Tensor<Real>& x) {
  Tensor<Real> y = x;
  for (auto& v : y.data()) v = std::tanh(v);
  return y;
}

template <typename Real>
Tensor<Real> tanh_backward(const Tensor<Real>& y, const Tensor<Real>& dy) {
  Tensor<Real> dx = dy;
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] *= Real(1) - y[i] * y[i];
  return dx;
}

template <typename Real>
Tensor<Real> concat(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.rank() != 1 || b.rank() != 1)
    throw ShapeError("concat expects vectors, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  std::vector<Real> out(a.storage());
  out.insert(out.end(), b.storage().begin(), b.storage().end());
  const std::size_t n = out.size();
  return Tensor<Real>({n}, std::move(out));
}

template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> concat_backward(const Tensor<Real>& dy,
                                                      std::size_t first) {
  if (first == 0 || first >= dy.size())
    throw ShapeError("concat_backward: split point " + std::to_string(first) +
                     " invalid for " + shape_str(dy.shape()));
  auto d = dy.storage();
  return {Tensor<Real>({first}, std::vector<Real>(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(first))),
          Tensor<Real>({d.size() - first},
                       std::vector<Real>(d.begin() + static_cast<std::ptrdiff_t>(first), d.end()))};
}

/// Inverted dropout: survivors are scaled by 1/(1-p); the mask stores that
/// per-element factor (0 or 1/(1-p)) for the backward pass.
template <typename Real>
struct DropoutMask {
  std::vector<Real> scale;  // empty => identity

  bool identity() const noexcept { return scale.empty(); }

  void apply(std::span<Real> v) const {
    if (identity()) return;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] *= scale[i];
  }
};

inline void check_dropout_rate(double p) {
  if (!(p >= 0.0 && p < 1.0))
    throw ArgumentError("dropout rate must lie in [0, 1), got " + std::to_string(p));
}

template <typename Real, typename Rng>
DropoutMask<Real> make_dropout_mask(std::size_t n, double p, bool train, Rng& rng) {
  check_dropout_rate(p);
  DropoutMask<Real> m;
  if (!train || p == 0.0) return m;
  std::bernoulli_distribution keep(1.0 - p);
  const Real s = static_cast<Real>(1.0 / (1.0 - p));
  m.scale.resize(n);
  for (auto& v : m.scale) v = keep(rng) ? s : Real(0);
  return m;
}

template <typename Real, typename Rng>
std::pair<Tensor<Real>, DropoutMask<Real>> dropout(const Tensor<Real>& x, double p,
                                                   bool train, Rng& rng) {
  auto mask = make_dropout_mask<Real>(x.size(), p, train, rng);
  Tensor<Real> y = x;
  mask.apply(y.data());
  return {std::move(y), std::move(mask)};
}

template <typename Real>
Tensor<Real> dropout_backward(const DropoutMask<Real>& mask, const Tensor<Real>& dy) {
  Tensor<Real> dx = dy;
  mask.apply(dx.data());
  return dx;
}

// ---------------------------------------------------------------------------
// Parameters

template <typename Real>
struct Param {
  std::string name;
  Tensor<Real> value;
  Tensor<Real> grad;
  Tensor<Real> m;
  Tensor<Real> v;
  std::vector<unsigned char> fixed;  // per-element; empty => none fixed
  bool trainable = true;

  bool is_fixed(std::size_t i) const { return !fixed.empty() && fixed[i]; }
};

template <typename Real>
using Gradients = std::vector<Tensor<Real>>;

template <typename Real = double>
class ParamStore {
 public:
  Param<Real>& add(const std::string& name, Tensor<Real> value) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    Param<Real> p;
    p.name = name;
    p.grad = Tensor<Real>(value.shape());
    p.m = Tensor<Real>(value.shape());
    p.v = Tensor<Real>(value.shape());
    p.value = std::move(value);
    index_.emplace(name, params_.size());
    params_.push_back(std::move(p));
    return params_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }

  Param<Real>& operator[](const std::string& name) { return params_[index(name)]; }
  const Param<Real>& operator[](const std::string& name) const { return params_[index(name)]; }
  Param<Real>& at(std::size_t i) { return params_.at(i); }
  const Param<Real>& at(std::size_t i) const { return params_.at(i); }

  std::size_t size() const noexcept { return params_.size(); }
  auto begin() noexcept { return params_.begin(); }
  auto end() noexcept { return params_.end(); }
  auto begin() const noexcept { return params_.begin(); }
  auto end() const noexcept { return params_.end(); }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(Real(0));
  }

  /// Zeroed gradient buffers aligned with the parameter order.
  Gradients<Real> make_gradients() const {
    Gradients<Real> g;
    g.reserve(params_.size());
    for (const auto& p : params_) g.emplace_back(p.value.shape());
    return g;
  }

  void accumulate(const Gradients<Real>& g) {
    for (std::size_t i = 0; i < params_.size(); ++i)
      kernel::axpy<Real>(Real(1), g[i].data(), params_[i].grad.data());
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

 private:
  std::vector<Param<Real>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Finite-difference gradient checking

struct GradCheckOptions {
  double eps = 1e-5;
  std::size_t max_per_param = 0;  // 0 checks every component
  double floor = 1e-6;            // denominator floor for near-zero gradients
  std::uint64_t seed = 7;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares the analytic gradient written by `grad(g)` against central
/// differences of `loss()` for every (or a sampled subset of) component.
/// Fixed elements are skipped.
template <typename Real, typename LossFn, typename GradFn>
GradCheckResult grad_check(ParamStore<Real>& params, LossFn&& loss, GradFn&& grad,
                           const GradCheckOptions& opts = {}) {
  Gradients<Real> analytic = params.make_gradients();
  grad(analytic);
  const double base = static_cast<double>(loss());
  if (!std::isfinite(base)) throw NumericFault("grad_check: loss is not finite");

  std::mt19937_64 rng(opts.seed);
  GradCheckResult res;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params.at(pi);
    if (!p.trainable) continue;
    std::vector<std::size_t> idx(p.value.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (opts.max_per_param && idx.size() > opts.max_per_param) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opts.max_per_param);
    }
    for (std::size_t i : idx) {
      if (p.is_fixed(i)) continue;
      const Real saved = p.value[i];
      p.value[i] = static_cast<Real>(saved + opts.eps);
      const double up = static_cast<double>(loss());
      p.value[i] = static_cast<Real>(saved - opts.eps);
      const double down = static_cast<double>(loss());
      p.value[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericFault("grad_check: loss is not finite near " + p.name);
      const double numeric = (up - down) / (2.0 * opts.eps);
      const double err = relative_error(static_cast<double>(analytic[pi][i]), numeric,
                                        opts.floor);
      ++res.checked;
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_param = p.name;
        res.worst_index = i;
      }
    }
  }
  return res;
}

}  // namespace slkner
