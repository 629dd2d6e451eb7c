// SPDX-License-Identifier: Apache-2.0
/**
 * @file   encoder.hpp
 * @brief  Character encoder: embedding lookup followed by one bidirectional
 *         GRU layer, with backpropagation through time.
 *
 *   z  = sigmoid(W_z x + U_z h + b_z)
 *   r  = sigmoid(W_r x + U_r h + b_r)
 *   h~ = tanh(W_h x + U_h (r * h) + b_h)
 *   h' = (1 - z) * h + z * h~
 *
 * Row i of the output is [fwd_i ; bwd_i]; the global sentence feature is the
 * last row, or [fwd_n ; bwd_1] under GlobalFeature::FwdLastBwdFirst.
 */
#pragma once

#include <array>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "slkner/error.hpp"
#include "slkner/tensor.hpp"

namespace slkner {

enum class Gate : std::size_t { Update = 0, Reset = 1, Candidate = 2 };
inline constexpr std::array<const char*, 3> kGateNames = {"z", "r", "h"};

template <typename Real>
struct GruWeights {
  std::array<const Tensor<Real>*, 3> W{};  // d_h x d_in
  std::array<const Tensor<Real>*, 3> U{};  // d_h x d_h
  std::array<const Tensor<Real>*, 3> b{};  // d_h

  std::size_t hidden() const { return b[0]->size(); }
  std::size_t input() const { return W[0]->cols(); }

  void validate() const {
    const std::size_t dh = hidden(), din = input();
    for (std::size_t g = 0; g < 3; ++g) {
      if (W[g]->shape() != Shape{dh, din} || U[g]->shape() != Shape{dh, dh} ||
          b[g]->shape() != Shape{dh})
        throw ShapeError(std::string("GRU gate ") + kGateNames[g] + " has shapes W " +
                         shape_str(W[g]->shape()) + ", U " + shape_str(U[g]->shape()) +
                         ", b " + shape_str(b[g]->shape()));
    }
  }
};

template <typename Real>
struct GruGrads {
  std::array<Tensor<Real>*, 3> W{};
  std::array<Tensor<Real>*, 3> U{};
  std::array<Tensor<Real>*, 3> b{};
};

inline std::string gru_param_name(const std::string& prefix, char kind, std::size_t gate) {
  return prefix + "." + kind + "_" + kGateNames[gate];
}

template <typename Real, typename Rng>
void add_gru_params(ParamStore<Real>& store, const std::string& prefix,
                    std::size_t d_in, std::size_t d_h, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_h));
  std::uniform_real_distribution<double> dist(-bound, bound);
  auto init = [&](Shape s) {
    Tensor<Real> t(std::move(s));
    for (auto& v : t.data()) v = static_cast<Real>(dist(rng));
    return t;
  };
  for (std::size_t g = 0; g < 3; ++g) {
    store.add(gru_param_name(prefix, 'W', g), init({d_h, d_in}));
    store.add(gru_param_name(prefix, 'U', g), init({d_h, d_h}));
    store.add(gru_param_name(prefix, 'b', g), init({d_h}));
  }
}

template <typename Real>
GruWeights<Real> gru_weights(const ParamStore<Real>& store, const std::string& prefix) {
  GruWeights<Real> w;
  for (std::size_t g = 0; g < 3; ++g) {
    w.W[g] = &store[gru_param_name(prefix, 'W', g)].value;
    w.U[g] = &store[gru_param_name(prefix, 'U', g)].value;
    w.b[g] = &store[gru_param_name(prefix, 'b', g)].value;
  }
  w.validate();
  return w;
}

template <typename Real>
GruGrads<Real> gru_grads(const ParamStore<Real>& store, Gradients<Real>& grads,
                         const std::string& prefix) {
  GruGrads<Real> d;
  for (std::size_t g = 0; g < 3; ++g) {
    d.W[g] = &grads[store.index(gru_param_name(prefix, 'W', g))];
    d.U[g] = &grads[store.index(gru_param_name(prefix, 'U', g))];
    d.b[g] = &grads[store.index(gru_param_name(prefix, 'b', g))];
  }
  return d;
}

/// Activations kept from one forward step.
template <typename Real>
struct GruStep {
  std::vector<Real> x, h_prev, z, r, cand, h;
};

template <typename Real>
GruStep<Real> gru_step(std::span<const Real> x, std::span<const Real> h_prev,
                       const GruWeights<Real>& w) {
  const std::size_t dh = w.hidden();
  if (x.size() != w.input() || h_prev.size() != dh)
    throw ShapeError("gru_step: x has " + std::to_string(x.size()) + " (expected " +
                     std::to_string(w.input()) + "), h has " + std::to_string(h_prev.size()) +
                     " (expected " + std::to_string(dh) + ")");
  GruStep<Real> s;
  s.x.assign(x.begin(), x.end());
  s.h_prev.assign(h_prev.begin(), h_prev.end());

  auto gate = [&](std::size_t g, std::span<const Real> hin) {
    std::vector<Real> a(w.b[g]->storage());
    kernel::gemv_acc<Real>(w.W[g]->data(), x, a);
    kernel::gemv_acc<Real>(w.U[g]->data(), hin, a);
    return a;
  };
  s.z = gate(0, h_prev);
  for (auto& v : s.z) v = kernel::sigmoid(v);
  s.r = gate(1, h_prev);
  for (auto& v : s.r) v = kernel::sigmoid(v);
  std::vector<Real> rh(dh);
  for (std::size_t k = 0; k < dh; ++k) rh[k] = s.r[k] * h_prev[k];
  s.cand = gate(2, rh);
  for (auto& v : s.cand) v = std::tanh(v);
  s.h.resize(dh);
  for (std::size_t k = 0; k < dh; ++k)
    s.h[k] = (Real(1) - s.z[k]) * h_prev[k] + s.z[k] * s.cand[k];
  check_finite<Real>(s.h, "gru_step");
  return s;
}

/// Given dL/dh for one step, accumulates weight gradients and adds the
/// contributions to dx and dh_prev.
template <typename Real>
void gru_step_backward(const GruStep<Real>& s, const GruWeights<Real>& w,
                       std::span<const Real> dh, GruGrads<Real>& grads,
                       std::span<Real> dx, std::span<Real> dh_prev) {
  const std::size_t dh_n = w.hidden();
  std::vector<Real> da_z(dh_n), da_r(dh_n), da_h(dh_n), rh(dh_n), drh(dh_n, Real(0));
  for (std::size_t k = 0; k < dh_n; ++k) {
    const Real dz = dh[k] * (s.cand[k] - s.h_prev[k]);
    const Real dcand = dh[k] * s.z[k];
    dh_prev[k] += dh[k] * (Real(1) - s.z[k]);
    da_h[k] = dcand * (Real(1) - s.cand[k] * s.cand[k]);
    da_z[k] = dz * s.z[k] * (Real(1) - s.z[k]);
    rh[k] = s.r[k] * s.h_prev[k];
  }
  // candidate gate
  kernel::outer_acc<Real>(grads.W[2]->data(), da_h, s.x);
  kernel::outer_acc<Real>(grads.U[2]->data(), da_h, rh);
  kernel::axpy<Real>(Real(1), da_h, grads.b[2]->data());
  kernel::gemv_t_acc<Real>(w.W[2]->data(), da_h, dx);
  kernel::gemv_t_acc<Real>(w.U[2]->data(), da_h, drh);
  for (std::size_t k = 0; k < dh_n; ++k) {
    const Real dr = drh[k] * s.h_prev[k];
    dh_prev[k] += drh[k] * s.r[k];
    da_r[k] = dr * s.r[k] * (Real(1) - s.r[k]);
  }
  for (std::size_t g : {std::size_t{0}, std::size_t{1}}) {
    const auto& da = g == 0 ? da_z : da_r;
    kernel::outer_acc<Real>(grads.W[g]->data(), da, s.x);
    kernel::outer_acc<Real>(grads.U[g]->data(), da, s.h_prev);
    kernel::axpy<Real>(Real(1), da, grads.b[g]->data());
    kernel::gemv_t_acc<Real>(w.W[g]->data(), da, dx);
    kernel::gemv_t_acc<Real>(w.U[g]->data(), da, dh_prev);
  }
}

enum class GlobalFeature { Last, FwdLastBwdFirst };

inline std::string to_string(GlobalFeature g) {
  return g == GlobalFeature::Last ? "last" : "fwd_last_bwd_first";
}

inline GlobalFeature parse_global_feature(std::string_view s) {
  if (s == "last") return GlobalFeature::Last;
  if (s == "fwd_last_bwd_first") return GlobalFeature::FwdLastBwdFirst;
  throw ConfigError("unknown global_feature '" + std::string(s) +
                    "' (expected last or fwd_last_bwd_first)");
}

template <typename Real>
struct Encoding {
  Tensor<Real> H;  // n x 2d_h
  Tensor<Real> g;  // 2d_h
  std::vector<GruStep<Real>> fwd;  // fwd[i] produced position i
  std::vector<GruStep<Real>> bwd;  // bwd[i] produced position i
  GlobalFeature feature = GlobalFeature::Last;
};

/// Runs both directions over the rows of `xs` (n x d_c) from zero states.
template <typename Real>
Encoding<Real> encode_chars(const Tensor<Real>& xs, const GruWeights<Real>& fwd,
                            const GruWeights<Real>& bwd,
                            GlobalFeature feature = GlobalFeature::Last) {
  if (xs.rank() != 2 || xs.rows() == 0)
    throw ShapeError("encode_chars: expected n x d_c input, got " + shape_str(xs.shape()));
  const std::size_t n = xs.rows(), dh = fwd.hidden();
  if (bwd.hidden() != dh) throw ShapeError("encode_chars: direction sizes differ");
  Encoding<Real> e;
  e.feature = feature;
  e.H = Tensor<Real>({n, 2 * dh});
  e.fwd.reserve(n);
  std::vector<Real> zero(dh, Real(0));
  for (std::size_t i = 0; i < n; ++i) {
    std::span<const Real> prev = i == 0 ? std::span<const Real>(zero)
                                        : std::span<const Real>(e.fwd.back().h);
    e.fwd.push_back(gru_step<Real>(xs.row(i), prev, fwd));
    std::copy(e.fwd.back().h.begin(), e.fwd.back().h.end(), e.H.row(i).begin());
  }
  e.bwd.resize(n);
  for (std::size_t k = n; k-- > 0;) {
    std::span<const Real> prev = k + 1 == n ? std::span<const Real>(zero)
                                            : std::span<const Real>(e.bwd[k + 1].h);
    e.bwd[k] = gru_step<Real>(xs.row(k), prev, bwd);
    std::copy(e.bwd[k].h.begin(), e.bwd[k].h.end(), e.H.row(k).begin() + static_cast<std::ptrdiff_t>(dh));
  }
  e.g = Tensor<Real>({2 * dh});
  auto last = e.H.row(n - 1);
  std::copy(last.begin(), last.begin() + static_cast<std::ptrdiff_t>(dh), e.g.data().begin());
  auto src = feature == GlobalFeature::Last ? last : e.H.row(0);
  std::copy(src.begin() + static_cast<std::ptrdiff_t>(dh), src.end(),
            e.g.data().begin() + static_cast<std::ptrdiff_t>(dh));
  return e;
}

/// Backpropagates dL/dH (n x 2d_h) and dL/dg into the GRU weights and
/// returns dL/dxs (n x d_c).
template <typename Real>
Tensor<Real> encode_backward(const Encoding<Real>& e, const GruWeights<Real>& fwd,
                             const GruWeights<Real>& bwd, const Tensor<Real>& dH,
                             std::span<const Real> dg, GruGrads<Real>& dfwd,
                             GruGrads<Real>& dbwd) {
  const std::size_t n = e.H.rows(), dh = fwd.hidden(), dc = fwd.input();
  Tensor<Real> dHt = dH;
  for (std::size_t k = 0; k < dh; ++k) dHt.at(n - 1, k) += dg[k];
  const std::size_t brow = e.feature == GlobalFeature::Last ? n - 1 : 0;
  for (std::size_t k = 0; k < dh; ++k) dHt.at(brow, dh + k) += dg[dh + k];

  Tensor<Real> dxs({n, dc});
  std::vector<Real> carry(dh, Real(0)), next(dh);
  for (std::size_t i = n; i-- > 0;) {
    std::vector<Real> dstate(dh);
    for (std::size_t k = 0; k < dh; ++k) dstate[k] = dHt.at(i, k) + carry[k];
    std::fill(next.begin(), next.end(), Real(0));
    gru_step_backward<Real>(e.fwd[i], fwd, dstate, dfwd, dxs.row(i), next);
    carry.swap(next);
  }
  std::fill(carry.begin(), carry.end(), Real(0));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<Real> dstate(dh);
    for (std::size_t k = 0; k < dh; ++k) dstate[k] = dHt.at(i, dh + k) + carry[k];
    std::fill(next.begin(), next.end(), Real(0));
    gru_step_backward<Real>(e.bwd[i], bwd, dstate, dbwd, dxs.row(i), next);
    carry.swap(next);
  }
  return dxs;
}

/// Gathers embedding rows for each id into an n x d matrix.
template <typename Real>
Tensor<Real> lookup_rows(const Tensor<Real>& table, std::span<const std::size_t> ids) {
  if (ids.empty()) throw ShapeError("lookup_rows: empty id list");
  Tensor<Real> out({ids.size(), table.cols()});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= table.rows())
      throw VocabError("embedding row " + std::to_string(ids[i]) + " out of range (" +
                       std::to_string(table.rows()) + " rows)");
    auto src = table.row(ids[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

template <typename Real>
void scatter_rows(Tensor<Real>& dtable, std::span<const std::size_t> ids,
                  const Tensor<Real>& drows) {
  for (std::size_t i = 0; i < ids.size(); ++i)
    kernel::axpy<Real>(Real(1), drows.row(i), dtable.row(ids[i]));
}

}  // namespace slkner
