// SPDX-License-Identifier: Apache-2.0
/**
 * @file   crf.hpp
 * @brief  Linear-chain CRF: sequence scores, forward-backward in log space,
 *         negative log-likelihood with marginal-based gradients, Viterbi.
 *
 * The transition matrix is (|Y|+2) x (|Y|+2) with two synthetic states,
 * START = |Y| and STOP = |Y|+1. Transitions into START and out of STOP hold
 * kForbidden and are never trained. Everything here runs in double.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "slkner/corpus.hpp"
#include "slkner/error.hpp"
#include "slkner/tensor.hpp"

namespace slkner {

inline constexpr double kForbidden = -1e4;

/// How the first and last tags are scored.
enum class CrfBoundary {
  StartStop,  // T[START][y1] and T[yn][STOP]
  Zero,       // no boundary scores
};

inline std::string to_string(CrfBoundary b) {
  return b == CrfBoundary::StartStop ? "start_stop" : "zero";
}

inline CrfBoundary parse_crf_boundary(std::string_view s) {
  if (s == "start_stop") return CrfBoundary::StartStop;
  if (s == "zero") return CrfBoundary::Zero;
  throw ConfigError("unknown crf_boundary '" + std::string(s) + "' (expected start_stop or zero)");
}

struct TagLattice {
  std::size_t n = 0;
  std::size_t tags = 0;
  std::vector<double> O;  // n x tags
  std::vector<double> T;  // (tags+2) x (tags+2)
  CrfBoundary boundary = CrfBoundary::StartStop;

  TagLattice() = default;
  TagLattice(std::size_t n_, std::size_t tags_, std::vector<double> O_, std::vector<double> T_,
             CrfBoundary b = CrfBoundary::StartStop)
      : n(n_), tags(tags_), O(std::move(O_)), T(std::move(T_)), boundary(b) {
    validate();
  }

  std::size_t width() const noexcept { return tags + 2; }
  std::size_t start_state() const noexcept { return tags; }
  std::size_t stop_state() const noexcept { return tags + 1; }

  double emit(std::size_t i, std::size_t k) const { return O[i * tags + k]; }
  double trans(std::size_t j, std::size_t k) const { return T[j * width() + k]; }
  double start(std::size_t k) const {
    return boundary == CrfBoundary::Zero ? 0.0 : trans(start_state(), k);
  }
  double stop(std::size_t k) const {
    return boundary == CrfBoundary::Zero ? 0.0 : trans(k, stop_state());
  }

  void validate() const {
    if (n == 0 || tags == 0) throw ShapeError("lattice needs n >= 1 and at least one tag");
    if (O.size() != n * tags)
      throw ShapeError("emission matrix has " + std::to_string(O.size()) + " entries, expected " +
                       std::to_string(n) + "x" + std::to_string(tags));
    if (T.size() != width() * width())
      throw ShapeError("transition matrix has " + std::to_string(T.size()) +
                       " entries, expected " + std::to_string(width()) + "^2");
    for (double v : O)
      if (!std::isfinite(v)) throw NumericFault("non-finite emission score");
  }

  void check_tags(std::span<const TagId> y) const {
    if (y.size() != n)
      throw SchemeError("tag sequence length " + std::to_string(y.size()) +
                        " does not match lattice length " + std::to_string(n));
    for (TagId t : y)
      if (t >= tags) throw SchemeError("tag index " + std::to_string(t) + " out of range");
  }
};

/// Transition matrix with hard-forbidden START/STOP entries and zeros elsewhere.
inline std::vector<double> initial_transitions(std::size_t tags) {
  const std::size_t w = tags + 2;
  std::vector<double> T(w * w, 0.0);
  for (std::size_t j = 0; j < w; ++j) {
    T[j * w + tags] = kForbidden;        // into START
    T[(tags + 1) * w + j] = kForbidden;  // out of STOP
  }
  return T;
}

/// Elements of T that never train.
inline std::vector<unsigned char> fixed_transitions(std::size_t tags) {
  const std::size_t w = tags + 2;
  std::vector<unsigned char> f(w * w, 0);
  for (std::size_t j = 0; j < w; ++j) {
    f[j * w + tags] = 1;
    f[(tags + 1) * w + j] = 1;
  }
  return f;
}

/// Additive penalties (kForbidden) on scheme-illegal transitions, including
/// from START and into STOP. Used for optional constrained decoding.
inline std::vector<double> illegal_transition_mask(const TagScheme& scheme) {
  const std::size_t Y = scheme.size(), w = Y + 2;
  std::vector<double> mask(w * w, 0.0);
  for (std::size_t k = 0; k < Y; ++k) {
    if (!scheme.legal(std::nullopt, k)) mask[Y * w + k] = kForbidden;
    if (!scheme.legal(k, std::nullopt)) mask[k * w + Y + 1] = kForbidden;
    for (std::size_t j = 0; j < Y; ++j)
      if (!scheme.legal(j, k)) mask[j * w + k] = kForbidden;
  }
  return mask;
}

/// Sum of emission and transition scores along `y`.
inline double score_sequence(const TagLattice& lat, std::span<const TagId> y) {
  lat.check_tags(y);
  double s = lat.start(y[0]) + lat.emit(0, y[0]);
  for (std::size_t i = 1; i < lat.n; ++i) s = s + lat.trans(y[i - 1], y[i]) + lat.emit(i, y[i]);
  return s + lat.stop(y[lat.n - 1]);
}

namespace detail {

inline double log_sum_exp(std::span<const double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  if (mx == -std::numeric_limits<double>::infinity()) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace detail

struct ForwardBackward {
  std::vector<double> alpha;  // n x tags: log-score of prefixes ending in k at i
  std::vector<double> beta;   // n x tags: log-score of suffixes after k at i
  double log_z = 0.0;
};

inline ForwardBackward forward_backward(const TagLattice& lat) {
  lat.validate();
  const std::size_t n = lat.n, Y = lat.tags;
  ForwardBackward fb;
  fb.alpha.assign(n * Y, 0.0);
  fb.beta.assign(n * Y, 0.0);
  std::vector<double> buf(Y);
  for (std::size_t k = 0; k < Y; ++k) fb.alpha[k] = lat.start(k) + lat.emit(0, k);
  for (std::size_t i = 1; i < n; ++i)
    for (std::size_t k = 0; k < Y; ++k) {
      for (std::size_t j = 0; j < Y; ++j) buf[j] = fb.alpha[(i - 1) * Y + j] + lat.trans(j, k);
      fb.alpha[i * Y + k] = detail::log_sum_exp(buf) + lat.emit(i, k);
    }
  for (std::size_t k = 0; k < Y; ++k) fb.beta[(n - 1) * Y + k] = lat.stop(k);
  for (std::size_t i = n - 1; i-- > 0;)
    for (std::size_t j = 0; j < Y; ++j) {
      for (std::size_t k = 0; k < Y; ++k)
        buf[k] = lat.trans(j, k) + lat.emit(i + 1, k) + fb.beta[(i + 1) * Y + k];
      fb.beta[i * Y + j] = detail::log_sum_exp(buf);
    }
  for (std::size_t k = 0; k < Y; ++k) buf[k] = fb.alpha[(n - 1) * Y + k] + lat.stop(k);
  fb.log_z = detail::log_sum_exp(buf);
  if (!std::isfinite(fb.log_z)) throw NumericFault("CRF log-partition is not finite");
  return fb;
}

/// log of the sum over all tag sequences of exp(score).
inline double log_partition(const TagLattice& lat) { return forward_backward(lat).log_z; }

/// Posterior p(y_i = k | s), n x tags.
inline std::vector<double> marginals(const TagLattice& lat, const ForwardBackward& fb) {
  std::vector<double> p(lat.n * lat.tags);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(fb.alpha[i] + fb.beta[i] - fb.log_z);
  return p;
}

inline std::vector<double> marginals(const TagLattice& lat) {
  return marginals(lat, forward_backward(lat));
}

struct NllResult {
  double nll = 0.0;
  std::vector<double> dO;  // n x tags
  std::vector<double> dT;  // (tags+2)^2; forbidden entries stay zero
};

/// -log p(y | s) and its gradients: expected minus observed counts.
inline NllResult nll(const TagLattice& lat, std::span<const TagId> y) {
  lat.check_tags(y);
  const auto fb = forward_backward(lat);
  const std::size_t n = lat.n, Y = lat.tags, w = lat.width();
  NllResult r;
  r.nll = fb.log_z - score_sequence(lat, y);
  // guard against -0 from rounding when one path holds all mass
  if (r.nll < 0.0 && r.nll > -1e-9) r.nll = 0.0;
  r.dO = marginals(lat, fb);
  r.dT.assign(w * w, 0.0);
  for (std::size_t i = 0; i < n; ++i) r.dO[i * Y + y[i]] -= 1.0;

  if (lat.boundary == CrfBoundary::StartStop) {
    // boundary edges carry the unigram marginals of the first/last position
    for (std::size_t k = 0; k < Y; ++k) {
      r.dT[lat.start_state() * w + k] = r.dO[k] + (y[0] == k ? 1.0 : 0.0);
      r.dT[k * w + lat.stop_state()] = r.dO[(n - 1) * Y + k] + (y[n - 1] == k ? 1.0 : 0.0);
    }
    r.dT[lat.start_state() * w + y[0]] -= 1.0;
    r.dT[y[n - 1] * w + lat.stop_state()] -= 1.0;
  }
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t j = 0; j < Y; ++j)
      for (std::size_t k = 0; k < Y; ++k)
        r.dT[j * w + k] += std::exp(fb.alpha[(i - 1) * Y + j] + lat.trans(j, k) + lat.emit(i, k) +
                                    fb.beta[i * Y + k] - fb.log_z);
    r.dT[y[i - 1] * w + y[i]] -= 1.0;
  }
  return r;
}

struct ViterbiResult {
  std::vector<TagId> path;
  double score = 0.0;
};

/// Highest-scoring tag sequence. Ties go to the lowest tag index, both for
/// the final state and at every back-pointer.
inline ViterbiResult viterbi(const TagLattice& lat) {
  lat.validate();
  const std::size_t n = lat.n, Y = lat.tags;
  std::vector<double> delta(n * Y);
  std::vector<std::size_t> back(n * Y, 0);
  for (std::size_t k = 0; k < Y; ++k) delta[k] = lat.start(k) + lat.emit(0, k);
  for (std::size_t i = 1; i < n; ++i)
    for (std::size_t k = 0; k < Y; ++k) {
      std::size_t arg = 0;
      double best = delta[(i - 1) * Y] + lat.trans(0, k);
      for (std::size_t j = 1; j < Y; ++j) {
        const double v = delta[(i - 1) * Y + j] + lat.trans(j, k);
        if (v > best) {
          best = v;
          arg = j;
        }
      }
      delta[i * Y + k] = best + lat.emit(i, k);
      back[i * Y + k] = arg;
    }
  ViterbiResult res;
  std::size_t last = 0;
  res.score = delta[(n - 1) * Y] + lat.stop(0);
  for (std::size_t k = 1; k < Y; ++k) {
    const double v = delta[(n - 1) * Y + k] + lat.stop(k);
    if (v > res.score) {
      res.score = v;
      last = k;
    }
  }
  res.path.resize(n);
  res.path[n - 1] = last;
  for (std::size_t i = n - 1; i > 0; --i) res.path[i - 1] = back[i * Y + res.path[i]];
  return res;
}

/// O_i = W_o r_i + b_o for every row of R (n x |r|).
template <typename Real>
Tensor<Real> emissions(const Tensor<Real>& R, const Tensor<Real>& W_o, const Tensor<Real>& b_o) {
  if (R.rank() != 2 || W_o.rank() != 2 || W_o.cols() != R.cols() || W_o.rows() != b_o.size())
    throw ShapeError("emissions: W_o " + shape_str(W_o.shape()) + " incompatible with R " +
                     shape_str(R.shape()) + " and b_o " + shape_str(b_o.shape()));
  Tensor<Real> O({R.rows(), W_o.rows()});
  for (std::size_t i = 0; i < R.rows(); ++i) {
    auto o = O.row(i);
    std::copy(b_o.storage().begin(), b_o.storage().end(), o.begin());
    kernel::gemv_acc<Real>(W_o.data(), R.row(i), o);
  }
  check_finite(O, "emissions");
  return O;
}

/// Accumulates dW_o, db_o and returns dR.
template <typename Real>
Tensor<Real> emissions_backward(const Tensor<Real>& R, const Tensor<Real>& W_o,
                                const Tensor<Real>& dO, Tensor<Real>* dW_o, Tensor<Real>* db_o) {
  Tensor<Real> dR(R.shape());
  for (std::size_t i = 0; i < R.rows(); ++i) {
    kernel::gemv_t_acc<Real>(W_o.data(), dO.row(i), dR.row(i));
    if (dW_o) kernel::outer_acc<Real>(dW_o->data(), dO.row(i), R.row(i));
    if (db_o) kernel::axpy<Real>(Real(1), dO.row(i), db_o->data());
  }
  return dR;
}

/// Lattice over emissions computed at any precision; CRF math stays double.
template <typename Real>
TagLattice make_lattice(const Tensor<Real>& O, const Tensor<Real>& T, CrfBoundary boundary) {
  std::vector<double> o(O.storage().begin(), O.storage().end());
  std::vector<double> t(T.storage().begin(), T.storage().end());
  return TagLattice(O.rows(), O.cols(), std::move(o), std::move(t), boundary);
}

}  // namespace slkner
