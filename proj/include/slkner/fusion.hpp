// SPDX-License-Identifier: Apache-2.0
/**
 * @file   fusion.hpp
 * @brief  Fuses the lexicon words attached to one character into a single
 *         word-space vector h_sw, then forms r = [h_sw ; h_c].
 *
 * GlobalAttention:  u_j = W_u x_j + b_u,  a = softmax_j(u_j . g),
 *                   h_sw = sum_j a_j x_j   (raw embeddings, not u_j)
 * SelfAttention:    score_j = sum_k u_j . u_k, otherwise as above
 * ShortestFirst / LongestFirst: the selected word's embedding
 * Average:          unweighted mean of x_j
 * An empty word set yields the zero vector under every strategy.
 */
#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "slkner/error.hpp"
#include "slkner/lexicon.hpp"
#include "slkner/tensor.hpp"

namespace slkner {

enum class FusionStrategy { GlobalAttention, SelfAttention, ShortestFirst, LongestFirst, Average };

inline std::string to_string(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::GlobalAttention: return "global_attention";
    case FusionStrategy::SelfAttention: return "self_attention";
    case FusionStrategy::ShortestFirst: return "shortest_first";
    case FusionStrategy::LongestFirst: return "longest_first";
    case FusionStrategy::Average: return "average";
  }
  return "?";
}

inline FusionStrategy parse_fusion_strategy(std::string_view s) {
  for (auto f : {FusionStrategy::GlobalAttention, FusionStrategy::SelfAttention,
                 FusionStrategy::ShortestFirst, FusionStrategy::LongestFirst,
                 FusionStrategy::Average})
    if (s == to_string(f)) return f;
  throw ConfigError("unknown fusion_strategy '" + std::string(s) +
                    "' (expected global_attention, self_attention, shortest_first, "
                    "longest_first or average)");
}

struct WordRef {
  WordId index;
  std::u32string_view text;
};

inline std::vector<WordRef> word_refs(const Lexicon& lex, std::span<const WordId> ids) {
  std::vector<WordRef> out;
  out.reserve(ids.size());
  for (WordId w : ids) out.push_back({w, lex.word(w)});
  return out;
}

template <typename Real>
struct FusionParamsView {
  const Tensor<Real>* W_u = nullptr;  // 2d_h x d_w
  const Tensor<Real>* b_u = nullptr;  // 2d_h
};

template <typename Real>
struct FusionGrads {
  Tensor<Real>* word_emb = nullptr;
  Tensor<Real>* W_u = nullptr;
  Tensor<Real>* b_u = nullptr;
};

template <typename Real>
struct FusedPosition {
  std::vector<Real> h;                // d_w
  std::vector<Real> alpha;            // one weight per word
  std::vector<std::vector<Real>> u;   // projected words (attention strategies)
  std::vector<Real> u_sum;            // sum_k u_k (self attention)
};

namespace detail {

inline std::size_t select_word(std::span<const WordRef> words, bool longest) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < words.size(); ++j) {
    const auto& a = words[j];
    const auto& b = words[best];
    if (a.text.size() != b.text.size()) {
      if (longest ? a.text.size() > b.text.size() : a.text.size() < b.text.size()) best = j;
    } else if (a.text < b.text) {
      best = j;
    }
  }
  return best;
}

}  // namespace detail

template <typename Real>
FusedPosition<Real> fuse_position(std::span<const WordRef> words, const Tensor<Real>& word_emb,
                                  std::span<const Real> g, FusionParamsView<Real> params,
                                  FusionStrategy strategy) {
  const std::size_t dw = word_emb.cols();
  FusedPosition<Real> out;
  out.h.assign(dw, Real(0));
  const std::size_t m = words.size();
  if (m == 0) return out;
  for (const auto& w : words)
    if (w.index >= word_emb.rows())
      throw VocabError("word id " + std::to_string(w.index) + " has no embedding row");

  switch (strategy) {
    case FusionStrategy::ShortestFirst:
    case FusionStrategy::LongestFirst: {
      out.alpha.assign(m, Real(0));
      out.alpha[detail::select_word(words, strategy == FusionStrategy::LongestFirst)] = Real(1);
      break;
    }
    case FusionStrategy::Average:
      out.alpha.assign(m, Real(1) / static_cast<Real>(m));
      break;
    case FusionStrategy::GlobalAttention:
    case FusionStrategy::SelfAttention: {
      const auto& W = *params.W_u;
      const auto& b = *params.b_u;
      if (W.rank() != 2 || W.cols() != dw || W.rows() != b.size() || b.size() != g.size())
        throw ShapeError("fusion: W_u " + shape_str(W.shape()) + ", b_u " +
                         shape_str(b.shape()) + " incompatible with d_w=" +
                         std::to_string(dw) + " and |g|=" + std::to_string(g.size()));
      out.u.resize(m);
      for (std::size_t j = 0; j < m; ++j) {
        out.u[j] = b.storage();
        kernel::gemv_acc<Real>(W.data(), word_emb.row(words[j].index), out.u[j]);
      }
      std::vector<Real> scores(m);
      if (strategy == FusionStrategy::GlobalAttention) {
        for (std::size_t j = 0; j < m; ++j) scores[j] = kernel::dot<Real>(out.u[j], g);
      } else {
        out.u_sum.assign(g.size(), Real(0));
        for (const auto& u : out.u) kernel::axpy<Real>(Real(1), u, out.u_sum);
        for (std::size_t j = 0; j < m; ++j) scores[j] = kernel::dot<Real>(out.u[j], out.u_sum);
      }
      out.alpha = softmax<Real>(scores);
      break;
    }
  }
  for (std::size_t j = 0; j < m; ++j)
    if (out.alpha[j] != Real(0))
      kernel::axpy<Real>(out.alpha[j], word_emb.row(words[j].index), out.h);
  check_finite<Real>(out.h, "fuse_position");
  return out;
}

/// Accumulates gradients of dL/dh_sw into the word embeddings, W_u, b_u and
/// dg. Selection strategies only touch the selected word's row.
template <typename Real>
void fuse_position_backward(std::span<const WordRef> words, const Tensor<Real>& word_emb,
                            std::span<const Real> g, FusionParamsView<Real> params,
                            FusionStrategy strategy, const FusedPosition<Real>& fwd,
                            std::span<const Real> dh, FusionGrads<Real>& grads,
                            std::span<Real> dg) {
  const std::size_t m = words.size();
  if (m == 0) return;
  if (grads.word_emb)
    for (std::size_t j = 0; j < m; ++j)
      if (fwd.alpha[j] != Real(0))
        kernel::axpy<Real>(fwd.alpha[j], dh, grads.word_emb->row(words[j].index));
  if (strategy != FusionStrategy::GlobalAttention && strategy != FusionStrategy::SelfAttention)
    return;

  std::vector<Real> dalpha(m);
  for (std::size_t j = 0; j < m; ++j)
    dalpha[j] = kernel::dot<Real>(dh, word_emb.row(words[j].index));
  const auto dscore = softmax_backward<Real>(fwd.alpha, dalpha);

  const std::size_t du_n = g.size();
  std::vector<std::vector<Real>> du(m, std::vector<Real>(du_n, Real(0)));
  if (strategy == FusionStrategy::GlobalAttention) {
    for (std::size_t j = 0; j < m; ++j) {
      kernel::axpy<Real>(dscore[j], g, du[j]);
      kernel::axpy<Real>(dscore[j], fwd.u[j], dg);
    }
  } else {
    // score_j = u_j . S with S = sum_k u_k
    std::vector<Real> dS(du_n, Real(0));
    for (std::size_t j = 0; j < m; ++j) {
      kernel::axpy<Real>(dscore[j], fwd.u_sum, du[j]);
      kernel::axpy<Real>(dscore[j], fwd.u[j], dS);
    }
    for (std::size_t j = 0; j < m; ++j) kernel::axpy<Real>(Real(1), dS, du[j]);
  }
  for (std::size_t j = 0; j < m; ++j) {
    const auto x = word_emb.row(words[j].index);
    if (grads.W_u) kernel::outer_acc<Real>(grads.W_u->data(), du[j], x);
    if (grads.b_u) kernel::axpy<Real>(Real(1), du[j], grads.b_u->data());
    if (grads.word_emb)
      kernel::gemv_t_acc<Real>(params.W_u->data(), du[j], grads.word_emb->row(words[j].index));
  }
}

/// r = [h_sw ; h_c]
template <typename Real>
std::vector<Real> final_repr(std::span<const Real> h_sw, std::span<const Real> h_c) {
  std::vector<Real> r(h_sw.begin(), h_sw.end());
  r.insert(r.end(), h_c.begin(), h_c.end());
  return r;
}

}  // namespace slkner
