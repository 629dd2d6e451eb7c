// SPDX-License-Identifier: Apache-2.0
// Independent reference implementations used only by tests. None of them
// call into the library's algorithms; they share only plain data types.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "slkner/corpus.hpp"
#include "slkner/eval.hpp"
#include "slkner/lexicon.hpp"
#include "slkner/utf8.hpp"

namespace oracle {

using Words = std::vector<std::u32string>;

struct NaiveSets {
  std::vector<Words> fwd, bwd, flk, slk;
};

inline void normalize(Words& w) {
  std::sort(w.begin(), w.end(), [](const auto& a, const auto& b) {
    return a.size() != b.size() ? a.size() < b.size() : a < b;
  });
  w.erase(std::unique(w.begin(), w.end()), w.end());
}

inline Words join(const Words& a, const Words& b) {
  Words out = a;
  out.insert(out.end(), b.begin(), b.end());
  normalize(out);
  return out;
}

/// Tests every substring of length min_len..max_len against the word list.
inline NaiveSets match_all_substrings(const Words& dictionary, const std::u32string& s,
                                      std::size_t min_len, std::size_t max_len) {
  const std::set<std::u32string> dict(dictionary.begin(), dictionary.end());
  const std::size_t n = s.size();
  NaiveSets r;
  r.fwd.resize(n);
  r.bwd.resize(n);
  r.flk.resize(n);
  r.slk.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t len = min_len; len <= max_len && i + len <= n; ++len) {
      const auto sub = s.substr(i, len);
      if (dict.count(sub)) {
        r.fwd[i].push_back(sub);
        r.bwd[i + len - 1].push_back(sub);
      }
    }
  for (std::size_t i = 0; i < n; ++i) {
    normalize(r.fwd[i]);
    normalize(r.bwd[i]);
  }
  for (std::size_t i = 0; i < n; ++i) {
    r.flk[i] = join(r.fwd[i], r.bwd[i]);
    const Words none;
    r.slk[i] = join(i > 0 ? r.fwd[i - 1] : none, i + 1 < n ? r.bwd[i + 1] : none);
  }
  return r;
}

/// Maps library word ids back to strings, preserving order.
inline Words spell(const slkner::Lexicon& lex, const std::vector<slkner::WordId>& ids) {
  Words w;
  for (auto id : ids) w.push_back(lex.word(id));
  return w;
}

// ---------------------------------------------------------------------------
// Linear-chain CRF by exhaustive enumeration. T is (Y+2)^2 with START = Y and
// STOP = Y+1; `boundary` false means start/stop scores are zero.

struct Lattice {
  std::size_t n = 0, Y = 0;
  std::vector<double> O, T;
  bool boundary = true;

  double path_score(const std::vector<std::size_t>& y) const {
    const std::size_t w = Y + 2;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += O[i * Y + y[i]];
    for (std::size_t i = 1; i < n; ++i) s += T[y[i - 1] * w + y[i]];
    if (boundary) s += T[Y * w + y[0]] + T[y[n - 1] * w + Y + 1];
    return s;
  }
};

/// Calls fn(y) for every one of Y^n sequences, in lexicographic order.
template <typename Fn>
void for_each_sequence(std::size_t n, std::size_t Y, Fn&& fn) {
  std::vector<std::size_t> y(n, 0);
  while (true) {
    fn(y);
    std::size_t k = n;
    while (k > 0) {
      if (++y[k - 1] < Y) break;
      y[k - 1] = 0;
      --k;
    }
    if (k == 0) return;
  }
}

inline double brute_log_partition(const Lattice& L) {
  std::vector<double> scores;
  for_each_sequence(L.n, L.Y, [&](const auto& y) { scores.push_back(L.path_score(y)); });
  const double m = *std::max_element(scores.begin(), scores.end());
  double acc = 0.0;
  for (double s : scores) acc += std::exp(s - m);
  return m + std::log(acc);
}

/// p(y_i = k), n x Y.
inline std::vector<double> brute_marginals(const Lattice& L) {
  const double z = brute_log_partition(L);
  std::vector<double> p(L.n * L.Y, 0.0);
  for_each_sequence(L.n, L.Y, [&](const auto& y) {
    const double w = std::exp(L.path_score(y) - z);
    for (std::size_t i = 0; i < L.n; ++i) p[i * L.Y + y[i]] += w;
  });
  return p;
}

/// Among maximal-score sequences, the one that is smallest when compared
/// from the last position backwards. This is what back-pointer decoding
/// with lowest-index tie-breaking produces.
inline std::pair<std::vector<std::size_t>, double> brute_argmax(const Lattice& L) {
  double best = -std::numeric_limits<double>::infinity();
  std::vector<std::size_t> arg;
  auto rev_less = [](const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    return std::lexicographical_compare(a.rbegin(), a.rend(), b.rbegin(), b.rend());
  };
  for_each_sequence(L.n, L.Y, [&](const auto& y) {
    const double s = L.path_score(y);
    if (s > best || (s == best && rev_less(y, arg))) {
      best = s;
      arg = y;
    }
  });
  return {arg, best};
}

// ---------------------------------------------------------------------------
// Global-context attention, written out step by step with nested vectors.

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

struct AttentionOut {
  Vec alpha, h;
};

inline AttentionOut global_attention(const Mat& x, const Mat& W_u, const Vec& b_u, const Vec& g) {
  AttentionOut out;
  const std::size_t m = x.size();
  if (m == 0) return out;
  const std::size_t dw = x[0].size(), du = b_u.size();
  Vec score(m);
  for (std::size_t j = 0; j < m; ++j) {
    Vec u(du);
    for (std::size_t a = 0; a < du; ++a) {
      double acc = b_u[a];
      for (std::size_t b = 0; b < dw; ++b) acc += W_u[a][b] * x[j][b];
      u[a] = acc;
    }
    double s = 0.0;
    for (std::size_t a = 0; a < du; ++a) s += u[a] * g[a];
    score[j] = s;
  }
  const double mx = *std::max_element(score.begin(), score.end());
  double z = 0.0;
  out.alpha.resize(m);
  for (std::size_t j = 0; j < m; ++j) z += (out.alpha[j] = std::exp(score[j] - mx));
  for (auto& a : out.alpha) a /= z;
  out.h.assign(dw, 0.0);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t b = 0; b < dw; ++b) out.h[b] += out.alpha[j] * x[j][b];
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus: entities are lexicon words; some adjacent entity pairs
// form an extra lexicon word across their boundary (like 市长 inside
// 南京市长江大桥), so first-order matches suggest a wrong segmentation.

struct SyntheticCorpus {
  std::vector<slkner::Sentence> sentences;
  std::vector<std::string> lexicon;  // 20 words
  slkner::TagScheme scheme;
};

inline SyntheticCorpus synthetic_corpus(std::size_t count, std::uint64_t seed,
                                        slkner::SchemeKind kind = slkner::SchemeKind::BIOES) {
  struct Entity {
    const char* word;
    const char* type;
  };
  static const Entity entities[] = {
      {"南京市", "LOC"}, {"长江大桥", "LOC"}, {"北京", "LOC"}, {"上海", "LOC"},
      {"黄河", "LOC"},   {"张伟", "PER"},     {"李娜", "PER"}, {"王芳", "PER"},
      {"刘洋", "PER"},   {"华为", "ORG"},     {"腾讯", "ORG"}, {"清华大学", "ORG"},
  };
  // (left entity, right entity): last char of left + first char of right is
  // itself a lexicon word
  static const std::pair<int, int> conflicts[] = {{0, 1}, {1, 2}, {2, 3}, {3, 5},
                                                  {5, 6}, {6, 9}, {9, 10}, {4, 8}};
  static const char* fillers[] = {"的", "在", "和", "是", "了", "有"};

  SyntheticCorpus c;
  c.scheme = slkner::TagScheme(kind, {"LOC", "ORG", "PER"});
  for (const auto& e : entities) c.lexicon.push_back(e.word);
  for (const auto& [a, b] : conflicts) {
    const auto l = slkner::utf8::decode(entities[a].word);
    const auto r = slkner::utf8::decode(entities[b].word);
    c.lexicon.push_back(slkner::utf8::encode(std::u32string{l.back(), r.front()}));
  }

  std::mt19937_64 rng(seed);
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  auto coin = [&](double p) { return std::bernoulli_distribution(p)(rng); };

  for (std::size_t s = 0; s < count; ++s) {
    std::vector<int> segs;  // entity ids; -1 = filler char
    const std::size_t parts = 1 + pick(3);
    if (coin(0.5)) segs.push_back(-1);
    for (std::size_t p = 0; p < parts; ++p) {
      if (p > 0) {
        segs.push_back(-1);
        if (coin(0.3)) segs.push_back(-1);
      }
      if (coin(0.5)) {
        const auto& [a, b] = conflicts[pick(std::size(conflicts))];
        segs.push_back(a);
        segs.push_back(b);
      } else {
        segs.push_back(static_cast<int>(pick(std::size(entities))));
      }
    }
    if (coin(0.5)) segs.push_back(-1);

    slkner::Sentence sent;
    sent.id = "synthetic:" + std::to_string(s);
    std::vector<slkner::EntitySpan> spans;
    for (int e : segs) {
      if (e < 0) {
        sent.chars += slkner::utf8::decode(fillers[pick(std::size(fillers))]);
        continue;
      }
      const auto w = slkner::utf8::decode(entities[e].word);
      spans.push_back({sent.chars.size() + 1, sent.chars.size() + w.size(), entities[e].type});
      sent.chars += w;
    }
    sent.tags.assign(sent.chars.size(), slkner::TagScheme::kOutside);
    for (const auto& sp : spans) {
      const auto t = *c.scheme.type_id(sp.type);
      using slkner::Prefix;
      for (std::size_t k = sp.start - 1; k < sp.end; ++k) {
        Prefix p = Prefix::I;
        if (k == sp.start - 1) p = Prefix::B;
        if (kind == slkner::SchemeKind::BIOES && k == sp.end - 1)
          p = sp.start == sp.end ? Prefix::S : Prefix::E;
        sent.tags[k] = c.scheme.index(p, t);
      }
    }
    c.sentences.push_back(std::move(sent));
  }
  return c;
}

/// Random string over `alphabet` with length in [min_len, max_len].
inline std::u32string random_string(std::mt19937_64& rng, const std::u32string& alphabet,
                                    std::size_t min_len, std::size_t max_len) {
  std::uniform_int_distribution<std::size_t> len(min_len, max_len);
  std::uniform_int_distribution<std::size_t> ch(0, alphabet.size() - 1);
  std::u32string s(len(rng), U' ');
  for (auto& c : s) c = alphabet[ch(rng)];
  return s;
}

}  // namespace oracle
