// SPDX-License-Identifier: Apache-2.0
/**
 * @file   lexicon.hpp
 * @brief  Dictionary trie and per-character lexicon match sets.
 *
 * For a sentence c_1..c_n the matcher produces, at every position i:
 *   fwd[i]  words that start at i
 *   bwd[i]  words that end at i
 *   flk[i]  fwd[i] | bwd[i]               (first-order knowledge)
 *   slk[i]  fwd[i-1] | bwd[i+1]           (second-order knowledge)
 * Out-of-range neighbours contribute nothing.
 */
#pragma once

#include <algorithm>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "slkner/error.hpp"
#include "slkner/utf8.hpp"

namespace slkner {

using WordId = std::size_t;

struct LexiconOptions {
  std::size_t min_word_len = 2;
  std::size_t max_word_len = 10;
};

class Lexicon {
 public:
  Lexicon() = default;

  const LexiconOptions& options() const noexcept { return opts_; }
  std::size_t size() const noexcept { return words_.size(); }
  bool empty() const noexcept { return words_.empty(); }
  std::size_t skipped() const noexcept { return skipped_; }

  const std::u32string& word(WordId id) const { return words_.at(id); }
  const std::vector<std::u32string>& words() const noexcept { return words_; }

  std::optional<WordId> find(std::u32string_view w) const {
    std::size_t node = 0;
    for (char32_t c : w) {
      auto it = nodes_[node].next.find(c);
      if (it == nodes_[node].next.end()) return std::nullopt;
      node = it->second;
    }
    if (nodes_[node].word == kNone) return std::nullopt;
    return nodes_[node].word;
  }

  /// Calls `visit(word_id, length)` for every stored word that is a prefix of
  /// `text`, shortest first. One trie walk, bounded by max_word_len.
  template <typename Visit>
  void walk_prefixes(std::u32string_view text, Visit&& visit) const {
    std::size_t node = 0;
    const std::size_t limit = std::min(text.size(), opts_.max_word_len);
    for (std::size_t k = 0; k < limit; ++k) {
      auto it = nodes_[node].next.find(text[k]);
      if (it == nodes_[node].next.end()) return;
      node = it->second;
      if (nodes_[node].word != kNone) visit(nodes_[node].word, k + 1);
    }
  }

  /// Stable (length, code point) ordering key for a word id.
  bool less(WordId a, WordId b) const {
    const auto& wa = words_[a];
    const auto& wb = words_[b];
    if (wa.size() != wb.size()) return wa.size() < wb.size();
    return wa < wb;
  }

  friend Lexicon build_lexicon(std::span<const std::u32string>,
                               const LexiconOptions&);

 private:
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

  struct Node {
    std::unordered_map<char32_t, std::size_t> next;
    std::size_t word = kNone;
  };

  LexiconOptions opts_;
  std::vector<Node> nodes_{Node{}};
  std::vector<std::u32string> words_;
  std::size_t skipped_ = 0;
};

/// Stores every word whose length is within [min_word_len, max_word_len].
/// Word ids follow first-occurrence order; duplicates are stored once.
inline Lexicon build_lexicon(std::span<const std::u32string> words,
                             const LexiconOptions& opts = {}) {
  if (words.empty()) throw DataError("cannot build a lexicon from an empty word list");
  if (opts.min_word_len == 0 || opts.min_word_len > opts.max_word_len)
    throw ConfigError("lexicon word length bounds must satisfy 1 <= min <= max");
  Lexicon lex;
  lex.opts_ = opts;
  for (const auto& w : words) {
    if (w.size() < opts.min_word_len || w.size() > opts.max_word_len) {
      ++lex.skipped_;
      continue;
    }
    std::size_t node = 0;
    for (char32_t c : w) {
      auto it = lex.nodes_[node].next.find(c);
      if (it == lex.nodes_[node].next.end()) {
        lex.nodes_.emplace_back();
        it = lex.nodes_[node].next.emplace(c, lex.nodes_.size() - 1).first;
      }
      node = it->second;
    }
    if (lex.nodes_[node].word == Lexicon::kNone) {
      lex.nodes_[node].word = lex.words_.size();
      lex.words_.push_back(w);
    }
  }
  return lex;
}

inline Lexicon build_lexicon(std::span<const std::string> words,
                             const LexiconOptions& opts = {}) {
  std::vector<std::u32string> decoded;
  decoded.reserve(words.size());
  for (const auto& w : words) decoded.push_back(utf8::decode(w));
  return build_lexicon(std::span<const std::u32string>(decoded), opts);
}

using WordSets = std::vector<std::vector<WordId>>;

struct MatchSets {
  WordSets fwd;
  WordSets bwd;
  WordSets flk;
  WordSets slk;

  std::size_t size() const noexcept { return fwd.size(); }
};

namespace detail {

inline std::vector<WordId> merge_sets(const Lexicon& lex,
                                      std::span<const WordId> a,
                                      std::span<const WordId> b) {
  std::vector<WordId> out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  auto cmp = [&](WordId x, WordId y) { return lex.less(x, y); };
  std::sort(out.begin(), out.end(), cmp);
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace detail

inline MatchSets match_sentence(const Lexicon& lex, std::u32string_view chars) {
  const std::size_t n = chars.size();
  MatchSets m;
  m.fwd.resize(n);
  m.bwd.resize(n);
  m.flk.resize(n);
  m.slk.resize(n);
  if (lex.empty()) return m;

  for (std::size_t i = 0; i < n; ++i) {
    lex.walk_prefixes(chars.substr(i), [&](WordId w, std::size_t len) {
      m.fwd[i].push_back(w);
      m.bwd[i + len - 1].push_back(w);
    });
  }
  auto cmp = [&](WordId x, WordId y) { return lex.less(x, y); };
  for (std::size_t i = 0; i < n; ++i) {
    // the same word can end at i from two different starts
    std::sort(m.bwd[i].begin(), m.bwd[i].end(), cmp);
    m.bwd[i].erase(std::unique(m.bwd[i].begin(), m.bwd[i].end()), m.bwd[i].end());
    std::sort(m.fwd[i].begin(), m.fwd[i].end(), cmp);
  }
  for (std::size_t i = 0; i < n; ++i) {
    m.flk[i] = detail::merge_sets(lex, m.fwd[i], m.bwd[i]);
    std::span<const WordId> left, right;
    if (i > 0) left = m.fwd[i - 1];
    if (i + 1 < n) right = m.bwd[i + 1];
    m.slk[i] = detail::merge_sets(lex, left, right);
  }
  return m;
}

enum class KnowledgeMode { SLK, FLK, Both, None };

inline std::string to_string(KnowledgeMode m) {
  switch (m) {
    case KnowledgeMode::SLK: return "SLK";
    case KnowledgeMode::FLK: return "FLK";
    case KnowledgeMode::Both: return "BOTH";
    case KnowledgeMode::None: return "NONE";
  }
  return "?";
}

inline KnowledgeMode parse_knowledge_mode(std::string_view s) {
  if (s == "SLK") return KnowledgeMode::SLK;
  if (s == "FLK") return KnowledgeMode::FLK;
  if (s == "BOTH") return KnowledgeMode::Both;
  if (s == "NONE") return KnowledgeMode::None;
  throw ConfigError("unknown knowledge_mode '" + std::string(s) +
                    "' (expected SLK, FLK, BOTH or NONE)");
}

/// The per-position word sets fed to fusion under a knowledge ablation.
inline WordSets knowledge_select(const Lexicon& lex, const MatchSets& m,
                                 KnowledgeMode mode) {
  switch (mode) {
    case KnowledgeMode::SLK: return m.slk;
    case KnowledgeMode::FLK: return m.flk;
    case KnowledgeMode::None: return WordSets(m.size());
    case KnowledgeMode::Both: {
      WordSets out(m.size());
      for (std::size_t i = 0; i < m.size(); ++i)
        out[i] = detail::merge_sets(lex, m.slk[i], m.flk[i]);
      return out;
    }
  }
  return WordSets(m.size());
}

}  // namespace slkner
