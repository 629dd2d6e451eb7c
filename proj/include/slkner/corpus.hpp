// SPDX-License-Identifier: Apache-2.0
/**
 * @file   corpus.hpp
 * @brief  Sentence data model, tag schemes, CoNLL reader/writer and the
 *         word2vec-style text embedding loader.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "slkner/error.hpp"
#include "slkner/utf8.hpp"

namespace slkner {

using TagId = std::size_t;

enum class SchemeKind { BIO, BIOES };

enum class Prefix { O, B, I, E, S };

inline std::string to_string(SchemeKind k) {
  return k == SchemeKind::BIO ? "BIO" : "BIOES";
}

inline SchemeKind parse_scheme_kind(std::string_view s) {
  if (s == "BIO" || s == "bio") return SchemeKind::BIO;
  if (s == "BIOES" || s == "bioes") return SchemeKind::BIOES;
  throw ConfigError("unknown tag scheme '" + std::string(s) +
                    "' (expected BIO or BIOES)");
}

/// Maps (prefix, entity type) pairs onto dense tag indices. Index 0 is O;
/// each entity type owns a contiguous block of 2 (BIO) or 4 (BIOES) tags.
class TagScheme {
 public:
  static constexpr TagId kOutside = 0;
  static constexpr std::size_t kNoType = static_cast<std::size_t>(-1);

  TagScheme() = default;

  TagScheme(SchemeKind kind, std::vector<std::string> types)
      : kind_(kind), types_(std::move(types)) {
    std::set<std::string> seen;
    for (const auto& t : types_) {
      if (t.empty() || !seen.insert(t).second)
        throw SchemeError("entity type list has an empty or duplicate name '" +
                          t + "'");
    }
  }

  SchemeKind kind() const noexcept { return kind_; }
  const std::vector<std::string>& types() const noexcept { return types_; }
  std::size_t block() const noexcept { return kind_ == SchemeKind::BIO ? 2 : 4; }
  std::size_t size() const noexcept { return 1 + block() * types_.size(); }

  std::vector<Prefix> prefixes() const {
    if (kind_ == SchemeKind::BIO) return {Prefix::B, Prefix::I};
    return {Prefix::B, Prefix::I, Prefix::E, Prefix::S};
  }

  std::optional<std::size_t> type_id(std::string_view type) const {
    for (std::size_t i = 0; i < types_.size(); ++i)
      if (types_[i] == type) return i;
    return std::nullopt;
  }

  TagId index(Prefix p, std::size_t type) const {
    if (p == Prefix::O) return kOutside;
    if (type >= types_.size()) throw SchemeError("entity type id out of range");
    std::size_t slot = 0;
    switch (p) {
      case Prefix::B: slot = 0; break;
      case Prefix::I: slot = 1; break;
      case Prefix::E: slot = 2; break;
      case Prefix::S: slot = 3; break;
      case Prefix::O: break;
    }
    if (slot >= block())
      throw SchemeError("prefix not available in " + to_string(kind_));
    return 1 + type * block() + slot;
  }

  Prefix prefix(TagId tag) const {
    check(tag);
    if (tag == kOutside) return Prefix::O;
    static constexpr Prefix kSlots[] = {Prefix::B, Prefix::I, Prefix::E,
                                        Prefix::S};
    return kSlots[(tag - 1) % block()];
  }

  std::size_t type_of(TagId tag) const {
    check(tag);
    return tag == kOutside ? kNoType : (tag - 1) / block();
  }

  std::string name(TagId tag) const {
    const Prefix p = prefix(tag);
    if (p == Prefix::O) return "O";
    static constexpr char kLetters[] = {'O', 'B', 'I', 'E', 'S'};
    return std::string(1, kLetters[static_cast<int>(p)]) + "-" +
           types_[type_of(tag)];
  }

  std::optional<TagId> parse(std::string_view tag) const {
    if (tag == "O") return kOutside;
    if (tag.size() < 3 || tag[1] != '-') return std::nullopt;
    Prefix p;
    switch (tag[0]) {
      case 'B': p = Prefix::B; break;
      case 'I': p = Prefix::I; break;
      case 'E': p = Prefix::E; break;
      case 'S': p = Prefix::S; break;
      default: return std::nullopt;
    }
    if (kind_ == SchemeKind::BIO && (p == Prefix::E || p == Prefix::S))
      return std::nullopt;
    auto t = type_id(tag.substr(2));
    if (!t) return std::nullopt;
    return index(p, *t);
  }

  /// Whether `next` may follow `prev`. An empty `prev` is the sentence start,
  /// an empty `next` the sentence end.
  bool legal(std::optional<TagId> prev, std::optional<TagId> next) const {
    const bool open = prev && (prefix(*prev) == Prefix::B ||
                               prefix(*prev) == Prefix::I);
    if (kind_ == SchemeKind::BIOES) {
      if (open) {
        if (!next) return false;
        const Prefix np = prefix(*next);
        return (np == Prefix::I || np == Prefix::E) &&
               type_of(*next) == type_of(*prev);
      }
      if (!next) return true;
      const Prefix np = prefix(*next);
      return np == Prefix::O || np == Prefix::B || np == Prefix::S;
    }
    if (!next) return true;
    if (prefix(*next) != Prefix::I) return true;
    return open && type_of(*next) == type_of(*prev);
  }

  /// Entity types named in tags are kept in order; BIO <-> BIOES conversion
  /// of a well-formed tag sequence.
  std::vector<TagId> convert(std::span<const TagId> tags,
                             const TagScheme& target) const;

  bool operator==(const TagScheme& o) const {
    return kind_ == o.kind_ && types_ == o.types_;
  }

 private:
  void check(TagId tag) const {
    if (tag >= size())
      throw SchemeError("tag index " + std::to_string(tag) +
                        " out of range for scheme of size " +
                        std::to_string(size()));
  }

  SchemeKind kind_ = SchemeKind::BIOES;
  std::vector<std::string> types_;
};

struct Sentence {
  std::string id;
  std::u32string chars;
  std::vector<TagId> tags;  // empty when untagged

  std::size_t size() const noexcept { return chars.size(); }
  bool has_tags() const noexcept { return !tags.empty(); }
};

enum class Split { Train, Valid, Test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "?";
}

struct Dataset {
  std::vector<Sentence> sentences;
  Split split = Split::Train;
  TagScheme scheme;
  std::size_t split_sentences = 0;  // inputs longer than max_len
  std::vector<std::string> warnings;

  std::size_t size() const noexcept { return sentences.size(); }
};

struct ReadOptions {
  std::size_t max_len = 250;
  Split split = Split::Train;
  std::string id_prefix;  // sentence ids are "<prefix>:<k>"
  bool check_transitions = true;  // off for model output, which may be ill-formed
};

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> cols;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    if (j > i) cols.push_back(line.substr(i, j - i));
    i = j;
  }
  return cols;
}

inline void chomp(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

inline void strip_bom(std::string& line) {
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
}

inline std::string file_stem(const std::string& path) {
  auto slash = path.find_last_of("/\\");
  std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
  auto dot = base.find_last_of('.');
  return dot == std::string::npos || dot == 0 ? base : base.substr(0, dot);
}

/// Re-normalizes the tags on both sides of a cut so each piece stays legal.
inline void repair_cut(std::vector<TagId>& left, std::vector<TagId>& right,
                       const TagScheme& scheme) {
  if (!left.empty() && scheme.kind() == SchemeKind::BIOES) {
    TagId& last = left.back();
    const auto t = scheme.type_of(last);
    if (scheme.prefix(last) == Prefix::B) last = scheme.index(Prefix::S, t);
    else if (scheme.prefix(last) == Prefix::I) last = scheme.index(Prefix::E, t);
  }
  if (!right.empty()) {
    TagId& first = right.front();
    const auto t = scheme.type_of(first);
    if (scheme.prefix(first) == Prefix::I) first = scheme.index(Prefix::B, t);
    else if (scheme.prefix(first) == Prefix::E) first = scheme.index(Prefix::S, t);
  }
}

}  // namespace detail

/// Splits sentences longer than `max_len` into consecutive pieces, fixing up
/// the entity prefixes that straddle a cut. Returns how many inputs were split.
inline std::size_t split_long(std::vector<Sentence>& sentences,
                              const TagScheme& scheme, std::size_t max_len) {
  if (max_len == 0) throw ConfigError("max_len must be positive");
  std::vector<Sentence> out;
  std::size_t n_split = 0;
  for (auto& s : sentences) {
    if (s.size() <= max_len) {
      out.push_back(std::move(s));
      continue;
    }
    ++n_split;
    std::size_t part = 0;
    for (std::size_t begin = 0; begin < s.size(); begin += max_len, ++part) {
      const std::size_t end = std::min(s.size(), begin + max_len);
      Sentence piece;
      piece.id = s.id + "#" + std::to_string(part);
      piece.chars = s.chars.substr(begin, end - begin);
      if (s.has_tags())
        piece.tags.assign(s.tags.begin() + static_cast<std::ptrdiff_t>(begin),
                          s.tags.begin() + static_cast<std::ptrdiff_t>(end));
      if (part > 0 && piece.has_tags())
        detail::repair_cut(out.back().tags, piece.tags, scheme);
      out.push_back(std::move(piece));
    }
  }
  sentences = std::move(out);
  return n_split;
}

/// Reads a two-column CoNLL stream (character, tag). Blank lines end
/// sentences. Tag sequences must be legal under `scheme` unless
/// `opts.check_transitions` is off.
inline Dataset read_conll(std::istream& in, const TagScheme& scheme,
                          const ReadOptions& opts = {},
                          const std::string& source = "<stream>") {
  Dataset ds;
  ds.split = opts.split;
  ds.scheme = scheme;
  const std::string prefix =
      opts.id_prefix.empty() ? detail::file_stem(source) : opts.id_prefix;

  Sentence cur;
  std::size_t start_line = 0;
  auto flush = [&](std::size_t end_line) {
    if (cur.chars.empty()) return;
    for (std::size_t i = 0; opts.check_transitions && i <= cur.tags.size(); ++i) {
      std::optional<TagId> prev, next;
      if (i > 0) prev = cur.tags[i - 1];
      if (i < cur.tags.size()) next = cur.tags[i];
      if (!scheme.legal(prev, next)) {
        const std::size_t line = i < cur.tags.size() ? start_line + i : end_line;
        throw SchemeError(source + ":" + std::to_string(line) +
                          ": illegal " + to_string(scheme.kind()) +
                          " transition " + (prev ? scheme.name(*prev) : "START") +
                          " -> " + (next ? scheme.name(*next) : "END"));
      }
    }
    cur.id = prefix + ":" + std::to_string(ds.sentences.size());
    ds.sentences.push_back(std::move(cur));
    cur = Sentence{};
  };

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    detail::chomp(line);
    if (lineno == 1) detail::strip_bom(line);
    const auto cols = detail::split_ws(line);
    if (cols.empty()) {
      flush(lineno);
      continue;
    }
    if (cols.size() != 2)
      throw ParseError(source, lineno,
                       "expected 2 columns (character, tag), found " +
                           std::to_string(cols.size()));
    std::u32string ch;
    try {
      ch = utf8::decode(cols[0]);
    } catch (const DataError& e) {
      throw ParseError(source, lineno, e.what());
    }
    if (ch.size() != 1)
      throw ParseError(source, lineno,
                       "first column must be a single character, got '" +
                           std::string(cols[0]) + "'");
    auto tag = scheme.parse(cols[1]);
    if (!tag)
      throw SchemeError(source + ":" + std::to_string(lineno) +
                        ": unknown tag '" + std::string(cols[1]) + "' for " +
                        to_string(scheme.kind()) + " scheme");
    if (cur.chars.empty()) start_line = lineno;
    cur.chars.push_back(ch[0]);
    cur.tags.push_back(*tag);
  }
  flush(lineno + 1);

  ds.split_sentences = split_long(ds.sentences, scheme, opts.max_len);
  if (ds.split_sentences > 0)
    ds.warnings.push_back(source + ": " + std::to_string(ds.split_sentences) +
                          " sentence(s) longer than max_len=" +
                          std::to_string(opts.max_len) + " were split");
  return ds;
}

inline Dataset read_conll(const std::string& path, const TagScheme& scheme,
                          const ReadOptions& opts = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus file '" + path + "'");
  return read_conll(in, scheme, opts, path);
}

/// Collects the entity types used in a CoNLL stream, sorted by name.
inline std::vector<std::string> collect_entity_types(std::istream& in) {
  std::set<std::string> types;
  std::string line;
  while (std::getline(in, line)) {
    detail::chomp(line);
    const auto cols = detail::split_ws(line);
    if (cols.size() == 2 && cols[1].size() > 2 && cols[1][1] == '-')
      types.emplace(cols[1].substr(2));
  }
  return {types.begin(), types.end()};
}

inline std::vector<std::string> collect_entity_types(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus file '" + path + "'");
  return collect_entity_types(in);
}

inline void write_conll(std::ostream& out, std::span<const Sentence> sentences,
                        const TagScheme& scheme) {
  for (const auto& s : sentences) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      out << utf8::encode(s.chars[i]) << ' '
          << (s.has_tags() ? scheme.name(s.tags[i]) : std::string("O")) << '\n';
    }
    out << '\n';
  }
}

inline std::vector<TagId> TagScheme::convert(std::span<const TagId> tags,
                                             const TagScheme& target) const {
  if (target.types_ != types_)
    throw SchemeError("scheme conversion requires identical entity types");
  std::vector<TagId> out(tags.size());
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const Prefix p = prefix(tags[i]);
    if (p == Prefix::O) {
      out[i] = kOutside;
      continue;
    }
    const auto t = type_of(tags[i]);
    const bool continues = i + 1 < tags.size() &&
                           type_of(tags[i + 1]) == t &&
                           (prefix(tags[i + 1]) == Prefix::I ||
                            prefix(tags[i + 1]) == Prefix::E);
    const bool begins = p == Prefix::B || p == Prefix::S;
    Prefix q;
    if (target.kind_ == SchemeKind::BIO) {
      q = begins ? Prefix::B : Prefix::I;
    } else if (begins) {
      q = continues ? Prefix::B : Prefix::S;
    } else {
      q = continues ? Prefix::I : Prefix::E;
    }
    out[i] = target.index(q, t);
  }
  return out;
}

/// Summary emitted when a corpus is loaded.
inline nlohmann::json dataset_summary(const Dataset& ds) {
  std::size_t chars = 0, entities = 0, longest = 0;
  for (const auto& s : ds.sentences) {
    chars += s.size();
    longest = std::max(longest, s.size());
    for (TagId t : s.tags) {
      const Prefix p = ds.scheme.prefix(t);
      if (p == Prefix::B || p == Prefix::S) ++entities;
    }
  }
  return {{"split", to_string(ds.split)},
          {"sentences", ds.sentences.size()},
          {"chars", chars},
          {"entities", entities},
          {"longest", longest},
          {"split_sentences", ds.split_sentences},
          {"scheme", to_string(ds.scheme.kind())},
          {"types", ds.scheme.types()}};
}

// ---------------------------------------------------------------------------
// Word embeddings

struct EmbeddingTable {
  std::vector<std::string> words;
  std::unordered_map<std::string, std::size_t> vocab;
  std::vector<double> matrix;  // rows x dim, row-major
  std::size_t dim = 0;
  std::vector<std::string> warnings;

  std::size_t rows() const noexcept { return words.size(); }

  std::optional<std::span<const double>> row(const std::string& word) const {
    auto it = vocab.find(word);
    if (it == vocab.end()) return std::nullopt;
    return std::span<const double>(matrix.data() + it->second * dim, dim);
  }
};

/// Parses "[ROWS DIM]\n word v1 ... vDIM\n ...". Without a header the
/// dimension is taken from the first row.
inline EmbeddingTable load_embeddings(std::istream& in,
                                      const std::string& source = "<stream>") {
  EmbeddingTable table;
  std::string line;
  std::size_t lineno = 0;
  std::optional<std::size_t> declared_rows;

  auto parse_size = [](std::string_view tok) -> std::optional<std::size_t> {
    if (tok.empty()) return std::nullopt;
    std::size_t v = 0;
    for (char c : tok) {
      if (c < '0' || c > '9') return std::nullopt;
      v = v * 10 + static_cast<std::size_t>(c - '0');
    }
    return v;
  };

  while (std::getline(in, line)) {
    ++lineno;
    detail::chomp(line);
    if (lineno == 1) detail::strip_bom(line);
    const auto cols = detail::split_ws(line);
    if (cols.empty()) continue;
    if (lineno == 1 && cols.size() == 2) {
      auto r = parse_size(cols[0]);
      auto d = parse_size(cols[1]);
      if (r && d) {
        if (*d == 0) throw FormatError(source + ":1: header declares dim 0", 1);
        declared_rows = *r;
        table.dim = *d;
        continue;
      }
    }
    const std::size_t values = cols.size() - 1;
    if (table.dim == 0) {
      if (values == 0)
        throw FormatError(source + ":" + std::to_string(lineno) +
                              ": row has no vector values",
                          lineno);
      table.dim = values;
    }
    if (values != table.dim)
      throw FormatError(source + ":" + std::to_string(lineno) + ": row has " +
                            std::to_string(values) + " values, expected " +
                            std::to_string(table.dim),
                        lineno);
    std::vector<double> vec(table.dim);
    for (std::size_t k = 0; k < table.dim; ++k) {
      const std::string tok(cols[k + 1]);
      char* end = nullptr;
      const double v = std::strtod(tok.c_str(), &end);
      if (end != tok.c_str() + tok.size())
        throw FormatError(source + ":" + std::to_string(lineno) +
                              ": not a number '" + tok + "'",
                          lineno);
      if (!std::isfinite(v))
        throw FormatError(source + ":" + std::to_string(lineno) +
                              ": non-finite value '" + tok + "'",
                          lineno);
      vec[k] = v;
    }
    std::string word(cols[0]);
    if (table.vocab.count(word)) {
      table.warnings.push_back(source + ":" + std::to_string(lineno) +
                               ": duplicate word '" + word +
                               "' ignored (first occurrence kept)");
      continue;
    }
    table.vocab.emplace(word, table.words.size());
    table.words.push_back(std::move(word));
    table.matrix.insert(table.matrix.end(), vec.begin(), vec.end());
  }
  if (declared_rows && *declared_rows != table.rows())
    table.warnings.push_back(source + ": header declares " +
                             std::to_string(*declared_rows) + " rows, found " +
                             std::to_string(table.rows()));
  return table;
}

inline EmbeddingTable load_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open embedding file '" + path + "'");
  return load_embeddings(in, path);
}

/// Half-width of the uniform initializer for a row of size `dim`.
inline double init_bound(std::size_t dim) {
  if (dim == 0) throw ArgumentError("embedding dim must be positive");
  return std::sqrt(3.0 / static_cast<double>(dim));
}

/// A fresh embedding row drawn uniformly from [-sqrt(3/dim), +sqrt(3/dim)].
template <typename Real = double, typename Rng>
std::vector<Real> random_init_row(std::size_t dim, Rng& rng) {
  const double bound = init_bound(dim);
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<Real> row(dim);
  for (auto& v : row) v = static_cast<Real>(dist(rng));
  return row;
}

/// One word per line, UTF-8; blank lines and surrounding whitespace ignored.
inline std::vector<std::string> read_word_list(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open lexicon word list '" + path + "'");
  std::vector<std::string> words;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    detail::chomp(line);
    if (lineno == 1) detail::strip_bom(line);
    const auto cols = detail::split_ws(line);
    if (cols.empty()) continue;
    words.emplace_back(cols[0]);
  }
  return words;
}

}  // namespace slkner
