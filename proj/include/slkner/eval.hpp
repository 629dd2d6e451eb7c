// SPDX-License-Identifier: Apache-2.0
/**
 * @file   eval.hpp
 * @brief  Entity extraction from tag sequences, exact-match micro P/R/F1 and
 *         sentence-length bucketed reporting.
 */
#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "slkner/corpus.hpp"

namespace slkner {

/// 1-based inclusive character span.
struct EntitySpan {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string type;

  auto key() const { return std::tie(start, end, type); }
  bool operator<(const EntitySpan& o) const { return key() < o.key(); }
  bool operator==(const EntitySpan& o) const { return key() == o.key(); }
};

struct Extraction {
  std::vector<EntitySpan> spans;  // sorted
  std::size_t malformed = 0;
};

/// Well-formed spans only; dangling or interrupted runs are dropped and
/// counted as malformed.
inline Extraction extract_entities(std::span<const TagId> tags, const TagScheme& scheme) {
  Extraction out;
  std::size_t i = 0;
  const std::size_t n = tags.size();
  while (i < n) {
    const Prefix p = scheme.prefix(tags[i]);
    if (p == Prefix::O) {
      ++i;
      continue;
    }
    const auto type = scheme.type_of(tags[i]);
    if (p == Prefix::S) {
      out.spans.push_back({i + 1, i + 1, scheme.types()[type]});
      ++i;
      continue;
    }
    if (p != Prefix::B) {
      // I/E without an opening B: skip the whole run of continuation tags
      ++out.malformed;
      ++i;
      if (p == Prefix::E) continue;
      while (i < n && scheme.type_of(tags[i]) == type &&
             (scheme.prefix(tags[i]) == Prefix::I || scheme.prefix(tags[i]) == Prefix::E)) {
        const bool closes = scheme.prefix(tags[i]) == Prefix::E;
        ++i;
        if (closes) break;
      }
      continue;
    }
    std::size_t j = i + 1;
    while (j < n && scheme.prefix(tags[j]) == Prefix::I && scheme.type_of(tags[j]) == type) ++j;
    if (scheme.kind() == SchemeKind::BIO) {
      out.spans.push_back({i + 1, j, scheme.types()[type]});
      i = j;
      continue;
    }
    if (j < n && scheme.prefix(tags[j]) == Prefix::E && scheme.type_of(tags[j]) == type) {
      out.spans.push_back({i + 1, j + 1, scheme.types()[type]});
      i = j + 1;
    } else {
      ++out.malformed;
      i = j;
    }
  }
  std::sort(out.spans.begin(), out.spans.end());
  return out;
}

/// Inverse of extract_entities for non-overlapping spans.
inline std::vector<TagId> encode_tags(std::span<const EntitySpan> spans, std::size_t n,
                                      const TagScheme& scheme) {
  std::vector<TagId> tags(n, TagScheme::kOutside);
  for (const auto& s : spans) {
    if (s.start < 1 || s.end < s.start || s.end > n)
      throw SchemeError("entity span [" + std::to_string(s.start) + "," + std::to_string(s.end) +
                        "] outside sentence of length " + std::to_string(n));
    auto t = scheme.type_id(s.type);
    if (!t) throw SchemeError("unknown entity type '" + s.type + "'");
    const std::size_t a = s.start - 1, b = s.end - 1;
    for (std::size_t k = a; k <= b; ++k)
      if (tags[k] != TagScheme::kOutside) throw SchemeError("overlapping entity spans");
    if (scheme.kind() == SchemeKind::BIO) {
      tags[a] = scheme.index(Prefix::B, *t);
      for (std::size_t k = a + 1; k <= b; ++k) tags[k] = scheme.index(Prefix::I, *t);
    } else if (a == b) {
      tags[a] = scheme.index(Prefix::S, *t);
    } else {
      tags[a] = scheme.index(Prefix::B, *t);
      for (std::size_t k = a + 1; k < b; ++k) tags[k] = scheme.index(Prefix::I, *t);
      tags[b] = scheme.index(Prefix::E, *t);
    }
  }
  return tags;
}

struct Prf {
  double p = 0.0;
  double r = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0;
  std::size_t gold = 0;
  std::size_t pred = 0;

  static Prf from_counts(std::size_t tp, std::size_t gold, std::size_t pred) {
    Prf m;
    m.tp = tp;
    m.gold = gold;
    m.pred = pred;
    m.p = pred ? static_cast<double>(tp) / static_cast<double>(pred) : 0.0;
    m.r = gold ? static_cast<double>(tp) / static_cast<double>(gold) : 0.0;
    m.f1 = (m.p + m.r) > 0.0 ? 2.0 * m.p * m.r / (m.p + m.r) : 0.0;
    return m;
  }
};

/// Gold and predicted spans of one sentence.
struct SpanPair {
  std::string id;
  std::vector<EntitySpan> gold;
  std::vector<EntitySpan> pred;
  std::size_t length = 0;
};

inline std::size_t count_matches(const std::vector<EntitySpan>& gold,
                                 const std::vector<EntitySpan>& pred) {
  std::set<EntitySpan> g(gold.begin(), gold.end());
  std::set<EntitySpan> p(pred.begin(), pred.end());
  std::size_t tp = 0;
  for (const auto& s : p) tp += g.count(s);
  return tp;
}

/// Micro-averaged exact-match scores over all sentences.
inline Prf prf1(std::span<const SpanPair> sentences) {
  std::size_t tp = 0, gold = 0, pred = 0;
  for (const auto& s : sentences) {
    tp += count_matches(s.gold, s.pred);
    gold += std::set<EntitySpan>(s.gold.begin(), s.gold.end()).size();
    pred += std::set<EntitySpan>(s.pred.begin(), s.pred.end()).size();
  }
  return Prf::from_counts(tp, gold, pred);
}

inline Prf prf1(const std::vector<EntitySpan>& gold, const std::vector<EntitySpan>& pred) {
  SpanPair sp{"", gold, pred, 0};
  return prf1(std::span<const SpanPair>(&sp, 1));
}

inline std::map<std::string, Prf> prf1_by_type(std::span<const SpanPair> sentences) {
  std::map<std::string, std::tuple<std::size_t, std::size_t, std::size_t>> counts;
  for (const auto& s : sentences) {
    std::set<EntitySpan> g(s.gold.begin(), s.gold.end()), p(s.pred.begin(), s.pred.end());
    for (const auto& e : g) ++std::get<1>(counts[e.type]);
    for (const auto& e : p) {
      ++std::get<2>(counts[e.type]);
      if (g.count(e)) ++std::get<0>(counts[e.type]);
    }
  }
  std::map<std::string, Prf> out;
  for (const auto& [type, c] : counts)
    out[type] = Prf::from_counts(std::get<0>(c), std::get<1>(c), std::get<2>(c));
  return out;
}

struct LengthBucket {
  std::size_t min_len = 0;
  std::size_t max_len = 0;
  std::vector<std::size_t> members;  // indices into the input
  Prf metrics;
};

struct Bucketing {
  std::vector<LengthBucket> buckets;
  std::vector<std::string> warnings;
};

/// Equal-frequency partition of sentence indices by length. Sentences of
/// equal length always share a bucket, so each cut is moved to the nearest
/// length boundary; empty buckets are dropped.
inline std::vector<std::vector<std::size_t>> partition_by_length(std::span<const std::size_t> lengths,
                                                                 std::size_t k) {
  if (k == 0) throw ArgumentError("bucket count must be positive");
  const std::size_t m = lengths.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });
  // positions where the length changes are the admissible cut points
  std::vector<std::size_t> boundaries{0};
  for (std::size_t i = 1; i < m; ++i)
    if (lengths[order[i]] != lengths[order[i - 1]]) boundaries.push_back(i);
  boundaries.push_back(m);

  std::vector<std::size_t> cuts{0};
  for (std::size_t b = 1; b < k; ++b) {
    const double ideal = static_cast<double>(m) * static_cast<double>(b) / static_cast<double>(k);
    std::size_t best = boundaries.front();
    double best_d = std::abs(static_cast<double>(best) - ideal);
    for (std::size_t c : boundaries) {
      const double d = std::abs(static_cast<double>(c) - ideal);
      if (d < best_d) {
        best = c;
        best_d = d;
      }
    }
    cuts.push_back(std::max(best, cuts.back()));
  }
  cuts.push_back(m);

  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b + 1 < cuts.size(); ++b) {
    if (cuts[b + 1] <= cuts[b]) continue;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(cuts[b]),
                     order.begin() + static_cast<std::ptrdiff_t>(cuts[b + 1]));
  }
  return out;
}

inline Bucketing bucket_by_length(std::span<const SpanPair> sentences, std::size_t k = 6) {
  std::vector<std::size_t> lengths;
  lengths.reserve(sentences.size());
  for (const auto& s : sentences) lengths.push_back(s.length);
  Bucketing res;
  for (auto& members : partition_by_length(lengths, k)) {
    LengthBucket b;
    std::vector<SpanPair> sub;
    b.min_len = lengths[members.front()];
    b.max_len = lengths[members.back()];
    for (auto i : members) sub.push_back(sentences[i]);
    b.metrics = prf1(sub);
    b.members = std::move(members);
    res.buckets.push_back(std::move(b));
  }
  if (res.buckets.size() < k)
    res.warnings.push_back("requested " + std::to_string(k) + " length buckets, produced " +
                           std::to_string(res.buckets.size()));
  return res;
}

inline nlohmann::json to_json(const Prf& m) {
  return {{"P", m.p}, {"R", m.r}, {"F1", m.f1}, {"tp", m.tp}, {"gold", m.gold}, {"pred", m.pred}};
}

/// Overall, per-type and per-length-bucket metrics.
inline nlohmann::json evaluation_report(std::span<const SpanPair> sentences, std::size_t k = 6) {
  nlohmann::json j;
  j["sentences"] = sentences.size();
  j["overall"] = to_json(prf1(sentences));
  nlohmann::json types = nlohmann::json::object();
  for (const auto& [t, m] : prf1_by_type(sentences)) types[t] = to_json(m);
  j["per_type"] = std::move(types);
  nlohmann::json buckets = nlohmann::json::array();
  if (!sentences.empty()) {
    auto b = bucket_by_length(sentences, k);
    for (const auto& bk : b.buckets) {
      auto e = to_json(bk.metrics);
      e["min_len"] = bk.min_len;
      e["max_len"] = bk.max_len;
      e["count"] = bk.members.size();
      buckets.push_back(std::move(e));
    }
    if (!b.warnings.empty()) j["warnings"] = b.warnings;
  }
  j["buckets"] = std::move(buckets);
  return j;
}

/// Plain-text rendering of evaluation_report().
inline std::string report_table(const nlohmann::json& report) {
  char line[160];
  std::string out;
  auto row = [&](const std::string& name, const nlohmann::json& m) {
    std::snprintf(line, sizeof line, "%-16s %8.4f %8.4f %8.4f %7zu %7zu\n", name.c_str(),
                  m["P"].get<double>(), m["R"].get<double>(), m["F1"].get<double>(),
                  m["gold"].get<std::size_t>(), m["pred"].get<std::size_t>());
    out += line;
  };
  std::snprintf(line, sizeof line, "%-16s %8s %8s %8s %7s %7s\n", "", "P", "R", "F1", "gold", "pred");
  out += line;
  row("overall", report["overall"]);
  for (const auto& [t, m] : report["per_type"].items()) row(t, m);
  for (const auto& b : report["buckets"])
    row("len " + std::to_string(b["min_len"].get<std::size_t>()) + "-" +
            std::to_string(b["max_len"].get<std::size_t>()),
        b);
  return out;
}

}  // namespace slkner
