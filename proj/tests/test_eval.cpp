// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "slkner/eval.hpp"

using namespace slkner;

namespace {

const TagScheme kBioes(SchemeKind::BIOES, {"LOC", "ORG", "PER"});
const TagScheme kBio(SchemeKind::BIO, {"LOC", "ORG", "PER"});

std::vector<TagId> tags_of(const TagScheme& s, std::initializer_list<const char*> names) {
  std::vector<TagId> out;
  for (auto n : names) out.push_back(s.parse(n).value());
  return out;
}

// Non-overlapping random spans over a sentence of length n.
std::vector<EntitySpan> random_spans(std::mt19937_64& rng, std::size_t n) {
  static const char* types[] = {"LOC", "ORG", "PER"};
  std::vector<EntitySpan> out;
  std::size_t pos = 1;
  while (pos <= n) {
    if (rng() % 3 == 0) {
      const std::size_t len = 1 + rng() % 4;
      if (pos + len - 1 > n) break;
      out.push_back({pos, pos + len - 1, types[rng() % 3]});
      pos += len;
    } else {
      ++pos;
    }
  }
  return out;
}

std::vector<SpanPair> random_corpus(std::mt19937_64& rng, std::size_t count) {
  std::vector<SpanPair> out;
  for (std::size_t i = 0; i < count; ++i) {
    SpanPair p;
    p.id = "s:" + std::to_string(i);
    p.length = 1 + rng() % 40;
    p.gold = random_spans(rng, p.length);
    // keep some gold spans, add some noise
    for (const auto& g : p.gold)
      if (rng() % 4) p.pred.push_back(g);
    for (const auto& s : random_spans(rng, p.length))
      if (rng() % 5 == 0 && std::find(p.pred.begin(), p.pred.end(), s) == p.pred.end())
        p.pred.push_back(s);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

TEST(Extract, BioesSpans) {
  auto t = tags_of(kBioes, {"B-LOC", "I-LOC", "E-LOC", "O", "S-PER", "B-ORG", "E-ORG"});
  auto e = extract_entities(t, kBioes);
  EXPECT_EQ(e.malformed, 0u);
  EXPECT_EQ(e.spans, (std::vector<EntitySpan>{{1, 3, "LOC"}, {5, 5, "PER"}, {6, 7, "ORG"}}));
}

TEST(Extract, MalformedRunsDroppedAndCounted) {
  auto dangling = tags_of(kBioes, {"I-LOC", "E-LOC", "O", "B-PER", "I-PER", "O", "S-ORG"});
  auto e = extract_entities(dangling, kBioes);
  EXPECT_EQ(e.spans, (std::vector<EntitySpan>{{7, 7, "ORG"}}));
  EXPECT_EQ(e.malformed, 2u);
  auto mixed = tags_of(kBioes, {"B-LOC", "E-PER"});
  EXPECT_TRUE(extract_entities(mixed, kBioes).spans.empty());
}

TEST(Extract, BioSpans) {
  auto t = tags_of(kBio, {"B-LOC", "I-LOC", "B-LOC", "O", "B-PER"});
  auto e = extract_entities(t, kBio);
  EXPECT_EQ(e.spans, (std::vector<EntitySpan>{{1, 2, "LOC"}, {3, 3, "LOC"}, {5, 5, "PER"}}));
}

TEST(Extract, EncodeRoundTrip) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng() % 30;
    auto spans = random_spans(rng, n);
    std::sort(spans.begin(), spans.end());
    for (const auto* s : {&kBio, &kBioes}) {
      auto tags = encode_tags(spans, n, *s);
      auto back = extract_entities(tags, *s);
      EXPECT_EQ(back.spans, spans);
      EXPECT_EQ(back.malformed, 0u);
    }
  }
}

TEST(Encode, RejectsBadSpans) {
  std::vector<EntitySpan> overlap = {{1, 3, "LOC"}, {3, 4, "PER"}};
  EXPECT_THROW(encode_tags(overlap, 5, kBioes), SchemeError);
  std::vector<EntitySpan> outside = {{4, 6, "LOC"}};
  EXPECT_THROW(encode_tags(outside, 5, kBioes), SchemeError);
  std::vector<EntitySpan> unknown = {{1, 1, "GPE"}};
  EXPECT_THROW(encode_tags(unknown, 5, kBioes), SchemeError);
}

TEST(Prf, Examples) {
  std::vector<EntitySpan> gold = {{1, 2, "PER"}, {4, 5, "LOC"}};
  std::vector<EntitySpan> pred = {{1, 2, "PER"}, {4, 6, "LOC"}};
  auto m = prf1(gold, pred);
  EXPECT_DOUBLE_EQ(m.p, 0.5);
  EXPECT_DOUBLE_EQ(m.r, 0.5);
  EXPECT_DOUBLE_EQ(m.f1, 0.5);
  auto same = prf1(gold, gold);
  EXPECT_EQ(same.p, 1.0);
  EXPECT_EQ(same.r, 1.0);
  EXPECT_EQ(same.f1, 1.0);
  auto none = prf1(gold, {});
  EXPECT_EQ(none.p, 0.0);
  EXPECT_EQ(none.r, 0.0);
  EXPECT_EQ(none.f1, 0.0);
  auto wrong_type = prf1(gold, {{1, 2, "ORG"}});
  EXPECT_EQ(wrong_type.tp, 0u);
}

TEST(Prf, ByType) {
  std::vector<SpanPair> s = {{"a", {{1, 2, "PER"}, {4, 5, "LOC"}}, {{1, 2, "PER"}, {4, 6, "LOC"}}, 6}};
  auto t = prf1_by_type(s);
  EXPECT_EQ(t["PER"].f1, 1.0);
  EXPECT_EQ(t["LOC"].f1, 0.0);
  EXPECT_EQ(t["LOC"].pred, 1u);
}

TEST(Prf, BoundsAndHarmonicMean) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    auto c = random_corpus(rng, 1 + rng() % 20);
    auto m = prf1(c);
    for (double v : {m.p, m.r, m.f1}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    EXPECT_LE(m.f1, std::max(m.p, m.r) + 1e-15);
    if (m.p > 0 && m.r > 0) {
      EXPECT_NEAR(m.f1, 2 * m.p * m.r / (m.p + m.r), 1e-15);
    }
  }
}

TEST(Prf, InvariantUnderRelabelingAndReordering) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto c = random_corpus(rng, 30);
    auto shuffled = c;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    for (auto& s : shuffled) s.id = "renamed:" + std::to_string(rng());
    auto a = prf1(c), b = prf1(shuffled);
    EXPECT_EQ(a.tp, b.tp);
    EXPECT_EQ(a.f1, b.f1);
  }
}

TEST(Buckets, EqualLengthsShareOneBucket) {
  std::vector<std::size_t> lengths(50, 7);
  auto parts = partition_by_length(lengths, 6);
  ASSERT_EQ(parts.size(), 1u);
  EXPECT_EQ(parts[0].size(), 50u);
}

TEST(Buckets, SixSentencesSixBuckets) {
  std::vector<SpanPair> s;
  for (std::size_t i = 0; i < 6; ++i) s.push_back({"x" + std::to_string(i), {}, {}, 10 - i});
  auto b = bucket_by_length(s, 6);
  ASSERT_EQ(b.buckets.size(), 6u);
  for (const auto& bk : b.buckets) EXPECT_EQ(bk.members.size(), 1u);
  EXPECT_TRUE(b.warnings.empty());
  EXPECT_EQ(b.buckets.front().min_len, 5u);
  EXPECT_EQ(b.buckets.back().max_len, 10u);
}

TEST(Buckets, FewerSentencesThanBucketsWarns) {
  std::vector<SpanPair> s = {{"a", {}, {}, 3}, {"b", {}, {}, 9}};
  auto b = bucket_by_length(s, 6);
  EXPECT_EQ(b.buckets.size(), 2u);
  ASSERT_EQ(b.warnings.size(), 1u);
  EXPECT_THROW(partition_by_length(std::vector<std::size_t>{1}, 0), ArgumentError);
}

TEST(Buckets, DistinctLengthsSplitEvenly) {
  std::mt19937_64 rng(4);
  std::vector<std::size_t> lengths(600);
  std::iota(lengths.begin(), lengths.end(), std::size_t{1});
  std::shuffle(lengths.begin(), lengths.end(), rng);
  auto parts = partition_by_length(lengths, 6);
  ASSERT_EQ(parts.size(), 6u);
  for (const auto& p : parts) {
    EXPECT_GE(p.size(), 99u);
    EXPECT_LE(p.size(), 101u);
  }
}

TEST(Buckets, PartitionIsOrderedAndComplete) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::size_t> lengths(1 + rng() % 200);
    for (auto& l : lengths) l = 1 + rng() % 25;
    const std::size_t k = 1 + rng() % 8;
    auto parts = partition_by_length(lengths, k);
    EXPECT_LE(parts.size(), k);
    std::vector<int> seen(lengths.size(), 0);
    std::size_t prev_max = 0;
    for (const auto& p : parts) {
      ASSERT_FALSE(p.empty());
      std::size_t lo = 1000, hi = 0;
      for (auto i : p) {
        ++seen[i];
        lo = std::min(lo, lengths[i]);
        hi = std::max(hi, lengths[i]);
      }
      EXPECT_GT(lo, prev_max);  // equal lengths never straddle buckets
      prev_max = hi;
    }
    for (int s : seen) EXPECT_EQ(s, 1);
  }
}

TEST(Buckets, UnionOfBucketsEqualsOverall) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    auto c = random_corpus(rng, 10 + rng() % 100);
    auto b = bucket_by_length(c, 6);
    std::size_t tp = 0, gold = 0, pred = 0;
    for (const auto& bk : b.buckets) {
      tp += bk.metrics.tp;
      gold += bk.metrics.gold;
      pred += bk.metrics.pred;
    }
    auto all = prf1(c);
    EXPECT_EQ(tp, all.tp);
    EXPECT_EQ(gold, all.gold);
    EXPECT_EQ(pred, all.pred);
    EXPECT_EQ(Prf::from_counts(tp, gold, pred).f1, all.f1);
  }
}

TEST(Report, JsonShapeAndTable) {
  std::mt19937_64 rng(7);
  auto c = random_corpus(rng, 40);
  auto j = evaluation_report(c, 6);
  EXPECT_EQ(j["sentences"], 40);
  for (const char* key : {"P", "R", "F1", "tp", "gold", "pred"}) EXPECT_TRUE(j["overall"].contains(key));
  EXPECT_TRUE(j["per_type"].is_object());
  EXPECT_FALSE(j["buckets"].empty());
  EXPECT_FALSE(j.contains("warnings"));
  auto table = report_table(j);
  EXPECT_NE(table.find("overall"), std::string::npos);
  EXPECT_NE(table.find("len "), std::string::npos);
  auto empty = evaluation_report(std::vector<SpanPair>{}, 6);
  EXPECT_EQ(empty["overall"]["F1"], 0.0);
  EXPECT_TRUE(empty["buckets"].empty());
}
