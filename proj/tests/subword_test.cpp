// SPDX-FileCopyrightText: (c) 2026 The flowdetect Authors
//
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "flowdetect/subword.hpp"
#include "flowdetect/synthetic.hpp"

namespace flowdetect {
namespace {

std::vector<std::string> corpus_of(const std::string& text, int copies) { return std::vector<std::string>(copies, text); }

std::vector<std::string> corpus_tokens(const SubwordVocab& v) {
  auto all = v.tokens();
  return {all.begin() + kFirstCorpusId, all.end()};
}

TEST(PreTokenize, SplitsWhitespaceAndPunctuation) {
  EXPECT_EQ(pre_tokenize("0,tcp http.5"), (std::vector<std::string>{"0", ",", "tcp", "http", ".", "5"}));
  EXPECT_TRUE(pre_tokenize("   ").empty());
}

TEST(SubwordTrain, HandRunMerges) {
  const auto corpus = corpus_of("aaab", 50);
  // Two merges on "aaab": (a,a) first, then the (a,b)/(aa,a) tie goes to (a,b).
  EXPECT_EQ(corpus_tokens(train_subword_vocab(corpus, 7)), (std::vector<std::string>{"a", "b", "aa"}));
  EXPECT_EQ(corpus_tokens(train_subword_vocab(corpus, 8)), (std::vector<std::string>{"a", "b", "aa", "ab"}));
}

TEST(SubwordTrain, MinimumTargetIsCharacterOnly) {
  auto v = train_subword_vocab(corpus_of("aaab", 50), 6);
  EXPECT_EQ(corpus_tokens(v), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(v.size(), 6u);
}

TEST(SubwordTrain, StopsWhenNothingMerges) {
  auto v = train_subword_vocab(corpus_of("ab", 3), 100);
  EXPECT_EQ(corpus_tokens(v), (std::vector<std::string>{"a", "b", "ab"}));
}

TEST(SubwordTrain, Errors) {
  try {
    train_subword_vocab(corpus_of("abc", 2), 6);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::target_too_small);
  }
  try {
    train_subword_vocab(std::vector<std::string>{}, 10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::corpus_empty);
  }
  try {
    train_subword_vocab(std::vector<std::string>{"  ", ""}, 10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::corpus_empty);
  }
}

TEST(SubwordTrain, Deterministic) {
  std::vector<std::string> corpus;
  for (const auto& r : synthetic::separable_table(200, 4).records) corpus.push_back(flow_text(r));
  auto a = train_subword_vocab(corpus, 300);
  auto b = train_subword_vocab(corpus, 300);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.serialize(), b.serialize());
  EXPECT_EQ(SubwordVocab::deserialize(a.serialize()), a);
}

TEST(SubwordEncode, SinglePieceIsThreeTokens) {
  auto v = train_subword_vocab(corpus_of("tcp", 10), 20);
  ASSERT_TRUE(v.contains("tcp"));
  auto s = encode_subword("tcp", v, 16);
  EXPECT_EQ(s.true_length, 3u);
  EXPECT_EQ(s.ids[0], kClsId);
  EXPECT_EQ(v.token(s.ids[1]), "tcp");
  EXPECT_EQ(s.ids[2], kSepId);
}

TEST(SubwordEncode, GreedyLongestMatchAndRender) {
  auto v = train_subword_vocab(corpus_of("aaab", 50), 8);
  // "aaab": longest prefix "aa", then "ab".
  EXPECT_EQ(v.render("aaab"), (std::vector<std::string>{"aa", "##ab"}));
  EXPECT_EQ(v.render("ba a"), (std::vector<std::string>{"b", "##a", "a"}));
  EXPECT_EQ(v.continuation_marker(), "##");
}

TEST(SubwordEncode, UnknownCharacterMakesWordUnk) {
  auto v = train_subword_vocab(corpus_of("aaab", 50), 8);
  EXPECT_EQ(v.piece_ids("aaxb ab"), (std::vector<TokenId>{kUnkId, v.piece_ids("ab")[0]}));
  EXPECT_EQ(v.render("x"), (std::vector<std::string>{"[UNK]"}));
}

TEST(SubwordEncode, TruncatesAtMaxLen) {
  auto v = train_subword_vocab(corpus_of("a b c d", 3), 10);
  auto s = encode_subword("a b c d a b c d", v, 5);
  EXPECT_EQ(s.size(), 5u);
  EXPECT_EQ(s.true_length, 5u);
  EXPECT_EQ(s.ids[4], kSepId);
}

TEST(SubwordEncode, LongerNumeralNeedsMoreTokens) {
  auto v = train_subword_vocab(corpus_of("5450,0,tcp,http,181,0.25,7639", 20), 40);
  EXPECT_GT(encode_subword("5449.7318265", v).true_length, encode_subword("5450", v).true_length);
}

TEST(SubwordEncode, NeverShorterThanNss) {
  for (auto style : synthetic::kAllStyles) {
    auto t = synthetic::styled_table(style, 200, 6);
    std::vector<std::string> corpus;
    for (const auto& r : t.records) corpus.push_back(flow_text(r));
    auto sv = train_subword_vocab(corpus, 1000);
    auto nv = build_vocab(t);
    auto window = compute_window(t, nv);
    bool strict = false;
    for (const auto& r : t.records) {
      const auto nss = encode_flow(r, nv, window).true_length;
      const auto sub = encode_subword(flow_text(r), sv).true_length;
      EXPECT_LE(nss, sub);
      strict = strict || nss < sub;
    }
    EXPECT_TRUE(strict) << to_string(style);
    EXPECT_GT(corpus_stats(t, sv).max_length, corpus_stats(t, nv, window).max_length);
  }
}

}  // namespace
}  // namespace flowdetect
