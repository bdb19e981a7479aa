// SPDX-FileCopyrightText: (c) 2026 The flowdetect Authors
//
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "flowdetect/mix_builder.hpp"
#include "flowdetect/synthetic.hpp"

namespace flowdetect {
namespace {

/// Table whose records are all distinct: value 0 is the row index.
FlowTable distinct_table(const std::string& name, std::size_t n, std::size_t width) {
  Schema s;
  s.dataset_name = name;
  for (std::size_t k = 0; k < width; ++k) s.columns.push_back({"f" + std::to_string(k), ColumnKind::automatic});
  s.columns.push_back({"label", ColumnKind::label});
  s.label_normal_values = {"normal"};
  FlowTable t{s, {}};
  for (std::size_t i = 0; i < n; ++i) {
    FlowRecord r;
    for (std::size_t k = 0; k < width; ++k) r.values.push_back(std::to_string(i * (k + 1)));
    r.raw_label = i % 2 ? "normal" : "attack";
    r.label = normalize_label(r.raw_label, s);
    r.source = name;
    t.records.push_back(std::move(r));
  }
  return t;
}

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::invalid_argument;
}

TEST(Mix, SingleSourceRatio) {
  std::vector<FlowTable> tables{distinct_table("a", 30, 3)};
  auto mix = build_mix(tables, 10, 5, 1);
  EXPECT_EQ(mix.train.size(), 8u);
  EXPECT_EQ(mix.val.size(), 2u);
  EXPECT_EQ(mix.tests.at("a").size(), 5u);
}

TEST(Mix, RatioIsFloorOfFifth) {
  for (std::size_t n : {1u, 4u, 5u, 7u, 13u, 26u}) {
    std::vector<FlowTable> tables{distinct_table("a", n + 1, 2)};
    auto mix = build_mix(tables, n, 1, 3);
    EXPECT_EQ(mix.val.size(), n / 5);
    EXPECT_EQ(mix.train.size() + mix.val.size(), n);
  }
}

TEST(Mix, FourSourcesWithHeterogeneousWidths) {
  std::vector<FlowTable> tables;
  std::size_t width = 41;
  for (auto name : {"nsl", "kdd", "unsw", "iiot"}) tables.push_back(distinct_table(name, 700, width++));
  auto mix = build_mix(tables, 500, 100, 7);
  EXPECT_EQ(mix.train.size(), 1600u);
  EXPECT_EQ(mix.val.size(), 400u);
  ASSERT_EQ(mix.tests.size(), 4u);
  for (const auto& [name, test] : mix.tests) EXPECT_EQ(test.size(), 100u);
  std::set<std::size_t> widths;
  for (const auto& r : mix.train) widths.insert(r.values.size());
  EXPECT_EQ(widths.size(), 4u);
}

TEST(Mix, DisjointAgainstBruteForce) {
  // Duplicated records inside each source make the dedup rules matter.
  std::vector<FlowTable> tables;
  for (auto name : {"x", "y"}) {
    auto t = distinct_table(name, 40, 2);
    auto copy = t.records;
    t.records.insert(t.records.end(), copy.begin(), copy.begin() + 20);
    tables.push_back(t);
  }
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    MixDataset mix;
    try {
      mix = build_mix(tables, 20, 10, seed);
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::insufficient_records);
      continue;
    }
    std::vector<FlowRecord> pool = mix.train;
    pool.insert(pool.end(), mix.val.begin(), mix.val.end());
    for (const auto& [name, test] : mix.tests) {
      for (std::size_t i = 0; i < test.size(); ++i) {
        EXPECT_EQ(test[i].source, name);
        for (const auto& p : pool) EXPECT_FALSE(same_identity(p, test[i]));
        for (std::size_t j = i + 1; j < test.size(); ++j) EXPECT_FALSE(same_identity(test[i], test[j]));
      }
    }
  }
}

TEST(Mix, SamplesWithoutReplacement) {
  std::vector<FlowTable> tables{distinct_table("a", 100, 1), distinct_table("b", 100, 1)};
  auto mix = build_mix(tables, 100, 0, 5);
  std::map<std::string, std::set<std::string>> seen;
  auto all = mix.train;
  all.insert(all.end(), mix.val.begin(), mix.val.end());
  for (const auto& r : all) EXPECT_TRUE(seen[r.source].insert(r.values[0]).second);
  EXPECT_EQ(seen["a"].size(), 100u);
  EXPECT_EQ(seen["b"].size(), 100u);
}

TEST(Mix, SameSeedSameSplits) {
  std::vector<FlowTable> tables{distinct_table("a", 60, 2), distinct_table("b", 60, 3)};
  EXPECT_EQ(build_mix(tables, 30, 10, 42), build_mix(tables, 30, 10, 42));
  EXPECT_NE(build_mix(tables, 30, 10, 42).train, build_mix(tables, 30, 10, 43).train);
}

TEST(Mix, InsufficientRecordsNamesSource) {
  std::vector<FlowTable> tables{distinct_table("big", 50, 1), distinct_table("small", 12, 1)};
  try {
    build_mix(tables, 10, 5, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::insufficient_records);
    EXPECT_NE(std::string(e.what()).find("small"), std::string::npos);
  }
}

TEST(Separator, DefaultIsClean) {
  std::vector<FlowTable> tables;
  for (auto style : synthetic::kAllStyles) tables.push_back(synthetic::styled_table(style, 300, 1));
  EXPECT_FALSE(validate_separator(tables, kDefaultSeparator));
  // Comma never survives parsing unquoted, and the generated values contain none.
  EXPECT_FALSE(validate_separator(tables, U','));
}

TEST(Separator, InjectedCollisionIsReported) {
  std::vector<FlowTable> tables{distinct_table("a", 10, 3)};
  tables[0].records[6].values[2] = "12" + utf8_encode(kDefaultSeparator) + "3";
  auto hit = validate_separator(tables, kDefaultSeparator);
  ASSERT_TRUE(hit);
  EXPECT_EQ(hit->source, "a");
  EXPECT_EQ(hit->row, 6u);
  EXPECT_EQ(hit->column, "f2");
  EXPECT_EQ(code_of([&] { build_mix(tables, 5, 2, 1); }), Errc::separator_collision);
}

TEST(Utf8, EncodesSeparator) { EXPECT_EQ(utf8_encode(0x241F), "\xE2\x90\x9F"); }

class MixFiles : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() / "flowdetect_mix_test";
    std::filesystem::remove_all(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::filesystem::path dir_;
};

TEST_F(MixFiles, RoundTripPreservesOrder) {
  std::vector<FlowTable> tables{distinct_table("a", 60, 2), synthetic::styled_table(synthetic::DatasetStyle::kdd99, 80, 2)};
  tables[0].records[3].values[0] = "with\\backslash\nnewline";
  auto mix = build_mix(tables, 40, 15, 9);
  serialize_mix(mix, dir_);
  auto back = load_mix(dir_);
  EXPECT_EQ(back, mix);
  auto again = dir_ / "again";
  serialize_mix(back, again);
  for (auto file : {"mix.json", "train.txt", "val.txt"})
    EXPECT_EQ(csv::read_file((dir_ / file).string()), csv::read_file((again / file).string()));
}

TEST_F(MixFiles, CorruptHeaderIsVersionMismatch) {
  std::vector<FlowTable> tables{distinct_table("a", 30, 2)};
  serialize_mix(build_mix(tables, 10, 5, 1), dir_);
  auto header = nlohmann::json::parse(csv::read_file((dir_ / "mix.json").string()));
  header["version"] = 99;
  csv::write_file((dir_ / "mix.json").string(), header.dump());
  EXPECT_EQ(code_of([&] { load_mix(dir_); }), Errc::format_version_mismatch);
  csv::write_file((dir_ / "mix.json").string(), "{not json");
  EXPECT_EQ(code_of([&] { load_mix(dir_); }), Errc::format_version_mismatch);
  EXPECT_EQ(code_of([&] { load_mix(dir_ / "missing"); }), Errc::io_error);
}

}  // namespace
}  // namespace flowdetect
