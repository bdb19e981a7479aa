// SPDX-FileCopyrightText: (c) 2026 The flowdetect Authors
//
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "flowdetect/synthetic.hpp"

namespace flowdetect {
namespace {

TEST(Separable, LabelIsDecidedByFlagFeature) {
  auto t = synthetic::separable_table(1000, 3);
  ASSERT_EQ(t.size(), 1000u);
  std::size_t attacks = 0;
  for (const auto& r : t.records) {
    EXPECT_EQ(r.values.size(), 8u);
    EXPECT_EQ(r.label == Label::attack, r.values[synthetic::kDecisiveFeature] == synthetic::kAttackFlag);
    attacks += r.label == Label::attack;
  }
  EXPECT_GT(attacks, 400u);
  EXPECT_LT(attacks, 600u);
  EXPECT_EQ(synthetic::separable_table(50, 3), synthetic::separable_table(50, 3));
}

TEST(Separable, SurvivesCsvRoundTrip) {
  auto t = synthetic::separable_table(30, 8);
  EXPECT_EQ(parse_dataset_text(write_dataset_text(t), t.schema), t);
}

struct StyleShape {
  synthetic::DatasetStyle style;
  std::size_t features;
  bool header;
};

class Styled : public ::testing::TestWithParam<StyleShape> {};

TEST_P(Styled, ParsesWithExpectedShape) {
  const auto& s = GetParam();
  auto t = synthetic::styled_table(s.style, 200, 5);
  ASSERT_EQ(t.size(), 200u);
  EXPECT_EQ(t.schema.has_header, s.header);
  EXPECT_EQ(t.schema.feature_columns().size(), s.features);
  std::size_t attacks = 0;
  for (const auto& r : t.records) {
    EXPECT_EQ(r.values.size(), s.features);
    attacks += r.label == Label::attack;
  }
  EXPECT_GT(attacks, 50u);
  EXPECT_LT(attacks, 150u);
  EXPECT_EQ(synthetic::styled_csv(s.style, 20, 1), synthetic::styled_csv(s.style, 20, 1));
}

INSTANTIATE_TEST_SUITE_P(AllStyles, Styled,
                         ::testing::Values(StyleShape{synthetic::DatasetStyle::nsl_kdd, 41, false},
                                           StyleShape{synthetic::DatasetStyle::kdd99, 41, false},
                                           StyleShape{synthetic::DatasetStyle::unsw_nb15, 42, true},
                                           StyleShape{synthetic::DatasetStyle::x_iiotid, 65, true}),
                         [](const auto& info) { return std::string(to_string(info.param.style)); });

TEST(Styled, KddLabelsCarryTrailingDot) {
  auto t = synthetic::styled_table(synthetic::DatasetStyle::kdd99, 50, 2);
  for (const auto& r : t.records) {
    EXPECT_TRUE(r.raw_label.ends_with('.'));
    EXPECT_EQ(r.label == Label::normal, r.raw_label == "normal.");
  }
}

}  // namespace
}  // namespace flowdetect
