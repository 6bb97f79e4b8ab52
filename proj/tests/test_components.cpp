#include <gtest/gtest.h>

#include <random>

#include "sgr/components.hpp"
#include "sgr/oracles.hpp"

using namespace sgr;

namespace {

LabelMap grid(std::size_t w, std::size_t h, std::vector<int> ids) { return LabelMap{w, h, std::move(ids), {}}; }

std::vector<std::size_t> areas(const ComponentSet& cs) {
  std::vector<std::size_t> out;
  for (const auto& c : cs.components) out.push_back(c.area);
  return out;
}

}  // namespace

TEST(ExtractComponents, DiagonalNeighborsJoin) {
  // clang-format off
  const auto lm = grid(4, 4, {1, 0, 0, 0,
                              0, 1, 0, 0,
                              0, 0, 0, 1,
                              0, 0, 1, 0});
  // clang-format on
  const auto cs = extract_components(lm);
  ASSERT_EQ(cs.size(), 3u);  // one background piece, two diagonal pairs
  EXPECT_EQ(cs.components[0].class_id, 0);
  EXPECT_EQ(cs.components[0].area, 12u);
  EXPECT_EQ(cs.components[1].class_id, 1);
  EXPECT_EQ(cs.components[1].area, 2u);
  EXPECT_EQ(cs.components[1].mask[0], 1);
  EXPECT_EQ(cs.components[1].mask[5], 1);
  EXPECT_EQ(cs.components[2].mask[11], 1);
  EXPECT_EQ(cs.components[2].mask[14], 1);
}

TEST(ExtractComponents, SameClassApartIsTwoComponents) {
  const auto lm = grid(5, 1, {2, 2, 0, 2, 2});
  const auto cs = extract_components(lm);
  ASSERT_EQ(cs.size(), 3u);
  EXPECT_EQ(areas(cs), (std::vector<std::size_t>{1, 2, 2}));
  EXPECT_EQ(cs.components[1].class_id, 2);
  EXPECT_EQ(cs.components[2].class_id, 2);
}

TEST(ExtractComponents, VoidPixelsSkippedAndAbsentClassesIgnored) {
  const auto cs = extract_components(grid(3, 1, {-1, 3, -1}));
  ASSERT_EQ(cs.size(), 1u);
  EXPECT_EQ(cs.components[0].class_id, 3);
  EXPECT_TRUE(extract_components(grid(2, 1, {-1, -1})).empty());
}

TEST(ExtractComponents, MasksPartitionLabeledPixels) {
  std::mt19937_64 rng(3);
  const auto lm = oracle::random_label_grid(rng, 12, 9, 4, false);
  const auto cs = extract_components(lm);
  std::vector<int> hits(lm.pixels(), 0);
  for (const auto& c : cs.components) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < c.mask.size(); ++i)
      if (c.mask[i]) {
        ++hits[i];
        ++count;
        EXPECT_EQ(lm.class_ids[i], c.class_id);
      }
    EXPECT_EQ(count, c.area);
  }
  for (int h : hits) EXPECT_EQ(h, 1);
}

TEST(ExtractComponents, AgreesWithUnionFind) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 50; ++t) {
    const auto lm = oracle::random_label_grid(rng, 16, 16, 3, t % 2 == 0);
    EXPECT_EQ(oracle::canonical(extract_components(lm)), oracle::flood_fill_components(lm));
  }
}

TEST(DropSmall, BoundaryAtFivePercent) {
  EXPECT_EQ(drop_small_components(oracle::sized_components({100, 4})).size(), 1u);
  EXPECT_EQ(drop_small_components(oracle::sized_components({100, 5})).size(), 2u);
  EXPECT_EQ(drop_small_components(oracle::sized_components({7})).size(), 1u);
}

TEST(Opening, SquareSurvivesLineVanishes) {
  const std::size_t w = 7, h = 7;
  std::vector<std::uint8_t> m(w * h, 0);
  for (std::size_t y = 1; y <= 3; ++y)
    for (std::size_t x = 1; x <= 3; ++x) m[y * w + x] = 1;
  for (std::size_t x = 0; x < w; ++x) m[5 * w + x] = 1;  // one-pixel line
  const auto opened = binary_opening3x3(m, w, h);
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(opened[i], (i / w <= 3) ? m[i] : 0) << i;
  EXPECT_EQ(opened, oracle::opening_by_windows(m, w, h));
}

TEST(FilterSmall, OpeningSplitsDumbbell) {
  // Two 3x3 squares joined by a one-pixel bridge become two components.
  const std::size_t w = 9, h = 5;
  std::vector<int> ids(w * h, 0);
  for (std::size_t y = 1; y <= 3; ++y)
    for (std::size_t x : {1u, 2u, 3u, 5u, 6u, 7u}) ids[y * w + x] = 1;
  ids[2 * w + 4] = 1;
  std::vector<int> lm_ids(ids);
  for (auto& v : lm_ids) v = v ? 1 : -1;
  const auto cs = supervision_components(grid(w, h, lm_ids));
  ASSERT_EQ(cs.size(), 2u);
  EXPECT_EQ(areas(cs), (std::vector<std::size_t>{9, 9}));
}

TEST(FilterSmall, AllErasedKeepsLargestOriginal) {
  const auto cs = supervision_components(grid(6, 1, {1, 1, 1, -1, 2, 2}));
  ASSERT_EQ(cs.size(), 1u);
  EXPECT_EQ(cs.components[0].class_id, 1);
  EXPECT_EQ(cs.components[0].area, 3u);
}

TEST(FilterSmall, ThresholdUsesLargestSurvivor) {
  // 14x14 (196) survives intact; a 3x3 (9) is 4.6% of it and is dropped,
  // while with a 13x13 (169) it is 5.3% and kept.
  EXPECT_EQ(supervision_components(oracle::square_blocks({14, 3}, 40, 40)).size(), 1u);
  EXPECT_EQ(supervision_components(oracle::square_blocks({13, 3}, 40, 40)).size(), 2u);
}

TEST(FilterSmall, AgreesWithWindowOracle) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 50; ++t) {
    const auto lm = oracle::random_label_grid(rng, 16, 16, 3, true);
    EXPECT_EQ(oracle::canonical(supervision_components(lm)), oracle::filtered_components(lm));
  }
}

TEST(LabelMap, Validation) {
  LabelMap lm = grid(2, 1, {0, 1});
  EXPECT_NO_THROW(lm.validate(2));
  EXPECT_THROW(lm.validate(1), std::out_of_range);
  lm.instance_ids = {5, 5};
  EXPECT_THROW(lm.validate(2), std::invalid_argument);
  lm.instance_ids = {0, 5};
  EXPECT_NO_THROW(lm.validate(2));
  lm.class_ids.pop_back();
  EXPECT_THROW(lm.validate(2), std::invalid_argument);
}
