#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "sgr/metrics.hpp"
#include "sgr/oracles.hpp"

using namespace sgr;

namespace {

TokenHistogram hist(std::vector<double> probs) {
  TokenHistogram h;
  h.probs = std::move(probs);
  for (std::size_t i = 0; i < h.probs.size(); ++i) h.labels.push_back(static_cast<int>(i));
  return h;
}

}  // namespace

TEST(Entropy, KnownValues) {
  const std::vector<double> onehot{0, 1, 0}, two{0.5, 0.5}, skew{0.25, 0.75};
  EXPECT_EQ(entropy(onehot), 0.0);
  EXPECT_NEAR(entropy(two), std::log(2.0), 1e-15);
  EXPECT_NEAR(entropy(skew), -(0.25 * std::log(0.25) + 0.75 * std::log(0.75)), 1e-15);
  EXPECT_NEAR(entropy(skew), 0.5623351446188083, 1e-15);
}

TEST(Histogram, WeightsMaskByLabel) {
  const std::vector<double> mask{1.0, 0.5, 0.5, 0.0};
  const std::vector<int> labels{0, 1, 1, 2};
  const auto present = present_labels(labels);
  const auto h = token_histogram(mask, labels, present);
  EXPECT_EQ(h.labels, (std::vector<int>{0, 1, 2}));
  EXPECT_DOUBLE_EQ(h.probs[0], 0.5);
  EXPECT_DOUBLE_EQ(h.probs[1], 0.5);
  EXPECT_EQ(h.probs[2], 0.0);
}

TEST(Histogram, VoidPixelsIgnored) {
  const std::vector<double> mask{1.0, 9.0, 1.0};
  const std::vector<int> labels{3, -1, 7};
  const auto h = token_histogram(mask, labels, present_labels(labels));
  EXPECT_EQ(h.labels, (std::vector<int>{3, 7}));
  EXPECT_DOUBLE_EQ(h.probs[0], 0.5);
}

TEST(Histogram, ZeroMassAndNegativeRejected) {
  const std::vector<int> labels{0, 1};
  const std::vector<double> zero{0.0, 0.0}, neg{1.0, -0.1};
  EXPECT_THROW(token_histogram(zero, labels, present_labels(labels)), std::domain_error);
  EXPECT_THROW(token_histogram(neg, labels, present_labels(labels)), std::invalid_argument);
}

TEST(Histogram, ScaleInvariant) {
  std::mt19937_64 rng(1);
  const Tensor masks = oracle::random_tensor(rng, {20, 3}, 0.0, 1.0);
  std::vector<int> labels(20);
  for (auto& l : labels) l = static_cast<int>(rng() % 4);
  const auto a = token_histograms(masks, labels), b = token_histograms(scale(masks, 37.5), labels);
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t i = 0; i < a[j].probs.size(); ++i) EXPECT_NEAR(a[j].probs[i], b[j].probs[i], 1e-15);
}

TEST(Diversity, HandWorkedVariance) {
  // Bin values (1, 0) and (0, 1): per-bin variance 0.25 each.
  EXPECT_DOUBLE_EQ(image_diversity({hist({1, 0}), hist({0, 1})}), 0.25);
  // Three tokens on bin 0: 1, 0, 0 -> mean 1/3, variance 2/9; same for bin 1.
  EXPECT_NEAR(image_diversity({hist({1, 0}), hist({0, 1}), hist({0, 1})}), 2.0 / 9.0, 1e-15);
}

TEST(Diversity, IdenticalIsExactlyZero) {
  const auto h = hist({0.1, 0.2, 0.7});
  EXPECT_EQ(image_diversity({h, h, h, h}), 0.0);
  EXPECT_GT(image_diversity({h, h, hist({0.1, 0.2000001, 0.6999999})}), 0.0);
}

TEST(Diversity, SingleTokenIsZero) { EXPECT_EQ(image_diversity({hist({0.5, 0.5})}), 0.0); }

TEST(Semantics, MeanOfEntropies) {
  const double s = image_semantics({hist({1, 0}), hist({0.5, 0.5})});
  EXPECT_NEAR(s, 0.5 * std::log(2.0), 1e-15);
  EXPECT_NEAR(semantics_score({{hist({1, 0})}, {hist({0.5, 0.5})}}), 0.5 * std::log(2.0), 1e-15);
}

TEST(Semantics, ClassNeverExceedsInstance) {
  // Instances refine classes, so merging bins cannot raise entropy.
  std::mt19937_64 rng(2);
  for (int t = 0; t < 100; ++t) {
    LabelMap lm = oracle::random_label_grid(rng, 6, 6, 3, false);
    lm.instance_ids.resize(36);
    for (std::size_t i = 0; i < 36; ++i) lm.instance_ids[i] = lm.class_ids[i] * 4 + 1 + static_cast<int>(rng() % 4);
    const Tensor masks = oracle::random_tensor(rng, {36, 4}, 0.0, 1.0);
    const auto m = image_metrics(masks, lm, "t");
    ASSERT_TRUE(m.has_instances);
    for (std::size_t j = 0; j < 4; ++j)
      EXPECT_LE(entropy(m.class_histograms[j].probs), entropy(m.instance_histograms[j].probs) + 1e-12);
  }
}

TEST(Report, InstanceMeansSkipImagesWithoutInstances) {
  const Tensor masks({4, 2}, {1, 0, 1, 0, 0, 1, 0, 1});
  LabelMap a{2, 2, {0, 0, 1, 1}, {2, 2, 1, 1}}, b{2, 2, {0, 1, 0, 1}, {}};
  auto report = metrics_report({image_metrics(masks, a, "a"), image_metrics(masks, b, "b")});
  EXPECT_DOUBLE_EQ(report.s_class, 0.5 * (0.0 + std::log(2.0)));
  EXPECT_DOUBLE_EQ(report.d_class, 0.5 * (0.25 + 0.0));
  EXPECT_EQ(report.s_instance, 0.0);  // only image a has instances
  EXPECT_DOUBLE_EQ(report.d_instance, 0.25);
  const auto j = report.to_json();
  EXPECT_EQ(j["images"].size(), 2u);
  EXPECT_EQ(j["images"][0]["id"], "a");
  EXPECT_THROW(metrics_report({}), std::invalid_argument);
}
