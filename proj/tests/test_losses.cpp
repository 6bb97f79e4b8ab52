#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "sgr/grad_check.hpp"
#include "sgr/losses.hpp"
#include "sgr/matching.hpp"
#include "sgr/oracles.hpp"

using namespace sgr;

TEST(Focal, HalfProbabilityEitherTarget) {
  const double expect = 0.25 * std::log(2.0);
  EXPECT_NEAR(focal_loss(Tensor({2}, {0.5, 0.5}), Tensor({2}, {1.0, 0.0})).item(), expect, 1e-15);
}

TEST(Focal, MatchesElementwiseLoop) {
  std::mt19937_64 rng(1);
  const Tensor p = oracle::random_tensor(rng, {40}, 0.01, 0.99);
  const Tensor t = oracle::random_binary(rng, 40);
  for (double g : {0.0, 1.0, 2.0, 3.5}) {
    double acc = 0.0;
    for (std::size_t i = 0; i < 40; ++i) {
      const double pt = t[i] > 0.5 ? p[i] : 1.0 - p[i];
      acc -= std::pow(1.0 - pt, g) * std::log(pt);
    }
    EXPECT_NEAR(focal_loss(p, t, g).item(), acc / 40.0, 1e-14) << "gamma " << g;
  }
}

TEST(Focal, PerfectPredictionIsNearZeroAndFinite) {
  const double v = focal_loss(Tensor({3}, {1.0, 0.0, 1.0}), Tensor({3}, {1.0, 0.0, 1.0})).item();
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_LT(v, 1e-20);
  const double worst = focal_loss(Tensor({1}, {0.0}), Tensor({1}, {1.0})).item();
  EXPECT_NEAR(worst, -std::log(1e-12), 1e-9);
}

TEST(Focal, SizeMismatchThrows) {
  EXPECT_THROW(focal_loss(Tensor::zeros({3}), Tensor::zeros({4})), ShapeError);
}

TEST(Dice, HalfOnForegroundGivesPointTwo) {
  EXPECT_NEAR(dice_loss(Tensor({2}, {0.5, 0.5}), Tensor({2}, {1.0, 1.0})).item(), 0.2, 1e-6);
}

TEST(Dice, IdenticalIsZeroDisjointIsOne) {
  const Tensor a({3}, {1, 0, 1}), b({3}, {0, 1, 0});
  EXPECT_NEAR(dice_loss(a, a).item(), 0.0, 1e-15);
  EXPECT_NEAR(dice_loss(a, b).item(), 1.0 - 1e-6 / (3.0 + 1e-6), 1e-15);
  EXPECT_NEAR(dice_loss(Tensor::zeros({3}), Tensor::zeros({3})).item(), 0.0, 1e-15);
}

TEST(Cosine, HandPair) {
  EXPECT_NEAR(cosine_pair_loss({Tensor({3}, {1, 0, 1}), Tensor({3}, {1, 1, 0})}).item(), 0.5, 1e-15);
}

TEST(Cosine, MeanOverUnorderedPairs) {
  const Tensor a({2}, {1, 0}), b({2}, {0, 1}), c({2}, {1, 1});
  const double r = 1.0 / std::sqrt(2.0);
  EXPECT_NEAR(cosine_pair_loss({a, b, c}).item(), (0.0 + r + r) / 3.0, 1e-15);
  EXPECT_EQ(cosine_pair_loss({a}).item(), 0.0);
  EXPECT_THROW(cosine_pair_loss({}), std::invalid_argument);
  EXPECT_THROW(cosine_pair_loss({a, Tensor::zeros({2})}), DomainError);
}

TEST(CrossEntropy, UniformLogitsAndVoid) {
  const Tensor logits = Tensor::zeros({3, 3});
  EXPECT_NEAR(pixel_cross_entropy(logits, {0, 2, -1}).item(), std::log(3.0), 1e-15);
  EXPECT_THROW(pixel_cross_entropy(logits, {-1, -1, -1}), std::invalid_argument);
  EXPECT_THROW(pixel_cross_entropy(logits, {0, 3, 1}), std::out_of_range);
}

TEST(CrossEntropy, MatchesLogSumExp) {
  std::mt19937_64 rng(2);
  const Tensor logits = oracle::random_tensor(rng, {10, 4}, -30, 30);
  std::vector<int> labels(10);
  for (auto& l : labels) l = static_cast<int>(rng() % 4);
  double acc = 0.0;
  for (std::size_t n = 0; n < 10; ++n) {
    double m = logits.at(n, 0);
    for (std::size_t c = 1; c < 4; ++c) m = std::max(m, logits.at(n, c));
    double s = 0.0;
    for (std::size_t c = 0; c < 4; ++c) s += std::exp(logits.at(n, c) - m);
    acc += m + std::log(s) - logits.at(n, static_cast<std::size_t>(labels[n]));
  }
  EXPECT_NEAR(pixel_cross_entropy(logits, labels).item(), acc / 10.0, 1e-12);
}

TEST(ConceptLoss, RecomposesFromParts) {
  std::mt19937_64 rng(3);
  const ComponentSet cs = oracle::random_partition(rng, 4, 4, 2);
  const Tensor masks = oracle::random_tensor(rng, {16, 4}, 0.05, 0.6);
  Assignment a;
  a.components = 2;
  a.pairs = {{0, 0}, {3, 1}, {2, 1}};
  LossWeights w;
  w.rho = 0.7;
  w.gamma = 0.3;
  const Tensor t0 = binary_target(cs.components[0].mask), t1 = binary_target(cs.components[1].mask);
  const Tensor c0 = column(masks, 0), c2 = column(masks, 2), c3 = column(masks, 3);
  const Tensor u1 = clamp(add(c3, c2), 0.0, 1.0);
  const double expect = focal_loss(c0, t0).item() + 0.7 * dice_loss(c0, t0).item() + focal_loss(u1, t1).item() +
                        0.7 * dice_loss(u1, t1).item() + 0.3 * cosine_pair_loss({c3, c2}).item();
  EXPECT_NEAR(concept_loss(masks, cs, a, w).item(), expect, 1e-14);
}

TEST(ConceptLoss, UnionIsClamped) {
  ComponentSet cs{2, 1, {Component{{1, 1}, 1, 2}}};
  Assignment a;
  a.components = 1;
  a.pairs = {{0, 0}, {1, 0}};
  LossWeights w;
  w.gamma = 0.0;
  const Tensor masks({2, 2}, {0.8, 0.8, 0.8, 0.8});
  // The union saturates at 1 on both pixels: focal ~ 0 and dice ~ 0.
  EXPECT_LT(concept_loss(masks, cs, a, w).item(), 1e-9);
}

TEST(ConceptLoss, RejectsForeignAssignment) {
  std::mt19937_64 rng(4);
  const ComponentSet cs = oracle::random_partition(rng, 2, 2, 2);
  Assignment a;
  a.components = 3;
  EXPECT_THROW(concept_loss(Tensor::full({4, 2}, 0.5), cs, a, LossWeights{}), ShapeError);
}

TEST(TotalLoss, WeightedSumAndZeroBeta) {
  const Tensor ce = Tensor::scalar(1.0), concept_term = Tensor::scalar(2.0);
  EXPECT_DOUBLE_EQ(total_loss(ce, concept_term, 0.25).item(), 1.5);
  EXPECT_EQ(total_loss(ce, Tensor{}, 0.0).impl(), ce.impl());
  EXPECT_THROW(total_loss(ce, concept_term, -0.1), std::invalid_argument);
}

TEST(LossGradients, EachLossAgainstCentralDifferences) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 20; ++t) {
    Tensor p = oracle::random_tensor(rng, {12}, 0.05, 0.95);
    Tensor q = oracle::random_tensor(rng, {12}, 0.05, 0.95);
    const Tensor target = oracle::random_binary(rng, 12);
    auto r = grad_check([&] { return focal_loss(p, target); }, {p});
    EXPECT_TRUE(r.passed) << "focal: " << r.message;
    r = grad_check([&] { return dice_loss(p, target); }, {p});
    EXPECT_TRUE(r.passed) << "dice: " << r.message;
    r = grad_check([&] { return cosine_pair_loss({p, q}); }, {p, q});
    EXPECT_TRUE(r.passed) << "cosine: " << r.message;
    Tensor logits = oracle::random_tensor(rng, {6, 3}, -3, 3);
    r = grad_check([&] { return pixel_cross_entropy(logits, {0, 1, 2, -1, 1, 0}); }, {logits});
    EXPECT_TRUE(r.passed) << "ce: " << r.message;
  }
}

TEST(LossGradients, ConceptLossWithFixedAssignment) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 10; ++t) {
    const ComponentSet cs = oracle::random_partition(rng, 4, 4, 2);
    Tensor masks = oracle::random_tensor(rng, {16, 5}, 0.05, 0.3);  // unions stay below 1
    const Assignment a = match_regions(masks, cs, 1.0, 4);
    const auto r = grad_check([&] { return concept_loss(masks, cs, a, LossWeights{}); }, {masks});
    EXPECT_TRUE(r.passed) << r.message;
  }
}
