#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "sgr/grad_check.hpp"
#include "sgr/oracles.hpp"
#include "sgr/tensor.hpp"

using namespace sgr;

namespace {

Tensor leaf(Shape shape, std::vector<double> v) { return Tensor(std::move(shape), std::move(v), true); }

// Backward of `loss` on a fresh tape; returns the gradient of `x`.
std::vector<double> gradient_of(const std::function<Tensor(const Tensor&)>& f, Tensor x) {
  x.set_requires_grad(true);
  x.zero_grad();
  Tape tape;
  TapeScope scope(tape);
  tape.backward(f(x));
  return {x.grad().begin(), x.grad().end()};
}

}  // namespace

TEST(Tensor, RejectsInconsistentShape) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  EXPECT_THROW(Tensor({0}, {}), ShapeError);
  EXPECT_NO_THROW(Tensor({2, 3}, std::vector<double>(6)));
}

TEST(Tensor, MatmulOfOnes) {
  const Tensor c = matmul(Tensor::full({2, 3}, 1.0), Tensor::full({3, 2}, 1.0));
  ASSERT_EQ(c.shape(), (Shape{2, 2}));
  for (double v : c.data()) EXPECT_EQ(v, 3.0);
}

TEST(Tensor, MatmulShapeErrorNamesOp) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_EQ(e.op(), "matmul");
  }
}

TEST(Tensor, SigmoidAtZeroAndSaturation) {
  const Tensor s = sigmoid(Tensor({3}, {0.0, 800.0, -800.0}));
  EXPECT_EQ(s[0], 0.5);
  EXPECT_EQ(s[1], 1.0);
  EXPECT_GE(s[2], 0.0);
  EXPECT_LT(s[2], 1e-300);
  EXPECT_THROW(sigmoid(Tensor({1}, {std::nan("")})), DomainError);
}

TEST(Tensor, SoftmaxOfEqualLogits) {
  const Tensor s = softmax(Tensor({1, 3}, {1.0, 1.0, 1.0}));
  for (double v : s.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Tensor, LogSoftmaxMatchesLogOfSoftmax) {
  const Tensor x({2, 3}, {0.3, -1.2, 2.0, 5.0, 5.0, -3.0});
  const Tensor a = log_softmax(x), b = log(softmax(x));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-14);
}

TEST(Tensor, LogDomain) {
  EXPECT_THROW(log(Tensor({1}, {-1.0})), DomainError);
  EXPECT_NEAR(log(Tensor({1}, {0.0}))[0], std::log(1e-12), 1e-12);
}

TEST(Tensor, BackwardOfSumIsOnes) {
  const auto g = gradient_of([](const Tensor& x) { return sum(x); }, Tensor({4}, {0.5, -1, 2, 3}));
  EXPECT_EQ(g, (std::vector<double>{1, 1, 1, 1}));
}

TEST(Tensor, BackwardOfSquares) {
  const auto g = gradient_of([](const Tensor& x) { return sum(mul(x, x)); }, Tensor({2}, {1.0, 2.0}));
  EXPECT_EQ(g, (std::vector<double>{2.0, 4.0}));
}

TEST(Tensor, FanOutAccumulates) {
  // f = sum(x) + sum(3x): each element feeds two consumers.
  const auto g = gradient_of([](const Tensor& x) { return add(sum(x), sum(scale(x, 3.0))); },
                             Tensor({3}, {1, 2, 3}));
  EXPECT_EQ(g, (std::vector<double>{4, 4, 4}));
}

TEST(Tensor, BackwardRequiresScalarLoss) {
  Tensor x = leaf({2}, {1, 2});
  Tape tape;
  TapeScope scope(tape);
  const Tensor y = scale(x, 2.0);
  EXPECT_THROW(tape.backward(y), ShapeError);
}

TEST(Tensor, NoTapeRecordsNothing) {
  Tensor x = leaf({2}, {1, 2});
  const Tensor y = sum(x);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_EQ(active_tape(), nullptr);
}

TEST(Tensor, NoGradScopeSuspendsRecording) {
  Tensor x = leaf({2}, {1, 2});
  Tape tape;
  TapeScope scope(tape);
  {
    NoGradScope off;
    (void)sum(x);
  }
  EXPECT_TRUE(tape.empty());
  (void)sum(x);
  EXPECT_EQ(tape.size(), 1u);
}

TEST(Tensor, DeterministicEvaluation) {
  std::mt19937_64 rng(1);
  const Tensor a = oracle::random_tensor(rng, {5, 7}, -1, 1), b = oracle::random_tensor(rng, {7, 4}, -1, 1);
  const Tensor g = Tensor::full({4}, 1.0), z = Tensor::zeros({4});
  const Tensor r1 = layer_norm(softmax(matmul(a, b)), g, z);
  const Tensor r2 = layer_norm(softmax(matmul(a, b)), g, z);
  EXPECT_EQ(r1.values(), r2.values());
}

TEST(Tensor, Conv3x3MatchesDirectLoop) {
  std::mt19937_64 rng(2);
  const std::size_t w = 5, h = 4, cin = 2, cout = 3;
  const Tensor x = oracle::random_tensor(rng, {w * h, cin}, -1, 1);
  const Tensor k = oracle::random_tensor(rng, {9 * cin, cout}, -1, 1);
  const Tensor b = oracle::random_tensor(rng, {cout}, -1, 1);
  const Tensor y = conv3x3(x, k, b, w, h);
  for (std::size_t yy = 0; yy < h; ++yy)
    for (std::size_t xx = 0; xx < w; ++xx)
      for (std::size_t o = 0; o < cout; ++o) {
        double acc = b[o];
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const long sx = static_cast<long>(xx) + dx, sy = static_cast<long>(yy) + dy;
            if (sx < 0 || sy < 0 || sx >= static_cast<long>(w) || sy >= static_cast<long>(h)) continue;
            const std::size_t tap = static_cast<std::size_t>((dy + 1) * 3 + (dx + 1));
            for (std::size_t c = 0; c < cin; ++c)
              acc += x.at(static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx), c) *
                     k.at(tap * cin + c, o);
          }
        EXPECT_NEAR(y.at(yy * w + xx, o), acc, 1e-12);
      }
}

TEST(Tensor, LayerNormRows) {
  const Tensor x({2, 4}, {1, 2, 3, 4, -1, 0, 0, 1});
  const Tensor y = layer_norm(x, Tensor::full({4}, 1.0), Tensor::zeros({4}), 0.0);
  for (std::size_t r = 0; r < 2; ++r) {
    double m = 0, v = 0;
    for (std::size_t c = 0; c < 4; ++c) m += y.at(r, c);
    for (std::size_t c = 0; c < 4; ++c) v += y.at(r, c) * y.at(r, c);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 4.0, 1.0, 1e-12);
  }
}

// Every differentiable op, 100 random instances each.
TEST(GradCheck, EveryOpMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  using F = std::function<Tensor(const Tensor&, const Tensor&)>;
  const std::vector<std::pair<std::string, F>> ops{
      {"add", [](auto& a, auto& b) { return sum(mul(add(a, b), add(a, b))); }},
      {"sub", [](auto& a, auto& b) { return sum(mul(sub(a, b), a)); }},
      {"mul", [](auto& a, auto& b) { return sum(mul(a, b)); }},
      {"scale", [](auto& a, auto&) { return sum(mul(scale(a, -1.7), a)); }},
      {"add_scalar", [](auto& a, auto&) { return sum(mul(add_scalar(a, 0.3), a)); }},
      {"sigmoid", [](auto& a, auto&) { return sum(sigmoid(a)); }},
      {"log", [](auto& a, auto&) { return sum(log(add_scalar(mul(a, a), 0.5))); }},
      {"pow", [](auto& a, auto&) { return sum(pow(add_scalar(mul(a, a), 0.5), -0.7)); }},
      {"softmax", [](auto& a, auto& b) { return sum(mul(softmax(a), b)); }},
      {"log_softmax", [](auto& a, auto& b) { return sum(mul(log_softmax(a), b)); }},
      {"silu", [](auto& a, auto&) { return sum(silu(a)); }},
      {"mean", [](auto& a, auto&) { return mean(mul(a, a)); }},
      {"dot", [](auto& a, auto& b) { return dot(mul(a, a), b); }},
      {"matmul", [](auto& a, auto& b) { return sum(mul(matmul(a, transpose(b)), matmul(a, transpose(b)))); }},
      {"transpose", [](auto& a, auto& b) { return sum(mul(matmul(transpose(a), b), matmul(transpose(a), b))); }},
      {"reshape", [](auto& a, auto& b) { return dot(reshape(mul(a, a), {a.size()}), reshape(b, {b.size()})); }},
      {"concat_cols", [](auto& a, auto& b) { return sum(mul(concat_cols({a, b}), concat_cols({b, a}))); }},
      {"column", [](auto& a, auto& b) { return dot(column(mul(a, b), 1), column(a, 2)); }},
      {"add_bias", [](auto& a, auto& b) { return sum(mul(add_bias(a, column(transpose(b), 0)), a)); }},
      {"layer_norm",
       [](auto& a, auto& b) {
         return sum(mul(layer_norm(a, Tensor::full({4}, 1.3), Tensor::full({4}, 0.1)), b));
       }},
  };
  for (const auto& [name, op] : ops) {
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      Tensor a = oracle::random_tensor(rng, {3, 4}, -1.5, 1.5);
      Tensor b = oracle::random_tensor(rng, {3, 4}, -1.5, 1.5);
      const auto r = grad_check([&] { return op(a, b); }, {a, b});
      worst = std::max(worst, r.max_relative_error);
      ASSERT_TRUE(r.passed) << name << ": " << r.message;
    }
    RecordProperty(name, std::to_string(worst));
  }
}

TEST(GradCheck, ClampAwayFromKinks) {
  Tensor a({6}, {0.1, 0.4, -0.3, 0.8, 1.4, -2.0}, true);
  const auto r = grad_check([&] { return sum(mul(clamp(a, 0.0, 1.0), a)); }, {a});
  EXPECT_TRUE(r.passed) << r.message;
}

TEST(GradCheck, Conv3x3Gradients) {
  std::mt19937_64 rng(4);
  Tensor x = oracle::random_tensor(rng, {12, 2}, -1, 1);
  Tensor k = oracle::random_tensor(rng, {18, 3}, -1, 1);
  Tensor b = oracle::random_tensor(rng, {3}, -1, 1);
  const auto r = grad_check([&] { auto y = conv3x3(x, k, b, 4, 3); return sum(mul(y, y)); }, {x, k, b});
  EXPECT_TRUE(r.passed) << r.message;
}

TEST(GradCheck, SumOfSigmoid) {
  std::mt19937_64 rng(5);
  Tensor x = oracle::random_tensor(rng, {8}, -3, 3);
  const auto r = grad_check([&] { return sum(sigmoid(x)); }, {x}, 1e-5, 1e-4);
  EXPECT_TRUE(r.passed) << r.message;
  EXPECT_EQ(r.checked, 8u);
}

TEST(GradCheck, DetectsCorruptedGradient) {
  Tensor x({4}, {0.1, 0.2, 0.3, 0.4}, true);
  auto broken_square = [](const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * a[i];
    return record_op(Tensor(a.shape(), std::move(out)), {&a}, [ia = a.impl()](const TensorImpl& o) {
      auto* g = detail::grad_sink(ia);
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += 3.0 * ia->data[i] * o.grad[i];  // should be 2x
    });
  };
  const auto r = grad_check([&] { return sum(broken_square(x)); }, {x});
  EXPECT_FALSE(r.passed);
  EXPECT_NEAR(r.max_relative_error, 1.0 / 3.0, 1e-6);
}

TEST(GradCheck, NonFiniteEvaluationFails) {
  Tensor x({1}, {0.0}, true);
  const auto r = grad_check(
      [&] {
        if (x[0] != 0.0) return Tensor::scalar(std::numeric_limits<double>::infinity());
        return sum(x);
      },
      {x});
  EXPECT_FALSE(r.passed);
}

TEST(GradCheck, StepOutOfRange) {
  Tensor x({1}, {1.0}, true);
  EXPECT_THROW(grad_check([&] { return sum(x); }, {x}, 0.0), std::invalid_argument);
  EXPECT_THROW(grad_check([&] { return sum(x); }, {x}, 0.1), std::invalid_argument);
}
