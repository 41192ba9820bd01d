#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "magma/ops.hpp"
#include "magma/optim.hpp"
#include "magma/tensor.hpp"
#include "support/oracles.hpp"

namespace magma {
namespace {

using testing::grad_check;
using testing::random_tensor;
using D = Tensor<double>;
using F = Tensor<float>;

void expect_values(const D& t, std::vector<double> want, double tol = 1e-12) {
  ASSERT_EQ(t.numel(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(t.data()[i], want[i], tol) << "index " << i;
}

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(D({2, 2}, {1, 2, 3}), ShapeError);
  EXPECT_THROW(D({0, 2}, {}), ShapeError);
  D t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.dim(-1), 3u);
}

TEST(Tensor, CopiesShareStorage) {
  D a({2}, {1, 2});
  D b = a;
  b.mutable_data()[0] = 5;
  EXPECT_EQ(a.data()[0], 5);
  D c = a.detach();
  c.mutable_data()[0] = 9;
  EXPECT_EQ(a.data()[0], 5);
}

TEST(Matmul, IdentityLeavesMatrix) {
  D eye({2, 2}, {1, 0, 0, 1}), b({2, 2}, {3, 4, 5, 6});
  expect_values(ops::matmul(eye, b), {3, 4, 5, 6});
}

TEST(Matmul, HandDotProducts) {
  D a({2, 2}, {1, 2, 3, 4}), b({2, 1}, {5, 6});
  const auto c = ops::matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  expect_values(c, {1 * 5 + 2 * 6, 3 * 5 + 4 * 6});
}

TEST(Matmul, ZerosAnnihilate) {
  std::mt19937_64 rng(1);
  expect_values(ops::matmul(D::zeros({2, 3}), random_tensor({3, 2}, rng)), {0, 0, 0, 0});
}

TEST(Matmul, InnerDimensionMismatchThrows) { EXPECT_THROW(ops::matmul(D::zeros({2, 3}), D::zeros({2, 3})), ShapeError); }

TEST(Softmax, ConstantRowIsUniform) {
  for (double c : {-50.0, 0.0, 3.5, 700.0}) expect_values(ops::softmax(D::full({4}, c)), {0.25, 0.25, 0.25, 0.25});
}

TEST(Softmax, TwoTermExpRatio) {
  // e^0 : e^{ln 3} = 1 : 3
  expect_values(ops::softmax(D({2}, {0.0, std::log(3.0)})), {0.25, 0.75}, 1e-15);
}

TEST(Softmax, ShiftInvariantAndNormalized) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_tensor({3, 7}, rng, -5, 5);
    std::vector<double> shifted(x.data().begin(), x.data().end());
    for (auto& v : shifted) v += 12.25;
    const auto a = ops::softmax(x), b = ops::softmax(D({3, 7}, shifted));
    for (std::size_t i = 0; i < a.numel(); ++i) {
      EXPECT_NEAR(a.data()[i], b.data()[i], 1e-12);
      EXPECT_GE(a.data()[i], 0.0);
      EXPECT_LE(a.data()[i], 1.0);
    }
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < 7; ++j) s += a.data()[r * 7 + j];
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Softmax, FloatRowsSumToOne) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<float> dist(-20, 20);
  std::vector<float> v(5 * 33);
  for (auto& x : v) x = dist(rng);
  const auto s = ops::softmax(F({5, 33}, v));
  for (std::size_t r = 0; r < 5; ++r) {
    double total = 0;
    for (std::size_t j = 0; j < 33; ++j) total += s.data()[r * 33 + j];
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(Softmax, AlongFirstAxis) {
  const auto s = ops::softmax(D({2, 2}, {0, 5, 0, 5}), 0);
  expect_values(s, {0.5, 0.5, 0.5, 0.5});
}

TEST(LayerNorm, ConstantRowMapsToZero) {
  expect_values(ops::layer_norm(D::full({1, 4}, 3.0), D::full({4}, 1.0), D::zeros({4})), {0, 0, 0, 0});
}

TEST(LayerNorm, UnitVariancePair) {
  // mean 0, variance 1: unchanged up to the eps guard
  expect_values(ops::layer_norm(D({1, 2}, {1, -1}), D::full({2}, 1.0), D::zeros({2}), 0.0), {1, -1});
  expect_values(ops::layer_norm(D({1, 2}, {1, -1}), D::full({2}, 1.0), D::zeros({2})), {1, -1}, 1e-5);
}

TEST(LayerNorm, ZeroGainGivesBias) {
  std::mt19937_64 rng(4);
  const auto out = ops::layer_norm(random_tensor({3, 3}, rng), D::zeros({3}), D({3}, {7, -1, 2}));
  expect_values(out, {7, -1, 2, 7, -1, 2, 7, -1, 2});
}

TEST(CrossEntropy, UniformLogitsGiveLogV) {
  const std::vector<int> targets{0, 17, 63};
  const auto loss = ops::cross_entropy(D::full({3, 64}, 0.3), std::span<const int>(targets));
  EXPECT_NEAR(loss.item(), std::log(64.0), 1e-12);
  EXPECT_NEAR(loss.item(), 4.1589, 1e-4);
}

TEST(CrossEntropy, ConfidentTargetIsNearZero) {
  std::vector<double> logits(8, 0.0);
  logits[5] = 1e6;
  const std::vector<int> t{5};
  EXPECT_NEAR(ops::cross_entropy(D({1, 8}, logits), std::span<const int>(t)).item(), 0.0, 1e-12);
}

TEST(CrossEntropy, TwoRowsMatchDirectSoftmax) {
  const std::vector<double> l{0.5, -1.0, 2.0, 1.5, 0.25, -0.75};
  const std::vector<int> t{2, 0};
  double want = 0;
  for (int r = 0; r < 2; ++r) {
    double z = 0;
    for (int j = 0; j < 3; ++j) z += std::exp(l[r * 3 + j]);
    want += -std::log(std::exp(l[r * 3 + t[r]]) / z);
  }
  want /= 2;
  EXPECT_NEAR(ops::cross_entropy(D({2, 3}, l), std::span<const int>(t)).item(), want, 1e-12);
}

TEST(CrossEntropy, IgnoredRowsAndWeights) {
  const std::vector<double> l{0.5, -1.0, 2.0, 1.5, 0.25, -0.75};
  const std::vector<int> only_first{2, ops::kIgnoreTarget};
  const std::vector<int> first_row{2};
  EXPECT_NEAR(ops::cross_entropy(D({2, 3}, l), std::span<const int>(only_first)).item(),
              ops::cross_entropy(D({1, 3}, {0.5, -1.0, 2.0}), std::span<const int>(first_row)).item(), 1e-14);
  const std::vector<int> both{2, 0};
  const std::vector<double> w{0.25, 0.0};
  const auto nll = ops::token_nll(D({2, 3}, l), std::span<const int>(both));
  EXPECT_NEAR(ops::cross_entropy(D({2, 3}, l), std::span<const int>(both), std::span<const double>(w)).item(),
              0.25 * nll[0], 1e-14);
}

TEST(CrossEntropy, OutOfRangeTargetThrows) {
  const std::vector<int> t{3};
  EXPECT_THROW(ops::cross_entropy(D::zeros({1, 3}), std::span<const int>(t)), Error);
}

TEST(Backward, SumGivesOnes) {
  D p = D::zeros({2, 3}, true);
  backward(ops::sum(p));
  for (double g : p.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SquareGivesTwiceValue) {
  std::mt19937_64 rng(5);
  auto p = random_tensor({4}, rng);
  p.set_requires_grad(true);
  backward(ops::sum(ops::mul(p, p)));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(p.grad()[i], 2 * p.data()[i]);
}

TEST(Backward, FanOutAccumulates) {
  // f(x) = sum(x⊙x) + sum(3x) → 2x + 3, the sum of the two branch gradients
  std::mt19937_64 rng(6);
  auto x = random_tensor({5}, rng);
  x.set_requires_grad(true);
  backward(ops::add(ops::sum(ops::mul(x, x)), ops::sum(ops::scale(x, 3.0))));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(x.grad()[i], 2 * x.data()[i] + 3, 1e-14);
}

TEST(Backward, TwiceOnSameGraphThrows) {
  D p = D::full({2}, 1.0, true);
  auto loss = ops::sum(ops::mul(p, p));
  backward(loss);
  EXPECT_THROW(backward(loss), Error);
}

TEST(Backward, NonScalarLossThrows) {
  D p = D::full({2}, 1.0, true);
  EXPECT_THROW(backward(ops::scale(p, 2.0)), ShapeError);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  D p = D::full({2}, 1.0, true);
  D loss;
  {
    NoGradGuard g;
    EXPECT_FALSE(grad_enabled());
    loss = ops::sum(ops::mul(p, p));
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_THROW(backward(loss), Error);
}

TEST(Backward, ThreeLayerCompositeMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = random_tensor({3, 4}, rng);
    auto w1 = random_tensor({5, 4}, rng), b1 = random_tensor({5}, rng);
    auto w2 = random_tensor({6, 5}, rng), w3 = random_tensor({3, 6}, rng);
    const std::vector<int> t{0, 2, 1};
    auto f = [&] {
      auto h = ops::gelu(ops::linear(x, w1, b1));
      h = ops::relu(ops::linear(h, w2));
      return ops::cross_entropy(ops::linear(h, w3), std::span<const int>(t));
    };
    EXPECT_LT(grad_check({w1, b1, w2, w3, x}, f).max_rel_error, 1e-4);
  }
}

TEST(NonFinite, OverflowIsAnError) {
  EXPECT_THROW(ops::scale(F::full({2}, 3e38f), 10.0), NumericError);
  EXPECT_THROW(ops::add(D({1}, {std::nan("")}), D({1}, {1.0})), NumericError);
}

TEST(Dropout, EvalIsIdentity) {
  std::mt19937_64 rng(8);
  auto x = random_tensor({10}, rng);
  const auto y = ops::dropout(x, 0.5, false, rng);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(Dropout, TrainKeepsScaledSurvivors) {
  std::mt19937_64 rng(9);
  const auto y = ops::dropout(D::full({20000}, 1.0), 0.25, true, rng);
  std::size_t kept = 0;
  for (double v : y.data()) {
    if (v != 0.0) {
      EXPECT_DOUBLE_EQ(v, 1.0 / 0.75);
      ++kept;
    }
  }
  EXPECT_NEAR(static_cast<double>(kept) / 20000.0, 0.75, 0.02);
}

TEST(Dropout, SeededMaskIsReproducible) {
  std::mt19937_64 a(10), b(10);
  const auto x = D::full({64}, 2.0);
  const auto ya = ops::dropout(x, 0.3, true, a), yb = ops::dropout(x, 0.3, true, b);
  for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(ya.data()[i], yb.data()[i]);
}

TEST(Adam, FirstStepMovesByLrTimesSign) {
  std::vector<double> p{1.0, -2.0, 0.5}, g{0.3, -4.0, 1e-3};
  AdamState s;
  adam_step<double>(p, g, s, 0.01);
  EXPECT_NEAR(p[0], 1.0 - 0.01, 1e-6);
  EXPECT_NEAR(p[1], -2.0 + 0.01, 1e-6);
  EXPECT_NEAR(p[2], 0.5 - 0.01, 1e-4);
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  std::vector<double> p{1.0, -2.0}, g{0.0, 0.0};
  AdamState s;
  adam_step<double>(p, g, s, 0.1);
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(p[1], -2.0);
}

TEST(Adam, TwoStepsFollowRecurrence) {
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.05;
  double x = 0.0, m = 0, v = 0;
  for (int t = 1; t <= 2; ++t) {
    m = b1 * m + (1 - b1) * 1.0;
    v = b2 * v + (1 - b2) * 1.0;
    const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
    x -= lr * mh / (std::sqrt(vh) + eps);
  }
  std::vector<double> p{0.0}, g{1.0};
  AdamState s;
  adam_step<double>(p, g, s, lr);
  adam_step<double>(p, g, s, lr);
  EXPECT_NEAR(p[0], x, 1e-15);
  EXPECT_EQ(s.step, 2u);
}

TEST(Adam, ShapeMismatchThrows) {
  std::vector<double> p{0.0, 1.0}, g{1.0};
  AdamState s;
  EXPECT_THROW(adam_step<double>(p, g, s, 0.1), ShapeError);
}

TEST(CosineLr, Endpoints) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 2.0), 2.0);
  EXPECT_NEAR(cosine_lr(100, 100, 2.0), 0.2, 1e-15);
  EXPECT_NEAR(cosine_lr(50, 100, 1.0), 0.55, 1e-15);
  EXPECT_THROW(cosine_lr(101, 100, 1.0), UsageError);
}

TEST(CosineLr, NonIncreasing) {
  for (std::size_t total : {1u, 7u, 1000u}) {
    double prev = cosine_lr(0, total, 1.0);
    for (std::size_t s = 1; s <= total; ++s) {
      const double cur = cosine_lr(s, total, 1.0);
      EXPECT_LE(cur, prev);
      prev = cur;
    }
  }
}

}  // namespace
}  // namespace magma
