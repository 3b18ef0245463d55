// Copyright 2026 The dphr Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <type_traits>

#include "dphr/tensor.hpp"
#include "support/gradcheck.hpp"

namespace dphr {
namespace {

using testing::gradcheck;
using testing::as_leaf;
using testing::random_like;

constexpr bool kDouble = std::is_same_v<real, double>;

void expect_gradcheck(const std::vector<testing::GradCheckResult>& results, double tol) {
  for (const auto& r : results) {
    EXPECT_LT(r.relative_error, tol) << r.name << " |analytic|=" << r.max_abs_analytic;
    EXPECT_GT(r.max_abs_analytic, 0.0) << r.name << " has an all-zero gradient";
  }
}

TEST(Conv2d, IdentityKernelReproducesInput) {
  std::mt19937_64 rng(1);
  auto x = random_like({2, 1, 4, 5}, rng);
  auto w = Tensor({1, 1, 1, 1}, {1.0});
  auto y = conv2d(x, w, 1, 0);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.values()[i], x.values()[i]);
}

TEST(Conv2d, AllOnesKernelOnConstantFieldGivesNineCTimesChannels) {
  const real c = 0.7;
  auto x = Tensor::full({1, 3, 6, 6}, c);
  auto w = Tensor::full({1, 3, 3, 3}, 1.0);
  auto y = conv2d(x, w, 1, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 6, 6}));
  for (std::size_t yy = 1; yy < 5; ++yy)
    for (std::size_t xx = 1; xx < 5; ++xx) EXPECT_NEAR(y.values()[yy * 6 + xx], 9 * c * 3, 1e-12);
  // Corner sees a 2x2 neighbourhood because of zero padding.
  EXPECT_NEAR(y.values()[0], 4 * c * 3, 1e-12);
}

TEST(Conv2d, OutputSizeFollowsSamePaddingThenStride) {
  for (std::size_t k : {1u, 3u, 5u, 7u}) {
    for (std::size_t stride : {1u, 2u}) {
      for (std::size_t h : {7u, 8u, 16u}) {
        auto x = Tensor::zeros({1, 2, h, h + 1});
        auto w = Tensor::zeros({3, 2, k, k});
        auto y = conv2d(x, w, stride, (k - 1) / 2);
        const std::size_t pad = (k - 1) / 2;
        EXPECT_EQ(y.dim(2), (h + 2 * pad - k) / stride + 1);
        EXPECT_EQ(y.dim(3), (h + 1 + 2 * pad - k) / stride + 1);
      }
    }
  }
}

TEST(Conv2d, ChannelMismatchIsAStructuredError) {
  auto x = Tensor::zeros({1, 2, 4, 4});
  auto w = Tensor::zeros({3, 4, 3, 3});
  try {
    conv2d(x, w, 1, 1);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::shape_mismatch);
  }
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  if (!kDouble) GTEST_SKIP() << "gradient oracles need 64-bit";
  std::mt19937_64 rng(42);
  for (std::size_t stride : {1u, 2u}) {
    auto x = as_leaf(random_like({1, 2, 5, 5}, rng));
    auto w = as_leaf(random_like({3, 2, 3, 3}, rng));
    auto b = as_leaf(random_like({3}, rng));
    const auto probe_shape = conv2d(x, w, b, stride, 1).shape();
    auto cot = random_like(probe_shape, rng);
    auto loss = [&] { return sum(conv2d(x, w, b, stride, 1) * cot); };
    expect_gradcheck(gradcheck(loss, {x, w, b}, {"input", "weight", "bias"}), 1e-6);
  }
}

TEST(Conv2d, IsLinearInBothArguments) {
  std::mt19937_64 rng(3);
  auto x = random_like({2, 3, 6, 6}, rng);
  auto y = random_like({2, 3, 6, 6}, rng);
  auto w = random_like({4, 3, 3, 3}, rng);
  auto v = random_like({4, 3, 3, 3}, rng);
  const real a = 1.7, b = -0.4;
  for (std::size_t stride : {1u, 2u}) {
    auto lhs = conv2d(x * a + y * b, w, stride, 1);
    auto rhs = conv2d(x, w, stride, 1) * a + conv2d(y, w, stride, 1) * b;
    auto lhs_w = conv2d(x, w * a + v * b, stride, 1);
    auto rhs_w = conv2d(x, w, stride, 1) * a + conv2d(x, v, stride, 1) * b;
    for (std::size_t i = 0; i < lhs.numel(); ++i) {
      EXPECT_NEAR(lhs.values()[i], rhs.values()[i], 1e-12);
      EXPECT_NEAR(lhs_w.values()[i], rhs_w.values()[i], 1e-12);
    }
  }
}

TEST(Upsample, ReplicatesEachPixelIntoABlock) {
  auto x = Tensor({1, 1, 2, 2}, {1, 2, 3, 4});
  auto y = upsample_nearest2x(x);
  const std::vector<real> expected{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  ASSERT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_EQ(y.values()[i], expected[i]);
}

TEST(Upsample, BlockMeanDownsampleInvertsIt) {
  std::mt19937_64 rng(5);
  auto x = random_like({2, 3, 3, 4}, rng);
  auto back = avg_pool2x2(upsample_nearest2x(x));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(back.values()[i], x.values()[i]);
}

TEST(Upsample, GradientsMatchFiniteDifferences) {
  if (!kDouble) GTEST_SKIP();
  std::mt19937_64 rng(6);
  auto x0 = random_like({1, 2, 3, 3}, rng);
  Tensor x(x0.shape(), {x0.values().begin(), x0.values().end()}, true);
  auto cot = random_like({1, 2, 6, 6}, rng);
  expect_gradcheck(gradcheck([&] { return sum(upsample_nearest2x(x) * cot); }, {x}), 1e-5);
  auto cot_pool = random_like({1, 2, 3, 3}, rng);
  auto x2 = random_like({1, 2, 6, 6}, rng);
  Tensor xp(x2.shape(), {x2.values().begin(), x2.values().end()}, true);
  expect_gradcheck(gradcheck([&] { return sum(avg_pool2x2(xp) * cot_pool); }, {xp}), 1e-5);
}

TEST(Elementwise, ActivationsAtReferencePoints) {
  EXPECT_DOUBLE_EQ(leaky_relu(Tensor::scalar(-1.0), 0.2).item(), -0.2);
  EXPECT_DOUBLE_EQ(leaky_relu(Tensor::scalar(3.0), 0.2).item(), 3.0);
  EXPECT_DOUBLE_EQ(relu(Tensor::scalar(-3.0)).item(), 0.0);
  EXPECT_DOUBLE_EQ(clamp_max(Tensor::scalar(5.0), 2.0).item(), 2.0);
  EXPECT_DOUBLE_EQ(abs(Tensor::scalar(-2.5)).item(), 2.5);
}

TEST(Elementwise, AbsSubgradientAtZeroIsZero) {
  Tensor x({3}, {-1.0, 0.0, 2.0}, true);
  backward(sum(abs(x)));
  EXPECT_EQ(x.grad()[0], -1.0);
  EXPECT_EQ(x.grad()[1], 0.0);
  EXPECT_EQ(x.grad()[2], 1.0);
}

TEST(Elementwise, DivisionByZeroIsRejected) {
  auto a = Tensor({2}, {1.0, 2.0});
  auto b = Tensor({2}, {1.0, 0.0});
  try {
    div(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::division_by_zero);
  }
}

TEST(Elementwise, OnlyScalarOrEqualShapeBroadcasts) {
  auto a = Tensor::zeros({2, 3});
  EXPECT_NO_THROW(a + Tensor::scalar(1.0));
  EXPECT_NO_THROW(Tensor::full({1}, 2.0) * a);
  EXPECT_THROW(a + Tensor::zeros({3, 2}), Error);
}

TEST(Elementwise, GradientsMatchFiniteDifferences) {
  if (!kDouble) GTEST_SKIP();
  std::mt19937_64 rng(7);
  auto mk = [&](Shape s, double lo, double hi) {
    auto t = random_like(s, rng, lo, hi);
    return Tensor(t.shape(), {t.values().begin(), t.values().end()}, true);
  };
  auto a = mk({2, 3}, -2, 2);
  auto b = mk({2, 3}, -2, 2);
  auto pos = mk({2, 3}, 0.5, 2);
  auto s = mk({}, -2, 2);
  auto cot = random_like({2, 3}, rng);
  expect_gradcheck(gradcheck([&] { return sum(mul(a, b) * cot); }, {a, b}, {"mul.a", "mul.b"}), 1e-5);
  expect_gradcheck(gradcheck([&] { return sum(div(a, pos) * cot); }, {a, pos}, {"div.a", "div.b"}), 1e-5);
  expect_gradcheck(gradcheck([&] { return sum(sub(a, b) * cot); }, {a, b}, {"sub.a", "sub.b"}), 1e-5);
  expect_gradcheck(gradcheck([&] { return sum(add(a, s) * cot); }, {a, s}, {"add.a", "add.scalar"}), 1e-5);
  expect_gradcheck(gradcheck([&] { return sum(abs(a) * cot); }, {a}, {"abs"}), 1e-5);
  expect_gradcheck(gradcheck([&] { return sum(relu(a) * cot); }, {a}, {"relu"}), 1e-5);
  expect_gradcheck(gradcheck([&] { return sum(leaky_relu(a, 0.2) * cot); }, {a}, {"leaky"}), 1e-5);
  expect_gradcheck(gradcheck([&] { return sum(clamp_max(a, 0.3) * cot); }, {a}, {"clampmax"}), 1e-5);
}

TEST(Reduce, ReferenceValues) {
  EXPECT_DOUBLE_EQ(l1_norm(Tensor({3}, {1, -2, 3})).item(), 6.0);
  auto c = Tensor::full({2, 3, 4}, 1.25);
  EXPECT_DOUBLE_EQ(mean(c).item(), 1.25);
  auto m = mean(c, {0, 2});
  ASSERT_EQ(m.shape(), (Shape{3}));
  for (auto v : m.values()) EXPECT_DOUBLE_EQ(v, 1.25);
  auto s = sum(Tensor({2, 2}, {1, 2, 3, 4}), {1});
  EXPECT_EQ(s.values()[0], 3);
  EXPECT_EQ(s.values()[1], 7);
}

TEST(Reduce, InvalidAxesAndEmptyInputsAreErrors) {
  auto t = Tensor::zeros({2, 2});
  EXPECT_THROW(sum(t, {2}), Error);
  EXPECT_THROW(sum(t, {0, 0}), Error);
  try {
    sum(Tensor::zeros({0, 3}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::empty_reduction);
  }
}

TEST(Reduce, GradientsMatchFiniteDifferences) {
  if (!kDouble) GTEST_SKIP();
  std::mt19937_64 rng(8);
  auto x0 = random_like({2, 3, 4}, rng);
  Tensor x(x0.shape(), {x0.values().begin(), x0.values().end()}, true);
  auto cot = random_like({3}, rng);
  expect_gradcheck(gradcheck([&] { return sum(sum(x, {0, 2}) * cot); }, {x}), 1e-5);
  expect_gradcheck(gradcheck([&] { return sum(mean(x, {0, 2}) * cot); }, {x}), 1e-5);
  expect_gradcheck(gradcheck([&] { return sum(l1_norm(x, {0, 2}) * cot); }, {x}), 1e-5);
}

TEST(Backward, SumGivesOnes) {
  Tensor x({2, 2}, {1, 2, 3, 4}, true);
  backward(sum(x));
  for (auto g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SquareGivesTwiceInput) {
  Tensor x({2}, {1, 2}, true);
  backward(sum(x * x));
  EXPECT_EQ(x.grad()[0], 2.0);
  EXPECT_EQ(x.grad()[1], 4.0);
}

TEST(Backward, RepeatedCallsAccumulateUntilReset) {
  Tensor x({2}, {1, 2}, true);
  auto loss = sum(x * x);
  backward(loss);
  backward(loss);
  EXPECT_EQ(x.grad()[1], 8.0);
  x.zero_grad();
  backward(loss);
  EXPECT_EQ(x.grad()[1], 4.0);
}

TEST(Backward, NonScalarLossIsRejected) {
  Tensor x({2}, {1, 2}, true);
  try {
    backward(x * x);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::non_scalar_loss);
  }
  EXPECT_THROW(backward(sum(Tensor({2}, {1, 2}))), Error);
}

TEST(Backward, SharedSubgraphsReceiveEveryContribution) {
  Tensor x({1}, {3.0}, true);
  auto y = x * x;
  backward(sum(y + y * x));  // d/dx (x^2 + x^3) = 2x + 3x^2
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0 + 27.0);
}

TEST(Concat, StacksChannelsAndSplitsGradients) {
  if (!kDouble) GTEST_SKIP();
  std::mt19937_64 rng(9);
  auto mk = [&](Shape s) {
    auto t = random_like(s, rng);
    return Tensor(t.shape(), {t.values().begin(), t.values().end()}, true);
  };
  auto a = mk({2, 1, 3, 3});
  auto b = mk({2, 2, 3, 3});
  auto cat = concat_channels({a, b});
  ASSERT_EQ(cat.shape(), (Shape{2, 3, 3, 3}));
  EXPECT_EQ(cat.values()[27 + 9], b.values()[18]);
  auto cot = random_like({2, 3, 3, 3}, rng);
  expect_gradcheck(gradcheck([&] { return sum(concat_channels({a, b}) * cot); }, {a, b}), 1e-5);
}

TEST(Determinism, SameSeedSameBits) {
  auto run = [] {
    std::mt19937_64 rng(11);
    auto x = random_like({1, 2, 6, 6}, rng);
    auto w = random_like({3, 2, 3, 3}, rng);
    return conv2d(leaky_relu(x, 0.2), w, 2, 1);
  };
  auto a = run(), b = run();
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.values()[i], b.values()[i]);
}

TEST(Leaves, OnlyLeavesAreMutable) {
  Tensor x({2}, {1, 2}, true);
  auto y = x * 2.0;
  EXPECT_NO_THROW(x.mutable_values());
  EXPECT_THROW(y.mutable_values(), Error);
}

}  // namespace
}  // namespace dphr
