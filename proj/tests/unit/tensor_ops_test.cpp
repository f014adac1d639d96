#include <gtest/gtest.h>

#include <vector>

#include "circuits/error.hpp"
#include "circuits/ops.hpp"
#include "circuits/tensor.hpp"
#include "reference.hpp"

using namespace circuits;

TEST(Shape, ElementsAndRank) {
  const Shape s{2, 3, 4};
  EXPECT_EQ(s.rank(), 3u);
  EXPECT_EQ(s.elements(), 24u);
  EXPECT_EQ(Shape{}.elements(), 1u);
  EXPECT_THROW(Shape({1, 2, 3, 4, 5}), ShapeError);
}

TEST(Tensor, SliceAndStack) {
  Tensor a(Shape{2, 2}, std::vector<double>{1, 2, 3, 4});
  Tensor b(Shape{2, 2}, std::vector<double>{5, 6, 7, 8});
  std::vector<Tensor> items{a, b};
  const Tensor s = Tensor::stack(items);
  EXPECT_EQ(s.shape(), (Shape{2, 2, 2}));
  EXPECT_EQ(s.slice(1), b);
  EXPECT_THROW(Tensor(Shape{2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Tensor, MaxAbsDiffRejectsShapeMismatch) {
  EXPECT_THROW(max_abs_diff(Tensor(Shape{2}), Tensor(Shape{3})), ShapeError);
  EXPECT_DOUBLE_EQ(max_abs_diff(Tensor(Shape{2}, std::vector<double>{1, 2}), Tensor(Shape{2}, std::vector<double>{1, -1})), 3.0);
}

TEST(Conv2d, AllOnesGivesNine) {
  const Tensor x(Shape{1, 3, 3}, 1.0);
  const Tensor w(Shape{1, 1, 3, 3}, 1.0);
  const std::vector<double> b{0.0};
  const Tensor y = conv2d_forward(x, w, b, {});
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1}));
  EXPECT_EQ(y[0], 9.0);
}

TEST(Conv2d, CenteredDeltaKernelIsIdentity) {
  const Tensor x = testkit::random_image(3, Shape{1, 5, 5});
  Tensor w(Shape{1, 1, 3, 3}, 0.0);
  w.at(0, 0, 1, 1) = 1.0;
  const std::vector<double> b{0.0};
  const Tensor y = conv2d_forward(x, w, b, {1, 1});
  EXPECT_EQ(y.reshaped(x.shape()), x);
}

TEST(Conv2d, MaskedKernelContributesNothing) {
  const Tensor x = testkit::random_image(5, Shape{2, 4, 4});
  const Tensor w = testkit::random_image(6, Shape{2, 2, 3, 3});
  const std::vector<double> b{0.25, -0.5};
  KernelGate gate = KernelGate::all_on(2, 2);
  gate.kernel_on[1 * 2 + 0] = 0;
  const Tensor y = conv2d_forward(x, w, b, {1, 1}, &gate);
  const Tensor k11 = conv2d_kernel_map(x, w, 1, 1, {1, 1});
  for (std::size_t h = 0; h < 4; ++h) {
    for (std::size_t v = 0; v < 4; ++v) EXPECT_EQ(y.at(1, h, v), k11.at(h, v) + b[1]);
  }
  const Tensor full = conv2d_forward(x, w, b, {1, 1});
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(y[i], full[i]);
}

TEST(Conv2d, GatedOffFilterIsZero) {
  const Tensor x(Shape{1, 3, 3}, 1.0);
  const Tensor w(Shape{2, 1, 3, 3}, 1.0);
  const std::vector<double> b{0.5, 0.5};
  KernelGate gate = KernelGate::all_on(2, 1);
  gate.filter_on[0] = 0;
  const Tensor y = conv2d_forward(x, w, b, {}, &gate);
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 9.5);
}

TEST(Conv2d, ShapeErrorsNameTheDimension) {
  const Tensor x(Shape{2, 3, 3}, 1.0);
  const Tensor w(Shape{1, 1, 3, 3}, 1.0);
  const std::vector<double> b{0.0};
  try {
    conv2d_forward(x, w, b, {});
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_FALSE(e.dimension().empty());
  }
  EXPECT_THROW(window_extent(2, 3, 1, 0, "height"), ShapeError);
  EXPECT_THROW(window_extent(16, 3, 2, 1, "width"), ShapeError);
  EXPECT_EQ(window_extent(16, 4, 2, 1, "width"), 8u);
}

TEST(Conv2d, MatchesReferenceLoopsWithStrideAndPadding) {
  const Tensor x = testkit::random_image(11, Shape{3, 9, 9});
  const Tensor w = testkit::random_image(12, Shape{4, 3, 3, 3});
  const std::vector<double> b{0.1, -0.2, 0.3, 0.0};
  const Tensor y = conv2d_forward(x, w, b, {2, 1});
  ASSERT_EQ(y.shape(), (Shape{4, 5, 5}));
  for (std::size_t co = 0; co < 4; ++co) {
    for (std::size_t oh = 0; oh < 5; ++oh) {
      for (std::size_t ow = 0; ow < 5; ++ow) {
        double acc = b[co];
        for (std::size_t ci = 0; ci < 3; ++ci) {
          for (std::size_t kh = 0; kh < 3; ++kh) {
            for (std::size_t kw = 0; kw < 3; ++kw) {
              const long ih = static_cast<long>(oh * 2 + kh) - 1, iw = static_cast<long>(ow * 2 + kw) - 1;
              if (ih < 0 || iw < 0 || ih >= 9 || iw >= 9) continue;
              acc += w.at(co, ci, kh, kw) * x.at(ci, static_cast<std::size_t>(ih), static_cast<std::size_t>(iw));
            }
          }
        }
        EXPECT_NEAR(y.at(co, oh, ow), acc, 1e-12);
      }
    }
  }
}

TEST(Relu, ClampsNegatives) {
  const Tensor x(Shape{3}, std::vector<double>{-1, 0, 2});
  EXPECT_EQ(relu_forward(x).values(), (std::vector<double>{0, 0, 2}));
}

TEST(MaxPool, PicksMaximum) {
  const Tensor x(Shape{1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  std::vector<std::size_t> argmax;
  const Tensor y = max_pool_forward(x, {2, 2, 0}, argmax);
  ASSERT_EQ(y.size(), 1u);
  EXPECT_EQ(y[0], 4.0);
  EXPECT_EQ(argmax[0], 3u);
}

TEST(MaxPool, TiesGoToFirstInScanOrder) {
  const Tensor x(Shape{1, 2, 2}, 7.0);
  std::vector<std::size_t> argmax;
  max_pool_forward(x, {2, 2, 0}, argmax);
  EXPECT_EQ(argmax[0], 0u);
}

TEST(AvgPool, PaddingCountsTowardDivisor) {
  const Tensor x(Shape{1, 2, 2}, 4.0);
  const Tensor y = avg_pool_forward(x, {2, 2, 1});
  ASSERT_EQ(y.shape(), (Shape{1, 2, 2}));
  EXPECT_DOUBLE_EQ(y[0], 1.0);
}

TEST(Add, ZeroIsIdentity) {
  const Tensor x = testkit::random_image(2, Shape{2, 3, 3});
  EXPECT_EQ(add_forward(x, Tensor(x.shape(), 0.0)), x);
  EXPECT_THROW(add_forward(x, Tensor(Shape{2, 3, 4})), ShapeError);
}

TEST(Linear, ComputesAffineMap) {
  const Tensor x(Shape{1, 1, 2}, std::vector<double>{1, 2});
  const Tensor w(Shape{2, 2}, std::vector<double>{1, 1, 2, -1});
  const std::vector<double> b{0.5, 0};
  EXPECT_EQ(linear_forward(x, w, b).values(), (std::vector<double>{3.5, 0}));
}
