#include <gtest/gtest.h>

#include <functional>

#include "circuits/autodiff.hpp"
#include "circuits/error.hpp"
#include "reference.hpp"

using namespace circuits;
using circuits::testkit::random_image;
using circuits::testkit::relative_error;

namespace {

double dot(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double central_difference(const std::function<double()>& f, double& x, double h = 1e-6) {
  const double keep = x;
  x = keep + h;
  const double up = f();
  x = keep - h;
  const double down = f();
  x = keep;
  return (up - down) / (2 * h);
}

}  // namespace

TEST(Autodiff, SumOfInputHasUnitGradient) {
  EvalContext ctx;
  const ValueId x = ctx.input(random_image(1, Shape{2, 3, 3}));
  ctx.backward(x, Tensor(Shape{2, 3, 3}, 1.0));
  for (double g : ctx.gradient(x).values()) EXPECT_EQ(g, 1.0);
}

TEST(Autodiff, SecondBackwardIsRejected) {
  EvalContext ctx;
  const ValueId x = ctx.input(Tensor(Shape{1, 2, 2}, 1.0));
  const ValueId y = ctx.relu(x);
  ctx.backward(y, Tensor(Shape{1, 2, 2}, 1.0));
  EXPECT_THROW(ctx.backward(y, Tensor(Shape{1, 2, 2}, 1.0)), ContextError);
  EvalContext plain(false);
  const ValueId z = plain.input(Tensor(Shape{1, 2, 2}, 1.0));
  EXPECT_THROW(plain.backward(z, Tensor(Shape{1, 2, 2}, 1.0)), ContextError);
}

TEST(Autodiff, ConvGradientsMatchFiniteDifferences) {
  Tensor x = random_image(2, Shape{2, 5, 5});
  Tensor w = random_image(3, Shape{3, 2, 3, 3});
  std::vector<double> b{0.1, -0.3, 0.2};
  const Tensor probe = random_image(4, Shape{3, 3, 3});
  const ConvGeometry geo{2, 1};
  auto f = [&] { return dot(conv2d_forward(x, w, b, geo), probe); };

  EvalContext ctx;
  const ValueId in = ctx.input(x);
  const ValueId out = ctx.conv2d(in, 7, w, b, geo);
  ctx.backward(out, probe);
  const Tensor gx = ctx.gradient(in);
  const ParameterGradient& gp = ctx.parameter_gradient(7);

  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_LT(relative_error(gx[i], central_difference(f, x[i])), 1e-6);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_LT(relative_error(gp.weights[i], central_difference(f, w[i])), 1e-6);
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_LT(relative_error(gp.bias[i], central_difference(f, b[i])), 1e-6);
}

TEST(Autodiff, ThreeLayerChainMatchesFiniteDifferences) {
  Tensor x = random_image(5, Shape{1, 8, 8});
  Tensor w1 = random_image(6, Shape{2, 1, 3, 3});
  Tensor w2 = random_image(7, Shape{2, 2, 3, 3});
  Tensor wl = random_image(8, Shape{3, 8});
  std::vector<double> b1{0.05, -0.05}, b2{0.1, 0.0}, bl{0, 0, 0};
  const Tensor probe(Shape{3}, std::vector<double>{0.3, -1.2, 0.7});

  auto forward = [&](EvalContext& ctx) {
    const ValueId in = ctx.input(x);
    ValueId v = ctx.conv2d(in, 1, w1, b1, {1, 1});
    v = ctx.relu(v);
    v = ctx.avg_pool(v, {2, 2, 0});
    v = ctx.conv2d(v, 2, w2, b2, {1, 0});
    v = ctx.relu(v);
    v = ctx.flatten(v);
    v = ctx.linear(v, 3, wl, bl);
    return std::pair{in, v};
  };
  auto f = [&] {
    EvalContext ctx(false);
    return dot(ctx.value(forward(ctx).second), probe);
  };

  EvalContext ctx;
  const auto [in, out] = forward(ctx);
  ctx.backward(out, probe);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_LT(relative_error(ctx.gradient(in)[i], central_difference(f, x[i])), 1e-5);
  for (std::size_t i = 0; i < w1.size(); ++i)
    EXPECT_LT(relative_error(ctx.parameter_gradient(1).weights[i], central_difference(f, w1[i])), 1e-5);
  for (std::size_t i = 0; i < w2.size(); ++i)
    EXPECT_LT(relative_error(ctx.parameter_gradient(2).weights[i], central_difference(f, w2[i])), 1e-5);
  for (std::size_t i = 0; i < wl.size(); ++i)
    EXPECT_LT(relative_error(ctx.parameter_gradient(3).weights[i], central_difference(f, wl[i])), 1e-5);
}

TEST(Autodiff, MaxPoolRoutesGradientToArgmax) {
  EvalContext ctx;
  const ValueId in = ctx.input(Tensor(Shape{1, 2, 2}, std::vector<double>{1, 5, 3, 2}));
  const ValueId out = ctx.max_pool(in, {2, 2, 0});
  ctx.backward(out, Tensor(Shape{1, 1, 1}, 2.0));
  EXPECT_EQ(ctx.gradient(in).values(), (std::vector<double>{0, 2, 0, 0}));
}

TEST(Autodiff, KernelActivationMapsSumToFilterOutput) {
  const Tensor x = random_image(9, Shape{3, 4, 4});
  const Tensor w = random_image(10, Shape{2, 3, 3, 3});
  const std::vector<double> b{0.4, -0.1};
  EvalContext ctx;
  const ValueId out = ctx.conv2d(ctx.input(x), 0, w, b, {1, 1});
  const Tensor& y = ctx.value(out);
  for (std::size_t co = 0; co < 2; ++co) {
    Tensor acc(Shape{4, 4}, b[co]);
    for (std::size_t ci = 0; ci < 3; ++ci) {
      const Tensor a = ctx.kernel_activation(out, co, ci);
      for (std::size_t i = 0; i < 16; ++i) acc[i] += a[i];
    }
    for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(acc[i], y[co * 16 + i], 1e-12);
  }
}

TEST(Autodiff, GradientsAccumulateAcrossBranches) {
  EvalContext ctx;
  const ValueId in = ctx.input(Tensor(Shape{1, 1, 2}, std::vector<double>{1, -1}));
  const ValueId r = ctx.relu(in);
  const ValueId s = ctx.add(in, r);
  ctx.backward(s, Tensor(Shape{1, 1, 2}, 1.0));
  EXPECT_EQ(ctx.gradient(in).values(), (std::vector<double>{2, 1}));
}
