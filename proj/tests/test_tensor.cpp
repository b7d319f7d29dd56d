#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "sst/optim.hpp"
#include "sst/ops.hpp"

using namespace sst;
using sst::testing::gradcheck;

using TD = Tensor<double>;

TEST(Tensor, ConstructionInvariants) {
  TD t({2, 3}, 1.5);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_FALSE(t.grad().defined());
  EXPECT_THROW(TD({2, 0}), ShapeError);
  EXPECT_THROW(TD({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Tensor, SigmoidOfZeroIsHalf) {
  EXPECT_DOUBLE_EQ(sigmoid(TD::scalar(0.0)).item(), 0.5);
}

TEST(Tensor, FrobeniusOfIdentity) {
  TD eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_DOUBLE_EQ(frobenius_sq(eye).item(), 3.0);
}

TEST(Tensor, ShapeMismatchNamesKernelAndShapes) {
  TD a({2, 3}), b({3, 2});
  try {
    add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("add"), std::string::npos);
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
    EXPECT_NE(msg.find("[3x2]"), std::string::npos);
  }
  EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(Tensor, MatmulGradientMatchesFiniteDifferences) {
  Rng rng(1);
  auto a = TD::randn({3, 4}, rng);
  auto b = TD::randn({4, 2}, rng);
  auto w = TD::randn({3, 2}, rng);
  auto r = gradcheck([&](const auto& in) { return sum(mul(matmul(in[0], in[1]), w)); }, {a, b});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Tensor, ElementwiseKernelsPassFiniteDifferences) {
  Rng rng(2);
  auto x = TD::uniform({2, 5}, rng, 0.2, 2.0);
  auto y = TD::randn({2, 5}, rng);
  auto r = gradcheck(
      [](const auto& in) {
        auto t = add(mul(sigmoid(in[1]), log(in[0])), div(exp(mul_scalar(in[1], 0.3)), in[0]));
        t = sub(t, leaky_relu(in[1], 0.2));
        t = add(t, relu(mul(in[0], in[1])));
        return add(mean(square(t)), frobenius_sq(softplus(in[1])));
      },
      {x, y});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Tensor, LayoutKernelsPassFiniteDifferences) {
  Rng rng(3);
  auto x = TD::randn({2, 3, 4}, rng);
  auto b = TD::randn({3}, rng);
  auto w = TD::randn({3, 2, 4}, rng);
  auto r = gradcheck(
      [&](const auto& in) {
        auto t = add_bias(in[0], in[1], 1);
        auto parts = concat(std::vector<TD>{slice(t, 2, 1, 2), slice(t, 2, 0, 2)}, 2);
        auto tiled = sum0(tile0(reshape(parts, {2, 3, 4}), 2));
        auto mixed = mode_product(tiled, transpose(reshape(slice(reshape(w, {24}), 0, 0, 6), {2, 3})), 1);
        return frobenius_sq(mixed);
      },
      {x, b});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Softplus, ClosedFormsAndStability) {
  EXPECT_NEAR(softplus(TD::scalar(0.0)).item(), std::log(2.0), 1e-12);
  EXPECT_NEAR(softplus(TD::scalar(50.0)).item(), 50.0, 1e-9);
  EXPECT_TRUE(std::isfinite(softplus(TD::scalar(1000.0)).item()));
  EXPECT_NEAR(softplus(TD::scalar(-1000.0)).item(), 0.0, 1e-300);
}

TEST(Softplus, DerivativeIsSigmoid) {
  const double h = 1e-5, x = 0.3;
  const double fd = (softplus_value(x + h) - softplus_value(x - h)) / (2 * h);
  auto t = TD::scalar(x);
  t.set_requires_grad();
  auto g = grad(softplus(t), {t})[0];
  EXPECT_NEAR(g.item(), fd, 1e-6);
  EXPECT_NEAR(g.item(), 1.0 / (1.0 + std::exp(-x)), 1e-6);
}

TEST(Backward, SumGivesOnes) {
  auto p = TD({2, 2}, {1, -2, 3, 4});
  p.set_requires_grad();
  backward(sum(p));
  for (double v : p.grad().data()) EXPECT_EQ(v, 1.0);
}

TEST(Backward, FrobeniusGivesTwiceP) {
  auto p = TD({3}, {1, -2, 0.5});
  p.set_requires_grad();
  backward(frobenius_sq(p));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(p.grad()[i], 2 * p[i]);
}

TEST(Backward, RejectsNonScalarLoss) {
  auto p = TD({3}, 1.0);
  p.set_requires_grad();
  EXPECT_THROW(backward(mul_scalar(p, 2.0)), ShapeError);
}

TEST(Backward, SharedNodeAccumulates) {
  // f(x) = sum(y * y + 3 y), y = x^2  ->  df/dx = (2y + 3) * 2x
  auto x = TD({3}, {0.5, -1.0, 2.0});
  x.set_requires_grad();
  auto y = square(x);
  auto f = sum(add(mul(y, y), mul_scalar(y, 3.0)));
  backward(f);
  for (std::size_t i = 0; i < 3; ++i) {
    const double xi = x[i], yi = xi * xi;
    EXPECT_NEAR(x.grad()[i], (2 * yi + 3) * 2 * xi, 1e-12);
  }
}

TEST(Backward, GradAccumulatesAcrossCalls) {
  auto x = TD({2}, {1.0, 2.0});
  x.set_requires_grad();
  backward(sum(x));
  backward(sum(x));
  EXPECT_EQ(x.grad()[0], 2.0);
}

TEST(Backward, SecondOrderThroughElementwiseOps) {
  // d/dx [ (d/dx sum(x^3 sigmoid(x)))^2 summed ] against finite differences.
  Rng rng(4);
  auto x = TD::randn({4}, rng);
  auto r = gradcheck(
      [](const auto& in) {
        auto y = sum(mul(mul(in[0], square(in[0])), sigmoid(in[0])));
        auto g = grad(y, {in[0]}, true)[0];
        return frobenius_sq(g);
      },
      {x});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Backward, NoGradSkipsRecording) {
  auto x = TD({2}, 1.0);
  x.set_requires_grad();
  NoGrad off;
  auto y = mul_scalar(x, 2.0);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Optimizer, StepDecreasesQuadratic) {
  auto w = TD::scalar(1.0);
  w.set_requires_grad();
  Adam<double> opt({{"w", w}}, AdamConfig{0.1, 0.9, 0.999, 1e-8});
  backward(square(w));
  opt.step();
  EXPECT_LT(std::abs(w.item()), 1.0);
}

TEST(Optimizer, ZeroGradientLeavesParameters) {
  auto w = TD({2}, {0.3, -0.7});
  w.set_requires_grad();
  Adam<double> opt({{"w", w}}, AdamConfig{});
  backward(mul_scalar(sum(w), 0.0));
  opt.step();
  EXPECT_EQ(w[0], 0.3);
  EXPECT_EQ(w[1], -0.7);
}

TEST(Optimizer, ConvexQuadraticConverges) {
  // f(w) = sum a_i (w_i - c_i)^2, minimum at c.
  TD a({3}, {1.0, 2.0, 0.5});
  TD c({3}, {0.4, -1.3, 2.0});
  TD w({3}, 0.0);
  w.set_requires_grad();
  Adam<double> opt({{"w", w}}, AdamConfig{0.05, 0.9, 0.999, 1e-8});
  for (int step = 0; step < 500; ++step) {
    opt.zero_grad();
    backward(sum(mul(a, square(sub(w, c)))));
    opt.step();
    if (step > 400) opt.config().lr = 1e-3;
  }
  double dist = 0.0;
  for (std::size_t i = 0; i < 3; ++i) dist += (w[i] - c[i]) * (w[i] - c[i]);
  EXPECT_LT(std::sqrt(dist), 1e-3);
  EXPECT_EQ(opt.state().step, 500u);
}

TEST(Optimizer, NanGradientAbortsStep) {
  auto w = TD({2}, {1.0, 2.0});
  w.set_requires_grad();
  Adam<double> opt({{"w", w}}, AdamConfig{});
  backward(sum(mul(w, TD({2}, {std::nan(""), 1.0}))));
  EXPECT_THROW(opt.step(), NumericError);
  EXPECT_EQ(w[0], 1.0);
  EXPECT_EQ(w[1], 2.0);
  EXPECT_EQ(opt.state().step, 0u);
}
