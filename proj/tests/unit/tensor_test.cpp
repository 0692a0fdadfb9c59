#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "stylespace/tensor/optim.hpp"

namespace stylespace {
namespace {

using testing::gradcheck;
using testing::random_tensor;
using testing::weighted_sum;

constexpr double kGradTol = 1e-4;

// Six nested loops over the definition of a cross-correlation.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& k, std::size_t stride,
                          std::size_t pad) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t o = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1, wo = (w + 2 * pad - kw) / stride + 1;
  Tensor<double> y(Shape{n, o, ho, wo});
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t oi = 0; oi < o; ++oi)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
          double acc = 0;
          for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t a = 0; a < kh; ++a)
              for (std::size_t b = 0; b < kw; ++b) {
                const long yy = static_cast<long>(i * stride + a) - static_cast<long>(pad);
                const long xx = static_cast<long>(j * stride + b) - static_cast<long>(pad);
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w))
                  continue;
                acc += x[((ni * c + ci) * h + yy) * w + xx] * k[((oi * c + ci) * kh + a) * kw + b];
              }
          y[((ni * o + oi) * ho + i) * wo + j] = acc;
        }
  return y;
}

TEST(Conv2d, UnitKernelIsIdentity) {
  Tape<double> tape;
  RngStream rng(1, 0);
  auto xt = random_tensor(rng, {1, 1, 4, 5});
  auto y = conv2d(tape.constant(xt), tape.constant(Tensor<double>(Shape{1, 1, 1, 1}, 1.0)), 1, 0);
  EXPECT_EQ(y.value(), xt);
}

TEST(Conv2d, AllOnesSumsWindow) {
  Tape<double> tape;
  auto y = conv2d(tape.constant(Tensor<double>(Shape{1, 1, 3, 3}, 1.0)),
                  tape.constant(Tensor<double>(Shape{1, 1, 3, 3}, 1.0)), 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(y.value().item(), 9.0);
}

TEST(Conv2d, MatchesNaiveLoops) {
  RngStream rng(2, 0);
  auto xt = random_tensor(rng, {2, 3, 8, 8});
  auto kt = random_tensor(rng, {4, 3, 3, 3});
  Tape<double> tape;
  auto y = conv2d(tape.constant(xt), tape.constant(kt), 2, 1);
  ASSERT_EQ(y.shape(), (Shape{2, 4, 4, 4}));
  const auto ref = naive_conv(xt, kt, 2, 1);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.value()[i], ref[i], 1e-12);
}

TEST(Conv2d, ShapeErrors) {
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>(Shape{1, 2, 4, 4}));
  EXPECT_THROW(conv2d(x, tape.constant(Tensor<double>(Shape{1, 3, 3, 3})), 1, 0), ShapeError);
  EXPECT_THROW(conv2d(x, tape.constant(Tensor<double>(Shape{1, 2, 7, 7})), 1, 1), ShapeError);
  EXPECT_THROW(conv2d(x, tape.constant(Tensor<double>(Shape{1, 2, 3, 3})), 0, 0), ShapeError);
}

TEST(WeightNormalize, UnitAndGain) {
  Tape<double> tape;
  auto dir = tape.constant(Tensor<double>(Shape{1, 2}, {3.0, 4.0}));
  auto w1 = weight_normalize(dir, tape.constant(Tensor<double>::vector({1.0})));
  EXPECT_NEAR(w1.value()[0], 0.6, 1e-15);
  EXPECT_NEAR(w1.value()[1], 0.8, 1e-15);
  auto w5 = weight_normalize(dir, tape.constant(Tensor<double>::vector({5.0})));
  EXPECT_NEAR(w5.value()[0], 3.0, 1e-14);
  EXPECT_NEAR(w5.value()[1], 4.0, 1e-14);
}

TEST(WeightNormalize, RowNormsEqualGain) {
  RngStream rng(3, 0);
  Tape<double> tape;
  auto gains = random_tensor(rng, {8});
  auto w = weight_normalize(tape.constant(random_tensor(rng, {8, 16})), tape.constant(gains));
  for (std::size_t o = 0; o < 8; ++o) {
    double sq = 0;
    for (std::size_t i = 0; i < 16; ++i) sq += w.value()[o * 16 + i] * w.value()[o * 16 + i];
    EXPECT_NEAR(std::sqrt(sq), std::abs(gains[o]), 1e-6);
  }
}

TEST(WeightNormalize, ZeroDirectionThrows) {
  Tape<double> tape;
  EXPECT_THROW(weight_normalize(tape.constant(Tensor<double>(Shape{2, 3})),
                                tape.constant(Tensor<double>(Shape{2}, 1.0))),
               NumericError);
}

TEST(Elementwise, Examples) {
  Tape<double> tape;
  auto p = slice_prefix(tape.constant(Tensor<double>::vector({5, 7, 9})), 2);
  EXPECT_EQ(p.value(), Tensor<double>::vector({5, 7}));
  EXPECT_DOUBLE_EQ(leaky_relu(tape.constant(Tensor<double>::scalar(-2)), 0.1).value().item(),
                   -0.2);
  EXPECT_DOUBLE_EQ(sum(square(tape.constant(Tensor<double>::vector({3, 4})))).value().item(), 25);
  EXPECT_THROW(add(tape.constant(Tensor<double>(Shape{2, 3})),
                   tape.constant(Tensor<double>(Shape{2, 4}))),
               ShapeError);
}

TEST(Elementwise, BroadcastSemantics) {
  Tape<double> tape;
  auto a = tape.constant(Tensor<double>(Shape{2, 3}, {1, 2, 3, 4, 5, 6}));
  auto b = tape.constant(Tensor<double>::vector({10, 20, 30}));
  auto c = tape.constant(Tensor<double>(Shape{2, 1}, {100, 200}));
  EXPECT_EQ(add(a, b).value(), Tensor<double>(Shape{2, 3}, {11, 22, 33, 14, 25, 36}));
  EXPECT_EQ(add(a, c).value(), Tensor<double>(Shape{2, 3}, {101, 102, 103, 204, 205, 206}));
}

TEST(Resample, ConstantImages) {
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>(Shape{1, 2, 4, 4}, 0.7));
  auto down = resample(x, ResampleMode::kDownscale2xAvg);
  auto up = resample(x, ResampleMode::kUpscale2xNearest);
  EXPECT_EQ(down.value(), Tensor<double>(Shape{1, 2, 2, 2}, 0.7));
  EXPECT_EQ(up.value(), Tensor<double>(Shape{1, 2, 8, 8}, 0.7));
}

TEST(Resample, BlockAverageAndComposition) {
  Tape<double> tape;
  auto block = tape.constant(Tensor<double>(Shape{1, 1, 2, 2}, {1, 2, 3, 4}));
  EXPECT_DOUBLE_EQ(resample(block, ResampleMode::kDownscale2xAvg).value().item(), 2.5);
  RngStream rng(4, 0);
  auto xt = random_tensor(rng, {2, 3, 5, 7});
  auto back = resample(resample(tape.constant(xt), ResampleMode::kUpscale2xNearest),
                       ResampleMode::kDownscale2xAvg);
  EXPECT_EQ(back.value(), xt);
  EXPECT_THROW(resample(tape.constant(Tensor<double>(Shape{1, 1, 3, 4})),
                        ResampleMode::kDownscale2xAvg),
               ShapeError);
}

TEST(Backward, ClosedForms) {
  {
    Tape<double> tape;
    auto x = tape.leaf(Tensor<double>::scalar(3.0));
    tape.backward(square(x));
    EXPECT_DOUBLE_EQ(tape.grad(x).item(), 6.0);
  }
  {
    Tape<double> tape;
    auto t = tape.leaf(Tensor<double>::scalar(1.0));
    tape.backward(exp(neg(square(t))));
    EXPECT_NEAR(tape.grad(t).item(), -2.0 * std::exp(-1.0), 1e-15);
  }
}

TEST(Backward, RejectsNonScalarLoss) {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>::vector({1, 2}));
  EXPECT_THROW(tape.backward(square(x)), ShapeError);
}

TEST(Backward, NonFiniteValuesAreErrors) {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>::vector({-1.0}));
  EXPECT_THROW(log(x), NumericError);
}

TEST(Backward, ParameterGradientsAccumulate) {
  Parameter<double> p{"w", Tensor<double>::scalar(2.0), {}};
  Tape<double> tape;
  auto a = tape.parameter(p);
  auto b = tape.parameter(p);
  tape.backward(mul(a, b));  // d(w*w)/dw through two bindings
  EXPECT_DOUBLE_EQ(p.grad.item(), 4.0);
  Tape<double> again;
  again.backward(scale(again.parameter(p), 3.0));
  EXPECT_DOUBLE_EQ(p.grad.item(), 7.0);
}

TEST(Backward, UntrackedParameterGetsNoGradient) {
  Parameter<double> p{"w", Tensor<double>::scalar(2.0), {}};
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>::scalar(5.0));
  tape.backward(mul(tape.parameter(p, false), x));
  EXPECT_FALSE(p.has_grad());
  EXPECT_DOUBLE_EQ(tape.grad(x).item(), 2.0);
}

// Finite-difference checks of every registered op at f64.
class GradientSuite : public ::testing::Test {
 protected:
  RngStream rng{12345, 7};
};

TEST_F(GradientSuite, Elementwise) {
  auto a = random_tensor(rng, {3, 4});
  auto b = random_tensor(rng, {3, 4});
  auto row = random_tensor(rng, {4});
  auto pos = random_tensor(rng, {3, 4}, 0.5, 2.0);
  const std::vector<std::pair<const char*, testing::LossFn>> cases = {
      {"add", [](auto&, const auto& v) { return weighted_sum(add(v[0], v[1])); }},
      {"sub", [](auto&, const auto& v) { return weighted_sum(sub(v[0], v[1])); }},
      {"mul", [](auto&, const auto& v) { return weighted_sum(mul(v[0], v[1])); }},
      {"scale", [](auto&, const auto& v) { return weighted_sum(scale(v[0], 1.7)); }},
      {"add_scalar", [](auto&, const auto& v) { return weighted_sum(add_scalar(v[0], 0.3)); }},
      {"neg", [](auto&, const auto& v) { return weighted_sum(neg(v[0])); }},
      {"exp", [](auto&, const auto& v) { return weighted_sum(exp(v[0])); }},
      {"square", [](auto&, const auto& v) { return weighted_sum(square(v[0])); }},
      {"tanh", [](auto&, const auto& v) { return weighted_sum(tanh(v[0])); }},
      {"sigmoid", [](auto&, const auto& v) { return weighted_sum(sigmoid(v[0])); }},
      {"leaky_relu", [](auto&, const auto& v) { return weighted_sum(leaky_relu(v[0], 0.2)); }},
      {"clamp", [](auto&, const auto& v) { return weighted_sum(clamp(v[0], -1.0, 1.0)); }},
      {"sum", [](auto&, const auto& v) { return sum(square(v[0])); }},
      {"mean", [](auto&, const auto& v) { return mean(square(v[0])); }},
      {"sum_axis", [](auto&, const auto& v) { return weighted_sum(sum_axis(v[0], 0)); }},
      {"mean_axis", [](auto&, const auto& v) { return weighted_sum(mean_axis(v[0], 1)); }},
      {"reshape", [](auto&, const auto& v) { return weighted_sum(reshape(v[0], {2, 6})); }},
      {"concat", [](auto&, const auto& v) { return weighted_sum(concat<double>({v[0], v[1]}, 1)); }},
      {"slice", [](auto&, const auto& v) { return weighted_sum(slice(v[0], 1, 1, 3)); }},
      {"slice_prefix", [](auto&, const auto& v) { return weighted_sum(slice_prefix(v[0], 2)); }},
  };
  for (const auto& [name, fn] : cases) {
    EXPECT_LT(gradcheck({a, b}, fn), kGradTol) << name;
  }
  EXPECT_LT(gradcheck({a, row}, [](auto&, const auto& v) { return weighted_sum(mul(v[0], v[1])); }),
            kGradTol)
      << "broadcast mul";
  EXPECT_LT(gradcheck({a, pos}, [](auto&, const auto& v) { return weighted_sum(div(v[0], v[1])); }),
            kGradTol)
      << "div";
  EXPECT_LT(gradcheck({pos}, [](auto&, const auto& v) { return weighted_sum(log(v[0])); }),
            kGradTol)
      << "log";
}

TEST_F(GradientSuite, DenseAndConv) {
  auto x = random_tensor(rng, {3, 5});
  auto w = random_tensor(rng, {4, 5});
  auto bias = random_tensor(rng, {4});
  auto m = random_tensor(rng, {5, 2});
  EXPECT_LT(gradcheck({x, m}, [](auto&, const auto& v) { return weighted_sum(matmul(v[0], v[1])); }),
            kGradTol);
  EXPECT_LT(gradcheck({x, w, bias},
                      [](auto&, const auto& v) { return weighted_sum(linear(v[0], v[1], v[2])); }),
            kGradTol);
  auto img = random_tensor(rng, {2, 3, 6, 6});
  auto k = random_tensor(rng, {2, 3, 3, 3});
  auto kb = random_tensor(rng, {2});
  for (std::size_t stride : {1u, 2u}) {
    EXPECT_LT(gradcheck({img, k, kb},
                        [stride](auto&, const auto& v) {
                          return weighted_sum(conv2d(v[0], v[1], v[2], stride, 1));
                        }),
              kGradTol)
        << "conv2d stride " << stride;
  }
  auto dir = random_tensor(rng, {3, 2, 2, 2});
  auto gain = random_tensor(rng, {3});
  EXPECT_LT(gradcheck({dir, gain},
                      [](auto&, const auto& v) { return weighted_sum(weight_normalize(v[0], v[1])); }),
            kGradTol);
}

TEST_F(GradientSuite, SpatialAndDistance) {
  auto img = random_tensor(rng, {2, 2, 4, 4});
  EXPECT_LT(gradcheck({img},
                      [](auto&, const auto& v) {
                        return weighted_sum(resample(v[0], ResampleMode::kDownscale2xAvg));
                      }),
            kGradTol);
  EXPECT_LT(gradcheck({img},
                      [](auto&, const auto& v) {
                        return weighted_sum(resample(v[0], ResampleMode::kUpscale2xNearest));
                      }),
            kGradTol);
  EXPECT_LT(gradcheck({img}, [](auto&, const auto& v) { return weighted_sum(global_avg_pool(v[0])); }),
            kGradTol);
  const std::vector<PatchPos> patches = {{0, 0, 0}, {1, 1, 2}, {0, 1, 1}, {0, 1, 1}};
  EXPECT_LT(gradcheck({img},
                      [&](auto&, const auto& v) { return weighted_sum(crop_patches(v[0], patches, 2)); }),
            kGradTol);
  auto a = random_tensor(rng, {3, 5});
  auto b = random_tensor(rng, {4, 5});
  EXPECT_LT(gradcheck({a, b},
                      [](auto&, const auto& v) { return weighted_sum(prefix_sq_dist(v[0], v[1])); }),
            kGradTol);
}

TEST(Backward, Linearity) {
  RngStream rng(77, 0);
  auto xt = random_tensor(rng, {4, 3});
  auto grad_of = [&](double a, double b) {
    Tape<double> tape;
    auto x = tape.leaf(xt);
    auto l1 = sum(exp(neg(square(x))));
    auto l2 = sum(tanh(x));
    tape.backward(add(scale(l1, a), scale(l2, b)));
    return tape.grad(x);
  };
  const double a = 0.7, b = -1.3;
  auto g = grad_of(a, b);
  auto g1 = grad_of(1, 0);
  auto g2 = grad_of(0, 1);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], a * g1[i] + b * g2[i], 1e-10);
}

TEST(Determinism, SameSeedSameOpsBitIdentical) {
  auto run = [] {
    RngStream rng(5, 5);
    Tape<float> tape;
    auto x = tape.leaf(sample_gaussian<float>(rng, {2, 3, 8, 8}));
    auto k = tape.leaf(sample_gaussian<float>(rng, {4, 3, 3, 3}));
    auto y = sum(square(leaky_relu(conv2d(x, k, 1, 1), 0.2f)));
    tape.backward(y);
    return std::make_pair(y.value(), tape.grad(k));
  };
  EXPECT_EQ(run(), run());
}

TEST(Optimizer, AdamFirstStep) {
  Parameter<double> p{"p", Tensor<double>::scalar(1.0), Tensor<double>::scalar(1.0)};
  Optimizer<double> opt({OptimizerKind::kAdam, 1e-4});
  opt.step({&p});
  EXPECT_NEAR(1.0 - p.value.item(), 1e-4, 1e-6);
}

TEST(Optimizer, ZeroGradientLeavesParameter) {
  for (auto kind : {OptimizerKind::kAdam, OptimizerKind::kRmsProp}) {
    Parameter<double> p{"p", Tensor<double>::vector({0.5, -2.0}), Tensor<double>(Shape{2})};
    Optimizer<double> opt({kind, 1e-3});
    opt.step({&p});
    EXPECT_EQ(p.value, Tensor<double>::vector({0.5, -2.0}));
  }
}

TEST(Optimizer, RmsPropConstantGradientStep) {
  const double lr = 1e-3, g = -0.37;
  Parameter<double> p{"p", Tensor<double>::scalar(0.0), Tensor<double>::scalar(g)};
  Optimizer<double> opt({OptimizerKind::kRmsProp, lr});
  double before = 0;
  for (int i = 0; i < 2000; ++i) {
    before = p.value.item();
    opt.step({&p});
  }
  const double step = p.value.item() - before;
  EXPECT_NEAR(step, -lr * g / std::abs(g), 1e-3 * lr);
}

TEST(Optimizer, MissingGradientThrows) {
  Parameter<double> p{"p", Tensor<double>::scalar(1.0), {}};
  Optimizer<double> opt({OptimizerKind::kAdam, 1e-4});
  EXPECT_THROW(opt.step({&p}), Error);
}

TEST(Gaussian, Deterministic) {
  RngStream a(9, 1), b(9, 1), c(9, 2);
  auto ta = sample_gaussian<float>(a, {64});
  EXPECT_EQ(ta, sample_gaussian<float>(b, {64}));
  EXPECT_NE(ta, sample_gaussian<float>(c, {64}));
}

TEST(Gaussian, Moments) {
  RngStream rng(2024, 0);
  auto t = sample_gaussian<double>(rng, {1000000});
  double m = 0, v = 0;
  for (double x : t.data()) m += x;
  m /= t.size();
  for (double x : t.data()) v += (x - m) * (x - m);
  v /= t.size();
  EXPECT_NEAR(m, 0.0, 0.01);
  EXPECT_NEAR(v, 1.0, 0.02);
}

TEST(Rng, CounterReplay) {
  RngStream a(3, 4);
  for (int i = 0; i < 5; ++i) a.normal();
  RngStream b(3, 4, a.counter());
  EXPECT_EQ(a.normal(), b.normal());
}

}  // namespace
}  // namespace stylespace
