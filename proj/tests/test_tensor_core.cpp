#include <gtest/gtest.h>

#include <cmath>

#include "sfafnet/fft.hpp"
#include "sfafnet/gradcheck.hpp"
#include "test_util.hpp"

using namespace sfafnet;
using testutil::max_abs_diff;
using testutil::random_tensor;

TEST(TensorConstruction, ShapeMustMatchBuffer) {
  EXPECT_THROW(Tensor<float>::from_vector({2, 3}, std::vector<float>(5)), DimensionError);
  auto t = Tensor<float>::zeros({2, 3, 4});
  EXPECT_EQ(t.numel(), 24);
  EXPECT_EQ(t.dim(-1), 4);
  EXPECT_THROW(t.dim(3), DimensionError);
}

TEST(TensorConstruction, GradHasSameShapeAsData) {
  auto x = random_tensor({2, 3}, 1, -1, 1, true);
  sum(square(x)).backward();
  ASSERT_TRUE(x.has_grad());
  EXPECT_EQ(x.grad().size(), x.data().size());
}

TEST(Backward, SumGivesOnes) {
  auto x = random_tensor({3, 4, 2}, 2, -1, 1, true);
  sum(x).backward();
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, HalfSquaredNormGivesInput) {
  auto x = random_tensor({5, 3}, 3, -1, 1, true);
  scale(sum(mul(x, x)), 0.5).backward();
  EXPECT_LT(max_abs_diff(x.grad(), x.data()), 1e-15);
}

TEST(Backward, RepeatedCallsAccumulate) {
  auto x = random_tensor({4}, 4, -1, 1, true);
  auto loss = sum(x);
  loss.backward();
  loss.backward();
  for (double g : x.grad()) EXPECT_EQ(g, 2.0);
}

TEST(Backward, MultipleConsumersAddUp) {
  auto x = random_tensor({3}, 5, -1, 1, true);
  sum(add(mul(x, x), x)).backward();
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(x.grad()[i], 2 * x.data()[i] + 1, 1e-15);
}

TEST(Backward, NonScalarLossRejected) {
  auto x = random_tensor({3}, 6, -1, 1, true);
  EXPECT_THROW(square(x).backward(), ContractError);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  auto x = random_tensor({3}, 7, -1, 1, true);
  NoGradGuard ng;
  auto y = sum(square(x));
  EXPECT_FALSE(y.requires_grad());
}

TEST(Backward, DeepChainDoesNotOverflowStack) {
  auto x = Tensor<double>::full({1}, 1.0, true);
  Tensor<double> y = x;
  for (int i = 0; i < 100000; ++i) y = add_scalar(y, 0.0);
  sum(y).backward();
  EXPECT_EQ(x.grad()[0], 1.0);
}

TEST(Backward, CharbonnierOverBlockCompositionMatchesFiniteDifferences) {
  Rng rng(11);
  auto x = uniform_tensor<double>({1, 4, 6, 6}, 1.0, rng);
  auto naf = NAFBlockParams<double>::make(4, rng);
  ParamList<double> ps;
  naf.collect("naf", ps);
  detail::randomize(ps, rng);
  auto conv = Conv2d<double>::make(4, 3, 3, rng);
  conv.collect("head", ps);
  auto target = uniform_tensor<double>({1, 3, 6, 6}, 1.0, rng, false);
  auto res = check_gradients("composition", [&] { return charbonnier(conv(nafblock_forward(x, naf)), target); },
                             detail::with_input(x, ps), 11);
  EXPECT_LT(res.max_rel_error, 1e-3) << res.worst_tensor;
}

TEST(Softmax, UniformLogits) {
  auto y = softmax(Tensor<double>::zeros({3}), 0);
  for (double v : y.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, ClosedForm) {
  auto y = softmax(Tensor<double>::from_vector({2}, {0.0, std::log(3.0)}), 0);
  EXPECT_NEAR(y.data()[0], 0.25, 1e-15);
  EXPECT_NEAR(y.data()[1], 0.75, 1e-15);
}

TEST(Softmax, SaturatesWithoutOverflow) {
  auto y = softmax(Tensor<float>::from_vector({2}, {0.0f, 100.0f}), 0);
  EXPECT_TRUE(y.all_finite());
  EXPECT_NEAR(y.data()[0], 0.0f, 1e-30f);
  EXPECT_NEAR(y.data()[1], 1.0f, 1e-7f);
}

TEST(Softmax, RowsNonnegativeAndNormalised) {
  for (int axis : {0, 1, 2}) {
    auto y = softmax(random_tensor({4, 5, 6}, 20 + axis, -8, 8), axis);
    auto s = mean_axis(y, axis);
    const double len = static_cast<double>(y.dim(axis));
    for (double v : y.data()) EXPECT_GE(v, 0.0);
    for (double v : s.data()) EXPECT_NEAR(v * len, 1.0, 1e-6);
  }
}

TEST(Softmax, ShiftInvariant) {
  auto x = random_tensor({2, 7}, 21);
  auto a = softmax(x, 1);
  auto b = softmax(add_scalar(x, 50.0), 1);
  EXPECT_LT(max_abs_diff(a.data(), b.data()), 1e-14);
}

TEST(Conv2d, DeltaKernelIsIdentity) {
  auto x = random_tensor({2, 3, 5, 6}, 30);
  std::vector<double> k(3 * 9, 0.0);
  for (int c = 0; c < 3; ++c) k[static_cast<std::size_t>(c * 9 + 4)] = 1.0;
  auto kernel = Tensor<double>::from_vector({3, 1, 3, 3}, k);
  for (Padding pad : {Padding::zero, Padding::reflect}) {
    auto y = conv2d(x, kernel, {}, {1, pad, 3});
    EXPECT_EQ(max_abs_diff(y.data(), x.data()), 0.0);
  }
}

TEST(Conv2d, BoxFilterPreservesConstantsWithReflect) {
  auto x = Tensor<double>::full({1, 1, 5, 4}, 0.7);
  auto kernel = Tensor<double>::full({1, 1, 3, 3}, 1.0 / 9.0);
  auto y = conv2d(x, kernel, {}, {1, Padding::reflect, 1});
  for (double v : y.data()) EXPECT_NEAR(v, 0.7, 1e-15);
}

TEST(Conv2d, MatchesLoopOracle) {
  auto x = random_tensor({1, 2, 4, 4}, 31);
  auto w = random_tensor({3, 2, 3, 3}, 32);
  for (bool reflect : {false, true}) {
    auto y = conv2d(x, w, {}, {1, reflect ? Padding::reflect : Padding::zero, 1});
    EXPECT_LT(max_abs_diff(y.data(), testutil::conv_oracle(x, w, 1, reflect, 1)), 1e-6);
  }
}

TEST(Conv2d, StridedAndGroupedMatchOracle) {
  auto x = random_tensor({2, 4, 7, 6}, 33);
  auto w = random_tensor({6, 2, 3, 3}, 34);
  auto y = conv2d(x, w, {}, {2, Padding::zero, 2});
  EXPECT_EQ(y.shape(), (Shape{2, 6, 4, 3}));
  EXPECT_LT(max_abs_diff(y.data(), testutil::conv_oracle(x, w, 2, false, 2)), 1e-12);
}

TEST(Conv2d, BiasIsAddedPerChannel) {
  auto x = Tensor<double>::zeros({1, 2, 3, 3});
  auto w = random_tensor({2, 2, 1, 1}, 35);
  auto b = Tensor<double>::from_vector({2}, {0.5, -1.5});
  auto y = conv2d(x, w, b);
  for (Index i = 0; i < 9; ++i) {
    EXPECT_EQ(y.data()[static_cast<std::size_t>(i)], 0.5);
    EXPECT_EQ(y.data()[static_cast<std::size_t>(9 + i)], -1.5);
  }
}

TEST(Conv2d, Linear) {
  auto x = random_tensor({1, 3, 6, 6}, 36);
  auto z = random_tensor({1, 3, 6, 6}, 37);
  auto w = random_tensor({4, 3, 3, 3}, 38);
  const double a = 0.7, b = -1.3;
  auto lhs = conv2d(add(scale(x, a), scale(z, b)), w, {}, {1, Padding::reflect, 1});
  auto rhs = add(scale(conv2d(x, w, {}, {1, Padding::reflect, 1}), a), scale(conv2d(z, w, {}, {1, Padding::reflect, 1}), b));
  EXPECT_LT(max_abs_diff(lhs.data(), rhs.data()), 1e-5);
}

TEST(Conv2d, ErrorsOnBadShapes) {
  auto x = random_tensor({1, 4, 5, 5}, 39);
  EXPECT_THROW(conv2d(x, random_tensor({2, 3, 3, 3}, 1)), DimensionError);
  EXPECT_THROW(conv2d(x, random_tensor({3, 2, 3, 3}, 1), {}, {1, Padding::zero, 3}), ConfigError);
  EXPECT_THROW(conv2d(random_tensor({4, 5, 5}, 1), random_tensor({2, 4, 3, 3}, 1)), DimensionError);
}

TEST(Conv2d, InputGradientMatchesFiniteDifferences) {
  auto x = random_tensor({1, 2, 5, 5}, 40, -1, 1, true);
  auto w = random_tensor({3, 2, 3, 3}, 41);
  auto res = check_gradients("conv_input", [&] { return sum(conv2d(x, w, {}, {1, Padding::reflect, 1})); },
                             {{"input", x}}, 40);
  EXPECT_LT(res.max_rel_error, 1e-3);
}

TEST(LayerNorm, ConstantOverChannelsGivesZero) {
  auto x = Tensor<double>::full({1, 4, 2, 2}, 3.0);
  auto y = layer_norm(x, Tensor<double>::full({4}, 1.0), Tensor<double>::zeros({4}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, TwoChannelClosedForm) {
  auto x = Tensor<double>::from_vector({1, 2, 1, 1}, {1.0, 3.0});
  auto y = layer_norm(x, Tensor<double>::full({2}, 1.0), Tensor<double>::zeros({2}), 1e-12);
  EXPECT_NEAR(y.data()[0], -1.0, 1e-9);
  EXPECT_NEAR(y.data()[1], 1.0, 1e-9);
}

TEST(LayerNorm, ZeroGammaCollapsesToBeta) {
  auto x = random_tensor({2, 3, 2, 2}, 42);
  auto beta = Tensor<double>::from_vector({3}, {0.1, 0.2, 0.3});
  auto y = layer_norm(x, Tensor<double>::zeros({3}), beta);
  for (Index c = 0; c < 3; ++c) EXPECT_EQ(y.at({1, c, 1, 0}), beta.data()[static_cast<std::size_t>(c)]);
}

TEST(PoolStats, MeanAndPopulationStd) {
  auto x = Tensor<double>::from_vector({1, 1, 2, 2}, {1, 3, 5, 7});
  EXPECT_EQ(pool_stats(x, PoolKind::gap).item(), 4.0);
  EXPECT_EQ(pool_stats(Tensor<double>::full({1, 1, 3, 3}, 2.5), PoolKind::gsp).item(), 0.0);
  EXPECT_NEAR(pool_stats(Tensor<double>::from_vector({1, 1, 1, 2}, {1, 3}), PoolKind::gsp).item(), 1.0, 1e-15);
}

TEST(PoolStats, StdOfConstantHasZeroSubgradient) {
  auto x = Tensor<double>::full({1, 2, 3, 3}, 1.0, true);
  sum(pool_stats(x, PoolKind::gsp)).backward();
  for (double g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Resample, DownAveragesAndUpDuplicates) {
  auto x = Tensor<double>::from_vector({1, 1, 2, 2}, {1, 3, 5, 7});
  EXPECT_EQ(resample(x, Resample::down2).item(), 4.0);
  auto c = Tensor<double>::full({1, 2, 4, 6}, 0.3);
  auto half = resample(c, Resample::down2);
  for (double v : half.data()) EXPECT_NEAR(v, 0.3, 1e-16);
  auto back = resample(resample(c, Resample::down2), Resample::up2);
  EXPECT_EQ(back.shape(), c.shape());
  for (double v : back.data()) EXPECT_NEAR(v, 0.3, 1e-16);
  EXPECT_THROW(resample(Tensor<double>::zeros({1, 1, 3, 4}), Resample::down2), DimensionError);
}

TEST(Elementwise, SplitConcatInverse) {
  auto x = random_tensor({2, 6, 3, 3}, 50);
  auto parts = split(x, 1, 3);
  ASSERT_EQ(parts.size(), 3u);
  for (const auto& p : parts) EXPECT_EQ(p.dim(1), 2);
  EXPECT_EQ(concat(parts, 1).data().size(), x.data().size());
  EXPECT_EQ(max_abs_diff(concat(parts, 1).data(), x.data()), 0.0);
  auto again = split(concat(parts, 1), 1, 3);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(max_abs_diff(again[i].data(), parts[i].data()), 0.0);
  EXPECT_THROW(split(x, 1, 4), DimensionError);
}

TEST(Elementwise, SigmoidAtZero) { EXPECT_EQ(sigmoid(Tensor<double>::scalar(0.0)).item(), 0.5); }

TEST(Elementwise, BroadcastMismatchRejected) {
  EXPECT_THROW(add(Tensor<double>::zeros({2, 3}), Tensor<double>::zeros({3, 2})), DimensionError);
  EXPECT_THROW(mul(Tensor<double>::zeros({2, 3}), Tensor<double>::zeros({3})), DimensionError);
}

TEST(Elementwise, MatmulMatchesLoopOracle) {
  auto a = random_tensor({2, 3}, 51);
  auto b = random_tensor({3, 2}, 52);
  auto c = matmul(a, b);
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 2; ++j) {
      double acc = 0;
      for (Index k = 0; k < 3; ++k) acc += a.at({i, k}) * b.at({k, j});
      EXPECT_NEAR(c.at({i, j}), acc, 1e-6);
    }
  EXPECT_THROW(matmul(a, a), DimensionError);
}

TEST(Elementwise, TransposeSwapsLastAxes) {
  auto a = random_tensor({2, 3, 4}, 53);
  auto t = transpose(a);
  EXPECT_EQ(t.shape(), (Shape{2, 4, 3}));
  EXPECT_EQ(t.at({1, 2, 0}), a.at({1, 0, 2}));
}

TEST(Elementwise, GradientsMatchFiniteDifferences) {
  auto a = random_tensor({2, 3, 4}, 54, -1, 1, true);
  auto b = random_tensor({2, 4, 3}, 55, -1, 1, true);
  auto r = random_tensor({2, 3, 2}, 56);
  auto loss = [&] {
    auto m = matmul(sigmoid(a), transpose(transpose(b)));
    auto parts = split(concat<double>({m, m}, 2), 2, 3);
    return sum(mul(add(parts[0], parts[2]), r));
  };
  auto res = check_gradients("elementwise", loss, {{"a", a}, {"b", b}}, 54);
  EXPECT_LT(res.max_rel_error, 1e-3);
}

TEST(Fft, ImpulseHasFlatSpectrum) {
  std::vector<double> img(16, 0.0);
  img[0] = 1.0;
  for (const auto& z : fft2<double>(img, 4, 4)) {
    EXPECT_NEAR(z.real(), 1.0, 1e-15);
    EXPECT_NEAR(z.imag(), 0.0, 1e-15);
  }
}

TEST(Fft, ConstantConcentratesInDc) {
  std::vector<double> img(64, 0.25);
  const auto spec = fft2<double>(img, 8, 8);
  EXPECT_NEAR(spec[0].real(), 0.25 * 64, 1e-12);
  for (std::size_t i = 1; i < spec.size(); ++i) EXPECT_LT(std::abs(spec[i]), 1e-12);
}

TEST(Fft, MatchesNaiveDftIncludingNonPowerOfTwo) {
  for (auto [H, W] : {std::pair<Index, Index>{8, 8}, {6, 5}, {4, 12}}) {
    Rng rng(static_cast<std::uint64_t>(H * 31 + W));
    std::vector<double> img(static_cast<std::size_t>(H * W));
    for (double& v : img) v = rng.uniform(-1, 1);
    const auto fast = fft2<double>(img, H, W);
    const auto slow = testutil::dft_oracle(img, H, W);
    double err = 0;
    for (std::size_t i = 0; i < fast.size(); ++i) err = std::max(err, std::abs(fast[i] - slow[i]));
    EXPECT_LT(err, 1e-4);
  }
}

TEST(Fft, Parseval) {
  Rng rng(60);
  std::vector<double> img(16 * 8);
  for (double& v : img) v = rng.uniform(-1, 1);
  double spatial = 0, freq = 0;
  for (double v : img) spatial += v * v;
  for (const auto& z : fft2<double>(img, 16, 8)) freq += std::norm(z);
  EXPECT_NEAR(spatial, freq / (16 * 8), 1e-3 * spatial);
}

TEST(Fft, SpectrumGradientMatchesFiniteDifferences) {
  auto x = random_tensor({1, 2, 4, 6}, 61, -1, 1, true);
  auto r = random_tensor({1, 2, 4, 6, 2}, 62);
  auto res = check_gradients("spectrum", [&] { return sum(mul(spectrum(x), r)); }, {{"input", x}}, 61);
  EXPECT_LT(res.max_rel_error, 1e-3);
}
