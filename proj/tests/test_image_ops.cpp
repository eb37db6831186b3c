#include <gtest/gtest.h>

#include "sfafnet/gradcheck.hpp"
#include "test_util.hpp"

using namespace sfafnet;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

// Per-pixel weighted sum with single-fold reflection.
std::vector<double> filter_oracle(const Tensor<double>& x, const Tensor<double>& k) {
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), r = k.dim(1), ks = k.dim(2), p = ks / 2;
  auto refl = [](Index i, Index n) { return i < 0 ? -i : (i >= n ? 2 * (n - 1) - i : i); };
  std::vector<double> out;
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < C; ++c)
      for (Index y = 0; y < H; ++y)
        for (Index xx = 0; xx < W; ++xx) {
          double acc = 0;
          for (Index i = 0; i < ks; ++i)
            for (Index j = 0; j < ks; ++j)
              acc += k.at({n, c / (C / r), i, j}) * x.at({n, c, refl(y + i - p, H), refl(xx + j - p, W)});
          out.push_back(acc);
        }
  return out;
}

}  // namespace

TEST(GroupedFilter, MatchesPerPixelOracle) {
  auto x = random_tensor({2, 6, 5, 7}, 1);
  auto k = random_tensor({2, 3, 3, 3}, 2);
  EXPECT_LT(max_abs_diff(grouped_filter(x, k).data(), filter_oracle(x, k)), 1e-12);
  auto k5 = random_tensor({2, 2, 5, 5}, 3);
  EXPECT_LT(max_abs_diff(grouped_filter(x, k5).data(), filter_oracle(x, k5)), 1e-12);
}

TEST(GroupedFilter, RejectsBadShapes) {
  auto x = random_tensor({1, 6, 5, 5}, 4);
  EXPECT_THROW(grouped_filter(x, random_tensor({1, 4, 3, 3}, 5)), DimensionError);
  EXPECT_THROW(grouped_filter(x, random_tensor({2, 3, 3, 3}, 5)), DimensionError);
  EXPECT_THROW(grouped_filter(random_tensor({1, 2, 2, 2}, 6), random_tensor({1, 1, 5, 5}, 5)), DimensionError);
}

TEST(GroupedFilter, GradientsInBothOperands) {
  auto x = random_tensor({2, 4, 5, 4}, 7, -1, 1, true);
  auto k = random_tensor({2, 2, 3, 3}, 8, -1, 1, true);
  auto r = random_tensor({2, 4, 5, 4}, 9);
  auto res = check_gradients("grouped_filter", [&] { return sum(mul(grouped_filter(x, k), r)); },
                             {{"input", x}, {"kernels", k}}, 7);
  EXPECT_LT(res.max_rel_error, 1e-3);
}

TEST(AdaptivePool, ExactBinsAndOverlappingBins) {
  auto x = Tensor<double>::from_vector({1, 1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  auto y = adaptive_avg_pool(x, 1, 2);
  EXPECT_DOUBLE_EQ(y.data()[0], (1 + 2 + 5 + 6) / 4.0);
  EXPECT_DOUBLE_EQ(y.data()[1], (3 + 4 + 7 + 8) / 4.0);
  // 5 -> 3 bins: [0,2) [1,4) [3,5)
  auto z = adaptive_avg_pool(Tensor<double>::from_vector({1, 1, 1, 5}, {1, 2, 3, 4, 5}), 1, 3);
  EXPECT_DOUBLE_EQ(z.data()[0], 1.5);
  EXPECT_DOUBLE_EQ(z.data()[1], 3.0);
  EXPECT_DOUBLE_EQ(z.data()[2], 4.5);
  EXPECT_THROW(adaptive_avg_pool(x, 3, 3), DimensionError);
}

TEST(ImageOpGradients, PoolsResampleAndNorm) {
  auto x = random_tensor({2, 3, 6, 8}, 10, -1, 1, true);
  auto g = random_tensor({3}, 11, 0.5, 1.5, true);
  auto b = random_tensor({3}, 12, -1, 1, true);
  auto r1 = random_tensor({2, 3, 3, 3}, 13);
  auto r2 = random_tensor({2, 3, 3, 4}, 14);
  auto r3 = random_tensor({2, 3, 12, 16}, 15);
  auto loss = [&] {
    auto n = layer_norm(x, g, b);
    auto acc = sum(mul(adaptive_avg_pool(n, 3, 3), r1));
    acc = add(acc, sum(mul(resample(n, Resample::down2), r2)));
    acc = add(acc, sum(mul(resample(n, Resample::up2), r3)));
    acc = add(acc, sum(pool_stats(n, PoolKind::gsp)));
    return add(acc, sum(square(pool_stats(n, PoolKind::gap))));
  };
  auto res = check_gradients("image_ops", loss, {{"input", x}, {"gamma", g}, {"beta", b}}, 10);
  EXPECT_LT(res.max_rel_error, 1e-3);
}

TEST(ReflectPadding, RequiresPadSmallerThanImage) {
  auto x = random_tensor({1, 1, 2, 2}, 16);
  EXPECT_THROW(conv2d(x, random_tensor({1, 1, 5, 5}, 17), {}, {1, Padding::reflect, 1}), DimensionError);
  EXPECT_NO_THROW(conv2d(x, random_tensor({1, 1, 5, 5}, 17), {}, {1, Padding::zero, 1}));
}
