#pragma once

// Image quality metrics on [0, 1] images.

#include <cmath>
#include <string>
#include <vector>

#include "sfafnet/image.hpp"

namespace sfafnet {

namespace detail {

inline void require_same(const Image& a, const Image& b, const char* op) {
  if (!a.same_shape(b)) throw DimensionError(std::string(op) + ": image shapes differ");
}

}  // namespace detail

inline double mse(const Image& pred, const Image& target) {
  detail::require_same(pred, target, "mse");
  double acc = 0;
  for (std::size_t i = 0; i < pred.pixels.size(); ++i) {
    const double d = static_cast<double>(pred.pixels[i]) - target.pixels[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.pixels.size());
}

inline double mae(const Image& pred, const Image& target) {
  detail::require_same(pred, target, "mae");
  double acc = 0;
  for (std::size_t i = 0; i < pred.pixels.size(); ++i) acc += std::abs(static_cast<double>(pred.pixels[i]) - target.pixels[i]);
  return acc / static_cast<double>(pred.pixels.size());
}

/// 10 log10(peak^2 / MSE), capped at 100 dB once MSE < 1e-10.
inline double psnr(const Image& pred, const Image& target, double peak = 1.0) {
  const double e = mse(pred, target);
  if (e < 1e-10) return 100.0;
  return std::min(100.0, 10.0 * std::log10(peak * peak / e));
}

namespace detail {

// Separable Gaussian blur with reflect-padded borders.
inline std::vector<double> gaussian_filter(const std::vector<double>& img, Index H, Index W,
                                           const std::vector<double>& taps) {
  const Index r = static_cast<Index>(taps.size()) / 2;
  auto fold = [](Index i, Index n) {
    if (n == 1) return Index{0};
    const Index period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
  };
  std::vector<double> tmp(img.size()), out(img.size());
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) {
      double acc = 0;
      for (Index t = -r; t <= r; ++t) acc += taps[static_cast<std::size_t>(t + r)] * img[static_cast<std::size_t>(y * W + fold(x + t, W))];
      tmp[static_cast<std::size_t>(y * W + x)] = acc;
    }
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) {
      double acc = 0;
      for (Index t = -r; t <= r; ++t) acc += taps[static_cast<std::size_t>(t + r)] * tmp[static_cast<std::size_t>(fold(y + t, H) * W + x)];
      out[static_cast<std::size_t>(y * W + x)] = acc;
    }
  return out;
}

}  // namespace detail

/// Mean SSIM over all pixels and channels: 11x11 Gaussian window (sigma 1.5),
/// K1 = 0.01, K2 = 0.03, dynamic range 1. Local statistics use reflect padding
/// so any image size is accepted.
inline double ssim(const Image& pred, const Image& target) {
  detail::require_same(pred, target, "ssim");
  constexpr double k1 = 0.01, k2 = 0.03, sigma = 1.5;
  constexpr double c1 = k1 * k1, c2 = k2 * k2;
  std::vector<double> taps(11);
  double total = 0;
  for (int i = 0; i < 11; ++i) {
    taps[static_cast<std::size_t>(i)] = std::exp(-((i - 5) * (i - 5)) / (2.0 * sigma * sigma));
    total += taps[static_cast<std::size_t>(i)];
  }
  for (double& t : taps) t /= total;
  const Index H = pred.height, W = pred.width, L = H * W;
  double score = 0;
  for (Index c = 0; c < pred.channels; ++c) {
    std::vector<double> x(static_cast<std::size_t>(L)), y(static_cast<std::size_t>(L)), xx(x.size()), yy(x.size()), xy(x.size());
    for (Index i = 0; i < L; ++i) {
      x[static_cast<std::size_t>(i)] = pred.pixels[static_cast<std::size_t>(c * L + i)];
      y[static_cast<std::size_t>(i)] = target.pixels[static_cast<std::size_t>(c * L + i)];
      xx[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(i)];
      yy[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(i)] * y[static_cast<std::size_t>(i)];
      xy[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)] * y[static_cast<std::size_t>(i)];
    }
    const auto mx = detail::gaussian_filter(x, H, W, taps);
    const auto my = detail::gaussian_filter(y, H, W, taps);
    const auto sxx = detail::gaussian_filter(xx, H, W, taps);
    const auto syy = detail::gaussian_filter(yy, H, W, taps);
    const auto sxy = detail::gaussian_filter(xy, H, W, taps);
    double acc = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cov = sxy[i] - mx[i] * my[i];
      acc += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    score += acc / static_cast<double>(L);
  }
  return score / static_cast<double>(pred.channels);
}

}  // namespace sfafnet
