#pragma once

// Frequency decomposition with learned, input-dependent low-pass kernels.
//
// A feature map is projected into three streams F1, F2, F3. F1 and F2 produce
// one softmax-normalized k x k kernel per row group of channels; F3 is then
// split into a low band (filtered by the kernel) and a high band (filtered by
// identity minus the kernel). Also hosts the numerical certificate that
// repeated row-stochastic averaging leaves no high-frequency energy.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sfafnet/layers.hpp"

namespace sfafnet {

/// r low-pass kernels and their high-pass complements, per sample.
/// low and high are N x r x k x k.
template <typename T>
struct FilterBank {
  Tensor<T> low;
  Tensor<T> high;
  Index rows = 0;
  Index kernel = 0;
};

template <typename T>
struct FDGMParams {
  Conv2d<T> expand;     // C -> 3C, 1x1
  Conv2d<T> depthwise;  // 3C, 3x3 depthwise
  Index rows = 8;
  Index kernel = 3;
  /// When set, a fixed normalized Gaussian replaces the learned kernels.
  std::optional<double> gaussian_sigma;

  static FDGMParams make(Index channels, Index rows, Index kernel, Rng& rng,
                         std::optional<double> gaussian_sigma = std::nullopt) {
    if (rows < 1 || channels % rows != 0) {
      throw ConfigError("fdgm: rows=" + std::to_string(rows) + " must divide channels=" +
                        std::to_string(channels));
    }
    if (kernel < 1 || kernel % 2 == 0) throw ConfigError("fdgm: kernel size must be odd");
    FDGMParams p;
    p.expand = Conv2d<T>::make(channels, 3 * channels, 1, rng);
    p.depthwise = Conv2d<T>::make(3 * channels, 3 * channels, 3, rng, {1, Padding::zero, 3 * channels});
    p.rows = rows;
    p.kernel = kernel;
    p.gaussian_sigma = gaussian_sigma;
    return p;
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    expand.collect(prefix + ".expand", out);
    depthwise.collect(prefix + ".depthwise", out);
  }
};

/// Center-one identity kernel, 1 x 1 x k x k.
template <typename T>
Tensor<T> identity_kernel(Index k) {
  Tensor<T> id = Tensor<T>::zeros({1, 1, k, k});
  id.mutable_data()[static_cast<std::size_t>((k / 2) * k + k / 2)] = T(1);
  return id;
}

/// identity - low for a single k x k kernel. Throws ContractError unless low
/// is nonnegative with unit sum (1e-6).
template <typename T>
std::vector<T> high_pass_from_low(std::span<const T> low, Index k) {
  if (static_cast<Index>(low.size()) != k * k || k % 2 == 0) {
    throw ContractError("high_pass_from_low: expected an odd k x k kernel");
  }
  T total = 0;
  for (T v : low) {
    if (!(v >= T(0))) throw ContractError("high_pass_from_low: negative kernel entry");
    total += v;
  }
  if (std::abs(total - T(1)) > T(1e-6)) {
    throw ContractError("high_pass_from_low: kernel sums to " + std::to_string(total));
  }
  std::vector<T> high(low.size());
  for (std::size_t i = 0; i < low.size(); ++i) high[i] = -low[i];
  high[static_cast<std::size_t>((k / 2) * k + k / 2)] += T(1);
  return high;
}

/// Normalized k x k Gaussian, replicated over r rows; shape 1 x r x k x k
/// for both bands.
template <typename T>
FilterBank<T> fixed_gaussian_bank(double sigma, Index rows, Index k) {
  if (!(sigma > 0.0)) throw ContractError("fixed_gaussian_bank: sigma must be positive");
  if (k < 1 || k % 2 == 0) throw ConfigError("fixed_gaussian_bank: kernel size must be odd");
  const Index c = k / 2;
  std::vector<double> g(static_cast<std::size_t>(k * k));
  double total = 0;
  for (Index y = 0; y < k; ++y)
    for (Index x = 0; x < k; ++x) {
      const double d2 = static_cast<double>((y - c) * (y - c) + (x - c) * (x - c));
      g[static_cast<std::size_t>(y * k + x)] = std::exp(-d2 / (2.0 * sigma * sigma));
      total += g[static_cast<std::size_t>(y * k + x)];
    }
  std::vector<T> low(static_cast<std::size_t>(rows * k * k));
  for (Index r = 0; r < rows; ++r)
    for (Index i = 0; i < k * k; ++i) low[static_cast<std::size_t>(r * k * k + i)] = static_cast<T>(g[static_cast<std::size_t>(i)] / total);
  FilterBank<T> bank;
  bank.low = Tensor<T>::from_vector({1, rows, k, k}, std::move(low));
  bank.high = sub(identity_kernel<T>(k), bank.low);
  bank.rows = rows;
  bank.kernel = k;
  return bank;
}

/// Kernels from the F1 / F2 projections plus the F3 stream to decompose.
///
/// Per row group g of m = C / r channels: logits_g = a_g * (1 + s_g), where a_g
/// is F1's group pooled to k x k and averaged over channels, and s_g is F2's
/// group averaged over space and channels. low_g = softmax(logits_g).
template <typename T>
std::pair<FilterBank<T>, Tensor<T>> generate_filters(const Tensor<T>& f, const FDGMParams<T>& p) {
  detail::require_nchw(f.shape(), "generate_filters");
  const Index N = f.dim(0), C = f.dim(1), H = f.dim(2), W = f.dim(3);
  const Index r = p.rows, k = p.kernel;
  if (r < 1 || C % r != 0) {
    throw ConfigError("generate_filters: rows=" + std::to_string(r) + " must divide channels=" +
                      std::to_string(C));
  }
  if (H < k || W < k) {
    throw DimensionError("generate_filters: spatial size " + shape_str(f.shape()) +
                         " smaller than kernel " + std::to_string(k));
  }
  auto streams = split(p.depthwise(p.expand(f)), 1, 3);
  FilterBank<T> bank;
  bank.rows = r;
  bank.kernel = k;
  if (p.gaussian_sigma) {
    FilterBank<T> fixed = fixed_gaussian_bank<T>(*p.gaussian_sigma, r, k);
    const Tensor<T> zeros = Tensor<T>::zeros({N, r, k, k});
    bank.low = add(zeros, fixed.low);
    bank.high = add(zeros, fixed.high);
    return {std::move(bank), streams[2]};
  }
  const Index m = C / r;
  Tensor<T> spatial = adaptive_avg_pool(streams[0], k, k);                  // N x C x k x k
  spatial = mean_axis(reshape(spatial, {N, r, m, k * k}), 2);               // N x r x 1 x k^2
  Tensor<T> level = mean_axis(reshape(pool_stats(streams[1], PoolKind::gap), {N, r, m, 1}), 2);
  Tensor<T> logits = mul(spatial, add_scalar(level, T(1)));                 // N x r x 1 x k^2
  bank.low = reshape(softmax(logits, -1), {N, r, k, k});
  bank.high = sub(identity_kernel<T>(k), bank.low);
  return {std::move(bank), streams[2]};
}

/// Low and high bands of f3: channel c of row group g is filtered (reflect
/// padding) by bank.low[g] and bank.high[g].
template <typename T>
std::pair<Tensor<T>, Tensor<T>> decompose(const Tensor<T>& f3, const FilterBank<T>& bank) {
  detail::require_nchw(f3.shape(), "decompose");
  if (bank.rows < 1 || f3.dim(1) % bank.rows != 0) {
    throw DimensionError("decompose: " + std::to_string(bank.rows) + " rows do not divide " +
                         std::to_string(f3.dim(1)) + " channels");
  }
  return {grouped_filter(f3, bank.low), grouped_filter(f3, bank.high)};
}

template <typename T>
struct FDGMOutput {
  Tensor<T> low_band;
  Tensor<T> high_band;
  FilterBank<T> bank;
};

template <typename T>
FDGMOutput<T> fdgm_forward(const Tensor<T>& f, const FDGMParams<T>& p) {
  auto [bank, f3] = generate_filters(f, p);
  auto [lo, hi] = decompose(f3, bank);
  return {std::move(lo), std::move(hi), std::move(bank)};
}

// ---------------------------------------------------------------------------
// Low-pass certificate

/// ||HF[v]|| / ||v|| after each of p = 1..max_p applications of W to m, where
/// HF[v] = v - mean(v) removes the DC component. W is n x n row-major.
inline std::vector<double> lowpass_trajectory(std::span<const double> W, std::span<const double> m,
                                              int max_p) {
  const std::size_t n = m.size();
  if (n == 0 || W.size() != n * n) throw ContractError("verify_lowpass: W must be n x n with n = |m|");
  if (max_p < 1) throw ContractError("verify_lowpass: p must be >= 1");
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const double w = W[i * n + j];
      if (!(w >= 0.0)) throw ContractError("verify_lowpass: W has a negative entry");
      row += w;
    }
    if (std::abs(row - 1.0) > 1e-6) throw ContractError("verify_lowpass: W is not row-stochastic");
  }
  double norm = 0;
  for (double v : m) norm += v * v;
  if (norm == 0.0) throw ContractError("verify_lowpass: m must be nonzero");

  std::vector<double> v(m.begin(), m.end()), next(n);
  std::vector<double> ratios;
  ratios.reserve(static_cast<std::size_t>(max_p));
  for (int step = 1; step <= max_p; ++step) {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0;
      for (std::size_t j = 0; j < n; ++j) acc += W[i * n + j] * v[j];
      next[i] = acc;
    }
    double nn = 0;
    for (double x : next) nn += x * x;
    nn = std::sqrt(nn);
    if (!(nn > 1e-300)) throw DegenerateError("verify_lowpass: W^p m vanished at p = " + std::to_string(step));
    for (std::size_t i = 0; i < n; ++i) v[i] = next[i] / nn;
    double mu = 0;
    for (double x : v) mu += x;
    mu /= static_cast<double>(n);
    double hf = 0;
    for (double x : v) hf += (x - mu) * (x - mu);
    ratios.push_back(std::sqrt(hf));  // ||v|| == 1 after renormalization
  }
  return ratios;
}

inline double verify_lowpass(std::span<const double> W, std::span<const double> m, int p) {
  return lowpass_trajectory(W, m, p).back();
}

/// Row-wise softmax of an n x n matrix of standard normal logits.
inline std::vector<double> random_row_softmax(std::size_t n, Rng& rng) {
  std::vector<double> w(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -1e300;
    for (std::size_t j = 0; j < n; ++j) {
      w[i * n + j] = rng.normal();
      mx = std::max(mx, w[i * n + j]);
    }
    double total = 0;
    for (std::size_t j = 0; j < n; ++j) {
      w[i * n + j] = std::exp(w[i * n + j] - mx);
      total += w[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) w[i * n + j] /= total;
  }
  return w;
}

inline std::vector<double> random_unit_vector(std::size_t n, Rng& rng) {
  std::vector<double> m(n);
  double norm = 0;
  for (double& v : m) {
    v = rng.normal();
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (double& v : m) v /= norm;
  return m;
}

}  // namespace sfafnet
