#pragma once

// Parameter containers shared by every block: seeded RNG, named parameter
// lists, 1x1 / kxk convolutions and channel layer norm.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "sfafnet/image_ops.hpp"

namespace sfafnet {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  /// Uniform integer in [0, n).
  Index below(Index n) {
    return static_cast<Index>(std::uniform_int_distribution<std::uint64_t>(0, static_cast<std::uint64_t>(n - 1))(engine_));
  }
  bool coin() { return below(2) == 1; }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

/// splitmix64 finalizer, used to derive independent per-item seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

template <typename T>
using ParamList = std::vector<std::pair<std::string, Tensor<T>>>;

template <typename T>
Tensor<T> uniform_tensor(Shape shape, T bound, Rng& rng, bool requires_grad = true) {
  std::vector<T> v(static_cast<std::size_t>(shape_numel(shape)));
  for (T& x : v) x = static_cast<T>(rng.uniform(-static_cast<double>(bound), static_cast<double>(bound)));
  return Tensor<T>::from_vector(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
struct Conv2d {
  Tensor<T> weight;
  Tensor<T> bias;
  ConvOptions options;

  /// Fan-in scaled uniform init U(-1/sqrt(fan_in), 1/sqrt(fan_in)); `zero`
  /// gives an all-zero layer.
  static Conv2d make(Index in_channels, Index out_channels, Index kernel, Rng& rng,
                     ConvOptions opts = {}, bool zero = false) {
    if (in_channels % opts.groups != 0 || out_channels % opts.groups != 0) {
      throw ConfigError("conv: groups must divide channel counts");
    }
    const Index cin_g = in_channels / opts.groups;
    Shape wshape{out_channels, cin_g, kernel, kernel};
    const T bound = T(1) / std::sqrt(static_cast<T>(cin_g * kernel * kernel));
    Conv2d c;
    c.options = opts;
    c.weight = zero ? Tensor<T>::zeros(wshape, true) : uniform_tensor<T>(wshape, bound, rng);
    c.bias = Tensor<T>::zeros({out_channels}, true);
    return c;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, options); }

  Index in_channels() const { return weight.dim(1) * options.groups; }
  Index out_channels() const { return weight.dim(0); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }
};

template <typename T>
struct LayerNorm2d {
  Tensor<T> gamma;
  Tensor<T> beta;
  T eps = T(1e-6);

  static LayerNorm2d make(Index channels) {
    return {Tensor<T>::full({channels}, T(1), true), Tensor<T>::zeros({channels}, true), T(1e-6)};
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta, eps); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
  }
};

/// Collects intermediate feature maps by name during a forward pass.
template <typename T>
struct FeatureRecorder {
  std::vector<std::pair<std::string, Tensor<T>>> features;
  void record(const std::string& name, const Tensor<T>& t) { features.emplace_back(name, t); }
};

template <typename T>
void record_feature(FeatureRecorder<T>* rec, const std::string& name, const Tensor<T>& t) {
  if (rec) rec->record(name, t);
}

}  // namespace sfafnet
