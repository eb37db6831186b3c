#pragma once

// Spatial-domain blocks: Simple Gate, simplified channel attention, SCABlock
// and NAFBlock.

#include <string>
#include <vector>

#include "sfafnet/layers.hpp"

namespace sfafnet {

/// Split the channel axis in half and multiply the halves.
template <typename T>
Tensor<T> simple_gate(const Tensor<T>& x) {
  if (x.rank() < 2 || x.dim(1) % 2 != 0) {
    throw DimensionError("simple_gate: channel count must be even, got " + shape_str(x.shape()));
  }
  auto halves = split(x, 1, 2);
  return mul(halves[0], halves[1]);
}

/// x * conv1x1(gap(x)), the per-channel scale broadcast over space.
template <typename T>
Tensor<T> sca(const Tensor<T>& x, const Conv2d<T>& proj) {
  return mul(x, proj(pool_stats(x, PoolKind::gap)));
}

template <typename T>
struct SCABlockParams {
  Conv2d<T> expand;     // C -> 2C, 1x1
  Conv2d<T> depthwise;  // 2C, 3x3, groups 2C
  Conv2d<T> attention;  // C -> C, 1x1 on the pooled vector
  Conv2d<T> project;    // C -> C, 1x1

  static SCABlockParams make(Index channels, Rng& rng, bool zero_project = true) {
    SCABlockParams p;
    p.expand = Conv2d<T>::make(channels, 2 * channels, 1, rng);
    p.depthwise = Conv2d<T>::make(2 * channels, 2 * channels, 3, rng, {1, Padding::zero, 2 * channels});
    p.attention = Conv2d<T>::make(channels, channels, 1, rng);
    p.project = Conv2d<T>::make(channels, channels, 1, rng, {}, zero_project);
    return p;
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    expand.collect(prefix + ".expand", out);
    depthwise.collect(prefix + ".depthwise", out);
    attention.collect(prefix + ".attention", out);
    project.collect(prefix + ".project", out);
  }
};

template <typename T>
Tensor<T> scablock_forward(const Tensor<T>& x, const SCABlockParams<T>& p) {
  Tensor<T> gated = simple_gate(p.depthwise(p.expand(x)));
  return p.project(sca(gated, p.attention));
}

template <typename T>
struct NAFBlockParams {
  LayerNorm2d<T> norm1;
  SCABlockParams<T> mixer;
  LayerNorm2d<T> norm2;
  Conv2d<T> ffn_expand;   // C -> 2C
  Conv2d<T> ffn_project;  // C -> C

  static NAFBlockParams make(Index channels, Rng& rng) {
    NAFBlockParams p;
    p.norm1 = LayerNorm2d<T>::make(channels);
    p.mixer = SCABlockParams<T>::make(channels, rng, true);
    p.norm2 = LayerNorm2d<T>::make(channels);
    p.ffn_expand = Conv2d<T>::make(channels, 2 * channels, 1, rng);
    p.ffn_project = Conv2d<T>::make(channels, channels, 1, rng, {}, true);
    return p;
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    norm1.collect(prefix + ".norm1", out);
    mixer.collect(prefix + ".sca", out);
    norm2.collect(prefix + ".norm2", out);
    ffn_expand.collect(prefix + ".ffn_expand", out);
    ffn_project.collect(prefix + ".ffn_project", out);
  }
};

template <typename T>
Tensor<T> nafblock_forward(const Tensor<T>& x, const NAFBlockParams<T>& p) {
  Tensor<T> x1 = add(scablock_forward(p.norm1(x), p.mixer), x);
  return add(x1, p.ffn_project(simple_gate(p.ffn_expand(p.norm2(x1)))));
}

}  // namespace sfafnet
