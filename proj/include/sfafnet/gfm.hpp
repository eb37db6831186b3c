#pragma once

// Gated fusion of the spatial stream and the two frequency bands.
//
//   gate:  per stream, channel coefficients in (0, 1) from mean- and
//          std-pooled statistics.
//   cam:   pairwise cross attention over a C x C channel similarity.
//   fuse:  per-pixel softmax weighting of the three pairwise results.

#include <string>
#include <vector>

#include "sfafnet/nn_blocks.hpp"

namespace sfafnet {

template <typename T>
struct GateParams {
  // Each branch: FC C -> C/2, Simple Gate (-> C/4), FC C/4 -> C, sigmoid.
  Conv2d<T> mean_fc1, mean_fc2;
  Conv2d<T> std_fc1, std_fc2;

  static GateParams make(Index channels, Rng& rng) {
    if (channels % 4 != 0) throw ConfigError("gate: channel count must be divisible by 4");
    GateParams p;
    p.mean_fc1 = Conv2d<T>::make(channels, channels / 2, 1, rng);
    p.mean_fc2 = Conv2d<T>::make(channels / 4, channels, 1, rng);
    p.std_fc1 = Conv2d<T>::make(channels, channels / 2, 1, rng);
    p.std_fc2 = Conv2d<T>::make(channels / 4, channels, 1, rng);
    return p;
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    mean_fc1.collect(prefix + ".mean_fc1", out);
    mean_fc2.collect(prefix + ".mean_fc2", out);
    std_fc1.collect(prefix + ".std_fc1", out);
    std_fc2.collect(prefix + ".std_fc2", out);
  }
};

/// Re-weight coefficients, N x C x 1 x 1.
template <typename T>
Tensor<T> gate_coefficients(const Tensor<T>& x, const GateParams<T>& p) {
  Tensor<T> a = sigmoid(p.mean_fc2(simple_gate(p.mean_fc1(pool_stats(x, PoolKind::gap)))));
  Tensor<T> b = sigmoid(p.std_fc2(simple_gate(p.std_fc1(pool_stats(x, PoolKind::gsp)))));
  return scale(add(a, b), T(0.5));
}

template <typename T>
Tensor<T> gate_reweight(const Tensor<T>& x, const GateParams<T>& p) {
  return mul(x, gate_coefficients(x, p));
}

template <typename T>
struct CAMParams {
  LayerNorm2d<T> norm_a, norm_b;
  Conv2d<T> query, key;        // applied to LN(a), LN(b)
  Conv2d<T> value_a, value_b;  // applied to a, b

  static CAMParams make(Index channels, Rng& rng) {
    CAMParams p;
    p.norm_a = LayerNorm2d<T>::make(channels);
    p.norm_b = LayerNorm2d<T>::make(channels);
    p.query = Conv2d<T>::make(channels, channels, 1, rng);
    p.key = Conv2d<T>::make(channels, channels, 1, rng);
    p.value_a = Conv2d<T>::make(channels, channels, 1, rng);
    p.value_b = Conv2d<T>::make(channels, channels, 1, rng);
    return p;
  }

  /// The same module seen from the other operand.
  CAMParams mirrored() const { return {norm_b, norm_a, key, query, value_b, value_a}; }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    norm_a.collect(prefix + ".norm_a", out);
    norm_b.collect(prefix + ".norm_b", out);
    query.collect(prefix + ".query", out);
    key.collect(prefix + ".key", out);
    value_a.collect(prefix + ".value_a", out);
    value_b.collect(prefix + ".value_b", out);
  }
};

/// a + b + softmax(S^T) V_a + softmax(S) V_b with S = Q_a K_b^T / L, where the
/// C x C similarity is taken between channel vectors flattened over the
/// L = H * W positions and softmax runs along the last (key) axis.
template <typename T>
Tensor<T> cam_fuse(const Tensor<T>& a, const Tensor<T>& b, const CAMParams<T>& p) {
  detail::require_nchw(a.shape(), "cam_fuse");
  if (a.shape() != b.shape()) {
    throw DimensionError("cam_fuse: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const Index N = a.dim(0), C = a.dim(1), L = a.dim(2) * a.dim(3);
  const Shape flat{N, C, L};
  Tensor<T> q = reshape(p.query(p.norm_a(a)), flat);
  Tensor<T> k = reshape(p.key(p.norm_b(b)), flat);
  Tensor<T> sim = scale(matmul(q, transpose(k)), T(1) / static_cast<T>(L));  // N x C x C
  Tensor<T> from_a = matmul(softmax(transpose(sim), -1), reshape(p.value_a(a), flat));
  Tensor<T> from_b = matmul(softmax(sim, -1), reshape(p.value_b(b), flat));
  Tensor<T> attended = reshape(add(from_a, from_b), a.shape());
  return add(add(a, b), attended);
}

template <typename T>
struct AdaptiveFuseParams {
  Conv2d<T> weight_proj;  // 3C -> 3
  Conv2d<T> proj;         // C -> C

  static AdaptiveFuseParams make(Index channels, Rng& rng) {
    return {Conv2d<T>::make(3 * channels, 3, 1, rng), Conv2d<T>::make(channels, channels, 1, rng)};
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    weight_proj.collect(prefix + ".weight_proj", out);
    proj.collect(prefix + ".proj", out);
  }
};

/// Per-position fusion weights, N x 3 x H x W, summing to one over axis 1.
template <typename T>
Tensor<T> fusion_weights(const Tensor<T>& x_sl, const Tensor<T>& x_sh, const Tensor<T>& x_lh,
                         const AdaptiveFuseParams<T>& p) {
  if (x_sl.shape() != x_sh.shape() || x_sl.shape() != x_lh.shape()) {
    throw DimensionError("adaptive_fuse: stream shapes differ");
  }
  return softmax(p.weight_proj(concat<T>({x_sl, x_sh, x_lh}, 1)), 1);
}

template <typename T>
Tensor<T> adaptive_fuse(const Tensor<T>& x_sl, const Tensor<T>& x_sh, const Tensor<T>& x_lh,
                        const AdaptiveFuseParams<T>& p) {
  auto w = split(fusion_weights(x_sl, x_sh, x_lh, p), 1, 3);
  Tensor<T> mixed = add(add(mul(x_sl, w[0]), mul(x_sh, w[1])), mul(x_lh, w[2]));
  return p.proj(mixed);
}

template <typename T>
struct GFMParams {
  GateParams<T> gate_s, gate_l, gate_h;
  CAMParams<T> cam_sl, cam_sh, cam_lh;
  AdaptiveFuseParams<T> fuse;

  static GFMParams make(Index channels, Rng& rng) {
    GFMParams p;
    p.gate_s = GateParams<T>::make(channels, rng);
    p.gate_l = GateParams<T>::make(channels, rng);
    p.gate_h = GateParams<T>::make(channels, rng);
    p.cam_sl = CAMParams<T>::make(channels, rng);
    p.cam_sh = CAMParams<T>::make(channels, rng);
    p.cam_lh = CAMParams<T>::make(channels, rng);
    p.fuse = AdaptiveFuseParams<T>::make(channels, rng);
    return p;
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    gate_s.collect(prefix + ".gate_s", out);
    gate_l.collect(prefix + ".gate_l", out);
    gate_h.collect(prefix + ".gate_h", out);
    cam_sl.collect(prefix + ".cam_sl", out);
    cam_sh.collect(prefix + ".cam_sh", out);
    cam_lh.collect(prefix + ".cam_lh", out);
    fuse.collect(prefix + ".fuse", out);
  }
};

template <typename T>
Tensor<T> gfm_forward(const Tensor<T>& x_s, const Tensor<T>& x_l, const Tensor<T>& x_h,
                      const GFMParams<T>& p, FeatureRecorder<T>* rec = nullptr,
                      const std::string& prefix = "gfm") {
  if (x_s.shape() != x_l.shape() || x_s.shape() != x_h.shape()) {
    throw DimensionError("gfm: stream shapes differ");
  }
  Tensor<T> gs = gate_reweight(x_s, p.gate_s);
  Tensor<T> gl = gate_reweight(x_l, p.gate_l);
  Tensor<T> gh = gate_reweight(x_h, p.gate_h);
  record_feature(rec, prefix + ".gated_s", gs);
  record_feature(rec, prefix + ".gated_l", gl);
  record_feature(rec, prefix + ".gated_h", gh);
  Tensor<T> sl = cam_fuse(gs, gl, p.cam_sl);
  Tensor<T> sh = cam_fuse(gs, gh, p.cam_sh);
  Tensor<T> lh = cam_fuse(gl, gh, p.cam_lh);
  record_feature(rec, prefix + ".cam_sl", sl);
  record_feature(rec, prefix + ".cam_sh", sh);
  record_feature(rec, prefix + ".cam_lh", lh);
  Tensor<T> fused = adaptive_fuse(sl, sh, lh, p.fuse);
  record_feature(rec, prefix + ".fused", fused);
  return fused;
}

}  // namespace sfafnet
