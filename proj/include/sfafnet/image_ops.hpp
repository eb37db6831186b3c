#pragma once

// Ops on N x C x H x W feature maps: convolution, normalization, pooling and
// resampling.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "sfafnet/ops.hpp"

namespace sfafnet {

enum class Padding { zero, reflect };

struct ConvOptions {
  Index stride = 1;
  Padding padding = Padding::zero;
  Index groups = 1;
};

namespace detail {

inline void require_nchw(const Shape& s, const char* op) {
  if (s.size() != 4) {
    throw DimensionError(std::string(op) + ": expected N x C x H x W, got " + shape_str(s));
  }
}

// Mirror index without repeating the edge sample; pad < n is required.
inline Index reflect_index(Index i, Index n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * (n - 1) - i;
  return i;
}

template <typename T>
void pad_plane(const T* src, Index H, Index W, Index p, Padding mode, T* dst) {
  const Index Wp = W + 2 * p;
  for (Index y = -p; y < H + p; ++y) {
    T* row = dst + (y + p) * Wp;
    if (mode == Padding::zero && (y < 0 || y >= H)) {
      std::fill_n(row, Wp, T(0));
      continue;
    }
    const T* srow = src + reflect_index(y, H) * W;
    for (Index x = -p; x < 0; ++x) row[x + p] = mode == Padding::zero ? T(0) : srow[reflect_index(x, W)];
    std::copy_n(srow, W, row + p);
    for (Index x = W; x < W + p; ++x) row[x + p] = mode == Padding::zero ? T(0) : srow[reflect_index(x, W)];
  }
}

// Adjoint of pad_plane: accumulate a padded gradient back onto the source.
template <typename T>
void fold_plane(const T* gpad, Index H, Index W, Index p, Padding mode, T* gsrc) {
  const Index Wp = W + 2 * p;
  for (Index y = -p; y < H + p; ++y) {
    if (mode == Padding::zero && (y < 0 || y >= H)) continue;
    const T* row = gpad + (y + p) * Wp;
    T* srow = gsrc + reflect_index(y, H) * W;
    for (Index x = -p; x < W + p; ++x) {
      if (mode == Padding::zero && (x < 0 || x >= W)) continue;
      srow[reflect_index(x, W)] += row[x + p];
    }
  }
}

inline void check_padding(Index H, Index W, Index p, Padding mode, const char* op) {
  if (mode == Padding::reflect && (p >= H || p >= W)) {
    throw DimensionError(std::string(op) + ": reflect padding " + std::to_string(p) +
                         " needs spatial size > " + std::to_string(p));
  }
}

}  // namespace detail

/// 2-D cross-correlation with "same"-style padding p = (k - 1) / 2.
///
/// kernel is C_out x (C_in / groups) x k x k with k odd; bias (optional) has
/// C_out entries. Output size is floor((H + 2p - k) / stride) + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias = {},
                 ConvOptions opts = {}) {
  detail::require_nchw(input.shape(), "conv2d");
  if (kernel.rank() != 4) throw DimensionError("conv2d: kernel must be rank 4");
  const Index N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const Index Cout = kernel.dim(0), cin_g = kernel.dim(1), k = kernel.dim(2);
  const Index groups = opts.groups, stride = opts.stride;
  if (groups < 1 || C % groups != 0 || Cout % groups != 0) {
    throw ConfigError("conv2d: groups=" + std::to_string(groups) + " must divide C_in=" +
                      std::to_string(C) + " and C_out=" + std::to_string(Cout));
  }
  if (kernel.dim(3) != k || k % 2 == 0) throw DimensionError("conv2d: kernel must be square and odd");
  if (cin_g != C / groups) {
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) + " incompatible with input " +
                         shape_str(input.shape()));
  }
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  if (bias.defined() && bias.numel() != Cout) throw DimensionError("conv2d: bias size mismatch");
  const Index p = (k - 1) / 2;
  detail::check_padding(H, W, p, opts.padding, "conv2d");
  const Index Hp = H + 2 * p, Wp = W + 2 * p;
  const Index Ho = (Hp - k) / stride + 1, Wo = (Wp - k) / stride + 1;
  const Index cout_g = Cout / groups;
  const Padding mode = opts.padding;

  std::vector<T> out(static_cast<std::size_t>(N * Cout * Ho * Wo));
  std::vector<T> padded(p > 0 ? static_cast<std::size_t>(C * Hp * Wp) : 0);
  const T* xv = input.data().data();
  const T* wv = kernel.data().data();
  for (Index n = 0; n < N; ++n) {
    const T* src = xv + n * C * H * W;
    if (p > 0) {
      for (Index c = 0; c < C; ++c)
        detail::pad_plane(src + c * H * W, H, W, p, mode, padded.data() + c * Hp * Wp);
      src = padded.data();
    }
    for (Index oc = 0; oc < Cout; ++oc) {
      T* o = out.data() + (n * Cout + oc) * Ho * Wo;
      std::fill_n(o, Ho * Wo, bias.defined() ? bias.data()[oc] : T(0));
      const Index g = oc / cout_g;
      for (Index ic = 0; ic < cin_g; ++ic) {
        const T* plane = src + (g * cin_g + ic) * Hp * Wp;
        const T* w = wv + (oc * cin_g + ic) * k * k;
        for (Index ky = 0; ky < k; ++ky)
          for (Index kx = 0; kx < k; ++kx) {
            const T wk = w[ky * k + kx];
            for (Index oy = 0; oy < Ho; ++oy) {
              const T* prow = plane + (oy * stride + ky) * Wp + kx;
              T* orow = o + oy * Wo;
              if (stride == 1) {
                for (Index ox = 0; ox < Wo; ++ox) orow[ox] += wk * prow[ox];
              } else {
                for (Index ox = 0; ox < Wo; ++ox) orow[ox] += wk * prow[ox * stride];
              }
            }
          }
      }
    }
  }

  detail::NodeList<T> inputs{input.node_ptr(), kernel.node_ptr()};
  if (bias.defined()) inputs.push_back(bias.node_ptr());
  const bool has_bias = bias.defined();
  return detail::record<T>(
      "conv2d", Shape{N, Cout, Ho, Wo}, std::move(out), std::move(inputs),
      [=](detail::Node<T>& self) {
        T* gx = self.input_grad(0);
        T* gw = self.input_grad(1);
        T* gb = has_bias ? self.input_grad(2) : nullptr;
        const T* x = self.input_value(0);
        const T* w = self.input_value(1);
        std::vector<T> pbuf(p > 0 ? static_cast<std::size_t>(C * Hp * Wp) : 0);
        std::vector<T> gpad(gx ? static_cast<std::size_t>(C * Hp * Wp) : 0);
        for (Index n = 0; n < N; ++n) {
          const T* src = x + n * C * H * W;
          if (p > 0 && gw) {
            for (Index c = 0; c < C; ++c)
              detail::pad_plane(src + c * H * W, H, W, p, mode, pbuf.data() + c * Hp * Wp);
          }
          if (p > 0) src = pbuf.data();
          if (gx) std::fill(gpad.begin(), gpad.end(), T(0));
          for (Index oc = 0; oc < Cout; ++oc) {
            const T* go = self.grad.data() + (n * Cout + oc) * Ho * Wo;
            if (gb) {
              T acc = 0;
              for (Index i = 0; i < Ho * Wo; ++i) acc += go[i];
              gb[oc] += acc;
            }
            const Index g = oc / cout_g;
            for (Index ic = 0; ic < cin_g; ++ic) {
              const Index c = g * cin_g + ic;
              const T* plane = src + c * Hp * Wp;
              T* gplane = gx ? gpad.data() + c * Hp * Wp : nullptr;
              const Index widx = (oc * cin_g + ic) * k * k;
              for (Index ky = 0; ky < k; ++ky)
                for (Index kx = 0; kx < k; ++kx) {
                  const T wk = w[widx + ky * k + kx];
                  if (gw) {
                    // Independent lanes keep the reduction vectorizable.
                    T lanes[8] = {};
                    for (Index oy = 0; oy < Ho; ++oy) {
                      const T* prow = plane + (oy * stride + ky) * Wp + kx;
                      const T* grow = go + oy * Wo;
                      Index ox = 0;
                      if (stride == 1) {
                        for (; ox + 8 <= Wo; ox += 8)
                          for (Index l = 0; l < 8; ++l) lanes[l] += grow[ox + l] * prow[ox + l];
                      }
                      for (; ox < Wo; ++ox) lanes[ox % 8] += grow[ox] * prow[ox * stride];
                    }
                    T acc = 0;
                    for (const T v : lanes) acc += v;
                    gw[widx + ky * k + kx] += acc;
                  }
                  if (gplane) {
                    for (Index oy = 0; oy < Ho; ++oy) {
                      T* dprow = gplane + (oy * stride + ky) * Wp + kx;
                      const T* grow = go + oy * Wo;
                      if (stride == 1) {
                        for (Index ox = 0; ox < Wo; ++ox) dprow[ox] += wk * grow[ox];
                      } else {
                        for (Index ox = 0; ox < Wo; ++ox) dprow[ox * stride] += wk * grow[ox];
                      }
                    }
                  }
                }
            }
          }
          if (gx) {
            T* dst = gx + n * C * H * W;
            if (p > 0) {
              for (Index c = 0; c < C; ++c)
                detail::fold_plane(gpad.data() + c * Hp * Wp, H, W, p, mode, dst + c * H * W);
            } else {
              for (Index i = 0; i < C * H * W; ++i) dst[i] += gpad[i];
            }
          }
        }
      });
}

/// Per-sample grouped filtering with reflect padding.
///
/// kernels is N x r x k x k; channel c of sample n is filtered with kernel
/// kernels[n, c / (C / r)]. Both operands are differentiable.
template <typename T>
Tensor<T> grouped_filter(const Tensor<T>& input, const Tensor<T>& kernels) {
  detail::require_nchw(input.shape(), "grouped_filter");
  detail::require_nchw(kernels.shape(), "grouped_filter");
  const Index N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const Index r = kernels.dim(1), k = kernels.dim(2);
  if (kernels.dim(0) != N) throw DimensionError("grouped_filter: batch mismatch");
  if (kernels.dim(3) != k || k % 2 == 0) throw DimensionError("grouped_filter: kernels must be square and odd");
  if (r < 1 || C % r != 0) {
    throw DimensionError("grouped_filter: " + std::to_string(r) + " kernel rows do not divide " +
                         std::to_string(C) + " channels");
  }
  const Index p = (k - 1) / 2;
  detail::check_padding(H, W, p, Padding::reflect, "grouped_filter");
  const Index Hp = H + 2 * p, Wp = W + 2 * p, m = C / r;
  std::vector<T> out(static_cast<std::size_t>(N * C * H * W), T(0));
  std::vector<T> pbuf(static_cast<std::size_t>(Hp * Wp));
  const T* xv = input.data().data();
  const T* kv = kernels.data().data();
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < C; ++c) {
      detail::pad_plane(xv + (n * C + c) * H * W, H, W, p, Padding::reflect, pbuf.data());
      const T* w = kv + (n * r + c / m) * k * k;
      T* o = out.data() + (n * C + c) * H * W;
      for (Index ky = 0; ky < k; ++ky)
        for (Index kx = 0; kx < k; ++kx) {
          const T wk = w[ky * k + kx];
          for (Index y = 0; y < H; ++y) {
            const T* prow = pbuf.data() + (y + ky) * Wp + kx;
            T* orow = o + y * W;
            for (Index x = 0; x < W; ++x) orow[x] += wk * prow[x];
          }
        }
    }
  return detail::record<T>(
      "grouped_filter", input.shape(), std::move(out),
      detail::NodeList<T>{input.node_ptr(), kernels.node_ptr()}, [=](detail::Node<T>& self) {
        T* gx = self.input_grad(0);
        T* gk = self.input_grad(1);
        const T* x = self.input_value(0);
        const T* kw = self.input_value(1);
        std::vector<T> pb(static_cast<std::size_t>(Hp * Wp));
        std::vector<T> gp(static_cast<std::size_t>(Hp * Wp));
        for (Index n = 0; n < N; ++n)
          for (Index c = 0; c < C; ++c) {
            const T* go = self.grad.data() + (n * C + c) * H * W;
            const Index kidx = (n * r + c / m) * k * k;
            if (gk) detail::pad_plane(x + (n * C + c) * H * W, H, W, p, Padding::reflect, pb.data());
            if (gx) std::fill(gp.begin(), gp.end(), T(0));
            for (Index ky = 0; ky < k; ++ky)
              for (Index kx = 0; kx < k; ++kx) {
                const T wk = kw[kidx + ky * k + kx];
                T acc = 0;
                for (Index y = 0; y < H; ++y) {
                  const T* grow = go + y * W;
                  const Index off = (y + ky) * Wp + kx;
                  if (gk) {
                    const T* prow = pb.data() + off;
                    for (Index xx = 0; xx < W; ++xx) acc += grow[xx] * prow[xx];
                  }
                  if (gx) {
                    T* dprow = gp.data() + off;
                    for (Index xx = 0; xx < W; ++xx) dprow[xx] += wk * grow[xx];
                  }
                }
                if (gk) gk[kidx + ky * k + kx] += acc;
              }
            if (gx) detail::fold_plane(gp.data(), H, W, p, Padding::reflect, gx + (n * C + c) * H * W);
          }
      });
}

/// Channel-wise layer normalization: at every (n, y, x) normalize across C,
/// then apply per-channel gamma and beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-6)) {
  detail::require_nchw(x.shape(), "layer_norm");
  if (!(eps > T(0))) throw ContractError("layer_norm: eps must be positive");
  const Index N = x.dim(0), C = x.dim(1), L = x.dim(2) * x.dim(3);
  if (gamma.numel() != C || beta.numel() != C) throw DimensionError("layer_norm: affine size mismatch");
  std::vector<T> out(x.data().size());
  std::vector<T> xhat(x.data().size());
  std::vector<T> inv_std(static_cast<std::size_t>(N * L));
  const T* xv = x.data().data();
  const T* gv = gamma.data().data();
  const T* bv = beta.data().data();
  for (Index n = 0; n < N; ++n) {
    const T* xs = xv + n * C * L;
    for (Index i = 0; i < L; ++i) {
      T mu = 0;
      for (Index c = 0; c < C; ++c) mu += xs[c * L + i];
      mu /= static_cast<T>(C);
      T var = 0;
      for (Index c = 0; c < C; ++c) {
        const T d = xs[c * L + i] - mu;
        var += d * d;
      }
      var /= static_cast<T>(C);
      const T is = T(1) / std::sqrt(var + eps);
      inv_std[n * L + i] = is;
      for (Index c = 0; c < C; ++c) {
        const Index j = (n * C + c) * L + i;
        xhat[j] = (xs[c * L + i] - mu) * is;
        out[j] = xhat[j] * gv[c] + bv[c];
      }
    }
  }
  return detail::record<T>(
      "layer_norm", x.shape(), std::move(out),
      detail::NodeList<T>{x.node_ptr(), gamma.node_ptr(), beta.node_ptr()},
      [N, C, L, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node<T>& self) {
        T* gx = self.input_grad(0);
        T* gg = self.input_grad(1);
        T* gbeta = self.input_grad(2);
        const T* gam = self.input_value(1);
        const T* g = self.grad.data();
        for (Index n = 0; n < N; ++n)
          for (Index i = 0; i < L; ++i) {
            T mean_d = 0, mean_dx = 0;
            for (Index c = 0; c < C; ++c) {
              const Index j = (n * C + c) * L + i;
              const T d = g[j] * gam[c];
              mean_d += d;
              mean_dx += d * xhat[j];
              if (gg) gg[c] += g[j] * xhat[j];
              if (gbeta) gbeta[c] += g[j];
            }
            if (!gx) continue;
            mean_d /= static_cast<T>(C);
            mean_dx /= static_cast<T>(C);
            const T is = inv_std[n * L + i];
            for (Index c = 0; c < C; ++c) {
              const Index j = (n * C + c) * L + i;
              gx[j] += is * (g[j] * gam[c] - mean_d - xhat[j] * mean_dx);
            }
          }
      });
}

enum class PoolKind { gap, gsp };

/// Global spatial statistic per channel -> N x C x 1 x 1.
/// gap is the mean; gsp the population standard deviation.
template <typename T>
Tensor<T> pool_stats(const Tensor<T>& x, PoolKind kind) {
  detail::require_nchw(x.shape(), "pool_stats");
  const Index N = x.dim(0), C = x.dim(1), L = x.dim(2) * x.dim(3);
  if (L < 1) throw DimensionError("pool_stats: empty spatial extent");
  std::vector<T> out(static_cast<std::size_t>(N * C));
  std::vector<T> means(static_cast<std::size_t>(N * C));
  const T* xv = x.data().data();
  for (Index nc = 0; nc < N * C; ++nc) {
    const T* plane = xv + nc * L;
    T mu = 0;
    for (Index i = 0; i < L; ++i) mu += plane[i];
    mu /= static_cast<T>(L);
    means[nc] = mu;
    if (kind == PoolKind::gap) {
      out[nc] = mu;
    } else {
      T var = 0;
      for (Index i = 0; i < L; ++i) {
        const T d = plane[i] - mu;
        var += d * d;
      }
      out[nc] = std::sqrt(var / static_cast<T>(L));
    }
  }
  return detail::record<T>(
      kind == PoolKind::gap ? "gap" : "gsp", Shape{N, C, 1, 1}, std::move(out),
      detail::NodeList<T>{x.node_ptr()}, [kind, N, C, L, means = std::move(means)](detail::Node<T>& self) {
        T* gx = self.input_grad(0);
        if (!gx) return;
        const T* xin = self.input_value(0);
        for (Index nc = 0; nc < N * C; ++nc) {
          const T g = self.grad[nc];
          T* dst = gx + nc * L;
          if (kind == PoolKind::gap) {
            const T share = g / static_cast<T>(L);
            for (Index i = 0; i < L; ++i) dst[i] += share;
          } else {
            const T sd = self.value[nc];
            if (sd <= T(0)) continue;  // subgradient 0 at a flat channel
            const T s = g / (static_cast<T>(L) * sd);
            const T* plane = xin + nc * L;
            for (Index i = 0; i < L; ++i) dst[i] += s * (plane[i] - means[nc]);
          }
        }
      });
}

enum class Resample { down2, up2 };

/// down2: 2x2 average pooling. up2: nearest-neighbour duplication.
template <typename T>
Tensor<T> resample(const Tensor<T>& x, Resample direction) {
  detail::require_nchw(x.shape(), "resample");
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const T* xv = x.data().data();
  if (direction == Resample::down2) {
    if (H % 2 || W % 2) {
      throw DimensionError("resample: down2 needs even spatial size, got " + shape_str(x.shape()));
    }
    const Index Ho = H / 2, Wo = W / 2;
    std::vector<T> out(static_cast<std::size_t>(N * C * Ho * Wo));
    for (Index nc = 0; nc < N * C; ++nc) {
      const T* s = xv + nc * H * W;
      T* o = out.data() + nc * Ho * Wo;
      for (Index y = 0; y < Ho; ++y)
        for (Index xx = 0; xx < Wo; ++xx) {
          const T* a = s + 2 * y * W + 2 * xx;
          o[y * Wo + xx] = (a[0] + a[1] + a[W] + a[W + 1]) * T(0.25);
        }
    }
    return detail::record<T>("down2", Shape{N, C, Ho, Wo}, std::move(out),
                             detail::NodeList<T>{x.node_ptr()}, [=](detail::Node<T>& self) {
                               T* gx = self.input_grad(0);
                               if (!gx) return;
                               for (Index nc = 0; nc < N * C; ++nc) {
                                 const T* g = self.grad.data() + nc * Ho * Wo;
                                 T* d = gx + nc * H * W;
                                 for (Index y = 0; y < Ho; ++y)
                                   for (Index xx = 0; xx < Wo; ++xx) {
                                     const T q = g[y * Wo + xx] * T(0.25);
                                     T* a = d + 2 * y * W + 2 * xx;
                                     a[0] += q;
                                     a[1] += q;
                                     a[W] += q;
                                     a[W + 1] += q;
                                   }
                               }
                             });
  }
  const Index Ho = H * 2, Wo = W * 2;
  std::vector<T> out(static_cast<std::size_t>(N * C * Ho * Wo));
  for (Index nc = 0; nc < N * C; ++nc) {
    const T* s = xv + nc * H * W;
    T* o = out.data() + nc * Ho * Wo;
    for (Index y = 0; y < Ho; ++y)
      for (Index xx = 0; xx < Wo; ++xx) o[y * Wo + xx] = s[(y / 2) * W + xx / 2];
  }
  return detail::record<T>("up2", Shape{N, C, Ho, Wo}, std::move(out),
                           detail::NodeList<T>{x.node_ptr()}, [=](detail::Node<T>& self) {
                             T* gx = self.input_grad(0);
                             if (!gx) return;
                             for (Index nc = 0; nc < N * C; ++nc) {
                               const T* g = self.grad.data() + nc * Ho * Wo;
                               T* d = gx + nc * H * W;
                               for (Index y = 0; y < Ho; ++y)
                                 for (Index xx = 0; xx < Wo; ++xx) d[(y / 2) * W + xx / 2] += g[y * Wo + xx];
                             }
                           });
}

/// Average pooling onto a fixed out_h x out_w grid; bin i spans
/// [floor(i * H / out_h), ceil((i + 1) * H / out_h)).
template <typename T>
Tensor<T> adaptive_avg_pool(const Tensor<T>& x, Index out_h, Index out_w) {
  detail::require_nchw(x.shape(), "adaptive_avg_pool");
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (out_h < 1 || out_w < 1 || H < out_h || W < out_w) {
    throw DimensionError("adaptive_avg_pool: cannot pool " + shape_str(x.shape()) + " to " +
                         std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  auto lo = [](Index i, Index in, Index outn) { return (i * in) / outn; };
  auto hi = [](Index i, Index in, Index outn) { return ((i + 1) * in + outn - 1) / outn; };
  std::vector<T> out(static_cast<std::size_t>(N * C * out_h * out_w));
  const T* xv = x.data().data();
  for (Index nc = 0; nc < N * C; ++nc) {
    const T* s = xv + nc * H * W;
    for (Index oy = 0; oy < out_h; ++oy)
      for (Index ox = 0; ox < out_w; ++ox) {
        const Index y0 = lo(oy, H, out_h), y1 = hi(oy, H, out_h);
        const Index x0 = lo(ox, W, out_w), x1 = hi(ox, W, out_w);
        T acc = 0;
        for (Index y = y0; y < y1; ++y)
          for (Index xx = x0; xx < x1; ++xx) acc += s[y * W + xx];
        out[(nc * out_h + oy) * out_w + ox] = acc / static_cast<T>((y1 - y0) * (x1 - x0));
      }
  }
  return detail::record<T>(
      "adaptive_avg_pool", Shape{N, C, out_h, out_w}, std::move(out),
      detail::NodeList<T>{x.node_ptr()}, [=](detail::Node<T>& self) {
        T* gx = self.input_grad(0);
        if (!gx) return;
        for (Index nc = 0; nc < N * C; ++nc) {
          T* d = gx + nc * H * W;
          for (Index oy = 0; oy < out_h; ++oy)
            for (Index ox = 0; ox < out_w; ++ox) {
              const Index y0 = lo(oy, H, out_h), y1 = hi(oy, H, out_h);
              const Index x0 = lo(ox, W, out_w), x1 = hi(ox, W, out_w);
              const T share = self.grad[(nc * out_h + oy) * out_w + ox] /
                              static_cast<T>((y1 - y0) * (x1 - x0));
              for (Index y = y0; y < y1; ++y)
                for (Index xx = x0; xx < x1; ++xx) d[y * W + xx] += share;
            }
        }
      });
}

}  // namespace sfafnet
