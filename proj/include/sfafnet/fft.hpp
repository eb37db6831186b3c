#pragma once

// Unnormalized 2-D discrete Fourier transform.
//
// Power-of-two lengths use an iterative radix-2 Cooley-Tukey transform; any
// other length falls back to the direct O(n^2) sum, so spectra are available
// for arbitrary patch sizes.

#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include "sfafnet/ops.hpp"

namespace sfafnet {

namespace detail {

inline bool is_pow2(Index n) { return n > 0 && (n & (n - 1)) == 0; }

template <typename T>
void fft1d_pow2(std::complex<T>* a, Index n) {
  for (Index i = 1, j = 0; i < n; ++i) {
    Index bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (Index len = 2; len <= n; len <<= 1) {
    const Index half = len / 2;
    for (Index j = 0; j < half; ++j) {
      const std::complex<T> w =
          std::polar(T(1), -T(2) * std::numbers::pi_v<T> * static_cast<T>(j) / static_cast<T>(len));
      for (Index i = 0; i < n; i += len) {
        const std::complex<T> u = a[i + j];
        const std::complex<T> v = a[i + j + half] * w;
        a[i + j] = u + v;
        a[i + j + half] = u - v;
      }
    }
  }
}

template <typename T>
void dft1d_direct(std::complex<T>* a, Index n) {
  std::vector<std::complex<T>> out(static_cast<std::size_t>(n));
  for (Index u = 0; u < n; ++u) {
    std::complex<T> acc = 0;
    for (Index x = 0; x < n; ++x) {
      const Index phase = (u * x) % n;
      acc += a[x] * std::polar(T(1), -T(2) * std::numbers::pi_v<T> * static_cast<T>(phase) /
                                         static_cast<T>(n));
    }
    out[static_cast<std::size_t>(u)] = acc;
  }
  std::copy(out.begin(), out.end(), a);
}

template <typename T>
void fft1d(std::complex<T>* a, Index n) {
  if (is_pow2(n)) {
    fft1d_pow2(a, n);
  } else {
    dft1d_direct(a, n);
  }
}

}  // namespace detail

/// In-place 2-D transform of an H x W row-major complex plane.
template <typename T>
void fft2_inplace(std::span<std::complex<T>> plane, Index H, Index W) {
  if (static_cast<Index>(plane.size()) != H * W) throw DimensionError("fft2: plane size mismatch");
  for (Index y = 0; y < H; ++y) detail::fft1d(plane.data() + y * W, W);
  std::vector<std::complex<T>> col(static_cast<std::size_t>(H));
  for (Index x = 0; x < W; ++x) {
    for (Index y = 0; y < H; ++y) col[static_cast<std::size_t>(y)] = plane[static_cast<std::size_t>(y * W + x)];
    detail::fft1d(col.data(), H);
    for (Index y = 0; y < H; ++y) plane[static_cast<std::size_t>(y * W + x)] = col[static_cast<std::size_t>(y)];
  }
}

/// Spectrum of a real H x W image: X[u, v] = sum_{y,x} x[y, x] e^{-2 pi i (uy/H + vx/W)}.
template <typename T>
std::vector<std::complex<T>> fft2(std::span<const T> image, Index H, Index W) {
  if (static_cast<Index>(image.size()) != H * W) throw DimensionError("fft2: image size mismatch");
  std::vector<std::complex<T>> out(image.begin(), image.end());
  fft2_inplace<T>(out, H, W);
  return out;
}

/// Differentiable spectrum of every trailing H x W plane. Output appends an
/// axis of length 2 holding (real, imaginary).
template <typename T>
Tensor<T> spectrum(const Tensor<T>& x) {
  if (x.rank() < 2) throw DimensionError("spectrum: rank < 2");
  const Index H = x.dim(-2), W = x.dim(-1);
  const Index planes = x.numel() / std::max<Index>(H * W, 1);
  Shape out_shape = x.shape();
  out_shape.push_back(2);
  std::vector<T> out(static_cast<std::size_t>(x.numel() * 2));
  std::vector<std::complex<T>> buf(static_cast<std::size_t>(H * W));
  const T* xv = x.data().data();
  for (Index p = 0; p < planes; ++p) {
    for (Index i = 0; i < H * W; ++i) buf[static_cast<std::size_t>(i)] = xv[p * H * W + i];
    fft2_inplace<T>(buf, H, W);
    for (Index i = 0; i < H * W; ++i) {
      out[static_cast<std::size_t>(2 * (p * H * W + i))] = buf[static_cast<std::size_t>(i)].real();
      out[static_cast<std::size_t>(2 * (p * H * W + i) + 1)] = buf[static_cast<std::size_t>(i)].imag();
    }
  }
  // The map is linear and real-to-complex; its adjoint is Re(DFT(g_re - i g_im)).
  return detail::record<T>("spectrum", std::move(out_shape), std::move(out),
                           detail::NodeList<T>{x.node_ptr()}, [planes, H, W](detail::Node<T>& self) {
                             T* gx = self.input_grad(0);
                             if (!gx) return;
                             std::vector<std::complex<T>> g(static_cast<std::size_t>(H * W));
                             for (Index p = 0; p < planes; ++p) {
                               const T* gs = self.grad.data() + 2 * p * H * W;
                               for (Index i = 0; i < H * W; ++i)
                                 g[static_cast<std::size_t>(i)] = {gs[2 * i], -gs[2 * i + 1]};
                               fft2_inplace<T>(g, H, W);
                               for (Index i = 0; i < H * W; ++i) gx[p * H * W + i] += g[static_cast<std::size_t>(i)].real();
                             }
                           });
}

}  // namespace sfafnet
