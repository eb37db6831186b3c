#pragma once

// Elementwise, reduction, shape and linear-algebra ops on Tensor.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "sfafnet/tensor.hpp"

namespace sfafnet {

namespace detail {

inline int normalize_axis(int axis, int rank, const char* op) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " invalid for rank " + std::to_string(rank));
  }
  return a;
}

// Sizes before, along, and after an axis.
struct AxisSplit {
  Index outer = 1, length = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= s[static_cast<std::size_t>(i)];
  r.length = s[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(op) + ": rank mismatch " + shape_str(a) + " vs " +
                         shape_str(b));
  }
  Shape out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i] || b[i] == 1) {
      out[i] = a[i];
    } else if (a[i] == 1) {
      out[i] = b[i];
    } else {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                           shape_str(b));
    }
  }
  return out;
}

inline std::vector<Index> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<Index> st(in.size(), 0);
  Index acc = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    st[i] = (in[i] == 1 && out[i] != 1) ? 0 : acc;
    acc *= in[i];
  }
  return st;
}

// Calls f(out_index, a_offset, b_offset) for every output element.
template <typename F>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, F&& f) {
  const Index n = shape_numel(out);
  if (a == out && b == out) {
    for (Index i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  if (n == 0) return;
  const auto sa = broadcast_strides(a, out);
  const auto sb = broadcast_strides(b, out);
  const std::size_t r = out.size();
  std::vector<Index> idx(r, 0);
  Index oa = 0, ob = 0;
  const Index last = out[r - 1];
  const Index la = sa[r - 1], lb = sb[r - 1];
  for (Index i = 0; i < n;) {
    Index ia = oa, ib = ob;
    for (Index j = 0; j < last; ++j, ++i, ia += la, ib += lb) f(i, ia, ib);
    std::size_t d = r - 1;
    while (d > 0) {
      --d;
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out[d]) break;
      oa -= sa[d] * out[d];
      ob -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

template <typename T>
using NodeList = std::vector<std::shared_ptr<Node<T>>>;

template <typename T, typename Forward, typename Derivative>
Tensor<T> unary(const char* op, const Tensor<T>& x, Forward f, Derivative df) {
  const auto& xv = x.node().value;
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  // df(input, output) -> local derivative
  return record<T>(op, x.shape(), std::move(out), NodeList<T>{x.node_ptr()},
                   [df](Node<T>& self) {
                     T* gx = self.input_grad(0);
                     if (!gx) return;
                     const T* xin = self.input_value(0);
                     for (std::size_t i = 0; i < self.value.size(); ++i) {
                       gx[i] += self.grad[i] * df(xin[i], self.value[i]);
                     }
                   });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

/// a + b with broadcasting over size-1 dimensions (equal ranks).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  Shape out_shape = detail::broadcast_shape(a.shape(), b.shape(), "add");
  std::vector<T> out(static_cast<std::size_t>(shape_numel(out_shape)));
  const T* av = a.data().data();
  const T* bv = b.data().data();
  detail::for_each_broadcast(out_shape, a.shape(), b.shape(),
                             [&](Index i, Index ia, Index ib) { out[i] = av[ia] + bv[ib]; });
  const Shape as = a.shape(), bs = b.shape(), os = out_shape;
  return detail::record<T>("add", std::move(out_shape), std::move(out),
                           detail::NodeList<T>{a.node_ptr(), b.node_ptr()},
                           [as, bs, os](detail::Node<T>& self) {
                             T* ga = self.input_grad(0);
                             T* gb = self.input_grad(1);
                             const T* g = self.grad.data();
                             detail::for_each_broadcast(os, as, bs, [&](Index i, Index ia, Index ib) {
                               if (ga) ga[ia] += g[i];
                               if (gb) gb[ib] += g[i];
                             });
                           });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  Shape out_shape = detail::broadcast_shape(a.shape(), b.shape(), "sub");
  std::vector<T> out(static_cast<std::size_t>(shape_numel(out_shape)));
  const T* av = a.data().data();
  const T* bv = b.data().data();
  detail::for_each_broadcast(out_shape, a.shape(), b.shape(),
                             [&](Index i, Index ia, Index ib) { out[i] = av[ia] - bv[ib]; });
  const Shape as = a.shape(), bs = b.shape(), os = out_shape;
  return detail::record<T>("sub", std::move(out_shape), std::move(out),
                           detail::NodeList<T>{a.node_ptr(), b.node_ptr()},
                           [as, bs, os](detail::Node<T>& self) {
                             T* ga = self.input_grad(0);
                             T* gb = self.input_grad(1);
                             const T* g = self.grad.data();
                             detail::for_each_broadcast(os, as, bs, [&](Index i, Index ia, Index ib) {
                               if (ga) ga[ia] += g[i];
                               if (gb) gb[ib] -= g[i];
                             });
                           });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  Shape out_shape = detail::broadcast_shape(a.shape(), b.shape(), "mul");
  std::vector<T> out(static_cast<std::size_t>(shape_numel(out_shape)));
  const T* av = a.data().data();
  const T* bv = b.data().data();
  detail::for_each_broadcast(out_shape, a.shape(), b.shape(),
                             [&](Index i, Index ia, Index ib) { out[i] = av[ia] * bv[ib]; });
  const Shape as = a.shape(), bs = b.shape(), os = out_shape;
  return detail::record<T>("mul", std::move(out_shape), std::move(out),
                           detail::NodeList<T>{a.node_ptr(), b.node_ptr()},
                           [as, bs, os](detail::Node<T>& self) {
                             T* ga = self.input_grad(0);
                             T* gb = self.input_grad(1);
                             const T* a_in = self.input_value(0);
                             const T* b_in = self.input_value(1);
                             const T* g = self.grad.data();
                             detail::for_each_broadcast(os, as, bs, [&](Index i, Index ia, Index ib) {
                               if (ga) ga[ia] += g[i] * b_in[ib];
                               if (gb) gb[ib] += g[i] * a_in[ia];
                             });
                           });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return detail::unary<T>(
      "scale", x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T offset) {
  return detail::unary<T>(
      "add_scalar", x, [offset](T v) { return v + offset; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return scale(x, T(-1));
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary<T>(
      "square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return detail::unary<T>(
      "sqrt", x, [](T v) { return std::sqrt(v); },
      [](T, T y) { return y > T(0) ? T(0.5) / y : T(0); });
}

/// Subgradient 0 at the origin.
template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary<T>(
      "abs", x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary<T>(
      "sigmoid", x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  return detail::record<T>("sum", Shape{}, std::vector<T>{acc}, detail::NodeList<T>{x.node_ptr()},
                           [](detail::Node<T>& self) {
                             T* gx = self.input_grad(0);
                             if (!gx) return;
                             const T g = self.grad[0];
                             const std::size_t n = self.inputs[0]->value.size();
                             for (std::size_t i = 0; i < n; ++i) gx[i] += g;
                           });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

/// Mean along one axis; the axis is kept with length 1.
template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, int axis) {
  const int a = detail::normalize_axis(axis, x.rank(), "mean_axis");
  const auto sp = detail::split_at(x.shape(), a);
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(a)] = 1;
  std::vector<T> out(static_cast<std::size_t>(sp.outer * sp.inner), T(0));
  const T* xv = x.data().data();
  const T inv = T(1) / static_cast<T>(sp.length);
  for (Index o = 0; o < sp.outer; ++o) {
    for (Index l = 0; l < sp.length; ++l) {
      const T* row = xv + (o * sp.length + l) * sp.inner;
      T* dst = out.data() + o * sp.inner;
      for (Index i = 0; i < sp.inner; ++i) dst[i] += row[i];
    }
  }
  for (T& v : out) v *= inv;
  return detail::record<T>("mean_axis", std::move(out_shape), std::move(out),
                           detail::NodeList<T>{x.node_ptr()}, [sp, inv](detail::Node<T>& self) {
                             T* gx = self.input_grad(0);
                             if (!gx) return;
                             for (Index o = 0; o < sp.outer; ++o) {
                               const T* g = self.grad.data() + o * sp.inner;
                               for (Index l = 0; l < sp.length; ++l) {
                                 T* row = gx + (o * sp.length + l) * sp.inner;
                                 for (Index i = 0; i < sp.inner; ++i) row[i] += g[i] * inv;
                               }
                             }
                           });
}

/// Numerically stable softmax along an axis (max-shifted).
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const int a = detail::normalize_axis(axis, x.rank(), "softmax");
  const auto sp = detail::split_at(x.shape(), a);
  std::vector<T> out(x.data().size());
  const T* xv = x.data().data();
  for (Index o = 0; o < sp.outer; ++o) {
    for (Index i = 0; i < sp.inner; ++i) {
      const Index base = o * sp.length * sp.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (Index l = 0; l < sp.length; ++l) mx = std::max(mx, xv[base + l * sp.inner]);
      T total = 0;
      for (Index l = 0; l < sp.length; ++l) {
        const T e = std::exp(xv[base + l * sp.inner] - mx);
        out[base + l * sp.inner] = e;
        total += e;
      }
      const T inv = T(1) / total;
      for (Index l = 0; l < sp.length; ++l) out[base + l * sp.inner] *= inv;
    }
  }
  return detail::record<T>("softmax", x.shape(), std::move(out), detail::NodeList<T>{x.node_ptr()},
                           [sp](detail::Node<T>& self) {
                             T* gx = self.input_grad(0);
                             if (!gx) return;
                             const T* y = self.value.data();
                             const T* g = self.grad.data();
                             for (Index o = 0; o < sp.outer; ++o) {
                               for (Index i = 0; i < sp.inner; ++i) {
                                 const Index base = o * sp.length * sp.inner + i;
                                 T dot = 0;
                                 for (Index l = 0; l < sp.length; ++l) {
                                   const Index k = base + l * sp.inner;
                                   dot += y[k] * g[k];
                                 }
                                 for (Index l = 0; l < sp.length; ++l) {
                                   const Index k = base + l * sp.inner;
                                   gx[k] += y[k] * (g[k] - dot);
                                 }
                               }
                             }
                           });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return detail::record<T>("reshape", std::move(shape), std::move(out),
                           detail::NodeList<T>{x.node_ptr()}, [](detail::Node<T>& self) {
                             T* gx = self.input_grad(0);
                             if (!gx) return;
                             for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
                           });
}

/// Contiguous sub-range [start, start + length) along an axis.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, Index start, Index length) {
  const int a = detail::normalize_axis(axis, x.rank(), "slice");
  const auto sp = detail::split_at(x.shape(), a);
  if (start < 0 || length < 0 || start + length > sp.length) {
    throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") outside axis of length " +
                         std::to_string(sp.length));
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(a)] = length;
  std::vector<T> out(static_cast<std::size_t>(sp.outer * length * sp.inner));
  const T* xv = x.data().data();
  const Index chunk = length * sp.inner;
  for (Index o = 0; o < sp.outer; ++o) {
    std::copy_n(xv + (o * sp.length + start) * sp.inner, chunk, out.data() + o * chunk);
  }
  return detail::record<T>("slice", std::move(out_shape), std::move(out),
                           detail::NodeList<T>{x.node_ptr()},
                           [sp, start, chunk](detail::Node<T>& self) {
                             T* gx = self.input_grad(0);
                             if (!gx) return;
                             for (Index o = 0; o < sp.outer; ++o) {
                               T* dst = gx + (o * sp.length + start) * sp.inner;
                               const T* g = self.grad.data() + o * chunk;
                               for (Index i = 0; i < chunk; ++i) dst[i] += g[i];
                             }
                           });
}

/// Split an axis into `parts` equal pieces.
template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& x, int axis, Index parts) {
  const int a = detail::normalize_axis(axis, x.rank(), "split");
  const Index len = x.shape()[static_cast<std::size_t>(a)];
  if (parts <= 0 || len % parts != 0) {
    throw DimensionError("split: axis of length " + std::to_string(len) +
                         " is not divisible into " + std::to_string(parts) + " parts");
  }
  std::vector<Tensor<T>> out;
  const Index step = len / parts;
  for (Index p = 0; p < parts; ++p) out.push_back(slice(x, a, p * step, step));
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
  if (xs.empty()) throw DimensionError("concat: no inputs");
  const int a = detail::normalize_axis(axis, xs[0].rank(), "concat");
  Shape out_shape = xs[0].shape();
  Index total = 0;
  for (const auto& t : xs) {
    if (t.rank() != xs[0].rank()) throw DimensionError("concat: rank mismatch");
    for (int d = 0; d < t.rank(); ++d) {
      if (d != a && t.shape()[static_cast<std::size_t>(d)] != out_shape[static_cast<std::size_t>(d)]) {
        throw DimensionError("concat: " + shape_str(t.shape()) + " vs " + shape_str(out_shape));
      }
    }
    total += t.shape()[static_cast<std::size_t>(a)];
  }
  out_shape[static_cast<std::size_t>(a)] = total;
  const auto sp = detail::split_at(out_shape, a);
  std::vector<T> out(static_cast<std::size_t>(shape_numel(out_shape)));
  std::vector<Index> lengths;
  detail::NodeList<T> inputs;
  Index offset = 0;
  for (const auto& t : xs) {
    const Index len = t.shape()[static_cast<std::size_t>(a)];
    const Index chunk = len * sp.inner;
    const T* src = t.data().data();
    for (Index o = 0; o < sp.outer; ++o) {
      std::copy_n(src + o * chunk, chunk, out.data() + (o * total + offset) * sp.inner);
    }
    offset += len;
    lengths.push_back(len);
    inputs.push_back(t.node_ptr());
  }
  return detail::record<T>(
      "concat", std::move(out_shape), std::move(out), std::move(inputs),
      [sp, total, lengths](detail::Node<T>& self) {
        Index off = 0;
        for (std::size_t k = 0; k < lengths.size(); ++k) {
          const Index chunk = lengths[k] * sp.inner;
          if (T* gx = self.input_grad(k)) {
            for (Index o = 0; o < sp.outer; ++o) {
              const T* g = self.grad.data() + (o * total + off) * sp.inner;
              T* dst = gx + o * chunk;
              for (Index i = 0; i < chunk; ++i) dst[i] += g[i];
            }
          }
          off += lengths[k];
        }
      });
}

/// Swap the last two axes.
template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() < 2) throw DimensionError("transpose: rank < 2");
  Shape out_shape = x.shape();
  const Index rows = out_shape[out_shape.size() - 2];
  const Index cols = out_shape[out_shape.size() - 1];
  std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
  const Index batch = x.numel() / std::max<Index>(rows * cols, 1);
  std::vector<T> out(x.data().size());
  const T* xv = x.data().data();
  for (Index b = 0; b < batch; ++b) {
    const T* src = xv + b * rows * cols;
    T* dst = out.data() + b * rows * cols;
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
  }
  return detail::record<T>("transpose", std::move(out_shape), std::move(out),
                           detail::NodeList<T>{x.node_ptr()},
                           [batch, rows, cols](detail::Node<T>& self) {
                             T* gx = self.input_grad(0);
                             if (!gx) return;
                             for (Index b = 0; b < batch; ++b) {
                               const T* g = self.grad.data() + b * rows * cols;
                               T* dst = gx + b * rows * cols;
                               for (Index r = 0; r < rows; ++r)
                                 for (Index c = 0; c < cols; ++c) dst[r * cols + c] += g[c * rows + r];
                             }
                           });
}

namespace detail {

// C[M x N] += A[M x K] * B[K x N], all row-major.
template <typename T>
void gemm_acc(const T* A, const T* B, T* C, Index M, Index K, Index N) {
  for (Index i = 0; i < M; ++i) {
    T* crow = C + i * N;
    for (Index k = 0; k < K; ++k) {
      const T a = A[i * K + k];
      const T* brow = B + k * N;
      for (Index j = 0; j < N; ++j) crow[j] += a * brow[j];
    }
  }
}

}  // namespace detail

/// Matrix product of rank-2 operands, or batched over a leading axis for rank 3.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != b.rank() || (a.rank() != 2 && a.rank() != 3)) {
    throw DimensionError("matmul: expected two rank-2 or two rank-3 operands, got " +
                         shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const bool batched = a.rank() == 3;
  const Index batch = batched ? a.dim(0) : 1;
  if (batched && b.dim(0) != batch) throw DimensionError("matmul: batch mismatch");
  const Index M = a.dim(-2), K = a.dim(-1), N = b.dim(-1);
  if (b.dim(-2) != K) {
    throw DimensionError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " @ " +
                         shape_str(b.shape()));
  }
  Shape out_shape = batched ? Shape{batch, M, N} : Shape{M, N};
  std::vector<T> out(static_cast<std::size_t>(batch * M * N), T(0));
  for (Index p = 0; p < batch; ++p) {
    detail::gemm_acc(a.data().data() + p * M * K, b.data().data() + p * K * N,
                     out.data() + p * M * N, M, K, N);
  }
  return detail::record<T>(
      "matmul", std::move(out_shape), std::move(out),
      detail::NodeList<T>{a.node_ptr(), b.node_ptr()}, [batch, M, K, N](detail::Node<T>& self) {
        T* ga = self.input_grad(0);
        T* gb = self.input_grad(1);
        const T* av = self.input_value(0);
        const T* bv = self.input_value(1);
        for (Index p = 0; p < batch; ++p) {
          const T* g = self.grad.data() + p * M * N;
          if (ga) {
            // dA = dC * B^T
            T* dst = ga + p * M * K;
            const T* B = bv + p * K * N;
            for (Index i = 0; i < M; ++i)
              for (Index k = 0; k < K; ++k) {
                T acc = 0;
                for (Index j = 0; j < N; ++j) acc += g[i * N + j] * B[k * N + j];
                dst[i * K + k] += acc;
              }
          }
          if (gb) {
            // dB = A^T * dC
            T* dst = gb + p * K * N;
            const T* A = av + p * M * K;
            for (Index i = 0; i < M; ++i)
              for (Index k = 0; k < K; ++k) {
                const T s = A[i * K + k];
                for (Index j = 0; j < N; ++j) dst[k * N + j] += s * g[i * N + j];
              }
          }
        }
      });
}

}  // namespace sfafnet
