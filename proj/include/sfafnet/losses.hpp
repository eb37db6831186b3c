#pragma once

// Multi-scale restoration loss: Charbonnier + edge (Laplacian) + spectral L1.

#include <span>
#include <string>
#include <vector>

#include "sfafnet/fft.hpp"
#include "sfafnet/image_ops.hpp"

namespace sfafnet {

struct LossConfig {
  double eps = 0.001;
  double lambda_freq = 0.1;
  double delta_edge = 0.05;
};

namespace detail {

template <typename T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace detail

/// mean(sqrt((pred - target)^2 + eps^2))
template <typename T>
Tensor<T> charbonnier(const Tensor<T>& pred, const Tensor<T>& target, double eps = 0.001) {
  detail::require_same(pred, target, "charbonnier");
  const T e2 = static_cast<T>(eps * eps);
  return mean(sqrt(add_scalar(square(sub(pred, target)), e2)));
}

/// 4-neighbour Laplacian of every channel, reflect padded.
template <typename T>
Tensor<T> laplacian(const Tensor<T>& x) {
  detail::require_nchw(x.shape(), "laplacian");
  const Index C = x.dim(1);
  std::vector<T> k(static_cast<std::size_t>(C * 9));
  for (Index c = 0; c < C; ++c) {
    T* w = k.data() + c * 9;
    w[1] = w[3] = w[5] = w[7] = T(1);
    w[4] = T(-4);
  }
  return conv2d(x, Tensor<T>::from_vector({C, 1, 3, 3}, std::move(k)), Tensor<T>{},
                ConvOptions{1, Padding::reflect, C});
}

template <typename T>
Tensor<T> edge_loss(const Tensor<T>& pred, const Tensor<T>& target, double eps = 0.001) {
  detail::require_same(pred, target, "edge_loss");
  return charbonnier(laplacian(pred), laplacian(target), eps);
}

/// Mean absolute difference of the real and imaginary parts of the per-channel
/// 2-D DFTs.
template <typename T>
Tensor<T> freq_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  detail::require_same(pred, target, "freq_loss");
  return mean(abs(spectrum(sub(pred, target))));
}

template <typename T>
struct LossTerms {
  Tensor<T> total;
  double charbonnier = 0;  // summed over scales, unweighted
  double edge = 0;
  double freq = 0;
};

/// sum over the four scales of L_c + delta * L_e + lambda * L_f.
template <typename T>
LossTerms<T> total_loss(std::span<const Tensor<T>> outputs, std::span<const Tensor<T>> targets,
                        const LossConfig& cfg = {}) {
  if (outputs.size() != 4 || targets.size() != 4) {
    throw ContractError("total_loss: expected 4 outputs and 4 targets, got " + std::to_string(outputs.size()) +
                        " and " + std::to_string(targets.size()));
  }
  LossTerms<T> terms;
  for (std::size_t i = 0; i < 4; ++i) {
    Tensor<T> lc = charbonnier(outputs[i], targets[i], cfg.eps);
    Tensor<T> le = edge_loss(outputs[i], targets[i], cfg.eps);
    Tensor<T> lf = freq_loss(outputs[i], targets[i]);
    terms.charbonnier += static_cast<double>(lc.item());
    terms.edge += static_cast<double>(le.item());
    terms.freq += static_cast<double>(lf.item());
    Tensor<T> scale_loss =
        add(add(lc, scale(le, static_cast<T>(cfg.delta_edge))), scale(lf, static_cast<T>(cfg.lambda_freq)));
    terms.total = terms.total.defined() ? add(terms.total, scale_loss) : scale_loss;
  }
  return terms;
}

}  // namespace sfafnet
