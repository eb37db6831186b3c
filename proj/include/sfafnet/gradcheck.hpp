#pragma once

// Central finite-difference gradient checks in double precision.
//
// Each case builds a small random instance, contracts its output with a fixed
// random tensor to get a scalar, and compares the backward pass against
// (f(x + h) - f(x - h)) / 2h on a sample of coordinates of every checked
// tensor. The reported error treats all checked coordinates as one gradient
// vector: max|analytic - numeric| over the larger of the two infinity norms
// (floored at 1e-8). Per-tensor ratios are meaningless for parameters whose
// true gradient is structurally near zero.

#include <algorithm>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "sfafnet/losses.hpp"
#include "sfafnet/network.hpp"

namespace sfafnet {

struct GradCheckOptions {
  double step = 1e-4;
  double tolerance = 1e-3;
  Index coords_per_tensor = 24;
};

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0;
  std::string worst_tensor;
  Index coords_checked = 0;
  bool passed = false;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor<double>>>;

template <typename LossFn>
GradCheckResult check_gradients(const std::string& name, LossFn&& loss, const NamedTensors& wrt,
                                std::uint64_t seed, const GradCheckOptions& opts = {}) {
  for (const auto& [n, t] : wrt) {
    Tensor<double> handle = t;
    handle.zero_grad();
  }
  loss().backward();

  Rng rng(seed);
  GradCheckResult res{name, 0.0, {}, 0, false};
  double max_diff = 0, max_a = 0, max_n = 0;
  for (const auto& [tname, t] : wrt) {
    Tensor<double> handle = t;
    const std::vector<double> analytic = t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                                      : std::vector<double>(static_cast<std::size_t>(t.numel()), 0.0);
    std::vector<Index> coords(static_cast<std::size_t>(t.numel()));
    std::iota(coords.begin(), coords.end(), Index{0});
    if (t.numel() > opts.coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng.engine());
      coords.resize(static_cast<std::size_t>(opts.coords_per_tensor));
    }
    double tensor_diff = 0;
    for (Index i : coords) {
      auto data = handle.mutable_data();
      const double orig = data[static_cast<std::size_t>(i)];
      double plus, minus;
      {
        NoGradGuard ng;
        data[static_cast<std::size_t>(i)] = orig + opts.step;
        plus = loss().item();
        data[static_cast<std::size_t>(i)] = orig - opts.step;
        minus = loss().item();
        data[static_cast<std::size_t>(i)] = orig;
      }
      const double numeric = (plus - minus) / (2 * opts.step);
      const double a = analytic[static_cast<std::size_t>(i)];
      tensor_diff = std::max(tensor_diff, std::abs(a - numeric));
      max_a = std::max(max_a, std::abs(a));
      max_n = std::max(max_n, std::abs(numeric));
    }
    res.coords_checked += static_cast<Index>(coords.size());
    if (tensor_diff >= max_diff) {
      max_diff = tensor_diff;
      res.worst_tensor = tname;
    }
  }
  res.max_rel_error = max_diff / std::max({max_a, max_n, 1e-8});
  res.passed = res.max_rel_error < opts.tolerance;
  return res;
}

namespace detail {

inline Tensor<double> random_input(Shape shape, Rng& rng) { return uniform_tensor<double>(std::move(shape), 1.0, rng); }

/// Scalar <out, R> for a fixed random R, so no output direction is privileged.
inline std::function<Tensor<double>(const Tensor<double>&)> projector(const Shape& shape, Rng& rng) {
  Tensor<double> r = uniform_tensor<double>(shape, 1.0, rng, false);
  return [r](const Tensor<double>& out) { return sum(mul(out, r)); };
}

/// Replace every parameter (including zero-initialised ones) with U(-b, b).
inline void randomize(const ParamList<double>& params, Rng& rng, double bound = 0.5) {
  for (const auto& [name, p] : params) {
    Tensor<double> handle = p;
    for (double& v : handle.mutable_data()) v = rng.uniform(-bound, bound);
  }
}

inline NamedTensors with_input(const Tensor<double>& x, const ParamList<double>& params) {
  NamedTensors out{{"input", x}};
  out.insert(out.end(), params.begin(), params.end());
  return out;
}

}  // namespace detail

struct GradCheckCase {
  std::string name;
  std::function<GradCheckResult(std::uint64_t, const GradCheckOptions&)> run;
};

/// Every differentiable building block plus the tiny end-to-end network.
inline std::vector<GradCheckCase> gradcheck_suite() {
  using T = double;
  std::vector<GradCheckCase> cases;
  auto add_case = [&](std::string name, auto body) { cases.push_back({std::move(name), body}); };

  add_case("conv2d", [](std::uint64_t seed, const GradCheckOptions& o) {
    Rng rng(seed);
    auto x = detail::random_input({2, 4, 6, 7}, rng);
    auto dense = Conv2d<T>::make(4, 6, 3, rng, {1, Padding::reflect, 1});
    auto grouped = Conv2d<T>::make(6, 6, 3, rng, {2, Padding::zero, 2});
    ParamList<T> ps;
    dense.collect("dense", ps);
    grouped.collect("grouped", ps);
    detail::randomize(ps, rng);
    auto proj = detail::projector({2, 6, 3, 4}, rng);
    return check_gradients("conv2d", [&] { return proj(grouped(dense(x))); }, detail::with_input(x, ps), seed, o);
  });

  add_case("layer_norm", [](std::uint64_t seed, const GradCheckOptions& o) {
    Rng rng(seed);
    auto x = detail::random_input({2, 5, 4, 3}, rng);
    auto ln = LayerNorm2d<T>::make(5);
    ParamList<T> ps;
    ln.collect("norm", ps);
    detail::randomize(ps, rng, 1.0);
    auto proj = detail::projector(x.shape(), rng);
    return check_gradients("layer_norm", [&] { return proj(ln(x)); }, detail::with_input(x, ps), seed, o);
  });

  add_case("softmax", [](std::uint64_t seed, const GradCheckOptions& o) {
    Rng rng(seed);
    auto x = detail::random_input({3, 4, 5}, rng);
    auto proj = detail::projector(x.shape(), rng);
    return check_gradients("softmax", [&] { return proj(add(softmax(x, -1), softmax(x, 1))); }, {{"input", x}}, seed, o);
  });

  add_case("simple_gate", [](std::uint64_t seed, const GradCheckOptions& o) {
    Rng rng(seed);
    auto x = detail::random_input({2, 6, 3, 3}, rng);
    auto proj = detail::projector({2, 3, 3, 3}, rng);
    return check_gradients("simple_gate", [&] { return proj(simple_gate(x)); }, {{"input", x}}, seed, o);
  });

  add_case("sca", [](std::uint64_t seed, const GradCheckOptions& o) {
    Rng rng(seed);
    auto x = detail::random_input({2, 4, 5, 5}, rng);
    auto block = SCABlockParams<T>::make(4, rng);
    ParamList<T> ps;
    block.collect("sca", ps);
    detail::randomize(ps, rng);
    auto proj = detail::projector(x.shape(), rng);
    return check_gradients("sca", [&] { return proj(scablock_forward(x, block)); }, detail::with_input(x, ps), seed, o);
  });

  add_case("nafblock", [](std::uint64_t seed, const GradCheckOptions& o) {
    Rng rng(seed);
    auto x = detail::random_input({1, 4, 6, 6}, rng);
    auto block = NAFBlockParams<T>::make(4, rng);
    ParamList<T> ps;
    block.collect("naf", ps);
    detail::randomize(ps, rng);
    auto proj = detail::projector(x.shape(), rng);
    return check_gradients("nafblock", [&] { return proj(nafblock_forward(x, block)); }, detail::with_input(x, ps), seed, o);
  });

  add_case("fdgm_params", [](std::uint64_t seed, const GradCheckOptions& o) {
    Rng rng(seed);
    auto x = uniform_tensor<T>({2, 4, 6, 6}, 1.0, rng, false);
    auto p = FDGMParams<T>::make(4, 2, 3, rng);
    ParamList<T> ps;
    p.collect("fdgm", ps);
    detail::randomize(ps, rng);
    auto proj_l = detail::projector(x.shape(), rng);
    auto proj_h = detail::projector(x.shape(), rng);
    auto loss = [&] {
      auto out = fdgm_forward(x, p);
      return add(proj_l(out.low_band), proj_h(out.high_band));
    };
    return check_gradients("fdgm_params", loss, NamedTensors(ps.begin(), ps.end()), seed, o);
  });

  add_case("fdgm_input", [](std::uint64_t seed, const GradCheckOptions& o) {
    Rng rng(seed);
    auto x = detail::random_input({2, 4, 6, 6}, rng);
    auto p = FDGMParams<T>::make(4, 2, 3, rng);
    ParamList<T> ps;
    p.collect("fdgm", ps);
    detail::randomize(ps, rng);
    auto proj_l = detail::projector(x.shape(), rng);
    auto proj_h = detail::projector(x.shape(), rng);
    auto loss = [&] {
      auto out = fdgm_forward(x, p);
      return add(proj_l(out.low_band), proj_h(out.high_band));
    };
    return check_gradients("fdgm_input", loss, {{"input", x}}, seed, o);
  });

  add_case("gate_reweight", [](std::uint64_t seed, const GradCheckOptions& o) {
    Rng rng(seed);
    auto x = detail::random_input({2, 8, 4, 4}, rng);
    auto p = GateParams<T>::make(8, rng);
    ParamList<T> ps;
    p.collect("gate", ps);
    detail::randomize(ps, rng);
    auto proj = detail::projector(x.shape(), rng);
    return check_gradients("gate_reweight", [&] { return proj(gate_reweight(x, p)); }, detail::with_input(x, ps), seed, o);
  });

  add_case("cam_fuse", [](std::uint64_t seed, const GradCheckOptions& o) {
    Rng rng(seed);
    auto a = detail::random_input({2, 4, 4, 5}, rng);
    auto b = detail::random_input({2, 4, 4, 5}, rng);
    auto p = CAMParams<T>::make(4, rng);
    ParamList<T> ps;
    p.collect("cam", ps);
    detail::randomize(ps, rng, 1.0);
    auto proj = detail::projector(a.shape(), rng);
    NamedTensors wrt{{"a", a}, {"b", b}};
    wrt.insert(wrt.end(), ps.begin(), ps.end());
    return check_gradients("cam_fuse", [&] { return proj(cam_fuse(a, b, p)); }, wrt, seed, o);
  });

  add_case("adaptive_fuse", [](std::uint64_t seed, const GradCheckOptions& o) {
    Rng rng(seed);
    auto x1 = detail::random_input({2, 4, 3, 3}, rng);
    auto x2 = detail::random_input({2, 4, 3, 3}, rng);
    auto x3 = detail::random_input({2, 4, 3, 3}, rng);
    auto p = AdaptiveFuseParams<T>::make(4, rng);
    ParamList<T> ps;
    p.collect("fuse", ps);
    detail::randomize(ps, rng);
    auto proj = detail::projector(x1.shape(), rng);
    NamedTensors wrt{{"x_sl", x1}, {"x_sh", x2}, {"x_lh", x3}};
    wrt.insert(wrt.end(), ps.begin(), ps.end());
    return check_gradients("adaptive_fuse", [&] { return proj(adaptive_fuse(x1, x2, x3, p)); }, wrt, seed, o);
  });

  add_case("charbonnier", [](std::uint64_t seed, const GradCheckOptions& o) {
    Rng rng(seed);
    auto pred = detail::random_input({2, 3, 5, 5}, rng);
    auto target = uniform_tensor<T>({2, 3, 5, 5}, 1.0, rng, false);
    return check_gradients("charbonnier", [&] { return charbonnier(pred, target); }, {{"pred", pred}}, seed, o);
  });

  add_case("edge_loss", [](std::uint64_t seed, const GradCheckOptions& o) {
    Rng rng(seed);
    auto pred = detail::random_input({2, 3, 5, 6}, rng);
    auto target = uniform_tensor<T>({2, 3, 5, 6}, 1.0, rng, false);
    return check_gradients("edge_loss", [&] { return edge_loss(pred, target); }, {{"pred", pred}}, seed, o);
  });

  add_case("freq_loss", [](std::uint64_t seed, const GradCheckOptions& o) {
    Rng rng(seed);
    auto pred = detail::random_input({1, 3, 8, 6}, rng);
    auto target = uniform_tensor<T>({1, 3, 8, 6}, 1.0, rng, false);
    return check_gradients("freq_loss", [&] { return freq_loss(pred, target); }, {{"pred", pred}}, seed, o);
  });

  add_case("total_loss", [](std::uint64_t seed, const GradCheckOptions& o) {
    Rng rng(seed);
    NamedTensors wrt;
    std::vector<Tensor<T>> preds, targets;
    for (Index s : {8, 8, 4, 2}) {
      preds.push_back(detail::random_input({1, 3, s, s}, rng));
      targets.push_back(uniform_tensor<T>({1, 3, s, s}, 1.0, rng, false));
      wrt.emplace_back("pred" + std::to_string(wrt.size()), preds.back());
    }
    return check_gradients("total_loss", [&] { return total_loss<T>(preds, targets).total; }, wrt, seed, o);
  });

  add_case("network", [](std::uint64_t seed, const GradCheckOptions& o) {
    Rng rng(seed);
    ArchConfig cfg{4, 1, 2, 3, std::nullopt};
    auto net = SFAFNet<T>::make(cfg, seed);
    const auto ps = net.parameters();
    detail::randomize(ps, rng, 0.3);
    auto x = uniform_tensor<T>({1, 3, 16, 16}, 0.5, rng);
    std::vector<std::function<Tensor<T>(const Tensor<T>&)>> projs;
    for (Index s : {16, 16, 8, 4}) projs.push_back(detail::projector({1, 3, s, s}, rng));
    auto loss = [&] {
      auto outs = net.forward(x);
      Tensor<T> acc = projs[0](outs[0]);
      for (std::size_t i = 1; i < 4; ++i) acc = add(acc, projs[i](outs[i]));
      return acc;
    };
    GradCheckOptions small = o;
    small.coords_per_tensor = std::min<Index>(o.coords_per_tensor, 3);
    return check_gradients("network", loss, detail::with_input(x, ps), seed, small);
  });

  return cases;
}

/// Cases whose name equals `filter` or starts with `filter` + "_"; all when empty.
inline std::vector<GradCheckResult> run_gradcheck(const std::string& filter = {}, std::uint64_t seed = 0,
                                                  const GradCheckOptions& opts = {}) {
  std::vector<GradCheckResult> out;
  for (const auto& c : gradcheck_suite()) {
    if (!filter.empty() && c.name != filter && c.name.rfind(filter + "_", 0) != 0) continue;
    out.push_back(c.run(seed, opts));
  }
  if (out.empty()) throw ConfigError("gradcheck: unknown module '" + filter + "'");
  return out;
}

}  // namespace sfafnet
