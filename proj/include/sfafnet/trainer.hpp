#pragma once

// Adam with a single cosine-annealed cycle, the training loop, evaluation and
// resumable checkpoints.

#include <cmath>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "sfafnet/data.hpp"
#include "sfafnet/losses.hpp"
#include "sfafnet/metrics.hpp"
#include "sfafnet/network.hpp"

namespace sfafnet {

struct TrainConfig {
  double lr_init = 2e-4;
  double lr_final = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  Index batch_size = 4;
  Index total_steps = 2000;
  Index patch_size = 32;
  std::uint64_t seed = 0;
  double clip_grad_norm = 0.0;  // <= 0 disables clipping
  Index val_every = 0;          // 0: no periodic validation
  Index save_every = 0;         // 0: checkpoint only at the end
  LossConfig loss;

  void validate() const {
    if (!(lr_final >= 0.0 && lr_final <= lr_init)) throw ConfigError("need 0 <= lr_final <= lr_init");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (total_steps < 1) throw ConfigError("total steps must be >= 1");
    if (patch_size < 4 || patch_size % 4 != 0) throw ConfigError("patch size must be a positive multiple of 4");
  }
};

/// lr_final + (lr_init - lr_final) (1 + cos(pi t / T)) / 2
inline double cosine_lr(Index t, const TrainConfig& cfg) {
  if (t < 0 || t > cfg.total_steps) throw ContractError("cosine_lr: step outside [0, total_steps]");
  const double phase = std::numbers::pi * static_cast<double>(t) / static_cast<double>(cfg.total_steps);
  return cfg.lr_final + 0.5 * (cfg.lr_init - cfg.lr_final) * (1.0 + std::cos(phase));
}

template <typename T>
struct OptimState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::int64_t t = 0;
};

/// One bias-corrected Adam update over every parameter, reading gradients
/// from the parameters' grad buffers (missing gradients count as zero).
template <typename T>
void adam_step(const ParamList<T>& params, OptimState<T>& state, double lr, const TrainConfig& cfg) {
  if (state.m.empty()) {
    for (const auto& [name, p] : params) {
      state.m.emplace_back(static_cast<std::size_t>(p.numel()), T(0));
      state.v.emplace_back(static_cast<std::size_t>(p.numel()), T(0));
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adam_step: optimizer state does not match parameters");
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T step = static_cast<T>(lr / bc1);
  const T inv_bc2 = static_cast<T>(1.0 / bc2);
  const T eps = static_cast<T>(cfg.adam_eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T> p = params[k].second;
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != static_cast<std::size_t>(p.numel())) throw ContractError("adam_step: moment shape mismatch");
    auto w = p.mutable_data();
    const auto g = p.grad();
    const bool has = !g.empty();
    for (std::size_t i = 0; i < m.size(); ++i) {
      const T gi = has ? g[i] : T(0);
      m[i] = b1 * m[i] + (T(1) - b1) * gi;
      v[i] = b2 * v[i] + (T(1) - b2) * gi * gi;
      w[i] -= step * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
    }
  }
}

struct StepStats {
  Index step = 0;  // 1-based index of the completed step
  double lr = 0;
  double loss_total = 0;
  double loss_char = 0;
  double loss_edge = 0;
  double loss_freq = 0;
};

/// Restored full-resolution image, clamped to [0, 1]. Inputs are mirror-padded
/// to a multiple of 4 no smaller than 4 * kernel (the quarter-scale filters
/// need a full window) and cropped back.
template <typename T>
Image restore(const SFAFNet<T>& model, const Image& degraded) {
  NoGradGuard no_grad;
  const Index H = degraded.height, W = degraded.width, floor = 4 * model.config.kernel;
  const Index Hp = std::max((H + 3) / 4 * 4, floor), Wp = std::max((W + 3) / 4 * 4, floor);
  Image input = degraded;
  if (Hp != H || Wp != W) {
    input = Image(degraded.channels, Hp, Wp);
    auto fold = [](Index i, Index n) {
      if (n == 1) return Index(0);
      const Index j = i % (2 * (n - 1));
      return j < n ? j : 2 * (n - 1) - j;
    };
    for (Index c = 0; c < degraded.channels; ++c)
      for (Index y = 0; y < Hp; ++y)
        for (Index x = 0; x < Wp; ++x) input.at(c, y, x) = degraded.at(c, fold(y, H), fold(x, W));
  }
  const Image batch[1] = {input};
  Image out = tensor_to_image(model.forward(images_to_tensor<T>(batch))[0]);
  if (Hp != H || Wp != W) {
    Image cropped(out.channels, H, W);
    for (Index c = 0; c < out.channels; ++c)
      for (Index y = 0; y < H; ++y)
        for (Index x = 0; x < W; ++x) cropped.at(c, y, x) = out.at(c, y, x);
    out = std::move(cropped);
  }
  clamp01(out);
  return out;
}

struct EvalRow {
  std::string id;
  double psnr = 0, ssim = 0, mae = 0;
  double psnr_degraded = 0;
};

template <typename T>
std::vector<EvalRow> evaluate(const SFAFNet<T>& model, const std::vector<ImagePair>& pairs) {
  std::vector<EvalRow> rows;
  for (const auto& p : pairs) {
    const Image restored = restore(model, p.degraded);
    rows.push_back({p.id, psnr(restored, p.sharp), ssim(restored, p.sharp), mae(restored, p.sharp),
                    psnr(p.degraded, p.sharp)});
  }
  return rows;
}

inline double mean_psnr(const std::vector<EvalRow>& rows, bool degraded = false) {
  double acc = 0;
  for (const auto& r : rows) acc += degraded ? r.psnr_degraded : r.psnr;
  return rows.empty() ? 0.0 : acc / static_cast<double>(rows.size());
}

template <typename T>
class Trainer {
 public:
  Trainer(SFAFNet<T> model, std::vector<ImagePair> data, TrainConfig cfg)
      : model_(std::move(model)), data_(std::move(data)), cfg_(cfg), params_(model_.parameters()) {
    cfg_.validate();
    if (data_.empty()) throw ContractError("train: dataset is empty");
    for (const auto& p : data_) {
      if (p.sharp.height < cfg_.patch_size || p.sharp.width < cfg_.patch_size) {
        throw ConfigError("train: image " + p.id + " is smaller than the patch size");
      }
    }
  }

  /// Batch for a given step; depends only on (seed, step).
  std::vector<ImagePair> batch_for_step(Index step) const {
    Rng rng(mix_seed(cfg_.seed, static_cast<std::uint64_t>(step)));
    std::vector<ImagePair> batch;
    for (Index b = 0; b < cfg_.batch_size; ++b) {
      const ImagePair& src = data_[static_cast<std::size_t>(rng.below(static_cast<Index>(data_.size())))];
      const std::uint64_t crop_seed = rng.engine()();
      const std::uint64_t flip_seed = rng.engine()();
      batch.push_back(augment(extract_patches(src, cfg_.patch_size, 1, crop_seed)[0], flip_seed));
    }
    return batch;
  }

  StepStats step() {
    const Index t = state_.t;
    if (t >= cfg_.total_steps) throw ContractError("train: all steps already completed");
    const auto batch = batch_for_step(t);
    std::vector<Image> degraded, sharp;
    for (const auto& p : batch) {
      degraded.push_back(p.degraded);
      sharp.push_back(p.sharp);
    }
    const Tensor<T> input = images_to_tensor<T>(degraded);
    const Tensor<T> target = images_to_tensor<T>(sharp);
    const Tensor<T> half = resample(target, Resample::down2);
    const std::array<Tensor<T>, 4> targets{target, target, half, resample(half, Resample::down2)};

    model_.zero_grad();
    const auto outputs = model_.forward(input);
    LossTerms<T> loss = total_loss<T>(outputs, targets, cfg_.loss);
    if (!std::isfinite(static_cast<double>(loss.total.item()))) {
      throw NonFiniteError("train: non-finite loss at step " + std::to_string(t + 1) +
                           "; first non-finite tensor: " + first_non_finite(outputs));
    }
    loss.total.backward();
    if (cfg_.clip_grad_norm > 0.0) clip_gradients();
    const double lr = cosine_lr(t, cfg_);
    adam_step(params_, state_, lr, cfg_);
    return {t + 1, lr, static_cast<double>(loss.total.item()), loss.charbonnier, loss.edge, loss.freq};
  }

  /// Remaining steps with CSV logging. val_psnr is written every val_every
  /// steps (and at the last step) when a validation set is given.
  void run(std::ostream* log, const std::vector<ImagePair>* val = nullptr, const std::string& checkpoint_path = {}) {
    if (log && state_.t == 0) *log << "step,lr,loss_total,loss_char,loss_edge,loss_freq,val_psnr\n";
    while (state_.t < cfg_.total_steps) {
      const StepStats s = step();
      std::optional<double> vp;
      if (val && !val->empty() && cfg_.val_every > 0 && (s.step % cfg_.val_every == 0 || s.step == cfg_.total_steps)) {
        vp = mean_psnr(evaluate(model_, *val));
      }
      if (log) {
        *log << s.step << ',' << s.lr << ',' << s.loss_total << ',' << s.loss_char << ',' << s.loss_edge << ','
             << s.loss_freq << ',';
        if (vp) *log << *vp;
        *log << '\n';
      }
      if (!checkpoint_path.empty() && cfg_.save_every > 0 && s.step % cfg_.save_every == 0) save(checkpoint_path);
    }
    if (!checkpoint_path.empty()) save(checkpoint_path);
  }

  Checkpoint to_checkpoint() const {
    Checkpoint ck = model_.to_checkpoint();
    if (!state_.m.empty()) {
      for (std::size_t k = 0; k < params_.size(); ++k) {
        const auto& [name, p] = params_[k];
        ck.records.push_back(make_record<T>("optim.m." + name, p.shape(), state_.m[k]));
        ck.records.push_back(make_record<T>("optim.v." + name, p.shape(), state_.v[k]));
      }
    }
    const std::int64_t step[1] = {state_.t};
    ck.records.push_back(make_record<std::int64_t>("optim.step", {1}, step));
    return ck;
  }

  void save(const std::string& path) const { write_checkpoint(path, to_checkpoint()); }

  /// Rebuild a trainer mid-run from a checkpoint written by save().
  static Trainer resume(const Checkpoint& ck, std::vector<ImagePair> data, TrainConfig cfg) {
    Trainer tr(SFAFNet<T>::from_checkpoint(ck), std::move(data), cfg);
    if (const Record* r = ck.find("optim.step")) tr.state_.t = record_values<std::int64_t>(*r).at(0);
    if (tr.state_.t > 0) {
      for (const auto& [name, p] : tr.params_) {
        const Record* m = ck.find("optim.m." + name);
        const Record* v = ck.find("optim.v." + name);
        if (!m || !v) throw DecodeError("checkpoint is missing optimizer state for " + name);
        tr.state_.m.push_back(record_values<T>(*m));
        tr.state_.v.push_back(record_values<T>(*v));
        if (tr.state_.m.back().size() != static_cast<std::size_t>(p.numel())) {
          throw DecodeError("optimizer state size mismatch for " + name);
        }
      }
    }
    return tr;
  }

  Index steps_done() const { return state_.t; }
  const SFAFNet<T>& model() const { return model_; }
  const TrainConfig& config() const { return cfg_; }
  const OptimState<T>& optimizer() const { return state_; }

 private:
  std::string first_non_finite(const std::array<Tensor<T>, 4>& outputs) const {
    for (const auto& [name, p] : params_)
      if (!p.all_finite()) return name;
    for (std::size_t i = 0; i < outputs.size(); ++i)
      if (!outputs[i].all_finite()) return "output[" + std::to_string(i) + "]";
    return "loss";
  }

  void clip_gradients() {
    double sq = 0;
    for (const auto& [name, p] : params_)
      for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(sq);
    if (norm <= cfg_.clip_grad_norm) return;
    const T s = static_cast<T>(cfg_.clip_grad_norm / norm);
    for (auto& [name, p] : params_) {
      Tensor<T> handle = p;
      for (T& g : handle.mutable_grad()) g *= s;
    }
  }

  SFAFNet<T> model_;
  std::vector<ImagePair> data_;
  TrainConfig cfg_;
  ParamList<T> params_;
  OptimState<T> state_;
};

}  // namespace sfafnet
