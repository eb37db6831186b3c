#pragma once

// Three-scale multi-input multi-output encoder-decoder built from GSFFBlocks.
//
// Widths are C, 2C, 4C. Scale s > 1 merges a shallow embedding of the
// correspondingly downsampled input image before its encoder block. The
// decoder emits a residual image at every scale; forward() returns
//   [refined full-res, decoder full-res, decoder half-res, bottleneck quarter-res]
// each already added to the (downsampled) input.

#include <algorithm>
#include <array>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sfafnet/checkpoint.hpp"
#include "sfafnet/fdgm.hpp"
#include "sfafnet/gfm.hpp"

namespace sfafnet {

struct ArchConfig {
  Index channels = 8;
  Index naf_blocks = 2;
  Index rows = 8;
  Index kernel = 3;
  /// Fixed-Gaussian ablation in place of the learned filters.
  std::optional<double> gaussian_sigma;

  void validate() const {
    if (channels < 4 || channels % 4 != 0) throw ConfigError("channels must be a positive multiple of 4");
    if (rows < 1 || channels % rows != 0) throw ConfigError("rows must divide channels");
    if (naf_blocks < 1) throw ConfigError("naf_blocks must be >= 1");
    if (kernel < 1 || kernel % 2 == 0) throw ConfigError("kernel must be odd and positive");
    if (gaussian_sigma && !(*gaussian_sigma > 0.0)) throw ConfigError("gaussian sigma must be positive");
  }

  nlohmann::json to_json() const {
    nlohmann::json j{{"channels", channels}, {"naf_blocks", naf_blocks}, {"rows", rows}, {"kernel", kernel}};
    if (gaussian_sigma) {
      j["filter"] = "gaussian";
      j["gaussian_sigma"] = *gaussian_sigma;
    } else {
      j["filter"] = "learned";
    }
    return j;
  }

  static ArchConfig from_json(const nlohmann::json& j) {
    ArchConfig c;
    try {
      c.channels = j.at("channels").get<Index>();
      c.naf_blocks = j.at("naf_blocks").get<Index>();
      c.rows = j.at("rows").get<Index>();
      c.kernel = j.at("kernel").get<Index>();
      if (j.value("filter", std::string("learned")) == "gaussian") c.gaussian_sigma = j.at("gaussian_sigma").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw DecodeError(std::string("invalid architecture config: ") + e.what());
    }
    c.validate();
    return c;
  }

  bool operator==(const ArchConfig&) const = default;
};

template <typename T>
struct GSFFParams {
  std::vector<NAFBlockParams<T>> nafs;
  FDGMParams<T> fdgm;
  GFMParams<T> gfm;

  static GSFFParams make(Index channels, const ArchConfig& cfg, Rng& rng) {
    GSFFParams p;
    for (Index i = 0; i < cfg.naf_blocks; ++i) p.nafs.push_back(NAFBlockParams<T>::make(channels, rng));
    p.fdgm = FDGMParams<T>::make(channels, cfg.rows, cfg.kernel, rng, cfg.gaussian_sigma);
    p.gfm = GFMParams<T>::make(channels, rng);
    return p;
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    for (std::size_t i = 0; i < nafs.size(); ++i) nafs[i].collect(prefix + ".naf" + std::to_string(i), out);
    fdgm.collect(prefix + ".fdgm", out);
    gfm.collect(prefix + ".gfm", out);
  }
};

template <typename T>
Tensor<T> gsff_forward(const Tensor<T>& x_in, const GSFFParams<T>& p, FeatureRecorder<T>* rec = nullptr,
                       const std::string& prefix = "gsff") {
  Tensor<T> x_s = x_in;
  for (const auto& naf : p.nafs) x_s = nafblock_forward(x_s, naf);
  auto freq = fdgm_forward(add(x_in, x_s), p.fdgm);
  record_feature(rec, prefix + ".x_s", x_s);
  record_feature(rec, prefix + ".x_l", freq.low_band);
  record_feature(rec, prefix + ".x_h", freq.high_band);
  record_feature(rec, prefix + ".low_kernels", freq.bank.low);
  return gfm_forward(x_s, freq.low_band, freq.high_band, p.gfm, rec, prefix + ".gfm");
}

/// Shallow embedding of a low-resolution input image.
template <typename T>
struct ShallowFeatureParams {
  Conv2d<T> embed;  // 3 -> C, 3x3
  SCABlockParams<T> block;

  static ShallowFeatureParams make(Index channels, Rng& rng) {
    return {Conv2d<T>::make(3, channels, 3, rng), SCABlockParams<T>::make(channels, rng, false)};
  }

  Tensor<T> operator()(const Tensor<T>& image) const { return scablock_forward(embed(image), block); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    embed.collect(prefix + ".embed", out);
    block.collect(prefix + ".sca", out);
  }
};

template <typename T>
struct SFAFNet {
  ArchConfig config;
  Conv2d<T> stem;
  GSFFParams<T> enc1;
  Conv2d<T> down1;
  ShallowFeatureParams<T> shallow2;
  Conv2d<T> merge2;
  GSFFParams<T> enc2;
  Conv2d<T> down2;
  ShallowFeatureParams<T> shallow3;
  Conv2d<T> merge3;
  GSFFParams<T> enc3;
  Conv2d<T> head3;
  Conv2d<T> up3;
  Conv2d<T> skip2;
  GSFFParams<T> dec2;
  Conv2d<T> head2;
  Conv2d<T> up2;
  Conv2d<T> skip1;
  GSFFParams<T> dec1;
  Conv2d<T> head1;
  GSFFParams<T> refine;
  Conv2d<T> head0;

  static SFAFNet make(const ArchConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    const Index c1 = cfg.channels, c2 = 2 * c1, c3 = 4 * c1;
    const ConvOptions s2{2, Padding::zero, 1};
    SFAFNet m;
    m.config = cfg;
    m.stem = Conv2d<T>::make(3, c1, 3, rng);
    m.enc1 = GSFFParams<T>::make(c1, cfg, rng);
    m.down1 = Conv2d<T>::make(c1, c2, 3, rng, s2);
    m.shallow2 = ShallowFeatureParams<T>::make(c2, rng);
    m.merge2 = Conv2d<T>::make(2 * c2, c2, 1, rng);
    m.enc2 = GSFFParams<T>::make(c2, cfg, rng);
    m.down2 = Conv2d<T>::make(c2, c3, 3, rng, s2);
    m.shallow3 = ShallowFeatureParams<T>::make(c3, rng);
    m.merge3 = Conv2d<T>::make(2 * c3, c3, 1, rng);
    m.enc3 = GSFFParams<T>::make(c3, cfg, rng);
    m.head3 = Conv2d<T>::make(c3, 3, 3, rng);
    m.up3 = Conv2d<T>::make(c3, c2, 1, rng);
    m.skip2 = Conv2d<T>::make(2 * c2, c2, 1, rng);
    m.dec2 = GSFFParams<T>::make(c2, cfg, rng);
    m.head2 = Conv2d<T>::make(c2, 3, 3, rng);
    m.up2 = Conv2d<T>::make(c2, c1, 1, rng);
    m.skip1 = Conv2d<T>::make(2 * c1, c1, 1, rng);
    m.dec1 = GSFFParams<T>::make(c1, cfg, rng);
    m.head1 = Conv2d<T>::make(c1, 3, 3, rng);
    m.refine = GSFFParams<T>::make(c1, cfg, rng);
    m.head0 = Conv2d<T>::make(c1, 3, 3, rng);
    return m;
  }

  /// Every trainable tensor, in a stable order with stable names.
  ParamList<T> parameters() const {
    ParamList<T> out;
    stem.collect("stem", out);
    enc1.collect("enc1", out);
    down1.collect("down1", out);
    shallow2.collect("shallow2", out);
    merge2.collect("merge2", out);
    enc2.collect("enc2", out);
    down2.collect("down2", out);
    shallow3.collect("shallow3", out);
    merge3.collect("merge3", out);
    enc3.collect("enc3", out);
    head3.collect("head3", out);
    up3.collect("up3", out);
    skip2.collect("skip2", out);
    dec2.collect("dec2", out);
    head2.collect("head2", out);
    up2.collect("up2", out);
    skip1.collect("skip1", out);
    dec1.collect("dec1", out);
    head1.collect("head1", out);
    refine.collect("refine", out);
    head0.collect("head0", out);
    return out;
  }

  Index parameter_count() const {
    Index n = 0;
    for (const auto& [name, t] : parameters()) n += t.numel();
    return n;
  }

  /// Zero every output head; the network then returns its (downsampled)
  /// input at each scale.
  void zero_heads() const {
    for (const Conv2d<T>* h : {&head0, &head1, &head2, &head3}) {
      for (Tensor<T> t : {h->weight, h->bias}) {
        auto v = t.mutable_data();
        std::fill(v.begin(), v.end(), T(0));
      }
    }
  }

  void zero_grad() const {
    for (auto& [name, t] : parameters()) {
      Tensor<T> handle = t;
      handle.zero_grad();
    }
  }

  std::array<Tensor<T>, 4> forward(const Tensor<T>& image, FeatureRecorder<T>* rec = nullptr) const {
    detail::require_nchw(image.shape(), "sfafnet");
    if (image.dim(1) != 3) throw DimensionError("sfafnet: expected 3 input channels");
    if (image.dim(2) % 4 != 0 || image.dim(3) % 4 != 0) {
      throw DimensionError("sfafnet: spatial size must be divisible by 4, got " + shape_str(image.shape()));
    }
    const Tensor<T> half = resample(image, Resample::down2);
    const Tensor<T> quarter = resample(half, Resample::down2);

    Tensor<T> e1 = gsff_forward(stem(image), enc1, rec, "enc1");
    Tensor<T> e2 = gsff_forward(merge2(concat<T>({down1(e1), shallow2(half)}, 1)), enc2, rec, "enc2");
    Tensor<T> e3 = gsff_forward(merge3(concat<T>({down2(e2), shallow3(quarter)}, 1)), enc3, rec, "enc3");
    Tensor<T> out3 = add(head3(e3), quarter);

    Tensor<T> u2 = up3(resample(e3, Resample::up2));
    check_skip(u2, e2);
    Tensor<T> d2 = gsff_forward(skip2(concat<T>({u2, e2}, 1)), dec2, rec, "dec2");
    Tensor<T> out2 = add(head2(d2), half);

    Tensor<T> u1 = up2(resample(d2, Resample::up2));
    check_skip(u1, e1);
    Tensor<T> d1 = gsff_forward(skip1(concat<T>({u1, e1}, 1)), dec1, rec, "dec1");
    Tensor<T> out1 = add(head1(d1), image);

    Tensor<T> r = gsff_forward(d1, refine, rec, "refine");
    Tensor<T> residual = head0(r);
    record_feature(rec, "residual", residual);
    Tensor<T> out0 = add(residual, image);
    return {out0, out1, out2, out3};
  }

  // Checkpoint I/O ----------------------------------------------------------

  Checkpoint to_checkpoint() const {
    Checkpoint ck;
    ck.config = config.to_json();
    for (const auto& [name, t] : parameters()) ck.records.push_back(make_record(name, t));
    return ck;
  }

  static SFAFNet from_checkpoint(const Checkpoint& ck) {
    SFAFNet m = make(ArchConfig::from_json(ck.config), 0);
    for (auto& [name, t] : m.parameters()) {
      const Record* r = ck.find(name);
      if (!r) throw DecodeError("checkpoint is missing tensor " + name);
      Tensor<T> handle = t;
      load_into(*r, handle);
    }
    return m;
  }

  void save(const std::string& path) const { write_checkpoint(path, to_checkpoint()); }
  static SFAFNet load(const std::string& path) { return from_checkpoint(read_checkpoint(path)); }

 private:
  static void check_skip(const Tensor<T>& decoder, const Tensor<T>& encoder) {
    if (decoder.shape() != encoder.shape()) {
      throw DimensionError("sfafnet: skip shape " + shape_str(encoder.shape()) + " does not match decoder " +
                           shape_str(decoder.shape()));
    }
  }
};

}  // namespace sfafnet
