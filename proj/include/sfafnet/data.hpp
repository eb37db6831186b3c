#pragma once

// Synthetic blurred/sharp corpora, patch sampling and augmentation.

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>
#include <variant>
#include <vector>

#include "sfafnet/image.hpp"
#include "sfafnet/layers.hpp"

namespace sfafnet {

struct ImagePair {
  Image degraded;
  Image sharp;
  std::string id;
};

struct GaussianBlur {
  double sigma = 1.5;
};
struct MotionBlur {
  double length = 5.0;
  double angle_deg = 0.0;
};
using BlurKind = std::variant<GaussianBlur, MotionBlur>;

/// Normalized square kernel stored row-major.
struct BlurKernel {
  Index size = 1;
  std::vector<double> weights{1.0};
};

inline BlurKernel gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw ContractError("gaussian blur: sigma must be positive");
  const Index radius = std::max<Index>(1, static_cast<Index>(std::ceil(3.0 * sigma)));
  BlurKernel k;
  k.size = 2 * radius + 1;
  k.weights.assign(static_cast<std::size_t>(k.size * k.size), 0.0);
  double total = 0;
  for (Index y = -radius; y <= radius; ++y)
    for (Index x = -radius; x <= radius; ++x) {
      const double w = std::exp(-static_cast<double>(x * x + y * y) / (2.0 * sigma * sigma));
      k.weights[static_cast<std::size_t>((y + radius) * k.size + x + radius)] = w;
      total += w;
    }
  for (double& w : k.weights) w /= total;
  return k;
}

/// Line of the given length through the center, splatted bilinearly.
inline BlurKernel motion_kernel(double length, double angle_deg) {
  if (!(length >= 1.0)) throw ContractError("motion blur: length must be >= 1");
  const Index radius = static_cast<Index>(std::ceil(length / 2.0)) + 1;
  BlurKernel k;
  k.size = 2 * radius + 1;
  k.weights.assign(static_cast<std::size_t>(k.size * k.size), 0.0);
  const double a = angle_deg * std::numbers::pi / 180.0;
  const double dx = std::cos(a), dy = std::sin(a);
  const int samples = std::max(2, static_cast<int>(std::ceil(length * 8)));
  for (int s = 0; s < samples; ++s) {
    const double t = (static_cast<double>(s) / (samples - 1) - 0.5) * (length - 1.0);
    const double px = t * dx + static_cast<double>(radius), py = t * dy + static_cast<double>(radius);
    const Index x0 = static_cast<Index>(std::floor(px)), y0 = static_cast<Index>(std::floor(py));
    const double fx = px - static_cast<double>(x0), fy = py - static_cast<double>(y0);
    const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
    const Index xs[4] = {x0, x0 + 1, x0, x0 + 1}, ys[4] = {y0, y0, y0 + 1, y0 + 1};
    for (int i = 0; i < 4; ++i)
      if (xs[i] >= 0 && xs[i] < k.size && ys[i] >= 0 && ys[i] < k.size)
        k.weights[static_cast<std::size_t>(ys[i] * k.size + xs[i])] += w[i];
  }
  double total = 0;
  for (double w : k.weights) total += w;
  for (double& w : k.weights) w /= total;
  return k;
}

inline BlurKernel make_kernel(const BlurKind& kind) {
  return std::visit(
      [](const auto& b) -> BlurKernel {
        using B = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<B, GaussianBlur>) return gaussian_kernel(b.sigma);
        else return motion_kernel(b.length, b.angle_deg);
      },
      kind);
}

/// Convolution with reflect padding; indices fold repeatedly for kernels
/// wider than the image.
inline Image blur_image(const Image& img, const BlurKernel& k) {
  auto fold = [](Index i, Index n) {
    if (n == 1) return Index{0};
    const Index period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
  };
  const Index r = k.size / 2;
  Image out(img.channels, img.height, img.width);
  for (Index c = 0; c < img.channels; ++c)
    for (Index y = 0; y < img.height; ++y)
      for (Index x = 0; x < img.width; ++x) {
        double acc = 0;
        for (Index ky = 0; ky < k.size; ++ky)
          for (Index kx = 0; kx < k.size; ++kx) {
            // flipped kernel: true convolution
            const double w = k.weights[static_cast<std::size_t>((k.size - 1 - ky) * k.size + (k.size - 1 - kx))];
            acc += w * img.at(c, fold(y + ky - r, img.height), fold(x + kx - r, img.width));
          }
        out.at(c, y, x) = static_cast<float>(acc);
      }
  return out;
}

/// Blur `sharp` with a normalized kernel, add optional Gaussian noise, clamp.
inline ImagePair make_blur_pair(const Image& sharp, const BlurKind& kind, std::uint64_t seed,
                                double noise_sigma = 0.0, std::string id = {}) {
  ImagePair pair;
  pair.sharp = sharp;
  clamp01(pair.sharp);
  pair.degraded = blur_image(pair.sharp, make_kernel(kind));
  if (noise_sigma > 0.0) {
    Rng rng(seed);
    for (float& v : pair.degraded.pixels) v += static_cast<float>(rng.normal(0.0, noise_sigma));
  }
  clamp01(pair.degraded);
  pair.id = std::move(id);
  return pair;
}

/// Seeded procedural texture: a few oriented sinusoids under random filled
/// polygons and discs, so both smooth regions and hard edges are present.
inline Image procedural_texture(Index size, std::uint64_t seed) {
  Rng rng(seed);
  Image img(3, size, size);
  struct Wave {
    double fx, fy, phase;
    std::array<double, 3> amp;
  };
  std::vector<Wave> waves;
  const int n_waves = 2 + static_cast<int>(rng.below(3));
  std::array<double, 3> base{};
  for (double& b : base) b = rng.uniform(0.25, 0.75);
  for (int i = 0; i < n_waves; ++i) {
    const double freq = rng.uniform(0.03, 0.18);
    const double theta = rng.uniform(0, std::numbers::pi);
    Wave w{freq * std::cos(theta), freq * std::sin(theta), rng.uniform(0, 2 * std::numbers::pi), {}};
    for (double& a : w.amp) a = rng.uniform(-0.25, 0.25);
    waves.push_back(w);
  }
  for (Index y = 0; y < size; ++y)
    for (Index x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = base[static_cast<std::size_t>(c)];
        for (const auto& w : waves)
          v += w.amp[static_cast<std::size_t>(c)] *
               std::sin(2 * std::numbers::pi * (w.fx * static_cast<double>(x) + w.fy * static_cast<double>(y)) + w.phase);
        img.at(c, y, x) = static_cast<float>(v);
      }

  const double s = static_cast<double>(size);
  const int n_shapes = 3 + static_cast<int>(rng.below(5));
  for (int i = 0; i < n_shapes; ++i) {
    std::array<double, 3> color{};
    for (double& v : color) v = rng.uniform(0.0, 1.0);
    const double cx = rng.uniform(0, s), cy = rng.uniform(0, s);
    const double radius = rng.uniform(0.08, 0.3) * s;
    if (rng.coin()) {
      for (Index y = 0; y < size; ++y)
        for (Index x = 0; x < size; ++x) {
          const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
          if (dx * dx + dy * dy <= radius * radius)
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(color[static_cast<std::size_t>(c)]);
        }
      continue;
    }
    // convex polygon from sorted angles around (cx, cy)
    const int verts = 3 + static_cast<int>(rng.below(3));
    std::vector<double> angles(static_cast<std::size_t>(verts));
    for (double& a : angles) a = rng.uniform(0, 2 * std::numbers::pi);
    std::sort(angles.begin(), angles.end());
    std::vector<std::array<double, 2>> poly;
    for (double a : angles) poly.push_back({cx + radius * std::cos(a), cy + radius * std::sin(a)});
    for (Index y = 0; y < size; ++y)
      for (Index x = 0; x < size; ++x) {
        const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
        bool inside = false;
        for (std::size_t a = 0, b = poly.size() - 1; a < poly.size(); b = a++) {
          const auto& pa = poly[a];
          const auto& pb = poly[b];
          if ((pa[1] > py) != (pb[1] > py) && px < (pb[0] - pa[0]) * (py - pa[1]) / (pb[1] - pa[1]) + pa[0]) inside = !inside;
        }
        if (inside)
          for (int c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(color[static_cast<std::size_t>(c)]);
      }
  }
  clamp01(img);
  return img;
}

/// Aligned crops; top-left corners are uniform over valid positions.
inline std::vector<ImagePair> extract_patches(const ImagePair& pair, Index size, Index count, std::uint64_t seed) {
  const Index H = pair.sharp.height, W = pair.sharp.width;
  if (size < 1 || size > std::min(H, W)) {
    throw DimensionError("extract_patches: patch size " + std::to_string(size) + " exceeds image " +
                         std::to_string(H) + "x" + std::to_string(W));
  }
  Rng rng(seed);
  std::vector<ImagePair> out;
  for (Index i = 0; i < count; ++i) {
    const Index y0 = rng.below(H - size + 1), x0 = rng.below(W - size + 1);
    ImagePair p;
    p.id = pair.id;
    p.degraded = Image(pair.degraded.channels, size, size);
    p.sharp = Image(pair.sharp.channels, size, size);
    for (Index c = 0; c < pair.sharp.channels; ++c)
      for (Index y = 0; y < size; ++y)
        for (Index x = 0; x < size; ++x) {
          p.degraded.at(c, y, x) = pair.degraded.at(c, y0 + y, x0 + x);
          p.sharp.at(c, y, x) = pair.sharp.at(c, y0 + y, x0 + x);
        }
    out.push_back(std::move(p));
  }
  return out;
}

inline Image flip_horizontal(const Image& img) {
  Image out = img;
  for (Index c = 0; c < img.channels; ++c)
    for (Index y = 0; y < img.height; ++y)
      for (Index x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
  return out;
}

inline Image flip_vertical(const Image& img) {
  Image out = img;
  for (Index c = 0; c < img.channels; ++c)
    for (Index y = 0; y < img.height; ++y)
      for (Index x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, img.height - 1 - y, x);
  return out;
}

/// Independent 50% horizontal and vertical flips, applied to both images.
inline ImagePair augment(const ImagePair& pair, std::uint64_t seed) {
  Rng rng(seed);
  const bool h = rng.coin(), v = rng.coin();
  ImagePair out = pair;
  if (h) {
    out.degraded = flip_horizontal(out.degraded);
    out.sharp = flip_horizontal(out.sharp);
  }
  if (v) {
    out.degraded = flip_vertical(out.degraded);
    out.sharp = flip_vertical(out.sharp);
  }
  return out;
}

/// 2x2 mean downsampling, same arithmetic as resample(down2).
inline Image downsample2(const Image& img) {
  if (img.height % 2 || img.width % 2) throw DimensionError("downsample2: odd spatial size");
  Image out(img.channels, img.height / 2, img.width / 2);
  for (Index c = 0; c < img.channels; ++c)
    for (Index y = 0; y < out.height; ++y)
      for (Index x = 0; x < out.width; ++x)
        out.at(c, y, x) = (img.at(c, 2 * y, 2 * x) + img.at(c, 2 * y, 2 * x + 1) + img.at(c, 2 * y + 1, 2 * x) +
                           img.at(c, 2 * y + 1, 2 * x + 1)) *
                          0.25f;
  return out;
}

/// Targets matching the network outputs: [full, full, half, quarter].
inline std::array<Image, 4> target_pyramid(const Image& sharp) {
  if (sharp.height % 4 || sharp.width % 4) throw DimensionError("target_pyramid: size must be divisible by 4");
  Image half = downsample2(sharp);
  Image quarter = downsample2(half);
  return {sharp, sharp, std::move(half), std::move(quarter)};
}

// Corpus on disk: <root>/blur_%04d.ppm and <root>/sharp_%04d.ppm ----------

inline std::string corpus_id(Index i) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%04lld", static_cast<long long>(i));
  return buf;
}

inline std::string corpus_name(const char* stem, Index i) { return std::string(stem) + "_" + corpus_id(i) + ".ppm"; }

/// Generate `count` pairs; item i depends only on (seed, i).
inline std::vector<ImagePair> synth_corpus(Index count, std::uint64_t seed, const BlurKind& kind = GaussianBlur{1.5},
                                           Index size = 64, double noise_sigma = 0.0) {
  std::vector<ImagePair> out;
  for (Index i = 0; i < count; ++i) {
    const std::uint64_t item_seed = mix_seed(seed, static_cast<std::uint64_t>(i));
    out.push_back(make_blur_pair(procedural_texture(size, item_seed), kind, mix_seed(item_seed, 1), noise_sigma,
                                 corpus_id(i)));
  }
  return out;
}

inline void write_corpus(const std::string& root, const std::vector<ImagePair>& pairs) {
  std::filesystem::create_directories(root);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    write_image((std::filesystem::path(root) / corpus_name("blur", static_cast<Index>(i))).string(), pairs[i].degraded);
    write_image((std::filesystem::path(root) / corpus_name("sharp", static_cast<Index>(i))).string(), pairs[i].sharp);
  }
}

/// Load every blur_NNNN.ppm under root (ascending) with its sharp partner.
inline std::vector<ImagePair> load_corpus(const std::string& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw FileError(root, "dataset directory not found");
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(root)) {
    const std::string name = entry.path().filename().string();
    if (name.size() == 13 && name.rfind("blur_", 0) == 0 && name.substr(9) == ".ppm") ids.push_back(name.substr(5, 4));
  }
  std::sort(ids.begin(), ids.end());
  std::vector<ImagePair> out;
  for (const auto& id : ids) {
    const fs::path blur = fs::path(root) / ("blur_" + id + ".ppm");
    const fs::path sharp = fs::path(root) / ("sharp_" + id + ".ppm");
    if (!fs::exists(sharp)) throw FileError(sharp.string(), "missing sharp image");
    ImagePair p{read_image(blur.string()), read_image(sharp.string()), id};
    if (!p.degraded.same_shape(p.sharp)) throw DecodeError("image pair " + id + " has mismatched sizes");
    out.push_back(std::move(p));
  }
  if (out.empty()) throw FileError(root, "no blur_NNNN.ppm images in dataset directory");
  return out;
}

}  // namespace sfafnet
