#pragma once

// Planar float images and binary PPM (P6, maxval 255) I/O.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "sfafnet/tensor.hpp"

namespace sfafnet {

/// C x H x W, row-major per channel, values nominally in [0, 1].
struct Image {
  Index channels = 0;
  Index height = 0;
  Index width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(Index c, Index h, Index w, float fill = 0.0f)
      : channels(c), height(h), width(w), pixels(static_cast<std::size_t>(c * h * w), fill) {}

  float& at(Index c, Index y, Index x) { return pixels[static_cast<std::size_t>((c * height + y) * width + x)]; }
  float at(Index c, Index y, Index x) const {
    return pixels[static_cast<std::size_t>((c * height + y) * width + x)];
  }
  bool same_shape(const Image& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
  bool operator==(const Image&) const = default;
};

inline void clamp01(Image& img) {
  for (float& v : img.pixels) v = std::clamp(v, 0.0f, 1.0f);
}

/// Stack equally sized images into an N x C x H x W tensor.
template <typename T>
Tensor<T> images_to_tensor(std::span<const Image> images) {
  if (images.empty()) throw DimensionError("images_to_tensor: no images");
  const Image& first = images[0];
  std::vector<T> data;
  data.reserve(images.size() * first.pixels.size());
  for (const Image& im : images) {
    if (!im.same_shape(first)) throw DimensionError("images_to_tensor: image sizes differ");
    for (float v : im.pixels) data.push_back(static_cast<T>(v));
  }
  return Tensor<T>::from_vector({static_cast<Index>(images.size()), first.channels, first.height, first.width},
                                std::move(data));
}

template <typename T>
Image tensor_to_image(const Tensor<T>& t, Index n = 0) {
  if (t.rank() != 4) throw DimensionError("tensor_to_image: expected rank 4");
  Image im(t.dim(1), t.dim(2), t.dim(3));
  const auto src = t.data().subspan(static_cast<std::size_t>(n * im.channels * im.height * im.width), im.pixels.size());
  std::transform(src.begin(), src.end(), im.pixels.begin(), [](T v) { return static_cast<float>(v); });
  return im;
}

namespace detail {

class PpmParser {
 public:
  PpmParser(const std::vector<std::uint8_t>& buf, const std::string& path) : buf_(buf), path_(path) {}

  // Next header integer, skipping whitespace and '#' comments.
  long next_int() {
    skip_space_and_comments();
    if (pos_ >= buf_.size() || !std::isdigit(buf_[pos_])) throw DecodeError("ppm: malformed header in " + path_);
    long v = 0;
    while (pos_ < buf_.size() && std::isdigit(buf_[pos_])) {
      v = v * 10 + (buf_[pos_++] - '0');
      if (v > 1'000'000) throw DecodeError("ppm: header value too large in " + path_);
    }
    return v;
  }

  void expect_magic() {
    if (buf_.size() < 2 || buf_[0] != 'P' || buf_[1] != '6') throw DecodeError("ppm: not a binary P6 file: " + path_);
    pos_ = 2;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  void end_header() {
    if (pos_ >= buf_.size() || !std::isspace(buf_[pos_])) throw DecodeError("ppm: malformed header in " + path_);
    ++pos_;
  }

  std::size_t pos() const { return pos_; }

 private:
  void skip_space_and_comments() {
    while (pos_ < buf_.size()) {
      if (std::isspace(buf_[pos_])) {
        ++pos_;
      } else if (buf_[pos_] == '#') {
        while (pos_ < buf_.size() && buf_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<std::uint8_t>& buf_;
  const std::string& path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::uint8_t quantize_u8(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

inline Image decode_ppm(const std::vector<std::uint8_t>& buf, const std::string& path = "<memory>") {
  detail::PpmParser p(buf, path);
  p.expect_magic();
  const long w = p.next_int();
  const long h = p.next_int();
  const long maxval = p.next_int();
  if (maxval != 255) throw DecodeError("ppm: only maxval 255 is supported: " + path);
  if (w < 1 || h < 1) throw DecodeError("ppm: empty image: " + path);
  p.end_header();
  const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3;
  if (buf.size() - p.pos() < need) throw DecodeError("ppm: truncated raster in " + path);
  Image img(3, h, w);
  const std::uint8_t* raster = buf.data() + p.pos();
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(raster[(y * w + x) * 3 + c]) / 255.0f;
  return img;
}

inline std::vector<std::uint8_t> encode_ppm(const Image& img) {
  if (img.channels != 3) throw DimensionError("ppm: expected a 3-channel image");
  const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + img.pixels.size());
  for (Index y = 0; y < img.height; ++y)
    for (Index x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) out.push_back(quantize_u8(img.at(c, y, x)));
  return out;
}

inline Image read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError(path, "cannot open image");
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_ppm(buf, path);
}

inline void write_image(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError(path, "cannot write image");
  const auto bytes = encode_ppm(img);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FileError(path, "failed writing image");
}

}  // namespace sfafnet
