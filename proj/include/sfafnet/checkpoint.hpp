#pragma once

// Binary checkpoint container.
//
//   "SFAF" | u32 version (1) | u32 config length | config JSON (UTF-8)
//   then until EOF, one record per tensor:
//   u32 name length | name | u8 dtype | u8 ndim | u32 dims[ndim] | values
//
// All integers and values are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"
#include "sfafnet/tensor.hpp"

namespace sfafnet {

enum class DType : std::uint8_t { f32 = 0, f64 = 1, i64 = 2 };

inline std::size_t dtype_size(DType t) { return t == DType::f32 ? 4 : 8; }

template <typename T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, float>) return DType::f32;
  else if constexpr (std::is_same_v<T, double>) return DType::f64;
  else {
    static_assert(std::is_same_v<T, std::int64_t>, "unsupported checkpoint dtype");
    return DType::i64;
  }
}

struct Record {
  std::string name;
  DType dtype = DType::f32;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> bytes;

  std::size_t count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  nlohmann::json config;
  std::vector<Record> records;

  const Record* find(const std::string& name) const {
    for (const auto& r : records)
      if (r.name == name) return &r;
    return nullptr;
  }
};

namespace detail {

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U value) {
  using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t,
                                  std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint8_t>>;
  const Bits bits = std::bit_cast<Bits>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

template <typename U>
U get_le(const std::uint8_t* p) {
  using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t,
                                  std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint8_t>>;
  Bits bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<Bits>(static_cast<Bits>(p[i]) << (8 * i));
  return std::bit_cast<U>(bits);
}

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& buf, std::string path) : buf_(buf), path_(std::move(path)) {}
  bool done() const { return pos_ == buf_.size(); }
  const std::uint8_t* take(std::size_t n) {
    if (buf_.size() - pos_ < n) throw DecodeError("checkpoint truncated: " + path_);
    const std::uint8_t* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <typename U>
  U read() {
    return get_le<U>(take(sizeof(U)));
  }

 private:
  const std::vector<std::uint8_t>& buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <typename U>
Record make_record(const std::string& name, const Shape& shape, std::span<const U> values) {
  Record r;
  r.name = name;
  r.dtype = dtype_of<U>();
  for (Index d : shape) r.dims.push_back(static_cast<std::uint32_t>(d));
  r.bytes.reserve(values.size() * sizeof(U));
  for (U v : values) detail::put_le(r.bytes, v);
  return r;
}

template <typename T>
Record make_record(const std::string& name, const Tensor<T>& t) {
  return make_record<T>(name, t.shape(), t.data());
}

/// Decode a record into values of type U; throws DecodeError on dtype mismatch.
template <typename U>
std::vector<U> record_values(const Record& r) {
  if (r.dtype != dtype_of<U>()) throw DecodeError("checkpoint: dtype mismatch for " + r.name);
  std::vector<U> out(r.count());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::get_le<U>(r.bytes.data() + i * sizeof(U));
  return out;
}

/// Copy a record into an existing tensor of identical shape.
template <typename T>
void load_into(const Record& r, Tensor<T>& dst) {
  Shape shape(r.dims.begin(), r.dims.end());
  if (shape != dst.shape()) {
    throw DecodeError("checkpoint: shape of " + r.name + " is " + shape_str(shape) + ", expected " +
                      shape_str(dst.shape()));
  }
  std::vector<T> values = record_values<T>(r);
  std::copy(values.begin(), values.end(), dst.mutable_data().begin());
}

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  std::vector<std::uint8_t> out{'S', 'F', 'A', 'F'};
  detail::put_le(out, Checkpoint::kVersion);
  const std::string cfg = ck.config.dump();
  detail::put_le(out, static_cast<std::uint32_t>(cfg.size()));
  out.insert(out.end(), cfg.begin(), cfg.end());
  for (const Record& r : ck.records) {
    detail::put_le(out, static_cast<std::uint32_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    out.push_back(static_cast<std::uint8_t>(r.dtype));
    out.push_back(static_cast<std::uint8_t>(r.dims.size()));
    for (auto d : r.dims) detail::put_le(out, d);
    out.insert(out.end(), r.bytes.begin(), r.bytes.end());
  }
  return out;
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& buf, const std::string& path = "<memory>") {
  detail::ByteReader in(buf, path);
  const std::uint8_t* magic = in.take(4);
  if (std::memcmp(magic, "SFAF", 4) != 0) throw DecodeError("not a checkpoint (bad magic): " + path);
  const auto version = in.read<std::uint32_t>();
  if (version != Checkpoint::kVersion) {
    throw DecodeError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
  }
  Checkpoint ck;
  const auto cfg_len = in.read<std::uint32_t>();
  const std::uint8_t* cfg = in.take(cfg_len);
  try {
    ck.config = nlohmann::json::parse(cfg, cfg + cfg_len);
  } catch (const nlohmann::json::exception& e) {
    throw DecodeError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  while (!in.done()) {
    Record r;
    const auto name_len = in.read<std::uint32_t>();
    const std::uint8_t* name = in.take(name_len);
    r.name.assign(name, name + name_len);
    const auto tag = in.read<std::uint8_t>();
    if (tag > 2) throw DecodeError("checkpoint: unknown dtype tag in " + r.name);
    r.dtype = static_cast<DType>(tag);
    const auto ndim = in.read<std::uint8_t>();
    for (std::uint8_t i = 0; i < ndim; ++i) r.dims.push_back(in.read<std::uint32_t>());
    const std::size_t nbytes = r.count() * dtype_size(r.dtype);
    const std::uint8_t* body = in.take(nbytes);
    r.bytes.assign(body, body + nbytes);
    ck.records.push_back(std::move(r));
  }
  return ck;
}

inline void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError(path, "cannot write checkpoint");
  const auto bytes = encode_checkpoint(ck);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FileError(path, "failed writing checkpoint");
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError(path, "cannot open checkpoint");
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(buf, path);
}

}  // namespace sfafnet
