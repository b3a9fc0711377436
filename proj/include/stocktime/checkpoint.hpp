#pragma once

// Binary checkpoint format (all integers and floats little-endian):
//
//   magic     8 bytes  "STKTIME1"
//   version   u32
//   count     u64
//   count x { name_len u32, name bytes (UTF-8), rank u32, extents u64[rank],
//             payload f64[prod(extents)] }
//   crc32     u32 over every preceding byte
//
// Tensor names share one namespace: backbone.*, encoder.*, proj.*.

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "stocktime/nn.hpp"
#include "stocktime/tensor.hpp"

namespace stocktime {

inline constexpr char kCheckpointMagic[8] = {'S', 'T', 'K', 'T', 'I', 'M', 'E', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::string& buf, T v) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  buf.append(bytes, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& data, std::size_t end) : data_(data), end_(end) {}
  template <class T>
  T get() {
    if (pos_ + sizeof(T) > end_) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n) {
    if (pos_ + n > end_) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& data_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const std::string& bytes, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(n));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

inline std::string encode_checkpoint(const ParamList& tensors) {
  std::string buf(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put<std::uint32_t>(buf, kCheckpointVersion);
  detail::put<std::uint64_t>(buf, tensors.size());
  for (const auto& [name, t] : tensors) {
    detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
    buf.append(name);
    detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) detail::put<std::uint64_t>(buf, e);
    for (double v : t.values()) detail::put<double>(buf, v);
  }
  detail::put<std::uint32_t>(buf, detail::crc32_of(buf, buf.size()));
  return buf;
}

/// Decoded tensors are plain values (requires_grad=false), in file order.
inline ParamList decode_checkpoint(const std::string& data) {
  if (data.size() < sizeof kCheckpointMagic + 4 + 8 + 4) throw CheckpointError("checkpoint too short");
  if (std::memcmp(data.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw CheckpointError("bad checkpoint magic");
  }
  const std::size_t body = data.size() - 4;
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, data.data() + body, 4);
  if (stored_crc != detail::crc32_of(data, body)) throw CheckpointError("checkpoint CRC mismatch");

  detail::Reader r(data, body);
  r.bytes(sizeof kCheckpointMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.get<std::uint64_t>();
  ParamList out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>();
    std::string name = r.bytes(name_len);
    const auto rank = r.get<std::uint32_t>();
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
    std::vector<double> values(shape_size(shape));
    for (double& v : values) v = r.get<double>();
    out.push_back({std::move(name), Tensor::from(std::move(shape), std::move(values))});
  }
  if (r.pos() != body) throw CheckpointError("trailing bytes before checkpoint CRC");
  return out;
}

inline void write_checkpoint(const std::filesystem::path& path, const ParamList& tensors) {
  const std::string bytes = encode_checkpoint(tensors);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline ParamList read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(data);
}

/// Copies values from `source` into same-named tensors of `target`. When
/// `prefix` is non-empty only names starting with it are considered. Every
/// considered target tensor must be present with an identical shape.
inline void assign_parameters(const ParamList& target, const ParamList& source, const std::string& prefix = "") {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : source) by_name[name] = &t;
  for (const auto& [name, t] : target) {
    if (!prefix.empty() && name.rfind(prefix, 0) != 0) continue;
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks tensor " + name);
    if (it->second->shape() != t.shape()) {
      throw CheckpointError("tensor " + name + " has shape " + shape_str(it->second->shape()) + ", model expects " +
                            shape_str(t.shape()));
    }
    Tensor dst = t;
    const auto src = it->second->values();
    std::copy(src.begin(), src.end(), dst.mutable_values().begin());
  }
}

}  // namespace stocktime
