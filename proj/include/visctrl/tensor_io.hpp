#pragma once

// "VTSR" tensor container.
//
//   magic   "VTSR"                    4 bytes
//   version u16 = 1
//   count   u16
//   per tensor:
//     name_len u16, name (UTF-8, name_len bytes)
//     dtype    u8  (1 = f32)
//     rank     u8
//     dims     u32 * rank
//     payload  f32 * prod(dims)
//
// Everything is little-endian. Floats are copied bit for bit.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "visctrl/error.hpp"
#include "visctrl/numerics.hpp"

namespace visctrl {

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

inline NamedTensor named(std::string name, const Matrix& m) {
  return {std::move(name),
          {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())},
          {m.data().begin(), m.data().end()}};
}

inline NamedTensor named(std::string name, const Tensor3& t) {
  return {std::move(name),
          {static_cast<std::uint32_t>(t.h()), static_cast<std::uint32_t>(t.w()), static_cast<std::uint32_t>(t.c())},
          {t.data().begin(), t.data().end()}};
}

inline Matrix to_matrix(const NamedTensor& t) {
  if (t.dims.size() != 2) throw FormatError("tensor '" + t.name + "' is not rank 2");
  return Matrix(t.dims[0], t.dims[1], t.data);
}

inline Tensor3 to_tensor3(const NamedTensor& t) {
  if (t.dims.size() != 3) throw FormatError("tensor '" + t.name + "' is not rank 3");
  return Tensor3(t.dims[0], t.dims[1], t.dims[2], t.data);
}

namespace vtsr {

inline constexpr char kMagic[4] = {'V', 'T', 'S', 'R'};
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 1;

namespace detail {

inline void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }
inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("VTSR: truncated while reading ") + what + " at offset " +
                        std::to_string(pos_));
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    const std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const noexcept { return pos_ == bytes_.size(); }
  std::size_t pos() const noexcept { return pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode(const std::vector<NamedTensor>& tensors) {
  if (tensors.size() > 0xffff) throw FormatError("VTSR: too many tensors");
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  detail::put_u16(out, kVersion);
  detail::put_u16(out, static_cast<std::uint16_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.name.size() > 0xffff) throw FormatError("VTSR: tensor name too long");
    if (t.dims.size() > 0xff) throw FormatError("VTSR: rank too large for '" + t.name + "'");
    std::size_t count = 1;
    for (auto d : t.dims) count *= d;
    if (count != t.data.size()) throw FormatError("VTSR: payload size mismatch for '" + t.name + "'");
    detail::put_u16(out, static_cast<std::uint16_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    detail::put_u8(out, kDtypeF32);
    detail::put_u8(out, static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) detail::put_u32(out, d);
    for (float f : t.data) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

inline std::vector<NamedTensor> decode(const std::vector<std::uint8_t>& bytes) {
  detail::Reader r(bytes);
  const std::string magic = r.str(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) {
    std::string shown;
    for (char c : magic) shown += (c >= 32 && c < 127) ? c : '?';
    throw FormatError("VTSR: bad magic '" + shown + "', expected 'VTSR'");
  }
  const auto version = r.u16("version");
  if (version != kVersion) throw FormatError("VTSR: unsupported version " + std::to_string(version));
  const auto count = r.u16("tensor count");
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint16_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto name_len = r.u16("name length");
    t.name = r.str(name_len, "name");
    const auto dtype = r.u8("dtype");
    if (dtype != kDtypeF32) {
      throw FormatError("VTSR: unsupported dtype " + std::to_string(dtype) + " for '" + t.name + "'");
    }
    const auto rank = r.u8("rank");
    std::uint64_t elems = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      t.dims.push_back(r.u32("dims"));
      elems *= t.dims.back();
    }
    r.need(static_cast<std::size_t>(elems) * 4, "payload");
    t.data.resize(static_cast<std::size_t>(elems));
    for (auto& f : t.data) f = std::bit_cast<float>(r.u32("payload"));
    out.push_back(std::move(t));
  }
  if (!r.done()) throw FormatError("VTSR: trailing bytes after offset " + std::to_string(r.pos()));
  return out;
}

}  // namespace vtsr

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline void write_vtsr(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  write_file_bytes(path, vtsr::encode(tensors));
}

inline std::vector<NamedTensor> read_vtsr(const std::filesystem::path& path) {
  return vtsr::decode(read_file_bytes(path));
}

}  // namespace visctrl
