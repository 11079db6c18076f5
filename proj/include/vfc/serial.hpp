// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "vfc/tensor.hpp"

namespace vfc {
namespace io {

// Little-endian primitives; byte-explicit so files are identical on any host.

inline void put_u8(std::ostream& os, uint8_t v) {
  os.put(static_cast<char>(v));
}
inline void put_u16(std::ostream& os, uint16_t v) {
  put_u8(os, static_cast<uint8_t>(v & 0xff));
  put_u8(os, static_cast<uint8_t>(v >> 8));
}
inline void put_u32(std::ostream& os, uint32_t v) {
  put_u16(os, static_cast<uint16_t>(v & 0xffff));
  put_u16(os, static_cast<uint16_t>(v >> 16));
}
inline void put_f32(std::ostream& os, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

inline uint8_t get_u8(std::istream& is) {
  int c = is.get();
  if (c == EOF) throw FormatError("unexpected end of stream");
  return static_cast<uint8_t>(c);
}
inline uint16_t get_u16(std::istream& is) {
  uint16_t lo = get_u8(is), hi = get_u8(is);
  return static_cast<uint16_t>(lo | (hi << 8));
}
inline uint32_t get_u32(std::istream& is) {
  uint32_t lo = get_u16(is), hi = get_u16(is);
  return lo | (hi << 16);
}
inline float get_f32(std::istream& is) {
  uint32_t bits = get_u32(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline void put_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
inline void get_bytes(std::istream& is, void* p, size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n)
    throw FormatError("unexpected end of stream");
}

} // namespace io

// ---------------------------------------------------------------------------
// "FWT1" weight container
//
//   magic "FWT1" | u32 LE entry count
//   per entry: u16 LE name length | name bytes | u8 dtype (0 = f32) |
//              u8 ndim | ndim x u32 LE dims | raw LE f32 payload
//
// Save/load round-trips bit-exactly; entry order is preserved.

inline void save_fwt(std::ostream& os, const ParamList<float>& entries) {
  os.write("FWT1", 4);
  io::put_u32(os, static_cast<uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > 0xffff) throw FormatError("FWT1: name too long: " + e.name);
    io::put_u16(os, static_cast<uint16_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    io::put_u8(os, 0); // f32
    const auto& shape = e.tensor.shape();
    if (shape.size() > 0xff) throw FormatError("FWT1: too many dims");
    io::put_u8(os, static_cast<uint8_t>(shape.size()));
    for (int64_t d : shape) {
      if (d < 0 || d > 0xffffffffll) throw FormatError("FWT1: dim out of range");
      io::put_u32(os, static_cast<uint32_t>(d));
    }
    for (int64_t i = 0; i < e.tensor.numel(); ++i) io::put_f32(os, e.tensor.data()[i]);
  }
  if (!os) throw FormatError("FWT1: write failed");
}

inline ParamList<float> load_fwt(std::istream& is) {
  char magic[4];
  io::get_bytes(is, magic, 4);
  if (std::memcmp(magic, "FWT1", 4) != 0)
    throw FormatError("FWT1: bad magic");
  const uint32_t count = io::get_u32(is);
  ParamList<float> entries;
  entries.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t nlen = io::get_u16(is);
    std::string name(nlen, '\0');
    io::get_bytes(is, name.data(), nlen);
    const uint8_t dtype = io::get_u8(is);
    if (dtype != 0)
      throw FormatError("FWT1: unknown dtype " + std::to_string(dtype) +
                        " for entry " + name);
    const uint8_t ndim = io::get_u8(is);
    Shape shape(ndim);
    for (auto& d : shape) d = io::get_u32(is);
    auto t = Tensor<float>::zeros(shape);
    for (int64_t j = 0; j < t.numel(); ++j) t.data()[j] = io::get_f32(is);
    entries.push_back({std::move(name), std::move(t)});
  }
  return entries;
}

inline void save_fwt_file(const std::string& path, const ParamList<float>& entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open for write: " + path);
  save_fwt(os, entries);
}

inline ParamList<float> load_fwt_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open for read: " + path);
  return load_fwt(is);
}

} // namespace vfc
