// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "vfc/entropy.hpp"

namespace vfc {

// Range ANS over the shared integer CDF tables. 32-bit state with
// bit-granular renormalization: state stays in [2^31, 2^32) between symbols,
// which keeps the state/frequency headroom at 2^15 and the per-symbol
// rounding loss below 2^-15 bits even with full 16-bit tables. Symbols are
// encoded in reverse so decoding walks forward.
//
// Payload layout: u32 LE final state, then renormalization bits in decode
// order, packed LSB-first into bytes (final byte zero-padded).

struct BadMagicError : FormatError {
  using FormatError::FormatError;
};
struct VersionError : FormatError {
  using FormatError::FormatError;
};
struct TableMismatchError : FormatError {
  using FormatError::FormatError;
};

namespace rans {

constexpr uint32_t kStateLow = 1u << 31;

} // namespace rans

inline std::vector<uint8_t> rans_encode(const int32_t* symbols,
                                        const int32_t* channel_ids, size_t n,
                                        const EntropyTables& t) {
  const uint32_t prec = static_cast<uint32_t>(t.precision);
  std::vector<uint8_t> bits; // one renorm bit per entry, encode order
  bits.reserve(n * 4 + 8);
  uint32_t x = rans::kStateLow;
  for (size_t i = n; i-- > 0;) {
    const int ch = channel_ids[i];
    const int32_t s = symbols[i];
    if (ch < 0 || ch >= t.channels)
      throw ConfigError("rans_encode: channel id " + std::to_string(ch) +
                        " out of range");
    if (s < t.grid.s_min || s > t.grid.s_max)
      throw ConfigError("rans_encode: symbol " + std::to_string(s) +
                        " outside grid [" + std::to_string(t.grid.s_min) + "," +
                        std::to_string(t.grid.s_max) + "]");
    const size_t si = static_cast<size_t>(s - t.grid.s_min);
    const uint32_t f = t.freq[static_cast<size_t>(ch)][si];
    const uint32_t c = t.cum[static_cast<size_t>(ch)][si];
    const uint64_t x_max = static_cast<uint64_t>(f) << prec;
    while (x >= x_max) {
      bits.push_back(static_cast<uint8_t>(x & 1u));
      x >>= 1;
    }
    x = ((x / f) << prec) + (x % f) + c;
  }
  std::vector<uint8_t> out;
  out.reserve(4 + bits.size() / 8 + 1);
  out.push_back(static_cast<uint8_t>(x & 0xff));
  out.push_back(static_cast<uint8_t>((x >> 8) & 0xff));
  out.push_back(static_cast<uint8_t>((x >> 16) & 0xff));
  out.push_back(static_cast<uint8_t>((x >> 24) & 0xff));
  // decode consumes bits newest-first, so pack them reversed
  uint8_t acc = 0;
  int fill = 0;
  for (size_t i = bits.size(); i-- > 0;) {
    acc |= static_cast<uint8_t>(bits[i] << fill);
    if (++fill == 8) {
      out.push_back(acc);
      acc = 0;
      fill = 0;
    }
  }
  if (fill) out.push_back(acc);
  return out;
}

// Exact inverse of rans_encode; truncated or corrupted payloads surface as
// CorruptionError (end state, bit consumption and padding are all verified).
inline std::vector<int32_t> rans_decode(const uint8_t* payload, size_t len,
                                        const int32_t* channel_ids, size_t n,
                                        const EntropyTables& t) {
  if (len < 4) throw CorruptionError("rans payload shorter than flushed state");
  const uint32_t prec = static_cast<uint32_t>(t.precision);
  const uint32_t mask = (1u << prec) - 1;
  uint32_t x = static_cast<uint32_t>(payload[0]) |
               (static_cast<uint32_t>(payload[1]) << 8) |
               (static_cast<uint32_t>(payload[2]) << 16) |
               (static_cast<uint32_t>(payload[3]) << 24);
  size_t bitpos = 0;
  const size_t nbits = (len - 4) * 8;
  std::vector<int32_t> out(n);
  for (size_t i = 0; i < n; ++i) {
    const int ch = channel_ids[i];
    if (ch < 0 || ch >= t.channels)
      throw ConfigError("rans_decode: channel id out of range");
    const auto& cum = t.cum[static_cast<size_t>(ch)];
    const uint32_t c = x & mask;
    // find s with cum[s] <= c < cum[s+1]
    size_t lo = 0, hi = cum.size() - 1;
    while (lo + 1 < hi) {
      const size_t mid = (lo + hi) / 2;
      if (cum[mid] <= c)
        lo = mid;
      else
        hi = mid;
    }
    const uint32_t f = t.freq[static_cast<size_t>(ch)][lo];
    out[i] = t.grid.s_min + static_cast<int32_t>(lo);
    x = f * (x >> prec) + c - cum[lo];
    while (x < rans::kStateLow) {
      if (bitpos >= nbits)
        throw CorruptionError("rans payload exhausted mid-stream");
      const uint32_t bit = (payload[4 + bitpos / 8] >> (bitpos % 8)) & 1u;
      ++bitpos;
      x = (x << 1) | bit;
    }
  }
  if (x != rans::kStateLow) throw CorruptionError("rans end state mismatch");
  if (nbits - bitpos >= 8) throw CorruptionError("rans payload has trailing bytes");
  for (; bitpos < nbits; ++bitpos)
    if ((payload[4 + bitpos / 8] >> (bitpos % 8)) & 1u)
      throw CorruptionError("rans payload has nonzero padding");
  return out;
}

// channel id of element i in a flattened [..., C] latent
inline std::vector<int32_t> channel_ids_for(size_t n, int channels) {
  std::vector<int32_t> ids(n);
  for (size_t i = 0; i < n; ++i)
    ids[i] = static_cast<int32_t>(i % static_cast<size_t>(channels));
  return ids;
}

// ---------------------------------------------------------------------------
// "VFCB" bitstream container: the wire/file format between edge and cloud.
//
//   magic "VFCB" | version u8 (=1) | config_k u8 | lambda f32 LE | ndim u8 |
//   ndim x u16 LE dims | table_checksum u32 LE | payload_len u32 LE | payload

struct Bitstream {
  uint8_t version = 1;
  uint8_t config_k = 1;
  float lambda = 0.f;
  std::vector<uint16_t> dims; // (C, H, W) of the quantized latent
  uint32_t table_checksum = 0;
  std::vector<uint8_t> payload;

  size_t header_bytes() const { return 4 + 1 + 1 + 4 + 1 + 2 * dims.size() + 4 + 4; }
  size_t total_bytes() const { return header_bytes() + payload.size(); }

  int64_t symbol_count() const {
    int64_t n = 1;
    for (uint16_t d : dims) n *= d;
    return dims.empty() ? 0 : n;
  }

  std::vector<uint8_t> serialize() const {
    std::vector<uint8_t> out;
    out.reserve(total_bytes());
    auto put8 = [&out](uint8_t v) { out.push_back(v); };
    auto put16 = [&put8](uint16_t v) {
      put8(static_cast<uint8_t>(v & 0xff));
      put8(static_cast<uint8_t>(v >> 8));
    };
    auto put32 = [&put16](uint32_t v) {
      put16(static_cast<uint16_t>(v & 0xffff));
      put16(static_cast<uint16_t>(v >> 16));
    };
    out.insert(out.end(), {'V', 'F', 'C', 'B'});
    put8(version);
    put8(config_k);
    uint32_t lbits;
    std::memcpy(&lbits, &lambda, 4);
    put32(lbits);
    put8(static_cast<uint8_t>(dims.size()));
    for (uint16_t d : dims) put16(d);
    put32(table_checksum);
    put32(static_cast<uint32_t>(payload.size()));
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
  }

  static Bitstream parse(const uint8_t* data, size_t len) {
    Bitstream b;
    size_t p = 0;
    auto need = [&](size_t n) {
      if (p + n > len) throw CorruptionError("bitstream truncated in header");
    };
    need(4);
    if (std::memcmp(data, "VFCB", 4) != 0) throw BadMagicError("bad magic");
    p = 4;
    need(2);
    b.version = data[p++];
    if (b.version != 1)
      throw VersionError("unsupported bitstream version " + std::to_string(b.version));
    b.config_k = data[p++];
    need(4);
    uint32_t lbits = static_cast<uint32_t>(data[p]) |
                     (static_cast<uint32_t>(data[p + 1]) << 8) |
                     (static_cast<uint32_t>(data[p + 2]) << 16) |
                     (static_cast<uint32_t>(data[p + 3]) << 24);
    std::memcpy(&b.lambda, &lbits, 4);
    p += 4;
    need(1);
    const uint8_t ndim = data[p++];
    need(2 * static_cast<size_t>(ndim));
    b.dims.resize(ndim);
    for (int i = 0; i < ndim; ++i) {
      b.dims[static_cast<size_t>(i)] = static_cast<uint16_t>(
          static_cast<uint16_t>(data[p]) | (static_cast<uint16_t>(data[p + 1]) << 8));
      p += 2;
    }
    need(8);
    auto get32 = [&data, &p]() {
      uint32_t v = static_cast<uint32_t>(data[p]) |
                   (static_cast<uint32_t>(data[p + 1]) << 8) |
                   (static_cast<uint32_t>(data[p + 2]) << 16) |
                   (static_cast<uint32_t>(data[p + 3]) << 24);
      p += 4;
      return v;
    };
    b.table_checksum = get32();
    const uint32_t plen = get32();
    if (len - p != plen)
      throw CorruptionError("payload length field " + std::to_string(plen) +
                            " does not match remaining " + std::to_string(len - p) +
                            " bytes");
    b.payload.assign(data + p, data + len);
    return b;
  }
};

// Quantized latent -> self-describing bitstream (dims are C,H,W).
inline Bitstream pack_bitstream(const std::vector<int32_t>& symbols, int64_t C,
                                int64_t H, int64_t W, double lambda, int config_k,
                                const EntropyTables& tables) {
  if (static_cast<int64_t>(symbols.size()) != C * H * W)
    throw ShapeError("pack_bitstream: symbol count != C*H*W");
  Bitstream b;
  b.config_k = static_cast<uint8_t>(config_k);
  b.lambda = static_cast<float>(lambda);
  b.dims = {static_cast<uint16_t>(C), static_cast<uint16_t>(H),
            static_cast<uint16_t>(W)};
  b.table_checksum = tables.checksum;
  // NHWC flatten: channel = index % C
  auto ids = channel_ids_for(symbols.size(), static_cast<int>(C));
  b.payload = rans_encode(symbols.data(), ids.data(), symbols.size(), tables);
  return b;
}

struct UnpackedLatent {
  std::vector<int32_t> symbols;
  int64_t C = 0, H = 0, W = 0;
  float lambda = 0.f;
  int config_k = 1;
};

inline UnpackedLatent unpack_bitstream(const uint8_t* data, size_t len,
                                       const EntropyTables& tables) {
  Bitstream b = Bitstream::parse(data, len);
  if (b.table_checksum != tables.checksum)
    throw TableMismatchError("table mismatch: stream checksum " +
                             std::to_string(b.table_checksum) + " vs local " +
                             std::to_string(tables.checksum));
  if (b.dims.size() != 3) throw CorruptionError("expected 3 latent dims (C,H,W)");
  UnpackedLatent u;
  u.C = b.dims[0];
  u.H = b.dims[1];
  u.W = b.dims[2];
  u.lambda = b.lambda;
  u.config_k = b.config_k;
  const size_t n = static_cast<size_t>(u.C * u.H * u.W);
  auto ids = channel_ids_for(n, static_cast<int>(u.C));
  u.symbols = rans_decode(b.payload.data(), b.payload.size(), ids.data(), n, tables);
  return u;
}

} // namespace vfc
