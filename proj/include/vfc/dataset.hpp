// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "vfc/serial.hpp"
#include "vfc/tensor.hpp"

namespace vfc {

// Procedurally generated 32x32 RGB dataset: 8 parametric shape/texture
// classes, seeded and fully reproducible. Pixel values are normalized to
// [-1, 1]. Class ids:
//   0 circle, 1 rectangle, 2 triangle, 3 horizontal stripes,
//   4 vertical stripes, 5 diagonal cross, 6 checkerboard, 7 rings

constexpr int kImageHW = 32;
constexpr int kImageC = 3;
constexpr int kNumClasses = 8;

struct Dataset {
  Tensor<float> images; // [N, 32, 32, 3]
  std::vector<int> labels;

  int64_t size() const { return images.defined() ? images.dim(0) : 0; }
};

namespace detail {

inline void render_image(float* px, int label, Rng& rng) {
  float bg[3], fg[3];
  for (;;) {
    float d2 = 0;
    for (int c = 0; c < 3; ++c) {
      bg[c] = static_cast<float>(rng.uniform());
      fg[c] = static_cast<float>(rng.uniform());
      d2 += (bg[c] - fg[c]) * (bg[c] - fg[c]);
    }
    if (d2 > 0.4f) break; // keep figure/ground separable
  }
  const double cx = rng.uniform(12.0, 20.0), cy = rng.uniform(12.0, 20.0);
  const double r = rng.uniform(6.0, 11.0);
  const double ax = rng.uniform(5.0, 10.0), ay = rng.uniform(5.0, 10.0);
  const double period = rng.uniform(4.0, 8.0), phase = rng.uniform(0.0, period);
  const double barw = rng.uniform(2.0, 4.0);
  const int cell = 4 + static_cast<int>(rng.uniform_int(5));
  const double tri_h = rng.uniform(10.0, 16.0), tri_w = rng.uniform(6.0, 12.0);

  for (int y = 0; y < kImageHW; ++y) {
    for (int x = 0; x < kImageHW; ++x) {
      bool in = false;
      const double dx = x - cx, dy = y - cy;
      switch (label) {
        case 0: in = dx * dx + dy * dy <= r * r; break;
        case 1: in = std::abs(dx) <= ax && std::abs(dy) <= ay; break;
        case 2: { // apex-up triangle
          const double ytop = cy - tri_h / 2, b = cy + tri_h / 2;
          in = y >= ytop && y <= b &&
               std::abs(dx) <= tri_w * (y - ytop) / tri_h;
          break;
        }
        case 3: in = std::fmod(y + phase, period) < period / 2; break;
        case 4: in = std::fmod(x + phase, period) < period / 2; break;
        case 5: in = std::abs(dx - dy) <= barw || std::abs(dx + dy) <= barw; break;
        case 6: in = (((x + cell / 2) / cell) + ((y + cell / 2) / cell)) % 2 == 0; break;
        case 7: in = std::fmod(std::sqrt(dx * dx + dy * dy) + phase, period) <
                     period / 2; break;
        default: break;
      }
      float* p = px + (y * kImageHW + x) * kImageC;
      for (int c = 0; c < 3; ++c) {
        const float v = (in ? fg[c] : bg[c]) + static_cast<float>(rng.normal()) * 0.05f;
        const float clamped = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
        p[c] = clamped * 2.f - 1.f;
      }
    }
  }
}

} // namespace detail

// Deterministic in (n, seed, stream_tag); image i depends only on its own
// derived seed, so subsets and regeneration agree.
inline Dataset make_synthetic_dataset(int64_t n, uint64_t seed, uint64_t stream_tag) {
  Dataset ds;
  ds.images = Tensor<float>::zeros({n, kImageHW, kImageHW, kImageC});
  ds.labels.resize(static_cast<size_t>(n));
  const uint64_t base = splitmix64(seed ^ stream_tag);
  for (int64_t i = 0; i < n; ++i) {
    Rng rng(splitmix64(base + static_cast<uint64_t>(i)));
    const int label = static_cast<int>(i % kNumClasses);
    ds.labels[static_cast<size_t>(i)] = label;
    detail::render_image(ds.images.data() + i * kImageHW * kImageHW * kImageC, label, rng);
  }
  return ds;
}

struct DataBundle {
  Dataset train, test;
};

inline DataBundle make_default_dataset(uint64_t seed, int64_t n_train = 8000,
                                       int64_t n_test = 2000) {
  DataBundle b;
  b.train = make_synthetic_dataset(n_train, seed, 0x545241494eull); // "TRAIN"
  b.test = make_synthetic_dataset(n_test, seed, 0x54455354ull);     // "TEST"
  return b;
}

inline Tensor<float> gather_images(const Dataset& ds, const std::vector<int64_t>& idx) {
  const int64_t px = kImageHW * kImageHW * kImageC;
  auto out = Tensor<float>::zeros({static_cast<int64_t>(idx.size()), kImageHW,
                                   kImageHW, kImageC});
  for (size_t i = 0; i < idx.size(); ++i)
    std::memcpy(out.data() + static_cast<int64_t>(i) * px,
                ds.images.data() + idx[i] * px, sizeof(float) * px);
  return out;
}

inline std::vector<int> gather_labels(const Dataset& ds, const std::vector<int64_t>& idx) {
  std::vector<int> out(idx.size());
  for (size_t i = 0; i < idx.size(); ++i)
    out[i] = ds.labels[static_cast<size_t>(idx[i])];
  return out;
}

// Cache file: FWT1 blob holding train.images/test.images, followed by a
// u32 LE label count and that many u16 LE labels (train first, then test).
inline void save_dataset_cache(const std::string& path, const DataBundle& b) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open for write: " + path);
  save_fwt(os, {{"train.images", b.train.images}, {"test.images", b.test.images}});
  const uint32_t total =
      static_cast<uint32_t>(b.train.labels.size() + b.test.labels.size());
  io::put_u32(os, total);
  for (int v : b.train.labels) io::put_u16(os, static_cast<uint16_t>(v));
  for (int v : b.test.labels) io::put_u16(os, static_cast<uint16_t>(v));
  if (!os) throw FormatError("dataset cache write failed: " + path);
}

inline DataBundle load_dataset_cache(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open for read: " + path);
  auto entries = load_fwt(is);
  if (entries.size() != 2 || entries[0].name != "train.images" ||
      entries[1].name != "test.images")
    throw FormatError("dataset cache: unexpected layout in " + path);
  DataBundle b;
  b.train.images = entries[0].tensor;
  b.test.images = entries[1].tensor;
  const uint32_t total = io::get_u32(is);
  const int64_t n_train = b.train.images.dim(0), n_test = b.test.images.dim(0);
  if (total != static_cast<uint32_t>(n_train + n_test))
    throw FormatError("dataset cache: label count mismatch");
  b.train.labels.resize(static_cast<size_t>(n_train));
  b.test.labels.resize(static_cast<size_t>(n_test));
  for (auto& v : b.train.labels) v = io::get_u16(is);
  for (auto& v : b.test.labels) v = io::get_u16(is);
  return b;
}

} // namespace vfc
