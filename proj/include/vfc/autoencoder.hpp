// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "vfc/ops.hpp"

namespace vfc {

// ---------------------------------------------------------------------------
// rate-control embedding: scalar lambda -> vector conditioning input

template <class T>
struct LambdaEmbedding {
  double lambda_min = 1e-4, lambda_max = 5.12;
  int embed_dim = 64;
  Tensor<T> w1, b1, w2, b2;

  void init(double lmin, double lmax, Rng& rng, int dim = 64) {
    lambda_min = lmin;
    lambda_max = lmax;
    embed_dim = dim;
    w1 = Tensor<T>::zeros({1, dim});
    w1.fill_normal(rng, 1.0);
    b1 = Tensor<T>::zeros({dim});
    w2 = Tensor<T>::zeros({dim, dim});
    he_normal_init(w2, dim, rng);
    b2 = Tensor<T>::zeros({dim});
    for (auto* t : {&w1, &b1, &w2, &b2}) t->set_requires_grad();
  }

  // Normalized log input: t = (ln l - ln l_min) / (ln l_max - ln l_min).
  // Defined on (0, lambda_max]; values below lambda_min extrapolate (t < 0).
  T normalize(double lambda) const {
    if (!(lambda > 0.0) || lambda > lambda_max)
      throw ConfigError("lambda " + std::to_string(lambda) +
                        " outside (0, " + std::to_string(lambda_max) + "]");
    const double denom = std::log(lambda_max) - std::log(lambda_min);
    return static_cast<T>((std::log(lambda) - std::log(lambda_min)) / denom);
  }

  Tensor<T> forward(double lambda) const {
    auto in = Tensor<T>::from({1, 1}, {normalize(lambda)});
    return linear(gelu(linear(in, w1, b1)), w2, b2); // [1, embed_dim]
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + "fc1.weight", w1});
    out.push_back({prefix + "fc1.bias", b1});
    out.push_back({prefix + "fc2.weight", w2});
    out.push_back({prefix + "fc2.bias", b2});
  }
};

// ---------------------------------------------------------------------------
// ConvNext-style block whose layer-norm scale/shift come from the lambda
// embedding: dwconv 7x7 -> LN -> (gamma, delta) -> 1x1 expand x4 -> GeLU ->
// 1x1 project (zero-init) -> residual add.

template <class T>
struct AdaLNBlock {
  int channels = 0;
  Tensor<T> dw_w, dw_b;          // [7,7,1,C] depthwise
  Tensor<T> scale_w, scale_b;    // embed -> C (zero-init; gamma = 1 + out)
  Tensor<T> shift_w, shift_b;    // embed -> C (zero-init; delta = out)
  Tensor<T> expand_w, expand_b;  // 1x1 C -> 4C
  Tensor<T> proj_w, proj_b;      // 1x1 4C -> C, zero-init

  void init(int C, int embed_dim, Rng& rng) {
    channels = C;
    dw_w = Tensor<T>::zeros({7, 7, 1, C});
    he_normal_init(dw_w, 49, rng);
    dw_b = Tensor<T>::zeros({C});
    scale_w = Tensor<T>::zeros({embed_dim, C});
    scale_b = Tensor<T>::zeros({C});
    shift_w = Tensor<T>::zeros({embed_dim, C});
    shift_b = Tensor<T>::zeros({C});
    expand_w = Tensor<T>::zeros({1, 1, C, 4 * C});
    he_normal_init(expand_w, C, rng);
    expand_b = Tensor<T>::zeros({4 * C});
    proj_w = Tensor<T>::zeros({1, 1, 4 * C, C}); // zero init: block starts as identity
    proj_b = Tensor<T>::zeros({C});
    for (auto* t : {&dw_w, &dw_b, &scale_w, &scale_b, &shift_w, &shift_b,
                    &expand_w, &expand_b, &proj_w, &proj_b})
      t->set_requires_grad();
  }

  // ablate: force gamma = 1, delta = 0 (drops the conditioning path)
  Tensor<T> forward(const Tensor<T>& h, const Tensor<T>& lambda_emb,
                    bool ablate = false) const {
    if (h.dim(3) != channels)
      throw ShapeError("adaln: expected " + std::to_string(channels) +
                       " channels, got " + shape_str(h.shape()));
    auto u = layer_norm(conv2d(h, dw_w, dw_b, 1, 3, channels));
    if (!ablate) {
      auto gamma = add_const(linear(lambda_emb, scale_w, scale_b), T(1));
      auto delta = linear(lambda_emb, shift_w, shift_b);
      u = channel_scale_shift(u, gamma, delta);
    }
    u = gelu(conv2d(u, expand_w, expand_b));
    u = conv2d(u, proj_w, proj_b);
    return add(h, u);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + "dwconv.weight", dw_w});
    out.push_back({prefix + "dwconv.bias", dw_b});
    out.push_back({prefix + "scale.weight", scale_w});
    out.push_back({prefix + "scale.bias", scale_b});
    out.push_back({prefix + "shift.weight", shift_w});
    out.push_back({prefix + "shift.bias", shift_b});
    out.push_back({prefix + "expand.weight", expand_w});
    out.push_back({prefix + "expand.bias", expand_b});
    out.push_back({prefix + "proj.weight", proj_w});
    out.push_back({prefix + "proj.bias", proj_b});
  }
};

// ---------------------------------------------------------------------------
// symmetric autoencoder at the split point

struct AutoencoderSpec {
  int64_t channels = 0, height = 0, width = 0; // split feature shape
  int64_t bottleneck_total = 4096;             // elements per image, all configs
  int64_t beta = 0;                            // bottleneck channels

  static AutoencoderSpec make(int64_t C, int64_t H, int64_t W, int64_t total = 4096) {
    if (H % 2 || W % 2)
      throw ShapeError("autoencoder: split dims " + std::to_string(H) + "x" +
                       std::to_string(W) + " must be even for the stride-2 pair");
    AutoencoderSpec s;
    s.channels = C;
    s.height = H;
    s.width = W;
    s.bottleneck_total = total;
    const int64_t hw = (H / 2) * (W / 2);
    if (total % hw)
      throw ShapeError("autoencoder: bottleneck budget " + std::to_string(total) +
                       " not divisible by " + std::to_string(hw) +
                       " spatial cells; beta rule violated");
    s.beta = total / hw;
    return s;
  }
};

template <class T>
struct Autoencoder {
  AutoencoderSpec spec;
  Tensor<T> enc_in_w, enc_in_b;   // 3x3 stride 2
  std::vector<AdaLNBlock<T>> enc_blocks;
  Tensor<T> enc_out_w, enc_out_b; // 1x1 C -> beta
  Tensor<T> dec_in_w, dec_in_b;   // 1x1 beta -> C
  std::vector<AdaLNBlock<T>> dec_blocks;
  Tensor<T> dec_out_w, dec_out_b; // transposed 3x3 stride 2

  void init(const AutoencoderSpec& s, int embed_dim, Rng& rng) {
    spec = s;
    const int C = static_cast<int>(s.channels), B = static_cast<int>(s.beta);
    enc_in_w = Tensor<T>::zeros({3, 3, C, C});
    he_normal_init(enc_in_w, 9 * C, rng);
    enc_in_b = Tensor<T>::zeros({C});
    enc_blocks.resize(3);
    for (auto& blk : enc_blocks) blk.init(C, embed_dim, rng);
    enc_out_w = Tensor<T>::zeros({1, 1, C, B});
    he_normal_init(enc_out_w, C, rng);
    enc_out_b = Tensor<T>::zeros({B});
    dec_in_w = Tensor<T>::zeros({1, 1, B, C});
    he_normal_init(dec_in_w, B, rng);
    dec_in_b = Tensor<T>::zeros({C});
    dec_blocks.resize(3);
    for (auto& blk : dec_blocks) blk.init(C, embed_dim, rng);
    dec_out_w = Tensor<T>::zeros({C, 3, 3, C});
    he_normal_init(dec_out_w, 9 * C, rng);
    dec_out_b = Tensor<T>::zeros({C});
    for (auto* t : {&enc_in_w, &enc_in_b, &enc_out_w, &enc_out_b, &dec_in_w,
                    &dec_in_b, &dec_out_w, &dec_out_b})
      t->set_requires_grad();
  }

  Tensor<T> encode(const Tensor<T>& x, const Tensor<T>& lambda_emb,
                   bool ablate = false) const {
    if (x.ndim() != 4 || x.dim(1) != spec.height || x.dim(2) != spec.width ||
        x.dim(3) != spec.channels)
      throw ShapeError("encode: expected [N," + std::to_string(spec.height) + "," +
                       std::to_string(spec.width) + "," +
                       std::to_string(spec.channels) + "], got " +
                       shape_str(x.shape()));
    auto h = conv2d(x, enc_in_w, enc_in_b, 2, 1);
    for (const auto& blk : enc_blocks) h = blk.forward(h, lambda_emb, ablate);
    return conv2d(h, enc_out_w, enc_out_b, 1, 0); // [N, H/2, W/2, beta]
  }

  Tensor<T> decode(const Tensor<T>& zhat, const Tensor<T>& lambda_emb,
                   bool ablate = false) const {
    if (zhat.ndim() != 4 || zhat.dim(1) != spec.height / 2 ||
        zhat.dim(2) != spec.width / 2 || zhat.dim(3) != spec.beta)
      throw ShapeError("decode: expected [N," + std::to_string(spec.height / 2) +
                       "," + std::to_string(spec.width / 2) + "," +
                       std::to_string(spec.beta) + "], got " +
                       shape_str(zhat.shape()));
    auto h = conv2d(zhat, dec_in_w, dec_in_b, 1, 0);
    for (const auto& blk : dec_blocks) h = blk.forward(h, lambda_emb, ablate);
    return conv_transpose2d(h, dec_out_w, dec_out_b, 2, 1, 1);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + "enc.in.weight", enc_in_w});
    out.push_back({prefix + "enc.in.bias", enc_in_b});
    for (size_t i = 0; i < enc_blocks.size(); ++i)
      enc_blocks[i].collect(prefix + "enc.block" + std::to_string(i + 1) + ".", out);
    out.push_back({prefix + "enc.out.weight", enc_out_w});
    out.push_back({prefix + "enc.out.bias", enc_out_b});
    out.push_back({prefix + "dec.in.weight", dec_in_w});
    out.push_back({prefix + "dec.in.bias", dec_in_b});
    for (size_t i = 0; i < dec_blocks.size(); ++i)
      dec_blocks[i].collect(prefix + "dec.block" + std::to_string(i + 1) + ".", out);
    out.push_back({prefix + "dec.out.weight", dec_out_w});
    out.push_back({prefix + "dec.out.bias", dec_out_b});
  }
};

} // namespace vfc
