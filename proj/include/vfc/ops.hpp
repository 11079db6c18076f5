// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstring>
#include <numeric>
#include <type_traits>

#include "vfc/gemm.hpp"
#include "vfc/tensor.hpp"

namespace vfc {

// ---------------------------------------------------------------------------
// scalar helpers

namespace detail {

// Rational tanh (Lanczos continued fraction), clamped to [-1,1]. Used for
// every tanh/sigmoid/GeLU in the library, forward and backward, so analytic
// gradients are derivatives of the function actually computed.
template <class T>
inline T tanh_fast(T x) {
  const T xc = x < T(-9) ? T(-9) : (x > T(9) ? T(9) : x);
  const T x2 = xc * xc;
  const T p = xc * (T(135135) + x2 * (T(17325) + x2 * (T(378) + x2)));
  const T q = T(135135) + x2 * (T(62370) + x2 * (T(3150) + x2 * T(28)));
  const T t = p / q;
  return t < T(-1) ? T(-1) : (t > T(1) ? T(1) : t);
}

// Exact derivative of tanh_fast (including its clamp plateaus), not of the
// true tanh; gradients must differentiate what the forward computed.
template <class T>
inline T tanh_fast_grad(T x) {
  if (x <= T(-9) || x >= T(9)) return T(0);
  const T x2 = x * x;
  const T p = x * (T(135135) + x2 * (T(17325) + x2 * (T(378) + x2)));
  const T q = T(135135) + x2 * (T(62370) + x2 * (T(3150) + x2 * T(28)));
  if (p >= q || p <= -q) return T(0); // output clamp region
  const T dp = T(135135) + x2 * (T(51975) + x2 * (T(1890) + T(7) * x2));
  const T dq = x * (T(124740) + x2 * (T(12600) + x2 * T(168)));
  return (dp * q - p * dq) / (q * q);
}

template <class T>
inline T sigmoid_fast(T x) {
  return T(0.5) * (T(1) + tanh_fast(T(0.5) * x));
}

template <class T>
inline T sigmoid_fast_grad(T x) {
  return T(0.25) * tanh_fast_grad(T(0.5) * x);
}

// The density chain wants a kink-free saturating function at 64-bit (exact
// tails, clean finite differences); f32 keeps the cheap rational.
template <class T>
inline T smooth_tanh(T x) {
  if constexpr (std::is_same_v<T, double>)
    return std::tanh(x);
  else
    return tanh_fast(x);
}

template <class T>
inline T smooth_tanh_grad(T x) {
  if constexpr (std::is_same_v<T, double>) {
    const double t = std::tanh(x);
    return 1.0 - t * t;
  } else {
    return tanh_fast_grad(x);
  }
}

template <class T>
inline T smooth_sigmoid(T x) {
  if constexpr (std::is_same_v<T, double>) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  } else {
    return sigmoid_fast(x);
  }
}

template <class T>
inline T smooth_sigmoid_grad(T x) {
  if constexpr (std::is_same_v<T, double>) {
    const double s = smooth_sigmoid(x);
    return s * (1.0 - s);
  } else {
    return sigmoid_fast_grad(x);
  }
}

// chunked elementwise parallelism; writers own disjoint ranges
template <class F>
inline void for_chunks(int64_t n, F&& f) {
  parallel_for((n + 65535) / 65536, [&](int64_t b0, int64_t b1) {
    f(b0 * 65536, std::min<int64_t>(n, b1 * 65536));
  });
}

constexpr double kGeluC0 = 0.7978845608028654; // sqrt(2/pi)
constexpr double kGeluC1 = 0.044715;

template <class T>
inline T gelu_fwd(T x) {
  const T u = T(kGeluC0) * (x + T(kGeluC1) * x * x * x);
  return T(0.5) * x * (T(1) + tanh_fast(u));
}

template <class T>
inline T gelu_grad(T x) {
  const T u = T(kGeluC0) * (x + T(kGeluC1) * x * x * x);
  const T t = tanh_fast(u);
  const T du = T(kGeluC0) * (T(1) + T(3) * T(kGeluC1) * x * x);
  return T(0.5) * (T(1) + t) + T(0.5) * x * tanh_fast_grad(u) * du;
}

} // namespace detail

// ---------------------------------------------------------------------------
// elementwise / simple ops

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  std::vector<T> out(a.numel());
  {
    const T *pa = a.data(), *pb = b.data();
    T* po = out.data();
    detail::for_chunks(a.numel(), [&](int64_t i0, int64_t i1) {
      for (int64_t i = i0; i < i1; ++i) po[i] = pa[i] + pb[i];
    });
  }
  return make_op<T>(
      a.shape(), std::move(out), {a, b}, [a, b](detail::Node<T>& n) mutable {
        const T* g = n.grad.data();
        if (a.requires_grad()) {
          T* ga = a.grad();
          detail::for_chunks(n.numel(), [&](int64_t i0, int64_t i1) {
            for (int64_t i = i0; i < i1; ++i) ga[i] += g[i];
          });
        }
        if (b.requires_grad()) {
          T* gb = b.grad();
          detail::for_chunks(n.numel(), [&](int64_t i0, int64_t i1) {
            for (int64_t i = i0; i < i1; ++i) gb[i] += g[i];
          });
        }
      });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  std::vector<T> out(a.numel());
  const T *pa = a.data(), *pb = b.data();
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = pa[i] * pb[i];
  return make_op<T>(
      a.shape(), std::move(out), {a, b}, [a, b](detail::Node<T>& n) mutable {
        const T* g = n.grad.data();
        if (a.requires_grad()) {
          T* ga = a.grad();
          const T* pb2 = b.data();
          for (int64_t i = 0; i < n.numel(); ++i) ga[i] += g[i] * pb2[i];
        }
        if (b.requires_grad()) {
          T* gb = b.grad();
          const T* pa2 = a.data();
          for (int64_t i = 0; i < n.numel(); ++i) gb[i] += g[i] * pa2[i];
        }
      });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> out(a.numel());
  const T* pa = a.data();
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = pa[i] * c;
  return make_op<T>(a.shape(), std::move(out), {a},
                    [a, c](detail::Node<T>& n) mutable {
                      if (!a.requires_grad()) return;
                      T* ga = a.grad();
                      const T* g = n.grad.data();
                      for (int64_t i = 0; i < n.numel(); ++i) ga[i] += g[i] * c;
                    });
}

template <class T>
Tensor<T> add_const(const Tensor<T>& a, T c) {
  std::vector<T> out(a.numel());
  const T* pa = a.data();
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = pa[i] + c;
  return make_op<T>(a.shape(), std::move(out), {a},
                    [a](detail::Node<T>& n) mutable {
                      if (!a.requires_grad()) return;
                      T* ga = a.grad();
                      const T* g = n.grad.data();
                      for (int64_t i = 0; i < n.numel(); ++i) ga[i] += g[i];
                    });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(shape));
  std::vector<T> out(a.vec());
  return make_op<T>(std::move(shape), std::move(out), {a},
                    [a](detail::Node<T>& n) mutable {
                      if (!a.requires_grad()) return;
                      T* ga = a.grad();
                      const T* g = n.grad.data();
                      for (int64_t i = 0; i < n.numel(); ++i) ga[i] += g[i];
                    });
}

// y[..., c] = x[..., c] * gamma[c] + delta[c]; gamma/delta shaped [C] or [1,C].
template <class T>
Tensor<T> channel_scale_shift(const Tensor<T>& x, const Tensor<T>& gamma,
                              const Tensor<T>& delta) {
  const int64_t C = x.shape().back();
  if (gamma.numel() != C || delta.numel() != C)
    throw ShapeError("channel_scale_shift: scale/shift length must equal " +
                     std::to_string(C));
  const int64_t rows = x.numel() / C;
  std::vector<T> out(x.numel());
  {
    const T *px = x.data(), *pg = gamma.data(), *pd = delta.data();
    T* po = out.data();
    parallel_for(rows, [&](int64_t r0, int64_t r1) {
      for (int64_t r = r0; r < r1; ++r) {
        const T* xr = px + r * C;
        T* orow = po + r * C;
        for (int64_t c = 0; c < C; ++c) orow[c] = xr[c] * pg[c] + pd[c];
      }
    });
  }
  return make_op<T>(
      x.shape(), std::move(out), {x, gamma, delta},
      [x, gamma, delta, rows, C](detail::Node<T>& n) mutable {
        const T* g = n.grad.data();
        if (x.requires_grad()) {
          T* gx = x.grad();
          const T* pg = gamma.data();
          parallel_for(rows, [&](int64_t r0, int64_t r1) {
            for (int64_t r = r0; r < r1; ++r)
              for (int64_t c = 0; c < C; ++c) gx[r * C + c] += g[r * C + c] * pg[c];
          });
        }
        if (gamma.requires_grad()) {
          T* gg = gamma.grad();
          const T* px = x.data();
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < C; ++c) gg[c] += g[r * C + c] * px[r * C + c];
        }
        if (delta.requires_grad()) {
          T* gd = delta.grad();
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < C; ++c) gd[c] += g[r * C + c];
        }
      });
}

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  const T* px = x.data();
  T* po = out.data();
  parallel_for((x.numel() + 4095) / 4096, [&](int64_t b0, int64_t b1) {
    const int64_t i0 = b0 * 4096, i1 = std::min<int64_t>(x.numel(), b1 * 4096);
    for (int64_t i = i0; i < i1; ++i) po[i] = detail::gelu_fwd(px[i]);
  });
  return make_op<T>(x.shape(), std::move(out), {x},
                    [x](detail::Node<T>& n) mutable {
                      if (!x.requires_grad()) return;
                      T* gx = x.grad();
                      const T* g = n.grad.data();
                      const T* px2 = x.data();
                      parallel_for((n.numel() + 4095) / 4096, [&](int64_t b0, int64_t b1) {
                        const int64_t i0 = b0 * 4096,
                                      i1 = std::min<int64_t>(n.numel(), b1 * 4096);
                        for (int64_t i = i0; i < i1; ++i)
                          gx[i] += g[i] * detail::gelu_grad(px2[i]);
                      });
                    });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  const T* px = x.data();
  for (int64_t i = 0; i < x.numel(); ++i) out[i] = detail::sigmoid_fast(px[i]);
  return make_op<T>(x.shape(), std::move(out), {x},
                    [x](detail::Node<T>& n) mutable {
                      if (!x.requires_grad()) return;
                      T* gx = x.grad();
                      const T* g = n.grad.data();
                      const T* px2 = x.data();
                      for (int64_t i = 0; i < n.numel(); ++i)
                        gx[i] += g[i] * detail::sigmoid_fast_grad(px2[i]);
                    });
}

template <class T>
Tensor<T> softplus(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  const T* px = x.data();
  for (int64_t i = 0; i < x.numel(); ++i) {
    const T v = px[i];
    out[i] = (v > T(0) ? v : T(0)) + std::log1p(std::exp(-std::abs(v)));
  }
  return make_op<T>(x.shape(), std::move(out), {x},
                    [x](detail::Node<T>& n) mutable {
                      if (!x.requires_grad()) return;
                      T* gx = x.grad();
                      const T* g = n.grad.data();
                      const T* px2 = x.data();
                      for (int64_t i = 0; i < n.numel(); ++i) {
                        const T e = std::exp(-std::abs(px2[i]));
                        const T s = px2[i] >= T(0) ? T(1) / (T(1) + e) : e / (T(1) + e);
                        gx[i] += g[i] * s;
                      }
                    });
}

// ---------------------------------------------------------------------------
// layer_norm over the last (channel) dimension, no learned affine

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, T eps = T(1e-5)) {
  const int64_t C = x.shape().back();
  if (C < 1) throw ShapeError("layer_norm: channel dim must be >= 1");
  const int64_t rows = x.numel() / C;
  std::vector<T> out(x.numel());
  auto inv = std::make_shared<std::vector<T>>(rows);
  {
    const T* px = x.data();
    T* po = out.data();
    T* pinv = inv->data();
    parallel_for(rows, [&](int64_t r0, int64_t r1) {
      for (int64_t r = r0; r < r1; ++r) {
        const T* xr = px + r * C;
        T mean = 0;
        for (int64_t c = 0; c < C; ++c) mean += xr[c];
        mean /= T(C);
        T var = 0;
        for (int64_t c = 0; c < C; ++c) var += (xr[c] - mean) * (xr[c] - mean);
        var /= T(C);
        const T iv = T(1) / std::sqrt(var + eps);
        pinv[r] = iv;
        T* orow = po + r * C;
        for (int64_t c = 0; c < C; ++c) orow[c] = (xr[c] - mean) * iv;
      }
    });
  }
  return make_op<T>(
      x.shape(), std::move(out), {x}, [x, inv, rows, C](detail::Node<T>& n) mutable {
        if (!x.requires_grad()) return;
        T* gx = x.grad();
        const T* g = n.grad.data();
        const T* y = n.val.data(); // normalized output
        const T* pinv = inv->data();
        parallel_for(rows, [&](int64_t r0, int64_t r1) {
          for (int64_t r = r0; r < r1; ++r) {
            const T* gr = g + r * C;
            const T* yr = y + r * C;
            T gsum = 0, gysum = 0;
            for (int64_t c = 0; c < C; ++c) {
              gsum += gr[c];
              gysum += gr[c] * yr[c];
            }
            gsum /= T(C);
            gysum /= T(C);
            T* gxr = gx + r * C;
            const T iv = pinv[r];
            for (int64_t c = 0; c < C; ++c)
              gxr[c] += iv * (gr[c] - gsum - yr[c] * gysum);
          }
        });
      });
}

// ---------------------------------------------------------------------------
// linear: y[N,F] = x[N,K] @ w[K,F] + b[F]

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b = {}) {
  if (x.ndim() != 2 || w.ndim() != 2 || x.dim(1) != w.dim(0))
    throw ShapeError("linear: " + shape_str(x.shape()) + " @ " + shape_str(w.shape()));
  const int64_t N = x.dim(0), K = x.dim(1), F = w.dim(1);
  if (b.defined() && b.numel() != F)
    throw ShapeError("linear: bias length != " + std::to_string(F));
  std::vector<T> out(N * F, T(0));
  if (b.defined())
    for (int64_t r = 0; r < N; ++r)
      std::memcpy(out.data() + r * F, b.data(), sizeof(T) * F);
  gemm_acc(x.data(), w.data(), out.data(), N, K, F);
  return make_op<T>(
      {N, F}, std::move(out), {x, w, b}, [x, w, b, N, K, F](detail::Node<T>& n) mutable {
        const T* g = n.grad.data();
        if (x.requires_grad()) {
          std::vector<T> wt(K * F);
          transpose(w.data(), wt.data(), K, F);
          gemm_acc(g, wt.data(), x.grad(), N, F, K);
        }
        if (w.requires_grad()) {
          std::vector<T> xt(N * K);
          transpose(x.data(), xt.data(), N, K);
          gemm_acc(xt.data(), g, w.grad(), K, N, F);
        }
        if (b.defined() && b.requires_grad()) {
          T* gb = b.grad();
          for (int64_t r = 0; r < N; ++r)
            for (int64_t f = 0; f < F; ++f) gb[f] += g[r * F + f];
        }
      });
}

// ---------------------------------------------------------------------------
// conv2d on channels-last tensors
//
// input  [N, H, W, C]
// weight [kh, kw, C/groups, O]
// output [N, H', W', O] with H' = (H + 2p - kh)/s + 1

namespace detail {

struct ConvDims {
  int64_t N, H, W, C, kh, kw, O, Ho, Wo;
  int stride, pad;
};

// Patch matrix: rows = output positions, cols = [ky][kx][c1-c0].
template <class T>
void im2col(const T* x, const ConvDims& d, int64_t c0, int64_t c1, T* patches) {
  const int64_t Cg = c1 - c0, K = d.kh * d.kw * Cg;
  const int64_t rows = d.N * d.Ho * d.Wo;
  const bool full = (c0 == 0 && c1 == d.C);
  parallel_for(rows, [&](int64_t r0, int64_t r1) {
    for (int64_t r = r0; r < r1; ++r) {
      const int64_t n = r / (d.Ho * d.Wo);
      const int64_t oy = (r / d.Wo) % d.Ho, ox = r % d.Wo;
      T* prow = patches + r * K;
      for (int64_t ky = 0; ky < d.kh; ++ky) {
        const int64_t iy = oy * d.stride - d.pad + ky;
        T* dst = prow + ky * d.kw * Cg;
        if (iy < 0 || iy >= d.H) {
          std::fill(dst, dst + d.kw * Cg, T(0));
          continue;
        }
        const int64_t ix0 = ox * d.stride - d.pad;
        const T* srow = x + ((n * d.H + iy) * d.W) * d.C;
        if (full && ix0 >= 0 && ix0 + d.kw <= d.W) {
          std::memcpy(dst, srow + ix0 * d.C, sizeof(T) * d.kw * d.C);
        } else {
          for (int64_t kx = 0; kx < d.kw; ++kx) {
            const int64_t ix = ix0 + kx;
            if (ix < 0 || ix >= d.W)
              std::fill(dst + kx * Cg, dst + (kx + 1) * Cg, T(0));
            else
              std::memcpy(dst + kx * Cg, srow + ix * d.C + c0, sizeof(T) * Cg);
          }
        }
      }
    }
  });
}

// Accumulate patch-row matrix back onto the [N,H,W,*] grid (adjoint of
// im2col). dst channels [c0,c1); src cols = [ky][kx][c1-c0].
template <class T>
void col2im_add(const T* src, const ConvDims& d, int64_t c0, int64_t c1, T* dst) {
  const int64_t Cg = c1 - c0, K = d.kh * d.kw * Cg;
  const int64_t cells = d.N * d.H * d.W;
  parallel_for(cells, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      const int64_t n = i / (d.H * d.W);
      const int64_t y = (i / d.W) % d.H, x = i % d.W;
      T* drow = dst + i * d.C + c0;
      for (int64_t ky = 0; ky < d.kh; ++ky) {
        const int64_t ty = y + d.pad - ky;
        if (ty < 0 || ty % d.stride) continue;
        const int64_t oy = ty / d.stride;
        if (oy >= d.Ho) continue;
        for (int64_t kx = 0; kx < d.kw; ++kx) {
          const int64_t tx = x + d.pad - kx;
          if (tx < 0 || tx % d.stride) continue;
          const int64_t ox = tx / d.stride;
          if (ox >= d.Wo) continue;
          const T* srow = src + ((n * d.Ho + oy) * d.Wo + ox) * K + (ky * d.kw + kx) * Cg;
          for (int64_t c = 0; c < Cg; ++c) drow[c] += srow[c];
        }
      }
    }
  });
}

// Direct 3x3 stride-1 pad-1 convolution as nine shifted GEMMs per image.
// Interior output cells accumulate every tap in place; the two edge columns
// (whose shifted reads wrap across rows) are recomputed exactly afterwards.
// Avoids materializing the patch matrix entirely.
template <class T>
void conv3x3_tap(const T* x, const T* w, const T* bias, T* out, int64_t N,
                 int64_t H, int64_t W, int64_t C, int64_t O) {
  parallel_for(N, [&](int64_t n0, int64_t n1) {
    for (int64_t n = n0; n < n1; ++n) {
      const T* xi = x + n * H * W * C;
      T* oi = out + n * H * W * O;
      if (bias) {
        for (int64_t r = 0; r < H * W; ++r)
          std::memcpy(oi + r * O, bias, sizeof(T) * O);
      } else {
        std::fill(oi, oi + H * W * O, T(0));
      }
      for (int64_t ky = 0; ky < 3; ++ky) {
        const int64_t dy = ky - 1;
        const int64_t y0 = std::max<int64_t>(0, -dy), y1 = H - std::max<int64_t>(0, dy);
        for (int64_t kx = 0; kx < 3; ++kx) {
          const int64_t dx = kx - 1;
          // first/last cell trimmed when the shift would read past the image
          const int64_t a = y0 * W + (dx < 0 ? 1 : 0);
          const int64_t b = y1 * W - (dx > 0 ? 1 : 0);
          if (b <= a) continue;
          gemm_rows<T, true>(xi + (dy * W + dx) * C, w + (ky * 3 + kx) * C * O, oi,
                             a, b, C, O);
        }
      }
      // exact recomputation of the wrapped edge columns
      for (int64_t y = 0; y < H; ++y) {
        for (int64_t xx : {int64_t(0), W - 1}) {
          T* cell = oi + (y * W + xx) * O;
          if (bias)
            std::memcpy(cell, bias, sizeof(T) * O);
          else
            std::fill(cell, cell + O, T(0));
          for (int64_t ky = 0; ky < 3; ++ky) {
            const int64_t iy = y + ky - 1;
            if (iy < 0 || iy >= H) continue;
            for (int64_t kx = 0; kx < 3; ++kx) {
              const int64_t ix = xx + kx - 1;
              if (ix < 0 || ix >= W) continue;
              const T* xr = xi + (iy * W + ix) * C;
              const T* wr = w + ((ky * 3 + kx) * C) * O;
              for (int64_t c = 0; c < C; ++c) {
                const T xv = xr[c];
                const T* wrow = wr + c * O;
                for (int64_t o = 0; o < O; ++o) cell[o] += xv * wrow[o];
              }
            }
          }
        }
      }
    }
  });
}

inline ConvDims conv_dims(const Shape& xs, const Shape& ws, int stride, int pad,
                          int groups, const char* what) {
  if (xs.size() != 4 || ws.size() != 4)
    throw ShapeError(std::string(what) + ": expected 4-d input/weight, got " +
                     shape_str(xs) + " and " + shape_str(ws));
  ConvDims d;
  d.N = xs[0];
  d.H = xs[1];
  d.W = xs[2];
  d.C = xs[3];
  d.kh = ws[0];
  d.kw = ws[1];
  d.O = ws[3];
  d.stride = stride;
  d.pad = pad;
  if (stride < 1) throw ShapeError(std::string(what) + ": stride must be >= 1");
  if (groups < 1 || d.C % groups)
    throw ShapeError(std::string(what) + ": channels " + std::to_string(d.C) +
                     " not divisible by groups " + std::to_string(groups));
  if (ws[2] != d.C / groups)
    throw ShapeError(std::string(what) + ": weight expects " + std::to_string(ws[2]) +
                     " input channels per group, input has " +
                     std::to_string(d.C / groups) + " (" + shape_str(xs) + " vs " +
                     shape_str(ws) + ")");
  if (d.O % groups)
    throw ShapeError(std::string(what) + ": output channels not divisible by groups");
  if (d.H + 2 * pad < d.kh || d.W + 2 * pad < d.kw)
    throw ShapeError(std::string(what) + ": kernel " + std::to_string(d.kh) + "x" +
                     std::to_string(d.kw) + " does not fit input " + shape_str(xs) +
                     " with pad " + std::to_string(pad));
  d.Ho = (d.H + 2 * pad - d.kh) / stride + 1;
  d.Wo = (d.W + 2 * pad - d.kw) / stride + 1;
  return d;
}

} // namespace detail

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b = {},
                 int stride = 1, int pad = 0, int groups = 1) {
  using detail::ConvDims;
  const ConvDims d = detail::conv_dims(x.shape(), w.shape(), stride, pad, groups, "conv2d");
  if (b.defined() && b.numel() != d.O)
    throw ShapeError("conv2d: bias length != output channels");

  const int64_t rows = d.N * d.Ho * d.Wo;
  const int64_t Cg = d.C / groups, Og = d.O / groups, K = d.kh * d.kw * Cg;
  const bool tap3x3 = groups == 1 && d.kh == 3 && d.kw == 3 && stride == 1 &&
                      pad == 1 && d.H >= 8 && d.W >= 8;
  std::vector<T> out(rows * d.O, T(0));
  if (b.defined() && !tap3x3) {
    const T* pb = b.data();
    T* po = out.data();
    parallel_for(rows, [&](int64_t r0, int64_t r1) {
      for (int64_t r = r0; r < r1; ++r)
        std::memcpy(po + r * d.O, pb, sizeof(T) * d.O);
    });
  }

  // Depthwise fast path: direct taps, no patch matrix.
  const bool depthwise = (groups == d.C && d.O == d.C);
  std::shared_ptr<T[]> patches; // retained for the weight-gradient pass
  if (depthwise) {
    const T *px = x.data(), *pw = w.data();
    T* po = out.data();
    parallel_for(rows, [&](int64_t r0, int64_t r1) {
      for (int64_t r = r0; r < r1; ++r) {
        const int64_t n = r / (d.Ho * d.Wo);
        const int64_t oy = (r / d.Wo) % d.Ho, ox = r % d.Wo;
        T* orow = po + r * d.O;
        for (int64_t ky = 0; ky < d.kh; ++ky) {
          const int64_t iy = oy * d.stride - d.pad + ky;
          if (iy < 0 || iy >= d.H) continue;
          for (int64_t kx = 0; kx < d.kw; ++kx) {
            const int64_t ix = ox * d.stride - d.pad + kx;
            if (ix < 0 || ix >= d.W) continue;
            const T* xr = px + ((n * d.H + iy) * d.W + ix) * d.C;
            const T* wr = pw + (ky * d.kw + kx) * d.C;
            for (int64_t c = 0; c < d.C; ++c) orow[c] += xr[c] * wr[c];
          }
        }
      }
    });
  } else if (groups == 1) {
    if (d.kh == 1 && d.kw == 1 && stride == 1 && pad == 0) {
      if (b.defined())
        gemm_acc(x.data(), w.data(), out.data(), rows, d.C, d.O);
      else
        gemm_set(x.data(), w.data(), out.data(), rows, d.C, d.O);
    } else if (tap3x3) {
      detail::conv3x3_tap(x.data(), w.data(), b.defined() ? b.data() : nullptr,
                          out.data(), d.N, d.H, d.W, d.C, d.O);
    } else {
      patches = make_scratch<T>(rows * K);
      detail::im2col(x.data(), d, 0, d.C, patches.get());
      if (b.defined())
        gemm_acc(patches.get(), w.data(), out.data(), rows, K, d.O);
      else
        gemm_set(patches.get(), w.data(), out.data(), rows, K, d.O);
    }
  } else {
    // general grouped path; per-group patches, weight slice and output slice
    std::vector<T> gp(rows * K), gout(rows * Og), wslice(K * Og);
    for (int g = 0; g < groups; ++g) {
      detail::im2col(x.data(), d, g * Cg, (g + 1) * Cg, gp.data());
      for (int64_t k = 0; k < K; ++k)
        for (int64_t o = 0; o < Og; ++o)
          wslice[k * Og + o] = w.data()[k * d.O + g * Og + o];
      std::fill(gout.begin(), gout.end(), T(0));
      gemm_acc(gp.data(), wslice.data(), gout.data(), rows, K, Og);
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t o = 0; o < Og; ++o) out[r * d.O + g * Og + o] += gout[r * Og + o];
    }
  }

  return make_op<T>(
      {d.N, d.Ho, d.Wo, d.O}, std::move(out), {x, w, b},
      [x, w, b, d, patches, depthwise, groups](detail::Node<T>& n) mutable {
        const int64_t rows = d.N * d.Ho * d.Wo;
        const int64_t Cg = d.C / groups, K = d.kh * d.kw * Cg;
        const T* g = n.grad.data();

        if (b.defined() && b.requires_grad()) {
          T* gb = b.grad();
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t o = 0; o < d.O; ++o) gb[o] += g[r * d.O + o];
        }

        if (depthwise) {
          if (x.requires_grad()) {
            T* gx = x.grad();
            const T* pw = w.data();
            const int64_t cells = d.N * d.H * d.W;
            parallel_for(cells, [&](int64_t i0, int64_t i1) {
              for (int64_t i = i0; i < i1; ++i) {
                const int64_t nn = i / (d.H * d.W);
                const int64_t y = (i / d.W) % d.H, xx = i % d.W;
                T* gxr = gx + i * d.C;
                for (int64_t ky = 0; ky < d.kh; ++ky) {
                  const int64_t ty = y + d.pad - ky;
                  if (ty < 0 || ty % d.stride) continue;
                  const int64_t oy = ty / d.stride;
                  if (oy >= d.Ho) continue;
                  for (int64_t kx = 0; kx < d.kw; ++kx) {
                    const int64_t tx = xx + d.pad - kx;
                    if (tx < 0 || tx % d.stride) continue;
                    const int64_t ox = tx / d.stride;
                    if (ox >= d.Wo) continue;
                    const T* gr = g + ((nn * d.Ho + oy) * d.Wo + ox) * d.C;
                    const T* wr = pw + (ky * d.kw + kx) * d.C;
                    for (int64_t c = 0; c < d.C; ++c) gxr[c] += gr[c] * wr[c];
                  }
                }
              }
            });
          }
          if (w.requires_grad()) {
            T* gw = w.grad();
            const T* px = x.data();
            const int64_t taps = d.kh * d.kw;
            parallel_for(taps, [&](int64_t t0, int64_t t1) {
              for (int64_t t = t0; t < t1; ++t) {
                const int64_t ky = t / d.kw, kx = t % d.kw;
                T* gwr = gw + t * d.C;
                for (int64_t r = 0; r < rows; ++r) {
                  const int64_t nn = r / (d.Ho * d.Wo);
                  const int64_t oy = (r / d.Wo) % d.Ho, ox = r % d.Wo;
                  const int64_t iy = oy * d.stride - d.pad + ky;
                  const int64_t ix = ox * d.stride - d.pad + kx;
                  if (iy < 0 || iy >= d.H || ix < 0 || ix >= d.W) continue;
                  const T* xr = px + ((nn * d.H + iy) * d.W + ix) * d.C;
                  const T* gr = g + r * d.C;
                  for (int64_t c = 0; c < d.C; ++c) gwr[c] += gr[c] * xr[c];
                }
              }
            });
          }
          return;
        }

        if (groups != 1) {
          // rare path: rebuild per-group patches
          std::vector<T> gp(rows * K);
          const int64_t Og = d.O / groups;
          for (int gi = 0; gi < groups; ++gi) {
            detail::im2col(x.data(), d, gi * Cg, (gi + 1) * Cg, gp.data());
            std::vector<T> gslice(rows * Og);
            for (int64_t r = 0; r < rows; ++r)
              for (int64_t o = 0; o < Og; ++o)
                gslice[r * Og + o] = g[r * d.O + gi * Og + o];
            if (w.requires_grad()) {
              std::vector<T> gpt(K * rows);
              transpose(gp.data(), gpt.data(), rows, K);
              std::vector<T> dw(K * Og, T(0));
              gemm_acc(gpt.data(), gslice.data(), dw.data(), K, rows, Og);
              T* gw = w.grad();
              for (int64_t k = 0; k < K; ++k)
                for (int64_t o = 0; o < Og; ++o)
                  gw[k * d.O + gi * Og + o] += dw[k * Og + o];
            }
            if (x.requires_grad()) {
              std::vector<T> wslice(K * Og);
              for (int64_t k = 0; k < K; ++k)
                for (int64_t o = 0; o < Og; ++o)
                  wslice[k * Og + o] = w.data()[k * d.O + gi * Og + o];
              std::vector<T> wt(Og * K);
              transpose(wslice.data(), wt.data(), K, Og);
              std::vector<T> dp(rows * K, T(0));
              gemm_acc(gslice.data(), wt.data(), dp.data(), rows, Og, K);
              detail::col2im_add(dp.data(), d, gi * Cg, (gi + 1) * Cg, x.grad());
            }
          }
          return;
        }

        const bool one_by_one = (d.kh == 1 && d.kw == 1 && d.stride == 1 && d.pad == 0);
        const bool tap3x3 = d.kh == 3 && d.kw == 3 && d.stride == 1 && d.pad == 1 &&
                            d.H >= 8 && d.W >= 8;
        if (w.requires_grad()) {
          // dW = (G^T A)^T via one cheap transpose of G; the patch matrix is
          // rebuilt here for tap-path convolutions, which never build it in
          // the forward pass
          auto gt = make_scratch<T>(d.O * rows);
          transpose(g, gt.get(), rows, d.O);
          const T* a = x.data();
          std::shared_ptr<T[]> rebuilt;
          if (!one_by_one) {
            if (patches) {
              a = patches.get();
            } else {
              rebuilt = make_scratch<T>(rows * K);
              detail::im2col(x.data(), d, 0, d.C, rebuilt.get());
              a = rebuilt.get();
            }
          }
          auto dwt = make_scratch<T>(d.O * K);
          gemm_set(gt.get(), a, dwt.get(), d.O, rows, K);
          T* gw = w.grad();
          parallel_for(d.O, [&](int64_t o0, int64_t o1) {
            for (int64_t o = o0; o < o1; ++o)
              for (int64_t k = 0; k < K; ++k) gw[k * d.O + o] += dwt[o * K + k];
          });
        }
        if (x.requires_grad()) {
          if (one_by_one) {
            auto wt = make_scratch<T>(d.O * K);
            transpose(w.data(), wt.get(), K, d.O);
            gemm_acc(g, wt.get(), x.grad(), rows, d.O, K);
          } else if (tap3x3) {
            // adjoint: flipped kernel with transposed per-tap weights
            auto wft = make_scratch<T>(9 * d.O * d.C);
            for (int64_t ky = 0; ky < 3; ++ky)
              for (int64_t kx = 0; kx < 3; ++kx)
                transpose(w.data() + ((2 - ky) * 3 + (2 - kx)) * d.C * d.O,
                          wft.get() + (ky * 3 + kx) * d.O * d.C, d.C, d.O);
            auto dxt = make_scratch<T>(rows * d.C);
            detail::conv3x3_tap(g, wft.get(), static_cast<const T*>(nullptr),
                                dxt.get(), d.N, d.H, d.W, d.O, d.C);
            T* gx = x.grad();
            const T* px = dxt.get();
            parallel_for((rows * d.C + 65535) / 65536, [&](int64_t b0, int64_t b1) {
              const int64_t i0 = b0 * 65536,
                            i1 = std::min<int64_t>(rows * d.C, b1 * 65536);
              for (int64_t i = i0; i < i1; ++i) gx[i] += px[i];
            });
          } else {
            auto wt = make_scratch<T>(d.O * K);
            transpose(w.data(), wt.get(), K, d.O);
            auto dp = make_scratch<T>(rows * K);
            gemm_set(g, wt.get(), dp.get(), rows, d.O, K);
            detail::col2im_add(dp.get(), d, 0, d.C, x.grad());
          }
        }
      });
}

// conv_transpose2d: input [N,Hi,Wi,Cin], weight [Cin, kh, kw, O],
// output [N, Ho, Wo, O] with Ho = (Hi-1)*s - 2p + kh + output_pad.
template <class T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w,
                           const Tensor<T>& b = {}, int stride = 1, int pad = 0,
                           int output_pad = 0) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4 || ws[0] != xs[3])
    throw ShapeError("conv_transpose2d: input " + shape_str(xs) + " vs weight " +
                     shape_str(ws) + " (weight is [Cin,kh,kw,O])");
  if (output_pad < 0 || output_pad >= stride)
    throw ShapeError("conv_transpose2d: output_pad must be in [0, stride)");
  detail::ConvDims d;
  d.N = xs[0];
  d.Ho = xs[1] * stride - 2 * pad + ws[1] - stride + output_pad;
  d.Wo = xs[2] * stride - 2 * pad + ws[2] - stride + output_pad;
  d.H = d.Ho; // col2im grid = output grid
  d.W = d.Wo;
  d.C = ws[3];
  d.O = ws[3];
  d.kh = ws[1];
  d.kw = ws[2];
  d.stride = stride;
  d.pad = pad;
  if (d.Ho <= 0 || d.Wo <= 0)
    throw ShapeError("conv_transpose2d: non-positive output dims");
  const int64_t Cin = xs[3], K2 = d.kh * d.kw * d.O;
  const int64_t rows_in = d.N * xs[1] * xs[2];

  // P = X @ W2, then adjoint-of-im2col onto the output grid
  auto pmat = make_scratch<T>(rows_in * K2);
  gemm_set(x.data(), w.data(), pmat.get(), rows_in, Cin, K2);

  std::vector<T> out(d.N * d.Ho * d.Wo * d.O, T(0));
  if (b.defined()) {
    if (b.numel() != d.O) throw ShapeError("conv_transpose2d: bias length mismatch");
    T* po = out.data();
    const T* pb = b.data();
    for (int64_t r = 0; r < d.N * d.Ho * d.Wo; ++r)
      std::memcpy(po + r * d.O, pb, sizeof(T) * d.O);
  }
  {
    // reuse col2im over the output grid: Ho/Wo here play the im2col "output"
    // role of the matching forward conv
    detail::ConvDims cd = d;
    cd.Ho = xs[1];
    cd.Wo = xs[2];
    detail::col2im_add(pmat.get(), cd, 0, d.O, out.data());
  }

  const int64_t Hi = xs[1], Wi = xs[2];
  return make_op<T>(
      {d.N, d.Ho, d.Wo, d.O}, std::move(out), {x, w, b},
      [x, w, b, d, Hi, Wi, Cin, K2](detail::Node<T>& n) mutable {
        const int64_t rows_in = d.N * Hi * Wi;
        const T* g = n.grad.data();
        if (b.defined() && b.requires_grad()) {
          T* gb = b.grad();
          for (int64_t r = 0; r < d.N * d.Ho * d.Wo; ++r)
            for (int64_t o = 0; o < d.O; ++o) gb[o] += g[r * d.O + o];
        }
        // dP = im2col(dY) over the input grid
        detail::ConvDims cd = d;
        cd.Ho = Hi;
        cd.Wo = Wi;
        auto dp = make_scratch<T>(rows_in * K2);
        detail::im2col(g, cd, 0, d.O, dp.get());
        if (x.requires_grad()) {
          auto wt = make_scratch<T>(K2 * Cin);
          transpose(w.data(), wt.get(), Cin, K2);
          gemm_acc(dp.get(), wt.get(), x.grad(), rows_in, K2, Cin);
        }
        if (w.requires_grad()) {
          auto xt = make_scratch<T>(Cin * rows_in);
          transpose(x.data(), xt.get(), rows_in, Cin);
          gemm_acc(xt.get(), dp.get(), w.grad(), Cin, rows_in, K2);
        }
      });
}

// ---------------------------------------------------------------------------
// global average pool [N,H,W,C] -> [N,C]

template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.ndim() != 4) throw ShapeError("global_avg_pool: expected 4-d input");
  const int64_t N = x.dim(0), HW = x.dim(1) * x.dim(2), C = x.dim(3);
  std::vector<T> out(N * C, T(0));
  const T* px = x.data();
  for (int64_t n = 0; n < N; ++n) {
    T* o = out.data() + n * C;
    for (int64_t p = 0; p < HW; ++p) {
      const T* xr = px + (n * HW + p) * C;
      for (int64_t c = 0; c < C; ++c) o[c] += xr[c];
    }
    for (int64_t c = 0; c < C; ++c) o[c] /= T(HW);
  }
  return make_op<T>({N, C}, std::move(out), {x},
                    [x, N, HW, C](detail::Node<T>& n) mutable {
                      if (!x.requires_grad()) return;
                      T* gx = x.grad();
                      const T* g = n.grad.data();
                      for (int64_t nn = 0; nn < N; ++nn)
                        for (int64_t p = 0; p < HW; ++p) {
                          T* gxr = gx + (nn * HW + p) * C;
                          const T* gr = g + nn * C;
                          for (int64_t c = 0; c < C; ++c) gxr[c] += gr[c] / T(HW);
                        }
                    });
}

// ---------------------------------------------------------------------------
// cross entropy with log-sum-exp stabilization; mean over the batch

template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2) throw ShapeError("cross_entropy: logits must be [N,K]");
  const int64_t N = logits.dim(0), K = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != N)
    throw ShapeError("cross_entropy: label count != batch size");
  for (int v : labels)
    if (v < 0 || v >= K)
      throw ConfigError("cross_entropy: label " + std::to_string(v) +
                        " out of range [0," + std::to_string(K) + ")");
  const T* pl = logits.data();
  T total = 0;
  for (int64_t r = 0; r < N; ++r) {
    const T* row = pl + r * K;
    T m = row[0];
    for (int64_t k = 1; k < K; ++k) m = std::max(m, row[k]);
    T s = 0;
    for (int64_t k = 0; k < K; ++k) s += std::exp(row[k] - m);
    total += m + std::log(s) - row[labels[static_cast<size_t>(r)]];
  }
  std::vector<T> out{total / T(N)};
  return make_op<T>({1}, std::move(out), {logits},
                    [logits, labels, N, K](detail::Node<T>& n) mutable {
                      if (!logits.requires_grad()) return;
                      const T g = n.grad[0] / T(N);
                      T* gl = logits.grad();
                      const T* pl2 = logits.data();
                      for (int64_t r = 0; r < N; ++r) {
                        const T* row = pl2 + r * K;
                        T m = row[0];
                        for (int64_t k = 1; k < K; ++k) m = std::max(m, row[k]);
                        T s = 0;
                        for (int64_t k = 0; k < K; ++k) s += std::exp(row[k] - m);
                        for (int64_t k = 0; k < K; ++k) {
                          T p = std::exp(row[k] - m) / s;
                          gl[r * K + k] +=
                              g * (p - (labels[static_cast<size_t>(r)] == k ? T(1) : T(0)));
                        }
                      }
                    });
}

// ---------------------------------------------------------------------------
// reductions

template <class T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T s = 0;
  const T* px = x.data();
  for (int64_t i = 0; i < x.numel(); ++i) s += px[i];
  return make_op<T>({1}, {s}, {x}, [x](detail::Node<T>& n) mutable {
    if (!x.requires_grad()) return;
    T* gx = x.grad();
    const T g = n.grad[0];
    for (int64_t i = 0; i < x.numel(); ++i) gx[i] += g;
  });
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return scale(sum_all(x), T(1) / T(x.numel()));
}

// ---------------------------------------------------------------------------
// training-time quantization proxy: z + U(-0.5, 0.5), seeded per element

template <class T>
Tensor<T> add_uniform_noise(const Tensor<T>& z, uint64_t seed) {
  std::vector<T> out(z.numel());
  const T* pz = z.data();
  parallel_for((z.numel() + 4095) / 4096, [&](int64_t b0, int64_t b1) {
    const int64_t i0 = b0 * 4096, i1 = std::min<int64_t>(z.numel(), b1 * 4096);
    for (int64_t i = i0; i < i1; ++i) {
      const uint64_t r = splitmix64(seed + static_cast<uint64_t>(i));
      const double u = static_cast<double>(r >> 11) * 0x1.0p-53 - 0.5;
      out[i] = pz[i] + static_cast<T>(u);
    }
  });
  return make_op<T>(z.shape(), std::move(out), {z},
                    [z](detail::Node<T>& n) mutable {
                      if (!z.requires_grad()) return;
                      T* gz = z.grad();
                      const T* g = n.grad.data();
                      for (int64_t i = 0; i < n.numel(); ++i) gz[i] += g[i];
                    });
}

// ---------------------------------------------------------------------------
// optimizer

inline double cosine_lr(int epoch, int total_epochs, double lr0) {
  if (lr0 <= 0) throw ConfigError("cosine_lr: lr0 must be > 0");
  if (total_epochs <= 0) throw ConfigError("cosine_lr: total_epochs must be > 0");
  const double t = static_cast<double>(epoch) / static_cast<double>(total_epochs);
  return lr0 * 0.5 * (1.0 + std::cos(3.141592653589793 * t));
}

// SGD with classical momentum and decoupled-from-nothing weight decay
// (decay folds into the gradient, as in the usual momentum formulation).
template <class T>
class SgdOptimizer {
public:
  SgdOptimizer(ParamList<T> params, double momentum = 0.0, double weight_decay = 0.0)
      : params_(std::move(params)), momentum_(momentum), wd_(weight_decay) {
    velocity_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i)
      velocity_[i].assign(static_cast<size_t>(params_[i].tensor.numel()), T(0));
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  void step(double lr) {
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& t = params_[i].tensor;
      if (!t.has_grad()) continue;
      T* p = t.data();
      const T* g = t.grad();
      T* v = velocity_[i].data();
      const T mu = static_cast<T>(momentum_), wd = static_cast<T>(wd_);
      const T lrT = static_cast<T>(lr);
      detail::for_chunks(t.numel(), [&](int64_t j0, int64_t j1) {
        for (int64_t j = j0; j < j1; ++j) {
          const T gj = g[j] + wd * p[j];
          v[j] = mu * v[j] + gj;
          p[j] -= lrT * v[j];
        }
      });
    }
  }

  const ParamList<T>& params() const { return params_; }

private:
  ParamList<T> params_;
  std::vector<std::vector<T>> velocity_;
  double momentum_, wd_;
};

// ---------------------------------------------------------------------------
// init helpers

template <class T>
void he_normal_init(Tensor<T>& w, int64_t fan_in, Rng& rng) {
  w.fill_normal(rng, std::sqrt(2.0 / static_cast<double>(fan_in)));
}

} // namespace vfc
