// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include "vfc/ops.hpp"

namespace vfc {

constexpr double kRateEpsilon = 0x1.0p-24; // floor on interval probability

// ---------------------------------------------------------------------------
// Fully factorized per-channel density: a monotone cumulative c(x) built from
// a chain of small affine stages with bounded tanh gating, filter widths
// (1,3,3,3,1). Matrices are softplus-reparameterized so c is non-decreasing;
// gates are tanh-reparameterized into (-1,1).

template <class T>
struct FactorizedDensity {
  static constexpr int kW = 3; // hidden width
  int channels = 0;
  Tensor<T> h0, b0, a0; // [C,3]  stage 1->3
  Tensor<T> h1, b1, a1; // [C,3,3],[C,3],[C,3]
  Tensor<T> h2, b2, a2;
  Tensor<T> h3, b3;     // [C,3],[C]  stage 3->1

  void init(int C, Rng& rng, double scale = 10.0) {
    channels = C;
    auto mk = [&](Shape s) {
      auto t = Tensor<T>::zeros(std::move(s));
      t.set_requires_grad();
      return t;
    };
    h0 = mk({C, kW});
    b0 = mk({C, kW});
    a0 = mk({C, kW});
    h1 = mk({C, kW, kW});
    b1 = mk({C, kW});
    a1 = mk({C, kW});
    h2 = mk({C, kW, kW});
    b2 = mk({C, kW});
    a2 = mk({C, kW});
    h3 = mk({C, kW});
    b3 = mk({C});
    // per-stage scale so the four matrices compose to a cumulative of the
    // requested overall width
    const double stage_scale = std::pow(scale, 1.0 / 4.0);
    const T init_hidden = static_cast<T>(std::log(std::expm1(1.0 / (stage_scale * kW))));
    const T init_last = static_cast<T>(std::log(std::expm1(1.0 / stage_scale)));
    for (auto* t : {&h0, &h1, &h2}) std::fill(t->vec().begin(), t->vec().end(), init_hidden);
    std::fill(h3.vec().begin(), h3.vec().end(), init_last);
    for (auto* t : {&b0, &b1, &b2}) t->fill_uniform(rng, -0.5, 0.5);
    b3.fill_uniform(rng, -0.5, 0.5);
    // gates start at zero: chain begins as a pure monotone affine stack
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + "stage1.matrix", h0});
    out.push_back({prefix + "stage1.bias", b0});
    out.push_back({prefix + "stage1.gate", a0});
    out.push_back({prefix + "stage2.matrix", h1});
    out.push_back({prefix + "stage2.bias", b1});
    out.push_back({prefix + "stage2.gate", a1});
    out.push_back({prefix + "stage3.matrix", h2});
    out.push_back({prefix + "stage3.bias", b2});
    out.push_back({prefix + "stage3.gate", a2});
    out.push_back({prefix + "stage4.matrix", h3});
    out.push_back({prefix + "stage4.bias", b3});
  }

  // --- double-precision evaluation (tables, rate estimates) ---

  struct DCache {
    int C = 0;
    std::vector<double> sh0, tb0, ta0, sh1, tb1, ta1, sh2, tb2, ta2, sh3, tb3;
  };

  DCache dcache() const {
    DCache c;
    c.C = channels;
    auto sp = [](double v) {
      return (v > 0 ? v : 0.0) + std::log1p(std::exp(-std::abs(v)));
    };
    auto fill = [&](const Tensor<T>& src, std::vector<double>& dst, bool softplus,
                    bool gate) {
      dst.resize(static_cast<size_t>(src.numel()));
      for (int64_t i = 0; i < src.numel(); ++i) {
        const double v = static_cast<double>(src.data()[i]);
        dst[static_cast<size_t>(i)] =
            softplus ? sp(v) : (gate ? detail::smooth_tanh(v) : v);
      }
    };
    fill(h0, c.sh0, true, false);
    fill(b0, c.tb0, false, false);
    fill(a0, c.ta0, false, true);
    fill(h1, c.sh1, true, false);
    fill(b1, c.tb1, false, false);
    fill(a1, c.ta1, false, true);
    fill(h2, c.sh2, true, false);
    fill(b2, c.tb2, false, false);
    fill(a2, c.ta2, false, true);
    fill(h3, c.sh3, true, false);
    fill(b3, c.tb3, false, false);
    return c;
  }

  static double logit_d(const DCache& c, int ch, double x) {
    const int W = kW;
    double v[kW], u[kW];
    for (int j = 0; j < W; ++j) {
      const double uu = c.sh0[static_cast<size_t>(ch * W + j)] * x +
                        c.tb0[static_cast<size_t>(ch * W + j)];
      v[j] = uu + c.ta0[static_cast<size_t>(ch * W + j)] * detail::smooth_tanh(uu);
    }
    for (const auto* stage : {&c.sh1, &c.sh2}) {
      const auto& sh = *stage;
      const auto& tb = (stage == &c.sh1) ? c.tb1 : c.tb2;
      const auto& ta = (stage == &c.sh1) ? c.ta1 : c.ta2;
      for (int i = 0; i < W; ++i) {
        double uu = tb[static_cast<size_t>(ch * W + i)];
        for (int j = 0; j < W; ++j)
          uu += sh[static_cast<size_t>((ch * W + i) * W + j)] * v[j];
        u[i] = uu;
      }
      for (int i = 0; i < W; ++i)
        v[i] = u[i] + ta[static_cast<size_t>(ch * W + i)] * detail::smooth_tanh(u[i]);
    }
    double out = c.tb3[static_cast<size_t>(ch)];
    for (int j = 0; j < W; ++j) out += c.sh3[static_cast<size_t>(ch * W + j)] * v[j];
    return out;
  }

  static double cdf_d(const DCache& c, int ch, double x) {
    return detail::smooth_sigmoid(logit_d(c, ch, x));
  }

  // interval probability of integer symbol s
  static double pmf_d(const DCache& c, int ch, double s) {
    return cdf_d(c, ch, s + 0.5) - cdf_d(c, ch, s - 0.5);
  }
};

// ---------------------------------------------------------------------------
// rate loss: total bits of the noise-proxy latent under the density,
// differentiable w.r.t. the latent and the density parameters

namespace detail {

// forward/backward of one chain evaluation in T precision; param layout
// mirrors FactorizedDensity::DCache but with T scalars
template <class T>
struct ChainCacheT {
  int C = 0;
  std::vector<T> sh0, tb0, ta0, sh1, tb1, ta1, sh2, tb2, ta2, sh3, tb3;
  // raw values are needed to chain grads through the reparameterizations
};

template <class T>
ChainCacheT<T> make_chain_cache(const FactorizedDensity<T>& d) {
  ChainCacheT<T> c;
  c.C = d.channels;
  auto sp = [](T v) {
    return (v > T(0) ? v : T(0)) + std::log1p(std::exp(-std::abs(v)));
  };
  auto fill = [&](const Tensor<T>& src, std::vector<T>& dst, int mode) {
    dst.resize(static_cast<size_t>(src.numel()));
    for (int64_t i = 0; i < src.numel(); ++i) {
      const T v = src.data()[i];
      dst[static_cast<size_t>(i)] = mode == 0 ? v : (mode == 1 ? sp(v) : smooth_tanh(v));
    }
  };
  fill(d.h0, c.sh0, 1);
  fill(d.b0, c.tb0, 0);
  fill(d.a0, c.ta0, 2);
  fill(d.h1, c.sh1, 1);
  fill(d.b1, c.tb1, 0);
  fill(d.a1, c.ta1, 2);
  fill(d.h2, c.sh2, 1);
  fill(d.b2, c.tb2, 0);
  fill(d.a2, c.ta2, 2);
  fill(d.h3, c.sh3, 1);
  fill(d.b3, c.tb3, 0);
  return c;
}

// same layout used to accumulate grads w.r.t. the transformed parameters
template <class T>
struct ChainGrads {
  std::vector<T> sh0, tb0, ta0, sh1, tb1, ta1, sh2, tb2, ta2, sh3, tb3;
  void resize_like(const ChainCacheT<T>& c) {
    auto rz = [](std::vector<T>& v, size_t n) { v.assign(n, T(0)); };
    rz(sh0, c.sh0.size());
    rz(tb0, c.tb0.size());
    rz(ta0, c.ta0.size());
    rz(sh1, c.sh1.size());
    rz(tb1, c.tb1.size());
    rz(ta1, c.ta1.size());
    rz(sh2, c.sh2.size());
    rz(tb2, c.tb2.size());
    rz(ta2, c.ta2.size());
    rz(sh3, c.sh3.size());
    rz(tb3, c.tb3.size());
  }
};

template <class T>
inline T chain_logit_fwd(const ChainCacheT<T>& c, int ch, T x, T* u0, T* v0, T* u1,
                         T* v1, T* u2, T* v2) {
  constexpr int W = 3;
  for (int j = 0; j < W; ++j) {
    u0[j] = c.sh0[static_cast<size_t>(ch * W + j)] * x + c.tb0[static_cast<size_t>(ch * W + j)];
    v0[j] = u0[j] + c.ta0[static_cast<size_t>(ch * W + j)] * smooth_tanh(u0[j]);
  }
  for (int i = 0; i < W; ++i) {
    T uu = c.tb1[static_cast<size_t>(ch * W + i)];
    for (int j = 0; j < W; ++j)
      uu += c.sh1[static_cast<size_t>((ch * W + i) * W + j)] * v0[j];
    u1[i] = uu;
    v1[i] = uu + c.ta1[static_cast<size_t>(ch * W + i)] * smooth_tanh(uu);
  }
  for (int i = 0; i < W; ++i) {
    T uu = c.tb2[static_cast<size_t>(ch * W + i)];
    for (int j = 0; j < W; ++j)
      uu += c.sh2[static_cast<size_t>((ch * W + i) * W + j)] * v1[j];
    u2[i] = uu;
    v2[i] = uu + c.ta2[static_cast<size_t>(ch * W + i)] * smooth_tanh(uu);
  }
  T out = c.tb3[static_cast<size_t>(ch)];
  for (int j = 0; j < W; ++j) out += c.sh3[static_cast<size_t>(ch * W + j)] * v2[j];
  return out;
}

// backprop `go` through one evaluation; returns d logit / d x * go and
// accumulates transformed-parameter grads
template <class T>
inline T chain_logit_bwd(const ChainCacheT<T>& c, ChainGrads<T>& g, int ch, T x,
                         T go, const T* u0, const T* v0, const T* u1, const T* v1,
                         const T* u2, const T* v2) {
  constexpr int W = 3;
  T dv2[W];
  for (int j = 0; j < W; ++j) {
    g.sh3[static_cast<size_t>(ch * W + j)] += go * v2[j];
    dv2[j] = go * c.sh3[static_cast<size_t>(ch * W + j)];
  }
  g.tb3[static_cast<size_t>(ch)] += go;

  T dv1[W], du[W];
  for (int i = 0; i < W; ++i) {
    const size_t ci = static_cast<size_t>(ch * W + i);
    du[i] = dv2[i] * (T(1) + c.ta2[ci] * smooth_tanh_grad(u2[i]));
    g.ta2[ci] += dv2[i] * smooth_tanh(u2[i]);
    g.tb2[ci] += du[i];
  }
  for (int j = 0; j < W; ++j) {
    T s = 0;
    for (int i = 0; i < W; ++i) {
      const size_t cij = static_cast<size_t>((ch * W + i) * W + j);
      g.sh2[cij] += du[i] * v1[j];
      s += du[i] * c.sh2[cij];
    }
    dv1[j] = s;
  }

  T dv0[W];
  for (int i = 0; i < W; ++i) {
    const size_t ci = static_cast<size_t>(ch * W + i);
    du[i] = dv1[i] * (T(1) + c.ta1[ci] * smooth_tanh_grad(u1[i]));
    g.ta1[ci] += dv1[i] * smooth_tanh(u1[i]);
    g.tb1[ci] += du[i];
  }
  for (int j = 0; j < W; ++j) {
    T s = 0;
    for (int i = 0; i < W; ++i) {
      const size_t cij = static_cast<size_t>((ch * W + i) * W + j);
      g.sh1[cij] += du[i] * v0[j];
      s += du[i] * c.sh1[cij];
    }
    dv0[j] = s;
  }

  T dx = 0;
  for (int j = 0; j < W; ++j) {
    const size_t cj = static_cast<size_t>(ch * W + j);
    const T du0 = dv0[j] * (T(1) + c.ta0[cj] * smooth_tanh_grad(u0[j]));
    g.ta0[cj] += dv0[j] * smooth_tanh(u0[j]);
    g.tb0[cj] += du0;
    g.sh0[cj] += du0 * x;
    dx += du0 * c.sh0[cj];
  }
  return dx;
}

// map transformed-parameter grads back through softplus/tanh into tensors
template <class T>
inline void chain_grads_to_params(const ChainGrads<T>& g, const FactorizedDensity<T>& d) {
  auto sp_grad = [](T raw) {
    const T e = std::exp(-std::abs(raw));
    return raw >= T(0) ? T(1) / (T(1) + e) : e / (T(1) + e);
  };
  auto apply = [&](const Tensor<T>& t, const std::vector<T>& gt, int mode) {
    T* gp = t.grad();
    for (int64_t i = 0; i < t.numel(); ++i) {
      const size_t si = static_cast<size_t>(i);
      if (mode == 0)
        gp[i] += gt[si];
      else if (mode == 1)
        gp[i] += gt[si] * sp_grad(t.data()[i]);
      else
        gp[i] += gt[si] * smooth_tanh_grad(t.data()[i]);
    }
  };
  apply(d.h0, g.sh0, 1);
  apply(d.b0, g.tb0, 0);
  apply(d.a0, g.ta0, 2);
  apply(d.h1, g.sh1, 1);
  apply(d.b1, g.tb1, 0);
  apply(d.a1, g.ta1, 2);
  apply(d.h2, g.sh2, 1);
  apply(d.b2, g.tb2, 0);
  apply(d.a2, g.ta2, 2);
  apply(d.h3, g.sh3, 1);
  apply(d.b3, g.tb3, 0);
}

} // namespace detail

// Total bits sum -log2(c(z+0.5) - c(z-0.5) + floor) over all elements of the
// (noise-proxied) latent; differentiable w.r.t. z and the density parameters.
template <class T>
Tensor<T> rate_loss_bits(const Tensor<T>& zt, const FactorizedDensity<T>& den,
                         T eps_p = static_cast<T>(kRateEpsilon)) {
  if (zt.shape().back() != den.channels)
    throw ShapeError("rate_loss: latent channels " +
                     std::to_string(zt.shape().back()) + " != density channels " +
                     std::to_string(den.channels));
  const int C = den.channels;
  const int64_t rows = zt.numel() / C;
  auto cache = std::make_shared<detail::ChainCacheT<T>>(detail::make_chain_cache(den));

  const T* pz = zt.data();
  std::vector<T> per_channel(static_cast<size_t>(C), T(0));
  std::atomic<bool> bad{false};
  {
    T* acc = per_channel.data();
    parallel_for(C, [&](int64_t c0, int64_t c1) {
      T u0[3], v0[3], u1[3], v1[3], u2[3], v2[3];
      for (int64_t c = c0; c < c1; ++c) {
        T sum = 0;
        for (int64_t r = 0; r < rows; ++r) {
          const T x = pz[r * C + c];
          const T up = detail::smooth_sigmoid(detail::chain_logit_fwd(
              *cache, static_cast<int>(c), x + T(0.5), u0, v0, u1, v1, u2, v2));
          const T lo = detail::smooth_sigmoid(detail::chain_logit_fwd(
              *cache, static_cast<int>(c), x - T(0.5), u0, v0, u1, v1, u2, v2));
          T p = up - lo;
          if (!std::isfinite(static_cast<double>(p))) bad.store(true);
          if (p < eps_p) p = eps_p;
          sum -= std::log2(p);
        }
        acc[c] = sum;
      }
    });
  }
  if (bad.load()) throw NumericError("rate_loss: non-finite density value");
  T total = 0;
  for (T v : per_channel) total += v;

  std::vector<Tensor<T>> inputs{zt,     den.h0, den.b0, den.a0, den.h1, den.b1,
                                den.a1, den.h2, den.b2, den.a2, den.h3, den.b3};
  FactorizedDensity<T> dcopy = den; // shares tensor nodes
  return make_op_from<T>(
      {1}, {total}, inputs, [zt, dcopy, cache, rows, C, eps_p](detail::Node<T>& n) {
        const T go = n.grad[0];
        const T* pz = zt.data();
        const bool zgrad = zt.requires_grad();
        T* gz = zgrad ? zt.grad() : nullptr;
        const T ln2 = static_cast<T>(0.6931471805599453);

        std::vector<detail::ChainGrads<T>> tg(static_cast<size_t>(C));
        parallel_for(C, [&](int64_t c0, int64_t c1) {
          T u0[3], v0[3], u1[3], v1[3], u2[3], v2[3];
          for (int64_t c = c0; c < c1; ++c) {
            auto& g = tg[static_cast<size_t>(c)];
            g.resize_like(*cache);
            for (int64_t r = 0; r < rows; ++r) {
              const T x = pz[r * C + c];
              const T lu = detail::chain_logit_fwd(*cache, static_cast<int>(c),
                                                   x + T(0.5), u0, v0, u1, v1, u2, v2);
              const T up = detail::smooth_sigmoid(lu);
              T u0b[3], v0b[3], u1b[3], v1b[3], u2b[3], v2b[3];
              const T ll = detail::chain_logit_fwd(*cache, static_cast<int>(c),
                                                   x - T(0.5), u0b, v0b, u1b, v1b,
                                                   u2b, v2b);
              const T lo = detail::smooth_sigmoid(ll);
              const T p = up - lo;
              if (p < eps_p) continue; // clamped region: no gradient
              const T dbits_dp = -go / (p * ln2);
              const T dup = dbits_dp * detail::smooth_sigmoid_grad(lu);
              const T dlo = -dbits_dp * detail::smooth_sigmoid_grad(ll);
              T dx = detail::chain_logit_bwd(*cache, g, static_cast<int>(c),
                                             x + T(0.5), dup, u0, v0, u1, v1, u2, v2);
              dx += detail::chain_logit_bwd(*cache, g, static_cast<int>(c),
                                            x - T(0.5), dlo, u0b, v0b, u1b, v1b,
                                            u2b, v2b);
              if (zgrad) gz[r * C + c] += dx;
            }
          }
        });
        // reduce per-channel grads in channel order (channels own disjoint
        // parameter slices, so this is a plain copy-accumulate)
        detail::ChainGrads<T> total_g;
        total_g.resize_like(*cache);
        auto merge = [&](std::vector<T>& dst, auto member) {
          for (int64_t c = 0; c < C; ++c) {
            const auto& src = tg[static_cast<size_t>(c)].*member;
            const size_t per = src.size() / static_cast<size_t>(C);
            for (size_t i = 0; i < per; ++i) {
              const size_t k = static_cast<size_t>(c) * per + i;
              dst[k] += src[k];
            }
          }
        };
        merge(total_g.sh0, &detail::ChainGrads<T>::sh0);
        merge(total_g.tb0, &detail::ChainGrads<T>::tb0);
        merge(total_g.ta0, &detail::ChainGrads<T>::ta0);
        merge(total_g.sh1, &detail::ChainGrads<T>::sh1);
        merge(total_g.tb1, &detail::ChainGrads<T>::tb1);
        merge(total_g.ta1, &detail::ChainGrads<T>::ta1);
        merge(total_g.sh2, &detail::ChainGrads<T>::sh2);
        merge(total_g.tb2, &detail::ChainGrads<T>::tb2);
        merge(total_g.ta2, &detail::ChainGrads<T>::ta2);
        merge(total_g.sh3, &detail::ChainGrads<T>::sh3);
        merge(total_g.tb3, &detail::ChainGrads<T>::tb3);
        detail::chain_grads_to_params(total_g, dcopy);
      });
}

// Double-precision model bits for a (clamped) integer latent: the rate
// estimate compared against actually coded bytes.
inline double model_bits(const int32_t* symbols, size_t n, int channels,
                         const typename FactorizedDensity<float>::DCache& cache,
                         double eps_p = kRateEpsilon) {
  double total = 0;
  for (size_t i = 0; i < n; ++i) {
    const int ch = static_cast<int>(i % static_cast<size_t>(channels));
    double p = FactorizedDensity<float>::pmf_d(cache, ch, symbols[i]);
    if (p < eps_p) p = eps_p;
    total -= std::log2(p);
  }
  return total;
}

// ---------------------------------------------------------------------------
// quantization grid

struct QuantGrid {
  int s_min = -128, s_max = 127;
  int num_symbols() const { return s_max - s_min + 1; }
};

struct QuantResult {
  std::vector<int32_t> symbols; // flat, channel = index % C for NHWC latents
  int64_t clamped = 0;
};

// round-to-nearest, ties away from zero, then clamp into the grid
template <class T>
QuantResult quantize(const Tensor<T>& z, const QuantGrid& grid) {
  QuantResult q;
  q.symbols.resize(static_cast<size_t>(z.numel()));
  const T* pz = z.data();
  for (int64_t i = 0; i < z.numel(); ++i) {
    const double r = std::round(static_cast<double>(pz[i]));
    int32_t s = static_cast<int32_t>(r);
    if (s < grid.s_min) {
      s = grid.s_min;
      ++q.clamped;
    } else if (s > grid.s_max) {
      s = grid.s_max;
      ++q.clamped;
    }
    q.symbols[static_cast<size_t>(i)] = s;
  }
  return q;
}

inline Tensor<float> dequantize(const std::vector<int32_t>& symbols, Shape shape) {
  auto t = Tensor<float>::zeros(std::move(shape));
  if (static_cast<int64_t>(symbols.size()) != t.numel())
    throw ShapeError("dequantize: symbol count does not match shape");
  for (size_t i = 0; i < symbols.size(); ++i)
    t.data()[static_cast<int64_t>(i)] = static_cast<float>(symbols[i]);
  return t;
}

// ---------------------------------------------------------------------------
// integer CDF tables shared verbatim by encoder and decoder

struct EntropyTables {
  int precision = 16;
  QuantGrid grid;
  int channels = 0;
  std::vector<std::vector<uint32_t>> freq; // [C][S], sum = 2^precision, min 1
  std::vector<std::vector<uint32_t>> cum;  // [C][S+1]
  uint32_t checksum = 0;

  void build_cum() {
    cum.assign(freq.size(), {});
    for (size_t c = 0; c < freq.size(); ++c) {
      cum[c].resize(freq[c].size() + 1);
      cum[c][0] = 0;
      for (size_t s = 0; s < freq[c].size(); ++s) cum[c][s + 1] = cum[c][s] + freq[c][s];
    }
  }

  uint32_t compute_checksum() const {
    uint32_t h = 2166136261u; // FNV-1a
    auto mix = [&h](uint32_t v) {
      for (int i = 0; i < 4; ++i) {
        h ^= (v >> (8 * i)) & 0xffu;
        h *= 16777619u;
      }
    };
    mix(static_cast<uint32_t>(precision));
    mix(static_cast<uint32_t>(grid.s_min));
    mix(static_cast<uint32_t>(grid.s_max));
    mix(static_cast<uint32_t>(channels));
    for (const auto& f : freq)
      for (uint32_t v : f) mix(v);
    return h;
  }

  void finalize() {
    build_cum();
    checksum = compute_checksum();
  }
};

// Build integer tables from any cumulative density: evaluate interval masses,
// normalize over the grid, floor to integers, force a minimum of 1, and
// repair the sum deterministically by largest remainder.
template <class Cdf>
EntropyTables build_tables(Cdf&& cdf, int channels, QuantGrid grid = {},
                           int precision = 16) {
  const int S = grid.num_symbols();
  if (S < 1) throw ConfigError("build_tables: empty symbol grid");
  const int64_t target = int64_t(1) << precision;
  if (target < S)
    throw ConfigError("build_tables: precision " + std::to_string(precision) +
                      " cannot give every one of " + std::to_string(S) +
                      " symbols a nonzero frequency");
  EntropyTables t;
  t.precision = precision;
  t.grid = grid;
  t.channels = channels;
  t.freq.resize(static_cast<size_t>(channels));

  for (int c = 0; c < channels; ++c) {
    std::vector<double> p(static_cast<size_t>(S));
    double tot = 0;
    for (int s = 0; s < S; ++s) {
      const double x = static_cast<double>(grid.s_min + s);
      double v = cdf(c, x + 0.5) - cdf(c, x - 0.5);
      if (!(v > 0)) v = 0;
      p[static_cast<size_t>(s)] = v;
      tot += v;
    }
    std::vector<uint32_t> f(static_cast<size_t>(S));
    std::vector<double> rem(static_cast<size_t>(S));
    int64_t base_sum = 0;
    for (int s = 0; s < S; ++s) {
      const double q = tot > 0 ? p[static_cast<size_t>(s)] / tot : 1.0 / S;
      const double scaled = q * static_cast<double>(target);
      const double fl = std::floor(scaled);
      f[static_cast<size_t>(s)] = static_cast<uint32_t>(fl);
      rem[static_cast<size_t>(s)] = scaled - fl;
      base_sum += static_cast<int64_t>(fl);
    }
    int64_t deficit = target - base_sum;
    std::vector<int> order(static_cast<size_t>(S));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      const double ra = rem[static_cast<size_t>(a)], rb = rem[static_cast<size_t>(b)];
      return ra != rb ? ra > rb : a < b;
    });
    for (int64_t i = 0; i < deficit; ++i)
      f[static_cast<size_t>(order[static_cast<size_t>(i % S)])] += 1;
    // enforce min frequency 1, stealing from the current maximum
    for (int s = 0; s < S; ++s) {
      if (f[static_cast<size_t>(s)] > 0) continue;
      int big = 0;
      for (int j = 1; j < S; ++j)
        if (f[static_cast<size_t>(j)] > f[static_cast<size_t>(big)]) big = j;
      if (f[static_cast<size_t>(big)] <= 1)
        throw ConfigError("build_tables: cannot satisfy min frequency");
      f[static_cast<size_t>(big)] -= 1;
      f[static_cast<size_t>(s)] = 1;
    }
    t.freq[static_cast<size_t>(c)] = std::move(f);
  }
  t.finalize();
  return t;
}

inline EntropyTables build_tables(const FactorizedDensity<float>& den,
                                  QuantGrid grid = {}, int precision = 16) {
  auto cache = den.dcache();
  return build_tables(
      [&cache](int ch, double x) {
        return FactorizedDensity<float>::cdf_d(cache, ch, x);
      },
      den.channels, grid, precision);
}

// ---------------------------------------------------------------------------
// table serialization (inside the FWT1 model file)

inline void tables_to_entries(const EntropyTables& t, const std::string& prefix,
                              ParamList<float>& out) {
  auto meta = Tensor<float>::from(
      {4}, {static_cast<float>(t.precision), static_cast<float>(t.grid.s_min),
            static_cast<float>(t.grid.s_max), static_cast<float>(t.channels)});
  out.push_back({prefix + "meta", meta});
  auto freq = Tensor<float>::zeros({t.channels, t.grid.num_symbols()});
  for (int c = 0; c < t.channels; ++c)
    for (int s = 0; s < t.grid.num_symbols(); ++s)
      freq.data()[c * t.grid.num_symbols() + s] =
          static_cast<float>(t.freq[static_cast<size_t>(c)][static_cast<size_t>(s)]);
  out.push_back({prefix + "freq", freq});
}

inline EntropyTables tables_from_entries(const Tensor<float>& meta,
                                         const Tensor<float>& freq) {
  if (meta.numel() != 4) throw FormatError("entropy tables: bad meta entry");
  EntropyTables t;
  t.precision = static_cast<int>(meta.data()[0]);
  t.grid.s_min = static_cast<int>(meta.data()[1]);
  t.grid.s_max = static_cast<int>(meta.data()[2]);
  t.channels = static_cast<int>(meta.data()[3]);
  const int S = t.grid.num_symbols();
  if (freq.ndim() != 2 || freq.dim(0) != t.channels || freq.dim(1) != S)
    throw FormatError("entropy tables: frequency entry shape mismatch");
  t.freq.assign(static_cast<size_t>(t.channels), std::vector<uint32_t>(static_cast<size_t>(S)));
  for (int c = 0; c < t.channels; ++c)
    for (int s = 0; s < S; ++s)
      t.freq[static_cast<size_t>(c)][static_cast<size_t>(s)] =
          static_cast<uint32_t>(freq.data()[c * S + s]);
  const int64_t target = int64_t(1) << t.precision;
  for (const auto& f : t.freq) {
    int64_t sum = 0;
    for (uint32_t v : f) {
      if (v < 1) throw FormatError("entropy tables: zero frequency");
      sum += v;
    }
    if (sum != target) throw FormatError("entropy tables: frequencies do not sum to 2^precision");
  }
  t.finalize();
  return t;
}

} // namespace vfc
