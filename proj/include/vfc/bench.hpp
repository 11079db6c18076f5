// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vfc/dataset.hpp"
#include "vfc/model.hpp"

namespace vfc {

// ---------------------------------------------------------------------------
// rate-accuracy-complexity sample points

struct RACPoint {
  double lambda = 0;
  double bpp = 0;       // mean over the eval set, from real coded bytes
  double est_bpp = 0;   // density-model estimate on the same symbols
  double top1 = 0;      // percent
  TimingRecord timing;  // medians
  int config_k = 1;
  double clamp_rate = 0;
};

struct RACurve {
  std::string model_id;
  std::vector<RACPoint> points;
  std::vector<std::string> warnings;

  // ascending bpp; duplicate-bpp points merge keeping the best accuracy
  void normalize() {
    std::sort(points.begin(), points.end(),
              [](const RACPoint& a, const RACPoint& b) { return a.bpp < b.bpp; });
    std::vector<RACPoint> merged;
    for (const auto& p : points) {
      if (!merged.empty() && merged.back().bpp == p.bpp)
        merged.back().top1 = std::max(merged.back().top1, p.top1);
      else
        merged.push_back(p);
    }
    points = std::move(merged);
  }
};

inline std::vector<double> log_lambda_grid(double lmin, double lmax, int n) {
  if (n < 1) throw ConfigError("lambda grid needs at least one point");
  std::vector<double> g;
  if (n == 1) {
    g.push_back(lmin);
    return g;
  }
  const double a = std::log(lmin), b = std::log(lmax);
  for (int i = 0; i < n; ++i)
    g.push_back(std::exp(a + (b - a) * static_cast<double>(i) /
                                 static_cast<double>(n - 1)));
  return g;
}

namespace detail {

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace detail

// Median edge-pipeline timing decomposition over repeated single-image runs.
inline TimingRecord measure_latency(const SplitModel<float>& m,
                                    const Tensor<float>& image, int n_warmup = 10,
                                    int n_runs = 100, double lambda = 0.01) {
  std::vector<double> cls, comp, enc;
  for (int i = 0; i < n_warmup + n_runs; ++i) {
    auto r = edge_encode(m, image, lambda);
    if (i < n_warmup) continue;
    cls.push_back(r.timing.classifier_ms);
    comp.push_back(r.timing.compression_ms);
    enc.push_back(r.timing.encoding_ms);
  }
  TimingRecord t;
  t.classifier_ms = detail::median_of(cls);
  t.compression_ms = detail::median_of(comp);
  t.encoding_ms = detail::median_of(enc);
  return t;
}

// ---------------------------------------------------------------------------
// sweep: one full-eval-set pass per lambda with the real coder in the loop

struct SweepOptions {
  int64_t eval_limit = -1;  // -1: whole eval set
  int64_t batch = 64;
  int timing_images = 20;
  int timing_warmup = 3;
};

inline RACurve sweep(const SplitModel<float>& m, const Dataset& eval,
                     const std::vector<double>& lambda_grid,
                     const SweepOptions& opt = {}) {
  if (!m.has_tables) throw ConfigError("sweep needs entropy tables; train first");
  NoGradGuard ng;
  RACurve curve;
  curve.model_id = "config" + std::to_string(m.cfg.config_k);
  const int64_t n = opt.eval_limit < 0 ? eval.size()
                                       : std::min<int64_t>(opt.eval_limit, eval.size());
  if (n < 1) throw ConfigError("sweep: empty eval set");
  const double pixels =
      static_cast<double>(m.cfg.cls.image_hw) * static_cast<double>(m.cfg.cls.image_hw);
  auto dcache = m.density.dcache();
  const int64_t zc = m.ae.spec.beta;
  const int64_t zh = m.ae.spec.height / 2, zw = m.ae.spec.width / 2;
  const int64_t zlen = zc * zh * zw;

  for (double lambda : lambda_grid) {
    auto lemb = m.lambda_embedding(lambda);
    double sum_bits = 0, sum_est = 0;
    int64_t correct = 0, clamped = 0;
    for (int64_t at = 0; at < n; at += opt.batch) {
      std::vector<int64_t> idx;
      for (int64_t i = at; i < std::min(n, at + opt.batch); ++i) idx.push_back(i);
      auto f = forward_edge(m.classifier, m.sc, gather_images(eval, idx));
      auto z = m.ae.encode(f, lemb);
      auto q = quantize(z, m.grid);
      clamped += q.clamped;

      // per-image stream: encode, account bytes, decode, classify from the
      // decoded symbols
      std::vector<int32_t> decoded(static_cast<size_t>(idx.size()) *
                                   static_cast<size_t>(zlen));
      for (size_t i = 0; i < idx.size(); ++i) {
        std::vector<int32_t> sym(q.symbols.begin() + static_cast<int64_t>(i) * zlen,
                                 q.symbols.begin() + static_cast<int64_t>(i + 1) * zlen);
        auto stream = pack_bitstream(sym, zc, zh, zw,
                                     SplitModel<float>::snap_lambda(lambda),
                                     m.cfg.config_k, m.tables);
        auto bytes = stream.serialize();
        sum_bits += 8.0 * static_cast<double>(bytes.size());
        sum_est += model_bits(sym.data(), sym.size(), static_cast<int>(zc), dcache);
        auto u = unpack_bitstream(bytes.data(), bytes.size(), m.tables);
        std::copy(u.symbols.begin(), u.symbols.end(),
                  decoded.begin() + static_cast<int64_t>(i) * zlen);
      }
      auto zhat = dequantize(decoded, {static_cast<int64_t>(idx.size()), zh, zw, zc});
      auto logits = forward_cloud(m.classifier, m.sc, m.ae.decode(zhat, lemb));
      for (size_t r = 0; r < idx.size(); ++r) {
        const float* row =
            logits.data() + static_cast<int64_t>(r) * m.cfg.cls.num_classes;
        int best = 0;
        for (int k = 1; k < m.cfg.cls.num_classes; ++k)
          if (row[k] > row[best]) best = k;
        if (best == eval.labels[static_cast<size_t>(idx[r])]) ++correct;
      }
    }

    RACPoint p;
    p.lambda = lambda;
    p.config_k = m.cfg.config_k;
    p.bpp = sum_bits / (static_cast<double>(n) * pixels);
    p.est_bpp = sum_est / (static_cast<double>(n) * pixels);
    p.top1 = 100.0 * static_cast<double>(correct) / static_cast<double>(n);
    p.clamp_rate = static_cast<double>(clamped) /
                   (static_cast<double>(n) * static_cast<double>(zlen));
    {
      std::vector<double> cls, comp, enc;
      const int tn = static_cast<int>(std::min<int64_t>(opt.timing_images, n));
      for (int i = 0; i < opt.timing_warmup + tn; ++i) {
        auto img = gather_images(eval, {std::min<int64_t>(i % n, n - 1)});
        auto r = edge_encode(m, img, lambda);
        if (i < opt.timing_warmup) continue;
        cls.push_back(r.timing.classifier_ms);
        comp.push_back(r.timing.compression_ms);
        enc.push_back(r.timing.encoding_ms);
      }
      p.timing.classifier_ms = detail::median_of(cls);
      p.timing.compression_ms = detail::median_of(comp);
      p.timing.encoding_ms = detail::median_of(enc);
    }
    if (p.clamp_rate > 0.01) {
      char buf[128];
      std::snprintf(buf, sizeof(buf),
                    "clamp rate %.2f%% at lambda %.6g exceeds 1%%: model looks "
                    "untrained",
                    100.0 * p.clamp_rate, lambda);
      curve.warnings.push_back(buf);
    }
    curve.points.push_back(p);
  }
  curve.normalize();
  return curve;
}

// ---------------------------------------------------------------------------
// Spearman rank correlation (used for the lambda-vs-bpp control check)

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw ConfigError("spearman: need two equal-length series");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<size_t> order(v.size());
    for (size_t i = 0; i < v.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t x, size_t y) { return v[x] < v[y]; });
    std::vector<double> r(v.size());
    size_t i = 0;
    while (i < order.size()) {
      size_t j = i;
      while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
      for (size_t k = i; k <= j; ++k) r[order[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  auto ra = ranks(a), rb = ranks(b);
  double ma = 0, mb = 0;
  for (size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= static_cast<double>(ra.size());
  mb /= static_cast<double>(rb.size());
  double num = 0, da = 0, db = 0;
  for (size_t i = 0; i < ra.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    da += (ra[i] - ma) * (ra[i] - ma);
    db += (rb[i] - mb) * (rb[i] - mb);
  }
  return num / std::sqrt(da * db);
}

// ---------------------------------------------------------------------------
// Delta-accuracy: BD-style mean vertical gap between two curves over their
// shared log10(bpp) interval, using monotone piecewise-cubic interpolation.

namespace detail {

struct Pchip {
  std::vector<double> x, y, d; // knots and endpoint-safe monotone slopes

  static Pchip build(const std::vector<double>& xs, const std::vector<double>& ys) {
    const size_t n = xs.size();
    Pchip p;
    p.x = xs;
    p.y = ys;
    p.d.assign(n, 0.0);
    if (n < 2) throw ConfigError("interpolation needs >= 2 points");
    std::vector<double> h(n - 1), s(n - 1);
    for (size_t i = 0; i + 1 < n; ++i) {
      h[i] = xs[i + 1] - xs[i];
      if (h[i] <= 0) throw ConfigError("interpolation abscissae must increase");
      s[i] = (ys[i + 1] - ys[i]) / h[i];
    }
    if (n == 2) {
      p.d[0] = p.d[1] = s[0];
      return p;
    }
    for (size_t i = 1; i + 1 < n; ++i) {
      if (s[i - 1] * s[i] <= 0) {
        p.d[i] = 0;
      } else {
        const double w1 = 2 * h[i] + h[i - 1];
        const double w2 = h[i] + 2 * h[i - 1];
        p.d[i] = (w1 + w2) / (w1 / s[i - 1] + w2 / s[i]);
      }
    }
    auto endpoint = [](double h0, double h1, double s0, double s1) {
      double d = ((2 * h0 + h1) * s0 - h0 * s1) / (h0 + h1);
      if (d * s0 <= 0)
        d = 0;
      else if (s0 * s1 < 0 && std::abs(d) > 3 * std::abs(s0))
        d = 3 * s0;
      return d;
    };
    p.d[0] = endpoint(h[0], h[1], s[0], s[1]);
    p.d[n - 1] = endpoint(h[n - 2], h[n - 3], s[n - 2], s[n - 3]);
    return p;
  }

  double eval(double xq) const {
    // clamped to the knot span by construction of the callers
    size_t i = 0;
    while (i + 2 < x.size() && xq > x[i + 1]) ++i;
    const double h = x[i + 1] - x[i];
    const double t = (xq - x[i]) / h;
    const double t2 = t * t, t3 = t2 * t;
    return y[i] * (2 * t3 - 3 * t2 + 1) + h * d[i] * (t3 - 2 * t2 + t) +
           y[i + 1] * (-2 * t3 + 3 * t2) + h * d[i + 1] * (t3 - t2);
  }

  // exact integral over [a, b] (piecewise Simpson; exact for cubics)
  double integral(double a, double b) const {
    double total = 0;
    for (size_t i = 0; i + 1 < x.size(); ++i) {
      const double lo = std::max(a, x[i]);
      const double hi = std::min(b, x[i + 1]);
      if (hi <= lo) continue;
      const double mid = 0.5 * (lo + hi);
      total += (hi - lo) / 6.0 * (eval(lo) + 4.0 * eval(mid) + eval(hi));
    }
    return total;
  }
};

inline Pchip curve_interpolant(const RACurve& c) {
  std::vector<double> xs, ys;
  for (const auto& p : c.points) {
    if (p.bpp <= 0) throw ConfigError("delta_accuracy: nonpositive bpp point");
    xs.push_back(std::log10(p.bpp));
    ys.push_back(p.top1);
  }
  return Pchip::build(xs, ys);
}

} // namespace detail

// Positive when curve A sits above curve B on their shared rate interval.
// Exactly antisymmetric: the two means are computed independently and
// subtracted.
inline double delta_accuracy(const RACurve& a, const RACurve& b) {
  if (a.points.size() < 2 || b.points.size() < 2)
    throw ConfigError("delta_accuracy: curves need >= 2 points");
  auto pa = detail::curve_interpolant(a);
  auto pb = detail::curve_interpolant(b);
  const double lo = std::max(pa.x.front(), pb.x.front());
  const double hi = std::min(pa.x.back(), pb.x.back());
  if (!(lo < hi)) throw ConfigError("delta_accuracy: disjoint rate ranges");
  const double mean_a = pa.integral(lo, hi) / (hi - lo);
  const double mean_b = pb.integral(lo, hi) / (hi - lo);
  return mean_a - mean_b;
}

// ---------------------------------------------------------------------------
// reports: CSV is the machine interface, SVG is presentation-only

inline std::string curve_csv(const std::vector<RACurve>& curves) {
  std::string out = "config_k,lambda,bpp,top1,classifier_ms,compression_ms,encoding_ms\n";
  char buf[256];
  for (const auto& c : curves)
    for (const auto& p : c.points) {
      std::snprintf(buf, sizeof(buf), "%d,%.8g,%.8g,%.4f,%.4f,%.4f,%.4f\n",
                    p.config_k, p.lambda, p.bpp, p.top1, p.timing.classifier_ms,
                    p.timing.compression_ms, p.timing.encoding_ms);
      out += buf;
    }
  return out;
}

// Parse a curve back from report CSV (used by the `bd` subcommand).
inline RACurve curve_from_csv(std::istream& is, const std::string& id) {
  RACurve c;
  c.model_id = id;
  std::string line;
  if (!std::getline(is, line)) throw FormatError("empty curve CSV");
  std::vector<std::string> cols;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cols.push_back(cell);
  }
  auto col_of = [&cols](const std::string& name) {
    for (size_t i = 0; i < cols.size(); ++i)
      if (cols[i] == name) return static_cast<int>(i);
    throw FormatError("curve CSV missing column " + name);
  };
  const int ck = col_of("config_k"), cl = col_of("lambda"), cb = col_of("bpp"),
            ct = col_of("top1");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> vals;
    while (std::getline(ss, cell, ',')) vals.push_back(cell);
    RACPoint p;
    p.config_k = std::stoi(vals[static_cast<size_t>(ck)]);
    p.lambda = std::stod(vals[static_cast<size_t>(cl)]);
    p.bpp = std::stod(vals[static_cast<size_t>(cb)]);
    p.top1 = std::stod(vals[static_cast<size_t>(ct)]);
    c.points.push_back(p);
  }
  c.normalize();
  return c;
}

inline RACurve curve_from_csv_file(const std::string& path, const std::string& id) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open curve CSV: " + path);
  return curve_from_csv(is, id);
}

namespace detail {

inline std::string svg_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '&') o += "&amp;";
    else if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else o += c;
  }
  return o;
}

struct SvgPlot {
  std::ostringstream body;
  double w = 640, h = 440, ml = 64, mr = 24, mt = 28, mb = 48;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;

  double px(double x) const { return ml + (x - x0) / (x1 - x0) * (w - ml - mr); }
  double py(double y) const { return h - mb - (y - y0) / (y1 - y0) * (h - mt - mb); }

  void frame(const std::string& title, const std::string& xlabel,
             const std::string& ylabel) {
    body << "<rect x=\"0\" y=\"0\" width=\"" << w << "\" height=\"" << h
         << "\" fill=\"white\"/>\n";
    body << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr
         << "\" y2=\"" << h - mb << "\" stroke=\"black\"/>\n";
    body << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
         << "\" y2=\"" << h - mb << "\" stroke=\"black\"/>\n";
    body << "<text x=\"" << w / 2 << "\" y=\"" << mt - 8
         << "\" text-anchor=\"middle\" font-size=\"14\">" << svg_escape(title)
         << "</text>\n";
    body << "<text x=\"" << w / 2 << "\" y=\"" << h - 10
         << "\" text-anchor=\"middle\" font-size=\"12\">" << svg_escape(xlabel)
         << "</text>\n";
    body << "<text x=\"14\" y=\"" << h / 2
         << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 "
         << h / 2 << ")\">" << svg_escape(ylabel) << "</text>\n";
    for (int i = 0; i <= 5; ++i) {
      const double fx = x0 + (x1 - x0) * i / 5.0;
      const double fy = y0 + (y1 - y0) * i / 5.0;
      char bx[64], by[64];
      std::snprintf(bx, sizeof(bx), "%.3g", fx);
      std::snprintf(by, sizeof(by), "%.3g", fy);
      body << "<text x=\"" << px(fx) << "\" y=\"" << h - mb + 16
           << "\" text-anchor=\"middle\" font-size=\"10\">" << bx << "</text>\n";
      body << "<text x=\"" << ml - 6 << "\" y=\"" << py(fy) + 3
           << "\" text-anchor=\"end\" font-size=\"10\">" << by << "</text>\n";
    }
  }

  std::string finish() const {
    std::ostringstream out;
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w
        << "\" height=\"" << h << "\" viewBox=\"0 0 " << w << " " << h << "\">\n"
        << body.str() << "</svg>\n";
    return out.str();
  }
};

inline const char* plot_color(size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c",
                                 "#9467bd", "#ff7f0e", "#8c564b"};
  return colors[i % 6];
}

} // namespace detail

// accuracy vs bpp (log10 x-axis), one polyline per curve
inline std::string rate_accuracy_svg(const std::vector<RACurve>& curves) {
  detail::SvgPlot plot;
  double xmin = 1e300, xmax = -1e300, ymin = 100, ymax = 0;
  for (const auto& c : curves)
    for (const auto& p : c.points) {
      xmin = std::min(xmin, std::log10(p.bpp));
      xmax = std::max(xmax, std::log10(p.bpp));
      ymin = std::min(ymin, p.top1);
      ymax = std::max(ymax, p.top1);
    }
  if (xmax <= xmin) xmax = xmin + 1;
  if (ymax <= ymin) ymax = ymin + 1;
  plot.x0 = xmin - 0.05 * (xmax - xmin);
  plot.x1 = xmax + 0.05 * (xmax - xmin);
  plot.y0 = ymin - 0.05 * (ymax - ymin);
  plot.y1 = ymax + 0.05 * (ymax - ymin);
  plot.frame("Rate-accuracy", "log10 bpp", "Top-1 accuracy (%)");
  size_t ci = 0;
  for (const auto& c : curves) {
    const char* color = detail::plot_color(ci);
    plot.body << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
    for (const auto& p : c.points)
      plot.body << plot.px(std::log10(p.bpp)) << "," << plot.py(p.top1) << " ";
    plot.body << "\"/>\n";
    for (const auto& p : c.points)
      plot.body << "<circle cx=\"" << plot.px(std::log10(p.bpp)) << "\" cy=\""
                << plot.py(p.top1) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    plot.body << "<text x=\"" << plot.w - plot.mr - 6 << "\" y=\""
              << plot.mt + 16 + 16 * static_cast<double>(ci)
              << "\" text-anchor=\"end\" font-size=\"11\" fill=\"" << color << "\">"
              << detail::svg_escape(c.model_id) << "</text>\n";
    ++ci;
  }
  return plot.finish();
}

// delta-accuracy (vs the first curve) against median encoding latency
inline std::string delta_latency_svg(const std::vector<RACurve>& curves) {
  if (curves.size() < 1) throw ConfigError("need at least one curve");
  detail::SvgPlot plot;
  struct Pt {
    double lat, delta;
    std::string id;
  };
  std::vector<Pt> pts;
  for (const auto& c : curves) {
    std::vector<double> enc;
    for (const auto& p : c.points) enc.push_back(p.timing.encoding_ms);
    const double lat = detail::median_of(enc);
    const double delta = (&c == &curves[0]) ? 0.0 : delta_accuracy(c, curves[0]);
    pts.push_back({lat, delta, c.model_id});
  }
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& p : pts) {
    xmin = std::min(xmin, p.lat);
    xmax = std::max(xmax, p.lat);
    ymin = std::min(ymin, p.delta);
    ymax = std::max(ymax, p.delta);
  }
  if (xmax <= xmin) xmax = xmin + 1;
  if (ymax <= ymin) ymax = ymin + 1;
  plot.x0 = xmin - 0.1 * (xmax - xmin);
  plot.x1 = xmax + 0.1 * (xmax - xmin);
  plot.y0 = ymin - 0.1 * (ymax - ymin);
  plot.y1 = ymax + 0.1 * (ymax - ymin);
  plot.frame("Delta-accuracy vs encoding latency", "median encoding latency (ms)",
             "Delta-accuracy (%)");
  size_t ci = 0;
  for (const auto& p : pts) {
    const char* color = detail::plot_color(ci++);
    plot.body << "<circle cx=\"" << plot.px(p.lat) << "\" cy=\"" << plot.py(p.delta)
              << "\" r=\"5\" fill=\"" << color << "\"/>\n";
    plot.body << "<text x=\"" << plot.px(p.lat) + 8 << "\" y=\"" << plot.py(p.delta)
              << "\" font-size=\"11\">" << detail::svg_escape(p.id) << "</text>\n";
  }
  return plot.finish();
}

// Table-shaped summary: Delta-accuracy (vs the first curve) plus latency
// decomposition, one column per configuration.
inline std::string summary_table(const std::vector<RACurve>& curves) {
  std::ostringstream os;
  char buf[96];
  os << "Metric                 ";
  for (const auto& c : curves) {
    std::snprintf(buf, sizeof(buf), " %12s", c.model_id.c_str());
    os << buf;
  }
  os << "\n";
  auto row = [&](const std::string& name, auto getter) {
    std::snprintf(buf, sizeof(buf), "%-23s", name.c_str());
    os << buf;
    for (const auto& c : curves) {
      std::snprintf(buf, sizeof(buf), " %12.3f", getter(c));
      os << buf;
    }
    os << "\n";
  };
  row("Delta-Acc. (%)", [&](const RACurve& c) {
    return (&c == &curves[0]) ? 0.0 : delta_accuracy(c, curves[0]);
  });
  row("Classifier Latency (ms)", [](const RACurve& c) {
    std::vector<double> v;
    for (const auto& p : c.points) v.push_back(p.timing.classifier_ms);
    return detail::median_of(v);
  });
  row("Compression Time (ms)", [](const RACurve& c) {
    std::vector<double> v;
    for (const auto& p : c.points) v.push_back(p.timing.compression_ms);
    return detail::median_of(v);
  });
  row("Encoding Latency (ms)", [](const RACurve& c) {
    std::vector<double> v;
    for (const auto& p : c.points) v.push_back(p.timing.encoding_ms);
    return detail::median_of(v);
  });
  return os.str();
}

inline void write_report(const std::string& out_dir, const std::vector<RACurve>& curves) {
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream os(out_dir + "/report.csv", std::ios::binary);
    os << curve_csv(curves);
  }
  {
    std::ofstream os(out_dir + "/rate_accuracy.svg", std::ios::binary);
    os << rate_accuracy_svg(curves);
  }
  {
    std::ofstream os(out_dir + "/delta_latency.svg", std::ios::binary);
    os << delta_latency_svg(curves);
  }
  {
    std::ofstream os(out_dir + "/summary.txt", std::ios::binary);
    os << summary_table(curves);
  }
}

} // namespace vfc
