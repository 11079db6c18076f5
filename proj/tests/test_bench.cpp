// SPDX-License-Identifier: Apache-2.0
#include <sstream>

#include "doctest.h"
#include "vfc/bench.hpp"

using vfc::RACPoint;
using vfc::RACurve;

namespace {

RACurve curve_of(std::vector<std::pair<double, double>> pts, const std::string& id) {
  RACurve c;
  c.model_id = id;
  for (auto& [bpp, top1] : pts) {
    RACPoint p;
    p.bpp = bpp;
    p.top1 = top1;
    c.points.push_back(p);
  }
  c.normalize();
  return c;
}

// independent dense-integration oracle over the same interpolants
double delta_oracle(const RACurve& a, const RACurve& b, int samples = 2000000) {
  auto pa = vfc::detail::curve_interpolant(a);
  auto pb = vfc::detail::curve_interpolant(b);
  const double lo = std::max(pa.x.front(), pb.x.front());
  const double hi = std::min(pa.x.back(), pb.x.back());
  double acc = 0;
  for (int i = 0; i <= samples; ++i) {
    const double x = lo + (hi - lo) * static_cast<double>(i) / samples;
    const double w = (i == 0 || i == samples) ? 0.5 : 1.0;
    acc += w * (pa.eval(x) - pb.eval(x));
  }
  return acc / samples;
}

// tiny well-formedness scanner: tags balance, attributes quoted
bool xml_well_formed(const std::string& s) {
  std::vector<std::string> stack;
  size_t i = 0;
  if (s.rfind("<?xml", 0) == 0) i = s.find("?>") + 2;
  while (i < s.size()) {
    const size_t open = s.find('<', i);
    if (open == std::string::npos) break;
    const size_t close = s.find('>', open);
    if (close == std::string::npos) return false;
    std::string tag = s.substr(open + 1, close - open - 1);
    i = close + 1;
    if (tag.empty()) return false;
    if (tag[0] == '/') {
      if (stack.empty()) return false;
      if (stack.back() != tag.substr(1)) return false;
      stack.pop_back();
      continue;
    }
    const bool selfclose = tag.back() == '/';
    if (selfclose) tag.pop_back();
    std::string name = tag.substr(0, tag.find_first_of(" \t\n"));
    // quotes must pair up
    if (std::count(tag.begin(), tag.end(), '"') % 2) return false;
    if (!selfclose) stack.push_back(name);
  }
  return stack.empty();
}

} // namespace

TEST_SUITE("bench") {

TEST_CASE("log lambda grid endpoints and size") {
  auto g = vfc::log_lambda_grid(0.0001, 5.12, 12);
  REQUIRE(g.size() == 12);
  CHECK(g.front() == doctest::Approx(0.0001));
  CHECK(g.back() == doctest::Approx(5.12));
  for (size_t i = 1; i < g.size(); ++i) CHECK(g[i] > g[i - 1]);
  CHECK(vfc::log_lambda_grid(0.01, 5.12, 1).size() == 1);
}

TEST_CASE("delta_accuracy exact cases") {
  auto a = curve_of({{0.05, 70}, {0.2, 80}, {0.8, 90}}, "a");
  CHECK(vfc::delta_accuracy(a, a) == 0.0);

  auto b = curve_of({{0.05, 71}, {0.2, 81}, {0.8, 91}}, "b");
  CHECK(vfc::delta_accuracy(b, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(vfc::delta_accuracy(a, b) == -vfc::delta_accuracy(b, a)); // exact

  auto c = curve_of({{10.0, 50}, {20.0, 60}}, "c");
  CHECK_THROWS_AS(vfc::delta_accuracy(a, c), vfc::ConfigError);
  auto single = curve_of({{0.1, 50}}, "s");
  CHECK_THROWS_AS(vfc::delta_accuracy(a, single), vfc::ConfigError);
}

TEST_CASE("delta_accuracy matches a dense numerical-integration oracle") {
  vfc::Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    auto mk = [&](int npts) {
      std::vector<std::pair<double, double>> pts;
      double bpp = std::exp(rng.uniform(std::log(0.01), std::log(0.05)));
      double acc = rng.uniform(40.0, 60.0);
      for (int i = 0; i < npts; ++i) {
        pts.push_back({bpp, acc});
        bpp *= rng.uniform(1.8, 4.0);
        acc += rng.uniform(0.0, 15.0);
        if (acc > 99) acc = 99;
      }
      return pts;
    };
    auto a = curve_of(mk(3 + static_cast<int>(rng.uniform_int(3))), "a");
    auto b = curve_of(mk(3 + static_cast<int>(rng.uniform_int(3))), "b");
    const double got = vfc::delta_accuracy(a, b);
    const double want = delta_oracle(a, b);
    CHECK(std::abs(got - want) < 1e-6);
    CHECK(vfc::delta_accuracy(b, a) == -got);
  }
}

TEST_CASE("pchip interpolation is monotone between monotone knots") {
  auto a = curve_of({{0.05, 60}, {0.1, 75}, {0.4, 76}, {1.5, 92}}, "a");
  auto p = vfc::detail::curve_interpolant(a);
  double prev = -1e9;
  for (int i = 0; i <= 500; ++i) {
    const double x = p.x.front() + (p.x.back() - p.x.front()) * i / 500.0;
    const double y = p.eval(x);
    CHECK(y >= prev - 1e-9);
    prev = y;
  }
  // knots are reproduced
  for (size_t i = 0; i < p.x.size(); ++i)
    CHECK(p.eval(p.x[i]) == doctest::Approx(p.y[i]).epsilon(1e-12));
}

TEST_CASE("spearman rank correlation") {
  CHECK(vfc::spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
  CHECK(vfc::spearman({1, 2, 3, 4}, {9, 7, 5, 3}) == doctest::Approx(-1.0));
  CHECK(std::abs(vfc::spearman({1, 2, 3, 4, 5, 6, 7, 8},
                               {2, 1, 4, 3, 6, 5, 8, 7})) < 1.0);
}

TEST_CASE("CSV round-trip and row counts") {
  auto a = curve_of({{0.05, 70}, {0.2, 80}, {0.8, 90}}, "config1");
  auto b = curve_of({{0.06, 72}, {0.3, 83}}, "config2");
  auto csv = vfc::curve_csv({a, b});
  // header + one row per point
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 3 + 2);

  std::istringstream is(vfc::curve_csv({a}));
  auto back = vfc::curve_from_csv(is, "x");
  REQUIRE(back.points.size() == 3);
  CHECK(back.points[1].bpp == doctest::Approx(0.2));
  CHECK(back.points[1].top1 == doctest::Approx(80));
}

TEST_CASE("SVG reports are well-formed XML") {
  auto a = curve_of({{0.05, 70}, {0.2, 80}, {0.8, 90}}, "config1");
  auto b = curve_of({{0.06, 72}, {0.3, 83}, {0.9, 93}}, "config2");
  for (auto& p : const_cast<std::vector<RACPoint>&>(a.points))
    p.timing = {1.0, 2.0, 3.5};
  for (auto& p : const_cast<std::vector<RACPoint>&>(b.points))
    p.timing = {1.5, 2.1, 4.0};
  auto svg1 = vfc::rate_accuracy_svg({a, b});
  auto svg2 = vfc::delta_latency_svg({a, b});
  CHECK(xml_well_formed(svg1));
  CHECK(xml_well_formed(svg2));
  CHECK(svg1.find("<svg") != std::string::npos);

  auto table = vfc::summary_table({a, b});
  CHECK(table.find("Delta-Acc.") != std::string::npos);
  CHECK(table.find("Classifier Latency") != std::string::npos);
  CHECK(table.find("Compression Time") != std::string::npos);
  CHECK(table.find("Encoding Latency") != std::string::npos);
}

TEST_CASE("sweep on an untrained tiny model: shapes, determinism, warning") {
  vfc::ModelConfig mc;
  mc.cls = vfc::ClassifierSpec{3, 32, 8, {{2, 8, 1}, {2, 16, 2}}};
  mc.bottleneck_total = 512;
  auto m = vfc::SplitModel<float>::make(mc, 21);
  m.rebuild_tables();
  auto eval = vfc::make_synthetic_dataset(32, 4, 9);

  auto grid = vfc::log_lambda_grid(0.0001, 5.12, 3);
  vfc::SweepOptions opt;
  opt.eval_limit = 32;
  opt.timing_images = 2;
  opt.timing_warmup = 1;
  // untrained conditioning is inert, so identical-bpp points may merge
  auto c1 = vfc::sweep(m, eval, grid, opt);
  REQUIRE(c1.points.size() >= 1);
  REQUIRE(c1.points.size() <= 3);
  for (const auto& p : c1.points) {
    CHECK(p.bpp > 0);
    CHECK(p.top1 >= 0);
    CHECK(p.top1 <= 100);
  }
  auto single = vfc::sweep(m, eval, {0.01}, opt);
  CHECK(single.points.size() == 1);

  // determinism of the data columns (timings are wall-clock and excluded)
  auto c2 = vfc::sweep(m, eval, grid, opt);
  REQUIRE(c2.points.size() == c1.points.size());
  for (size_t i = 0; i < c1.points.size(); ++i) {
    CHECK(c1.points[i].bpp == c2.points[i].bpp);
    CHECK(c1.points[i].top1 == c2.points[i].top1);
    CHECK(c1.points[i].est_bpp == c2.points[i].est_bpp);
  }
}

} // TEST_SUITE
