// SPDX-License-Identifier: Apache-2.0
#include <sstream>

#include "doctest.h"
#include "vfc/model.hpp"
#include "vfc/dataset.hpp"

using vfc::Tensor;

TEST_SUITE("serial") {

TEST_CASE("FWT1 round-trip is bit-exact") {
  vfc::Rng rng(1);
  vfc::ParamList<float> entries;
  for (int i = 0; i < 12; ++i) {
    vfc::Shape shape;
    const int nd = 1 + static_cast<int>(rng.uniform_int(4));
    for (int d = 0; d < nd; ++d) shape.push_back(1 + static_cast<int64_t>(rng.uniform_int(7)));
    auto t = Tensor<float>::zeros(shape);
    t.fill_normal(rng, 10.0);
    // exercise non-finite-free but extreme values too
    if (i == 0) t.data()[0] = 1e-38f;
    entries.push_back({"mod" + std::to_string(i / 3) + ".t" + std::to_string(i), t});
  }
  std::stringstream ss;
  vfc::save_fwt(ss, entries);
  const std::string first = ss.str();
  auto loaded = vfc::load_fwt(ss);
  REQUIRE(loaded.size() == entries.size());
  for (size_t i = 0; i < entries.size(); ++i) {
    CHECK(loaded[i].name == entries[i].name);
    REQUIRE(loaded[i].tensor.shape() == entries[i].tensor.shape());
    const auto& a = entries[i].tensor.vec();
    const auto& b = loaded[i].tensor.vec();
    for (size_t j = 0; j < a.size(); ++j)
      REQUIRE(std::memcmp(&a[j], &b[j], 4) == 0); // bit-exact
  }
  // re-serialize: byte identical
  std::stringstream ss2;
  vfc::save_fwt(ss2, loaded);
  CHECK(ss2.str() == first);
}

TEST_CASE("FWT1 rejects bad magic and unknown dtype") {
  std::stringstream ss;
  ss << "NOPE";
  CHECK_THROWS_AS(vfc::load_fwt(ss), vfc::FormatError);
}

} // TEST_SUITE

TEST_SUITE("model") {

TEST_CASE("model save/load round-trips parameters and tables") {
  vfc::ModelConfig mc;
  mc.cls = vfc::ClassifierSpec{3, 32, 8, {{2, 8, 1}, {2, 16, 2}}};
  mc.bottleneck_total = 512;
  auto m = vfc::SplitModel<float>::make(mc, 42);
  m.rebuild_tables();

  const std::string path = "test_model.fwt";
  vfc::save_model(path, m);
  auto l = vfc::load_model(path);
  std::remove(path.c_str());

  CHECK(l.cfg.config_k == mc.config_k);
  CHECK(l.cfg.bottleneck_total == 512);
  auto pa = m.parameters();
  auto pb = l.parameters();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i].name == pb[i].name);
    const auto& a = pa[i].tensor.vec();
    const auto& b = pb[i].tensor.vec();
    REQUIRE(a.size() == b.size());
    for (size_t j = 0; j < a.size(); ++j) REQUIRE(a[j] == b[j]);
  }
  REQUIRE(l.has_tables);
  CHECK(l.tables.checksum == m.tables.checksum);
  CHECK(l.tables.freq == m.tables.freq);
}

TEST_CASE("local pipeline is deterministic and bypass matches unsplit") {
  vfc::ModelConfig mc;
  mc.cls = vfc::ClassifierSpec{3, 32, 8, {{2, 8, 1}, {2, 16, 2}}};
  mc.bottleneck_total = 512;
  auto m = vfc::SplitModel<float>::make(mc, 5);
  m.rebuild_tables();

  auto ds = vfc::make_synthetic_dataset(4, 2, 77);
  auto img = vfc::gather_images(ds, {0});

  auto r1 = vfc::infer_local(m, img, 0.01);
  auto r2 = vfc::infer_local(m, img, 0.01);
  CHECK(r1.pred == r2.pred);
  CHECK(r1.edge.stream.serialize() == r2.edge.stream.serialize());
  CHECK(r1.bpp == r2.bpp);
  CHECK(r1.bpp == doctest::Approx(8.0 * r1.edge.stream.total_bytes() / 1024.0));

  auto by = vfc::forward_bypass(m, img);
  auto ref = m.classifier.forward(img);
  for (int64_t i = 0; i < ref.numel(); ++i) REQUIRE(by.data()[i] == ref.data()[i]);
}

TEST_CASE("lambda outside the trained range is rejected client-side") {
  vfc::ModelConfig mc;
  mc.cls = vfc::ClassifierSpec{3, 32, 8, {{2, 8, 1}, {2, 16, 2}}};
  mc.bottleneck_total = 512;
  auto m = vfc::SplitModel<float>::make(mc, 5);
  m.rebuild_tables();
  auto ds = vfc::make_synthetic_dataset(1, 2, 77);
  auto img = vfc::gather_images(ds, {0});
  CHECK_THROWS_AS(vfc::infer_local(m, img, 6.0), vfc::ConfigError);
}

} // TEST_SUITE
