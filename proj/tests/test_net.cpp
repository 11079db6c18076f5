// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "vfc/net.hpp"
#include "vfc/dataset.hpp"

namespace {

vfc::SplitModel<float> tiny_model(uint64_t seed = 11) {
  vfc::ModelConfig mc;
  mc.cls = vfc::ClassifierSpec{3, 32, 8, {{2, 8, 1}, {2, 16, 2}}};
  mc.bottleneck_total = 512;
  auto m = vfc::SplitModel<float>::make(mc, seed);
  m.rebuild_tables();
  return m;
}

} // namespace

TEST_SUITE("net") {

TEST_CASE("remote inference equals the local pipeline") {
  auto model = tiny_model();
  vfc::InferenceServer server(model);
  server.start("127.0.0.1", 0);
  const std::string addr = "127.0.0.1:" + std::to_string(server.port());

  auto ds = vfc::make_synthetic_dataset(20, 3, 5);
  uint64_t client_bytes = 0;
  for (int64_t i = 0; i < 20; ++i) {
    auto img = vfc::gather_images(ds, {i});
    const double lambda = 0.0001 + 0.2 * static_cast<double>(i % 5);
    auto local = vfc::infer_local(model, img, lambda);
    auto remote = vfc::infer_remote(model, img, lambda, addr);
    REQUIRE(remote.pred == local.pred);
    REQUIRE(remote.probs.size() == local.probs.size());
    for (size_t k = 0; k < remote.probs.size(); ++k)
      REQUIRE(std::abs(remote.probs[k] - local.probs[k]) < 1e-5f);
    CHECK(remote.bpp == local.bpp);
    CHECK(remote.wire_bytes == local.edge.stream.total_bytes());
    client_bytes += remote.wire_bytes;
  }
  CHECK(server.payload_bytes_received() == client_bytes);
  CHECK(server.requests_served() == 20);
  server.stop();
}

TEST_CASE("server timing fields are populated") {
  auto model = tiny_model();
  vfc::InferenceServer server(model);
  server.start("127.0.0.1", 0);
  const std::string addr = "127.0.0.1:" + std::to_string(server.port());
  auto ds = vfc::make_synthetic_dataset(1, 3, 6);
  auto r = vfc::infer_remote(model, vfc::gather_images(ds, {0}), 0.01, addr);
  CHECK(r.server_decode_us > 0);
  CHECK(r.server_task_us > 0);
  CHECK(r.edge_timing.encoding_ms >=
        r.edge_timing.classifier_ms + r.edge_timing.compression_ms - 1e-6);
  server.stop();
}

TEST_CASE("malformed, truncated and mismatched requests get error responses") {
  auto model = tiny_model();
  vfc::InferenceServer server(model);
  server.start("127.0.0.1", 0);
  const std::string addr = "127.0.0.1:" + std::to_string(server.port());

  // garbage bytes -> malformed
  std::vector<uint8_t> junk{'J', 'U', 'N', 'K', 1, 2, 3};
  auto r1 = vfc::net_detail::roundtrip(addr, junk);
  CHECK(r1.status == vfc::WireStatus::malformed);

  // valid stream with the version byte bumped -> version error
  auto ds = vfc::make_synthetic_dataset(1, 3, 7);
  auto edge = vfc::edge_encode(model, vfc::gather_images(ds, {0}), 0.01);
  auto bytes = edge.stream.serialize();
  auto bumped = bytes;
  bumped[4] = 9;
  auto r2 = vfc::net_detail::roundtrip(addr, bumped);
  CHECK(r2.status == vfc::WireStatus::version);

  // internally truncated stream -> malformed, connection survives
  auto cut = bytes;
  cut.pop_back();
  auto r3 = vfc::net_detail::roundtrip(addr, cut);
  CHECK(r3.status == vfc::WireStatus::malformed);

  // tables from a different model -> tables error
  auto other = tiny_model(99);
  auto edge2 = vfc::edge_encode(other, vfc::gather_images(ds, {0}), 0.01);
  auto r4 = vfc::net_detail::roundtrip(addr, edge2.stream.serialize());
  CHECK(r4.status == vfc::WireStatus::tables);

  // server still healthy afterwards
  auto ok = vfc::infer_remote(model, vfc::gather_images(ds, {0}), 0.01, addr);
  CHECK(ok.probs.size() == 8);
  server.stop();
}

TEST_CASE("lambda outside range fails before anything is sent") {
  auto model = tiny_model();
  auto ds = vfc::make_synthetic_dataset(1, 3, 8);
  // no server listening: a range error must win over a connection error
  CHECK_THROWS_AS(
      vfc::infer_remote(model, vfc::gather_images(ds, {0}), 100.0, "127.0.0.1:1"),
      vfc::ConfigError);
  CHECK_THROWS_AS(
      vfc::infer_remote(model, vfc::gather_images(ds, {0}), 0.01, "127.0.0.1:1"),
      vfc::NetError);
}

} // TEST_SUITE
