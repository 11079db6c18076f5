// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "gradcheck.hpp"
#include "vfc/autoencoder.hpp"
#include "vfc/classifier.hpp"

using vfc::Tensor;

TEST_SUITE("autoencoder") {

TEST_CASE("lambda embedding normalization endpoints") {
  vfc::Rng rng(1);
  vfc::LambdaEmbedding<float> e;
  e.init(1e-4, 5.12, rng);
  CHECK(e.normalize(1e-4) == doctest::Approx(0.0));
  CHECK(e.normalize(5.12) == doctest::Approx(1.0));
  CHECK_THROWS_AS(e.normalize(0.0), vfc::ConfigError);
  CHECK_THROWS_AS(e.normalize(-1.0), vfc::ConfigError);
  CHECK_THROWS_AS(e.normalize(5.13), vfc::ConfigError);
  // below lambda_min is inside the defined domain (0, lambda_max]
  CHECK(e.normalize(1e-5) < 0.0);
}

TEST_CASE("lambda embedding is deterministic") {
  vfc::Rng rng(2);
  vfc::LambdaEmbedding<float> e;
  e.init(1e-4, 5.12, rng);
  auto a = e.forward(0.01);
  auto b = e.forward(0.01);
  REQUIRE(a.numel() == 64);
  for (int64_t i = 0; i < a.numel(); ++i) REQUIRE(a.data()[i] == b.data()[i]);
}

TEST_CASE("embedding gradients flow to its weights") {
  for (uint64_t seed : {3u, 4u, 5u}) {
    vfc::Rng rng(seed);
    vfc::LambdaEmbedding<double> e;
    e.init(1e-4, 5.12, rng, 8);
    auto lw = Tensor<double>::zeros({1, 8});
    lw.fill_normal(rng, 1.0);
    auto loss = [&] { return vfc::sum_all(vfc::mul(e.forward(0.037), lw)); };
    CHECK(gradcheck::max_rel_err({e.w1, e.b1, e.w2, e.b2}, loss) < 1e-4);
  }
}

TEST_CASE("adaln block is the identity at init") {
  vfc::Rng rng(6);
  vfc::AdaLNBlock<float> blk;
  blk.init(8, 16, rng);
  vfc::LambdaEmbedding<float> e;
  e.init(1e-4, 5.12, rng, 16);
  auto h = Tensor<float>::zeros({2, 4, 4, 8});
  h.fill_normal(rng, 1.0);
  auto out = blk.forward(h, e.forward(0.01));
  for (int64_t i = 0; i < h.numel(); ++i) REQUIRE(out.data()[i] == h.data()[i]);
}

TEST_CASE("ablated conditioning is lambda-independent; live path is not") {
  vfc::Rng rng(7);
  vfc::AdaLNBlock<float> blk;
  blk.init(8, 16, rng);
  // emulate a trained block: nonzero projection and conditioning maps
  blk.proj_w.fill_normal(rng, 0.2);
  blk.scale_w.fill_normal(rng, 0.2);
  blk.shift_w.fill_normal(rng, 0.2);
  vfc::LambdaEmbedding<float> e;
  e.init(1e-4, 5.12, rng, 16);
  auto h = Tensor<float>::zeros({1, 4, 4, 8});
  h.fill_normal(rng, 1.0);

  auto abl_a = blk.forward(h, e.forward(0.0002), true);
  auto abl_b = blk.forward(h, e.forward(2.56), true);
  for (int64_t i = 0; i < h.numel(); ++i)
    REQUIRE(abl_a.data()[i] == abl_b.data()[i]); // exact equality

  auto live_a = blk.forward(h, e.forward(0.0002), false);
  auto live_b = blk.forward(h, e.forward(2.56), false);
  float maxdiff = 0;
  for (int64_t i = 0; i < h.numel(); ++i)
    maxdiff = std::max(maxdiff, std::abs(live_a.data()[i] - live_b.data()[i]));
  CHECK(maxdiff > 0.f);
}

TEST_CASE("adaln gradients including the gamma/delta paths") {
  for (uint64_t seed : {8u, 9u, 10u}) {
    vfc::Rng rng(seed);
    vfc::AdaLNBlock<double> blk;
    blk.init(4, 6, rng);
    blk.proj_w.fill_normal(rng, 0.3); // zero-init leaves dead FD directions
    vfc::LambdaEmbedding<double> e;
    e.init(1e-4, 5.12, rng, 6);
    auto h = Tensor<double>::zeros({1, 4, 4, 4});
    h.fill_normal(rng, 1.0);
    h.set_requires_grad();
    auto lw = Tensor<double>::zeros({1, 4, 4, 4});
    lw.fill_normal(rng, 1.0);
    auto loss = [&] {
      return vfc::sum_all(vfc::mul(blk.forward(h, e.forward(0.02)), lw));
    };
    CHECK(gradcheck::max_rel_err({h, blk.dw_w, blk.dw_b, blk.scale_w, blk.scale_b,
                                  blk.shift_w, blk.shift_b, blk.expand_w,
                                  blk.expand_b, blk.proj_w, blk.proj_b, e.w1, e.b1,
                                  e.w2, e.b2},
                                 loss) < 1e-4);
  }
}

TEST_CASE("beta rule fixes the bottleneck element count across configs") {
  // default split shapes for k = 1, 2, 3
  auto s1 = vfc::AutoencoderSpec::make(16, 32, 32);
  CHECK(s1.beta == 16); // 4096 / (16*16)
  auto s2 = vfc::AutoencoderSpec::make(32, 16, 16);
  CHECK(s2.beta == 64); // 4096 / (8*8)
  auto s3 = vfc::AutoencoderSpec::make(32, 16, 16);
  CHECK(s3.beta == 64);
  for (const auto& s : {s1, s2, s3})
    CHECK(s.beta * (s.height / 2) * (s.width / 2) == 4096);
  CHECK_THROWS_AS(vfc::AutoencoderSpec::make(16, 31, 32), vfc::ShapeError);
  CHECK_THROWS_AS(vfc::AutoencoderSpec::make(16, 32, 32, 100), vfc::ShapeError);
}

TEST_CASE("encode/decode shapes are symmetric and finite") {
  vfc::Rng rng(11);
  vfc::LambdaEmbedding<float> e;
  e.init(1e-4, 5.12, rng);
  auto lemb = e.forward(0.01);

  struct Cfg {
    int64_t c, h, w;
  };
  for (auto cfg : {Cfg{16, 32, 32}, Cfg{32, 16, 16}}) {
    vfc::Autoencoder<float> ae;
    ae.init(vfc::AutoencoderSpec::make(cfg.c, cfg.h, cfg.w), 64, rng);
    auto x = Tensor<float>::zeros({2, cfg.h, cfg.w, cfg.c});
    x.fill_normal(rng, 1.0);
    auto z = ae.encode(x, lemb);
    CHECK(z.shape() == vfc::Shape{2, cfg.h / 2, cfg.w / 2, ae.spec.beta});
    CHECK(z.numel() == 2 * 4096);
    auto xhat = ae.decode(z, lemb);
    CHECK(xhat.shape() == x.shape());
    CHECK(xhat.all_finite());

    // zero bottleneck decodes to something finite
    auto zero = Tensor<float>::zeros(z.shape());
    CHECK(ae.decode(zero, lemb).all_finite());
  }
}

TEST_CASE("encode rejects mismatched split shapes") {
  vfc::Rng rng(12);
  vfc::Autoencoder<float> ae;
  ae.init(vfc::AutoencoderSpec::make(16, 32, 32), 64, rng);
  vfc::LambdaEmbedding<float> e;
  e.init(1e-4, 5.12, rng);
  auto lemb = e.forward(0.01);
  CHECK_THROWS_AS(ae.encode(Tensor<float>::zeros({1, 16, 16, 16}), lemb),
                  vfc::ShapeError);
  CHECK_THROWS_AS(ae.decode(Tensor<float>::zeros({1, 8, 8, 16}), lemb),
                  vfc::ShapeError);
}

} // TEST_SUITE
