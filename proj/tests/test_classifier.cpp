// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "gradcheck.hpp"
#include "vfc/classifier.hpp"
#include "vfc/dataset.hpp"

using vfc::ClassifierSpec;
using vfc::Tensor;

TEST_SUITE("classifier") {

TEST_CASE("grouping rule reproduces the reference partitions") {
  auto g = vfc::partition_stage_sizes({3, 4, 6, 3});
  REQUIRE(g.size() == 4);
  CHECK(g[0] == std::vector<int>{3});
  CHECK(g[1] == std::vector<int>{2, 2});
  CHECK(g[2] == std::vector<int>{2, 2, 2});
  CHECK(g[3] == std::vector<int>{3});
  int n = 0;
  for (auto& s : g) n += static_cast<int>(s.size());
  CHECK(n == 7);

  CHECK(vfc::partition_stage_sizes({2}) == std::vector<std::vector<int>>{{2}});
  CHECK(vfc::partition_stage_sizes({5}) == std::vector<std::vector<int>>{{3, 2}});
  CHECK(vfc::partition_stage_sizes({1}) == std::vector<std::vector<int>>{{1}});
}

TEST_CASE("partition covers every block exactly once") {
  vfc::Rng rng(3);
  vfc::Classifier<float> cls;
  cls.init(ClassifierSpec{}, rng);
  auto plan = vfc::partition(cls);
  REQUIRE(plan.size() == 7);
  std::vector<int> seen(static_cast<size_t>(plan.total_blocks), 0);
  for (auto& g : plan.groups)
    for (int b : g.block_ids) seen[static_cast<size_t>(b)] += 1;
  for (int c : seen) CHECK(c == 1);
}

TEST_CASE("split shapes match a probe forward and shrink with k") {
  vfc::Rng rng(4);
  vfc::Classifier<float> cls;
  cls.init(ClassifierSpec{}, rng);
  auto plan = vfc::partition(cls);

  auto sc1 = vfc::split(plan, 1);
  CHECK(sc1.channels == 16);
  CHECK(sc1.height == 32);
  CHECK(sc1.width == 32);

  auto probe = Tensor<float>::zeros({1, 32, 32, 3});
  probe.fill_normal(rng, 1.0);
  int64_t prev_h = 1 << 20;
  for (int k = 1; k <= plan.size(); ++k) {
    auto sc = vfc::split(plan, k);
    auto f = vfc::forward_edge(cls, sc, probe);
    CHECK(f.shape() == vfc::Shape{1, sc.height, sc.width, sc.channels});
    CHECK(sc.height <= prev_h); // spatial dims non-increasing in k
    prev_h = sc.height;
  }

  auto scN = vfc::split(plan, plan.size());
  CHECK(scN.edge_blocks == plan.total_blocks); // cloud keeps only the head
  CHECK_THROWS_AS(vfc::split(plan, 0), vfc::ConfigError);
  CHECK_THROWS_AS(vfc::split(plan, 8), vfc::ConfigError);
}

TEST_CASE("bypass recomposition is bit-identical to the unsplit forward") {
  vfc::Rng rng(5);
  vfc::Classifier<float> cls;
  cls.init(ClassifierSpec{}, rng);
  auto plan = vfc::partition(cls);

  auto ds = vfc::make_synthetic_dataset(16, 11, 0xabc);
  auto x = vfc::gather_images(ds, {0, 1, 2, 3, 4, 5, 6, 7});
  auto ref = cls.forward(x);
  for (int k = 1; k <= plan.size(); ++k) {
    auto sc = vfc::split(plan, k);
    auto logits = vfc::forward_cloud(cls, sc, vfc::forward_edge(cls, sc, x));
    REQUIRE(logits.numel() == ref.numel());
    for (int64_t i = 0; i < ref.numel(); ++i)
      REQUIRE(logits.data()[i] == ref.data()[i]);
  }
}

TEST_CASE("edge + cloud parameter counts equal the unsplit model") {
  vfc::Rng rng(6);
  vfc::Classifier<float> cls;
  cls.init(ClassifierSpec{}, rng);
  auto plan = vfc::partition(cls);
  const int64_t total = cls.param_count_blocks(0, plan.total_blocks);
  for (int k = 1; k <= plan.size(); ++k) {
    auto sc = vfc::split(plan, k);
    CHECK(cls.param_count_blocks(0, sc.edge_blocks) +
              cls.param_count_blocks(sc.edge_blocks, plan.total_blocks) ==
          total);
  }
}

TEST_CASE("zero input produces finite logits") {
  vfc::Rng rng(7);
  vfc::Classifier<float> cls;
  cls.init(ClassifierSpec{}, rng);
  auto logits = cls.forward(Tensor<float>::zeros({1, 32, 32, 3}));
  CHECK(logits.all_finite());
}

TEST_CASE("residual block gradients") {
  for (uint64_t seed : {1u, 2u, 3u}) {
    vfc::Rng rng(seed);
    vfc::ResidualBlock<double> blk;
    blk.init(3, 5, 2, rng);
    // zero-init second conv leaves dead FD directions; randomize it
    blk.w2.fill_normal(rng, 0.2);
    auto x = vfc::Tensor<double>::zeros({1, 6, 6, 3});
    x.fill_normal(rng, 1.0);
    x.set_requires_grad();
    auto lw = vfc::Tensor<double>::zeros({1, 3, 3, 5});
    lw.fill_normal(rng, 1.0);
    auto loss = [&] { return vfc::sum_all(vfc::mul(blk.forward(x), lw)); };
    CHECK(gradcheck::max_rel_err({x, blk.w1, blk.b1, blk.w2, blk.b2, blk.wsc, blk.bsc},
                                 loss) < 1e-4);
  }
}

} // TEST_SUITE

TEST_SUITE("dataset") {

TEST_CASE("generation is deterministic and balanced") {
  auto a = vfc::make_synthetic_dataset(64, 9, 1);
  auto b = vfc::make_synthetic_dataset(64, 9, 1);
  REQUIRE(a.images.numel() == b.images.numel());
  for (int64_t i = 0; i < a.images.numel(); ++i)
    REQUIRE(a.images.data()[i] == b.images.data()[i]);

  auto c = vfc::make_synthetic_dataset(64, 10, 1);
  bool differs = false;
  for (int64_t i = 0; i < a.images.numel() && !differs; ++i)
    differs = a.images.data()[i] != c.images.data()[i];
  CHECK(differs);

  std::vector<int> counts(vfc::kNumClasses, 0);
  for (int v : a.labels) counts[static_cast<size_t>(v)]++;
  for (int v : counts) CHECK(v == 8);

  for (int64_t i = 0; i < a.images.numel(); ++i) {
    CHECK(a.images.data()[i] >= -1.f);
    CHECK(a.images.data()[i] <= 1.f);
  }
}

TEST_CASE("cache round-trip is bit-exact") {
  vfc::DataBundle b;
  b.train = vfc::make_synthetic_dataset(24, 3, 1);
  b.test = vfc::make_synthetic_dataset(8, 3, 2);
  const std::string path = "test_dataset_cache.bin";
  vfc::save_dataset_cache(path, b);
  auto l = vfc::load_dataset_cache(path);
  REQUIRE(l.train.size() == 24);
  REQUIRE(l.test.size() == 8);
  for (int64_t i = 0; i < b.train.images.numel(); ++i)
    REQUIRE(l.train.images.data()[i] == b.train.images.data()[i]);
  CHECK(l.train.labels == b.train.labels);
  CHECK(l.test.labels == b.test.labels);
  std::remove(path.c_str());
}

} // TEST_SUITE
