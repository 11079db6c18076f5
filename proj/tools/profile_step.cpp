// SPDX-License-Identifier: Apache-2.0
// Wall-clock breakdown of one training step; not part of the test suite.
#include <chrono>
#include <cstdio>

#include "vfc/trainer.hpp"

using clk = std::chrono::steady_clock;

static double ms_since(clk::time_point t0) {
  return std::chrono::duration<double, std::milli>(clk::now() - t0).count();
}

int main(int argc, char** argv) {
  vfc::set_threads(argc > 1 ? std::atoi(argv[1]) : 1);
  vfc::TrainConfig cfg;
  auto data = vfc::make_default_dataset(1, 256, 64);
  auto m = vfc::SplitModel<float>::make(cfg.model_config(), 1);
  auto params = m.parameters();
  vfc::SgdOptimizer<float> opt(params, 0.9, 0.0);

  std::vector<int64_t> idx;
  for (int64_t i = 0; i < 32; ++i) idx.push_back(i);
  auto images = vfc::gather_images(data.train, idx);
  auto labels = vfc::gather_labels(data.train, idx);

  // warmup
  for (int i = 0; i < 2; ++i) {
    auto parts = vfc::loss_variable(m, images, labels, 0.01, 1);
    opt.zero_grad();
    parts.total.backward();
    opt.step(0.01);
  }

  const int reps = 6;
  // piecewise timings
  {
    auto t0 = clk::now();
    for (int i = 0; i < reps; ++i) {
      vfc::NoGradGuard ng;
      auto f = vfc::forward_edge(m.classifier, m.sc, images);
      (void)f;
    }
    std::printf("edge fwd (nograd):      %7.1f ms\n", ms_since(t0) / reps);
  }
  {
    auto t0 = clk::now();
    for (int i = 0; i < reps; ++i) {
      vfc::NoGradGuard ng;
      auto logits = m.classifier.forward(images);
      (void)logits;
    }
    std::printf("full cls fwd (nograd):  %7.1f ms\n", ms_since(t0) / reps);
  }
  {
    auto t0 = clk::now();
    for (int i = 0; i < reps; ++i) {
      vfc::NoGradGuard ng;
      auto lemb = m.embed.forward(0.01);
      auto f = vfc::forward_edge(m.classifier, m.sc, images);
      auto z = m.ae.encode(f, lemb);
      auto x = m.ae.decode(z, lemb);
      (void)x;
    }
    std::printf("edge+ae fwd (nograd):   %7.1f ms\n", ms_since(t0) / reps);
  }
  {
    auto t0 = clk::now();
    for (int i = 0; i < reps; ++i) {
      vfc::NoGradGuard ng;
      auto lemb = m.embed.forward(0.01);
      auto f = vfc::forward_edge(m.classifier, m.sc, images);
      auto z = m.ae.encode(f, lemb);
      auto zt = vfc::add_uniform_noise(z, 1);
      auto bits = vfc::rate_loss_bits(zt, m.density);
      (void)bits;
    }
    std::printf("... + rate fwd:         %7.1f ms\n", ms_since(t0) / reps);
  }
  {
    auto t0 = clk::now();
    for (int i = 0; i < reps; ++i) {
      auto parts = vfc::loss_variable(m, images, labels, 0.01, 1);
      (void)parts;
    }
    std::printf("full fwd (grad graph):  %7.1f ms\n", ms_since(t0) / reps);
  }
  {
    auto t0 = clk::now();
    for (int i = 0; i < reps; ++i) {
      auto parts = vfc::loss_variable(m, images, labels, 0.01, 1);
      opt.zero_grad();
      parts.total.backward();
      opt.step(0.01);
    }
    const double per = ms_since(t0) / reps;
    std::printf("full step:              %7.1f ms  (epoch of 250 steps: %.0f s)\n",
                per, per * 250 / 1000.0);
  }
  return 0;
}
