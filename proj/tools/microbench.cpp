// SPDX-License-Identifier: Apache-2.0
// Quick kernel throughput probe; not part of the test suite.
#include <chrono>
#include <cstdio>
#include <vector>

#include "vfc/gemm.hpp"

using clk = std::chrono::steady_clock;

static void bench(const char* name, int64_t M, int64_t K, int64_t N, int threads) {
  vfc::set_threads(threads);
  std::vector<float> a(M * K), b(K * N), c(M * N, 0.f);
  vfc::Rng rng(1);
  for (auto& x : a) x = static_cast<float>(rng.uniform() - 0.5);
  for (auto& x : b) x = static_cast<float>(rng.uniform() - 0.5);

  // warmup
  vfc::gemm_acc(a.data(), b.data(), c.data(), M, K, N);
  int reps = static_cast<int>(std::max<int64_t>(1, (int64_t)2e9 / (2 * M * K * N)));
  auto t0 = clk::now();
  for (int i = 0; i < reps; ++i)
    vfc::gemm_acc(a.data(), b.data(), c.data(), M, K, N);
  double sec = std::chrono::duration<double>(clk::now() - t0).count();
  double gf = 2.0 * M * K * N * reps / sec / 1e9;
  std::printf("%-28s M=%6lld K=%5lld N=%4lld  T=%d  %7.2f GFLOP/s\n", name,
              (long long)M, (long long)K, (long long)N, threads, gf);
}

int main() {
  // shapes that dominate training on the batch-32 default model
  for (int t : {1, 2}) {
    bench("conv fwd stage1", 32 * 1024, 144, 16, t);
    bench("conv fwd stage2", 32 * 256, 288, 32, t);
    bench("conv fwd stage3", 32 * 64, 576, 64, t);
    bench("conv fwd stage4", 32 * 16, 1152, 128, t);
    bench("conv dX stage1 (patches)", 32 * 1024, 16, 144, t);
    bench("conv dW stage1 (A^T form)", 16, 32 * 1024, 144, t);
    bench("conv dW stage3 (A^T form)", 64, 32 * 64, 576, t);
    bench("square 512", 512, 512, 512, t);
  }
  return 0;
}
