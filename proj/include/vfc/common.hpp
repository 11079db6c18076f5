// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace vfc {

#if defined(__GLIBC__)
// The autodiff graph holds hundreds of MB that are freed and reallocated
// every training step. Keep those blocks in the heap instead of handing them
// back to the kernel, or every step pays mmap + page-zeroing costs again.
inline const bool allocator_tuned = [] {
  mallopt(M_MMAP_MAX, 0);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();
#endif

// Error taxonomy. CLI maps these to exit codes: config 2, model/format 3,
// network 4.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CorruptionError : FormatError {
  using FormatError::FormatError;
};
struct NetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// splitmix64: counter-based seeding so parallel work is reproducible
// independent of scheduling.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Portable RNG. std::*_distribution output is implementation-defined, so all
// sampling goes through these helpers; a given seed yields the same stream
// on any platform.
class Rng {
public:
  explicit Rng(uint64_t seed = 0) : s_(splitmix64(seed ^ 0x6a09e667f3bcc908ull)) {
    if (s_ == 0) s_ = 0x9e3779b97f4a7c15ull;
    for (int i = 0; i < 4; ++i) next_u64();
  }

  uint64_t next_u64() {
    // xorshift64* on a splitmix-derived state
    s_ ^= s_ >> 12;
    s_ ^= s_ << 25;
    s_ ^= s_ >> 27;
    return s_ * 0x2545f4914f6cdd1dull;
  }

  uint32_t next_u32() { return static_cast<uint32_t>(next_u64() >> 32); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  uint64_t uniform_int(uint64_t n) { return next_u64() % n; }

  // standard normal via Box-Muller (no cached spare; keeps the stream
  // position a pure function of call count)
  double normal() {
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

private:
  uint64_t s_;
};

namespace detail {

// Minimal persistent thread pool for data-parallel loops. Work is split into
// contiguous index ranges and every writer owns disjoint output, so results
// are bit-identical for any thread count. Workers spin briefly on the epoch
// counter before sleeping; condvar wake latency on small VMs is otherwise
// comparable to the jobs themselves.
class ThreadPool {
  struct Job {
    std::function<void(int64_t, int64_t)> fn;
    std::vector<std::pair<int64_t, int64_t>> ranges;
    std::atomic<size_t> next{0};
    std::atomic<size_t> done{0};

    void work() {
      for (;;) {
        size_t i = next.fetch_add(1);
        if (i >= ranges.size()) return;
        fn(ranges[i].first, ranges[i].second);
        done.fetch_add(1);
      }
    }
  };

public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  void run(int64_t n, int threads, const std::function<void(int64_t, int64_t)>& fn) {
    if (n <= 0) return;
    if (threads <= 1 || n == 1) {
      fn(0, n);
      return;
    }
    ensure_workers(threads - 1);
    auto job = std::make_shared<Job>();
    job->fn = fn;
    int64_t chunk = (n + threads - 1) / threads;
    for (int64_t b = 0; b < n; b += chunk)
      job->ranges.emplace_back(b, std::min(n, b + chunk));
    {
      std::lock_guard<std::mutex> lk(mu_);
      job_ = job;
    }
    epoch_.fetch_add(1, std::memory_order_release);
    cv_.notify_all();
    job->work();
    while (job->done.load(std::memory_order_acquire) < job->ranges.size())
      std::this_thread::yield();
  }

  ~ThreadPool() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_.store(true);
    }
    epoch_.fetch_add(1, std::memory_order_release);
    cv_.notify_all();
    for (auto& t : workers_) t.join();
  }

private:
  ThreadPool() = default;

  void ensure_workers(int n) {
    std::lock_guard<std::mutex> lk(spawn_mu_);
    while (static_cast<int>(workers_.size()) < n)
      workers_.emplace_back([this] { worker_loop(); });
  }

  void worker_loop() {
    uint64_t seen = 0;
    for (;;) {
      if (stop_.load(std::memory_order_acquire)) return;
      // spin window: back-to-back parallel regions dominate training
      bool woke = false;
      const auto spin_until =
          std::chrono::steady_clock::now() + std::chrono::milliseconds(20);
      while (std::chrono::steady_clock::now() < spin_until) {
        if (epoch_.load(std::memory_order_acquire) != seen ||
            stop_.load(std::memory_order_acquire)) {
          woke = true;
          break;
        }
        for (int i = 0; i < 64; ++i) {
#if defined(__x86_64__) || defined(__i386__)
          __builtin_ia32_pause();
#endif
        }
      }
      if (!woke) {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [&] {
          return stop_.load() || epoch_.load(std::memory_order_acquire) != seen;
        });
      }
      if (stop_.load(std::memory_order_acquire)) return;
      std::shared_ptr<Job> job;
      {
        std::lock_guard<std::mutex> lk(mu_);
        seen = epoch_.load(std::memory_order_acquire);
        job = job_;
      }
      if (job) job->work();
    }
  }

  std::mutex mu_, spawn_mu_;
  std::condition_variable cv_;
  std::vector<std::thread> workers_;
  std::shared_ptr<Job> job_;
  std::atomic<uint64_t> epoch_{0};
  std::atomic<bool> stop_{false};
};

} // namespace detail

// Global worker count for parallel sections. 1 = strict sequential mode.
// Outputs are bit-identical for any value by construction.
inline int& thread_count() {
  static int n = 1;
  return n;
}

inline void set_threads(int n) { thread_count() = n < 1 ? 1 : n; }

// parallel_for over [0, n): fn(begin, end) on contiguous ranges.
inline void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
  detail::ThreadPool::instance().run(n, thread_count(), fn);
}

} // namespace vfc
