#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace amoclust {

/// Worker count: explicit value if > 0, else AMOCLUST_THREADS, else hardware concurrency.
inline std::size_t resolve_threads(int requested = 0) {
  if (requested > 0) return static_cast<std::size_t>(requested);
  if (const char* env = std::getenv("AMOCLUST_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Results must be
/// written to per-index slots; the first exception is rethrown.
template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lk(err_mu);
          if (!err) err = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace amoclust
