#pragma once

// Opt-in data parallelism. Every caller writes to disjoint outputs indexed by
// the loop variable, so results do not depend on the worker count.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include "dream/tensor.hpp"

namespace dream {

namespace detail {
inline std::atomic<int> worker_count{1};
inline thread_local bool inside_parallel_region = false;
}  // namespace detail

inline void set_workers(int n) { detail::worker_count = std::max(1, n); }
inline int workers() { return detail::worker_count; }

template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const auto pool = static_cast<std::size_t>(workers());
  if (pool <= 1 || n <= 1 || detail::inside_parallel_region) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const bool recording = grad_enabled();
  auto run = [&] {
    const bool saved = dream::detail::grad_recording;
    dream::detail::grad_recording = recording;
    detail::inside_parallel_region = true;
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
    detail::inside_parallel_region = false;
    dream::detail::grad_recording = saved;
  };
  std::vector<std::thread> threads;
  const std::size_t extra = std::min(pool, n) - 1;
  threads.reserve(extra);
  for (std::size_t t = 0; t < extra; ++t) threads.emplace_back(run);
  run();
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace dream
