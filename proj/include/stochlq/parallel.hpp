#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace stochlq {

/// Process-wide worker count used by node sweeps and path simulation.
/// Results never depend on it: work is split into index ranges and every
/// reduction runs in index order afterwards.
inline int& default_workers() {
  static int workers = 1;
  return workers;
}

inline int max_workers() {
  return std::max(1u, std::thread::hardware_concurrency());
}

template <typename Fn>
void parallel_for(std::size_t count, Fn&& fn, int workers = default_workers(),
                  std::size_t min_chunk = 256) {
  const std::size_t w = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::max(1, workers)), 1,
      std::max<std::size_t>(1, count / std::max<std::size_t>(1, min_chunk)));
  if (w <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> threads;
  threads.reserve(w);
  for (std::size_t t = 0; t < w; ++t) {
    const std::size_t begin = count * t / w;
    const std::size_t end = count * (t + 1) / w;
    threads.emplace_back([&, begin, end] {
      try {
        for (std::size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& th : threads) th.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace stochlq
