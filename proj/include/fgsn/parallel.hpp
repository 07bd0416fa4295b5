// Copyright (c) 2026 The fgsn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace fgsn {

/// Static-partition parallel loop. Each index is processed exactly once and
/// the partition depends only on (count, num_threads), so any writer that
/// touches disjoint per-index state produces thread-count-independent output.
/// The first exception thrown by any worker is rethrown on the caller.
inline void parallel_for(std::size_t count, int num_threads,
                         const std::function<void(std::size_t)>& body) {
  if (count == 0) return;
  if (num_threads <= 1 || count == 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::size_t workers = std::min<std::size_t>(num_threads, count);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::mutex error_mutex;
  std::exception_ptr error;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < count; i += workers) body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (std::thread& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace fgsn
