#pragma once

#include <algorithm>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace starsfm {

// Runs fn(i) for every i in [0, n) on up to num_threads workers using a
// static contiguous partition. Callers write results into per-index slots
// and reduce sequentially afterwards, so results do not depend on the
// thread count.
inline void ParallelFor(int n, int num_threads, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  const int workers = std::clamp(num_threads, 1, n);
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::jthread> threads;
  threads.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    const int begin = static_cast<int>(static_cast<long long>(n) * w / workers);
    const int end = static_cast<int>(static_cast<long long>(n) * (w + 1) / workers);
    threads.emplace_back([&, begin, end] {
      try {
        for (int i = begin; i < end; ++i) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  threads.clear();  // joins
  if (error) std::rethrow_exception(error);
}

}  // namespace starsfm
