#pragma once

#include <algorithm>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace gipad {

// Number of worker threads used by parallel_for. Defaults to the hardware
// concurrency. Results never depend on this value: every parallel loop in the
// library partitions independent output slices, and reductions stay
// sequential inside a slice.
int num_threads();
void set_num_threads(int n);

template <class Fn>
void parallel_for(int begin, int end, Fn&& fn) {
  const int count = end - begin;
  const int workers = std::min(num_threads(), count);
  if (workers <= 1) {
    for (int i = begin; i < end; ++i) fn(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mu;
  auto run_chunk = [&](int w) {
    const int lo = begin + static_cast<int>(static_cast<long long>(count) * w / workers);
    const int hi = begin + static_cast<int>(static_cast<long long>(count) * (w + 1) / workers);
    try {
      for (int i = lo; i < hi; ++i) fn(i);
    } catch (...) {
      std::lock_guard lock(error_mu);
      if (!error) error = std::current_exception();
    }
  };
  {
    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(workers - 1));
    for (int w = 1; w < workers; ++w) pool.emplace_back(run_chunk, w);
    run_chunk(0);
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace gipad
