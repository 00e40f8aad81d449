#pragma once

#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace slpd {

/// Resolves a requested worker count: 0 (or negative) means "all cores".
inline int resolve_workers(int requested) {
  if (requested > 0) return requested;
  unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? static_cast<int>(hc) : 1;
}

/// Runs fn(i) for i in [0, n). Work items must be independent and write only
/// to their own output slot; under that contract the result is identical for
/// any worker count, which is what makes the whole pipeline deterministic.
/// The first exception thrown by any item is rethrown on the caller.
template <class F>
void parallel_for(std::size_t n, int workers, F&& fn) {
  const int w = resolve_workers(workers);
  if (w <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t nthreads = std::min<std::size_t>(static_cast<std::size_t>(w), n);
  std::vector<std::thread> threads;
  threads.reserve(nthreads);
  std::vector<std::exception_ptr> errors(nthreads);
  for (std::size_t t = 0; t < nthreads; ++t) {
    threads.emplace_back([&, t] {
      const std::size_t begin = n * t / nthreads;
      const std::size_t end = n * (t + 1) / nthreads;
      try {
        for (std::size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : threads) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace slpd
