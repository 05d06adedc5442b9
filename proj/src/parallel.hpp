#pragma once

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

#include "sdelab/types.hpp"

namespace sdelab::detail {

inline unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

// Runs body(begin, end) over contiguous chunks of [0, n). Work items must be
// independent; results are deterministic whatever the thread count. The
// exception from the lowest-indexed failing chunk is rethrown.
template <typename Body>
void parallel_for(Index n, unsigned threads, Body&& body) {
  const unsigned t = std::min<unsigned>(resolve_threads(threads), static_cast<unsigned>(std::max<Index>(n, 1)));
  if (t <= 1) {
    body(Index{0}, n);
    return;
  }
  std::vector<std::exception_ptr> errors(t);
  std::vector<std::thread> pool;
  pool.reserve(t);
  for (unsigned k = 0; k < t; ++k) {
    const Index begin = n * k / t;
    const Index end = n * (k + 1) / t;
    pool.emplace_back([&, k, begin, end] {
      try {
        body(begin, end);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace sdelab::detail
